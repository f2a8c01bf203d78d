//! Cubature Kalman filter core and the robust measurement-update strategies.
//!
//! The measurement update solves a MAP problem whose data-fit term carries an
//! effective measurement covariance. Strategy [`RobustStrategy::None`] uses
//! the nominal covariance once; the two robust strategies iterate, rebuilding
//! the effective covariance from robust weights of the current residuals:
//!
//! - [`RobustStrategy::Joint`] whitens the residual with the lower Cholesky
//!   factor of the full covariance (`β = R^{-1/2}(y − h(x))`) and applies
//!   `R̄ = R^{1/2} W⁻¹ R^{T/2}` — the conventional robust filter, where an
//!   outlier in one channel bleeds into the whitened error of other channels
//!   whenever `R` is correlated.
//! - [`RobustStrategy::Separate`] normalizes each channel by its own marginal
//!   standard deviation (`δ_i = (y_i − h_i(x))/σ_i`) and applies
//!   `R̃ = Λ R Λ` with `Λ = diag(w^{-1/2})`, inflating per-channel variances
//!   while preserving every correlation coefficient.
//!
//! Both reweightings are computed as Gram products of a scaled Cholesky
//! factor, so for a diagonal `R` they are equal bit-for-bit and the two
//! strategies produce identical posteriors.
//!
//! All inner iterations re-solve from the same predicted belief; only the
//! residual evaluation point and the effective covariance change between
//! iterations. Failing to converge within the iteration cap is reported in
//! [`UpdateDiagnostics`], not as an error.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::costs::RobustCost;
use crate::models::{decompose_correlation, ModelError, StateSpaceModel};
use crate::numerics::{spd_repair, NumericsError, SpdMatrix};

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_MAX_ITERATIONS: usize = 50;
pub const DEFAULT_WEIGHT_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("sigma[{index}] must be positive, got {value}")]
    NonPositiveSigma { index: usize, value: f64 },
    #[error("weight[{index}] must lie in (0, 1], got {value}; apply the weight floor first")]
    InvalidWeight { index: usize, value: f64 },
    #[error("invalid config field {field}")]
    InvalidConfig { field: &'static str },
    #[error("filter step {index} failed: {source}")]
    Step {
        index: usize,
        #[source]
        source: Box<FilterError>,
    },
}

/// State mean and SPD covariance; carries prior, predicted, and posterior
/// beliefs alike.
#[derive(Debug, Clone)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: SpdMatrix,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: SpdMatrix) -> Result<Self, FilterError> {
        ensure("belief covariance", mean.len(), cov.dim())?;
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Which measurement-update reweighting to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RobustStrategy {
    /// Single update with the nominal covariance (plain CKF).
    None,
    /// Joint NMFE reweighting (HCKF).
    Joint,
    /// Per-component marginal reweighting (M-HCKF).
    Separate,
}

#[derive(Debug, Clone, Copy)]
pub struct RobustUpdateConfig {
    pub strategy: RobustStrategy,
    /// Convergence tolerance on the Euclidean norm of the state-mean
    /// increment.
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Lower clamp applied to every robust weight before it enters a
    /// reweighted covariance. Huber weights never reach zero, but the clamp
    /// keeps the effective covariance invertible for costs whose weights can.
    pub weight_floor: f64,
}

impl RobustUpdateConfig {
    pub fn new(strategy: RobustStrategy) -> Self {
        Self {
            strategy,
            epsilon: DEFAULT_EPSILON,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            weight_floor: DEFAULT_WEIGHT_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        if !(self.epsilon > 0.0) {
            return Err(FilterError::InvalidConfig { field: "epsilon" });
        }
        if self.max_iterations == 0 {
            return Err(FilterError::InvalidConfig {
                field: "max_iterations",
            });
        }
        if !(self.weight_floor > 0.0 && self.weight_floor < 1.0) {
            return Err(FilterError::InvalidConfig {
                field: "weight_floor",
            });
        }
        Ok(())
    }
}

/// What the iterated update did: how many inner iterations ran, the floored
/// weights of the last iteration, and whether the mean increment dropped
/// below the tolerance.
#[derive(Debug, Clone)]
pub struct UpdateDiagnostics {
    pub iterations: usize,
    pub final_weights: DVector<f64>,
    pub converged: bool,
}

/// Moment-propagation rule of a Gaussian-approximation Kalman filter.
///
/// The robust update logic is independent of how the Gaussian moments are
/// propagated; any sigma-point rule (e.g. an unscented transform) can slot in
/// here. [`CubatureRule`] is the one realization shipped.
pub trait GaussianApproximation {
    fn predict(
        &self,
        model: &StateSpaceModel,
        posterior: &GaussianBelief,
    ) -> Result<GaussianBelief, FilterError>;

    fn update(
        &self,
        model: &StateSpaceModel,
        predicted: &GaussianBelief,
        measurement: &DVector<f64>,
        r_eff: &SpdMatrix,
    ) -> Result<GaussianBelief, FilterError>;
}

/// Third-degree spherical-radial cubature: `2n` points `x̂ ± √n·L·e_i`, each
/// with weight `1/(2n)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CubatureRule;

impl GaussianApproximation for CubatureRule {
    fn predict(
        &self,
        model: &StateSpaceModel,
        posterior: &GaussianBelief,
    ) -> Result<GaussianBelief, FilterError> {
        let n = model.state_dim();
        ensure("posterior mean", n, posterior.dim())?;
        let points = cubature_points(&posterior.mean, &posterior.cov)?;
        let mut propagated = Vec::with_capacity(points.len());
        for p in &points {
            let fx = model.transition(p);
            ensure("transition output", n, fx.len())?;
            propagated.push(fx);
        }
        let (mean, scatter) = weighted_moments(&propagated);
        let cov = spd_repair(&(scatter + model.process_noise().as_matrix()), 0.0)?;
        Ok(GaussianBelief { mean, cov })
    }

    fn update(
        &self,
        model: &StateSpaceModel,
        predicted: &GaussianBelief,
        measurement: &DVector<f64>,
        r_eff: &SpdMatrix,
    ) -> Result<GaussianBelief, FilterError> {
        let n = model.state_dim();
        let m = model.measurement_dim();
        ensure("predicted mean", n, predicted.dim())?;
        ensure("measurement", m, measurement.len())?;
        ensure("effective covariance", m, r_eff.dim())?;

        let points = cubature_points(&predicted.mean, &predicted.cov)?;
        let mut observed = Vec::with_capacity(points.len());
        for p in &points {
            let hx = model.measurement(p);
            ensure("measurement output", m, hx.len())?;
            observed.push(hx);
        }
        let (y_hat, y_scatter) = weighted_moments(&observed);
        let innovation_cov = y_scatter + r_eff.as_matrix();

        let weight = 1.0 / points.len() as f64;
        let mut cross_cov = DMatrix::zeros(n, m);
        for (p, hx) in points.iter().zip(&observed) {
            cross_cov += (p - &predicted.mean) * (hx - &y_hat).transpose();
        }
        cross_cov *= weight;

        // K = C·S⁻¹ via S·Kᵀ = Cᵀ with one Cholesky of S.
        let l = crate::numerics::cholesky_lower(&innovation_cov)?;
        let z = l
            .solve_lower_triangular(&cross_cov.transpose())
            .expect("Cholesky factor has positive diagonal");
        let gain = l
            .transpose()
            .solve_upper_triangular(&z)
            .expect("Cholesky factor has positive diagonal")
            .transpose();

        let mean = &predicted.mean + &gain * (measurement - &y_hat);
        // K·S·Kᵀ as (K·L)(K·L)ᵀ keeps the reduction symmetric bit-for-bit.
        let gain_l = &gain * &l;
        let cov = spd_repair(
            &(predicted.cov.as_matrix() - crate::numerics::gram(&gain_l)),
            0.0,
        )?;
        Ok(GaussianBelief { mean, cov })
    }
}

/// Cubature time update (prediction) with the [`CubatureRule`].
pub fn ckf_predict(
    model: &StateSpaceModel,
    posterior: &GaussianBelief,
) -> Result<GaussianBelief, FilterError> {
    CubatureRule.predict(model, posterior)
}

/// Cubature measurement update with an explicit effective covariance.
pub fn ckf_update(
    model: &StateSpaceModel,
    predicted: &GaussianBelief,
    measurement: &DVector<f64>,
    r_eff: &SpdMatrix,
) -> Result<GaussianBelief, FilterError> {
    CubatureRule.update(model, predicted, measurement, r_eff)
}

fn cubature_points(
    mean: &DVector<f64>,
    cov: &SpdMatrix,
) -> Result<Vec<DVector<f64>>, NumericsError> {
    let l = cov.cholesky_lower()?;
    let n = mean.len();
    let scale = (n as f64).sqrt();
    let mut points = Vec::with_capacity(2 * n);
    for i in 0..n {
        points.push(mean + l.column(i) * scale);
    }
    for i in 0..n {
        points.push(mean - l.column(i) * scale);
    }
    Ok(points)
}

/// Equal-weight mean and scatter of a point cloud. The scatter is symmetric
/// bit-for-bit (outer products are, and sums of them stay so).
fn weighted_moments(points: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let count = points.len();
    let dim = points[0].len();
    let weight = 1.0 / count as f64;
    let mut mean = DVector::zeros(dim);
    for p in points {
        mean += p;
    }
    mean *= weight;
    let mut scatter = DMatrix::zeros(dim, dim);
    for p in points {
        let d = p - &mean;
        scatter += &d * d.transpose();
    }
    scatter *= weight;
    (mean, scatter)
}

/// Normalized measurement fitting error `β = L⁻¹(y − ŷ)` with
/// `L = cholesky(r)`, computed by forward substitution.
///
/// A diagonal `r` reduces to the per-channel divisions `β_i = (y_i − ŷ_i)/σ_i`
/// exactly, which is what makes the joint and separate strategies coincide
/// bit-for-bit on uncorrelated measurements.
pub fn nmfe(
    y: &DVector<f64>,
    y_hat: &DVector<f64>,
    r: &SpdMatrix,
) -> Result<DVector<f64>, FilterError> {
    ensure("nmfe residual", y.len(), y_hat.len())?;
    ensure("nmfe covariance", y.len(), r.dim())?;
    let l = r.cholesky_lower()?;
    let beta = l
        .solve_lower_triangular(&(y - y_hat))
        .expect("Cholesky factor has positive diagonal");
    Ok(beta)
}

/// Per-channel normalized fitting error `δ_i = (y_i − ŷ_i)/σ_i`, each channel
/// scaled by its own marginal standard deviation.
pub fn separate_errors(
    y: &DVector<f64>,
    y_hat: &DVector<f64>,
    sigma: &DVector<f64>,
) -> Result<DVector<f64>, FilterError> {
    ensure("separate residual", y.len(), y_hat.len())?;
    ensure("separate sigma", y.len(), sigma.len())?;
    let mut delta = DVector::zeros(y.len());
    for i in 0..y.len() {
        if !(sigma[i] > 0.0) {
            return Err(FilterError::NonPositiveSigma {
                index: i,
                value: sigma[i],
            });
        }
        delta[i] = (y[i] - y_hat[i]) / sigma[i];
    }
    Ok(delta)
}

/// Clamps raw weight-function values from below; every output lies in
/// `[floor, ∞)`. Costs whose ψ can reach zero rely on this to keep the
/// reweighted covariance invertible.
pub fn apply_weight_floor(raw_weights: &[f64], floor: f64) -> Vec<f64> {
    raw_weights.iter().map(|&w| w.max(floor)).collect()
}

fn floored_psi(cost: &RobustCost, errors: &DVector<f64>, floor: f64) -> Vec<f64> {
    apply_weight_floor(
        &errors.iter().map(|&e| cost.psi(e)).collect::<Vec<_>>(),
        floor,
    )
}

fn validate_weights(r: &SpdMatrix, weights: &[f64]) -> Result<(), FilterError> {
    ensure("weights", r.dim(), weights.len())?;
    for (i, &w) in weights.iter().enumerate() {
        if !(w > 0.0 && w <= 1.0) {
            return Err(FilterError::InvalidWeight { index: i, value: w });
        }
    }
    Ok(())
}

/// Joint reweighting `R̄ = R^{1/2} W⁻¹ R^{T/2}` from already-floored weights,
/// with `R^{1/2}` the lower Cholesky factor; computed as `M·Mᵀ` with
/// `M = L·diag(w^{-1/2})`.
pub fn reweight_joint_with_weights(
    r: &SpdMatrix,
    weights: &[f64],
) -> Result<SpdMatrix, FilterError> {
    validate_weights(r, weights)?;
    if weights.iter().all(|&w| w == 1.0) {
        return Ok(r.clone());
    }
    let mut factor = r.cholesky_lower()?;
    for (j, &w) in weights.iter().enumerate() {
        let s = 1.0 / w.sqrt();
        factor.column_mut(j).scale_mut(s);
    }
    Ok(SpdMatrix::new(crate::numerics::gram(&factor))?)
}

/// Joint NMFE reweighting: `w_i = max(ψ(β_i), floor)`, then
/// `R̄ = R^{1/2} W⁻¹ R^{T/2}`.
pub fn reweight_joint(
    r: &SpdMatrix,
    beta: &DVector<f64>,
    cost: &RobustCost,
    floor: f64,
) -> Result<SpdMatrix, FilterError> {
    ensure("beta", r.dim(), beta.len())?;
    reweight_joint_with_weights(r, &floored_psi(cost, beta, floor))
}

/// Separate reweighting `R̃ = Λ R Λ`, `Λ = diag(w^{-1/2})`, from
/// already-floored weights, computed as `N·Nᵀ` with `N = Λ·L`. Entrywise this
/// is `R̃_ij = κ_ij·(σ_i/√w_i)·(σ_j/√w_j)`: per-channel variances inflate,
/// correlation coefficients stay put.
pub fn reweight_separate_with_weights(
    r: &SpdMatrix,
    weights: &[f64],
) -> Result<SpdMatrix, FilterError> {
    validate_weights(r, weights)?;
    if weights.iter().all(|&w| w == 1.0) {
        return Ok(r.clone());
    }
    let mut factor = r.cholesky_lower()?;
    for (i, &w) in weights.iter().enumerate() {
        let s = 1.0 / w.sqrt();
        factor.row_mut(i).scale_mut(s);
    }
    Ok(SpdMatrix::new(crate::numerics::gram(&factor))?)
}

/// Separate per-channel reweighting: `w_i = max(ψ(δ_i), floor)`, then
/// `R̃ = Λ R Λ`.
pub fn reweight_separate(
    r: &SpdMatrix,
    delta: &DVector<f64>,
    cost: &RobustCost,
    floor: f64,
) -> Result<SpdMatrix, FilterError> {
    ensure("delta", r.dim(), delta.len())?;
    reweight_separate_with_weights(r, &floored_psi(cost, delta, floor))
}

/// Iterated robust measurement update under any Gaussian-approximation rule.
///
/// Iteration `k` evaluates the residual at the current iterate mean (the
/// predicted mean for `k = 0`), rebuilds the effective covariance from the
/// floored robust weights, and re-solves the update from the *same* predicted
/// belief. The loop stops when the Euclidean mean increment drops below
/// `epsilon` or the iteration cap is reached; hitting the cap is recorded in
/// the diagnostics rather than reported as an error.
pub fn robust_update_with<G: GaussianApproximation + ?Sized>(
    gkf: &G,
    model: &StateSpaceModel,
    predicted: &GaussianBelief,
    measurement: &DVector<f64>,
    cost: &RobustCost,
    config: &RobustUpdateConfig,
) -> Result<(GaussianBelief, UpdateDiagnostics), FilterError> {
    config.validate()?;
    let m = model.measurement_dim();
    ensure("measurement", m, measurement.len())?;

    if config.strategy == RobustStrategy::None {
        let posterior = gkf.update(model, predicted, measurement, model.measurement_noise())?;
        return Ok((
            posterior,
            UpdateDiagnostics {
                iterations: 1,
                final_weights: DVector::repeat(m, 1.0),
                converged: true,
            },
        ));
    }

    let nominal = model.measurement_noise();
    let sigma = match config.strategy {
        RobustStrategy::Separate => Some(decompose_correlation(nominal)?.sigma),
        _ => None,
    };

    let mut current_mean = predicted.mean.clone();
    let mut result: Option<(GaussianBelief, Vec<f64>)> = None;
    let mut iterations = 0;
    let mut converged = false;

    for k in 0..config.max_iterations {
        let y_hat = model.measurement(&current_mean);
        ensure("measurement output", m, y_hat.len())?;
        let (weights, r_eff) = match config.strategy {
            RobustStrategy::Joint => {
                let beta = nmfe(measurement, &y_hat, nominal)?;
                let weights = floored_psi(cost, &beta, config.weight_floor);
                let r_eff = reweight_joint_with_weights(nominal, &weights)?;
                (weights, r_eff)
            }
            RobustStrategy::Separate => {
                let delta = separate_errors(measurement, &y_hat, sigma.as_ref().unwrap())?;
                let weights = floored_psi(cost, &delta, config.weight_floor);
                let r_eff = reweight_separate_with_weights(nominal, &weights)?;
                (weights, r_eff)
            }
            RobustStrategy::None => unreachable!(),
        };

        let next = gkf.update(model, predicted, measurement, &r_eff)?;
        let increment = (&next.mean - &current_mean).norm();
        current_mean = next.mean.clone();
        result = Some((next, weights));
        iterations = k + 1;
        if increment < config.epsilon {
            converged = true;
            break;
        }
    }

    let (posterior, weights) = result.expect("max_iterations >= 1");
    Ok((
        posterior,
        UpdateDiagnostics {
            iterations,
            final_weights: DVector::from_vec(weights),
            converged,
        },
    ))
}

/// [`robust_update_with`] under the [`CubatureRule`].
pub fn robust_update(
    model: &StateSpaceModel,
    predicted: &GaussianBelief,
    measurement: &DVector<f64>,
    cost: &RobustCost,
    config: &RobustUpdateConfig,
) -> Result<(GaussianBelief, UpdateDiagnostics), FilterError> {
    robust_update_with(&CubatureRule, model, predicted, measurement, cost, config)
}

/// Recursive predict/update pass over a measurement sequence, returning the
/// posterior and its update diagnostics at every step. A numeric failure
/// aborts with the index of the failing step.
pub fn filter_run_detailed_with<G: GaussianApproximation + ?Sized>(
    gkf: &G,
    model: &StateSpaceModel,
    init: &GaussianBelief,
    measurements: &[DVector<f64>],
    cost: &RobustCost,
    config: &RobustUpdateConfig,
) -> Result<Vec<(GaussianBelief, UpdateDiagnostics)>, FilterError> {
    config.validate()?;
    ensure("initial mean", model.state_dim(), init.dim())?;
    let mut posterior = init.clone();
    let mut out = Vec::with_capacity(measurements.len());
    for (index, y) in measurements.iter().enumerate() {
        let step = (|| {
            let predicted = gkf.predict(model, &posterior)?;
            robust_update_with(gkf, model, &predicted, y, cost, config)
        })()
        .map_err(|e| FilterError::Step {
            index,
            source: Box::new(e),
        })?;
        posterior = step.0.clone();
        out.push(step);
    }
    Ok(out)
}

/// Recursive predict/update pass returning one posterior per measurement.
pub fn filter_run(
    model: &StateSpaceModel,
    init: &GaussianBelief,
    measurements: &[DVector<f64>],
    cost: &RobustCost,
    config: &RobustUpdateConfig,
) -> Result<Vec<GaussianBelief>, FilterError> {
    Ok(
        filter_run_detailed_with(&CubatureRule, model, init, measurements, cost, config)?
            .into_iter()
            .map(|(belief, _)| belief)
            .collect(),
    )
}

fn ensure(what: &'static str, expected: usize, got: usize) -> Result<(), FilterError> {
    if expected == got {
        Ok(())
    } else {
        Err(FilterError::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
