//! Outlier-contaminated measurement generation, trajectory simulation,
//! Monte Carlo execution, and the TRMSE metric.
//!
//! Determinism contract: a scenario is fully determined by its
//! [`ScenarioConfig`], including the seed. Each Monte Carlo run draws from
//! its own counter-derived child stream, so changing the run count never
//! reshuffles earlier runs, and every configured filter inside a run
//! consumes exactly the same trajectory and initial estimate. Runs may
//! execute on a worker pool; results are reduced in run order, so thread
//! count never affects the output.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costs::{CostError, RobustCost};
use crate::filters::{
    filter_run_detailed_with, CubatureRule, FilterError, GaussianBelief, RobustStrategy,
    RobustUpdateConfig, DEFAULT_WEIGHT_FLOOR,
};
use crate::models::{build_benchmark_model, ModelError, StateSpaceModel};
use crate::numerics::SpdMatrix;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid {field}: {message}")]
    InvalidScenario { field: &'static str, message: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("all {runs} Monte Carlo runs failed; first error: {first}")]
    AllRunsFailed { runs: usize, first: FilterError },
}

/// Per-channel contamination probabilities and scale factors for the
/// Gaussian-mixture noise `w ~ (1−λ_i)·N(0, σ_i²) + λ_i·N(0, η_i²σ_i²)`
/// (jointly, `w ~ N(0, D·R·D)` with `D = diag(d)`, `d_i ∈ {1, η_i}`).
#[derive(Debug, Clone, PartialEq)]
pub struct OutlierSpec {
    lambda: Vec<f64>,
    eta: Vec<f64>,
}

impl OutlierSpec {
    pub fn new(lambda: Vec<f64>, eta: Vec<f64>) -> Result<Self, SimError> {
        if lambda.len() != eta.len() {
            return Err(SimError::InvalidScenario {
                field: "eta",
                message: format!("eta has {} entries, lambda {}", eta.len(), lambda.len()),
            });
        }
        for &l in &lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(SimError::InvalidScenario {
                    field: "lambda",
                    message: format!("contamination probability {l} outside [0, 1]"),
                });
            }
        }
        for &e in &eta {
            if !(e > 0.0) {
                return Err(SimError::InvalidScenario {
                    field: "eta",
                    message: format!("scale factor {e} must be positive"),
                });
            }
        }
        Ok(Self { lambda, eta })
    }

    pub fn channels(&self) -> usize {
        self.lambda.len()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }
}

/// Ground truth of one simulated run: states, measurements, and which
/// channels carried contaminated noise at each step.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub measurements: Vec<DVector<f64>>,
    pub contamination: Vec<Vec<bool>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// The filters the benchmark harness knows how to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    /// Plain cubature Kalman filter (no reweighting).
    Ckf,
    /// Joint NMFE reweighting.
    Hckf,
    /// Separate per-component reweighting.
    Mhckf,
}

impl FilterKind {
    pub const ALL: [FilterKind; 3] = [FilterKind::Ckf, FilterKind::Hckf, FilterKind::Mhckf];

    pub fn name(&self) -> &'static str {
        match self {
            FilterKind::Ckf => "ckf",
            FilterKind::Hckf => "hckf",
            FilterKind::Mhckf => "mhckf",
        }
    }

    pub fn strategy(&self) -> RobustStrategy {
        match self {
            FilterKind::Ckf => RobustStrategy::None,
            FilterKind::Hckf => RobustStrategy::Joint,
            FilterKind::Mhckf => RobustStrategy::Separate,
        }
    }
}

impl std::fmt::Display for FilterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FilterKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ckf" => Ok(FilterKind::Ckf),
            "hckf" => Ok(FilterKind::Hckf),
            "mhckf" => Ok(FilterKind::Mhckf),
            other => Err(format!("unknown filter '{other}'")),
        }
    }
}

/// One Monte Carlo scenario on the two-state benchmark model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kappa12: f64,
    pub lambda: [f64; 2],
    pub eta: [f64; 2],
    /// Steps per run.
    #[serde(rename = "T")]
    pub steps: usize,
    /// Number of independent Monte Carlo runs.
    #[serde(rename = "L")]
    pub runs: usize,
    /// Huber tuning parameter.
    pub gamma: f64,
    /// Convergence tolerance of the iterated robust updates.
    pub epsilon: f64,
    pub max_iterations: usize,
    pub seed: u64,
    pub filters: Vec<FilterKind>,
}

impl ScenarioConfig {
    /// True initial state of every run.
    pub const INITIAL_STATE: [f64; 2] = [0.5, 0.5];
    /// Diagonal of the initial estimate covariance; the initial estimate is
    /// drawn from `N(initial state, diag(INITIAL_COV_DIAG))`.
    pub const INITIAL_COV_DIAG: [f64; 2] = [0.01, 0.01];

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.kappa12.abs() < 1.0) {
            return Err(SimError::InvalidScenario {
                field: "kappa12",
                message: format!("{} must lie strictly inside (-1, 1)", self.kappa12),
            });
        }
        OutlierSpec::new(self.lambda.to_vec(), self.eta.to_vec())?;
        if self.steps == 0 {
            return Err(SimError::InvalidScenario {
                field: "T",
                message: "at least one step per run is required".into(),
            });
        }
        if self.runs == 0 {
            return Err(SimError::InvalidScenario {
                field: "L",
                message: "at least one Monte Carlo run is required".into(),
            });
        }
        if !(self.gamma > 0.0) {
            return Err(SimError::InvalidScenario {
                field: "gamma",
                message: format!("{} must be positive", self.gamma),
            });
        }
        if !(self.epsilon > 0.0) {
            return Err(SimError::InvalidScenario {
                field: "epsilon",
                message: format!("{} must be positive", self.epsilon),
            });
        }
        if self.max_iterations == 0 {
            return Err(SimError::InvalidScenario {
                field: "max_iterations",
                message: "at least one iteration is required".into(),
            });
        }
        if self.filters.is_empty() {
            return Err(SimError::InvalidScenario {
                field: "filters",
                message: "at least one filter must be selected".into(),
            });
        }
        let mut seen = self.filters.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.filters.len() {
            return Err(SimError::InvalidScenario {
                field: "filters",
                message: "duplicate filter entries".into(),
            });
        }
        Ok(())
    }
}

/// Per-filter benchmark output.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStats {
    /// Time-averaged RMSE per state component.
    pub trmse: DVector<f64>,
    /// Mean inner iterations per measurement update.
    pub mean_iterations: f64,
}

/// Result of a Monte Carlo scenario. Runs on which any filter failed
/// numerically are excluded from every filter symmetrically.
#[derive(Debug, Clone, PartialEq)]
pub struct TrmseResult {
    pub per_filter: BTreeMap<FilterKind, FilterStats>,
    pub excluded_runs: usize,
    pub included_runs: usize,
}

/// Draws one mixture-noise sample `w ~ N(0, D·r·D)` along with the
/// per-channel contamination mask.
///
/// Each channel independently flips a Bernoulli(λ_i) coin (one uniform draw
/// per channel, consumed regardless of outcome); contaminated channels scale
/// the Cholesky-colored Gaussian draw by η_i.
pub fn sample_measurement_noise<R: Rng + ?Sized>(
    r: &SpdMatrix,
    spec: &OutlierSpec,
    rng: &mut R,
) -> (DVector<f64>, Vec<bool>) {
    let m = r.dim();
    assert_eq!(spec.channels(), m, "outlier spec does not match covariance");
    let mask: Vec<bool> = spec
        .lambda
        .iter()
        .map(|&l| rng.random::<f64>() < l)
        .collect();
    let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let l = r
        .cholesky_lower()
        .expect("SpdMatrix factored at construction");
    let mut w = l * z;
    for i in 0..m {
        if mask[i] {
            w[i] *= spec.eta[i];
        }
    }
    (w, mask)
}

/// Simulates `steps` transitions of the model from `x0`, recording states,
/// contaminated measurements, and the contamination mask. Process noise is
/// drawn before measurement noise at every step.
pub fn simulate_trajectory<R: Rng + ?Sized>(
    model: &StateSpaceModel,
    spec: &OutlierSpec,
    x0: &DVector<f64>,
    steps: usize,
    rng: &mut R,
) -> Trajectory {
    let n = model.state_dim();
    assert_eq!(x0.len(), n, "initial state does not match model");
    let lq = model
        .process_noise()
        .cholesky_lower()
        .expect("SpdMatrix factored at construction");
    let mut states = Vec::with_capacity(steps);
    let mut measurements = Vec::with_capacity(steps);
    let mut contamination = Vec::with_capacity(steps);
    let mut x = x0.clone();
    for _ in 0..steps {
        let v = &lq * DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        x = model.transition(&x) + v;
        let (w, mask) = sample_measurement_noise(model.measurement_noise(), spec, rng);
        let y = model.measurement(&x) + w;
        states.push(x.clone());
        measurements.push(y);
        contamination.push(mask);
    }
    Trajectory {
        states,
        measurements,
        contamination,
    }
}

/// Time-averaged RMSE per state component over `L` runs of `T` steps:
/// for each component, `(1/T)·Σ_t sqrt((1/L)·Σ_j err²)` — the square root
/// sits inside the time average.
pub fn trmse<A, B>(truths: &[A], estimates: &[B]) -> Result<DVector<f64>, SimError>
where
    A: AsRef<[DVector<f64>]>,
    B: AsRef<[DVector<f64>]>,
{
    if truths.len() != estimates.len() || truths.is_empty() {
        return Err(SimError::ShapeMismatch(format!(
            "{} truth runs vs {} estimate runs",
            truths.len(),
            estimates.len()
        )));
    }
    let runs = truths.len();
    let steps = truths[0].as_ref().len();
    if steps == 0 {
        return Err(SimError::ShapeMismatch("runs have zero steps".into()));
    }
    let dim = truths[0].as_ref()[0].len();
    for (t, e) in truths.iter().zip(estimates) {
        if t.as_ref().len() != steps || e.as_ref().len() != steps {
            return Err(SimError::ShapeMismatch("ragged run lengths".into()));
        }
    }

    let mut out = DVector::zeros(dim);
    for c in 0..dim {
        let mut time_avg = 0.0;
        for t in 0..steps {
            let mut sq = 0.0;
            for j in 0..runs {
                let err = truths[j].as_ref()[t][c] - estimates[j].as_ref()[t][c];
                sq += err * err;
            }
            time_avg += (sq / runs as f64).sqrt();
        }
        out[c] = time_avg / steps as f64;
    }
    Ok(out)
}

struct RunRecord {
    truths: Vec<DVector<f64>>,
    estimates: BTreeMap<FilterKind, Vec<DVector<f64>>>,
    iterations: BTreeMap<FilterKind, usize>,
}

/// Executes one full Monte Carlo scenario on the benchmark model.
///
/// Every run `j` derives a child stream from `(seed, j)`, draws the initial
/// estimate from `N(x₀, P₀)`, simulates one trajectory, and feeds the same
/// data to every configured filter. Runs failing in any filter are dropped
/// from all filters and counted in `excluded_runs`.
pub fn run_monte_carlo(config: &ScenarioConfig) -> Result<TrmseResult, SimError> {
    config.validate()?;
    let model = build_benchmark_model(config.kappa12)?;
    let spec = OutlierSpec::new(config.lambda.to_vec(), config.eta.to_vec())?;
    let cost = RobustCost::huber(config.gamma)?;

    let outcomes: Vec<Result<RunRecord, FilterError>> = (0..config.runs)
        .into_par_iter()
        .map(|run| single_run(config, &model, &spec, &cost, run as u64))
        .collect();

    let mut records = Vec::with_capacity(config.runs);
    let mut excluded = 0usize;
    let mut first_error = None;
    for outcome in outcomes {
        match outcome {
            Ok(record) => records.push(record),
            Err(err) => {
                excluded += 1;
                if first_error.is_none() {
                    first_error = Some(err);
                }
            }
        }
    }
    if records.is_empty() {
        return Err(SimError::AllRunsFailed {
            runs: config.runs,
            first: first_error.expect("at least one failure"),
        });
    }

    let truths: Vec<&[DVector<f64>]> = records.iter().map(|r| r.truths.as_slice()).collect();
    let mut per_filter = BTreeMap::new();
    for &kind in &config.filters {
        let estimates: Vec<&[DVector<f64>]> = records
            .iter()
            .map(|r| r.estimates[&kind].as_slice())
            .collect();
        let total_iterations: usize = records.iter().map(|r| r.iterations[&kind]).sum();
        per_filter.insert(
            kind,
            FilterStats {
                trmse: trmse(&truths, &estimates)?,
                mean_iterations: total_iterations as f64
                    / (records.len() * config.steps) as f64,
            },
        );
    }

    Ok(TrmseResult {
        per_filter,
        excluded_runs: excluded,
        included_runs: records.len(),
    })
}

fn single_run(
    config: &ScenarioConfig,
    model: &StateSpaceModel,
    spec: &OutlierSpec,
    cost: &RobustCost,
    run: u64,
) -> Result<RunRecord, FilterError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(run);

    let x0 = DVector::from_row_slice(&ScenarioConfig::INITIAL_STATE);
    let p0 = SpdMatrix::from_diagonal(&ScenarioConfig::INITIAL_COV_DIAG)
        .expect("initial covariance is SPD");
    let lp = p0.cholesky_lower().expect("initial covariance is SPD");
    // initial estimate first, then the trajectory — fixed draw order
    let init_mean = &x0 + lp * DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let init = GaussianBelief {
        mean: init_mean,
        cov: p0,
    };
    let trajectory = simulate_trajectory(model, spec, &x0, config.steps, &mut rng);

    let mut estimates = BTreeMap::new();
    let mut iterations = BTreeMap::new();
    for &kind in &config.filters {
        let filter_config = RobustUpdateConfig {
            strategy: kind.strategy(),
            epsilon: config.epsilon,
            max_iterations: config.max_iterations,
            weight_floor: DEFAULT_WEIGHT_FLOOR,
        };
        let detailed = filter_run_detailed_with(
            &CubatureRule,
            model,
            &init,
            &trajectory.measurements,
            cost,
            &filter_config,
        )?;
        let mut means = Vec::with_capacity(detailed.len());
        let mut iters = 0usize;
        for (belief, diag) in detailed {
            means.push(belief.mean);
            iters += diag.iterations;
        }
        estimates.insert(kind, means);
        iterations.insert(kind, iters);
    }

    Ok(RunRecord {
        truths: trajectory.states,
        estimates,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::max_abs;
    use nalgebra::{DMatrix, dvector};

    fn scenario(kappa12: f64, lambda: [f64; 2], runs: usize, steps: usize) -> ScenarioConfig {
        ScenarioConfig {
            kappa12,
            lambda,
            eta: [10.0, 10.0],
            steps,
            runs,
            gamma: 1.345,
            epsilon: 1e-6,
            max_iterations: 50,
            seed: 0xC0FFEE,
            filters: FilterKind::ALL.to_vec(),
        }
    }

    fn sample_covariance(samples: &[DVector<f64>]) -> DMatrix<f64> {
        let m = samples[0].len();
        let mut cov = DMatrix::zeros(m, m);
        for s in samples {
            cov += s * s.transpose();
        }
        cov / samples.len() as f64
    }

    #[test]
    fn outlier_spec_validation() {
        assert!(OutlierSpec::new(vec![0.0, 1.0], vec![10.0, 10.0]).is_ok());
        assert!(OutlierSpec::new(vec![-0.1, 0.0], vec![10.0, 10.0]).is_err());
        assert!(OutlierSpec::new(vec![0.0, 1.1], vec![10.0, 10.0]).is_err());
        assert!(OutlierSpec::new(vec![0.0, 0.5], vec![10.0, 0.0]).is_err());
        assert!(OutlierSpec::new(vec![0.0], vec![10.0, 10.0]).is_err());
    }

    #[test]
    fn mixture_noise_clean_limit() {
        let r = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[0.01, 0.005, 0.005, 0.01])).unwrap();
        let spec = OutlierSpec::new(vec![0.0, 0.0], vec![10.0, 10.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples: Vec<_> = (0..100_000)
            .map(|_| sample_measurement_noise(&r, &spec, &mut rng).0)
            .collect();
        let cov = sample_covariance(&samples);
        for i in 0..2 {
            for j in 0..2 {
                let expected = r.as_matrix()[(i, j)];
                assert!(
                    (cov[(i, j)] - expected).abs() <= 0.05 * expected.abs(),
                    "entry ({i},{j}): {} vs {}",
                    cov[(i, j)],
                    expected
                );
            }
        }
    }

    #[test]
    fn mixture_noise_fully_contaminated_limit() {
        let r = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[0.01, 0.005, 0.005, 0.01])).unwrap();
        let spec = OutlierSpec::new(vec![1.0, 1.0], vec![10.0, 10.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples: Vec<_> = (0..100_000)
            .map(|_| sample_measurement_noise(&r, &spec, &mut rng).0)
            .collect();
        let cov = sample_covariance(&samples);
        for i in 0..2 {
            for j in 0..2 {
                let expected = 100.0 * r.as_matrix()[(i, j)];
                assert!(
                    (cov[(i, j)] - expected).abs() <= 0.05 * expected.abs(),
                    "entry ({i},{j}): {} vs {}",
                    cov[(i, j)],
                    expected
                );
            }
        }
    }

    #[test]
    fn mixture_noise_single_channel_variance() {
        // λ = (0, 0.2), η = 10: channel 2 variance inflates to
        // (0.8 + 0.2·100)·r₂₂ = 20.8·r₂₂ while channel 1 stays nominal.
        let r = SpdMatrix::from_diagonal(&[0.01, 0.01]).unwrap();
        let spec = OutlierSpec::new(vec![0.0, 0.2], vec![10.0, 10.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<_> = (0..100_000)
            .map(|_| sample_measurement_noise(&r, &spec, &mut rng).0)
            .collect();
        let cov = sample_covariance(&samples);
        assert!((cov[(0, 0)] - 0.01).abs() <= 0.05 * 0.01, "{}", cov[(0, 0)]);
        let expected = 20.8 * 0.01;
        assert!(
            (cov[(1, 1)] - expected).abs() <= 0.05 * expected,
            "{} vs {}",
            cov[(1, 1)],
            expected
        );
    }

    #[test]
    fn contamination_mask_frequency() {
        let r = SpdMatrix::from_diagonal(&[0.01, 0.01]).unwrap();
        let lambda = [0.1, 0.4];
        let spec = OutlierSpec::new(lambda.to_vec(), vec![10.0, 10.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let draws = 50_000usize;
        let mut counts = [0usize; 2];
        for _ in 0..draws {
            let (_, mask) = sample_measurement_noise(&r, &spec, &mut rng);
            for (c, &hit) in counts.iter_mut().zip(&mask) {
                *c += hit as usize;
            }
        }
        for i in 0..2 {
            let rate = counts[i] as f64 / draws as f64;
            let se = (lambda[i] * (1.0 - lambda[i]) / draws as f64).sqrt();
            assert!(
                (rate - lambda[i]).abs() <= 3.0 * se,
                "channel {i}: rate {rate} vs lambda {}",
                lambda[i]
            );
        }
    }

    #[test]
    fn trajectory_fixed_point_and_empty() {
        let model = {
            use std::sync::Arc;
            StateSpaceModel::new(
                2,
                2,
                Arc::new(|x: &DVector<f64>| x.clone()),
                Arc::new(|x: &DVector<f64>| x.clone()),
                SpdMatrix::new(DMatrix::identity(2, 2) * 1e-30).unwrap(),
                SpdMatrix::from_diagonal(&[0.01, 0.01]).unwrap(),
            )
            .unwrap()
        };
        let spec = OutlierSpec::new(vec![0.0, 0.0], vec![10.0, 10.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x0 = dvector![0.7, -0.3];

        let empty = simulate_trajectory(&model, &spec, &x0, 0, &mut rng);
        assert!(empty.is_empty());

        let traj = simulate_trajectory(&model, &spec, &x0, 10, &mut rng);
        assert_eq!(traj.len(), 10);
        for s in &traj.states {
            assert!((s - &x0).norm() < 1e-13, "state drifted: {s}");
        }
    }

    #[test]
    fn trajectory_is_deterministic() {
        let model = build_benchmark_model(0.5).unwrap();
        let spec = OutlierSpec::new(vec![0.2, 0.2], vec![10.0, 10.0]).unwrap();
        let x0 = dvector![0.5, 0.5];
        let mut rng_a = ChaCha8Rng::seed_from_u64(6);
        let mut rng_b = ChaCha8Rng::seed_from_u64(6);
        let a = simulate_trajectory(&model, &spec, &x0, 50, &mut rng_a);
        let b = simulate_trajectory(&model, &spec, &x0, 50, &mut rng_b);
        assert_eq!(a.states, b.states);
        assert_eq!(a.measurements, b.measurements);
        assert_eq!(a.contamination, b.contamination);
    }

    #[test]
    fn trmse_hand_cases() {
        // perfect estimation
        let truth = vec![vec![dvector![1.0], dvector![2.0]]];
        let perfect = trmse(&truth, &truth).unwrap();
        assert_eq!(perfect, dvector![0.0]);

        // single run, single step, error 0.3
        let t = vec![vec![dvector![1.0]]];
        let e = vec![vec![dvector![1.3]]];
        let single = trmse(&t, &e).unwrap();
        assert!((single[0] - 0.3).abs() < 1e-15);

        // two runs, one step, errors {3, 4} → sqrt(12.5)
        let t = vec![vec![dvector![0.0]], vec![vec![0.0].into()]];
        let e = vec![vec![dvector![3.0]], vec![vec![4.0].into()]];
        let two = trmse(&t, &e).unwrap();
        assert!((two[0] - 12.5f64.sqrt()).abs() < 1e-15);

        // shape errors
        assert!(trmse(&t, &truth).is_err());
        let empty: Vec<Vec<DVector<f64>>> = Vec::new();
        assert!(trmse(&empty, &empty).is_err());
    }

    #[test]
    fn trmse_permutation_invariant_and_monotone() {
        let t = vec![
            vec![dvector![0.0], dvector![0.0]],
            vec![dvector![0.0], dvector![0.0]],
            vec![dvector![0.0], dvector![0.0]],
        ];
        let e = vec![
            vec![dvector![1.0], dvector![-0.5]],
            vec![dvector![2.0], dvector![0.7]],
            vec![dvector![-1.5], dvector![0.1]],
        ];
        let base = trmse(&t, &e).unwrap();

        let permuted = vec![e[2].clone(), e[0].clone(), e[1].clone()];
        assert_eq!(trmse(&t, &permuted).unwrap(), base);

        let inflated: Vec<Vec<DVector<f64>>> = e
            .iter()
            .map(|run| run.iter().map(|v| v * 2.0).collect())
            .collect();
        assert!(trmse(&t, &inflated).unwrap()[0] > base[0]);
    }

    #[test]
    fn monte_carlo_smoke_and_determinism() {
        let mut config = scenario(0.5, [0.0, 0.0], 8, 15);
        config.filters = vec![FilterKind::Ckf];
        let a = run_monte_carlo(&config).unwrap();
        assert_eq!(a.excluded_runs, 0);
        assert_eq!(a.included_runs, 8);
        let stats = &a.per_filter[&FilterKind::Ckf];
        assert!(stats.trmse.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert_eq!(stats.mean_iterations, 1.0);

        let b = run_monte_carlo(&config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn monte_carlo_uncorrelated_strategies_identical() {
        let config = scenario(0.0, [0.2, 0.3], 20, 30);
        let result = run_monte_carlo(&config).unwrap();
        assert_eq!(result.excluded_runs, 0);
        let hckf = &result.per_filter[&FilterKind::Hckf];
        let mhckf = &result.per_filter[&FilterKind::Mhckf];
        assert_eq!(hckf.trmse, mhckf.trmse);
        assert_eq!(hckf.mean_iterations, mhckf.mean_iterations);
        // and the robust filters genuinely iterate
        assert!(hckf.mean_iterations > 1.0);
    }

    #[test]
    fn monte_carlo_runs_extend_without_reshuffling() {
        // child streams are counter-derived: raising L must not change the
        // contribution of earlier runs, which we observe through equality of
        // results computed twice at the same L after an unrelated L was run.
        let config_small = scenario(0.3, [0.1, 0.2], 5, 10);
        let mut config_large = config_small.clone();
        config_large.runs = 9;
        let small_a = run_monte_carlo(&config_small).unwrap();
        let _large = run_monte_carlo(&config_large).unwrap();
        let small_b = run_monte_carlo(&config_small).unwrap();
        assert_eq!(small_a, small_b);
    }

    #[test]
    fn scenario_validation_names_fields() {
        let mut config = scenario(0.0, [1.5, 0.0], 1, 1);
        match config.validate() {
            Err(SimError::InvalidScenario { field, .. }) => assert_eq!(field, "lambda"),
            other => panic!("expected lambda validation error, got {other:?}"),
        }
        config = scenario(1.0, [0.0, 0.0], 1, 1);
        assert!(matches!(
            config.validate(),
            Err(SimError::InvalidScenario { field: "kappa12", .. })
        ));
        config = scenario(0.0, [0.0, 0.0], 0, 1);
        assert!(matches!(
            config.validate(),
            Err(SimError::InvalidScenario { field: "L", .. })
        ));
        config = scenario(0.0, [0.0, 0.0], 1, 0);
        assert!(matches!(
            config.validate(),
            Err(SimError::InvalidScenario { field: "T", .. })
        ));
        config = scenario(0.0, [0.0, 0.0], 1, 1);
        config.filters = vec![FilterKind::Ckf, FilterKind::Ckf];
        assert!(matches!(
            config.validate(),
            Err(SimError::InvalidScenario { field: "filters", .. })
        ));
    }

    #[test]
    fn sample_covariance_is_symmetric_helper() {
        // guard for the test helper itself
        let samples = vec![dvector![1.0, 2.0], dvector![-0.5, 0.25]];
        let cov = sample_covariance(&samples);
        assert!(max_abs(&(&cov - cov.transpose())) == 0.0);
    }
}
