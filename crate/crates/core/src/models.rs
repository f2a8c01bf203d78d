//! State-space model abstraction and the two-state nonlinear benchmark
//! system used by the Monte Carlo study.
//!
//! Models are opaque function values plus dimensions: the cubature filter is
//! derivative-free, so no Jacobians are carried. The transition and
//! measurement maps must be reentrant and side-effect-free — the Monte Carlo
//! harness calls them from many worker threads at once.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::numerics::{NumericsError, SpdMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("covariance diagonal entry {index} is not positive ({value})")]
    NonPositiveDiagonal { index: usize, value: f64 },
    #[error("correlation {kappa12} makes the measurement covariance singular")]
    DegenerateCovariance { kappa12: f64 },
    #[error("noise covariance is {got}x{got}, expected {expected}x{expected}")]
    CovarianceDimension { expected: usize, got: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Deterministic vector map used for transition and measurement functions.
pub type VectorMap = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Discrete-time model `x_t = f(x_{t-1}) + v_t`, `y_t = h(x_t) + w_t` with
/// time-invariant nominal noise covariances `Q` and `R`.
///
/// Time variation of the effective measurement covariance lives at the
/// filter call site (the robust updates pass a reweighted covariance per
/// step), not in the model.
#[derive(Clone)]
pub struct StateSpaceModel {
    state_dim: usize,
    measurement_dim: usize,
    transition: VectorMap,
    measurement: VectorMap,
    process_noise: SpdMatrix,
    measurement_noise: SpdMatrix,
}

impl std::fmt::Debug for StateSpaceModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StateSpaceModel")
            .field("state_dim", &self.state_dim)
            .field("measurement_dim", &self.measurement_dim)
            .field("process_noise", self.process_noise.as_matrix())
            .field("measurement_noise", self.measurement_noise.as_matrix())
            .finish()
    }
}

impl StateSpaceModel {
    pub fn new(
        state_dim: usize,
        measurement_dim: usize,
        transition: VectorMap,
        measurement: VectorMap,
        process_noise: SpdMatrix,
        measurement_noise: SpdMatrix,
    ) -> Result<Self, ModelError> {
        if process_noise.dim() != state_dim {
            return Err(ModelError::CovarianceDimension {
                expected: state_dim,
                got: process_noise.dim(),
            });
        }
        if measurement_noise.dim() != measurement_dim {
            return Err(ModelError::CovarianceDimension {
                expected: measurement_dim,
                got: measurement_noise.dim(),
            });
        }
        Ok(Self {
            state_dim,
            measurement_dim,
            transition,
            measurement,
            process_noise,
            measurement_noise,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn measurement_dim(&self) -> usize {
        self.measurement_dim
    }

    pub fn transition(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.transition)(x)
    }

    pub fn measurement(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.measurement)(x)
    }

    pub fn process_noise(&self) -> &SpdMatrix {
        &self.process_noise
    }

    pub fn measurement_noise(&self) -> &SpdMatrix {
        &self.measurement_noise
    }
}

/// Per-channel standard deviations and the correlation coefficient matrix of
/// a covariance: `r = diag(sigma) · kappa · diag(sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationDecomposition {
    /// Marginal standard deviations, `sigma_i = sqrt(r_ii)`.
    pub sigma: DVector<f64>,
    /// Symmetric, unit-diagonal, entries clamped to `[-1, 1]`.
    pub kappa: DMatrix<f64>,
}

/// Splits an SPD covariance into marginal standard deviations and
/// correlation coefficients.
pub fn decompose_correlation(r: &SpdMatrix) -> Result<CorrelationDecomposition, ModelError> {
    let m = r.as_matrix();
    let d = r.dim();
    let mut sigma = DVector::zeros(d);
    for i in 0..d {
        let v = m[(i, i)];
        if !(v > 0.0) {
            return Err(ModelError::NonPositiveDiagonal { index: i, value: v });
        }
        sigma[i] = v.sqrt();
    }
    let mut kappa = DMatrix::identity(d, d);
    for i in 0..d {
        for j in (i + 1)..d {
            let k = (m[(i, j)] / (sigma[i] * sigma[j])).clamp(-1.0, 1.0);
            kappa[(i, j)] = k;
            kappa[(j, i)] = k;
        }
    }
    Ok(CorrelationDecomposition { sigma, kappa })
}

/// Transition map of the two-state benchmark system:
/// `x₁' = x₁·sin(x₁) + sin(x₂)`, `x₂' = x₂·cos(x₂) + 0.75·x₁`.
pub fn benchmark_transition(x: &DVector<f64>) -> DVector<f64> {
    debug_assert_eq!(x.len(), 2);
    DVector::from_vec(vec![
        x[0] * x[0].sin() + x[1].sin(),
        x[1] * x[1].cos() + 0.75 * x[0],
    ])
}

/// Measurement map of the benchmark system:
/// `y₁ = x₁ + x₁·x₂`, `y₂ = x₁·cos(2x₂) + sin(x₁)`.
pub fn benchmark_measurement(x: &DVector<f64>) -> DVector<f64> {
    debug_assert_eq!(x.len(), 2);
    DVector::from_vec(vec![
        x[0] + x[0] * x[1],
        x[0] * (2.0 * x[1]).cos() + x[0].sin(),
    ])
}

/// Builds the benchmark model with `Q = diag(0.2, 0.2)` and
/// `R = [[0.01, 0.01·κ], [0.01·κ, 0.01]]` for the given correlation
/// coefficient `kappa12` (strictly inside `(-1, 1)` so `R` stays SPD).
pub fn build_benchmark_model(kappa12: f64) -> Result<StateSpaceModel, ModelError> {
    if !(kappa12.abs() < 1.0) {
        return Err(ModelError::DegenerateCovariance { kappa12 });
    }
    let q = SpdMatrix::from_diagonal(&[0.2, 0.2])?;
    let off = 0.01 * kappa12;
    let r = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[0.01, off, off, 0.01]))?;
    StateSpaceModel::new(
        2,
        2,
        Arc::new(benchmark_transition),
        Arc::new(benchmark_measurement),
        q,
        r,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{cholesky_lower, max_abs, symmetrize};
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn transition_known_points() {
        assert_eq!(
            benchmark_transition(&dvector![0.0, 0.0]),
            dvector![0.0, 0.0]
        );

        let out = benchmark_transition(&dvector![PI / 2.0, 0.0]);
        assert!((out[0] - PI / 2.0).abs() < 1e-15);
        assert!((out[1] - 3.0 * PI / 8.0).abs() < 1e-15);

        // sin(π/2) = 1 and (π/2)·cos(π/2) vanishes
        let out = benchmark_transition(&dvector![0.0, PI / 2.0]);
        assert!((out[0] - 1.0).abs() < 1e-15);
        assert!(out[1].abs() < 1e-15);
    }

    #[test]
    fn measurement_known_points() {
        assert_eq!(
            benchmark_measurement(&dvector![0.0, 0.0]),
            dvector![0.0, 0.0]
        );

        let out = benchmark_measurement(&dvector![1.0, 0.0]);
        assert!((out[0] - 1.0).abs() < 1e-15);
        assert!((out[1] - (1.0 + 1.0f64.sin())).abs() < 1e-15);

        let out = benchmark_measurement(&dvector![2.0, PI / 2.0]);
        assert!((out[0] - (2.0 + PI)).abs() < 1e-14);
        assert!((out[1] - (2.0 * PI.cos() + 2.0f64.sin())).abs() < 1e-14);
    }

    #[test]
    fn maps_are_pure() {
        let x = dvector![0.37, -1.2];
        let a = benchmark_transition(&x);
        let b = benchmark_transition(&x);
        assert_eq!(a, b);
        let a = benchmark_measurement(&x);
        let b = benchmark_measurement(&x);
        assert_eq!(a, b);
    }

    #[test]
    fn decompose_known_cases() {
        let r = SpdMatrix::new(dmatrix![0.01, 0.005; 0.005, 0.01]).unwrap();
        let dec = decompose_correlation(&r).unwrap();
        assert!((dec.sigma[0] - 0.1).abs() < 1e-15);
        assert!((dec.sigma[1] - 0.1).abs() < 1e-15);
        assert!((dec.kappa[(0, 1)] - 0.5).abs() < 1e-12);
        assert_eq!(dec.kappa[(0, 0)], 1.0);

        let dec = decompose_correlation(&SpdMatrix::identity(3)).unwrap();
        assert_eq!(dec.sigma, dvector![1.0, 1.0, 1.0]);
        assert_eq!(dec.kappa, DMatrix::identity(3, 3));

        let dec = decompose_correlation(&SpdMatrix::from_diagonal(&[4.0, 9.0]).unwrap()).unwrap();
        assert_eq!(dec.sigma, dvector![2.0, 3.0]);
        assert_eq!(dec.kappa, DMatrix::identity(2, 2));
    }

    #[test]
    fn benchmark_model_covariances() {
        let model = build_benchmark_model(0.0).unwrap();
        assert_eq!(
            model.measurement_noise().as_matrix(),
            &dmatrix![0.01, 0.0; 0.0, 0.01]
        );
        assert_eq!(
            model.process_noise().as_matrix(),
            &dmatrix![0.2, 0.0; 0.0, 0.2]
        );

        let model = build_benchmark_model(0.5).unwrap();
        assert_eq!(
            model.measurement_noise().as_matrix(),
            &dmatrix![0.01, 0.005; 0.005, 0.01]
        );

        assert!(matches!(
            build_benchmark_model(1.0),
            Err(ModelError::DegenerateCovariance { .. })
        ));
        assert!(matches!(
            build_benchmark_model(-1.0),
            Err(ModelError::DegenerateCovariance { .. })
        ));
    }

    #[test]
    fn benchmark_r_factors_across_correlations() {
        for k in [-0.99, -0.5, 0.0, 0.5, 0.99] {
            let model = build_benchmark_model(k).unwrap();
            assert!(cholesky_lower(model.measurement_noise().as_matrix()).is_ok());
        }
    }

    proptest! {
        /// diag(sigma)·kappa·diag(sigma) reproduces the covariance.
        #[test]
        fn decompose_round_trip(seed in 0u64..500) {
            use rand::prelude::*;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let d = 3;
            let a = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let r = SpdMatrix::new(symmetrize(&(&a * a.transpose() + DMatrix::<f64>::identity(d, d)))).unwrap();
            let dec = decompose_correlation(&r).unwrap();
            let s = DMatrix::from_diagonal(&dec.sigma);
            let rebuilt = &s * &dec.kappa * &s;
            let err = max_abs(&(&rebuilt - r.as_matrix()));
            prop_assert!(err <= 1e-12 * max_abs(r.as_matrix()));
        }
    }
}
