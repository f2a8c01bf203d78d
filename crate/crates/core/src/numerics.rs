//! Dense symmetric-positive-definite matrix utilities shared by all filters.
//!
//! Every covariance in the crate lives behind [`SpdMatrix`], which guarantees
//! exact symmetry and a successful Cholesky factorization at construction
//! time. The free functions are pure and may be called from any thread.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Absolute symmetry tolerance accepted by [`SpdMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Relative reconstruction tolerance for Cholesky factors,
/// `‖L·Lᵀ − m‖_max ≤ RECONSTRUCTION_TOL · (1 + ‖m‖_max)`.
pub const RECONSTRUCTION_TOL: f64 = 1e-10;

/// Fallback starting jitter for [`spd_repair`] when the trace-based rule
/// degenerates to zero (e.g. an all-zeros input).
pub const MIN_JITTER: f64 = f64::EPSILON;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    /// A Cholesky pivot was not strictly positive; the matrix is not
    /// positive definite (or carries NaNs from a broken covariance upstream).
    #[error("matrix is not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    /// Input violated the symmetry tolerance.
    #[error("matrix is not symmetric within {SYMMETRY_TOL:e} (max asymmetry {max_asymmetry})")]
    NotSymmetric { max_asymmetry: f64 },
    /// Input was not square.
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    /// [`spd_repair`] exhausted its jitter escalations.
    #[error("failed to repair matrix after {attempts} jitter escalations")]
    RepairFailed { attempts: usize },
}

/// A square real matrix that is exactly symmetric and passed a Cholesky
/// factorization when constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    data: DMatrix<f64>,
}

impl SpdMatrix {
    /// Validates `data` (square, symmetric within [`SYMMETRY_TOL`], positive
    /// definite) and stores its exactly symmetrized form.
    pub fn new(data: DMatrix<f64>) -> Result<Self, NumericsError> {
        if data.nrows() != data.ncols() {
            return Err(NumericsError::NotSquare {
                rows: data.nrows(),
                cols: data.ncols(),
            });
        }
        let max_asymmetry = max_abs(&(&data - data.transpose()));
        if !(max_asymmetry <= SYMMETRY_TOL) {
            return Err(NumericsError::NotSymmetric { max_asymmetry });
        }
        let sym = symmetrize(&data);
        cholesky_lower(&sym)?;
        Ok(Self { data: sym })
    }

    /// SPD matrix with the given strictly positive diagonal.
    pub fn from_diagonal(diag: &[f64]) -> Result<Self, NumericsError> {
        Self::new(DMatrix::from_diagonal(&DVector::from_row_slice(diag)))
    }

    pub fn identity(n: usize) -> Self {
        Self {
            data: DMatrix::identity(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    /// Lower-triangular Cholesky factor `L` with `L·Lᵀ = self`.
    pub fn cholesky_lower(&self) -> Result<DMatrix<f64>, NumericsError> {
        cholesky_lower(&self.data)
    }
}

/// Lower-triangular Cholesky factorization of a symmetric matrix.
///
/// Fails with [`NumericsError::NotPositiveDefinite`] as soon as a pivot is
/// not strictly positive, which signals a broken covariance upstream. NaN
/// pivots fail the same check.
pub fn cholesky_lower(m: &DMatrix<f64>) -> Result<DMatrix<f64>, NumericsError> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(NumericsError::NotSquare {
            rows: n,
            cols: m.ncols(),
        });
    }
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = m[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > 0.0) {
            return Err(NumericsError::NotPositiveDefinite { index: j, pivot });
        }
        let diag = pivot.sqrt();
        l[(j, j)] = diag;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / diag;
        }
    }
    Ok(l)
}

/// `(m + mᵀ)/2`, with mirrored entries written from the same value so the
/// output is symmetric bit-for-bit.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "symmetrize requires a square matrix");
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        s[(i, i)] = m[(i, i)];
        for j in (i + 1)..n {
            let v = (m[(i, j)] + m[(j, i)]) * 0.5;
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

/// Symmetrizes `m` and, if it fails to factor, adds an escalating multiple
/// of the identity until Cholesky succeeds.
///
/// The first candidate is the symmetrized input; jitter starts at `jitter`
/// (or `1e-12·trace/d`, floored at [`MIN_JITTER`], when `jitter` is zero) and
/// doubles on each of at most 10 escalations. Each candidate adds its jitter
/// to the symmetrized input afresh rather than accumulating.
pub fn spd_repair(m: &DMatrix<f64>, jitter: f64) -> Result<SpdMatrix, NumericsError> {
    assert!(jitter >= 0.0, "jitter must be nonnegative");
    let sym = symmetrize(m);
    if cholesky_lower(&sym).is_ok() {
        return Ok(SpdMatrix { data: sym });
    }
    let d = sym.nrows().max(1) as f64;
    let mut step = if jitter > 0.0 {
        jitter
    } else {
        1e-12 * sym.trace() / d
    };
    if !(step > 0.0) {
        step = MIN_JITTER;
    }
    for _ in 0..10 {
        let mut candidate = sym.clone();
        for i in 0..sym.nrows() {
            candidate[(i, i)] += step;
        }
        if cholesky_lower(&candidate).is_ok() {
            return Ok(SpdMatrix { data: candidate });
        }
        step *= 2.0;
    }
    Err(NumericsError::RepairFailed { attempts: 10 })
}

/// Solves `m·x = b` for SPD `m` via one Cholesky factorization and a
/// forward/backward triangular pair.
pub fn spd_solve(m: &SpdMatrix, b: &DMatrix<f64>) -> Result<DMatrix<f64>, NumericsError> {
    let l = m.cholesky_lower()?;
    let y = l
        .solve_lower_triangular(b)
        .expect("Cholesky factor has positive diagonal");
    let x = l
        .transpose()
        .solve_upper_triangular(&y)
        .expect("Cholesky factor has positive diagonal");
    Ok(x)
}

/// Gram product `a·aᵀ` with mirrored entries written from the same
/// accumulator, so the output is symmetric bit-for-bit.
pub fn gram(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let k = a.ncols();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.0;
            for c in 0..k {
                s += a[(i, c)] * a[(j, c)];
            }
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    out
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}
