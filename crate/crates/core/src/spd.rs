//! Small dense symmetric matrices with definiteness checking.
//!
//! Everything here targets the handful-of-states regime (n <= ~10). Definiteness is
//! decided by a diagonally pivoted Cholesky factorization with a pivot threshold
//! relative to the largest diagonal entry, never by an eigendecomposition.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance used by [`SpdMatrix::new_psd`] to accept a semidefinite matrix.
pub const PSD_TOL: f64 = 1e-10;

/// Relative pivot tolerance below which a square matrix is treated as singular.
pub const SINGULAR_TOL: f64 = 1e-12;

/// Outcome of [`check_definiteness`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Definiteness {
    PositiveDefinite,
    PositiveSemidefinite,
    Indefinite,
}

impl Definiteness {
    pub fn is_psd(self) -> bool {
        !matches!(self, Definiteness::Indefinite)
    }

    pub fn is_pd(self) -> bool {
        matches!(self, Definiteness::PositiveDefinite)
    }
}

/// Returns `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn ensure_square(m: &DMatrix<f64>, context: &'static str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::dimension(
            context,
            "square matrix",
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

/// Classifies a symmetric matrix as positive definite, positive semidefinite, or
/// indefinite.
///
/// A diagonally pivoted Cholesky elimination runs until the largest remaining
/// diagonal falls to `tol * max|diag(M)|`. If every pivot clears the threshold the
/// matrix is definite; otherwise the leftover Schur complement must be negligible
/// (no diagonal below `-threshold`, no off-diagonal above `threshold`) for the matrix
/// to count as semidefinite.
pub fn check_definiteness(m: &DMatrix<f64>, tol: f64) -> Result<Definiteness> {
    check_definiteness_scaled(m, tol, 0.0)
}

/// [`check_definiteness`] with the threshold taken as `tol * max(max|diag(M)|, scale)`.
///
/// Use this when `M` is a difference of larger matrices, so that pure rounding noise
/// at the scale of the operands is read as zero rather than given a sign.
pub fn check_definiteness_scaled(m: &DMatrix<f64>, tol: f64, scale: f64) -> Result<Definiteness> {
    ensure_square(m, "check_definiteness")?;
    let n = m.nrows();
    let entry_scale = max_abs(m);
    let asymmetry = max_abs(&(m - m.transpose()));
    let sym_tol = tol * entry_scale.max(1.0);
    if asymmetry > sym_tol {
        return Err(Error::Asymmetric {
            asymmetry,
            tol: sym_tol,
        });
    }

    let mut s = symmetrize(m);
    let threshold = tol * s.diagonal().iter().fold(scale, |a, v| a.max(v.abs()));
    let mut remaining: Vec<usize> = (0..n).collect();

    while !remaining.is_empty() {
        let (pos, &pivot_idx) = remaining
            .iter()
            .enumerate()
            .max_by(|a, b| s[(*a.1, *a.1)].total_cmp(&s[(*b.1, *b.1)]))
            .expect("nonempty");
        let pivot = s[(pivot_idx, pivot_idx)];
        if pivot <= threshold || !pivot.is_finite() {
            break;
        }
        remaining.swap_remove(pos);
        for &i in &remaining {
            let factor = s[(i, pivot_idx)] / pivot;
            for &j in &remaining {
                s[(i, j)] -= factor * s[(pivot_idx, j)];
            }
        }
    }

    if remaining.is_empty() {
        return Ok(Definiteness::PositiveDefinite);
    }
    for &i in &remaining {
        if !s[(i, i)].is_finite() || s[(i, i)] < -threshold {
            return Ok(Definiteness::Indefinite);
        }
        for &j in &remaining {
            if i != j && s[(i, j)].abs() > threshold {
                return Ok(Definiteness::Indefinite);
            }
        }
    }
    Ok(Definiteness::PositiveSemidefinite)
}

/// Inverts a general square matrix, rejecting it when the full-pivot LU factor has
/// a pivot ratio below [`SINGULAR_TOL`].
pub fn checked_inverse(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    ensure_square(m, context)?;
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    let lu = m.clone().full_piv_lu();
    let diag = lu.u().diagonal();
    let largest = diag.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let smallest = diag.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if !(largest > 0.0) || !(smallest.is_finite()) || smallest <= SINGULAR_TOL * largest {
        return Err(Error::Singular(context));
    }
    lu.try_inverse().ok_or(Error::Singular(context))
}

/// A symmetric positive-semidefinite matrix.
///
/// Constructors symmetrize their input. [`SpdMatrix::new_pd`] additionally requires a
/// successful Cholesky factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    /// Accepts a positive-semidefinite matrix (classified at [`PSD_TOL`]).
    pub fn new_psd(m: DMatrix<f64>) -> Result<Self> {
        ensure_square(&m, "SpdMatrix::new_psd")?;
        let s = symmetrize(&m);
        match check_definiteness(&s, PSD_TOL)? {
            Definiteness::Indefinite => Err(Error::Definiteness {
                required: "positive semidefinite",
                detail: format!("{s:.6}"),
            }),
            _ => Ok(SpdMatrix(s)),
        }
    }

    /// Accepts a strictly positive-definite matrix.
    pub fn new_pd(m: DMatrix<f64>) -> Result<Self> {
        ensure_square(&m, "SpdMatrix::new_pd")?;
        let s = symmetrize(&m);
        if s.clone().cholesky().is_none() {
            return Err(Error::Definiteness {
                required: "positive definite",
                detail: "Cholesky factorization failed".into(),
            });
        }
        Ok(SpdMatrix(s))
    }

    /// Wraps a matrix already known to be symmetric PSD (e.g. a sum or congruence of
    /// validated matrices). Still symmetrizes.
    pub(crate) fn from_trusted(m: DMatrix<f64>) -> Self {
        SpdMatrix(symmetrize(&m))
    }

    pub fn identity(n: usize) -> Self {
        SpdMatrix(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SpdMatrix(DMatrix::zeros(n, n))
    }

    pub fn scaled_identity(n: usize, scale: f64) -> Result<Self> {
        Self::new_psd(DMatrix::identity(n, n) * scale)
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new_psd(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn definiteness(&self, tol: f64) -> Definiteness {
        // Already symmetric, so classification cannot fail.
        check_definiteness(&self.0, tol).unwrap_or(Definiteness::Indefinite)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.0.clone().cholesky().is_some()
    }

    /// `M⁻¹` through a Cholesky factorization; fails unless `M` is positive definite.
    pub fn inverse(&self) -> Result<SpdMatrix> {
        let chol = self.0.clone().cholesky().ok_or_else(|| Error::Definiteness {
            required: "positive definite",
            detail: "Cholesky factorization failed while inverting".into(),
        })?;
        Ok(SpdMatrix::from_trusted(chol.inverse()))
    }

    /// Solves `M x = b` for positive-definite `M`.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let chol = self.0.clone().cholesky().ok_or_else(|| Error::Definiteness {
            required: "positive definite",
            detail: "Cholesky factorization failed while solving".into(),
        })?;
        Ok(chol.solve(b))
    }

    /// `self + other`; both PSD so the sum is PSD.
    pub fn add(&self, other: &SpdMatrix) -> Result<SpdMatrix> {
        if self.dim() != other.dim() {
            return Err(Error::dimension("SpdMatrix::add", self.dim(), other.dim()));
        }
        Ok(SpdMatrix::from_trusted(&self.0 + &other.0))
    }

    /// `T M Tᵀ` for any conformable `T`.
    pub fn congruence(&self, t: &DMatrix<f64>) -> Result<SpdMatrix> {
        if t.ncols() != self.dim() {
            return Err(Error::dimension(
                "SpdMatrix::congruence",
                self.dim(),
                t.ncols(),
            ));
        }
        Ok(SpdMatrix::from_trusted(t * &self.0 * t.transpose()))
    }

    /// `x ᵀ M x`.
    pub fn quadratic(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.0 * x)[(0, 0)]
    }
}

impl AsRef<DMatrix<f64>> for SpdMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// `(A + U C V)⁻¹` evaluated as `A⁻¹ − A⁻¹U(C⁻¹ + V A⁻¹ U)⁻¹ V A⁻¹`.
pub fn inversion_lemma(
    a_inv: &SpdMatrix,
    u: &DMatrix<f64>,
    c: &SpdMatrix,
    v: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a_inv.dim();
    let p = c.dim();
    if u.shape() != (n, p) {
        return Err(Error::dimension(
            "inversion_lemma U",
            format!("{n}x{p}"),
            format!("{}x{}", u.nrows(), u.ncols()),
        ));
    }
    if v.shape() != (p, n) {
        return Err(Error::dimension(
            "inversion_lemma V",
            format!("{p}x{n}"),
            format!("{}x{}", v.nrows(), v.ncols()),
        ));
    }
    let a_inv = a_inv.matrix();
    let c_inv = c.inverse()?;
    let inner = c_inv.matrix() + v * a_inv * u;
    let inner_inv = checked_inverse(&inner, "inversion_lemma inner term")?;
    Ok(a_inv - a_inv * u * inner_inv * v * a_inv)
}
