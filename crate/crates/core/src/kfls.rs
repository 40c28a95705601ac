//! The Kalman filter least squares (KFLS) cost and its recursive minimizer.
//!
//! For data up to step `k` the cost is
//!
//! ```text
//! J_k(x) = Σ_{i=0}^{k} ‖y_i − C_i T_{i+1,k+1}(x)‖²_{Γ_i⁻¹}
//!        − Σ_{i=0}^{k} ‖T_{i,k+1}(x) − x̂_i‖²_{F_i}
//!        + ‖T_{0,k+1}(x) − x̂_0‖²_{P_0⁻¹}
//! ```
//!
//! where `x̂_i` is the minimizer of `J_{i−1}`. [`kfls_step`] is the recursive
//! minimizer; [`KflsHistory::batch_quadratic`] and [`KflsHistory::batch_minimize`]
//! expand the cost into `xᵀ H_k x + 2 b_kᵀ x + c_k` from explicit sums over the whole
//! history and solve it directly, which gives an independent route to the same
//! estimate. The constant `c_k` is never formed.
//!
//! [`sigma_from_f`] and [`f_from_sigma`] convert between a forgetting matrix `F_k` and
//! the process-noise covariance `Σ_k` that makes the recursion coincide with the
//! one-step Kalman filter.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kalman::{check_step_inputs, FilterState};
use crate::ltv::{InputHistory, LtvModel};
use crate::spd::{check_definiteness, check_definiteness_scaled, symmetrize, Definiteness, SpdMatrix, PSD_TOL};

/// Tolerance of the `P_k⁻¹ − F_k ≻ 0` check.
pub const CONDITION_TOL: f64 = 1e-10;

/// All data entering `J_k`.
#[derive(Debug, Clone)]
pub struct KflsHistory {
    pub model: LtvModel,
    pub inputs: InputHistory,
    pub measurements: Vec<DVector<f64>>,
    pub gammas: Vec<SpdMatrix>,
    pub forgetting: Vec<DMatrix<f64>>,
    pub x0: DVector<f64>,
    pub p0: SpdMatrix,
}

/// `xᵀ H x + 2 bᵀ x`, the non-constant part of `J_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub step: usize,
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl QuadraticForm {
    pub fn evaluate(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.h * x)[(0, 0)] + 2.0 * self.b.dot(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (&self.h * x + &self.b) * 2.0
    }

    /// `−H⁻¹ b`; `H` must be positive definite.
    pub fn minimizer(&self) -> Result<DVector<f64>> {
        let h = SpdMatrix::new_pd(self.h.clone()).map_err(|_| Error::ForgettingCondition {
            step: Some(self.step),
            min_eigenvalue: min_eigenvalue(&self.h),
        })?;
        Ok(-h.solve(&self.b)?)
    }
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m).symmetric_eigen().eigenvalues.min()
}

impl KflsHistory {
    fn check_covers(&self, k: usize) -> Result<()> {
        let need = k + 1;
        let short = |what: &str, len: usize| {
            Error::Range(format!(
                "J_{k} needs {need} entries of {what}, history has {len}"
            ))
        };
        if self.measurements.len() < need {
            return Err(short("measurements", self.measurements.len()));
        }
        if self.gammas.len() < need {
            return Err(short("measurement covariances", self.gammas.len()));
        }
        if self.forgetting.len() < need {
            return Err(short("forgetting matrices", self.forgetting.len()));
        }
        if self.inputs.len() < need {
            return Err(short("inputs", self.inputs.len()));
        }
        Ok(())
    }

    fn check_anchors(&self, k: usize, anchors: &[DVector<f64>]) -> Result<()> {
        if anchors.len() < k + 1 {
            return Err(Error::Range(format!(
                "J_{k} needs estimates x̂_0..x̂_{k}, got {}",
                anchors.len()
            )));
        }
        Ok(())
    }

    /// `x̂_0, ..., x̂_k`, where each `x̂_{i+1}` is the batch minimizer of `J_i`.
    pub fn anchor_estimates(&self, k: usize) -> Result<Vec<DVector<f64>>> {
        let mut anchors = vec![self.x0.clone()];
        for i in 0..k {
            let next = self.batch_quadratic_with(i, &anchors)?.minimizer()?;
            anchors.push(next);
        }
        Ok(anchors)
    }

    /// `J_k(x)` evaluated term by term from its definition, with batch-computed
    /// anchor estimates.
    pub fn cost(&self, k: usize, x: &DVector<f64>) -> Result<f64> {
        let anchors = self.anchor_estimates(k)?;
        self.cost_with(k, x, &anchors)
    }

    /// `J_k(x)` with caller-supplied estimates `x̂_0..x̂_k`.
    pub fn cost_with(&self, k: usize, x: &DVector<f64>, anchors: &[DVector<f64>]) -> Result<f64> {
        self.check_covers(k)?;
        self.check_anchors(k, anchors)?;
        let model = &self.model;
        let mut loss = 0.0;
        let mut forget = 0.0;
        for i in 0..=k {
            let c = model.c(i)?;
            let r = &self.measurements[i] - c * model.transition(&self.inputs, i + 1, k + 1, x)?;
            loss += self.gammas[i].inverse()?.quadratic(&r);

            let d = model.transition(&self.inputs, i, k + 1, x)? - &anchors[i];
            forget += (d.transpose() * &self.forgetting[i] * &d)[(0, 0)];
        }
        let d0 = model.transition(&self.inputs, 0, k + 1, x)? - &self.x0;
        let reg = self.p0.inverse()?.quadratic(&d0);
        Ok(loss - forget + reg)
    }

    /// `H_k` and `b_k` built from their explicit sums over the history.
    pub fn batch_quadratic(&self, k: usize) -> Result<QuadraticForm> {
        let anchors = self.anchor_estimates(k)?;
        self.batch_quadratic_with(k, &anchors)
    }

    pub fn batch_quadratic_with(
        &self,
        k: usize,
        anchors: &[DVector<f64>],
    ) -> Result<QuadraticForm> {
        self.check_covers(k)?;
        self.check_anchors(k, anchors)?;
        let model = &self.model;
        let n = model.state_dim();
        let end = k + 1;
        let mut h = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);

        for i in 0..=k {
            let c = model.c(i)?;
            let gamma_inv = self.gammas[i].inverse()?;
            let f = &self.forgetting[i];
            let phi_next = model.phi(i + 1, end)?.matrix;
            let phi_here = model.phi(i, end)?.matrix;

            let c_phi = &c * &phi_next;
            h += c_phi.transpose() * gamma_inv.matrix() * &c_phi;
            h -= phi_here.transpose() * f * &phi_here;

            let carried = model.transition(&self.inputs, end, i, &anchors[i])?;
            b += phi_here.transpose() * f * &phi_here * carried;
            let stack = model.input_stack_effect(&self.inputs, end, i + 1)?;
            let shifted = &self.measurements[i] + &c * &phi_next * stack;
            b -= c_phi.transpose() * gamma_inv.matrix() * shifted;
        }

        let phi0 = model.phi(0, end)?.matrix;
        let p0_inv = self.p0.inverse()?;
        let reg = phi0.transpose() * p0_inv.matrix() * &phi0;
        b -= &reg * model.transition(&self.inputs, end, 0, &self.x0)?;
        h += reg;

        Ok(QuadraticForm {
            step: k,
            h: symmetrize(&h),
            b,
        })
    }

    /// `x̂_{k+1} = −H_k⁻¹ b_k`.
    pub fn batch_minimize(&self, k: usize) -> Result<DVector<f64>> {
        self.batch_quadratic(k)?.minimizer()
    }
}

/// True iff `P_k⁻¹ − F_k` is positive definite at [`CONDITION_TOL`].
pub fn forgetting_is_admissible(p_inv: &SpdMatrix, f: &DMatrix<f64>) -> bool {
    if f.shape() != (p_inv.dim(), p_inv.dim()) {
        return false;
    }
    let diff = symmetrize(&(p_inv.matrix() - f));
    matches!(
        check_definiteness(&diff, CONDITION_TOL),
        Ok(Definiteness::PositiveDefinite)
    )
}

/// Symmetrizes `F` (warning on visible asymmetry) and requires it PSD, judged
/// relative to the scale of `P_k⁻¹`.
fn validated_forgetting(f: &DMatrix<f64>, p: &SpdMatrix) -> Result<DMatrix<f64>> {
    let n = p.dim();
    if f.shape() != (n, n) {
        return Err(Error::dimension(
            "forgetting matrix",
            format!("{n}x{n}"),
            format!("{}x{}", f.nrows(), f.ncols()),
        ));
    }
    let asym = (f - f.transpose()).abs().max();
    let scale = f.abs().max().max(1.0);
    if asym > PSD_TOL * scale {
        log::warn!("forgetting matrix asymmetric by {asym:e}; symmetrizing");
    }
    let f = symmetrize(f);
    let scale = p.inverse()?.matrix().diagonal().max();
    if !check_definiteness_scaled(&f, PSD_TOL, scale)?.is_psd() {
        return Err(Error::Definiteness {
            required: "positive semidefinite",
            detail: "forgetting matrix F_k".into(),
        });
    }
    Ok(f)
}

/// `P_k⁻¹ − F_k` when it is positive definite.
fn retained_information(
    p: &SpdMatrix,
    f: &DMatrix<f64>,
    step: Option<usize>,
) -> Result<SpdMatrix> {
    let p_inv = p.inverse()?;
    if !forgetting_is_admissible(&p_inv, f) {
        let diff = p_inv.matrix() - f;
        return Err(Error::ForgettingCondition {
            step,
            min_eigenvalue: min_eigenvalue(&diff),
        });
    }
    Ok(SpdMatrix::from_trusted(p_inv.matrix() - f))
}

/// One step of the recursive KFLS minimizer:
///
/// ```text
/// P_{k+1}⁻¹ = A_k⁻ᵀ (P_k⁻¹ − F_k) A_k⁻¹ + C_kᵀ Γ_k⁻¹ C_k
/// x̂_{k+1}  = A_k x̂_k + B_k u_k + P_{k+1} C_kᵀ Γ_k⁻¹ (y_k − C_k (A_k x̂_k + B_k u_k))
/// ```
///
/// The condition `P_k⁻¹ − F_k ≻ 0` is checked on every call.
pub fn kfls_step(
    state: &FilterState,
    model: &LtvModel,
    f: &DMatrix<f64>,
    gamma: &SpdMatrix,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<FilterState> {
    check_step_inputs(state, model, u, y)?;
    let k = state.step;
    let mats = model.matrices(k)?;
    if state.p.dim() != model.state_dim() {
        return Err(Error::dimension("P_k", model.state_dim(), state.p.dim()));
    }
    let f = validated_forgetting(f, &state.p)?;
    let retained = retained_information(&state.p, &f, Some(k))?;
    let a_inv = model.a_inverse(k)?;
    let gamma_inv = gamma.inverse()?;
    let info = retained
        .congruence(&a_inv.transpose())?
        .add(&gamma_inv.congruence(&mats.c.transpose())?)?;
    let p = info.inverse().map_err(|_| Error::Numerical {
        step: k,
        detail: "information matrix P_{k+1}⁻¹ is singular".into(),
    })?;
    let x_prior = &mats.a * &state.x_hat + &mats.b * u;
    let innovation = y - &mats.c * &x_prior;
    let x_hat = &x_prior + p.matrix() * mats.c.transpose() * gamma_inv.matrix() * innovation;
    Ok(FilterState {
        step: k + 1,
        x_hat,
        p,
    })
}

/// `Σ_k = A_k [(P_k⁻¹ − F_k)⁻¹ − P_k] A_kᵀ`.
pub fn sigma_from_f(p: &SpdMatrix, f: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<SpdMatrix> {
    let f = validated_forgetting(f, p)?;
    let retained = retained_information(p, &f, None)?;
    let inflated = retained.inverse()?.into_matrix() - p.matrix();
    Ok(SpdMatrix::from_trusted(a * inflated * a.transpose()))
}

/// `F_k = P_k⁻¹ − (A_k⁻¹ Σ_k A_k⁻ᵀ + P_k)⁻¹`.
pub fn f_from_sigma(p: &SpdMatrix, sigma: &SpdMatrix, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if sigma.dim() != p.dim() {
        return Err(Error::dimension("f_from_sigma Σ", p.dim(), sigma.dim()));
    }
    let a_inv = crate::spd::checked_inverse(a, "A_k")?;
    let widened = sigma.congruence(&a_inv)?.add(p)?;
    let f = p.inverse()?.into_matrix() - widened.inverse()?.into_matrix();
    Ok(symmetrize(&f))
}
