//! Reference Kalman filter steps over an [`LtvModel`].
//!
//! Indexing convention: the step from `k` to `k + 1` consumes `u_k` and `y_k`, and
//! the innovation is formed against the *prior* estimate,
//! `y_k − C_k x̂_{k+1|k}`. In other words `y_k` is treated as a measurement of
//! `x_{k+1}`. Callers feeding sampled data must align their measurement sequence
//! accordingly (see `experiment`).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ltv::LtvModel;
use crate::spd::SpdMatrix;

/// Posterior estimate `x̂_k` and covariance `P_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub step: usize,
    pub x_hat: DVector<f64>,
    pub p: SpdMatrix,
}

impl FilterState {
    pub fn new(step: usize, x_hat: DVector<f64>, p: SpdMatrix) -> Result<Self> {
        if x_hat.len() != p.dim() {
            return Err(Error::dimension("FilterState", p.dim(), x_hat.len()));
        }
        if !p.is_positive_definite() {
            return Err(Error::Definiteness {
                required: "positive definite",
                detail: "initial covariance".into(),
            });
        }
        Ok(FilterState { step, x_hat, p })
    }

    pub fn dim(&self) -> usize {
        self.x_hat.len()
    }
}

/// Process noise `Σ_k` (PSD) and measurement noise `Γ_k` (PD).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub sigma: SpdMatrix,
    pub gamma: SpdMatrix,
}

impl NoiseSpec {
    pub fn new(sigma: SpdMatrix, gamma: SpdMatrix) -> Result<Self> {
        if !gamma.is_positive_definite() {
            return Err(Error::Definiteness {
                required: "positive definite",
                detail: "measurement noise covariance".into(),
            });
        }
        Ok(NoiseSpec { sigma, gamma })
    }
}

/// Intermediate quantities of one two-step update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub x_prior: DVector<f64>,
    pub p_prior: SpdMatrix,
    pub gain: DMatrix<f64>,
    pub innovation: DVector<f64>,
}

pub(crate) fn check_step_inputs(
    state: &FilterState,
    model: &LtvModel,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<()> {
    if state.dim() != model.state_dim() {
        return Err(Error::dimension("filter state", model.state_dim(), state.dim()));
    }
    if u.len() != model.input_dim() {
        return Err(Error::dimension("input u_k", model.input_dim(), u.len()));
    }
    if y.len() != model.output_dim() {
        return Err(Error::dimension("measurement y_k", model.output_dim(), y.len()));
    }
    Ok(())
}

/// Measurement update from a prior `(x̂_{k+1|k}, P_{k+1|k})`. Shared by the plain and
/// adaptive filters.
pub(crate) fn measurement_update(
    step: usize,
    x_prior: DVector<f64>,
    p_prior: SpdMatrix,
    c: &DMatrix<f64>,
    gamma: &SpdMatrix,
    y: &DVector<f64>,
) -> Result<(FilterState, StepDiagnostics)> {
    if gamma.dim() != c.nrows() {
        return Err(Error::dimension("Γ_k", c.nrows(), gamma.dim()));
    }
    let pc_t = p_prior.matrix() * c.transpose();
    let s = c * &pc_t + gamma.matrix();
    let s_chol = s.cholesky().ok_or_else(|| Error::Numerical {
        step,
        detail: "innovation covariance C P Cᵀ + Γ is not positive definite".into(),
    })?;
    // K = P Cᵀ S⁻¹, via S Kᵀ = C P
    let gain = s_chol.solve(&pc_t.transpose()).transpose();
    let innovation = y - c * &x_prior;
    let x_hat = &x_prior + &gain * &innovation;
    let p_next = p_prior.matrix() - &gain * pc_t.transpose();
    let p = SpdMatrix::from_trusted(p_next);
    if !p.is_positive_definite() {
        return Err(Error::Numerical {
            step,
            detail: "posterior covariance lost positive definiteness".into(),
        });
    }
    Ok((
        FilterState {
            step: step + 1,
            x_hat,
            p,
        },
        StepDiagnostics {
            x_prior,
            p_prior,
            gain,
            innovation,
        },
    ))
}

/// One step of the two-step (predict, then update) Kalman filter.
pub fn kf_two_step(
    state: &FilterState,
    model: &LtvModel,
    noise: &NoiseSpec,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<(FilterState, StepDiagnostics)> {
    check_step_inputs(state, model, u, y)?;
    let k = state.step;
    let mats = model.matrices(k)?;
    let x_prior = &mats.a * &state.x_hat + &mats.b * u;
    let p_prior = state.p.congruence(&mats.a)?.add(&noise.sigma)?;
    measurement_update(k, x_prior, p_prior, &mats.c, &noise.gamma, y)
}

/// One step of the one-step (information form) Kalman filter:
/// `P_{k+1}⁻¹ = (Σ_k + A_k P_k A_kᵀ)⁻¹ + C_kᵀ Γ_k⁻¹ C_k`.
///
/// Requires `Σ_k + A_k P_k A_kᵀ` to be nonsingular.
pub fn kf_one_step(
    state: &FilterState,
    model: &LtvModel,
    noise: &NoiseSpec,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<FilterState> {
    check_step_inputs(state, model, u, y)?;
    let k = state.step;
    let mats = model.matrices(k)?;
    let predicted_cov = state.p.congruence(&mats.a)?.add(&noise.sigma)?;
    let predicted_info = predicted_cov.inverse().map_err(|_| Error::Numerical {
        step: k,
        detail: "Σ_k + A_k P_k A_kᵀ is singular".into(),
    })?;
    let gamma_inv = noise.gamma.inverse()?;
    let info = predicted_info.add(&gamma_inv.congruence(&mats.c.transpose())?)?;
    let p = info.inverse().map_err(|_| Error::Numerical {
        step: k,
        detail: "posterior information matrix is singular".into(),
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
