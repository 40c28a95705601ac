//! RLS forgetting rules expressed as covariance inflation `Σ_forget,k`, and the
//! robust variable forgetting factor estimator.
//!
//! Each strategy returns the process-noise covariance that makes an RLS extension a
//! special case of the Kalman filter, evaluated with `A_k = I` (the adaptive filter
//! applies `A_k` afterwards):
//!
//! | strategy               | `Σ_forget,k`                                         |
//! |------------------------|------------------------------------------------------|
//! | none                   | `0`                                                  |
//! | exponential            | `(1/λ − 1) P_k`                                      |
//! | variable rate          | `(1/λ_k − 1) P_k`                                    |
//! | data dependent         | `(μ_k / ((1 − μ_k) μ_{k−1}) − 1) P_k`, `μ_{−1} = 1`  |
//! | exponential resetting  | `(λ P_k⁻¹ + (1 − λ) P_∞⁻¹)⁻¹ − P_k`                  |
//! | covariance resetting   | `P_∞ − P_k` when the criterion fires, else `0`       |
//! | directional            | `(1 − λ)/λ · C_kᵀ (C_k P_k⁻¹ C_kᵀ)⁻¹ C_k`            |
//! | variable direction     | `Λ_k⁻¹ P_k⁻¹ Λ_k⁻¹ − P_k`                            |

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::spd::{check_definiteness_scaled, SpdMatrix};

/// Tolerance for the PSD check on every strategy output.
pub const OUTPUT_PSD_TOL: f64 = 1e-9;

pub type ScalarSchedule = Arc<dyn Fn(usize) -> f64 + Send + Sync>;
pub type MatrixSchedule = Arc<dyn Fn(usize) -> SpdMatrix + Send + Sync>;
pub type ResetCriterion = Arc<dyn Fn(&ForgettingInput<'_>) -> bool + Send + Sync>;

/// Where a variable forgetting rate comes from.
#[derive(Clone)]
pub enum RateSource {
    /// `λ_k` given as a function of the step.
    Schedule(ScalarSchedule),
    /// `λ_k` estimated online; the adaptive filter threads the estimator state and
    /// supplies the value through [`ForgettingInput::lambda`].
    RobustVff(RobustVffConfig),
}

#[derive(Clone)]
pub enum ForgettingStrategy {
    None,
    Exponential { lambda: f64 },
    VariableRate(RateSource),
    DataDependent { mu: ScalarSchedule },
    ExponentialResetting { lambda: f64, p_inf: SpdMatrix },
    CovarianceResetting { p_inf: SpdMatrix, criterion: ResetCriterion },
    Directional { lambda: f64 },
    VariableDirection { lambda_matrix: MatrixSchedule },
}

impl fmt::Debug for ForgettingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ForgettingStrategy::None => f.write_str("None"),
            ForgettingStrategy::Exponential { lambda } => {
                f.debug_struct("Exponential").field("lambda", lambda).finish()
            }
            ForgettingStrategy::VariableRate(RateSource::Schedule(_)) => {
                f.write_str("VariableRate(Schedule)")
            }
            ForgettingStrategy::VariableRate(RateSource::RobustVff(cfg)) => {
                f.debug_tuple("VariableRate").field(cfg).finish()
            }
            ForgettingStrategy::DataDependent { .. } => f.write_str("DataDependent"),
            ForgettingStrategy::ExponentialResetting { lambda, p_inf } => f
                .debug_struct("ExponentialResetting")
                .field("lambda", lambda)
                .field("p_inf", p_inf)
                .finish(),
            ForgettingStrategy::CovarianceResetting { p_inf, .. } => f
                .debug_struct("CovarianceResetting")
                .field("p_inf", p_inf)
                .finish_non_exhaustive(),
            ForgettingStrategy::Directional { lambda } => {
                f.debug_struct("Directional").field("lambda", lambda).finish()
            }
            ForgettingStrategy::VariableDirection { .. } => f.write_str("VariableDirection"),
        }
    }
}

/// Data available to a strategy at step `k`.
#[derive(Debug, Clone, Copy)]
pub struct ForgettingInput<'a> {
    pub step: usize,
    /// Posterior covariance `P_k`.
    pub p: &'a SpdMatrix,
    /// Posterior estimate `x̂_k`.
    pub x_hat: &'a DVector<f64>,
    pub c: &'a DMatrix<f64>,
    /// `y_k − C_k x̂_k`.
    pub innovation: &'a DVector<f64>,
    /// Externally estimated `λ_k` (robust VFF).
    pub lambda: Option<f64>,
}

fn check_lambda(lambda: f64, what: &str) -> Result<()> {
    if lambda > 0.0 && lambda <= 1.0 {
        Ok(())
    } else {
        Err(Error::StrategyParameter(format!(
            "{what} must lie in (0, 1], got {lambda}"
        )))
    }
}

fn check_mu(mu: f64, k: isize) -> Result<()> {
    if (0.0..1.0).contains(&mu) {
        Ok(())
    } else {
        Err(Error::StrategyParameter(format!(
            "μ_{k} must lie in [0, 1), got {mu}"
        )))
    }
}

impl ForgettingStrategy {
    /// The forgetting factor this strategy applies at `input.step`, when it has one.
    pub fn lambda(&self, input: &ForgettingInput<'_>) -> Result<Option<f64>> {
        Ok(match self {
            ForgettingStrategy::Exponential { lambda }
            | ForgettingStrategy::ExponentialResetting { lambda, .. }
            | ForgettingStrategy::Directional { lambda } => Some(*lambda),
            ForgettingStrategy::VariableRate(RateSource::Schedule(s)) => Some(s(input.step)),
            ForgettingStrategy::VariableRate(RateSource::RobustVff(_)) => {
                Some(input.lambda.ok_or_else(|| {
                    Error::StrategyParameter(
                        "robust VFF strategy requires an estimated λ_k".into(),
                    )
                })?)
            }
            _ => None,
        })
    }

    /// `Σ_forget,k` for this strategy, validated PSD at [`OUTPUT_PSD_TOL`] relative to
    /// the scale of `P_k`.
    pub fn forgetting_sigma(&self, input: &ForgettingInput<'_>) -> Result<SpdMatrix> {
        Ok(self.forget(input)?.0)
    }

    /// `(Σ_forget,k, P_forget,k)`. A covariance reset returns `P_∞` itself as
    /// `P_forget,k` rather than the rounded sum `P_k + (P_∞ − P_k)`.
    pub fn forget(&self, input: &ForgettingInput<'_>) -> Result<(SpdMatrix, SpdMatrix)> {
        let mut reset_to: Option<&SpdMatrix> = None;
        let p = input.p;
        let n = p.dim();
        let k = input.step;
        let scaled_p = |s: f64| p.matrix() * s;

        let sigma = match self {
            ForgettingStrategy::None => DMatrix::zeros(n, n),
            ForgettingStrategy::Exponential { lambda } => {
                check_lambda(*lambda, "λ")?;
                scaled_p(1.0 / lambda - 1.0)
            }
            ForgettingStrategy::VariableRate(_) => {
                let lambda = self.lambda(input)?.expect("variable rate has λ");
                check_lambda(lambda, &format!("λ_{k}"))?;
                scaled_p(1.0 / lambda - 1.0)
            }
            ForgettingStrategy::DataDependent { mu } => {
                let mu_k = mu(k);
                check_mu(mu_k, k as isize)?;
                let mu_prev = if k == 0 { 1.0 } else { mu(k - 1) };
                if k > 0 {
                    check_mu(mu_prev, k as isize - 1)?;
                }
                if mu_prev == 0.0 {
                    return Err(Error::StrategyParameter(format!(
                        "μ_{} = 0 makes the data-dependent factor unbounded",
                        k as isize - 1
                    )));
                }
                scaled_p(mu_k / ((1.0 - mu_k) * mu_prev) - 1.0)
            }
            ForgettingStrategy::ExponentialResetting { lambda, p_inf } => {
                check_lambda(*lambda, "λ")?;
                check_dim(p_inf, n, "P_∞")?;
                let blend = p.inverse()?.into_matrix() * *lambda
                    + p_inf.inverse()?.into_matrix() * (1.0 - lambda);
                SpdMatrix::from_trusted(blend).inverse()?.into_matrix() - p.matrix()
            }
            ForgettingStrategy::CovarianceResetting { p_inf, criterion } => {
                check_dim(p_inf, n, "P_∞")?;
                if criterion(input) {
                    reset_to = Some(p_inf);
                    p_inf.matrix() - p.matrix()
                } else {
                    DMatrix::zeros(n, n)
                }
            }
            ForgettingStrategy::Directional { lambda } => {
                check_lambda(*lambda, "λ")?;
                let c = input.c;
                if c.ncols() != n {
                    return Err(Error::dimension("C_k", n, c.ncols()));
                }
                let inner = c * p.inverse()?.matrix() * c.transpose();
                let inner_inv = SpdMatrix::from_trusted(inner)
                    .inverse()
                    .map_err(|_| Error::Singular("C_k P_k⁻¹ C_kᵀ"))?;
                (c.transpose() * inner_inv.matrix() * c) * ((1.0 - lambda) / lambda)
            }
            ForgettingStrategy::VariableDirection { lambda_matrix } => {
                let lam = lambda_matrix(k);
                check_dim(&lam, n, "Λ_k")?;
                let lam_inv = lam.inverse().map_err(|_| {
                    Error::StrategyParameter(format!("Λ_{k} is not positive definite"))
                })?;
                lam_inv.matrix() * p.inverse()?.matrix() * lam_inv.matrix() - p.matrix()
            }
        };

        let sigma = SpdMatrix::from_trusted(sigma);
        let p_scale = p.matrix().diagonal().max();
        if !check_definiteness_scaled(sigma.matrix(), OUTPUT_PSD_TOL, p_scale)?.is_psd() {
            return Err(Error::StrategyParameter(format!(
                "{self:?} produced an indefinite Σ_forget at step {k}"
            )));
        }
        let p_forget = match reset_to {
            Some(p_inf) => p_inf.clone(),
            None => p.add(&sigma)?,
        };
        Ok((sigma, p_forget))
    }
}

fn check_dim(m: &SpdMatrix, n: usize, what: &'static str) -> Result<()> {
    if m.dim() != n {
        return Err(Error::dimension(what, n, m.dim()));
    }
    Ok(())
}

/// Tuning of the robust variable forgetting factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustVffConfig {
    pub k_alpha: f64,
    pub k_beta: f64,
    pub xi: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// System order `n` used in the window lengths.
    pub order: usize,
}

impl RobustVffConfig {
    /// `K_α = 2`, `K_β = 10`, `ξ = 1e-6`, `λ ∈ [0.5, 1]`.
    pub fn standard(order: usize) -> Self {
        RobustVffConfig {
            k_alpha: 2.0,
            k_beta: 10.0,
            xi: 1e-6,
            lambda_min: 0.5,
            lambda_max: 1.0,
            order,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::StrategyParameter(msg));
        if self.order == 0 {
            return bad("robust VFF order must be at least 1".into());
        }
        if !(self.k_alpha * self.order as f64 > 1.0) || !(self.k_beta * self.order as f64 > 1.0) {
            return bad(format!(
                "K_α n and K_β n must exceed 1 (K_α = {}, K_β = {}, n = {})",
                self.k_alpha, self.k_beta, self.order
            ));
        }
        if !(self.xi >= 0.0) {
            return bad(format!("ξ must be nonnegative, got {}", self.xi));
        }
        if !(self.lambda_min > 0.0 && self.lambda_min <= self.lambda_max && self.lambda_max <= 1.0) {
            return bad(format!(
                "need 0 < λ_min <= λ_max <= 1, got [{}, {}]",
                self.lambda_min, self.lambda_max
            ));
        }
        Ok(())
    }

    /// `α = 1 − 1/(K_α n)`.
    pub fn alpha(&self) -> f64 {
        1.0 - 1.0 / (self.k_alpha * self.order as f64)
    }

    /// `β = 1 − 1/(K_β n)`.
    pub fn beta(&self) -> f64 {
        1.0 - 1.0 / (self.k_beta * self.order as f64)
    }
}

/// Running second-moment estimates of the robust VFF. Initialized to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustVffState {
    pub sigma_e_sq: f64,
    pub sigma_q_sq: f64,
    pub sigma_v_sq: f64,
    pub config: RobustVffConfig,
}

impl RobustVffState {
    pub fn new(config: RobustVffConfig) -> Result<Self> {
        config.validate()?;
        Ok(RobustVffState {
            sigma_e_sq: 1.0,
            sigma_q_sq: 1.0,
            sigma_v_sq: 1.0,
            config,
        })
    }

    /// Folds in the error `e = y_k − C_k x̂_k` and `q = x̂_kᵀ P_k x̂_k`, returning the
    /// new state and `λ_k`.
    ///
    /// The `q` moment squares `q` itself, i.e. it tracks `(x̂ᵀ P x̂)²`.
    pub fn update(&self, e: f64, q: f64) -> Result<(RobustVffState, f64)> {
        if !e.is_finite() {
            return Err(Error::StrategyParameter(format!("non-finite VFF error {e}")));
        }
        if !(q >= 0.0) || !q.is_finite() {
            return Err(Error::StrategyParameter(format!(
                "x̂ᵀPx̂ must be a nonnegative finite value, got {q}"
            )));
        }
        let cfg = self.config;
        let (alpha, beta) = (cfg.alpha(), cfg.beta());
        let e2 = e * e;
        let next = RobustVffState {
            sigma_e_sq: alpha * self.sigma_e_sq + (1.0 - alpha) * e2,
            sigma_q_sq: alpha * self.sigma_q_sq + (1.0 - alpha) * q * q,
            sigma_v_sq: beta * self.sigma_v_sq + (1.0 - beta) * e2,
            config: cfg,
        };
        let sigma_e = next.sigma_e_sq.sqrt();
        let sigma_q = next.sigma_q_sq.sqrt();
        let sigma_v = next.sigma_v_sq.sqrt();
        let lambda = if sigma_e <= sigma_v {
            cfg.lambda_max
        } else {
            let ratio = sigma_q * sigma_v / (cfg.xi + (sigma_e - sigma_v).abs());
            ratio.min(cfg.lambda_max).max(cfg.lambda_min)
        };
        Ok((next, lambda))
    }
}
