//! Kalman filtering with RLS-style forgetting in the prior covariance.
//!
//! The covariance prediction `P_{k+1|k} = A_k P_k A_kᵀ + Σ_k` is replaced by
//!
//! ```text
//! P_forget,k = P_k + Σ_forget,k
//! P_{k+1|k}  = A_k P_forget,k A_kᵀ + Σ_Kalman,k
//! ```
//!
//! with `Σ_forget,k` produced by a [`ForgettingStrategy`]. Everything else is the
//! standard two-step filter.
//!
//! Step ordering: when the forgetting rate is estimated online (robust VFF), `λ_k` is
//! computed first, from `e = y_k − C_k x̂_k` and `q = x̂_kᵀ P_k x̂_k` using the
//! posterior quantities of step `k`, before the time update. For `p > 1` the squared
//! error is taken as `‖e‖²`.

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::forgetting::{
    ForgettingInput, ForgettingStrategy, MatrixSchedule, RateSource, RobustVffState,
};
use crate::kalman::{check_step_inputs, measurement_update, FilterState, StepDiagnostics};
use crate::ltv::LtvModel;
use crate::spd::SpdMatrix;

/// Step-ordering statement recorded alongside experiment output.
pub const LAMBDA_ORDERING_NOTE: &str = "lambda_k is computed at the start of step k from \
the posterior estimate x_hat_k, P_k and the measurement consumed by step k \
(e = y - C x_hat_k, q = x_hat_k' P_k x_hat_k), before the time update; the CSV row \
k+1 reports the lambda_k that produced x_hat_{k+1}";

#[derive(Clone)]
pub struct AdaptiveKfConfig {
    pub strategy: ForgettingStrategy,
    pub sigma_kalman: MatrixSchedule,
    pub gamma: MatrixSchedule,
}

impl std::fmt::Debug for AdaptiveKfConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdaptiveKfConfig")
            .field("strategy", &self.strategy)
            .finish_non_exhaustive()
    }
}

impl AdaptiveKfConfig {
    /// Time-invariant `Σ_Kalman` and `Γ`.
    pub fn constant(strategy: ForgettingStrategy, sigma_kalman: SpdMatrix, gamma: SpdMatrix) -> Self {
        AdaptiveKfConfig {
            strategy,
            sigma_kalman: Arc::new(move |_| sigma_kalman.clone()),
            gamma: Arc::new(move |_| gamma.clone()),
        }
    }

    /// Initial estimator state when the strategy is driven by robust VFF.
    pub fn initial_vff(&self) -> Result<Option<RobustVffState>> {
        match &self.strategy {
            ForgettingStrategy::VariableRate(RateSource::RobustVff(cfg)) => {
                RobustVffState::new(*cfg).map(Some)
            }
            _ => Ok(None),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdaptiveStepOutput {
    pub state: FilterState,
    pub diagnostics: StepDiagnostics,
    pub sigma_forget: SpdMatrix,
    pub p_forget: SpdMatrix,
    pub lambda: Option<f64>,
    pub vff: Option<RobustVffState>,
}

/// One step of the adaptive filter.
///
/// `vff` carries the robust VFF state between steps; pass `None` on the first step
/// (it is then initialized from the strategy) or for strategies that do not use it.
pub fn adaptive_step(
    state: &FilterState,
    model: &LtvModel,
    config: &AdaptiveKfConfig,
    vff: Option<&RobustVffState>,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<AdaptiveStepOutput> {
    check_step_inputs(state, model, u, y)?;
    let k = state.step;
    let mats = model.matrices(k)?;
    let posterior_error = y - &mats.c * &state.x_hat;

    let (estimated_lambda, vff_next) = match &config.strategy {
        ForgettingStrategy::VariableRate(RateSource::RobustVff(cfg)) => {
            let current = match vff {
                Some(v) => *v,
                None => RobustVffState::new(*cfg)?,
            };
            let e = posterior_error.norm();
            let q = state.p.quadratic(&state.x_hat);
            let (next, lambda) = current.update(e, q)?;
            (Some(lambda), Some(next))
        }
        _ => (None, vff.copied()),
    };

    let input = ForgettingInput {
        step: k,
        p: &state.p,
        x_hat: &state.x_hat,
        c: &mats.c,
        innovation: &posterior_error,
        lambda: estimated_lambda,
    };
    let lambda = config.strategy.lambda(&input)?;
    let (sigma_forget, p_forget) = config.strategy.forget(&input)?;

    let sigma_kalman = (config.sigma_kalman)(k);
    let gamma = (config.gamma)(k);
    if sigma_kalman.dim() != model.state_dim() {
        return Err(Error::dimension("Σ_Kalman", model.state_dim(), sigma_kalman.dim()));
    }
    let p_prior = p_forget.congruence(&mats.a)?.add(&sigma_kalman)?;
    let x_prior = &mats.a * &state.x_hat + &mats.b * u;
    let (state, diagnostics) = measurement_update(k, x_prior, p_prior, &mats.c, &gamma, y)?;

    Ok(AdaptiveStepOutput {
        state,
        diagnostics,
        sigma_forget,
        p_forget,
        lambda,
        vff: vff_next,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forgetting::RobustVffConfig;
    use crate::kalman::{kf_two_step, NoiseSpec};
    use crate::kfls::{f_from_sigma, kfls_step};
    use crate::random;
    use nalgebra::{dmatrix, dvector, DMatrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn no_forgetting_equals_two_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random::random_nonsingular(&mut rng, 3, 0.7, 1.1);
        let b = random::gaussian_matrix(&mut rng, 3, 1);
        let c = random::gaussian_matrix(&mut rng, 2, 3);
        let model = LtvModel::constant(a, b, c).unwrap();
        let sigma = random::random_spd(&mut rng, 3, 0.01, 0.1);
        let gamma = random::random_spd(&mut rng, 2, 0.1, 1.0);
        let noise = NoiseSpec::new(sigma.clone(), gamma.clone()).unwrap();
        let cfg = AdaptiveKfConfig::constant(ForgettingStrategy::None, sigma, gamma);
        let init = FilterState::new(0, DVector::zeros(3), SpdMatrix::identity(3)).unwrap();
        let (mut plain, mut adapt) = (init.clone(), init);
        for _ in 0..50 {
            let u = random::gaussian_vector(&mut rng, 1);
            let y = random::gaussian_vector(&mut rng, 2);
            plain = kf_two_step(&plain, &model, &noise, &u, &y).unwrap().0;
            adapt = adaptive_step(&adapt, &model, &cfg, None, &u, &y).unwrap().state;
            assert!((&plain.x_hat - &adapt.x_hat).norm() <= 1e-12 * plain.x_hat.norm().max(1.0));
            assert!((plain.p.matrix() - adapt.p.matrix()).norm() <= 1e-12 * plain.p.matrix().norm());
        }
    }

    #[test]
    fn exponential_half_doubles_prior() {
        let model = LtvModel::constant(DMatrix::identity(2, 2), DMatrix::zeros(2, 1), dmatrix![1.0, 0.3]).unwrap();
        let p = SpdMatrix::new_pd(dmatrix![0.4, 0.1; 0.1, 0.2]).unwrap();
        let state = FilterState::new(0, dvector![0.2, 0.1], p.clone()).unwrap();
        let cfg = AdaptiveKfConfig::constant(
            ForgettingStrategy::Exponential { lambda: 0.5 },
            SpdMatrix::zeros(2),
            SpdMatrix::identity(1),
        );
        let out = adaptive_step(&state, &model, &cfg, None, &dvector![0.0], &dvector![1.0]).unwrap();
        assert_eq!(out.diagnostics.p_prior.matrix(), &(p.matrix() * 2.0));
        assert_eq!(out.lambda, Some(0.5));
    }

    #[test]
    fn first_vff_step_on_benchmark_model_is_plain_kf() {
        let a = dmatrix![0.9975, 0.09843; -0.04922, 0.9680];
        let b = dmatrix![4.948e-4; 9.843e-3];
        let model = LtvModel::constant(a, b, dmatrix![1.0, 1.0]).unwrap();
        let sigma = SpdMatrix::scaled_identity(2, 0.01).unwrap();
        let gamma = SpdMatrix::scaled_identity(1, 0.01).unwrap();
        let state = FilterState::new(0, dvector![0.0, 0.0], SpdMatrix::scaled_identity(2, 0.1).unwrap()).unwrap();
        let cfg = AdaptiveKfConfig::constant(
            ForgettingStrategy::VariableRate(RateSource::RobustVff(RobustVffConfig::standard(2))),
            sigma.clone(),
            gamma.clone(),
        );
        // e = y − 0 = 0.5 and q = 0, so σ_e² < σ_v² after one update
        let y = dvector![0.5];
        let out = adaptive_step(&state, &model, &cfg, None, &dvector![0.0], &y).unwrap();
        assert_eq!(out.lambda, Some(1.0));
        let noise = NoiseSpec::new(sigma, gamma).unwrap();
        let (plain, _) = kf_two_step(&state, &model, &noise, &dvector![0.0], &y).unwrap();
        assert!((&plain.x_hat - &out.state.x_hat).norm() < 1e-12);
        assert!((plain.p.matrix() - out.state.p.matrix()).norm() < 1e-12);
        assert!(out.vff.is_some());
    }

    #[test]
    fn gf_rls_equivalence_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = LtvModel::from_fn(2, 1, 1, {
            let cs: Vec<DMatrix<f64>> = (0..30).map(|_| random::gaussian_matrix(&mut rng, 1, 2)).collect();
            move |k| crate::ltv::SystemMatrices {
                a: DMatrix::identity(2, 2),
                b: DMatrix::zeros(2, 1),
                c: cs[k].clone(),
            }
        });
        let gamma = SpdMatrix::scaled_identity(1, 0.2).unwrap();
        let cfg = AdaptiveKfConfig::constant(
            ForgettingStrategy::Exponential { lambda: 0.8 },
            SpdMatrix::zeros(2),
            gamma.clone(),
        );
        let mut adapt = FilterState::new(0, dvector![0.0, 0.0], SpdMatrix::identity(2)).unwrap();
        let mut kfls = adapt.clone();
        for _ in 0..30 {
            let y = random::gaussian_vector(&mut rng, 1);
            let u = dvector![0.0];
            let out = adaptive_step(&adapt, &model, &cfg, None, &u, &y).unwrap();
            let f = f_from_sigma(&kfls.p, &out.sigma_forget, &DMatrix::identity(2, 2)).unwrap();
            kfls = kfls_step(&kfls, &model, &f, &gamma, &u, &y).unwrap();
            adapt = out.state;
            assert!((&adapt.x_hat - &kfls.x_hat).norm() < 1e-10 * adapt.x_hat.norm().max(1.0));
            assert!((adapt.p.matrix() - kfls.p.matrix()).norm() < 1e-10 * adapt.p.matrix().norm());
        }
    }

    #[test]
    fn forgetting_dominates_plain_prior() {
        let model =
            LtvModel::constant(dmatrix![0.9, 0.1; 0.0, 0.8], dmatrix![0.0; 1.0], dmatrix![1.0, 0.0]).unwrap();
        let state = FilterState::new(0, dvector![1.0, 2.0], SpdMatrix::scaled_identity(2, 0.3).unwrap()).unwrap();
        let sigma = SpdMatrix::scaled_identity(2, 0.01).unwrap();
        let gamma = SpdMatrix::identity(1);
        let cfg = AdaptiveKfConfig::constant(ForgettingStrategy::Exponential { lambda: 0.7 }, sigma.clone(), gamma.clone());
        let out = adaptive_step(&state, &model, &cfg, None, &dvector![0.0], &dvector![0.0]).unwrap();
        let noise = NoiseSpec::new(sigma, gamma).unwrap();
        let (_, plain) = kf_two_step(&state, &model, &noise, &dvector![0.0], &dvector![0.0]).unwrap();
        let diff = out.diagnostics.p_prior.matrix() - plain.p_prior.matrix();
        assert!(crate::spd::check_definiteness(&crate::spd::symmetrize(&diff), 1e-9).unwrap().is_psd());
    }
}
