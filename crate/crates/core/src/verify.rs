//! Randomized self-checks of the filter identities, runnable from the command line.
//!
//! Each check draws seeded random problems, compares two independent routes to the
//! same quantity and reports the largest relative deviation seen.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adaptive::{adaptive_step, AdaptiveKfConfig};
use crate::error::{Error, Result};
use crate::forgetting::{ForgettingStrategy, RateSource};
use crate::kalman::{kf_one_step, kf_two_step, FilterState, NoiseSpec};
use crate::kfls::{f_from_sigma, kfls_step, sigma_from_f, KflsHistory};
use crate::ltv::{InputHistory, LtvModel, SystemMatrices};
use crate::random::{gaussian_matrix, gaussian_vector, random_nonsingular, random_orthogonal, random_spd, scaled_forgetting};
use crate::spd::{check_definiteness_scaled, Definiteness, SpdMatrix};

pub const DEFAULT_SEED: u64 = 0x5eed;

/// Named groups of checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    /// Recursive minimizer against the batch minimizer of the cost.
    Theorem1,
    /// One-step against two-step Kalman filter, and the filter/forgetting
    /// correspondence.
    Equivalence,
    /// The eight forgetting strategies against their RLS information recursions.
    Table1,
    /// Definiteness of `F` against definiteness of the derived `Σ`.
    Prop1,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 5] = ["theorem1", "equivalence", "table1", "prop1", "all"];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Theorem1 => "theorem1",
            Suite::Equivalence => "equivalence",
            Suite::Table1 => "table1",
            Suite::Prop1 => "prop1",
            Suite::All => "all",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theorem1" => Ok(Suite::Theorem1),
            "equivalence" => Ok(Suite::Equivalence),
            "table1" => Ok(Suite::Table1),
            "prop1" => Ok(Suite::Prop1),
            "all" => Ok(Suite::All),
            other => Err(Error::Config(format!(
                "unknown suite {other:?}; expected one of {}",
                Suite::NAMES.join(", ")
            ))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub instances: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    /// Descriptions of the instances that exceeded the tolerance.
    pub failures: Vec<String>,
}

impl CheckResult {
    fn new(name: &str, tolerance: f64) -> Self {
        CheckResult {
            name: name.to_string(),
            instances: 0,
            max_deviation: 0.0,
            tolerance,
            failures: Vec::new(),
        }
    }

    fn record(&mut self, deviation: f64, describe: impl FnOnce() -> String) {
        self.instances += 1;
        if deviation.is_nan() || deviation > self.max_deviation {
            self.max_deviation = if deviation.is_nan() { f64::INFINITY } else { deviation };
        }
        if !(deviation <= self.tolerance) {
            self.failures.push(format!("{} (deviation {deviation:e})", describe()));
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.instances > 0
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: max deviation {:.3e} (tol {:.0e}, {} instances)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.max_deviation,
            self.tolerance,
            self.instances
        )
    }
}

/// `‖a − b‖ / max(‖b‖, floor)`.
pub fn relative_deviation(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    (a - b).norm() / b.norm().max(floor)
}

fn rel_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<CheckResult>> {
    Ok(match suite {
        Suite::Theorem1 => recursion_vs_batch(seed, 200, 15)?,
        Suite::Equivalence => {
            let mut out = vec![one_step_vs_two_step(seed, 200)?];
            out.extend(noise_forgetting_correspondence(seed, 100)?);
            out
        }
        Suite::Table1 => forgetting_strategies(seed, 100)?,
        Suite::Prop1 => vec![definiteness_agreement(seed, 200)?],
        Suite::All => {
            let mut out = Vec::new();
            for s in [Suite::Theorem1, Suite::Equivalence, Suite::Table1, Suite::Prop1] {
                out.extend(run_suite(s, seed)?);
            }
            out
        }
    })
}

/// A random KFLS problem together with the recursive chain that solves it.
#[derive(Debug, Clone)]
pub struct KflsInstance {
    pub history: KflsHistory,
    /// `states[i]` holds `x̂_i, P_i`; `states.len() == steps + 1`.
    pub states: Vec<FilterState>,
}

/// Draws an `n`-state, `p`-output, single-input time-varying problem and runs
/// `steps` recursive steps on it. Each `F_i` is a random PSD matrix of random rank
/// whose largest eigenvalue is below `0.9 λ_min(P_i⁻¹)`, so the forgetting
/// condition holds by construction.
pub fn random_kfls_instance<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    p: usize,
    steps: usize,
) -> Result<KflsInstance> {
    let table: Vec<SystemMatrices> = (0..steps.max(1))
        .map(|_| SystemMatrices {
            a: random_nonsingular(rng, n, 0.8, 1.25),
            b: gaussian_matrix(rng, n, 1) * 0.5,
            c: gaussian_matrix(rng, p, n),
        })
        .collect();
    let model = LtvModel::from_table(table)?;
    let inputs = InputHistory::new(1, (0..steps).map(|_| gaussian_vector(rng, 1)).collect())?;
    let measurements: Vec<_> = (0..steps).map(|_| gaussian_vector(rng, p)).collect();
    let gammas: Vec<_> = (0..steps).map(|_| random_spd(rng, p, 0.5, 2.0)).collect();
    let x0 = gaussian_vector(rng, n);
    let p0 = random_spd(rng, n, 0.5, 2.0);

    let mut states = vec![FilterState::new(0, x0.clone(), p0.clone())?];
    let mut forgetting = Vec::with_capacity(steps);
    for i in 0..steps {
        let current = &states[i];
        let rank = rng.random_range(0..=n);
        let fraction = rng.random_range(0.0..0.9);
        let f = scaled_forgetting(rng, &current.p.inverse()?, rank, fraction);
        let next = kfls_step(current, &model, &f, &gammas[i], inputs.get(i)?, &measurements[i])?;
        forgetting.push(f);
        states.push(next);
    }
    Ok(KflsInstance {
        history: KflsHistory {
            model,
            inputs,
            measurements,
            gammas,
            forgetting,
            x0,
            p0,
        },
        states,
    })
}

/// Recursive estimate and information matrix against the batch minimizer and the
/// explicit `H_k` sum.
pub fn recursion_vs_batch(seed: u64, instances: usize, max_steps: usize) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut est = CheckResult::new("recursive estimate vs batch minimizer", 1e-8);
    let mut info = CheckResult::new("recursive information vs batch H", 1e-9);
    for idx in 0..instances {
        let n = 1 + idx % 3;
        let p = 1 + (idx / 3) % 2;
        let steps = rng.random_range(1..=max_steps.max(1));
        let inst = random_kfls_instance(&mut rng, n, p, steps)?;
        let k = steps - 1;
        let last = &inst.states[steps];
        let q = inst.history.batch_quadratic(k)?;
        let batch_x = q.minimizer()?;
        let describe = || format!("instance {idx}: n={n}, p={p}, k={k}");
        est.record(rel_vec(&last.x_hat, &batch_x), describe);
        let rec_info = last.p.inverse()?.into_matrix();
        info.record(relative_deviation(&rec_info, &q.h, 1e-12), describe);
    }
    Ok(vec![est, info])
}

fn random_filter_problem<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    p: usize,
) -> Result<(LtvModel, FilterState, NoiseSpec)> {
    let model = LtvModel::constant(
        random_nonsingular(rng, n, 0.5, 2.0),
        gaussian_matrix(rng, n, 1),
        gaussian_matrix(rng, p, n),
    )?;
    let state = FilterState::new(0, gaussian_vector(rng, n), random_spd(rng, n, 0.1, 10.0))?;
    let noise = NoiseSpec::new(random_spd(rng, n, 0.01, 1.0), random_spd(rng, p, 0.1, 2.0))?;
    Ok((model, state, noise))
}

/// Information form against predict/update form on independent random steps.
pub fn one_step_vs_two_step(seed: u64, steps: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0e51);
    let mut check = CheckResult::new("one-step vs two-step Kalman filter", 1e-9);
    for idx in 0..steps {
        let n = 1 + idx % 3;
        let p = 1 + (idx / 3) % 2;
        let (model, state, noise) = random_filter_problem(&mut rng, n, p)?;
        let u = gaussian_vector(&mut rng, 1);
        let y = gaussian_vector(&mut rng, p);
        let one = kf_one_step(&state, &model, &noise, &u, &y)?;
        let (two, _) = kf_two_step(&state, &model, &noise, &u, &y)?;
        let dev = rel_vec(&one.x_hat, &two.x_hat)
            .max(relative_deviation(one.p.matrix(), two.p.matrix(), 1e-12));
        check.record(dev, || format!("step {idx}: n={n}, p={p}"));
    }
    Ok(check)
}

/// The recursive minimizer with `F = f_from_sigma(Σ)` against the one-step filter
/// along a chain, and the `Σ → F → Σ` round trip.
pub fn noise_forgetting_correspondence(seed: u64, steps: usize) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc02);
    let mut chain = CheckResult::new("recursive minimizer with F(Σ) vs one-step filter", 1e-10);
    let mut round = CheckResult::new("Σ round trip through F", 1e-9);
    for n in 1..=3 {
        let p = 1 + n % 2;
        let (model, mut state, mut noise) = random_filter_problem(&mut rng, n, p)?;
        for k in 0..steps {
            noise.sigma = random_spd(&mut rng, n, 0.01, 1.0);
            let a = model.a(k)?;
            let f = f_from_sigma(&state.p, &noise.sigma, &a)?;
            let back = sigma_from_f(&state.p, &f, &a)?;
            round.record(
                relative_deviation(back.matrix(), noise.sigma.matrix(), 1e-12),
                || format!("n={n}, step {k}"),
            );
            let u = gaussian_vector(&mut rng, 1);
            let y = gaussian_vector(&mut rng, p);
            let via_f = kfls_step(&state, &model, &f, &noise.gamma, &u, &y)?;
            let kf = kf_one_step(&state, &model, &noise, &u, &y)?;
            let dev = rel_vec(&via_f.x_hat, &kf.x_hat)
                .max(relative_deviation(via_f.p.matrix(), kf.p.matrix(), 1e-12));
            chain.record(dev, || format!("n={n}, p={p}, step {k}"));
            state = kf;
        }
    }
    Ok(vec![chain, round])
}

/// Textbook RLS form of each strategy's information update, `P_forget⁻¹` given
/// `P_k⁻¹` (rows 1 to 6); `None` when the strategy has no closed form here.
fn textbook_forget_info(
    strategy_idx: usize,
    k: usize,
    p_inv: &DMatrix<f64>,
    lambda_k: f64,
    mu: &dyn Fn(usize) -> f64,
    p_inf_inv: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    match strategy_idx {
        0 => Some(p_inv.clone()),
        1 | 2 => Some(p_inv * lambda_k),
        3 => {
            let prev = if k == 0 { 1.0 } else { mu(k - 1) };
            Some(p_inv * ((1.0 - mu(k)) * prev / mu(k)))
        }
        4 => Some(p_inv * lambda_k + p_inf_inv * (1.0 - lambda_k)),
        5 => Some(p_inf_inv.clone()),
        _ => None,
    }
}

/// Runs each forgetting strategy through the adaptive filter with `A = I`, `B = 0`,
/// `Σ_Kalman = 0` and time-varying random `C_k`, comparing against (a) the RLS
/// information recursion `P_{k+1}⁻¹ = P_forget⁻¹ + CᵀΓ⁻¹C` with the textbook
/// `P_forget⁻¹` and (b) the recursive minimizer with `F = P_k⁻¹ − P_forget⁻¹`.
/// Variable-direction forgetting only yields a PSD `Σ` for small enough `P_k`, so
/// its chain redraws `P_k` in that range before every step.
pub fn forgetting_strategies(seed: u64, steps: usize) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7ab1e);
    let n = 3;
    let p = 1;
    let mut textbook = CheckResult::new("strategies vs RLS information recursion", 1e-10);
    let mut gf = CheckResult::new("strategies vs recursive minimizer", 1e-10);
    let mut ef = CheckResult::new("exponential forgetting information recursion", 1e-10);
    let mut reset = CheckResult::new("covariance resetting P_forget = P_∞", 0.0);

    let c_table: Vec<DMatrix<f64>> = (0..steps).map(|_| gaussian_matrix(&mut rng, p, n)).collect();
    let model = LtvModel::from_table(
        c_table
            .iter()
            .map(|c| SystemMatrices {
                a: DMatrix::identity(n, n),
                b: DMatrix::zeros(n, 1),
                c: c.clone(),
            })
            .collect(),
    )?;
    let ys: Vec<_> = (0..steps).map(|_| gaussian_vector(&mut rng, p)).collect();
    let gamma = SpdMatrix::scaled_identity(p, 0.5)?;
    let gamma_inv = gamma.inverse()?.into_matrix();
    let u = DVector::zeros(1);
    let p0 = random_spd(&mut rng, n, 0.2, 0.9);
    let p_inf = random_spd(&mut rng, n, 1.0, 2.0);
    let p_inf_inv = p_inf.inverse()?.into_matrix();
    let x0 = gaussian_vector(&mut rng, n);

    let mu_values = [0.6, 0.5, 0.55];
    let mu = move |k: usize| mu_values[k % 3];
    let rate = |k: usize| 0.8 + 0.2 * ((k % 5) as f64) / 4.0;
    let q = random_orthogonal(&mut rng, n);
    let lam = SpdMatrix::new_pd(&q * DMatrix::from_diagonal(&DVector::from_vec(vec![0.7, 0.85, 1.0])) * q.transpose())?;

    let strategies: Vec<(&str, ForgettingStrategy)> = vec![
        ("none", ForgettingStrategy::None),
        ("exponential", ForgettingStrategy::Exponential { lambda: 0.9 }),
        (
            "variable rate",
            ForgettingStrategy::VariableRate(RateSource::Schedule(std::sync::Arc::new(rate))),
        ),
        ("data dependent", ForgettingStrategy::DataDependent { mu: std::sync::Arc::new(mu) }),
        (
            "exponential resetting",
            ForgettingStrategy::ExponentialResetting { lambda: 0.9, p_inf: p_inf.clone() },
        ),
        (
            "covariance resetting",
            ForgettingStrategy::CovarianceResetting {
                p_inf: p_inf.clone(),
                criterion: std::sync::Arc::new(|input| input.step % 4 == 3),
            },
        ),
        ("directional", ForgettingStrategy::Directional { lambda: 0.8 }),
        (
            "variable direction",
            ForgettingStrategy::VariableDirection {
                lambda_matrix: std::sync::Arc::new(move |_| lam.clone()),
            },
        ),
    ];

    for (idx, (name, strategy)) in strategies.into_iter().enumerate() {
        let config = AdaptiveKfConfig::constant(strategy.clone(), SpdMatrix::zeros(n), gamma.clone());
        let mut state = FilterState::new(0, x0.clone(), p0.clone())?;
        for k in 0..steps {
            if idx == 7 {
                // keep P where Λ⁻¹P⁻¹Λ⁻¹ − P stays PSD
                state.p = random_spd(&mut rng, n, 0.2, 0.9);
            }
            let out = adaptive_step(&state, &model, &config, None, &u, &ys[k])?;
            let c = &c_table[k];
            let p_inv = state.p.inverse()?.into_matrix();
            let forget_info = out.p_forget.inverse()?.into_matrix();

            let lambda_k = out.lambda.unwrap_or(1.0);
            let reset_now = idx == 5 && k % 4 == 3;
            let closed = if idx == 5 && !reset_now {
                Some(p_inv.clone())
            } else {
                textbook_forget_info(idx, k, &p_inv, lambda_k, &mu, &p_inf_inv)
            };
            if let Some(forget_ref) = closed {
                let next_ref = forget_ref + c.transpose() * &gamma_inv * c;
                let got = out.state.p.inverse()?.into_matrix();
                textbook.record(relative_deviation(&got, &next_ref, 1e-12), || {
                    format!("{name}, step {k}")
                });
            }

            let f = p_inv.clone() - forget_info;
            let via_f = kfls_step(&state, &model, &f, &gamma, &u, &ys[k])?;
            let dev = rel_vec(&via_f.x_hat, &out.state.x_hat)
                .max(relative_deviation(via_f.p.matrix(), out.state.p.matrix(), 1e-12));
            gf.record(dev, || format!("{name}, step {k}"));
            state = out.state;
        }
    }

    for lambda in [0.5, 0.9, 1.0] {
        let config = AdaptiveKfConfig::constant(
            ForgettingStrategy::Exponential { lambda },
            SpdMatrix::zeros(n),
            gamma.clone(),
        );
        let mut state = FilterState::new(0, x0.clone(), p0.clone())?;
        let mut info = p0.inverse()?.into_matrix();
        let mut theta = x0.clone();
        for k in 0..steps {
            let c = &c_table[k];
            info = &info * lambda + c.transpose() * &gamma_inv * c;
            let p_ref = info.clone().try_inverse().ok_or(Error::Singular("RLS information"))?;
            theta = &theta + &p_ref * c.transpose() * &gamma_inv * (&ys[k] - c * &theta);
            state = adaptive_step(&state, &model, &config, None, &u, &ys[k])?.state;
            let got_info = state.p.inverse()?.into_matrix();
            let dev = relative_deviation(&got_info, &info, 1e-12).max(rel_vec(&state.x_hat, &theta));
            ef.record(dev, || format!("λ={lambda}, step {k}"));
        }
    }

    let always = ForgettingStrategy::CovarianceResetting {
        p_inf: p_inf.clone(),
        criterion: std::sync::Arc::new(|_| true),
    };
    let config = AdaptiveKfConfig::constant(always, SpdMatrix::zeros(n), gamma.clone());
    let mut state = FilterState::new(0, x0.clone(), p0.clone())?;
    for k in 0..steps.min(20) {
        let out = adaptive_step(&state, &model, &config, None, &u, &ys[k])?;
        reset.record(relative_deviation(out.p_forget.matrix(), p_inf.matrix(), 1e-12), || {
            format!("step {k}")
        });
        state = out.state;
    }

    Ok(vec![textbook, gf, ef, reset])
}

fn class(m: &DMatrix<f64>, scale: f64) -> Result<Definiteness> {
    check_definiteness_scaled(m, 1e-9, scale)
}

/// For random `P` and `F` of every inertia, the definiteness class of `F` matches
/// that of `Σ = A[(P⁻¹ − F)⁻¹ − P]Aᵀ`. Indefinite `F` is evaluated with the raw
/// formula since [`sigma_from_f`] rejects it.
pub fn definiteness_agreement(seed: u64, draws: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9201);
    let mut check = CheckResult::new("definiteness of F vs Σ", 0.0);
    for idx in 0..draws {
        let n = 1 + idx % 3;
        let p = random_spd(&mut rng, n, 0.2, 5.0);
        let p_inv = p.inverse()?.into_matrix();
        let a = random_nonsingular(&mut rng, n, 0.5, 2.0);
        let pmin = p_inv.clone().symmetric_eigen().eigenvalues.min();
        // eigenvalues of F: zero, positive or negative, bounded away from zero
        let diag = DVector::from_fn(n, |_, _| match rng.random_range(0..3) {
            0 => 0.0,
            1 => rng.random_range(0.1..0.9) * pmin,
            _ => -rng.random_range(0.1..0.9) * pmin,
        });
        let v = random_orthogonal(&mut rng, n);
        let f = crate::spd::symmetrize(&(&v * DMatrix::from_diagonal(&diag) * v.transpose()));
        let f_class = class(&f, p_inv.diagonal().max())?;
        let sigma = if f_class.is_psd() {
            let s = sigma_from_f(&p, &f, &a)?;
            s.into_matrix()
        } else {
            if sigma_from_f(&p, &f, &a).is_ok() {
                check.record(1.0, || format!("draw {idx}: indefinite F accepted"));
                continue;
            }
            let retained = (p_inv.clone() - &f)
                .try_inverse()
                .ok_or(Error::Singular("P⁻¹ − F"))?;
            crate::spd::symmetrize(&(&a * (retained - p.matrix()) * a.transpose()))
        };
        let s_class = class(&sigma, (&a * p.matrix() * a.transpose()).diagonal().max())?;
        let mismatch = if f_class == s_class { 0.0 } else { 1.0 };
        check.record(mismatch, || {
            format!("draw {idx}: n={n}, F {f_class:?}, Σ {s_class:?}, eig(F)={diag:?}")
        });
    }
    Ok(check)
}
