//! The wall-collision comparison: simulate the plant, measure it, and run a plain
//! Kalman filter and adaptive filters over the same data.
//!
//! Alignment: row `k` holds the truth at `t_k = k T_s` and the measurement `y_k`
//! taken at `t_k`. Row 0 carries the prior `x̂_0, P_0`. Filter step `j` consumes
//! `u_j = F(t_j)` and `y_{j+1}` and produces the estimate stored in row `j + 1`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::adaptive::{adaptive_step, AdaptiveKfConfig};
use crate::error::{Error, Result};
use crate::forgetting::{ForgettingStrategy, RateSource, RobustVffConfig, RobustVffState};
use crate::kalman::{kf_two_step, FilterState, NoiseSpec};
use crate::ltv::LtvModel;
use crate::msd::{measure, simulate_truth, MsdParams, Trajectory};
use crate::spd::SpdMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub mass_kg: f64,
    pub spring_n_per_m: f64,
    pub damping_n_s_per_m: f64,
    pub wall_position_m: f64,
    pub force_amplitude_n: f64,
    pub force_frequency_rad_per_s: f64,
    pub z0_m: f64,
    pub zdot0_m_per_s: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        let p = MsdParams::default();
        PlantConfig {
            mass_kg: p.mass,
            spring_n_per_m: p.spring,
            damping_n_s_per_m: p.damping,
            wall_position_m: p.wall_position,
            force_amplitude_n: p.force_amplitude,
            force_frequency_rad_per_s: p.force_frequency,
            z0_m: p.z0,
            zdot0_m_per_s: p.zdot0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub x_hat: Vec<f64>,
    pub p0: Vec<Vec<f64>>,
}

/// Forgetting strategies expressible in a config file. Schedules are given as
/// lists indexed by step; the last entry is held beyond the end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForgettingConfig {
    None,
    Exponential {
        lambda: f64,
    },
    VariableRate {
        lambdas: Vec<f64>,
    },
    RobustVff {
        k_alpha: f64,
        k_beta: f64,
        xi: f64,
        lambda_min: f64,
        lambda_max: f64,
    },
    DataDependent {
        mu: Vec<f64>,
    },
    ExponentialResetting {
        lambda: f64,
        p_inf: Vec<Vec<f64>>,
    },
    /// Resets to `P_∞` whenever `|y − C x̂|` exceeds the threshold.
    CovarianceResetting {
        p_inf: Vec<Vec<f64>>,
        innovation_threshold: f64,
    },
    Directional {
        lambda: f64,
    },
    /// Constant diagonal `Λ`.
    VariableDirection {
        lambda_diagonal: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FilterConfig {
    Kalman {
        name: String,
        sigma: Vec<Vec<f64>>,
    },
    Adaptive {
        name: String,
        sigma_kalman: Vec<Vec<f64>>,
        forgetting: ForgettingConfig,
    },
}

impl FilterConfig {
    pub fn name(&self) -> &str {
        match self {
            FilterConfig::Kalman { name, .. } | FilterConfig::Adaptive { name, .. } => name,
        }
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self, FilterConfig::Adaptive { .. })
    }
}

fn default_substep() -> f64 {
    1e-3
}

fn default_window() -> f64 {
    2.0
}

fn default_seeds() -> Vec<u64> {
    (0..20).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantConfig,
    pub ts_seconds: f64,
    pub horizon_seconds: f64,
    #[serde(default = "default_substep")]
    pub substep_seconds: f64,
    pub measurement_variance: f64,
    pub initial: InitialConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_window")]
    pub post_collision_window_seconds: f64,
    pub filters: Vec<FilterConfig>,
}

impl ExperimentConfig {
    /// The benchmark setup: `P_0 = 0.1 I`, `x̂_0 = 0`, `Γ = 0.01`, `Σ = 0.01 I`, and
    /// a robust-VFF adaptive filter with `K_α = 2`, `K_β = 10`, `ξ = 1e-6`,
    /// `λ ∈ [0.5, 1]`.
    pub fn benchmark() -> Self {
        let diag = |v: f64| vec![vec![v, 0.0], vec![0.0, v]];
        ExperimentConfig {
            plant: PlantConfig::default(),
            ts_seconds: 0.1,
            horizon_seconds: 20.0,
            substep_seconds: default_substep(),
            measurement_variance: 0.01,
            initial: InitialConfig {
                x_hat: vec![0.0, 0.0],
                p0: diag(0.1),
            },
            seeds: default_seeds(),
            post_collision_window_seconds: default_window(),
            filters: vec![
                FilterConfig::Kalman {
                    name: "kf".into(),
                    sigma: diag(0.01),
                },
                FilterConfig::Adaptive {
                    name: "kfstar".into(),
                    sigma_kalman: diag(0.01),
                    forgetting: ForgettingConfig::RobustVff {
                        k_alpha: 2.0,
                        k_beta: 10.0,
                        xi: 1e-6,
                        lambda_min: 0.5,
                        lambda_max: 1.0,
                    },
                },
            ],
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn msd_params(&self) -> MsdParams {
        let p = &self.plant;
        MsdParams {
            mass: p.mass_kg,
            spring: p.spring_n_per_m,
            damping: p.damping_n_s_per_m,
            wall_position: p.wall_position_m,
            force_amplitude: p.force_amplitude_n,
            force_frequency: p.force_frequency_rad_per_s,
            z0: p.z0_m,
            zdot0: p.zdot0_m_per_s,
            ts: self.ts_seconds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.msd_params()
            .validate()
            .map_err(|e| Error::Config(format!("plant: {e}")))?;
        if !(self.horizon_seconds > 0.0) {
            return Err(Error::Config("horizon_seconds must be positive".into()));
        }
        if !(self.substep_seconds > 0.0 && self.substep_seconds <= self.ts_seconds) {
            return Err(Error::Config(
                "substep_seconds must lie in (0, ts_seconds]".into(),
            ));
        }
        if !(self.measurement_variance > 0.0) {
            return Err(Error::Config("measurement_variance must be positive".into()));
        }
        if !(self.post_collision_window_seconds >= 0.0) {
            return Err(Error::Config(
                "post_collision_window_seconds must be nonnegative".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.filters.is_empty() {
            return Err(Error::Config("filters must not be empty".into()));
        }
        let mut names: Vec<&str> = self.filters.iter().map(|f| f.name()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("filter names must be unique".into()));
        }
        self.initial_state()?;
        for f in &self.filters {
            build_filter(f, 2)?;
        }
        Ok(())
    }

    pub fn initial_state(&self) -> Result<FilterState> {
        initial_state(&self.initial.x_hat, &self.initial.p0, 2, "initial")
    }

    pub fn samples(&self) -> usize {
        (self.horizon_seconds / self.ts_seconds).round() as usize
    }
}

pub fn initial_state(x: &[f64], p0: &[Vec<f64>], n: usize, ctx: &str) -> Result<FilterState> {
    if x.len() != n {
        return Err(Error::Config(format!(
            "{ctx}.x_hat: expected {n} entries, got {}",
            x.len()
        )));
    }
    let p = spd_field(p0, n, &format!("{ctx}.p0"), true)?;
    FilterState::new(0, DVector::from_column_slice(x), p)
}

/// Parses a row-major square matrix field.
pub fn matrix_field(rows: &[Vec<f64>], n: usize, field: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!("{field}: expected a {n}x{n} matrix")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{field}: entries must be finite")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn spd_field(rows: &[Vec<f64>], n: usize, field: &str, strict: bool) -> Result<SpdMatrix> {
    let m = matrix_field(rows, n, field)?;
    let out = if strict {
        SpdMatrix::new_pd(m)
    } else {
        SpdMatrix::new_psd(m)
    };
    out.map_err(|e| Error::Config(format!("{field}: {e}")))
}

fn schedule(values: &[f64], field: &str) -> Result<Arc<dyn Fn(usize) -> f64 + Send + Sync>> {
    if values.is_empty() {
        return Err(Error::Config(format!("{field}: schedule must not be empty")));
    }
    let values = values.to_vec();
    Ok(Arc::new(move |k| values[k.min(values.len() - 1)]))
}

/// A filter ready to run.
#[derive(Debug, Clone)]
pub enum Filter {
    Kalman { name: String, sigma: SpdMatrix },
    Adaptive { name: String, sigma_kalman: SpdMatrix, strategy: ForgettingStrategy },
}

/// Builds a filter for an `n`-state model. Strategy parameters are
/// range-checked here so bad configs fail before any data is processed.
pub fn build_filter(cfg: &FilterConfig, n: usize) -> Result<Filter> {
    let name = cfg.name().to_string();
    match cfg {
        FilterConfig::Kalman { sigma, .. } => Ok(Filter::Kalman {
            sigma: spd_field(sigma, n, &format!("filters[{name}].sigma"), false)?,
            name,
        }),
        FilterConfig::Adaptive {
            sigma_kalman,
            forgetting,
            ..
        } => {
            let ctx = format!("filters[{name}].forgetting");
            let bad = |msg: String| Error::Config(format!("{ctx}: {msg}"));
            let lambda_ok = |l: f64| {
                if l > 0.0 && l <= 1.0 {
                    Ok(())
                } else {
                    Err(bad(format!("lambda must lie in (0, 1], got {l}")))
                }
            };
            let strategy = match forgetting {
                ForgettingConfig::None => ForgettingStrategy::None,
                ForgettingConfig::Exponential { lambda } => {
                    lambda_ok(*lambda)?;
                    ForgettingStrategy::Exponential { lambda: *lambda }
                }
                ForgettingConfig::VariableRate { lambdas } => {
                    for l in lambdas {
                        lambda_ok(*l)?;
                    }
                    ForgettingStrategy::VariableRate(RateSource::Schedule(schedule(lambdas, &ctx)?))
                }
                ForgettingConfig::RobustVff {
                    k_alpha,
                    k_beta,
                    xi,
                    lambda_min,
                    lambda_max,
                } => {
                    let vff = RobustVffConfig {
                        k_alpha: *k_alpha,
                        k_beta: *k_beta,
                        xi: *xi,
                        lambda_min: *lambda_min,
                        lambda_max: *lambda_max,
                        order: n,
                    };
                    vff.validate().map_err(|e| bad(e.to_string()))?;
                    ForgettingStrategy::VariableRate(RateSource::RobustVff(vff))
                }
                ForgettingConfig::DataDependent { mu } => {
                    if let Some(m) = mu.iter().find(|m| !(0.0 < **m && **m < 1.0)) {
                        return Err(bad(format!("mu must lie in (0, 1), got {m}")));
                    }
                    ForgettingStrategy::DataDependent {
                        mu: schedule(mu, &ctx)?,
                    }
                }
                ForgettingConfig::ExponentialResetting { lambda, p_inf } => {
                    lambda_ok(*lambda)?;
                    ForgettingStrategy::ExponentialResetting {
                        lambda: *lambda,
                        p_inf: spd_field(p_inf, n, &format!("{ctx}.p_inf"), true)?,
                    }
                }
                ForgettingConfig::CovarianceResetting {
                    p_inf,
                    innovation_threshold,
                } => {
                    if !(*innovation_threshold >= 0.0) {
                        return Err(bad("innovation_threshold must be nonnegative".into()));
                    }
                    let threshold = *innovation_threshold;
                    ForgettingStrategy::CovarianceResetting {
                        p_inf: spd_field(p_inf, n, &format!("{ctx}.p_inf"), true)?,
                        criterion: Arc::new(move |input| input.innovation.norm() > threshold),
                    }
                }
                ForgettingConfig::Directional { lambda } => {
                    lambda_ok(*lambda)?;
                    ForgettingStrategy::Directional { lambda: *lambda }
                }
                ForgettingConfig::VariableDirection { lambda_diagonal } => {
                    if lambda_diagonal.len() != n
                        || lambda_diagonal.iter().any(|l| !(*l > 0.0 && *l <= 1.0))
                    {
                        return Err(bad(format!(
                            "lambda_diagonal needs {n} entries in (0, 1]"
                        )));
                    }
                    let lam = SpdMatrix::from_diagonal(lambda_diagonal)?;
                    ForgettingStrategy::VariableDirection {
                        lambda_matrix: Arc::new(move |_| lam.clone()),
                    }
                }
            };
            Ok(Filter::Adaptive {
                sigma_kalman: spd_field(sigma_kalman, n, &format!("filters[{name}].sigma_kalman"), false)?,
                name,
                strategy,
            })
        }
    }
}

impl Filter {
    pub fn name(&self) -> &str {
        match self {
            Filter::Kalman { name, .. } | Filter::Adaptive { name, .. } => name,
        }
    }
}

/// Output of one filter over a data record: rows `0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun {
    pub name: String,
    pub adaptive: bool,
    pub estimates: Vec<DVector<f64>>,
    /// Diagonal of `P` per row.
    pub variances: Vec<DVector<f64>>,
    /// `λ` that produced each row (`None` for row 0 and for fixed-rate filters).
    pub lambdas: Vec<Option<f64>>,
    /// Whether every posterior `P` passed the Cholesky test.
    pub p_positive_definite: bool,
}

/// Runs `filter` over `measurements[1..]` with `inputs[j]` driving step `j`.
///
/// `measurements` and `inputs` both have one entry per row; `measurements[0]` and
/// the last input are unused.
pub fn run_filter(
    filter: &Filter,
    model: &LtvModel,
    gamma: &SpdMatrix,
    initial: &FilterState,
    inputs: &[DVector<f64>],
    measurements: &[DVector<f64>],
) -> Result<FilterRun> {
    if inputs.len() != measurements.len() {
        return Err(Error::Data(format!(
            "{} inputs for {} measurements",
            inputs.len(),
            measurements.len()
        )));
    }
    if measurements.is_empty() {
        return Err(Error::Data("no rows".into()));
    }
    let rows = measurements.len();
    let mut estimates = Vec::with_capacity(rows);
    let mut variances = Vec::with_capacity(rows);
    let mut lambdas = Vec::with_capacity(rows);
    let mut state = initial.clone();
    let mut pd = state.p.is_positive_definite();
    estimates.push(state.x_hat.clone());
    variances.push(state.p.matrix().diagonal());
    lambdas.push(None);

    let mut vff: Option<RobustVffState> = None;
    let adaptive_cfg = match filter {
        Filter::Adaptive {
            sigma_kalman,
            strategy,
            ..
        } => Some(AdaptiveKfConfig::constant(
            strategy.clone(),
            sigma_kalman.clone(),
            gamma.clone(),
        )),
        Filter::Kalman { .. } => None,
    };
    let noise = match filter {
        Filter::Kalman { sigma, .. } => Some(NoiseSpec::new(sigma.clone(), gamma.clone())?),
        Filter::Adaptive { .. } => None,
    };

    for j in 0..rows - 1 {
        let (u, y) = (&inputs[j], &measurements[j + 1]);
        let lambda = if let Some(cfg) = &adaptive_cfg {
            let out = adaptive_step(&state, model, cfg, vff.as_ref(), u, y)?;
            vff = out.vff;
            state = out.state;
            out.lambda
        } else {
            let noise = noise.as_ref().expect("plain filter has noise settings");
            state = kf_two_step(&state, model, noise, u, y)?.0;
            None
        };
        pd &= state.p.is_positive_definite();
        if state.x_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                step: j,
                detail: format!("{} produced a non-finite estimate", filter.name()),
            });
        }
        estimates.push(state.x_hat.clone());
        variances.push(state.p.matrix().diagonal());
        lambdas.push(lambda);
    }

    Ok(FilterRun {
        name: filter.name().to_string(),
        adaptive: adaptive_cfg.is_some(),
        estimates,
        variances,
        lambdas,
        p_positive_definite: pd,
    })
}

/// Everything produced for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub truth: Trajectory,
    pub measurements: Vec<f64>,
    pub inputs: Vec<f64>,
    pub filters: Vec<FilterRun>,
}

impl SeedRun {
    pub fn filter(&self, name: &str) -> Option<&FilterRun> {
        self.filters.iter().find(|f| f.name == name)
    }

    /// Rows whose time falls in `[t_c, t_c + window]` for some collision `t_c`.
    pub fn post_collision_mask(&self, window: f64) -> Vec<bool> {
        let eps = 1e-9;
        self.truth
            .times
            .iter()
            .map(|t| {
                self.truth
                    .collisions
                    .iter()
                    .any(|c| *t >= c.time - eps && *t <= c.time + window + eps)
            })
            .collect()
    }

    /// `sqrt(mean ‖x̂_k − x_k‖²)` over the rows selected by `mask` (all rows when
    /// `None`). `None` if no row is selected.
    pub fn rmse(&self, run: &FilterRun, mask: Option<&[bool]>) -> Option<f64> {
        state_rmse(&self.truth.states, &run.estimates, mask)
    }
}

pub fn state_rmse(truth: &[[f64; 2]], estimates: &[DVector<f64>], mask: Option<&[bool]>) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (k, (x, e)) in truth.iter().zip(estimates).enumerate() {
        if mask.is_some_and(|m| !m[k]) {
            continue;
        }
        sum += (e[0] - x[0]).powi(2) + (e[1] - x[1]).powi(2);
        count += 1;
    }
    (count > 0).then(|| (sum / count as f64).sqrt())
}

/// Simulates, measures and filters one seed.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    config.validate()?;
    let params = config.msd_params();
    let truth = simulate_truth(&params, config.horizon_seconds, config.substep_seconds)?;
    let measurements = measure(&truth, config.measurement_variance, seed)?;
    let inputs: Vec<f64> = truth.times.iter().map(|t| params.force(*t)).collect();
    let model = params.nominal_model()?;
    let gamma = SpdMatrix::scaled_identity(1, config.measurement_variance)?;
    let initial = config.initial_state()?;
    let u: Vec<DVector<f64>> = inputs.iter().map(|v| DVector::from_element(1, *v)).collect();
    let y: Vec<DVector<f64>> = measurements
        .iter()
        .map(|v| DVector::from_element(1, *v))
        .collect();
    let filters = config
        .filters
        .iter()
        .map(|f| run_filter(&build_filter(f, 2)?, &model, &gamma, &initial, &u, &y))
        .collect::<Result<Vec<_>>>()?;
    Ok(SeedRun {
        seed,
        truth,
        measurements,
        inputs,
        filters,
    })
}
