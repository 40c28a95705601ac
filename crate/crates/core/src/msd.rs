//! Mass-spring-damper benchmark: a nominal linear plant plus an unmodeled wall.
//!
//! The truth is integrated with classical RK4 on a fine grid. When a substep would
//! carry the mass past the wall, the crossing is found by bisection, the mass is
//! placed on the wall and its velocity reversed, and integration resumes.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ltv::LtvModel;

/// Bisection tolerance on the crossing time, in seconds.
pub const CROSSING_TOL: f64 = 1e-9;

const MAX_REFLECTIONS_PER_SUBSTEP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsdParams {
    pub mass: f64,
    pub spring: f64,
    pub damping: f64,
    pub wall_position: f64,
    pub force_amplitude: f64,
    pub force_frequency: f64,
    pub z0: f64,
    pub zdot0: f64,
    pub ts: f64,
}

impl Default for MsdParams {
    fn default() -> Self {
        MsdParams {
            mass: 10.0,
            spring: 5.0,
            damping: 3.0,
            wall_position: 2.0,
            force_amplitude: 10.0,
            force_frequency: 1.0,
            z0: -1.0,
            zdot0: 1.0,
            ts: 0.1,
        }
    }
}

impl MsdParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) {
            return Err(Error::Config(format!("mass must be positive, got {}", self.mass)));
        }
        if !(self.ts > 0.0) {
            return Err(Error::Config(format!("sampling time must be positive, got {}", self.ts)));
        }
        for (name, v) in [
            ("spring", self.spring),
            ("damping", self.damping),
            ("force_amplitude", self.force_amplitude),
            ("force_frequency", self.force_frequency),
            ("z0", self.z0),
            ("zdot0", self.zdot0),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite, got {v}")));
            }
        }
        if self.wall_position.is_nan() {
            return Err(Error::Config("wall position is NaN".into()));
        }
        if self.z0 > self.wall_position {
            return Err(Error::Config("initial position lies beyond the wall".into()));
        }
        Ok(())
    }

    pub fn force(&self, t: f64) -> f64 {
        self.force_amplitude * (self.force_frequency * t).sin()
    }

    /// `(A_c, B_c)` of `[ż, z̈] = [[0, 1], [−k/m, −c/m]] [z, ż] + [0, 1/m] F`.
    pub fn continuous_model(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let a = DMatrix::from_row_slice(
            2,
            2,
            &[0.0, 1.0, -self.spring / self.mass, -self.damping / self.mass],
        );
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0 / self.mass]);
        (a, b)
    }

    /// Measurement row `C = [1 1]` (displacement plus velocity).
    pub fn measurement_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 2, &[1.0, 1.0])
    }

    /// The zero-order-hold discretized nominal model.
    pub fn nominal_model(&self) -> Result<LtvModel> {
        let (a_c, b_c) = self.continuous_model();
        let (a_d, b_d) = discretize_zoh(&a_c, &b_c, self.ts)?;
        LtvModel::constant(a_d, b_d, self.measurement_matrix())
    }

    fn derivative(&self, t: f64, s: [f64; 2]) -> [f64; 2] {
        let [z, zd] = s;
        [
            zd,
            (-self.spring * z - self.damping * zd + self.force(t)) / self.mass,
        ]
    }

    fn rk4(&self, t: f64, s: [f64; 2], h: f64) -> [f64; 2] {
        let add = |a: [f64; 2], b: [f64; 2], c: f64| [a[0] + c * b[0], a[1] + c * b[1]];
        let k1 = self.derivative(t, s);
        let k2 = self.derivative(t + 0.5 * h, add(s, k1, 0.5 * h));
        let k3 = self.derivative(t + 0.5 * h, add(s, k2, 0.5 * h));
        let k4 = self.derivative(t + h, add(s, k3, h));
        [
            s[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            s[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ]
    }
}

/// ZOH discretization: `A_d = e^{A_c T}`, `B_d = ∫₀ᵀ e^{A_c τ} dτ B_c`, both read off
/// the exponential of the block matrix `[[A_c, B_c], [0, 0]] T`.
pub fn discretize_zoh(
    a_c: &DMatrix<f64>,
    b_c: &DMatrix<f64>,
    ts: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a_c.nrows();
    if a_c.ncols() != n {
        return Err(Error::dimension("A_c", "square", format!("{}x{}", n, a_c.ncols())));
    }
    if b_c.nrows() != n {
        return Err(Error::dimension("B_c rows", n, b_c.nrows()));
    }
    if !(ts > 0.0) {
        return Err(Error::Config(format!("sampling time must be positive, got {ts}")));
    }
    let m = b_c.ncols();
    let mut block = DMatrix::zeros(n + m, n + m);
    block.view_mut((0, 0), (n, n)).copy_from(a_c);
    block.view_mut((0, n), (n, m)).copy_from(b_c);
    let e = (block * ts).exp();
    let a_d = e.view((0, 0), (n, n)).into_owned();
    let b_d = e.view((0, n), (n, m)).into_owned();
    Ok((a_d, b_d))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Collision {
    pub time: f64,
    pub velocity_before: f64,
    pub velocity_after: f64,
}

/// Sampled ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub ts: f64,
    pub times: Vec<f64>,
    /// `(z, ż)` at each sample.
    pub states: Vec<[f64; 2]>,
    pub collisions: Vec<Collision>,
    /// Largest displacement seen on the fine grid.
    pub max_fine_z: f64,
}

impl Trajectory {
    pub fn collision_times(&self) -> Vec<f64> {
        self.collisions.iter().map(|c| c.time).collect()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state_vector(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.states[k])
    }
}

/// Integrates the plant with wall reflections to `t_end`, sampling every `ts`.
pub fn simulate_truth(params: &MsdParams, t_end: f64, substep: f64) -> Result<Trajectory> {
    params.validate()?;
    if !(t_end > 0.0) {
        return Err(Error::Config(format!("horizon must be positive, got {t_end}")));
    }
    if !(substep > 0.0 && substep <= params.ts) {
        return Err(Error::Config(format!(
            "substep must lie in (0, ts = {}], got {substep}",
            params.ts
        )));
    }
    let wall = params.wall_position;
    let samples = (t_end / params.ts).round() as usize;
    let mut times = Vec::with_capacity(samples + 1);
    let mut states = Vec::with_capacity(samples + 1);
    let mut collisions = Vec::new();
    let mut s = [params.z0, params.zdot0];
    let mut t = 0.0;
    let mut max_fine_z = s[0];
    times.push(0.0);
    states.push(s);

    for k in 1..=samples {
        let target = k as f64 * params.ts;
        let mut reflections_here = 0usize;
        while target - t > 1e-12 {
            let h = substep.min(target - t);
            let next = params.rk4(t, s, h);
            if !(next[0].is_finite() && next[1].is_finite()) {
                return Err(Error::Integration {
                    time: t,
                    detail: "state became non-finite".into(),
                });
            }
            if next[0] <= wall {
                s = next;
                t += h;
                max_fine_z = max_fine_z.max(s[0]);
                reflections_here = 0;
                continue;
            }

            // bracket the crossing: z(lo) <= wall < z(hi)
            let (mut lo, mut hi) = (0.0, h);
            while hi - lo > CROSSING_TOL {
                let mid = 0.5 * (lo + hi);
                if params.rk4(t, s, mid)[0] > wall {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let at_wall = if lo > 0.0 { params.rk4(t, s, lo) } else { s };
            let velocity_before = at_wall[1];
            let velocity_after = -velocity_before.abs();
            t += lo;
            s = [wall, velocity_after];
            max_fine_z = max_fine_z.max(s[0]);
            collisions.push(Collision {
                time: t,
                velocity_before,
                velocity_after,
            });
            reflections_here += 1;
            if reflections_here > MAX_REFLECTIONS_PER_SUBSTEP {
                return Err(Error::Integration {
                    time: t,
                    detail: "mass is pinned against the wall".into(),
                });
            }
        }
        t = target;
        times.push(target);
        states.push(s);
    }

    Ok(Trajectory {
        ts: params.ts,
        times,
        states,
        collisions,
        max_fine_z,
    })
}

/// `y_k = z(k T_s) + ż(k T_s) + v_k` with `v_k ~ N(0, gamma)` from a seeded generator.
pub fn measure(traj: &Trajectory, gamma: f64, seed: u64) -> Result<Vec<f64>> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Config(format!(
            "measurement variance must be positive, got {gamma}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, gamma.sqrt()).map_err(|e| Error::Config(e.to_string()))?;
    Ok(traj
        .states
        .iter()
        .map(|[z, zd]| z + zd + noise.sample(&mut rng))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    /// Plain Taylor series, used only as an independent check on the exponential.
    fn expm_series(m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = m.nrows();
        let mut term = DMatrix::identity(n, n);
        let mut sum = term.clone();
        for j in 1..120 {
            term = &term * m / j as f64;
            sum += &term;
        }
        sum
    }

    #[test]
    fn zoh_zero_dynamics() {
        let (a, b) = discretize_zoh(&DMatrix::zeros(2, 2), &DMatrix::zeros(2, 1), 0.1).unwrap();
        assert_eq!(a, DMatrix::identity(2, 2));
        assert_eq!(b, DMatrix::zeros(2, 1));
    }

    #[test]
    fn zoh_scalar_closed_form() {
        let (a, b) = discretize_zoh(&dmatrix![-1.0], &dmatrix![1.0], 0.1).unwrap();
        let e = (-0.1f64).exp();
        assert!((a[(0, 0)] - e).abs() < 1e-15);
        assert!((b[(0, 0)] - (1.0 - e)).abs() < 1e-15);
    }

    #[test]
    fn zoh_benchmark_plant() {
        let (a_c, b_c) = MsdParams::default().continuous_model();
        let (a, b) = discretize_zoh(&a_c, &b_c, 0.1).unwrap();
        let printed_a: [f64; 4] = [0.9975, 0.09843, -0.04922, 0.9680];
        let printed_b: [f64; 2] = [4.948e-4, 9.843e-3];
        let got_a = [a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]];
        for (g, p) in got_a.iter().zip(printed_a).chain(b.iter().zip(printed_b)) {
            let half_unit = 0.5 * 10f64.powf(p.abs().log10().floor() - 3.0);
            assert!((g - p).abs() <= half_unit, "{g} vs printed {p}");
        }
    }

    #[test]
    fn zoh_semigroup() {
        let (a_c, b_c) = MsdParams::default().continuous_model();
        let (a1, _) = discretize_zoh(&a_c, &b_c, 0.1).unwrap();
        let (a2, _) = discretize_zoh(&a_c, &b_c, 0.2).unwrap();
        assert!((&a1 * &a1 - a2).norm() < 1e-10);
    }

    #[test]
    fn expm_matches_series() {
        let m2 = dmatrix![0.0, 1.0; -0.5, -0.3] * 0.7;
        assert!((m2.exp() - expm_series(&m2)).norm() < 1e-12);
        let m3 = dmatrix![0.1, 0.4, -0.2; -0.3, -0.2, 0.5; 0.05, 0.3, -0.6] * 1.3;
        assert!((m3.exp() - expm_series(&m3)).norm() < 1e-12);
    }

    #[test]
    fn free_response_matches_closed_form() {
        let params = MsdParams {
            wall_position: f64::INFINITY,
            ..MsdParams::default()
        };
        let traj = simulate_truth(&params, 10.0, 1e-3).unwrap();
        assert!(traj.collisions.is_empty());
        let (a, b) = params.continuous_model();
        let w = params.force_frequency;
        let amp = params.force_amplitude;
        // particular solution X_s sin ωt + X_c cos ωt
        let x_c = -((&a * &a + DMatrix::identity(2, 2) * (w * w)).try_inverse().unwrap() * &b) * (w * amp);
        let x_s = &a * &x_c / w;
        let x0 = DVector::from_vec(vec![params.z0, params.zdot0]);
        for (k, t) in traj.times.iter().enumerate() {
            let homog = expm_series(&(&a * *t)) * (&x0 - x_c.column(0));
            let exact = homog + x_s.column(0) * (w * t).sin() + x_c.column(0) * (w * t).cos();
            let got = traj.state_vector(k);
            assert!((got - exact).norm() < 1e-6, "t = {t}");
        }
    }

    #[test]
    fn rest_stays_at_rest() {
        let params = MsdParams {
            force_amplitude: 0.0,
            z0: 0.0,
            zdot0: 0.0,
            ..MsdParams::default()
        };
        let traj = simulate_truth(&params, 5.0, 1e-3).unwrap();
        assert!(traj.states.iter().all(|s| s[0] == 0.0 && s[1] == 0.0));
    }

    #[test]
    fn default_configuration_collides() {
        let params = MsdParams::default();
        let traj = simulate_truth(&params, 20.0, 1e-3).unwrap();
        assert_eq!(traj.len(), 201);
        assert!(!traj.collisions.is_empty());
        for c in &traj.collisions {
            assert!(c.velocity_before > 0.0);
            assert!((c.velocity_after + c.velocity_before).abs() < 1e-9);
        }
        assert!(traj.max_fine_z <= params.wall_position + 1e-9);
    }

    #[test]
    fn damped_energy_decreases() {
        let params = MsdParams {
            force_amplitude: 0.0,
            wall_position: f64::INFINITY,
            z0: 1.5,
            zdot0: -0.4,
            ..MsdParams::default()
        };
        let traj = simulate_truth(&params, 10.0, 1e-3).unwrap();
        let energy = |s: &[f64; 2]| 0.5 * (params.spring * s[0] * s[0] + params.mass * s[1] * s[1]);
        for w in traj.states.windows(2) {
            assert!(energy(&w[1]) <= energy(&w[0]) + 1e-7);
        }
    }

    #[test]
    fn energy_dissipates_between_collisions() {
        let params = MsdParams {
            force_amplitude: 0.0,
            z0: 1.0,
            zdot0: 3.0,
            ..MsdParams::default()
        };
        let traj = simulate_truth(&params, 10.0, 1e-3).unwrap();
        assert!(!traj.collisions.is_empty());
        let energy = |s: &[f64; 2]| 0.5 * (params.spring * s[0] * s[0] + params.mass * s[1] * s[1]);
        for w in traj.states.windows(2) {
            assert!(energy(&w[1]) <= energy(&w[0]) + 1e-7);
        }
    }

    #[test]
    fn measurement_noise() {
        let traj = simulate_truth(&MsdParams::default(), 2.0, 1e-3).unwrap();
        let clean = measure(&traj, 1e-30, 3).unwrap();
        for (y, s) in clean.iter().zip(&traj.states) {
            assert!((y - s[0] - s[1]).abs() < 1e-10);
        }
        assert_eq!(measure(&traj, 0.01, 9).unwrap(), measure(&traj, 0.01, 9).unwrap());
        assert_ne!(measure(&traj, 0.01, 9).unwrap(), measure(&traj, 0.01, 10).unwrap());
        assert!(measure(&traj, 0.0, 1).is_err());

        let n = 100_000;
        let zero = Trajectory {
            ts: 0.1,
            times: vec![0.0; n],
            states: vec![[0.0, 0.0]; n],
            collisions: vec![],
            max_fine_z: 0.0,
        };
        let v = measure(&zero, 0.01, 42).unwrap();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 0.01).abs() < 0.05 * 0.01, "variance {var}");
    }

    #[test]
    fn invalid_parameters() {
        let bad = MsdParams {
            mass: 0.0,
            ..MsdParams::default()
        };
        assert!(simulate_truth(&bad, 1.0, 1e-3).is_err());
        assert!(simulate_truth(&MsdParams::default(), 1.0, 0.5).is_err());
        assert!(simulate_truth(&MsdParams::default(), -1.0, 1e-3).is_err());
    }
}
