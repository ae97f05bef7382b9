//! Benchmark dynamics and snapshot-dataset generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

/// Snapshot matrices of `n_t` trajectories with `n_steps` transitions each.
///
/// `x` holds steps `0..N-1` of every trajectory (trajectory-major blocks of
/// `N` columns) and `x_plus` holds steps `1..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub x0: Matrix,
    pub x: Matrix,
    pub x_plus: Matrix,
    pub n_x: usize,
    pub n_t: usize,
    pub n_steps: usize,
}

impl TrajectoryDataset {
    /// Build from full trajectories of `N + 1` states each.
    pub fn from_trajectories(trajs: &[Vec<Vector>]) -> Result<Self> {
        let n_t = trajs.len();
        if n_t == 0 {
            return Err(Error::EmptyInput);
        }
        let len = trajs[0].len();
        if len < 2 {
            return Err(Error::dims("trajectories need at least two states"));
        }
        let n_x = trajs[0][0].len();
        let n_steps = len - 1;
        let mut x0 = Matrix::zeros(n_x, n_t);
        let mut x = Matrix::zeros(n_x, n_t * n_steps);
        let mut x_plus = Matrix::zeros(n_x, n_t * n_steps);
        for (j, traj) in trajs.iter().enumerate() {
            if traj.len() != len || traj.iter().any(|s| s.len() != n_x) {
                return Err(Error::dims(format!("trajectory {j} has inconsistent shape")));
            }
            x0.set_column(j, &traj[0]);
            for k in 0..n_steps {
                x.set_column(j * n_steps + k, &traj[k]);
                x_plus.set_column(j * n_steps + k, &traj[k + 1]);
            }
        }
        Ok(TrajectoryDataset {
            x0,
            x,
            x_plus,
            n_x,
            n_t,
            n_steps,
        })
    }

    /// Full state sequence (`N + 1` states) of trajectory `j`.
    pub fn trajectory(&self, j: usize) -> Vec<Vector> {
        let base = j * self.n_steps;
        let mut out: Vec<Vector> = (0..self.n_steps)
            .map(|k| self.x.column(base + k).into_owned())
            .collect();
        out.push(self.x_plus.column(base + self.n_steps - 1).into_owned());
        out
    }

    pub fn trajectories(&self) -> Vec<Vec<Vector>> {
        (0..self.n_t).map(|j| self.trajectory(j)).collect()
    }

    /// Checks shapes and the shared-snapshot structure.
    pub fn validate(&self) -> Result<()> {
        let m = self.n_t * self.n_steps;
        if self.n_steps == 0 || self.n_t == 0 {
            return Err(Error::dims("dataset needs at least one trajectory and one step"));
        }
        if self.x0.shape() != (self.n_x, self.n_t)
            || self.x.shape() != (self.n_x, m)
            || self.x_plus.shape() != (self.n_x, m)
        {
            return Err(Error::dims(format!(
                "matrix shapes X0 {:?}, X {:?}, X+ {:?} inconsistent with n_x={}, n_T={}, N={}",
                self.x0.shape(),
                self.x.shape(),
                self.x_plus.shape(),
                self.n_x,
                self.n_t,
                self.n_steps
            )));
        }
        for j in 0..self.n_t {
            let base = j * self.n_steps;
            if self.x.column(base) != self.x0.column(j) {
                return Err(Error::dims(format!(
                    "first X column of trajectory {j} differs from X0"
                )));
            }
            for k in 0..self.n_steps - 1 {
                if self.x_plus.column(base + k) != self.x.column(base + k + 1) {
                    return Err(Error::dims(format!(
                        "X+ column ({j},{k}) is not the successor snapshot"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Keep the trajectories with the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let trajs: Vec<Vec<Vector>> = indices.iter().map(|&j| self.trajectory(j)).collect();
        Self::from_trajectories(&trajs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredatorPreyParams {
    pub r: f64,
    pub k_cap: f64,
    pub a: f64,
    pub h: f64,
    pub n: f64,
    pub eta: f64,
    pub d: f64,
}

impl Default for PredatorPreyParams {
    fn default() -> Self {
        PredatorPreyParams {
            r: 1.0,
            k_cap: 5.0,
            a: 1.0,
            h: 1.0,
            n: 2.0,
            eta: 0.5,
            d: 0.3,
        }
    }
}

/// `x+ = -x + 3 / (1 + x^2) + sin(2x) / 2`.
pub fn scalar_map_step(x: f64) -> f64 {
    -x + 3.0 / (1.0 + x * x) + 0.5 * (2.0 * x).sin()
}

/// Predator-prey vector field with inhibited predation. State is `[P, Q]`.
pub fn predator_prey_rhs(state: &[f64; 2], p: &PredatorPreyParams) -> [f64; 2] {
    let (prey, pred) = (state[0], state[1]);
    let predation = p.a * prey * prey / (1.0 + p.h * prey.powf(p.n)) * pred;
    [
        p.r * prey * (1.0 - prey / p.k_cap) - predation,
        p.eta * predation - p.d * pred,
    ]
}

/// Classical fourth-order Runge-Kutta step.
pub fn rk4_step<F>(rhs: F, state: &[f64], dt: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let axpy = |s: &[f64], k: &[f64], h: f64| -> Vec<f64> {
        s.iter().zip(k).map(|(a, b)| a + h * b).collect()
    };
    let k1 = rhs(state);
    let k2 = rhs(&axpy(state, &k1, 0.5 * dt));
    let k3 = rhs(&axpy(state, &k2, 0.5 * dt));
    let k4 = rhs(&axpy(state, &k3, dt));
    state
        .iter()
        .enumerate()
        .map(|(i, s)| s + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Benchmark system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    /// Discrete-time scalar oscillator.
    Scalar,
    /// Continuous-time predator-prey model, sampled with RK4.
    PredatorPrey(PredatorPreyParams),
}

impl System {
    pub fn name(&self) -> &'static str {
        match self {
            System::Scalar => "scalar",
            System::PredatorPrey(_) => "predator_prey",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            System::Scalar => 1,
            System::PredatorPrey(_) => 2,
        }
    }

    /// One sampling interval. `dt` is ignored for discrete maps.
    pub fn step(&self, state: &[f64], dt: f64) -> Vec<f64> {
        match self {
            System::Scalar => vec![scalar_map_step(state[0])],
            System::PredatorPrey(p) => rk4_step(
                |s| predator_prey_rhs(&[s[0], s[1]], p).to_vec(),
                state,
                dt,
            ),
        }
    }
}

/// i.i.d. uniform initial conditions, one per column.
pub fn sample_initial_conditions(bounds: &[(f64, f64)], n_t: usize, seed: u64) -> Result<Matrix> {
    for (d, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "bounds for dimension {d} are not an interval: [{lo}, {hi}]"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Matrix::zeros(bounds.len(), n_t);
    for j in 0..n_t {
        for (d, &(lo, hi)) in bounds.iter().enumerate() {
            let u: f64 = rng.random();
            out[(d, j)] = lo + (hi - lo) * u;
        }
    }
    Ok(out)
}

/// Roll every column of `x0` forward `n_steps` sampling intervals.
pub fn simulate(system: &System, x0: &Matrix, n_steps: usize, dt: f64) -> Result<TrajectoryDataset> {
    if x0.nrows() != system.state_dim() {
        return Err(Error::dims(format!(
            "{} initial conditions have dimension {}, system state dimension is {}",
            system.name(),
            x0.nrows(),
            system.state_dim()
        )));
    }
    if n_steps == 0 {
        return Err(Error::InvalidConfig("need at least one step".into()));
    }
    if matches!(system, System::PredatorPrey(_)) && !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("time step must be positive, got {dt}")));
    }
    let trajs = (0..x0.ncols())
        .map(|j| {
            let mut state: Vec<f64> = x0.column(j).iter().copied().collect();
            let mut traj = vec![Vector::from_column_slice(&state)];
            for k in 0..n_steps {
                state = system.step(&state, dt);
                if state.iter().any(|v| !v.is_finite() || v.abs() > 1e150) {
                    return Err(Error::NonFiniteTrajectory {
                        trajectory: j,
                        step: k + 1,
                    });
                }
                traj.push(Vector::from_column_slice(&state));
            }
            Ok(traj)
        })
        .collect::<Result<Vec<_>>>()?;
    TrajectoryDataset::from_trajectories(&trajs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    Gaussian,
    Uniform,
}

impl NoiseKind {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Uniform => "uniform",
        }
    }
}

/// Observation noise; `intensity_pct` is a percentage of each state
/// dimension's standard deviation over the clean snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    #[serde(default)]
    pub intensity_pct: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec {
            kind: NoiseKind::None,
            intensity_pct: 0.0,
            seed: 0,
        }
    }

    pub fn is_noop(&self) -> bool {
        self.kind == NoiseKind::None || self.intensity_pct == 0.0
    }
}

fn row_std(x: &Matrix, d: usize) -> f64 {
    let n = x.ncols() as f64;
    let mean = x.row(d).sum() / n;
    (x.row(d).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Perturb every snapshot once; `X0`, `X` and `X+` share the perturbed
/// snapshots. Trajectory `j` draws from a stream seeded with `seed ^ j`.
pub fn add_noise(data: &TrajectoryDataset, spec: &NoiseSpec) -> Result<TrajectoryDataset> {
    if !(spec.intensity_pct >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "noise intensity must be nonnegative, got {}",
            spec.intensity_pct
        )));
    }
    if spec.is_noop() {
        return Ok(data.clone());
    }
    let scale: Vec<f64> = (0..data.n_x)
        .map(|d| spec.intensity_pct / 100.0 * row_std(&data.x, d))
        .collect();
    let trajs: Vec<Vec<Vector>> = (0..data.n_t)
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ j as u64);
            data.trajectory(j)
                .into_iter()
                .map(|mut s| {
                    for d in 0..data.n_x {
                        let e = match spec.kind {
                            NoiseKind::Gaussian => {
                                let z: f64 = StandardNormal.sample(&mut rng);
                                scale[d] * z
                            }
                            NoiseKind::Uniform => {
                                let w = 3f64.sqrt() * scale[d];
                                rng.random_range(-1.0..1.0) * w
                            }
                            NoiseKind::None => 0.0,
                        };
                        s[d] += e;
                    }
                    s
                })
                .collect()
        })
        .collect();
    TrajectoryDataset::from_trajectories(&trajs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_map_values() {
        assert_eq!(scalar_map_step(0.0), 3.0);
        let expected = -3.0 + 0.3 + 0.5 * 6f64.sin();
        assert!((scalar_map_step(3.0) - expected).abs() < 1e-15);
        assert!((scalar_map_step(3.0) + 2.839708).abs() < 1e-6);
    }

    #[test]
    fn scalar_fixed_point_by_bisection() {
        // g(x) = f(x) - x changes sign on [0, 3]
        let g = |x: f64| scalar_map_step(x) - x;
        let (mut lo, mut hi) = (0.0, 3.0);
        assert!(g(lo) > 0.0 && g(hi) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let x_star = 0.5 * (lo + hi);
        assert!((scalar_map_step(x_star) - x_star).abs() < 1e-10);
    }

    #[test]
    fn predator_prey_values() {
        let p = PredatorPreyParams::default();
        let d = predator_prey_rhs(&[0.0, 1.7], &p);
        assert_eq!(d, [0.0, -0.3 * 1.7]);
        assert_eq!(predator_prey_rhs(&[5.0, 0.0], &p), [0.0, 0.0]);
        let d = predator_prey_rhs(&[1.0, 1.0], &p);
        assert!((d[0] - 0.3).abs() < 1e-15);
        assert!((d[1] + 0.05).abs() < 1e-15);
    }

    #[test]
    fn rk4_zero_field_and_exponential() {
        let s = rk4_step(|_| vec![0.0, 0.0], &[1.5, -2.0], 0.3);
        assert_eq!(s, vec![1.5, -2.0]);
        let s = rk4_step(|x| vec![-x[0]], &[1.0], 0.1);
        assert!((s[0] - (-0.1f64).exp()).abs() < 1e-7);
    }

    fn rk4_global_error(n: usize) -> f64 {
        let dt = 1.0 / n as f64;
        let mut x = vec![1.0];
        for _ in 0..n {
            x = rk4_step(|s| vec![-s[0]], &x, dt);
        }
        (x[0] - (-1f64).exp()).abs()
    }

    #[test]
    fn rk4_fourth_order() {
        for n in [10, 20, 40] {
            let order = (rk4_global_error(n) / rk4_global_error(2 * n)).log2();
            assert!(order >= 3.8, "order {order} at n = {n}");
        }
    }

    #[test]
    fn initial_condition_sampling() {
        let z = sample_initial_conditions(&[(0.0, 0.0)], 5, 1).unwrap();
        assert_eq!(z.amax(), 0.0);

        let x = sample_initial_conditions(&[(-5.0, 5.0)], 10_000, 3).unwrap();
        let mean = x.mean();
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 10_000.0;
        assert!(mean.abs() < 0.2);
        assert!((var / (25.0 / 3.0) - 1.0).abs() < 0.1);
        assert!(x.iter().all(|&v| (-5.0..5.0).contains(&v)));

        let a = sample_initial_conditions(&[(0.1, 4.0), (0.1, 3.0)], 20, 9).unwrap();
        let b = sample_initial_conditions(&[(0.1, 4.0), (0.1, 3.0)], 20, 9).unwrap();
        assert_eq!(a, b);
        assert!(sample_initial_conditions(&[(1.0, 0.0)], 2, 0).is_err());
    }

    #[test]
    fn simulate_layout() {
        let x0 = Matrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let one = simulate(&System::Scalar, &x0, 1, 0.0).unwrap();
        assert_eq!(one.x, x0);
        assert_eq!(one.x_plus[(0, 0)], 3.0);
        assert_eq!(one.x_plus[(0, 1)], scalar_map_step(1.0));

        let data = simulate(&System::Scalar, &x0, 5, 0.0).unwrap();
        data.validate().unwrap();
        assert_eq!(data.x.ncols(), 10);
        assert_eq!(data.x_plus[(0, 0)], 3.0);
        assert_eq!(data.trajectory(1).len(), 6);
    }

    #[test]
    fn predator_prey_equilibrium_is_constant() {
        let sys = System::PredatorPrey(PredatorPreyParams::default());
        let x0 = Matrix::from_row_slice(2, 1, &[5.0, 0.0]);
        let data = simulate(&sys, &x0, 100, 0.2).unwrap();
        for s in data.trajectory(0) {
            assert!((s[0] - 5.0).abs() < 1e-10 && s[1].abs() < 1e-10);
        }
    }

    #[test]
    fn simulate_reports_blow_up() {
        let sys = System::PredatorPrey(PredatorPreyParams::default());
        let x0 = Matrix::from_row_slice(2, 1, &[-50.0, 1.0]);
        assert!(matches!(
            simulate(&sys, &x0, 200, 0.2),
            Err(Error::NonFiniteTrajectory { .. })
        ));
    }

    fn unit_signal(n: usize) -> TrajectoryDataset {
        // alternating +/-1 has unit population std
        let trajs: Vec<Vec<Vector>> = (0..n / 10)
            .map(|_| (0..=10).map(|k| Vector::from_element(1, if k % 2 == 0 { 1.0 } else { -1.0 })).collect())
            .collect();
        TrajectoryDataset::from_trajectories(&trajs).unwrap()
    }

    fn added_noise(clean: &TrajectoryDataset, noisy: &TrajectoryDataset) -> Vec<f64> {
        (0..clean.n_t)
            .flat_map(|j| {
                clean
                    .trajectory(j)
                    .into_iter()
                    .zip(noisy.trajectory(j))
                    .map(|(a, b)| b[0] - a[0])
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    #[test]
    fn zero_intensity_is_identity() {
        let data = unit_signal(100);
        let spec = NoiseSpec { kind: NoiseKind::Gaussian, intensity_pct: 0.0, seed: 4 };
        assert_eq!(add_noise(&data, &spec).unwrap(), data);
    }

    #[test]
    fn noise_moments_and_variance_matching() {
        let data = unit_signal(100_000);
        let g = NoiseSpec { kind: NoiseKind::Gaussian, intensity_pct: 10.0, seed: 5 };
        let u = NoiseSpec { kind: NoiseKind::Uniform, intensity_pct: 10.0, seed: 5 };
        let ng = added_noise(&data, &add_noise(&data, &g).unwrap());
        let nu = added_noise(&data, &add_noise(&data, &u).unwrap());
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        let sg = var(&ng).sqrt();
        assert!((0.095..=0.105).contains(&sg), "gaussian std {sg}");
        assert!((var(&nu) / var(&ng) - 1.0).abs() < 0.05);
        assert!(nu.iter().all(|e| e.abs() <= 3f64.sqrt() * 0.1));
    }

    #[test]
    fn noisy_dataset_keeps_shared_snapshots() {
        let x0 = sample_initial_conditions(&[(0.1, 4.0), (0.1, 3.0)], 6, 1).unwrap();
        let sys = System::PredatorPrey(PredatorPreyParams::default());
        let data = simulate(&sys, &x0, 20, 0.2).unwrap();
        for kind in [NoiseKind::Gaussian, NoiseKind::Uniform] {
            let noisy = add_noise(&data, &NoiseSpec { kind, intensity_pct: 10.0, seed: 2 }).unwrap();
            noisy.validate().unwrap();
            assert_ne!(noisy.x0, data.x0);
            let again = add_noise(&data, &NoiseSpec { kind, intensity_pct: 10.0, seed: 2 }).unwrap();
            assert_eq!(noisy, again);
        }
    }

    #[test]
    fn select_subset() {
        let x0 = Matrix::from_row_slice(1, 3, &[0.0, 1.0, -1.0]);
        let data = simulate(&System::Scalar, &x0, 4, 0.0).unwrap();
        let sub = data.select(&[2, 0]).unwrap();
        assert_eq!(sub.n_t, 2);
        assert_eq!(sub.x0[(0, 0)], -1.0);
        assert_eq!(sub.trajectory(1), data.trajectory(0));
    }
}
