//! Inverted GP Koopman training.
//!
//! Each lifted coordinate is a GP posterior mean conditioned on the initial
//! conditions `X0` and a row of virtual targets `Z`. With the kernel
//! hyperparameters held fixed, the lifted snapshot matrices are linear in
//! `Z`, so the reduced cost
//!
//! ```text
//! L1 = ( ||Phi+ - (Phi+ Phi^+) Phi||^2 + ||X - (X Phi^+) Phi||^2 ) / (n_z N n_T)
//! ```
//!
//! and its gradient can be evaluated exactly. The inner fits use a ridge
//! solve so that the gradient stays defined where `Phi` loses rank.
//!
//! Training runs momentum SGD on `Z`, then Adam on each observable's
//! hyperparameters against its marginal likelihood, then recovers `K` and
//! `C` by eDMD with the exact pseudo-inverse.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{nlml_and_grad, posterior_mean_operator, GpObservable};
use crate::kernels::{noisy_gram, KernelHyperparams};
use crate::koopman::{edmd_fit, KoopmanModel, Observables};
use crate::numerics::{Matrix, SpdFactor, SpdPolicy, Vector};
use crate::optim::{adam_step, clip_grad_norm, sgd_step, AdamConfig, AdamState, SgdConfig, SgdState};
use crate::systems::TrajectoryDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IgpkConfig {
    /// Number of GP observables.
    pub n_z: usize,
    /// SGD iterations on the virtual targets.
    pub stage1_iters: usize,
    /// Adam iterations per observable on the kernel hyperparameters.
    pub stage2_iters: usize,
    pub ridge_lambda: f64,
    pub seed: u64,
    /// Snapshot columns per stage-1 step; `None` is full batch.
    pub batch_size: Option<usize>,
    pub sgd: SgdConfig,
    pub adam: AdamConfig,
    pub grad_clip: f64,
    /// Initialize the first `n_x` target rows to `X0`.
    pub warm_start: bool,
    /// Half-width of the uniform log-space perturbation of the initial hyperparameters.
    pub theta_perturbation: f64,
    pub initial_noise_var: f64,
    /// Multiplier on the per-dimension data standard deviation used as the
    /// initial lengthscale.
    pub lengthscale_factor: f64,
    pub target_init: TargetInit,
}

/// Distribution of the initial virtual targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetInit {
    /// i.i.d. standard normal entries.
    Iid,
    /// A draw from each observable's GP prior under its initial hyperparameters.
    GpPrior,
}

impl Default for IgpkConfig {
    fn default() -> Self {
        IgpkConfig {
            n_z: 10,
            stage1_iters: 2000,
            stage2_iters: 300,
            ridge_lambda: 1e-8,
            seed: 0,
            batch_size: None,
            sgd: SgdConfig::default(),
            adam: AdamConfig::default(),
            grad_clip: 1e3,
            warm_start: false,
            theta_perturbation: 0.1,
            initial_noise_var: 1e-2,
            lengthscale_factor: 1.0,
            target_init: TargetInit::Iid,
        }
    }
}

impl IgpkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_z == 0 {
            return bad("igpk.n_z must be at least 1");
        }
        if !(self.ridge_lambda > 0.0) {
            return bad("igpk.ridge_lambda must be positive");
        }
        if !(self.sgd.lr > 0.0) || !(0.0..1.0).contains(&self.sgd.momentum) {
            return bad("igpk.sgd needs lr > 0 and momentum in [0, 1)");
        }
        if !(self.adam.lr > 0.0)
            || !(0.0..1.0).contains(&self.adam.beta1)
            || !(0.0..1.0).contains(&self.adam.beta2)
            || !(self.adam.eps > 0.0)
        {
            return bad("igpk.adam needs lr > 0, betas in [0, 1) and eps > 0");
        }
        if !(self.grad_clip > 0.0) {
            return bad("igpk.grad_clip must be positive");
        }
        if self.batch_size == Some(0) {
            return bad("igpk.batch_size must be positive when set");
        }
        if !(self.lengthscale_factor > 0.0) || !self.lengthscale_factor.is_finite() {
            return bad("igpk.lengthscale_factor must be positive");
        }
        if !(self.initial_noise_var > 0.0) || !(self.theta_perturbation >= 0.0) {
            return bad("igpk.initial_noise_var must be positive and theta_perturbation nonnegative");
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub stage: u8,
    /// Observable index for stage 2.
    pub gpo: Option<usize>,
    pub iteration: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub wall_time_s: f64,
}

// ----------------------------------------------------------------------------
// Reduced cost
// ----------------------------------------------------------------------------

/// Value and gradients of `||B - M Phi||^2` with `M` the ridge fit of `B` on `Phi`.
struct FitTerm {
    value: f64,
    d_b: Matrix,
    d_phi: Matrix,
}

fn fit_term(b: &Matrix, phi: &Matrix, lambda: f64, need_grad: bool) -> Result<FitTerm> {
    let n = phi.nrows();
    let mut s = phi * phi.transpose();
    for i in 0..n {
        s[(i, i)] += lambda;
    }
    let factor = SpdFactor::new(&s, &SpdPolicy::default())?;
    // M^T = S^{-1} Phi B^T
    let m_t = factor.solve(&(phi * b.transpose()))?;
    let m = m_t.transpose();
    let r = b - &m * phi;
    let value = r.norm_squared();
    if !need_grad {
        return Ok(FitTerm {
            value,
            d_b: Matrix::zeros(0, 0),
            d_phi: Matrix::zeros(0, 0),
        });
    }
    let w = factor.inverse();
    let q = &r * phi.transpose();
    let qw = &q * &w;
    let d_b = (&r - &qw * phi) * 2.0;
    let h = &m_t * &qw;
    let d_phi = (-(&w * q.transpose() * b) + (&h + h.transpose()) * phi - &m_t * &r) * 2.0;
    Ok(FitTerm { value, d_b, d_phi })
}

/// `L1` and optionally its gradients with respect to `Phi` and `Phi+`.
fn reduced_cost(
    phi: &Matrix,
    phi_plus: &Matrix,
    x: &Matrix,
    lambda: f64,
    norm: f64,
    need_grad: bool,
) -> Result<(f64, Option<(Matrix, Matrix)>)> {
    let dyn_term = fit_term(phi_plus, phi, lambda, need_grad)?;
    let out_term = fit_term(x, phi, lambda, need_grad)?;
    let cost = (dyn_term.value + out_term.value) / norm;
    if !need_grad {
        return Ok((cost, None));
    }
    let d_phi = (dyn_term.d_phi + out_term.d_phi) / norm;
    let d_phi_plus = dyn_term.d_b / norm;
    Ok((cost, Some((d_phi, d_phi_plus))))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the compiler vectorize
    let mut acc = [0.0; 4];
    let (ca, ra) = a.split_at(a.len() / 4 * 4);
    let (cb, rb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(4).zip(cb.chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

/// Linear map `Z -> (Phi, Phi+)` for fixed hyperparameters.
///
/// Posterior means are evaluated once on the distinct snapshots; `Phi` and
/// `Phi+` are column selections of that matrix.
pub struct LiftOperator {
    /// Per observable, `n_T x S` weights over the distinct snapshots.
    weights: Vec<Matrix>,
    idx: Vec<usize>,
    idx_plus: Vec<usize>,
    n_t: usize,
}

impl LiftOperator {
    pub fn new(
        theta: &[KernelHyperparams],
        x0: &Matrix,
        x: &Matrix,
        x_plus: &Matrix,
    ) -> Result<Self> {
        if x.shape() != x_plus.shape() {
            return Err(Error::dims("X and X+ must have the same shape"));
        }
        if x.nrows() != x0.nrows() {
            return Err(Error::dims("X and X0 have different state dimensions"));
        }
        let m = x.ncols();
        // Reuse X columns for X+ columns when the snapshot is identical.
        let mut extra: Vec<usize> = Vec::new();
        let mut idx_plus = Vec::with_capacity(m);
        for c in 0..m {
            if c + 1 < m && x_plus.column(c) == x.column(c + 1) {
                idx_plus.push(c + 1);
            } else {
                idx_plus.push(m + extra.len());
                extra.push(c);
            }
        }
        let mut all = Matrix::zeros(x.nrows(), m + extra.len());
        for c in 0..m {
            all.set_column(c, &x.column(c));
        }
        for (e, &c) in extra.iter().enumerate() {
            all.set_column(m + e, &x_plus.column(c));
        }
        let weights = theta
            .iter()
            .map(|t| posterior_mean_operator(x0, t, &all, &SpdPolicy::default()))
            .collect::<Result<Vec<_>>>()?;
        Ok(LiftOperator {
            weights,
            idx: (0..m).collect(),
            idx_plus,
            n_t: x0.ncols(),
        })
    }

    pub fn n_z(&self) -> usize {
        self.weights.len()
    }

    pub fn n_cols(&self) -> usize {
        self.idx.len()
    }

    fn check(&self, z: &Matrix) -> Result<()> {
        if z.shape() != (self.n_z(), self.n_t) {
            return Err(Error::dims(format!(
                "virtual targets are {}x{}, expected {}x{}",
                z.nrows(),
                z.ncols(),
                self.n_z(),
                self.n_t
            )));
        }
        Ok(())
    }

    fn lift_all(&self, z: &Matrix) -> Matrix {
        let s = self.weights[0].ncols();
        let mut out = Matrix::zeros(self.n_z(), s);
        for (i, w) in self.weights.iter().enumerate() {
            let zi: Vec<f64> = z.row(i).iter().copied().collect();
            for (c, col) in w.as_slice().chunks_exact(self.n_t).enumerate() {
                out[(i, c)] = dot(col, &zi);
            }
        }
        out
    }

    fn select(all: &Matrix, idx: &[usize]) -> Matrix {
        Matrix::from_fn(all.nrows(), idx.len(), |r, c| all[(r, idx[c])])
    }

    /// `(Phi, Phi+)` for the given virtual targets.
    pub fn lift(&self, z: &Matrix) -> Result<(Matrix, Matrix)> {
        self.check(z)?;
        let all = self.lift_all(z);
        Ok((Self::select(&all, &self.idx), Self::select(&all, &self.idx_plus)))
    }

    /// Cost over the snapshot columns in `cols` (all columns when `None`).
    pub fn cost(&self, z: &Matrix, x: &Matrix, lambda: f64, cols: Option<&[usize]>) -> Result<f64> {
        self.eval(z, x, lambda, cols, false).map(|(c, _)| c)
    }

    pub fn cost_and_grad(
        &self,
        z: &Matrix,
        x: &Matrix,
        lambda: f64,
        cols: Option<&[usize]>,
    ) -> Result<(f64, Matrix)> {
        self.eval(z, x, lambda, cols, true)
            .map(|(c, g)| (c, g.expect("gradient requested")))
    }

    fn eval(
        &self,
        z: &Matrix,
        x: &Matrix,
        lambda: f64,
        cols: Option<&[usize]>,
        need_grad: bool,
    ) -> Result<(f64, Option<Matrix>)> {
        self.check(z)?;
        if x.ncols() != self.n_cols() {
            return Err(Error::dims("X column count does not match the lift operator"));
        }
        let all = self.lift_all(z);
        let (idx, idx_plus, xb): (Vec<usize>, Vec<usize>, Matrix) = match cols {
            None => (self.idx.clone(), self.idx_plus.clone(), x.clone()),
            Some(c) => (
                c.iter().map(|&k| self.idx[k]).collect(),
                c.iter().map(|&k| self.idx_plus[k]).collect(),
                Self::select(x, c),
            ),
        };
        let phi = Self::select(&all, &idx);
        let phi_plus = Self::select(&all, &idx_plus);
        let norm = (self.n_z() * idx.len()) as f64;
        let (cost, grads) = reduced_cost(&phi, &phi_plus, &xb, lambda, norm, need_grad)?;
        let Some((d_phi, d_phi_plus)) = grads else {
            return Ok((cost, None));
        };
        // scatter back onto the distinct snapshots, then through the linear lift
        let mut d_all = Matrix::zeros(all.nrows(), all.ncols());
        for (c, &k) in idx.iter().enumerate() {
            let mut col = d_all.column_mut(k);
            col += d_phi.column(c);
        }
        for (c, &k) in idx_plus.iter().enumerate() {
            let mut col = d_all.column_mut(k);
            col += d_phi_plus.column(c);
        }
        let mut grad = Matrix::zeros(self.n_z(), self.n_t);
        for (i, w) in self.weights.iter().enumerate() {
            let mut g = vec![0.0; self.n_t];
            for (c, col) in w.as_slice().chunks_exact(self.n_t).enumerate() {
                let a = d_all[(i, c)];
                if a != 0.0 {
                    g.iter_mut().zip(col).for_each(|(gk, wk)| *gk += a * wk);
                }
            }
            for (k, v) in g.into_iter().enumerate() {
                grad[(i, k)] = v;
            }
        }
        Ok((cost, Some(grad)))
    }
}

/// Lifted snapshot matrices, one row per observable.
pub fn build_lifted_matrices(
    z: &Matrix,
    theta: &[KernelHyperparams],
    x0: &Matrix,
    x: &Matrix,
    x_plus: &Matrix,
) -> Result<(Matrix, Matrix)> {
    check_theta(z, theta)?;
    LiftOperator::new(theta, x0, x, x_plus)?.lift(z)
}

fn check_theta(z: &Matrix, theta: &[KernelHyperparams]) -> Result<()> {
    if theta.len() != z.nrows() {
        return Err(Error::dims(format!(
            "{} hyperparameter sets for {} target rows",
            theta.len(),
            z.nrows()
        )));
    }
    Ok(())
}

/// Reduced cost `L1` over the whole dataset.
pub fn l1_cost(
    z: &Matrix,
    theta: &[KernelHyperparams],
    data: &TrajectoryDataset,
    ridge_lambda: f64,
) -> Result<f64> {
    check_theta(z, theta)?;
    LiftOperator::new(theta, &data.x0, &data.x, &data.x_plus)?.cost(z, &data.x, ridge_lambda, None)
}

/// Gradient of [`l1_cost`] with respect to the virtual targets.
pub fn l1_grad_z(
    z: &Matrix,
    theta: &[KernelHyperparams],
    data: &TrajectoryDataset,
    ridge_lambda: f64,
) -> Result<Matrix> {
    check_theta(z, theta)?;
    LiftOperator::new(theta, &data.x0, &data.x, &data.x_plus)?
        .cost_and_grad(z, &data.x, ridge_lambda, None)
        .map(|(_, g)| g)
}

// ----------------------------------------------------------------------------
// Initialization
// ----------------------------------------------------------------------------

fn row_std(x: &Matrix, d: usize) -> f64 {
    let n = x.ncols() as f64;
    let mean = x.row(d).sum() / n;
    (x.row(d).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Anchored hyperparameters with a seeded log-space perturbation.
pub fn initial_theta(config: &IgpkConfig, data: &TrajectoryDataset) -> Vec<KernelHyperparams> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x7e7a));
    let ls: Vec<f64> = (0..data.n_x)
        .map(|d| (config.lengthscale_factor * row_std(&data.x, d)).max(1e-6).ln())
        .collect();
    let delta = config.theta_perturbation;
    let mut jitter = move || {
        if delta > 0.0 {
            rng.random_range(-delta..=delta)
        } else {
            0.0
        }
    };
    (0..config.n_z)
        .map(|_| KernelHyperparams {
            log_lengthscales: ls.iter().map(|l| l + jitter()).collect(),
            log_signal_var: jitter(),
            log_noise_var: config.initial_noise_var.ln() + jitter(),
        })
        .collect()
}

/// Seeded random virtual targets, optionally warm-started with `X0`.
///
/// `theta` is only read for [`TargetInit::GpPrior`], where row `i` is
/// `L_i e_i` with `L_i L_i^T = K_i + sigma_i^2 I` and `e_i` standard normal.
pub fn initial_targets(config: &IgpkConfig, x0: &Matrix, theta: &[KernelHyperparams]) -> Result<Matrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut z = Matrix::from_fn(config.n_z, x0.ncols(), |_, _| StandardNormal.sample(&mut rng));
    if config.target_init == TargetInit::GpPrior {
        check_theta(&z, theta)?;
        for (i, t) in theta.iter().enumerate() {
            let factor = SpdFactor::new(&noisy_gram(x0, t)?, &SpdPolicy::default())?;
            let e: Vector = z.row(i).transpose();
            let row = factor.lower() * e;
            z.set_row(i, &row.transpose());
        }
    }
    if config.warm_start {
        for d in 0..x0.nrows().min(config.n_z) {
            z.set_row(d, &x0.row(d));
        }
    }
    Ok(z)
}

// ----------------------------------------------------------------------------
// Stage 1
// ----------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Stage1Result {
    pub z: Matrix,
    pub best_cost: f64,
    pub initial_cost: f64,
    /// Full-data cost of every iterate, starting with the initialization.
    pub costs: Vec<f64>,
    pub log: Vec<LogRow>,
}

/// Momentum SGD on the virtual targets with `theta` fixed. Returns the
/// best iterate seen.
pub fn optimize_virtual_targets(
    config: &IgpkConfig,
    theta: &[KernelHyperparams],
    data: &TrajectoryDataset,
) -> Result<Stage1Result> {
    optimize_virtual_targets_from(config, theta, data, initial_targets(config, &data.x0, theta)?)
}

pub fn optimize_virtual_targets_from(
    config: &IgpkConfig,
    theta: &[KernelHyperparams],
    data: &TrajectoryDataset,
    z_init: Matrix,
) -> Result<Stage1Result> {
    config.validate()?;
    check_theta(&z_init, theta)?;
    let start = Instant::now();
    let op = LiftOperator::new(theta, &data.x0, &data.x, &data.x_plus)?;
    let m = op.n_cols();
    let lambda = config.ridge_lambda;
    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0xba7c));
    let batch = config.batch_size.filter(|&b| b < m);

    let mut z = z_init;
    let mut state = SgdState::new(z.len(), config.sgd);
    let mut costs = Vec::with_capacity(config.stage1_iters + 1);
    let mut log = Vec::with_capacity(config.stage1_iters + 1);

    let mut best: Option<(f64, Matrix)> = None;
    for g in 0..config.stage1_iters {
        // cost of the current iterate and a gradient, full or mini-batch
        let (cost, mut grad) = match batch {
            None => op.cost_and_grad(&z, &data.x, lambda, None)?,
            Some(b) => {
                let mut cols = sample(&mut batch_rng, m, b).into_vec();
                cols.sort_unstable();
                let cost = op.cost(&z, &data.x, lambda, None)?;
                (cost, op.cost_and_grad(&z, &data.x, lambda, Some(&cols))?.1)
            }
        };
        if g == 0 && !cost.is_finite() {
            return Err(Error::TrainingDiverged("initial stage-1 cost is not finite".into()));
        }
        costs.push(cost);
        if !cost.is_finite() {
            break;
        }
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, z.clone()));
        }
        let grad_norm = clip_grad_norm(grad.as_mut_slice(), config.grad_clip);
        log.push(LogRow {
            stage: 1,
            gpo: None,
            iteration: g,
            cost,
            grad_norm,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        if !grad_norm.is_finite() {
            break;
        }
        sgd_step(z.as_mut_slice(), grad.as_slice(), &mut state)?;
    }
    if costs.len() == config.stage1_iters {
        // the loop ran to completion; score the final iterate too
        let cost = op.cost(&z, &data.x, lambda, None).unwrap_or(f64::NAN);
        if costs.is_empty() && !cost.is_finite() {
            return Err(Error::TrainingDiverged("initial stage-1 cost is not finite".into()));
        }
        costs.push(cost);
        if cost.is_finite() && best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, z.clone()));
        }
    }
    let initial_cost = costs[0];
    let best = best.expect("initial cost is finite");
    Ok(Stage1Result {
        z: best.1,
        best_cost: best.0,
        initial_cost,
        costs,
        log,
    })
}

// ----------------------------------------------------------------------------
// Stage 2
// ----------------------------------------------------------------------------

fn optimize_one(
    config: &IgpkConfig,
    theta0: &KernelHyperparams,
    x0: &Matrix,
    z: &Vector,
    gpo: usize,
    start: Instant,
) -> (KernelHyperparams, Vec<LogRow>) {
    let mut params = theta0.to_vec();
    let mut state = AdamState::new(params.len(), config.adam);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut log = Vec::with_capacity(config.stage2_iters);
    for g in 0..config.stage2_iters {
        let theta = KernelHyperparams::from_slice(&params).expect("length preserved");
        let Ok((value, mut grad)) = nlml_and_grad(&theta, x0, z) else {
            break;
        };
        if !value.is_finite() {
            break;
        }
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, params.clone()));
        }
        let grad_norm = clip_grad_norm(&mut grad, config.grad_clip);
        log.push(LogRow {
            stage: 2,
            gpo: Some(gpo),
            iteration: g,
            cost: value,
            grad_norm,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        if !grad_norm.is_finite() || adam_step(&mut params, &grad, &mut state).is_err() {
            break;
        }
    }
    if config.stage2_iters > 0 {
        let theta = KernelHyperparams::from_slice(&params).expect("length preserved");
        if let Ok((value, _)) = nlml_and_grad(&theta, x0, z) {
            if value.is_finite() && best.as_ref().is_none_or(|(b, _)| value < *b) {
                best = Some((value, params));
            }
        }
    }
    let theta = match best {
        Some((_, p)) => KernelHyperparams::from_slice(&p).expect("length preserved"),
        None => theta0.clone(),
    };
    (theta, log)
}

/// Adam on each observable's negative log marginal likelihood, independently.
pub fn optimize_hyperparameters(
    config: &IgpkConfig,
    z_star: &Matrix,
    x0: &Matrix,
    theta_init: &[KernelHyperparams],
) -> Result<(Vec<KernelHyperparams>, Vec<LogRow>)> {
    check_theta(z_star, theta_init)?;
    if z_star.ncols() != x0.ncols() {
        return Err(Error::dims("virtual targets and X0 have different column counts"));
    }
    let start = Instant::now();
    let results: Vec<(KernelHyperparams, Vec<LogRow>)> = theta_init
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let z: Vector = z_star.row(i).transpose();
            optimize_one(config, t, x0, &z, i, start)
        })
        .collect();
    let (theta, logs): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok((theta, logs.into_iter().flatten().collect()))
}

// ----------------------------------------------------------------------------
// Full pipeline
// ----------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainedIgpk {
    pub model: KoopmanModel,
    pub stage1: Stage1Result,
    pub theta_init: Vec<KernelHyperparams>,
    pub log: Vec<LogRow>,
    /// Lifted training matrices under the final observables.
    pub phi: Matrix,
    pub phi_plus: Matrix,
}

/// Stage 1, stage 2, then eDMD on the optimized observables.
pub fn train_igpk(config: &IgpkConfig, data: &TrajectoryDataset) -> Result<TrainedIgpk> {
    config.validate()?;
    data.validate()?;
    let theta_init = initial_theta(config, data);
    let stage1 = optimize_virtual_targets(config, &theta_init, data)?;
    if !stage1.best_cost.is_finite() {
        return Err(Error::TrainingDiverged("stage-1 cost is not finite".into()));
    }
    let (theta, log2) = optimize_hyperparameters(config, &stage1.z, &data.x0, &theta_init)?;
    let policy = SpdPolicy::default();
    let bank = theta
        .iter()
        .enumerate()
        .map(|(i, t)| GpObservable::new(data.x0.clone(), stage1.z.row(i).transpose(), t.clone(), &policy))
        .collect::<Result<Vec<_>>>()?;
    let observables = Observables::Gp(bank);
    let phi = observables.lift_mean(&data.x)?;
    let phi_plus = observables.lift_mean(&data.x_plus)?;
    let (k, c) = edmd_fit(&phi, &phi_plus, &data.x)?;
    if k.iter().chain(c.iter()).any(|v| !v.is_finite()) {
        return Err(Error::TrainingDiverged("Koopman matrices are not finite".into()));
    }
    let model = KoopmanModel::new(k, c, observables)?;
    let mut log = stage1.log.clone();
    log.extend(log2);
    Ok(TrainedIgpk {
        model,
        stage1,
        theta_init,
        log,
        phi,
        phi_plus,
    })
}
