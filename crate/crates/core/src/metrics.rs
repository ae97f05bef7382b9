//! Trajectory-level evaluation metrics.

use nalgebra::Cholesky;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Open-loop predictive distribution for steps `0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutPrediction {
    pub means: Vec<Vector>,
    pub covs: Vec<Matrix>,
}

impl RolloutPrediction {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    /// True when every covariance is exactly zero.
    pub fn is_deterministic(&self) -> bool {
        self.covs.iter().all(|c| c.iter().all(|&v| v == 0.0))
    }
}

fn check_lengths(truth: &[Vector], pred: &[Vector], min_steps: usize) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::dims(format!(
            "truth has {} steps, prediction {}",
            truth.len(),
            pred.len()
        )));
    }
    if truth.len() < min_steps {
        return Err(Error::dims(format!("need at least {min_steps} steps")));
    }
    for (t, p) in truth.iter().zip(pred) {
        if t.len() != p.len() {
            return Err(Error::dims("state dimensions differ between truth and prediction"));
        }
    }
    Ok(())
}

/// Scalar used for the range normalization: the value itself for scalar
/// states, the Euclidean norm otherwise.
fn range_scalar(x: &Vector) -> f64 {
    if x.len() == 1 {
        x[0]
    } else {
        x.norm()
    }
}

fn range_of(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    hi - lo
}

/// Percent NRMSE of a trajectory: RMS of the state-error norm over all
/// steps, divided by the range of the ground truth.
pub fn nrmse_pct(truth: &[Vector], pred_means: &[Vector]) -> Result<f64> {
    check_lengths(truth, pred_means, 2)?;
    let range = range_of(truth.iter().map(range_scalar));
    if !(range > 0.0) {
        return Err(Error::DegenerateRange);
    }
    let mse = truth
        .iter()
        .zip(pred_means)
        .map(|(t, p)| (t - p).norm_squared())
        .sum::<f64>()
        / truth.len() as f64;
    Ok(mse.sqrt() / range * 100.0)
}

/// Percent NRMSE of each state dimension separately, normalized by that
/// dimension's own range. Degenerate dimensions give `NaN`.
pub fn nrmse_pct_per_dim(truth: &[Vector], pred_means: &[Vector]) -> Result<Vec<f64>> {
    check_lengths(truth, pred_means, 2)?;
    let n_x = truth[0].len();
    Ok((0..n_x)
        .map(|d| {
            let range = range_of(truth.iter().map(|t| t[d]));
            let mse = truth
                .iter()
                .zip(pred_means)
                .map(|(t, p)| (t[d] - p[d]).powi(2))
                .sum::<f64>()
                / truth.len() as f64;
            if range > 0.0 {
                mse.sqrt() / range * 100.0
            } else {
                f64::NAN
            }
        })
        .collect())
}

/// NRMSE over steps `0..=k` for every `k`. With `full_range` the
/// normalization uses the whole trajectory; otherwise only steps `0..=k`.
/// Entries with a zero range are `NaN`.
pub fn cumulative_nrmse_pct(
    truth: &[Vector],
    pred_means: &[Vector],
    full_range: bool,
) -> Result<Vec<f64>> {
    check_lengths(truth, pred_means, 2)?;
    let full = range_of(truth.iter().map(range_scalar));
    let mut out = Vec::with_capacity(truth.len());
    let mut sq = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (k, (t, p)) in truth.iter().zip(pred_means).enumerate() {
        sq += (t - p).norm_squared();
        let s = range_scalar(t);
        lo = lo.min(s);
        hi = hi.max(s);
        let range = if full_range { full } else { hi - lo };
        let rmse = (sq / (k + 1) as f64).sqrt();
        out.push(if range > 0.0 {
            rmse / range * 100.0
        } else {
            f64::NAN
        });
    }
    Ok(out)
}

/// Average Gaussian negative log predictive density over the steps of one
/// trajectory, with `jitter * I` added to each predictive covariance.
pub fn nlpd(truth: &[Vector], pred: &RolloutPrediction, jitter: f64) -> Result<f64> {
    check_lengths(truth, &pred.means, 1)?;
    if pred.covs.len() != pred.means.len() {
        return Err(Error::dims("prediction has mismatched mean/covariance lengths"));
    }
    let mut total = 0.0;
    for ((x, mean), cov) in truth.iter().zip(&pred.means).zip(&pred.covs) {
        let n = x.len();
        if cov.shape() != (n, n) {
            return Err(Error::dims("covariance dimension does not match the state"));
        }
        let mut v = cov.clone();
        for i in 0..n {
            v[(i, i)] += jitter;
        }
        let chol = Cholesky::new(v).ok_or(Error::NotSpd { jitter })?;
        let l = chol.l_dirty();
        let logdet: f64 = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
        let r = x - mean;
        let quad = r.dot(&chol.solve(&r));
        total += 0.5 * (quad + logdet + n as f64 * LN_2PI);
    }
    Ok(total / truth.len() as f64)
}

/// Empirical coverage of central Gaussian intervals at each nominal level,
/// pooled over trajectories, steps and state dimensions. Intervals are
/// closed, so a zero-width interval covers a value equal to the mean.
pub fn calibration_curve(
    truths: &[Vec<Vector>],
    preds: &[RolloutPrediction],
    levels: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if truths.len() != preds.len() {
        return Err(Error::dims(format!(
            "{} truths for {} predictions",
            truths.len(),
            preds.len()
        )));
    }
    let std_normal = Normal::standard();
    let mut out = Vec::with_capacity(levels.len());
    for &p in levels {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "nominal coverage must be in (0, 1), got {p}"
            )));
        }
        let z = std_normal.inverse_cdf(0.5 * (1.0 + p));
        let (mut hits, mut total) = (0usize, 0usize);
        for (truth, pred) in truths.iter().zip(preds) {
            check_lengths(truth, &pred.means, 1)?;
            for ((x, mean), cov) in truth.iter().zip(&pred.means).zip(&pred.covs) {
                for d in 0..x.len() {
                    let half = z * cov[(d, d)].max(0.0).sqrt();
                    if (x[d] - mean[d]).abs() <= half {
                        hits += 1;
                    }
                    total += 1;
                }
            }
        }
        out.push((p, hits as f64 / total.max(1) as f64));
    }
    Ok(out)
}

/// Mean of `|empirical - nominal|` over a calibration curve.
pub fn mean_abs_calibration_error(curve: &[(f64, f64)]) -> f64 {
    curve.iter().map(|(n, e)| (n - e).abs()).sum::<f64>() / curve.len().max(1) as f64
}

/// Mean and sample standard deviation (zero for a single value).
pub fn summarize(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}
