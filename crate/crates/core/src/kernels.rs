//! ARD squared-exponential (Gaussian RBF) kernel.
//!
//! Points are stored as matrix columns. All hyperparameters live in log
//! space so optimizer steps are unconstrained.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Log-parameterized kernel hyperparameters of one GP observable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparams {
    pub log_lengthscales: Vec<f64>,
    pub log_signal_var: f64,
    pub log_noise_var: f64,
}

impl KernelHyperparams {
    pub fn new(lengthscales: &[f64], signal_var: f64, noise_var: f64) -> Self {
        KernelHyperparams {
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
            log_signal_var: signal_var.ln(),
            log_noise_var: noise_var.ln(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    /// Number of free hyperparameters (`n_x + 2`).
    pub fn n_params(&self) -> usize {
        self.log_lengthscales.len() + 2
    }

    pub fn signal_var(&self) -> f64 {
        self.log_signal_var.exp()
    }

    pub fn noise_var(&self) -> f64 {
        self.log_noise_var.exp()
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|l| l.exp()).collect()
    }

    /// Flat parameter vector: lengthscales, then signal, then noise.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.log_lengthscales.clone();
        v.push(self.log_signal_var);
        v.push(self.log_noise_var);
        v
    }

    pub fn from_slice(p: &[f64]) -> Result<Self> {
        if p.len() < 3 {
            return Err(Error::dims(format!(
                "hyperparameter vector needs at least 3 entries, got {}",
                p.len()
            )));
        }
        let n = p.len() - 2;
        Ok(KernelHyperparams {
            log_lengthscales: p[..n].to_vec(),
            log_signal_var: p[n],
            log_noise_var: p[n + 1],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

fn check_dim(rows: usize, theta: &KernelHyperparams, what: &str) -> Result<()> {
    if rows != theta.input_dim() {
        return Err(Error::dims(format!(
            "{what} has dimension {rows}, kernel expects {}",
            theta.input_dim()
        )));
    }
    Ok(())
}

/// `sigma_f^2 exp(-1/2 sum_d (x_d - y_d)^2 / l_d^2)`; noise is not included.
pub fn rbf_eval(x: &[f64], x2: &[f64], theta: &KernelHyperparams) -> Result<f64> {
    check_dim(x.len(), theta, "first point")?;
    check_dim(x2.len(), theta, "second point")?;
    let r2: f64 = x
        .iter()
        .zip(x2)
        .zip(&theta.log_lengthscales)
        .map(|((a, b), ll)| {
            let d = (a - b) / ll.exp();
            d * d
        })
        .sum();
    Ok(theta.signal_var() * (-0.5 * r2).exp())
}

/// Cross-covariance matrix between the columns of `xa` and `xb`.
pub fn gram(xa: &Matrix, xb: &Matrix, theta: &KernelHyperparams) -> Result<Matrix> {
    check_dim(xa.nrows(), theta, "Xa")?;
    check_dim(xb.nrows(), theta, "Xb")?;
    let inv_ls: Vec<f64> = theta.log_lengthscales.iter().map(|l| (-l).exp()).collect();
    let sf2 = theta.signal_var();
    let n_x = xa.nrows();
    let (m, p) = (xa.ncols(), xb.ncols());
    let mut k = Matrix::zeros(m, p);
    for j in 0..p {
        let b = xb.column(j);
        for i in 0..m {
            let a = xa.column(i);
            let mut r2 = 0.0;
            for d in 0..n_x {
                let diff = (a[d] - b[d]) * inv_ls[d];
                r2 += diff * diff;
            }
            k[(i, j)] = sf2 * (-0.5 * r2).exp();
        }
    }
    Ok(k)
}

/// `K(X0, X0) + sigma_n^2 I`.
pub fn noisy_gram(x0: &Matrix, theta: &KernelHyperparams) -> Result<Matrix> {
    let mut k = gram(x0, x0, theta)?;
    let sn2 = theta.noise_var();
    for i in 0..k.nrows() {
        k[(i, i)] += sn2;
    }
    Ok(k)
}

/// Derivatives of the noise-augmented Gram `K(X0, X0) + sigma_n^2 I` with
/// respect to each log-hyperparameter, in [`KernelHyperparams::to_vec`] order.
pub fn gram_grad_hyper(x0: &Matrix, theta: &KernelHyperparams) -> Result<Vec<Matrix>> {
    let k = gram(x0, x0, theta)?;
    let n = x0.ncols();
    let mut grads = Vec::with_capacity(theta.n_params());
    for (d, ll) in theta.log_lengthscales.iter().enumerate() {
        let inv_l2 = (-2.0 * ll).exp();
        let g = Matrix::from_fn(n, n, |i, j| {
            let diff = x0[(d, i)] - x0[(d, j)];
            k[(i, j)] * diff * diff * inv_l2
        });
        grads.push(g);
    }
    grads.push(k);
    grads.push(Matrix::identity(n, n) * theta.noise_var());
    Ok(grads)
}
