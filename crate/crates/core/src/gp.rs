//! Single-output, zero-mean Gaussian-process observables.

use crate::error::{Error, Result};
use crate::kernels::{gram, gram_grad_hyper, noisy_gram, KernelHyperparams};
use crate::numerics::{Matrix, SpdFactor, SpdPolicy, Vector};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// One lifted coordinate: a GP conditioned on `(train_inputs, virtual_targets)`.
///
/// Immutable after construction; the Cholesky factor of the noisy Gram and
/// the weight vector `(K + sigma_n^2 I)^{-1} z` are computed once.
#[derive(Debug, Clone)]
pub struct GpObservable {
    train_inputs: Matrix,
    virtual_targets: Vector,
    theta: KernelHyperparams,
    factor: SpdFactor,
    alpha: Vector,
}

impl GpObservable {
    pub fn new(
        train_inputs: Matrix,
        virtual_targets: Vector,
        theta: KernelHyperparams,
        policy: &SpdPolicy,
    ) -> Result<Self> {
        if virtual_targets.len() != train_inputs.ncols() {
            return Err(Error::dims(format!(
                "{} virtual targets for {} training inputs",
                virtual_targets.len(),
                train_inputs.ncols()
            )));
        }
        if !theta.is_finite() {
            return Err(Error::NonFinite("kernel hyperparameters".into()));
        }
        let factor = SpdFactor::new(&noisy_gram(&train_inputs, &theta)?, policy)?;
        let alpha = factor.solve_vec(&virtual_targets)?;
        Ok(GpObservable {
            train_inputs,
            virtual_targets,
            theta,
            factor,
            alpha,
        })
    }

    pub fn train_inputs(&self) -> &Matrix {
        &self.train_inputs
    }

    pub fn virtual_targets(&self) -> &Vector {
        &self.virtual_targets
    }

    pub fn theta(&self) -> &KernelHyperparams {
        &self.theta
    }

    pub fn input_dim(&self) -> usize {
        self.train_inputs.nrows()
    }

    /// Posterior mean at each column of `xq`.
    pub fn posterior_mean(&self, xq: &Matrix) -> Result<Vector> {
        let kqx = gram(xq, &self.train_inputs, &self.theta)?;
        Ok(kqx * &self.alpha)
    }

    /// Posterior variance at each column of `xq`, floored at zero.
    pub fn posterior_var(&self, xq: &Matrix) -> Result<Vector> {
        let kxq = gram(&self.train_inputs, xq, &self.theta)?;
        let v = self.factor.solve_lower(&kxq);
        let sf2 = self.theta.signal_var();
        Ok(Vector::from_iterator(
            xq.ncols(),
            v.column_iter().map(|c| (sf2 - c.norm_squared()).max(0.0)),
        ))
    }
}

/// Linear map from virtual targets to posterior means at `xq`.
///
/// Returns the `n_T x m` matrix `W = (K(X0,X0) + sigma_n^2 I)^{-1} K(X0, Xq)`
/// so that the posterior mean row is `z^T W`.
pub fn posterior_mean_operator(
    x0: &Matrix,
    theta: &KernelHyperparams,
    xq: &Matrix,
    policy: &SpdPolicy,
) -> Result<Matrix> {
    let factor = SpdFactor::new(&noisy_gram(x0, theta)?, policy)?;
    factor.solve(&gram(x0, xq, theta)?)
}

fn check_targets(x0: &Matrix, z: &Vector) -> Result<()> {
    if z.len() != x0.ncols() {
        return Err(Error::dims(format!(
            "{} targets for {} training inputs",
            z.len(),
            x0.ncols()
        )));
    }
    Ok(())
}

/// Negative log marginal likelihood of `z` under the GP prior with noise.
pub fn nlml(theta: &KernelHyperparams, x0: &Matrix, z: &Vector) -> Result<f64> {
    check_targets(x0, z)?;
    let factor = SpdFactor::new(&noisy_gram(x0, theta)?, &SpdPolicy::default())?;
    let alpha = factor.solve_vec(z)?;
    Ok(0.5 * (z.dot(&alpha) + factor.logdet() + z.len() as f64 * LN_2PI))
}

/// NLML and its gradient with respect to the log-hyperparameters.
pub fn nlml_and_grad(
    theta: &KernelHyperparams,
    x0: &Matrix,
    z: &Vector,
) -> Result<(f64, Vec<f64>)> {
    check_targets(x0, z)?;
    let factor = SpdFactor::new(&noisy_gram(x0, theta)?, &SpdPolicy::default())?;
    let alpha = factor.solve_vec(z)?;
    let value = 0.5 * (z.dot(&alpha) + factor.logdet() + z.len() as f64 * LN_2PI);
    // d/dp = 1/2 tr((K^-1 - a a^T) dK/dp)
    let mut inner = factor.inverse();
    inner.ger(-1.0, &alpha, &alpha, 1.0);
    let grad = gram_grad_hyper(x0, theta)?
        .iter()
        .map(|dk| 0.5 * inner.component_mul(dk).sum())
        .collect();
    Ok((value, grad))
}

pub fn nlml_grad(theta: &KernelHyperparams, x0: &Matrix, z: &Vector) -> Result<Vec<f64>> {
    nlml_and_grad(theta, x0, z).map(|(_, g)| g)
}
