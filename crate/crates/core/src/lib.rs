//! Probabilistic Koopman operator learning with Gaussian-process observables.
//!
//! The crate learns a finite-dimensional linear model `z+ = K z`, `x = C z`
//! whose lifting functions are Gaussian-process posterior means. The GP
//! training targets live in the unknown lifted space, so they are treated as
//! decision variables ("virtual targets") and fitted by gradient descent on a
//! reduced least-squares functional from which `K` and `C` have been
//! eliminated. Kernel hyperparameters are then tuned per observable by
//! marginal likelihood, and `K`, `C` are recovered by extended DMD.
//!
//! Module map:
//! * [`numerics`]: Cholesky with jitter, SVD pseudo-inverse, ridge solves.
//! * [`kernels`]: ARD squared-exponential kernel and its hyperparameter gradients.
//! * [`gp`]: posterior mean/variance and negative log marginal likelihood.
//! * [`dictionaries`]: polynomial and thin-plate-spline dictionaries for eDMD baselines.
//! * [`koopman`]: eDMD fitting, probabilistic lifting, mean/covariance propagation.
//! * [`optim`]: momentum SGD and Adam.
//! * [`igpk`]: the reduced cost, its gradient and the two-stage trainer.
//! * [`systems`]: benchmark dynamics, RK4, dataset generation and noise.
//! * [`metrics`]: NRMSE, NLPD, calibration curves.
//! * [`cli`]: configuration, file formats and the experiment pipeline.

pub mod cli;
pub mod dictionaries;
pub mod error;
pub mod gp;
pub mod igpk;
pub mod kernels;
pub mod koopman;
pub mod metrics;
pub mod numerics;
pub mod optim;
pub mod systems;

pub use error::{Error, Result};
pub use numerics::{Matrix, Vector};
