//! Finite-dimensional Koopman models: eDMD fitting, lifting of initial
//! conditions and linear propagation of Gaussian states.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dictionaries::{poly_lift, thinplate_lift, PolyDictionary, RbfDictionary};
use crate::error::{Error, Result};
use crate::gp::GpObservable;
use crate::kernels::KernelHyperparams;
use crate::metrics::RolloutPrediction;
use crate::numerics::{pinv, symmetrize, Matrix, SpdPolicy, Vector};

/// Deterministic dictionary used by the eDMD baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dictionary {
    Poly(PolyDictionary),
    Rbf(RbfDictionary),
}

impl Dictionary {
    pub fn lift(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            Dictionary::Poly(p) => {
                if x.nrows() != p.n_x {
                    return Err(Error::dims(format!(
                        "state dimension {} for a {}-dimensional polynomial dictionary",
                        x.nrows(),
                        p.n_x
                    )));
                }
                poly_lift(x, p.degree)
            }
            Dictionary::Rbf(r) => thinplate_lift(x, r),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Dictionary::Poly(p) => p.dim(),
            Dictionary::Rbf(r) => r.dim(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Dictionary::Poly(p) => p.n_x,
            Dictionary::Rbf(r) => r.centers.nrows(),
        }
    }
}

/// How the state is lifted.
#[derive(Debug, Clone)]
pub enum Observables {
    Dictionary(Dictionary),
    Gp(Vec<GpObservable>),
}

impl Observables {
    pub fn dim(&self) -> usize {
        match self {
            Observables::Dictionary(d) => d.dim(),
            Observables::Gp(bank) => bank.len(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Observables::Dictionary(d) => d.input_dim(),
            Observables::Gp(bank) => bank.first().map_or(0, |g| g.input_dim()),
        }
    }

    /// Lifted means of every column of `x` (`n_z x m`).
    pub fn lift_mean(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            Observables::Dictionary(d) => d.lift(x),
            Observables::Gp(bank) => {
                let mut out = Matrix::zeros(bank.len(), x.ncols());
                for (i, gp) in bank.iter().enumerate() {
                    out.set_row(i, &gp.posterior_mean(x)?.transpose());
                }
                Ok(out)
            }
        }
    }
}

/// Mean and covariance of a lifted or original-space state.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub mean: Vector,
    pub cov: Matrix,
}

impl GaussianState {
    pub fn deterministic(mean: Vector) -> Self {
        let n = mean.len();
        GaussianState {
            mean,
            cov: Matrix::zeros(n, n),
        }
    }
}

/// One propagation step: the lifted state and its projection.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatedStep {
    pub lifted: GaussianState,
    pub output: GaussianState,
}

#[derive(Debug, Clone)]
pub struct KoopmanModel {
    pub k: Matrix,
    pub c: Matrix,
    pub observables: Observables,
}

/// `K = Phi+ pinv(Phi)`, `C = X pinv(Phi)`.
pub fn edmd_fit(phi: &Matrix, phi_plus: &Matrix, x: &Matrix) -> Result<(Matrix, Matrix)> {
    if phi.ncols() != phi_plus.ncols() || phi.ncols() != x.ncols() {
        return Err(Error::dims(format!(
            "snapshot counts differ: Phi {}, Phi+ {}, X {}",
            phi.ncols(),
            phi_plus.ncols(),
            x.ncols()
        )));
    }
    if phi.nrows() != phi_plus.nrows() {
        return Err(Error::dims("Phi and Phi+ have different lifted dimensions"));
    }
    let p = pinv(phi)?;
    Ok((phi_plus * &p, x * &p))
}

impl KoopmanModel {
    pub fn new(k: Matrix, c: Matrix, observables: Observables) -> Result<Self> {
        let n_z = observables.dim();
        if k.shape() != (n_z, n_z) {
            return Err(Error::dims(format!(
                "K is {}x{} but there are {n_z} observables",
                k.nrows(),
                k.ncols()
            )));
        }
        if c.ncols() != n_z || c.nrows() != observables.input_dim() {
            return Err(Error::dims(format!(
                "C is {}x{}, expected {}x{n_z}",
                c.nrows(),
                c.ncols(),
                observables.input_dim()
            )));
        }
        Ok(KoopmanModel { k, c, observables })
    }

    /// eDMD with a fixed dictionary on snapshot pairs `(X, X+)`.
    pub fn fit_dictionary(dict: Dictionary, x: &Matrix, x_plus: &Matrix) -> Result<Self> {
        let phi = dict.lift(x)?;
        let phi_plus = dict.lift(x_plus)?;
        let (k, c) = edmd_fit(&phi, &phi_plus, x)?;
        KoopmanModel::new(k, c, Observables::Dictionary(dict))
    }

    pub fn n_z(&self) -> usize {
        self.k.nrows()
    }

    pub fn n_x(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_probabilistic(&self) -> bool {
        matches!(self.observables, Observables::Gp(_))
    }

    /// Lift one initial condition. GP banks give a diagonal covariance of
    /// posterior variances; dictionaries give a zero covariance.
    pub fn lift_initial(&self, x0: &[f64]) -> Result<GaussianState> {
        if x0.len() != self.n_x() {
            return Err(Error::dims(format!(
                "initial condition has {} entries, model state dimension is {}",
                x0.len(),
                self.n_x()
            )));
        }
        let xq = Matrix::from_column_slice(x0.len(), 1, x0);
        match &self.observables {
            Observables::Dictionary(d) => Ok(GaussianState::deterministic(d.lift(&xq)?.column(0).into())),
            Observables::Gp(bank) => {
                let n_z = bank.len();
                let mut mean = Vector::zeros(n_z);
                let mut cov = Matrix::zeros(n_z, n_z);
                for (i, gp) in bank.iter().enumerate() {
                    mean[i] = gp.posterior_mean(&xq)?[0];
                    cov[(i, i)] = gp.posterior_var(&xq)?[0];
                }
                Ok(GaussianState { mean, cov })
            }
        }
    }

    fn project(&self, lifted: &GaussianState) -> GaussianState {
        let mut cov = &self.c * &lifted.cov * self.c.transpose();
        symmetrize(&mut cov);
        GaussianState {
            mean: &self.c * &lifted.mean,
            cov,
        }
    }

    /// `z <- K z`, `V <- K V K^T` for `steps` steps; entry 0 is the initial state.
    pub fn propagate(&self, init: &GaussianState, steps: usize) -> Result<Vec<PropagatedStep>> {
        let n_z = self.n_z();
        if init.mean.len() != n_z || init.cov.shape() != (n_z, n_z) {
            return Err(Error::dims(format!(
                "initial state dimension {} does not match n_z = {n_z}",
                init.mean.len()
            )));
        }
        let kt = self.k.transpose();
        let mut out = Vec::with_capacity(steps + 1);
        let mut state = init.clone();
        out.push(PropagatedStep {
            output: self.project(&state),
            lifted: state.clone(),
        });
        for _ in 0..steps {
            let mean = &self.k * &state.mean;
            let mut cov = &self.k * &state.cov * &kt;
            symmetrize(&mut cov);
            state = GaussianState { mean, cov };
            out.push(PropagatedStep {
                output: self.project(&state),
                lifted: state.clone(),
            });
        }
        Ok(out)
    }

    /// Open-loop prediction in the original state space.
    pub fn rollout(&self, x0: &[f64], steps: usize) -> Result<RolloutPrediction> {
        let init = self.lift_initial(x0)?;
        let traj = self.propagate(&init, steps)?;
        let (means, covs) = traj
            .into_iter()
            .map(|s| (s.output.mean, s.output.cov))
            .unzip();
        Ok(RolloutPrediction { means, covs })
    }
}

// ----------------------------------------------------------------------------
// Model file
// ----------------------------------------------------------------------------

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredMatrix {
    rows: usize,
    cols: usize,
    /// Row-major entries.
    data: Vec<f64>,
}

impl From<&Matrix> for StoredMatrix {
    fn from(m: &Matrix) -> Self {
        StoredMatrix {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }
}

impl StoredMatrix {
    fn to_matrix(&self, what: &str) -> Result<Matrix> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::dims(format!(
                "{what}: {} entries for a {}x{} matrix",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(Matrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredGpo {
    virtual_targets: Vec<f64>,
    theta: KernelHyperparams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum StoredObservables {
    Dictionary { dictionary: Dictionary },
    Gp {
        train_inputs: StoredMatrix,
        spd_jitter: f64,
        spd_max_jitter_doublings: u32,
        observables: Vec<StoredGpo>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredModel {
    format_version: u32,
    n_x: usize,
    n_z: usize,
    k: StoredMatrix,
    c: StoredMatrix,
    observables: StoredObservables,
}

impl KoopmanModel {
    pub fn to_json(&self) -> Result<String> {
        let observables = match &self.observables {
            Observables::Dictionary(d) => StoredObservables::Dictionary {
                dictionary: d.clone(),
            },
            Observables::Gp(bank) => {
                let first = bank
                    .first()
                    .ok_or_else(|| Error::DegenerateData("empty GP bank".into()))?;
                let policy = SpdPolicy::default();
                StoredObservables::Gp {
                    train_inputs: first.train_inputs().into(),
                    spd_jitter: policy.jitter,
                    spd_max_jitter_doublings: policy.max_jitter_doublings,
                    observables: bank
                        .iter()
                        .map(|g| StoredGpo {
                            virtual_targets: g.virtual_targets().as_slice().to_vec(),
                            theta: g.theta().clone(),
                        })
                        .collect(),
                }
            }
        };
        let stored = StoredModel {
            format_version: MODEL_FORMAT_VERSION,
            n_x: self.n_x(),
            n_z: self.n_z(),
            k: (&self.k).into(),
            c: (&self.c).into(),
            observables,
        };
        serde_json::to_string_pretty(&stored)
            .map_err(|e| Error::format("model", e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let stored: StoredModel =
            serde_json::from_str(text).map_err(|e| Error::format("model", e.to_string()))?;
        if stored.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::format(
                "model",
                format!("unsupported format version {}", stored.format_version),
            ));
        }
        let k = stored.k.to_matrix("K")?;
        let c = stored.c.to_matrix("C")?;
        let observables = match stored.observables {
            StoredObservables::Dictionary { dictionary } => Observables::Dictionary(dictionary),
            StoredObservables::Gp {
                train_inputs,
                spd_jitter,
                spd_max_jitter_doublings,
                observables,
            } => {
                let x0 = train_inputs.to_matrix("train_inputs")?;
                let policy = SpdPolicy {
                    jitter: spd_jitter,
                    max_jitter_doublings: spd_max_jitter_doublings,
                };
                let bank = observables
                    .into_iter()
                    .map(|g| {
                        GpObservable::new(
                            x0.clone(),
                            Vector::from_vec(g.virtual_targets),
                            g.theta,
                            &policy,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                Observables::Gp(bank)
            }
        };
        let model = KoopmanModel::new(k, c, observables)?;
        if model.n_x() != stored.n_x || model.n_z() != stored.n_z {
            return Err(Error::dims("stored dimensions disagree with matrices"));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(path, message),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::min_eigenvalue;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_dict_model(k: Matrix, c: Matrix) -> KoopmanModel {
        // degree-1 polynomial in 1-D has 2 features; only used for shape plumbing
        let n = k.nrows();
        let dict = Dictionary::Poly(PolyDictionary { degree: 1, n_x: n - 1 });
        KoopmanModel::new(k, c, Observables::Dictionary(dict)).unwrap()
    }

    #[test]
    fn identity_data_gives_identity_operator() {
        let phi = Matrix::identity(3, 3);
        let (k, c) = edmd_fit(&phi, &phi, &Matrix::from_element(1, 3, 1.0)).unwrap();
        assert!((k - Matrix::identity(3, 3)).norm() < 1e-14);
        assert_eq!(c.shape(), (1, 3));
    }

    #[test]
    fn recovers_linear_dynamics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Matrix::from_row_slice(2, 2, &[0.9, 0.1, -0.2, 0.8]);
        let x = Matrix::from_fn(2, 40, |_, _| rng.random_range(-1.0..1.0));
        let xp = &a * &x;
        let dict = Dictionary::Poly(PolyDictionary { degree: 1, n_x: 2 });
        let model = KoopmanModel::fit_dictionary(dict, &x, &xp).unwrap();
        let block = model.k.view((1, 1), (2, 2));
        assert!((block - &a).amax() < 1e-10);
        // constant row maps to itself
        assert!((model.k[(0, 0)] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn scalar_dynamics_on_row_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi = Matrix::from_fn(3, 10, |_, _| rng.random_range(-1.0..1.0));
        let (k, _) = edmd_fit(&phi, &(&phi * 2.0), &Matrix::zeros(1, 10)).unwrap();
        assert!((k - Matrix::identity(3, 3) * 2.0).amax() < 1e-10);
    }

    #[test]
    fn edmd_is_least_squares_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let phi = Matrix::from_fn(4, 30, |_, _| rng.random_range(-1.0..1.0));
        let phi_plus = Matrix::from_fn(4, 30, |_, _| rng.random_range(-1.0..1.0));
        let (k, _) = edmd_fit(&phi, &phi_plus, &Matrix::zeros(1, 30)).unwrap();
        let base = (&phi_plus - &k * &phi).norm();
        for _ in 0..50 {
            let mut dk = Matrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
            dk *= 1e-3 / dk.norm();
            let perturbed = (&phi_plus - (&k + dk) * &phi).norm();
            assert!(perturbed >= base);
        }
    }

    #[test]
    fn edmd_dimension_mismatch() {
        assert!(edmd_fit(&Matrix::zeros(2, 3), &Matrix::zeros(2, 4), &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn constant_sequence_for_identity() {
        let model = identity_dict_model(Matrix::identity(2, 2), Matrix::from_row_slice(1, 2, &[0.0, 1.0]));
        let init = GaussianState {
            mean: Vector::from_vec(vec![1.0, 0.3]),
            cov: Matrix::identity(2, 2) * 0.1,
        };
        let traj = model.propagate(&init, 5).unwrap();
        assert_eq!(traj.len(), 6);
        for s in &traj {
            assert_eq!(s.lifted, init);
            assert!((s.output.mean[0] - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn geometric_variance_decay() {
        let k = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5]);
        let model = identity_dict_model(k, Matrix::from_row_slice(1, 2, &[0.0, 1.0]));
        let init = GaussianState {
            mean: Vector::from_vec(vec![1.0, 1.0]),
            cov: Matrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
        };
        let traj = model.propagate(&init, 6).unwrap();
        for (step, s) in traj.iter().enumerate() {
            assert!((s.output.cov[(0, 0)] - 0.25f64.powi(step as i32)).abs() < 1e-15);
        }
    }

    #[test]
    fn propagation_matches_naive_recursion_and_stays_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 4;
        let mut k = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let radius = k.clone().complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max);
        k *= 0.95 / radius;
        let g = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let v0 = &g * g.transpose();
        let c = Matrix::from_fn(n - 1, n, |_, _| rng.random_range(-1.0..1.0));
        let dict = Dictionary::Poly(PolyDictionary { degree: 1, n_x: n - 1 });
        let model = KoopmanModel::new(k.clone(), c.clone(), Observables::Dictionary(dict)).unwrap();
        let init = GaussianState {
            mean: Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
            cov: v0.clone(),
        };
        let traj = model.propagate(&init, 30).unwrap();
        let mut v = v0;
        let mut z = init.mean.clone();
        for s in traj.iter() {
            assert!((&s.lifted.cov - &v).amax() < 1e-10);
            assert!((&s.lifted.mean - &z).amax() < 1e-12);
            assert!(min_eigenvalue(&s.lifted.cov) >= -1e-10);
            assert!(min_eigenvalue(&s.output.cov) >= -1e-10);
            assert!((&s.output.cov - &c * &v * c.transpose()).amax() < 1e-10);
            v = &k * &v * k.transpose();
            z = &k * &z;
        }
    }

    #[test]
    fn deterministic_rollout_equals_edmd_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Matrix::from_fn(1, 50, |_, _| rng.random_range(-2.0..2.0));
        let xp = x.map(|v| 0.5 * v - 0.1 * v * v);
        let dict = Dictionary::Poly(PolyDictionary { degree: 3, n_x: 1 });
        let model = KoopmanModel::fit_dictionary(dict.clone(), &x, &xp).unwrap();
        let pred = model.rollout(&[0.7], 10).unwrap();
        let mut z = dict.lift(&Matrix::from_element(1, 1, 0.7)).unwrap();
        for step in 0..=10 {
            assert_eq!(pred.means[step], &model.c * &z);
            assert_eq!(pred.covs[step].amax(), 0.0);
            z = &model.k * &z;
        }
    }

    fn gp_model(rng: &mut ChaCha8Rng) -> KoopmanModel {
        let x0 = Matrix::from_fn(1, 6, |_, j| j as f64 - 2.5);
        let bank: Vec<GpObservable> = (0..3)
            .map(|_| {
                GpObservable::new(
                    x0.clone(),
                    Vector::from_fn(6, |_, _| rng.random_range(-1.0..1.0)),
                    KernelHyperparams::new(&[0.8], rng.random_range(0.5..2.0), 1e-12),
                    &SpdPolicy::default(),
                )
                .unwrap()
            })
            .collect();
        let k = Matrix::from_fn(3, 3, |_, _| rng.random_range(-0.5..0.5));
        let c = Matrix::from_fn(1, 3, |_, _| rng.random_range(-1.0..1.0));
        KoopmanModel::new(k, c, Observables::Gp(bank)).unwrap()
    }

    #[test]
    fn lift_initial_interpolates_and_is_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = gp_model(&mut rng);
        let Observables::Gp(bank) = &model.observables else { unreachable!() };
        let s = model.lift_initial(&[-0.5]).unwrap();
        for i in 0..3 {
            assert!((s.mean[i] - bank[i].virtual_targets()[2]).abs() < 1e-6);
            assert!(s.cov[(i, i)] < 1e-6);
        }
        let far = model.lift_initial(&[500.0]).unwrap();
        for i in 0..3 {
            assert!((far.cov[(i, i)] - bank[i].theta().signal_var()).abs() < 1e-6);
            for j in 0..3 {
                if i != j {
                    assert_eq!(far.cov[(i, j)].to_bits(), 0);
                }
            }
        }
        assert!(model.lift_initial(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn model_file_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = gp_model(&mut rng);
        let text = model.to_json().unwrap();
        let back = KoopmanModel::from_json(&text).unwrap();
        assert_eq!(back.k, model.k);
        assert_eq!(back.c, model.c);
        let a = model.rollout(&[0.37], 20).unwrap();
        let b = back.rollout(&[0.37], 20).unwrap();
        assert_eq!(a, b);

        let x = Matrix::from_fn(2, 30, |_, _| rng.random_range(-1.0..1.0));
        let centers = Matrix::from_fn(2, 4, |_, _| rng.random_range(-1.0..1.0));
        let dict = Dictionary::Rbf(RbfDictionary::new(centers, true, true).unwrap());
        let m = KoopmanModel::fit_dictionary(dict, &x, &x.map(|v| v * 0.9)).unwrap();
        let back = KoopmanModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back.k, m.k);
        assert_eq!(back.observables.dim(), 7);
    }

    #[test]
    fn rejects_unknown_version() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let text = gp_model(&mut rng).to_json().unwrap().replace("\"format_version\": 1", "\"format_version\": 99");
        assert!(KoopmanModel::from_json(&text).is_err());
    }
}
