//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::igpk::IgpkConfig;
use crate::systems::{NoiseKind, NoiseSpec, PredatorPreyParams, System};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemName {
    Scalar,
    PredatorPrey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub name: SystemName,
    /// Only read for the predator-prey system.
    #[serde(default)]
    pub predator_prey: PredatorPreyParams,
}

impl SystemSpec {
    pub fn system(&self) -> System {
        match self.name {
            SystemName::Scalar => System::Scalar,
            SystemName::PredatorPrey => System::PredatorPrey(self.predator_prey),
        }
    }
}

/// How trajectories are generated and split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Protocol {
    /// Per-dimension `[lo, hi]` bounds of the uniform initial conditions.
    pub bounds: Vec<[f64; 2]>,
    pub n_t: usize,
    pub n_steps: usize,
    /// Sampling interval; ignored by discrete-time systems.
    #[serde(default)]
    pub dt: f64,
    /// The first `n_train` trajectories train, the rest test.
    pub n_train: usize,
    /// Applied to the training split only.
    #[serde(default = "NoiseSpec::none")]
    pub noise: NoiseSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Igpk(IgpkConfig),
    PolyEdmd {
        degree: usize,
    },
    RbfEdmd {
        k: usize,
        #[serde(default = "default_kmeans_iters")]
        kmeans_iters: usize,
    },
}

fn default_kmeans_iters() -> usize {
    100
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Igpk(_) => "igpk",
            ModelSpec::PolyEdmd { .. } => "poly_edmd",
            ModelSpec::RbfEdmd { .. } => "rbf_edmd",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSpec {
    pub nlpd_jitter: f64,
    pub calibration_levels: Vec<f64>,
    /// Normalize cumulative NRMSE by the full-trajectory range instead of the
    /// range up to each step.
    pub cumulative_full_range: bool,
}

impl Default for MetricsSpec {
    fn default() -> Self {
        MetricsSpec {
            nlpd_jitter: 1e-9,
            calibration_levels: (1..10).map(|i| i as f64 / 10.0).collect(),
            cumulative_full_range: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub system: SystemSpec,
    pub protocol: Protocol,
    pub model: ModelSpec,
    #[serde(default)]
    pub metrics: MetricsSpec,
}

/// Independent seed streams derived from the global seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    InitialConditions = 1,
    Noise = 2,
    Model = 3,
}

/// SplitMix64 finalizer applied to `seed` offset by the stream id.
pub fn derive_seed(seed: u64, stream: SeedStream) -> u64 {
    let mut z = seed.wrapping_add((stream as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", origin.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn n_test(&self) -> usize {
        self.protocol.n_t - self.protocol.n_train
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::InvalidConfig(format!("{field}: {msg}")));
        let p = &self.protocol;
        let n_x = self.system.system().state_dim();
        if p.bounds.len() != n_x {
            return bad(
                "protocol.bounds",
                format!("{} intervals for a {}-dimensional state", p.bounds.len(), n_x),
            );
        }
        for (d, [lo, hi]) in p.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(&format!("protocol.bounds[{d}]"), format!("[{lo}, {hi}] is not an interval"));
            }
        }
        if p.n_steps == 0 {
            return bad("protocol.n_steps", "must be at least 1".into());
        }
        if p.n_train == 0 || p.n_train >= p.n_t {
            return bad(
                "protocol.n_train",
                format!("needs 0 < n_train < n_t, got {} of {}", p.n_train, p.n_t),
            );
        }
        if self.system.name == SystemName::PredatorPrey && !(p.dt > 0.0 && p.dt.is_finite()) {
            return bad("protocol.dt", format!("must be positive, got {}", p.dt));
        }
        if !(p.noise.intensity_pct >= 0.0 && p.noise.intensity_pct.is_finite()) {
            return bad("protocol.noise.intensity_pct", "must be nonnegative".into());
        }
        match &self.model {
            ModelSpec::Igpk(c) => c.validate().map_err(|e| match e {
                Error::InvalidConfig(m) => Error::InvalidConfig(format!("model: {m}")),
                other => other,
            })?,
            ModelSpec::PolyEdmd { degree } => {
                if *degree == 0 {
                    return bad("model.degree", "must be at least 1".into());
                }
            }
            ModelSpec::RbfEdmd { k, .. } => {
                if *k == 0 || *k > p.n_train * p.n_steps {
                    return bad("model.k", format!("needs 1 <= k <= number of training snapshots, got {k}"));
                }
            }
        }
        let m = &self.metrics;
        if !(m.nlpd_jitter >= 0.0 && m.nlpd_jitter.is_finite()) {
            return bad("metrics.nlpd_jitter", "must be nonnegative".into());
        }
        if m.calibration_levels.iter().any(|&l| !(l > 0.0 && l < 1.0)) {
            return bad("metrics.calibration_levels", "levels must lie in (0, 1)".into());
        }
        Ok(())
    }

    /// Scalar oscillator protocol: 50 trajectories of 50 steps, 30 train.
    pub fn scalar(model: ModelSpec, noise: NoiseSpec) -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir: None,
            system: SystemSpec {
                name: SystemName::Scalar,
                predator_prey: PredatorPreyParams::default(),
            },
            protocol: Protocol {
                bounds: vec![[-5.0, 5.0]],
                n_t: 50,
                n_steps: 50,
                dt: 0.0,
                n_train: 30,
                noise,
            },
            model,
            metrics: MetricsSpec::default(),
        }
    }

    /// Predator-prey protocol: 200 trajectories of 100 RK4 steps at 0.2 s, 80 train.
    pub fn predator_prey(model: ModelSpec, noise: NoiseSpec) -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir: None,
            system: SystemSpec {
                name: SystemName::PredatorPrey,
                predator_prey: PredatorPreyParams::default(),
            },
            protocol: Protocol {
                bounds: vec![[0.1, 4.0], [0.1, 3.0]],
                n_t: 200,
                n_steps: 100,
                dt: 0.2,
                n_train: 80,
                noise,
            },
            model,
            metrics: MetricsSpec::default(),
        }
    }
}

/// iGPK settings used by the reproduction runs for each benchmark.
pub fn igpk_defaults(system: SystemName) -> IgpkConfig {
    match system {
        SystemName::Scalar => IgpkConfig {
            n_z: 20,
            stage1_iters: 2000,
            stage2_iters: 50,
            lengthscale_factor: 0.35,
            sgd: crate::optim::SgdConfig { lr: 1.0, momentum: 0.9 },
            adam: crate::optim::AdamConfig { lr: 2e-3, ..Default::default() },
            ..IgpkConfig::default()
        },
        SystemName::PredatorPrey => IgpkConfig {
            n_z: 12,
            stage1_iters: 6000,
            stage2_iters: 0,
            lengthscale_factor: 1.0,
            sgd: crate::optim::SgdConfig { lr: 10.0, momentum: 0.9 },
            ..IgpkConfig::default()
        },
    }
}

pub fn noise(kind: NoiseKind, intensity_pct: f64) -> NoiseSpec {
    NoiseSpec {
        kind,
        intensity_pct,
        seed: 0,
    }
}
