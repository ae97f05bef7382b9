//! Generate, train, evaluate and reproduce.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{derive_seed, igpk_defaults, noise, ExperimentConfig, MetricsSpec, ModelSpec, SeedStream, SystemName};
use super::io::{ensure_dir, fmt_real, read_dataset, write_dataset, write_rollout_band, CsvOut, DatasetMeta};
use crate::dictionaries::{kmeans, PolyDictionary, RbfDictionary};
use crate::error::{Error, Result};
use crate::igpk::{train_igpk, IgpkConfig, LogRow};
use crate::koopman::{Dictionary, KoopmanModel};
use crate::metrics::{
    calibration_curve, cumulative_nrmse_pct, mean_abs_calibration_error, nlpd, nrmse_pct, summarize,
    RolloutPrediction,
};
use crate::numerics::Vector;
use crate::systems::{add_noise, sample_initial_conditions, simulate, NoiseKind, NoiseSpec, TrajectoryDataset};

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "IGPK_OUT_DIR";

/// Marker written in place of the subspace-identification GP-Koopman column.
pub const SSID_MARKER: &str = "not implemented";

/// `--out`, then the environment override, then the config, then `out`.
pub fn resolve_out_dir(flag: Option<&Path>, config: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUT_DIR_ENV).filter(|s| !s.is_empty()) {
        return PathBuf::from(p);
    }
    config.map_or_else(|| PathBuf::from("out"), Path::to_path_buf)
}

// ----------------------------------------------------------------------------
// Generate
// ----------------------------------------------------------------------------

/// Noisy training split and clean test split.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: TrajectoryDataset,
    pub test: TrajectoryDataset,
    pub noise: NoiseSpec,
}

pub fn generate(cfg: &ExperimentConfig) -> Result<Splits> {
    cfg.validate()?;
    let p = &cfg.protocol;
    let bounds: Vec<(f64, f64)> = p.bounds.iter().map(|b| (b[0], b[1])).collect();
    let x0 = sample_initial_conditions(&bounds, p.n_t, derive_seed(cfg.seed, SeedStream::InitialConditions))?;
    let all = simulate(&cfg.system.system(), &x0, p.n_steps, p.dt)?;
    let train_idx: Vec<usize> = (0..p.n_train).collect();
    let test_idx: Vec<usize> = (p.n_train..p.n_t).collect();
    let clean_train = all.select(&train_idx)?;
    let test = all.select(&test_idx)?;
    let noise = NoiseSpec {
        seed: derive_seed(cfg.seed, SeedStream::Noise),
        ..p.noise
    };
    let train = add_noise(&clean_train, &noise)?;
    Ok(Splits { train, test, noise })
}

fn meta(cfg: &ExperimentConfig, data: &TrajectoryDataset, split: &str, noise: NoiseSpec) -> DatasetMeta {
    DatasetMeta {
        system: cfg.system.system().name().to_string(),
        split: split.to_string(),
        n_x: data.n_x,
        n_t: data.n_t,
        n_steps: data.n_steps,
        dt: cfg.protocol.dt,
        noise,
        seed: cfg.seed,
    }
}

/// Writes `train/` and `test/` dataset directories under `out`.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<Splits> {
    let splits = generate(cfg)?;
    write_dataset(&out.join("train"), &splits.train, &meta(cfg, &splits.train, "train", splits.noise))?;
    write_dataset(&out.join("test"), &splits.test, &meta(cfg, &splits.test, "test", NoiseSpec::none()))?;
    Ok(splits)
}

// ----------------------------------------------------------------------------
// Train
// ----------------------------------------------------------------------------

pub fn train_model(cfg: &ExperimentConfig, train: &TrajectoryDataset) -> Result<(KoopmanModel, Vec<LogRow>)> {
    let model_seed = derive_seed(cfg.seed, SeedStream::Model);
    match &cfg.model {
        ModelSpec::Igpk(c) => {
            let c = IgpkConfig { seed: model_seed, ..c.clone() };
            let trained = train_igpk(&c, train)?;
            Ok((trained.model, trained.log))
        }
        ModelSpec::PolyEdmd { degree } => {
            let dict = Dictionary::Poly(PolyDictionary::new(*degree, train.n_x)?);
            Ok((KoopmanModel::fit_dictionary(dict, &train.x, &train.x_plus)?, Vec::new()))
        }
        ModelSpec::RbfEdmd { k, kmeans_iters } => {
            let centers = kmeans(&train.x, *k, model_seed, *kmeans_iters)?;
            let dict = Dictionary::Rbf(RbfDictionary::new(centers, true, true)?);
            Ok((KoopmanModel::fit_dictionary(dict, &train.x, &train.x_plus)?, Vec::new()))
        }
    }
}

pub fn write_run_log(path: &Path, log: &[LogRow]) -> Result<()> {
    let mut out = CsvOut::create(path, &["stage", "gpo", "iteration", "cost", "grad_norm", "wall_time_s"])?;
    for r in log {
        out.row([
            r.stage.to_string(),
            r.gpo.map_or(String::new(), |g| g.to_string()),
            r.iteration.to_string(),
            fmt_real(r.cost),
            fmt_real(r.grad_norm),
            format!("{:.6}", r.wall_time_s),
        ])?;
    }
    out.finish()
}

/// Trains on `data_dir/train` (or `data_dir` itself) and writes
/// `model.json` and `run_log.csv` into `out`.
pub fn cmd_train(cfg: &ExperimentConfig, data_dir: &Path, out: &Path) -> Result<KoopmanModel> {
    let dir = dataset_dir(data_dir, "train");
    let (train, _) = read_dataset(&dir)?;
    if train.n_x != cfg.system.system().state_dim() {
        return Err(Error::dims(format!(
            "dataset has state dimension {}, configured system has {}",
            train.n_x,
            cfg.system.system().state_dim()
        )));
    }
    let (model, log) = train_model(cfg, &train)?;
    ensure_dir(out)?;
    model.save(&out.join("model.json"))?;
    write_run_log(&out.join("run_log.csv"), &log)?;
    Ok(model)
}

fn dataset_dir(root: &Path, split: &str) -> PathBuf {
    let nested = root.join(split);
    if nested.join(super::io::META_FILE).exists() {
        nested
    } else {
        root.to_path_buf()
    }
}

// ----------------------------------------------------------------------------
// Evaluate
// ----------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrajectoryScore {
    pub trajectory_id: usize,
    pub nrmse_pct: f64,
    /// `None` for deterministic models.
    pub nlpd: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub scores: Vec<TrajectoryScore>,
    pub truths: Vec<Vec<Vector>>,
    pub predictions: Vec<RolloutPrediction>,
    /// Test-set mean of the cumulative NRMSE at each step.
    pub cumulative: Vec<f64>,
    pub calibration: Option<Vec<(f64, f64)>>,
}

/// Summary statistics of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub nrmse_mean: f64,
    pub nrmse_std: f64,
    pub nlpd_mean: Option<f64>,
    pub nlpd_std: Option<f64>,
    pub calibration_error: Option<f64>,
}

impl Evaluation {
    pub fn summary(&self) -> Result<Summary> {
        let nrmse: Vec<f64> = self.scores.iter().map(|s| s.nrmse_pct).collect();
        let (nrmse_mean, nrmse_std) = summarize(&nrmse)?;
        let nl: Option<Vec<f64>> = self.scores.iter().map(|s| s.nlpd).collect();
        let (nlpd_mean, nlpd_std) = match nl {
            Some(v) => {
                let (m, s) = summarize(&v)?;
                (Some(m), Some(s))
            }
            None => (None, None),
        };
        Ok(Summary {
            n: self.scores.len(),
            nrmse_mean,
            nrmse_std,
            nlpd_mean,
            nlpd_std,
            calibration_error: self.calibration.as_deref().map(mean_abs_calibration_error),
        })
    }
}

pub fn evaluate_model(model: &KoopmanModel, test: &TrajectoryDataset, metrics: &MetricsSpec) -> Result<Evaluation> {
    if test.n_x != model.n_x() {
        return Err(Error::dims(format!(
            "test data has state dimension {}, model has {}",
            test.n_x,
            model.n_x()
        )));
    }
    let probabilistic = model.is_probabilistic();
    let truths = test.trajectories();
    let predictions = truths
        .iter()
        .map(|t| model.rollout(t[0].as_slice(), test.n_steps))
        .collect::<Result<Vec<_>>>()?;
    let mut scores = Vec::with_capacity(truths.len());
    let mut cumulative = vec![0.0; test.n_steps + 1];
    for (j, (t, p)) in truths.iter().zip(&predictions).enumerate() {
        let nrmse = nrmse_pct(t, &p.means)?;
        let nl = if probabilistic {
            // a failed factorization is scored as NaN rather than aborting the table
            Some(nlpd(t, p, metrics.nlpd_jitter).unwrap_or(f64::NAN))
        } else {
            None
        };
        for (acc, v) in cumulative.iter_mut().zip(cumulative_nrmse_pct(t, &p.means, metrics.cumulative_full_range)?) {
            *acc += v / truths.len() as f64;
        }
        scores.push(TrajectoryScore {
            trajectory_id: j,
            nrmse_pct: nrmse,
            nlpd: nl,
        });
    }
    let calibration = if probabilistic {
        Some(calibration_curve(&truths, &predictions, &metrics.calibration_levels)?)
    } else {
        None
    };
    Ok(Evaluation {
        scores,
        truths,
        predictions,
        cumulative,
        calibration,
    })
}

/// Labels attached to every metric row.
#[derive(Debug, Clone)]
pub struct CellLabel {
    pub system: String,
    pub model: String,
    pub noise: NoiseSpec,
}

impl CellLabel {
    fn fields(&self) -> Vec<String> {
        vec![
            self.system.clone(),
            self.model.clone(),
            self.noise.kind.name().to_string(),
            fmt_real(self.noise.intensity_pct),
        ]
    }
}

fn opt_real(v: Option<f64>) -> String {
    v.map_or(String::new(), fmt_real)
}

/// `metrics.csv`, `summary.csv`, `cumulative_nrmse.csv`, `rollouts.csv` and,
/// for probabilistic models, `calibration.csv`.
pub fn write_evaluation(out: &Path, label: &CellLabel, eval: &Evaluation) -> Result<Summary> {
    ensure_dir(out)?;
    let base = ["system", "model", "noise_kind", "intensity"];

    let mut header = base.to_vec();
    header.extend(["trajectory_id", "nrmse_pct", "nlpd"]);
    let mut m = CsvOut::create(&out.join("metrics.csv"), &header)?;
    for s in &eval.scores {
        let mut row = label.fields();
        row.extend([s.trajectory_id.to_string(), fmt_real(s.nrmse_pct), opt_real(s.nlpd)]);
        m.row(row)?;
    }
    m.finish()?;

    let summary = eval.summary()?;
    let mut header = base.to_vec();
    header.extend(["n", "nrmse_mean", "nrmse_std", "nlpd_mean", "nlpd_std", "calibration_error"]);
    let mut s = CsvOut::create(&out.join("summary.csv"), &header)?;
    let mut row = label.fields();
    row.extend([
        summary.n.to_string(),
        fmt_real(summary.nrmse_mean),
        fmt_real(summary.nrmse_std),
        opt_real(summary.nlpd_mean),
        opt_real(summary.nlpd_std),
        opt_real(summary.calibration_error),
    ]);
    s.row(row)?;
    s.finish()?;

    let mut header = base.to_vec();
    header.extend(["step", "cumulative_nrmse_pct"]);
    let mut c = CsvOut::create(&out.join("cumulative_nrmse.csv"), &header)?;
    for (k, v) in eval.cumulative.iter().enumerate() {
        let mut row = label.fields();
        row.extend([k.to_string(), fmt_real(*v)]);
        c.row(row)?;
    }
    c.finish()?;

    if let Some(curve) = &eval.calibration {
        let mut header = base.to_vec();
        header.extend(["nominal", "empirical"]);
        let mut c = CsvOut::create(&out.join("calibration.csv"), &header)?;
        for (nominal, empirical) in curve {
            let mut row = label.fields();
            row.extend([fmt_real(*nominal), fmt_real(*empirical)]);
            c.row(row)?;
        }
        c.finish()?;
    }

    let mut r = CsvOut::create(
        &out.join("rollouts.csv"),
        &["trajectory_id", "step", "dim", "truth", "mean", "sd"],
    )?;
    for (j, (t, p)) in eval.truths.iter().zip(&eval.predictions).enumerate() {
        let sds = (!p.is_deterministic()).then(|| prediction_sds(p));
        write_rollout_band(&mut r, &[j.to_string()], t, &p.means, sds.as_deref())?;
    }
    r.finish()?;
    Ok(summary)
}

fn prediction_sds(p: &RolloutPrediction) -> Vec<Vector> {
    p.covs.iter().map(|c| c.diagonal().map(|v| v.max(0.0).sqrt())).collect()
}

pub fn cmd_evaluate(cfg: &ExperimentConfig, model_path: &Path, data_dir: &Path, out: &Path) -> Result<Summary> {
    let model = KoopmanModel::load(model_path)?;
    let (test, meta) = read_dataset(&dataset_dir(data_dir, "test"))?;
    let eval = evaluate_model(&model, &test, &cfg.metrics)?;
    let label = CellLabel {
        system: meta.system,
        model: cfg.model.name().to_string(),
        noise: cfg.protocol.noise,
    };
    write_evaluation(out, &label, &eval)
}

// ----------------------------------------------------------------------------
// Reproduce
// ----------------------------------------------------------------------------

/// Optional overrides for `reproduce`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReproduceConfig {
    pub igpk_scalar: Option<IgpkConfig>,
    pub igpk_predator_prey: Option<IgpkConfig>,
    pub metrics: MetricsSpec,
}

impl ReproduceConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ReproduceConfig =
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        for c in cfg.igpk_scalar.iter().chain(&cfg.igpk_predator_prey) {
            c.validate()?;
        }
        Ok(cfg)
    }

    fn igpk(&self, system: SystemName) -> IgpkConfig {
        let over = match system {
            SystemName::Scalar => &self.igpk_scalar,
            SystemName::PredatorPrey => &self.igpk_predator_prey,
        };
        over.clone().unwrap_or_else(|| igpk_defaults(system))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Table1,
    Table2,
    Fig2,
    Fig3,
}

impl std::str::FromStr for Target {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table1" => Ok(Target::Table1),
            "table2" => Ok(Target::Table2),
            "fig2" => Ok(Target::Fig2),
            "fig3" => Ok(Target::Fig3),
            other => Err(Error::InvalidConfig(format!(
                "unknown reproduction target {other:?}; expected table1, table2, fig2 or fig3"
            ))),
        }
    }
}

fn scenario_name(n: &NoiseSpec) -> String {
    match n.kind {
        NoiseKind::None => "clean".into(),
        k => format!("{}_{}", k.name(), n.intensity_pct),
    }
}

/// One (scenario, model) cell of a reproduction.
#[derive(Debug, Clone)]
pub struct Cell {
    pub scenario: String,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub scenario: String,
    pub label: CellLabel,
    pub summary: Summary,
    pub eval: Evaluation,
}

fn run_cell(cell: &Cell, root: &Path) -> Result<CellResult> {
    let splits = generate(&cell.config)?;
    let (model, log) = train_model(&cell.config, &splits.train)?;
    let eval = evaluate_model(&model, &splits.test, &cell.config.metrics)?;
    let label = CellLabel {
        system: cell.config.system.system().name().to_string(),
        model: cell.config.model.name().to_string(),
        noise: cell.config.protocol.noise,
    };
    let dir = root.join(&cell.scenario).join(&label.model);
    let summary = write_evaluation(&dir, &label, &eval)?;
    model.save(&dir.join("model.json"))?;
    if !log.is_empty() {
        write_run_log(&dir.join("run_log.csv"), &log)?;
    }
    Ok(CellResult {
        scenario: cell.scenario.clone(),
        label,
        summary,
        eval,
    })
}

/// Runs cells on a pool of `jobs` threads; results keep the input order.
pub fn run_cells(cells: &[Cell], root: &Path, jobs: usize) -> Result<Vec<CellResult>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {jobs} workers: {e}")))?;
    pool.install(|| cells.par_iter().map(|c| run_cell(c, root)).collect())
}

fn baseline_models() -> [ModelSpec; 2] {
    [
        ModelSpec::PolyEdmd { degree: 4 },
        ModelSpec::RbfEdmd { k: 20, kmeans_iters: 100 },
    ]
}

fn cells_for(
    system: SystemName,
    scenarios: &[NoiseSpec],
    models: &[ModelSpec],
    seed: u64,
    metrics: &MetricsSpec,
) -> Vec<Cell> {
    let mut cells = Vec::new();
    for n in scenarios {
        for m in models {
            let mut config = match system {
                SystemName::Scalar => ExperimentConfig::scalar(m.clone(), *n),
                SystemName::PredatorPrey => ExperimentConfig::predator_prey(m.clone(), *n),
            };
            config.seed = seed;
            config.metrics = metrics.clone();
            cells.push(Cell {
                scenario: scenario_name(n),
                config,
            });
        }
    }
    cells
}

pub fn table1_scenarios() -> Vec<NoiseSpec> {
    vec![
        noise(NoiseKind::None, 0.0),
        noise(NoiseKind::Gaussian, 5.0),
        noise(NoiseKind::Gaussian, 10.0),
        noise(NoiseKind::Uniform, 5.0),
        noise(NoiseKind::Uniform, 10.0),
    ]
}

pub fn table2_scenarios() -> Vec<NoiseSpec> {
    vec![
        noise(NoiseKind::None, 0.0),
        noise(NoiseKind::Gaussian, 10.0),
        noise(NoiseKind::Gaussian, 20.0),
        noise(NoiseKind::Uniform, 10.0),
        noise(NoiseKind::Uniform, 20.0),
    ]
}

fn write_long_summary(path: &Path, results: &[CellResult]) -> Result<()> {
    let mut out = CsvOut::create(
        path,
        &[
            "scenario", "system", "model", "noise_kind", "intensity", "n", "nrmse_mean", "nrmse_std",
            "nlpd_mean", "nlpd_std", "calibration_error",
        ],
    )?;
    for r in results {
        let s = &r.summary;
        let mut row = vec![r.scenario.clone()];
        row.extend(r.label.fields());
        row.extend([
            s.n.to_string(),
            fmt_real(s.nrmse_mean),
            fmt_real(s.nrmse_std),
            opt_real(s.nlpd_mean),
            opt_real(s.nlpd_std),
            opt_real(s.calibration_error),
        ]);
        out.row(row)?;
    }
    out.finish()
}

fn find<'a>(results: &'a [CellResult], scenario: &str, model: &str) -> Option<&'a CellResult> {
    results.iter().find(|r| r.scenario == scenario && r.label.model == model)
}

/// Runs a reproduction target into `out/<target>/` and returns the cell results.
pub fn cmd_reproduce(target: Target, seed: u64, out: &Path, jobs: usize, over: &ReproduceConfig) -> Result<Vec<CellResult>> {
    let metrics = &over.metrics;
    match target {
        Target::Table1 => {
            let root = out.join("table1");
            let mut models = baseline_models().to_vec();
            models.push(ModelSpec::Igpk(over.igpk(SystemName::Scalar)));
            let scenarios = table1_scenarios();
            let cells = cells_for(SystemName::Scalar, &scenarios, &models, seed, metrics);
            let results = run_cells(&cells, &root, jobs)?;
            write_long_summary(&root.join("summary.csv"), &results)?;
            let mut t = CsvOut::create(
                &root.join("table1.csv"),
                &[
                    "scenario", "poly_edmd_mean", "poly_edmd_std", "rbf_edmd_mean", "rbf_edmd_std", "ssid_gpk",
                    "igpk_mean", "igpk_std",
                ],
            )?;
            for n in &scenarios {
                let sc = scenario_name(n);
                let mut row = vec![sc.clone()];
                for m in ["poly_edmd", "rbf_edmd", "igpk"] {
                    if m == "igpk" {
                        row.push(SSID_MARKER.into());
                    }
                    let s = find(&results, &sc, m).expect("every cell ran").summary;
                    row.extend([fmt_real(s.nrmse_mean), fmt_real(s.nrmse_std)]);
                }
                t.row(row)?;
            }
            t.finish()?;
            Ok(results)
        }
        Target::Table2 => {
            let root = out.join("table2");
            let models = [ModelSpec::Igpk(over.igpk(SystemName::PredatorPrey))];
            let scenarios = table2_scenarios();
            let cells = cells_for(SystemName::PredatorPrey, &scenarios, &models, seed, metrics);
            let results = run_cells(&cells, &root, jobs)?;
            write_long_summary(&root.join("summary.csv"), &results)?;
            let mut t = CsvOut::create(&root.join("table2.csv"), &["scenario", "ssid_gpk", "igpk_nlpd_mean", "igpk_nlpd_std"])?;
            for n in &scenarios {
                let sc = scenario_name(n);
                let s = find(&results, &sc, "igpk").expect("every cell ran").summary;
                t.row([sc, SSID_MARKER.into(), opt_real(s.nlpd_mean), opt_real(s.nlpd_std)])?;
            }
            t.finish()?;
            Ok(results)
        }
        Target::Fig2 => {
            let root = out.join("fig2");
            let mut models = baseline_models().to_vec();
            models.push(ModelSpec::Igpk(over.igpk(SystemName::Scalar)));
            let cells = cells_for(SystemName::Scalar, &[NoiseSpec::none()], &models, seed, metrics);
            let results = run_cells(&cells, &root, jobs)?;
            write_long_summary(&root.join("summary.csv"), &results)?;
            let mut t = CsvOut::create(&root.join("fig2.csv"), &["model", "step", "cumulative_nrmse_pct"])?;
            for r in &results {
                for (k, v) in r.eval.cumulative.iter().enumerate() {
                    t.row([r.label.model.clone(), k.to_string(), fmt_real(*v)])?;
                }
            }
            t.finish()?;
            Ok(results)
        }
        Target::Fig3 => {
            let root = out.join("fig3");
            let igpk = ModelSpec::Igpk(over.igpk(SystemName::PredatorPrey));
            let mut models = baseline_models().to_vec();
            models.push(igpk.clone());
            // panel A: predictions under 10% uniform noise; panel B: calibration under 10% gaussian noise
            let mut cells = cells_for(SystemName::PredatorPrey, &[noise(NoiseKind::Uniform, 10.0)], &models, seed, metrics);
            cells.extend(cells_for(SystemName::PredatorPrey, &[noise(NoiseKind::Gaussian, 10.0)], &[igpk], seed, metrics));
            let results = run_cells(&cells, &root, jobs)?;
            write_long_summary(&root.join("summary.csv"), &results)?;
            let mut a = CsvOut::create(
                &root.join("fig3a_rollout.csv"),
                &["model", "step", "dim", "truth", "mean", "sd"],
            )?;
            for r in results.iter().filter(|r| r.scenario == "uniform_10") {
                let p = &r.eval.predictions[0];
                let sds = (!p.is_deterministic()).then(|| prediction_sds(p));
                write_rollout_band(&mut a, std::slice::from_ref(&r.label.model), &r.eval.truths[0], &p.means, sds.as_deref())?;
            }
            a.finish()?;
            let mut b = CsvOut::create(&root.join("fig3b_calibration.csv"), &["model", "nominal", "empirical"])?;
            for r in results.iter().filter(|r| r.scenario == "gaussian_10") {
                for (nominal, empirical) in r.eval.calibration.as_deref().unwrap_or_default() {
                    b.row([r.label.model.clone(), fmt_real(*nominal), fmt_real(*empirical)])?;
                }
            }
            b.finish()?;
            Ok(results)
        }
    }
}
