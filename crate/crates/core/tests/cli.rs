use std::path::{Path, PathBuf};
use std::process::Command;

use igpk::cli::config::{noise, ExperimentConfig, ModelSpec};
use igpk::cli::io::read_csv;
use igpk::cli::pipeline::{
    cmd_evaluate, cmd_generate, cmd_reproduce, cmd_train, generate, resolve_out_dir, ReproduceConfig, Target,
    OUT_DIR_ENV,
};
use igpk::error::Error;
use igpk::igpk::IgpkConfig;
use igpk::koopman::KoopmanModel;
use igpk::systems::NoiseKind;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn small_scalar(model: ModelSpec) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::scalar(model, noise(NoiseKind::Gaussian, 5.0));
    cfg.protocol.n_t = 12;
    cfg.protocol.n_train = 8;
    cfg.protocol.n_steps = 15;
    cfg
}

fn tiny_igpk() -> ModelSpec {
    ModelSpec::Igpk(IgpkConfig {
        n_z: 4,
        stage1_iters: 40,
        stage2_iters: 10,
        ..IgpkConfig::default()
    })
}

#[test]
fn shipped_configs_load_and_round_trip() {
    let mut seen = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&path).unwrap();
            let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap(), &path).unwrap();
            assert_eq!(cfg, again, "{}", path.display());
            seen += 1;
        }
    }
    assert!(seen >= 3);
}

#[test]
fn invalid_configs_are_rejected_with_field_paths() {
    let mut cfg = small_scalar(tiny_igpk());
    cfg.protocol.n_train = cfg.protocol.n_t;
    match cfg.validate() {
        Err(Error::InvalidConfig(m)) => assert!(m.contains("protocol.n_train"), "{m}"),
        other => panic!("{other:?}"),
    }
    let text = "seed = 1\n[system]\nname = \"scalar\"\nbogus = 3\n";
    let err = ExperimentConfig::from_toml_str(text, Path::new("x.toml")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn generate_keeps_test_split_clean_and_is_seeded() {
    let cfg = small_scalar(tiny_igpk());
    let a = generate(&cfg).unwrap();
    let b = generate(&cfg).unwrap();
    assert_eq!(a.train.x, b.train.x);
    assert_eq!(a.test.x, b.test.x);
    assert_eq!(a.train.n_t, 8);
    assert_eq!(a.test.n_t, 4);
    let mut clean_cfg = small_scalar(tiny_igpk());
    clean_cfg.protocol.noise = noise(NoiseKind::None, 0.0);
    let clean = generate(&clean_cfg).unwrap();
    assert_eq!(clean.test.x, a.test.x);
    assert_ne!(clean.train.x, a.train.x);
}

#[test]
fn generate_train_evaluate_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    for model in [tiny_igpk(), ModelSpec::PolyEdmd { degree: 3 }, ModelSpec::RbfEdmd { k: 6, kmeans_iters: 20 }] {
        let cfg = small_scalar(model);
        let name = cfg.model.name();
        cmd_generate(&cfg, &data).unwrap();
        let run = tmp.path().join(name);
        let model = cmd_train(&cfg, &data, &run).unwrap();
        let loaded = KoopmanModel::load(&run.join("model.json")).unwrap();
        let (a, b) = (model.rollout(&[1.5], 10).unwrap(), loaded.rollout(&[1.5], 10).unwrap());
        assert_eq!(a.means, b.means);
        assert_eq!(a.covs, b.covs);

        let summary = cmd_evaluate(&cfg, &run.join("model.json"), &data, &run).unwrap();
        assert!(summary.nrmse_mean.is_finite());
        let (header, rows) = read_csv(&run.join("metrics.csv")).unwrap();
        assert_eq!(header, ["system", "model", "noise_kind", "intensity", "trajectory_id", "nrmse_pct", "nlpd"]);
        assert_eq!(rows.len(), 4);
        let probabilistic = name == "igpk";
        assert_eq!(rows.iter().all(|r| r[6].is_empty()), !probabilistic, "{name}");
        assert_eq!(run.join("calibration.csv").exists(), probabilistic);
        let (_, cum) = read_csv(&run.join("cumulative_nrmse.csv")).unwrap();
        assert_eq!(cum.len(), 16);
        let (_, log) = read_csv(&run.join("run_log.csv")).unwrap();
        assert_eq!(log.is_empty(), !probabilistic);
    }
}

#[test]
fn unknown_reproduce_target_is_a_config_error() {
    let err = "table9".parse::<Target>().unwrap_err();
    assert!(matches!(err, Error::InvalidConfig(_)));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn reproduce_fig2_writes_every_model() {
    let tmp = tempfile::tempdir().unwrap();
    let over = ReproduceConfig {
        igpk_scalar: Some(IgpkConfig {
            n_z: 6,
            stage1_iters: 60,
            stage2_iters: 5,
            ..IgpkConfig::default()
        }),
        ..ReproduceConfig::default()
    };
    let results = cmd_reproduce(Target::Fig2, 3, tmp.path(), 2, &over).unwrap();
    assert_eq!(results.len(), 3);
    let (header, rows) = read_csv(&tmp.path().join("fig2").join("fig2.csv")).unwrap();
    assert_eq!(header, ["model", "step", "cumulative_nrmse_pct"]);
    assert_eq!(rows.len(), 3 * 51);
    for m in ["poly_edmd", "rbf_edmd", "igpk"] {
        assert!(tmp.path().join("fig2").join("clean").join(m).join("metrics.csv").exists());
    }
}

#[test]
fn output_directory_precedence() {
    let flag = PathBuf::from("flag");
    let conf = PathBuf::from("conf");
    assert_eq!(resolve_out_dir(Some(&flag), Some(&conf)), flag);
    std::env::set_var(OUT_DIR_ENV, "env");
    assert_eq!(resolve_out_dir(None, Some(&conf)), PathBuf::from("env"));
    std::env::remove_var(OUT_DIR_ENV);
    assert_eq!(resolve_out_dir(None, Some(&conf)), conf);
    assert_eq!(resolve_out_dir(None, None), PathBuf::from("out"));
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_igpk");
    let tmp = tempfile::tempdir().unwrap();

    let status = Command::new(bin).args(["reproduce", "nope"]).status().unwrap();
    assert_eq!(status.code(), Some(2));

    let missing = tmp.path().join("missing.toml");
    let status = Command::new(bin)
        .args(["generate", "--config"])
        .arg(&missing)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));

    let out = tmp.path().join("gen");
    let status = Command::new(bin)
        .args(["generate", "--seed", "5", "--config"])
        .arg(configs_dir().join("scalar_poly.toml"))
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("train").join("X.csv").exists());
    assert!(out.join("test").join("meta.json").exists());
}
