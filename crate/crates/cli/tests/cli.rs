use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SPEC: &str = "n = 90\nclasses = 2\nfeature_dim = 8\ntrain_per_class = 10\nval_per_class = 10\n";

fn evfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evfuse"))
        .args(args)
        .env_clear()
        .output()
        .expect("spawn evfuse")
}

fn evfuse_env(args: &[&str], envs: &[(&str, &str)]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evfuse"))
        .args(args)
        .env_clear()
        .envs(envs.iter().copied())
        .output()
        .expect("spawn evfuse")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

struct Fixture {
    dir: TempDir,
    spec: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let spec = dir.path().join("sbm.toml");
        fs::write(&spec, SPEC).unwrap();
        Fixture { dir, spec }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(p: &Path) -> &str {
        p.to_str().unwrap()
    }

    fn train(&self, out: &str) -> PathBuf {
        let out = self.path(out);
        ok(&evfuse(&[
            "train",
            "--dataset",
            Self::s(&self.spec),
            "--runs",
            "1",
            "--max-epochs",
            "40",
            "--steps",
            "2",
            "--out",
            Self::s(&out),
        ]));
        out
    }
}

fn tsv_values(path: &Path, name: &str) -> Vec<(String, f64)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .filter_map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[2] == name).then(|| (f[4].to_string(), f[5].parse().unwrap_or(f64::NAN)))
        })
        .collect()
}

#[test]
fn train_writes_reports_and_checkpoint() {
    let fx = Fixture::new();
    let out = fx.train("run");
    for f in ["checkpoint.json", "history.tsv", "train.tsv", "train.json", "run.log"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let acc = tsv_values(&out.join("train.tsv"), "accuracy_mean");
    assert_eq!(acc.len(), 1);
    assert!(acc[0].1 > 0.5);
    let manifest = fs::read_to_string(out.join("train.json")).unwrap();
    assert!(manifest.contains("\"schema_version\""));
}

#[test]
fn rerun_is_byte_identical() {
    let fx = Fixture::new();
    let a = fx.train("a");
    let b = fx.train("b");
    for f in ["checkpoint.json", "history.tsv", "train.tsv", "train.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn missing_config_is_input_error_without_outputs() {
    let fx = Fixture::new();
    let out = fx.path("never");
    let res = evfuse(&[
        "train",
        "--dataset",
        Fixture::s(&fx.spec),
        "--config",
        Fixture::s(&fx.path("absent.toml")),
        "--out",
        Fixture::s(&out),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn unknown_flag_is_input_error() {
    assert_eq!(evfuse(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(evfuse(&["--help"]).status.code(), Some(0));
}

#[test]
fn threshold_out_of_range_is_rejected() {
    let fx = Fixture::new();
    let run = fx.train("run");
    let out = fx.path("curve");
    for bad in ["0", "1.5", "-0.1"] {
        let res = evfuse(&[
            "uncertainty-curve",
            "--checkpoint",
            Fixture::s(&run.join("checkpoint.json")),
            "--dataset",
            Fixture::s(&fx.spec),
            "--thresholds",
            bad,
            "--out",
            Fixture::s(&out),
        ]);
        assert_eq!(res.status.code(), Some(1), "threshold {bad}");
    }
    assert!(!out.exists());
}

#[test]
fn eval_and_curve_on_trained_checkpoint() {
    let fx = Fixture::new();
    let run = fx.train("run");
    let ckpt = run.join("checkpoint.json");
    let ev = fx.path("eval");
    ok(&evfuse(&[
        "eval",
        "--checkpoint",
        Fixture::s(&ckpt),
        "--dataset",
        Fixture::s(&fx.spec),
        "--out",
        Fixture::s(&ev),
    ]));
    let preds = fs::read_to_string(ev.join("predictions.tsv")).unwrap();
    assert_eq!(preds.lines().count(), 1 + 90);

    let curve = fx.path("curve");
    ok(&evfuse(&[
        "uncertainty-curve",
        "--checkpoint",
        Fixture::s(&ckpt),
        "--dataset",
        Fixture::s(&fx.spec),
        "--out",
        Fixture::s(&curve),
    ]));
    let retained = tsv_values(&curve.join("uncertainty_curve.tsv"), "retained");
    assert_eq!(retained.len(), 20);
    assert!(retained.windows(2).all(|w| w[0].1 <= w[1].1));
}

#[test]
fn ood_with_zero_noise_matches_clean() {
    let fx = Fixture::new();
    let run = fx.train("run");
    let out = fx.path("ood");
    ok(&evfuse(&[
        "ood-compare",
        "--checkpoint",
        Fixture::s(&run.join("checkpoint.json")),
        "--dataset",
        Fixture::s(&fx.spec),
        "--eta",
        "0",
        "--out",
        Fixture::s(&out),
    ]));
    let nodes = fs::read_to_string(out.join("ood_nodes.tsv")).unwrap();
    for line in nodes.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        assert_eq!(f[1], f[2]);
    }
}

#[test]
fn hop_ablation_with_one_step_has_three_variants() {
    let fx = Fixture::new();
    let out = fx.path("ablation");
    let res = evfuse(&[
        "hop-ablation",
        "--dataset",
        Fixture::s(&fx.spec),
        "--steps",
        "1",
        "--max-epochs",
        "20",
        "--out",
        Fixture::s(&out),
    ]);
    ok(&res);
    let stdout = String::from_utf8(res.stdout).unwrap();
    let labels: Vec<&str> = stdout.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(labels, ["EP-0", "EP-1", "fused"]);
}

#[test]
fn singleton_grid_has_one_row() {
    let fx = Fixture::new();
    let space = fx.path("space.toml");
    fs::write(&space, "lambda_kl = [0.1]\nmax_epochs = 20\npropagation_steps = 2\n").unwrap();
    let out = fx.path("grid");
    ok(&evfuse(&[
        "grid",
        "--dataset",
        Fixture::s(&fx.spec),
        "--space",
        Fixture::s(&space),
        "--out",
        Fixture::s(&out),
    ]));
    let sweep = fs::read_to_string(out.join("grid_sweep.tsv")).unwrap();
    assert_eq!(sweep.lines().count(), 2);
    assert!(sweep.lines().nth(1).unwrap().ends_with("\tok"));
    let best = fs::read_to_string(out.join("best_config.toml")).unwrap();
    assert!(best.contains("lambda_kl = 0.1"));
}

#[test]
fn env_var_overrides_flag_default() {
    let fx = Fixture::new();
    let out = fx.path("env");
    ok(&evfuse_env(
        &["train", "--runs", "1", "--steps", "2"],
        &[
            ("EVFUSE_DATASET", Fixture::s(&fx.spec)),
            ("EVFUSE_MAX_EPOCHS", "3"),
            ("EVFUSE_OUT", Fixture::s(&out)),
        ],
    ));
    let history = fs::read_to_string(out.join("history.tsv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 3);
}

#[test]
fn sbm_generate_round_trips_through_generic_loader() {
    let fx = Fixture::new();
    let data = fx.path("data");
    ok(&evfuse(&["sbm-generate", "--spec", Fixture::s(&fx.spec), "--seed", "3", "--out", Fixture::s(&data)]));
    let spec = fs::read_to_string(data.join("spec.toml")).unwrap();
    assert!(spec.contains("seed = 3"));

    let reference = evfuse::data::generate_sbm(&toml::from_str(&spec).unwrap()).unwrap();
    let loaded = evfuse::data::load_generic_dir(&data).unwrap();
    assert_eq!(loaded.labels(), reference.labels());
    assert_eq!(loaded.edges(), reference.edges());
    assert_eq!(loaded.masks(), reference.masks());
    assert_eq!(loaded.features(), reference.features());
}
