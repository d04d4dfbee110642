//! Post-training analyses and the tabular report format they share.
//!
//! A report is a TSV table with columns
//! `experiment  config_hash  name  split  coordinate  value`
//! plus a JSON manifest carrying the schema version and the full config.
//! Missing values (for example accuracy over an empty node set) are written
//! as `NA`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{inject_ood_noise, DatasetBundle, Split};
use crate::error::{Error, Result};
use crate::model::{forward_evidence_eval, HopInputs};
use crate::subjective_logic::{evidence_to_dirichlet, Evidence};
use crate::train::{evaluate, evaluate_propagated, probability_std, propagate_dataset, train, Metrics, Model, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub name: String,
    pub split: String,
    /// Position along the sweep axis, e.g. `tau=0.25` or `hop=3`; empty
    /// when the metric is a single number.
    pub coordinate: String,
    pub value: Option<f64>,
}

impl MetricRow {
    pub fn new(name: &str, split: &str, coordinate: impl Into<String>, value: Option<f64>) -> Self {
        Self {
            name: name.into(),
            split: split.into(),
            coordinate: coordinate.into(),
            value,
        }
    }
}

/// One experiment's results, tagged with the config that produced them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRecord {
    pub schema_version: u32,
    pub experiment: String,
    pub config: TrainConfig,
    pub config_hash: String,
    /// Experiment inputs that are not part of the config (seed of the
    /// noise, thresholds, ...), as key/value pairs.
    pub parameters: Vec<(String, String)>,
    pub rows: Vec<MetricRow>,
}

impl ReportRecord {
    pub fn new(experiment: &str, config: &TrainConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            experiment: experiment.into(),
            config: config.clone(),
            config_hash: config.hash(),
            parameters: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn param(mut self, key: &str, value: impl ToString) -> Self {
        self.parameters.push((key.into(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: MetricRow) {
        self.rows.push(row);
    }

    pub fn validate(&self) -> Result<()> {
        match self.rows.iter().find(|r| r.value.is_some_and(|v| !v.is_finite())) {
            Some(r) => Err(Error::input(format!("metric {} is not finite", r.name))),
            None => Ok(()),
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("experiment\tconfig_hash\tname\tsplit\tcoordinate\tvalue\n");
        for r in &self.rows {
            let value = r.value.map_or_else(|| "NA".to_string(), |v| v.to_string());
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                self.experiment, self.config_hash, r.name, r.split, r.coordinate, value
            )
            .unwrap();
        }
        out
    }

    pub fn manifest_json(&self, table_file: &str) -> String {
        #[derive(Serialize)]
        struct Manifest<'a> {
            schema_version: u32,
            experiment: &'a str,
            table: &'a str,
            columns: [&'a str; 6],
            rows: usize,
            config_hash: &'a str,
            config: &'a TrainConfig,
            parameters: &'a [(String, String)],
        }
        let m = Manifest {
            schema_version: self.schema_version,
            experiment: &self.experiment,
            table: table_file,
            columns: ["experiment", "config_hash", "name", "split", "coordinate", "value"],
            rows: self.rows.len(),
            config_hash: &self.config_hash,
            config: &self.config,
            parameters: &self.parameters,
        };
        let mut s = serde_json::to_string_pretty(&m).expect("manifest serialises");
        s.push('\n');
        s
    }

    /// Writes `<stem>.tsv` and `<stem>.json` into `dir`; returns both paths.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        self.validate()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let table = dir.join(format!("{stem}.tsv"));
        let manifest = dir.join(format!("{stem}.json"));
        fs::write(&table, self.to_tsv()).map_err(|e| Error::io(&table, e))?;
        fs::write(&manifest, self.manifest_json(&format!("{stem}.tsv"))).map_err(|e| Error::io(&manifest, e))?;
        Ok((table, manifest))
    }
}

/// `0.05, 0.10, ..., 1.00`.
pub fn default_thresholds() -> Vec<f64> {
    (1..=20).map(|i| i as f64 / 20.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub tau: f64,
    /// Accuracy over the retained nodes; `None` when none are retained.
    pub accuracy: Option<f64>,
    pub retained: usize,
    pub retained_fraction: f64,
}

/// Accuracy over the nodes whose fused uncertainty is at most `τ`, for each
/// threshold, sorted by `τ`.
pub fn uncertainty_curve(metrics: &Metrics, thresholds: &[f64]) -> Result<Vec<CurvePoint>> {
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(Error::input(format!("threshold {t} outside (0, 1]")));
    }
    let mut taus = thresholds.to_vec();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let correct = metrics.correct();
    let total = metrics.uncertainty.len();
    Ok(taus
        .into_iter()
        .map(|tau| {
            let kept: Vec<bool> = metrics
                .uncertainty
                .iter()
                .zip(&correct)
                .filter(|(u, _)| **u <= tau)
                .map(|(_, c)| *c)
                .collect();
            let retained = kept.len();
            CurvePoint {
                tau,
                accuracy: (retained > 0).then(|| kept.iter().filter(|c| **c).count() as f64 / retained as f64),
                retained,
                retained_fraction: retained as f64 / total as f64,
            }
        })
        .collect())
}

pub fn uncertainty_curve_report(model: &Model, points: &[CurvePoint]) -> ReportRecord {
    let mut r = ReportRecord::new("uncertainty-curve", &model.config);
    for p in points {
        let c = format!("tau={}", p.tau);
        r.push(MetricRow::new("accuracy", "test", c.clone(), p.accuracy));
        r.push(MetricRow::new("retained", "test", c.clone(), Some(p.retained as f64)));
        r.push(MetricRow::new("retained_fraction", "test", c, Some(p.retained_fraction)));
    }
    r
}

/// Equal-width histogram over `[lo, hi]`; values outside are clamped into
/// the end bins so that counts always sum to the sample size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let mut counts = vec![0; bins.max(1)];
        let width = (hi - lo) / counts.len() as f64;
        for &v in values {
            let b = if width > 0.0 { ((v - lo) / width).floor() } else { 0.0 };
            let b = (b.max(0.0) as usize).min(counts.len() - 1);
            counts[b] += 1;
        }
        Self { lo, hi, counts }
    }

    pub fn edges(&self, bin: usize) -> (f64, f64) {
        let width = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + width * bin as f64, self.lo + width * (bin + 1) as f64)
    }

    /// Counts divided by `total · width`, a density estimate.
    pub fn density(&self) -> Vec<f64> {
        let total: usize = self.counts.iter().sum();
        let width = (self.hi - self.lo) / self.counts.len() as f64;
        self.counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / (total as f64 * width) })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OodComparison {
    pub eta: f64,
    pub clean: Vec<f64>,
    pub polluted: Vec<f64>,
    pub clean_mean: f64,
    pub polluted_mean: f64,
    pub clean_hist: Histogram,
    pub polluted_hist: Histogram,
}

pub const OOD_BINS: usize = 20;

/// Fused uncertainty of the test nodes with clean features versus features
/// polluted by `η`-scaled Gaussian noise (the whole feature matrix is
/// polluted before propagation).
pub fn ood_compare(model: &Model, dataset: &DatasetBundle, eta: f64, seed: u64) -> Result<OodComparison> {
    let noisy = inject_ood_noise(dataset.features(), eta, seed)?;
    let polluted_ds = dataset.with_features(noisy)?;
    let clean = evaluate(model, dataset, Split::Test)?.uncertainty;
    let polluted = evaluate(model, &polluted_ds, Split::Test)?.uncertainty;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(OodComparison {
        eta,
        clean_mean: mean(&clean),
        polluted_mean: mean(&polluted),
        clean_hist: Histogram::new(&clean, 0.0, 1.0, OOD_BINS),
        polluted_hist: Histogram::new(&polluted, 0.0, 1.0, OOD_BINS),
        clean,
        polluted,
    })
}

pub fn ood_report(model: &Model, cmp: &OodComparison, seed: u64) -> ReportRecord {
    let mut r = ReportRecord::new("ood-compare", &model.config)
        .param("eta", cmp.eta)
        .param("noise_seed", seed);
    r.push(MetricRow::new("mean_uncertainty", "test-clean", "", Some(cmp.clean_mean)));
    r.push(MetricRow::new("mean_uncertainty", "test-polluted", "", Some(cmp.polluted_mean)));
    for (split, h) in [("test-clean", &cmp.clean_hist), ("test-polluted", &cmp.polluted_hist)] {
        for (b, (&count, density)) in h.counts.iter().zip(h.density()).enumerate() {
            let (lo, hi) = h.edges(b);
            let c = format!("bin={lo}..{hi}");
            r.push(MetricRow::new("count", split, c.clone(), Some(count as f64)));
            r.push(MetricRow::new("density", split, c, Some(density)));
        }
    }
    r
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    /// `EP-<i>` for a single hop, `fused` for the configured hop set.
    pub label: String,
    pub hops: Vec<usize>,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

fn variant(config: &TrainConfig, steps: usize, hops: Option<Vec<usize>>) -> TrainConfig {
    TrainConfig {
        propagation_steps: steps,
        hops,
        ..config.clone()
    }
}

/// Trains the single-hop variants `{0}, ..., {T}` and the fused model.
pub fn hop_ablation(dataset: &DatasetBundle, config: &TrainConfig) -> Result<Vec<AblationRow>> {
    config.validate()?;
    let t = config.propagation_steps;
    let mut variants: Vec<(String, TrainConfig)> = (0..=t)
        .map(|i| (format!("EP-{i}"), variant(config, t, Some(vec![i]))))
        .collect();
    variants.push(("fused".into(), config.clone()));
    variants
        .par_iter()
        .map(|(label, cfg)| {
            let (model, _) = train(dataset, cfg)?;
            let propagated = propagate_dataset(dataset, cfg)?;
            Ok(AblationRow {
                label: label.clone(),
                hops: cfg.hop_set(),
                val_accuracy: evaluate_propagated(&model, dataset, &propagated, Split::Val)?.accuracy,
                test_accuracy: evaluate_propagated(&model, dataset, &propagated, Split::Test)?.accuracy,
            })
        })
        .collect()
}

pub fn hop_ablation_report(config: &TrainConfig, rows: &[AblationRow]) -> ReportRecord {
    let mut r = ReportRecord::new("hop-ablation", config);
    for row in rows {
        let c = format!("variant={}", row.label);
        r.push(MetricRow::new("accuracy", "val", c.clone(), Some(row.val_accuracy)));
        r.push(MetricRow::new("accuracy", "test", c, Some(row.test_accuracy)));
    }
    r
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthDensity {
    pub depth: usize,
    /// `single` (hop set `{depth}`) or `fused` (hops up to `depth`).
    pub variant: String,
    pub test_accuracy: f64,
    pub std: Vec<f64>,
    pub mean_std: f64,
    pub hist: Histogram,
}

/// Mean true-class expected probability of one hop's own opinion, over the
/// test nodes of one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrueClassSummary {
    pub hop: usize,
    pub class: usize,
    pub nodes: usize,
    pub mean_probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StdDensity {
    pub depths: Vec<DepthDensity>,
    /// Computed on the fused model of the deepest requested depth.
    pub true_class: Vec<TrueClassSummary>,
}

pub const STD_BINS: usize = 20;

/// Largest population standard deviation of a `K`-class probability vector.
pub fn max_probability_std(k: usize) -> f64 {
    ((k - 1) as f64).sqrt() / k as f64
}

/// For every depth, trains the single-hop variant `{depth}` and the fused
/// variant over hops up to `depth`, and histograms the per-node standard
/// deviation of the test class-probability vectors.
pub fn std_density(dataset: &DatasetBundle, config: &TrainConfig, depths: &[usize]) -> Result<StdDensity> {
    if depths.is_empty() || depths.contains(&0) {
        return Err(Error::input("depths must be a non-empty list of integers >= 1"));
    }
    config.validate()?;
    let k = dataset.classes();
    let jobs: Vec<(usize, &str, TrainConfig)> = depths
        .iter()
        .flat_map(|&d| {
            [
                (d, "single", variant(config, d, Some(vec![d]))),
                (d, "fused", variant(config, d, None)),
            ]
        })
        .collect();
    let trained: Vec<(usize, String, Model, Metrics)> = jobs
        .par_iter()
        .map(|(d, name, cfg)| {
            let (model, _) = train(dataset, cfg)?;
            let metrics = evaluate(&model, dataset, Split::Test)?;
            Ok((*d, name.to_string(), model, metrics))
        })
        .collect::<Result<_>>()?;

    let depths_out = trained
        .iter()
        .map(|(d, name, _, m)| {
            let std = probability_std(&m.probabilities);
            DepthDensity {
                depth: *d,
                variant: name.clone(),
                test_accuracy: m.accuracy,
                mean_std: std.iter().sum::<f64>() / std.len() as f64,
                hist: Histogram::new(&std, 0.0, max_probability_std(k), STD_BINS),
                std,
            }
        })
        .collect();

    let deepest = *depths.iter().max().unwrap();
    let (_, _, fused_model, _) = trained
        .iter()
        .find(|(d, name, _, _)| *d == deepest && name == "fused")
        .expect("fused variant trained for every depth");
    let true_class = true_class_by_hop(fused_model, dataset)?;
    Ok(StdDensity {
        depths: depths_out,
        true_class,
    })
}

/// Per-hop, per-class mean true-class probability on the test split.
pub fn true_class_by_hop(model: &Model, dataset: &DatasetBundle) -> Result<Vec<TrueClassSummary>> {
    let nodes = dataset.masks().indices(Split::Test);
    let propagated = propagate_dataset(dataset, &model.config)?;
    let inputs = HopInputs::new(&propagated, &model.config.hop_set(), Some(&nodes))?;
    let evidence = forward_evidence_eval(&model.params, &inputs)?;
    let k = dataset.classes();
    let mut out = Vec::new();
    for (hop, e) in evidence.hops().iter().zip(evidence.evidence()) {
        let mut sums = vec![(0.0, 0usize); k];
        for (row, &node) in e.rows().into_iter().zip(&nodes) {
            let y = dataset.labels()[node];
            let dir = evidence_to_dirichlet(&Evidence::new(row.to_vec())?);
            sums[y].0 += dir.expected_probability()[y];
            sums[y].1 += 1;
        }
        for (class, (s, n)) in sums.into_iter().enumerate() {
            out.push(TrueClassSummary {
                hop: *hop,
                class,
                nodes: n,
                mean_probability: (n > 0).then(|| s / n as f64),
            });
        }
    }
    Ok(out)
}

pub fn std_density_report(config: &TrainConfig, result: &StdDensity) -> ReportRecord {
    let depths: Vec<String> = result.depths.iter().map(|d| d.depth.to_string()).collect();
    let mut depths_unique = depths.clone();
    depths_unique.dedup();
    let mut r = ReportRecord::new("std-density", config).param("depths", depths_unique.join(","));
    for d in &result.depths {
        let split = format!("test-{}", d.variant);
        let base = format!("depth={}", d.depth);
        r.push(MetricRow::new("accuracy", &split, base.clone(), Some(d.test_accuracy)));
        r.push(MetricRow::new("mean_std", &split, base.clone(), Some(d.mean_std)));
        for (b, (&count, density)) in d.hist.counts.iter().zip(d.hist.density()).enumerate() {
            let (lo, hi) = d.hist.edges(b);
            let c = format!("{base};bin={lo}..{hi}");
            r.push(MetricRow::new("count", &split, c.clone(), Some(count as f64)));
            r.push(MetricRow::new("density", &split, c, Some(density)));
        }
    }
    for t in &result.true_class {
        r.push(MetricRow::new(
            "true_class_probability",
            "test",
            format!("hop={};class={}", t.hop, t.class),
            t.mean_probability,
        ));
    }
    r
}
