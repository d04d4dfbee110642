//! Full-graph training of the evidence head with Adam and early stopping,
//! evaluation, and exhaustive hyperparameter search.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{normalize_rows, DatasetBundle, Split};
use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, propagate, PropagatedFeatures};
use crate::model::{
    backward, forward_evidence_eval, fuse_forward, loss_total, ForwardMasks, HopInputs,
    LossWeights, ModelParams,
};
use crate::rng::{stream, Stream};

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub hidden_size: usize,
    pub dropout_rate: f64,
    pub perturb_sigma: f64,
    /// Number of propagation steps `T`.
    pub propagation_steps: usize,
    /// Feed the raw features (hop 0) to the head as well.
    pub include_hop0: bool,
    /// Explicit hop set; overrides `include_hop0` when present.
    pub hops: Option<Vec<usize>>,
    /// Scale every feature row to unit L1 norm before propagation.
    pub row_normalize: bool,
    pub lambda_kl: f64,
    pub lambda_dis: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            weight_decay: 1.0,
            hidden_size: 64,
            dropout_rate: 0.5,
            perturb_sigma: 0.3,
            propagation_steps: 8,
            include_hop0: true,
            hops: None,
            row_normalize: true,
            lambda_kl: 0.1,
            lambda_dis: 0.1,
            max_epochs: 1000,
            patience: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::input(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if !(0.0..1.0).contains(&self.perturb_sigma) {
            return bad(format!("perturb_sigma must lie in [0, 1), got {}", self.perturb_sigma));
        }
        if self.hidden_size == 0 {
            return bad("hidden_size must be >= 1".into());
        }
        if self.propagation_steps == 0 {
            return bad("propagation_steps must be >= 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be >= 1".into());
        }
        if let Some(h) = &self.hops {
            if h.is_empty() {
                return bad("hops must not be empty".into());
            }
            if let Some(l) = h.iter().find(|&&l| l > self.propagation_steps) {
                return bad(format!(
                    "hop {l} exceeds propagation_steps = {}",
                    self.propagation_steps
                ));
            }
        }
        LossWeights::new(self.lambda_kl, self.lambda_dis)?;
        Ok(())
    }

    /// Hops fed to the head, ascending and without duplicates.
    pub fn hop_set(&self) -> Vec<usize> {
        match &self.hops {
            Some(h) => {
                let mut h = h.clone();
                h.sort_unstable();
                h.dedup();
                h
            }
            None => {
                let first = if self.include_hop0 { 0 } else { 1 };
                (first..=self.propagation_steps).collect()
            }
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_kl: self.lambda_kl,
            lambda_dis: self.lambda_dis,
        }
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::input(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_uncertainty: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were returned; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch.map(|e| &self.records[e])
    }
}

/// Trained parameters together with the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: ModelParams,
    pub config: TrainConfig,
}

/// Adam moment estimates.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: ModelParams,
    v: ModelParams,
    t: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(like: &ModelParams) -> Self {
        let (d, h, k) = (like.input_dim(), like.hidden_dim(), like.classes());
        Self {
            m: ModelParams::zeros(d, h, k),
            v: ModelParams::zeros(d, h, k),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }
}

/// One Adam update with decoupled weight decay `p ← p(1 − lr·wd)`.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) {
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.t);
    let c2 = 1.0 - b2.powi(state.t);
    let decay = 1.0 - lr * weight_decay;
    let targets = params.tensors_mut();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, g), m), v) in targets.into_iter().zip(grads.tensors()).zip(ms).zip(vs) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let step = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            p[i] = p[i] * decay - step;
        }
    }
}

fn labels_for(dataset: &DatasetBundle, rows: &[usize]) -> Vec<Option<usize>> {
    rows.iter().map(|&i| Some(dataset.labels()[i])).collect()
}

/// Preprocesses and propagates the dataset features as `config` asks.
pub fn propagate_dataset(dataset: &DatasetBundle, config: &TrainConfig) -> Result<PropagatedFeatures> {
    let adj = normalize_adjacency(dataset.edges(), dataset.n())?;
    if config.row_normalize {
        propagate(&adj, &normalize_rows(dataset.features()), config.propagation_steps)
    } else {
        propagate(&adj, dataset.features(), config.propagation_steps)
    }
}

struct SplitEval {
    loss: f64,
    accuracy: f64,
    uncertainty: f64,
}

fn eval_rows(
    params: &ModelParams,
    inputs: &HopInputs,
    labels: &[Option<usize>],
    w: LossWeights,
) -> Result<SplitEval> {
    let fused = fuse_forward(&forward_evidence_eval(params, inputs)?);
    let loss = loss_total(&fused, labels, w)?;
    let preds = fused.predictions();
    let correct = preds
        .iter()
        .zip(labels)
        .filter(|(p, y)| Some(**p) == **y)
        .count();
    let n = labels.len() as f64;
    Ok(SplitEval {
        loss,
        accuracy: correct as f64 / n,
        uncertainty: fused.uncertainty().sum() / n,
    })
}

/// Trains the evidence head on the dataset's training mask.
///
/// Features are propagated once up front. Each epoch samples fresh
/// perturbation and dropout masks, takes one full-batch Adam step, and
/// scores the validation mask in evaluation mode. Training stops once the
/// validation loss has not improved for `patience` epochs; the parameters
/// of the best epoch (lowest validation loss, ties broken by higher
/// validation accuracy) are returned.
pub fn train(dataset: &DatasetBundle, config: &TrainConfig) -> Result<(Model, TrainHistory)> {
    config.validate()?;
    let train_rows = dataset.masks().indices(Split::Train);
    let val_rows = dataset.masks().indices(Split::Val);
    if train_rows.is_empty() {
        return Err(Error::input("training mask is empty"));
    }
    if val_rows.is_empty() {
        return Err(Error::input("validation mask is empty"));
    }
    let hops = config.hop_set();
    let propagated = propagate_dataset(dataset, config)?;
    let train_inputs = HopInputs::new(&propagated, &hops, Some(&train_rows))?;
    let val_inputs = HopInputs::new(&propagated, &hops, Some(&val_rows))?;
    drop(propagated);
    let train_labels = labels_for(dataset, &train_rows);
    let val_labels = labels_for(dataset, &val_rows);
    let w = config.loss_weights();

    let mut init_rng = stream(config.seed, Stream::Init);
    let mut params = ModelParams::glorot(
        dataset.features().d(),
        config.hidden_size,
        dataset.classes(),
        &mut init_rng,
    );
    let mut best_params = params.clone();
    let mut history = TrainHistory::default();
    let mut adam = AdamState::new(&params);
    let mut perturb_rng = stream(config.seed, Stream::Perturb);
    let mut dropout_rng = stream(config.seed, Stream::Dropout);
    let mut best: Option<(f64, f64)> = None;
    let mut since_best = 0;

    for epoch in 0..config.max_epochs {
        let masks = ForwardMasks::sample(
            hops.len(),
            train_rows.len(),
            config.hidden_size,
            config.perturb_sigma,
            config.dropout_rate,
            &mut perturb_rng,
            &mut dropout_rng,
        )?;
        let (train_loss, grads) = backward(&params, &train_inputs, &train_labels, w, Some(&masks))?;
        if !train_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                message: format!("training loss is {train_loss}"),
            });
        }
        adam_step(&mut params, &grads, &mut adam, config.learning_rate, config.weight_decay);
        if params.validate().is_err() {
            return Err(Error::Training {
                epoch,
                message: "parameters became non-finite".into(),
            });
        }
        let val = eval_rows(&params, &val_inputs, &val_labels, w)?;
        if !val.loss.is_finite() {
            return Err(Error::Training {
                epoch,
                message: format!("validation loss is {}", val.loss),
            });
        }
        history.records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss: val.loss,
            val_accuracy: val.accuracy,
            val_uncertainty: val.uncertainty,
        });
        let improved = match best {
            None => true,
            Some((loss, acc)) => val.loss < loss || (val.loss == loss && val.accuracy > acc),
        };
        if improved {
            best = Some((val.loss, val.accuracy));
            best_params = params.clone();
            history.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    Ok((
        Model {
            params: best_params,
            config: config.clone(),
        },
        history,
    ))
}

/// Evaluation-mode outputs for the nodes of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Node indices, ascending.
    pub nodes: Vec<usize>,
    pub labels: Vec<usize>,
    pub predictions: Vec<usize>,
    /// Fused uncertainty mass `û = K / Ŝ` per node.
    pub uncertainty: Vec<f64>,
    /// Expected class probabilities, one row per node.
    pub probabilities: Array2<f64>,
    pub accuracy: f64,
    pub loss: f64,
}

impl Metrics {
    pub fn correct(&self) -> Vec<bool> {
        self.predictions
            .iter()
            .zip(&self.labels)
            .map(|(p, y)| p == y)
            .collect()
    }

    pub fn mean_uncertainty(&self) -> f64 {
        Array1::from(self.uncertainty.clone()).mean().unwrap_or(f64::NAN)
    }
}

/// Scores `model` on one split of `dataset`.
pub fn evaluate(model: &Model, dataset: &DatasetBundle, split: Split) -> Result<Metrics> {
    let propagated = propagate_dataset(dataset, &model.config)?;
    evaluate_propagated(model, dataset, &propagated, split)
}

/// Like [`evaluate`] but reuses already propagated features.
pub fn evaluate_propagated(
    model: &Model,
    dataset: &DatasetBundle,
    propagated: &PropagatedFeatures,
    split: Split,
) -> Result<Metrics> {
    let nodes = dataset.masks().indices(split);
    if nodes.is_empty() {
        return Err(Error::input(format!("{} mask is empty", split.name())));
    }
    if model.params.classes() != dataset.classes() {
        return Err(Error::input(format!(
            "model predicts {} classes but the dataset has {}",
            model.params.classes(),
            dataset.classes()
        )));
    }
    let inputs = HopInputs::new(propagated, &model.config.hop_set(), Some(&nodes))?;
    let fused = fuse_forward(&forward_evidence_eval(&model.params, &inputs)?);
    let labels: Vec<usize> = nodes.iter().map(|&i| dataset.labels()[i]).collect();
    let wrapped: Vec<Option<usize>> = labels.iter().copied().map(Some).collect();
    let loss = loss_total(&fused, &wrapped, model.config.loss_weights())?;
    let probabilities = fused.probabilities();
    let predictions = fused.predictions();
    let correct = predictions.iter().zip(&labels).filter(|(p, y)| p == y).count();
    Ok(Metrics {
        accuracy: correct as f64 / nodes.len() as f64,
        uncertainty: fused.uncertainty().to_vec(),
        nodes,
        labels,
        predictions,
        probabilities,
        loss,
    })
}

/// A scalar or a list of candidate values in a search-space file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Candidates<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> Candidates<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            Candidates::One(v) => vec![v.clone()],
            Candidates::Many(v) => v.clone(),
        }
    }
}

/// Every searchable field may be given as a list; the remaining fields are
/// shared by all grid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    #[serde(default)]
    pub learning_rate: Option<Candidates<f64>>,
    #[serde(default)]
    pub weight_decay: Option<Candidates<f64>>,
    #[serde(default)]
    pub hidden_size: Option<Candidates<usize>>,
    #[serde(default)]
    pub dropout_rate: Option<Candidates<f64>>,
    #[serde(default)]
    pub perturb_sigma: Option<Candidates<f64>>,
    #[serde(default)]
    pub propagation_steps: Option<Candidates<usize>>,
    #[serde(default)]
    pub lambda_kl: Option<Candidates<f64>>,
    #[serde(default)]
    pub lambda_dis: Option<Candidates<f64>>,
    #[serde(default)]
    pub include_hop0: Option<bool>,
    #[serde(default)]
    pub hops: Option<Vec<usize>>,
    #[serde(default)]
    pub row_normalize: Option<bool>,
    #[serde(default)]
    pub max_epochs: Option<usize>,
    #[serde(default)]
    pub patience: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl SearchSpace {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::input(format!("search space: {e}")))
    }

    /// A space containing exactly `config`.
    pub fn single(config: &TrainConfig) -> Self {
        Self {
            learning_rate: Some(Candidates::One(config.learning_rate)),
            weight_decay: Some(Candidates::One(config.weight_decay)),
            hidden_size: Some(Candidates::One(config.hidden_size)),
            dropout_rate: Some(Candidates::One(config.dropout_rate)),
            perturb_sigma: Some(Candidates::One(config.perturb_sigma)),
            propagation_steps: Some(Candidates::One(config.propagation_steps)),
            lambda_kl: Some(Candidates::One(config.lambda_kl)),
            lambda_dis: Some(Candidates::One(config.lambda_dis)),
            include_hop0: Some(config.include_hop0),
            hops: config.hops.clone(),
            row_normalize: Some(config.row_normalize),
            max_epochs: Some(config.max_epochs),
            patience: Some(config.patience),
            seed: Some(config.seed),
        }
    }

    /// All grid points in lexicographic order of the field list above.
    pub fn configs(&self) -> Result<Vec<TrainConfig>> {
        let base = TrainConfig {
            include_hop0: self.include_hop0.unwrap_or(TrainConfig::default().include_hop0),
            hops: self.hops.clone(),
            row_normalize: self.row_normalize.unwrap_or(TrainConfig::default().row_normalize),
            max_epochs: self.max_epochs.unwrap_or(TrainConfig::default().max_epochs),
            patience: self.patience.unwrap_or(TrainConfig::default().patience),
            seed: self.seed.unwrap_or(0),
            ..TrainConfig::default()
        };
        fn pick<T: Clone>(c: &Option<Candidates<T>>, default: T, name: &str) -> Result<Vec<T>> {
            let v = c.as_ref().map_or_else(|| vec![default], Candidates::values);
            if v.is_empty() {
                return Err(Error::input(format!("search space field `{name}` is empty")));
            }
            Ok(v)
        }
        let lr = pick(&self.learning_rate, base.learning_rate, "learning_rate")?;
        let wd = pick(&self.weight_decay, base.weight_decay, "weight_decay")?;
        let hs = pick(&self.hidden_size, base.hidden_size, "hidden_size")?;
        let dr = pick(&self.dropout_rate, base.dropout_rate, "dropout_rate")?;
        let ps = pick(&self.perturb_sigma, base.perturb_sigma, "perturb_sigma")?;
        let ts = pick(&self.propagation_steps, base.propagation_steps, "propagation_steps")?;
        let kl = pick(&self.lambda_kl, base.lambda_kl, "lambda_kl")?;
        let dis = pick(&self.lambda_dis, base.lambda_dis, "lambda_dis")?;
        let mut out = Vec::new();
        for &learning_rate in &lr {
            for &weight_decay in &wd {
                for &hidden_size in &hs {
                    for &dropout_rate in &dr {
                        for &perturb_sigma in &ps {
                            for &propagation_steps in &ts {
                                for &lambda_kl in &kl {
                                    for &lambda_dis in &dis {
                                        out.push(TrainConfig {
                                            learning_rate,
                                            weight_decay,
                                            hidden_size,
                                            dropout_rate,
                                            perturb_sigma,
                                            propagation_steps,
                                            lambda_kl,
                                            lambda_dis,
                                            ..base.clone()
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Averaged outcome of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub config: TrainConfig,
    pub config_hash: String,
    pub trials: usize,
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub test_accuracy: f64,
    /// `None` on success, otherwise the error that aborted a trial.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    /// Index into `rows` of the selected configuration.
    pub best: usize,
}

impl GridResult {
    pub fn best_config(&self) -> &TrainConfig {
        &self.rows[self.best].config
    }
}

fn run_grid_point(dataset: &DatasetBundle, config: &TrainConfig, trials: usize) -> GridRow {
    let mut row = GridRow {
        config: config.clone(),
        config_hash: config.hash(),
        trials,
        val_accuracy: f64::NAN,
        val_loss: f64::NAN,
        test_accuracy: f64::NAN,
        failure: None,
    };
    let mut sums = (0.0, 0.0, 0.0);
    let has_test = !dataset.masks().indices(Split::Test).is_empty();
    for trial in 0..trials {
        let cfg = TrainConfig {
            seed: config.seed.wrapping_add(trial as u64),
            ..config.clone()
        };
        let outcome = train(dataset, &cfg).and_then(|(model, _)| {
            let propagated = propagate_dataset(dataset, &cfg)?;
            let val = evaluate_propagated(&model, dataset, &propagated, Split::Val)?;
            let test = if has_test {
                evaluate_propagated(&model, dataset, &propagated, Split::Test)?.accuracy
            } else {
                f64::NAN
            };
            Ok((val.accuracy, val.loss, test))
        });
        match outcome {
            Ok((a, l, t)) => {
                sums.0 += a;
                sums.1 += l;
                sums.2 += t;
            }
            Err(e) => {
                row.failure = Some(e.to_string());
                return row;
            }
        }
    }
    let n = trials as f64;
    row.val_accuracy = sums.0 / n;
    row.val_loss = sums.1 / n;
    row.test_accuracy = sums.2 / n;
    row
}

/// Trains every grid point `trials` times (seeds `seed, seed + 1, ...`)
/// and selects the highest mean validation accuracy, then the lowest mean
/// validation loss, then the earliest grid point. Grid points run in
/// parallel; failed points are reported and never selected.
pub fn grid_search(dataset: &DatasetBundle, space: &SearchSpace, trials: usize) -> Result<GridResult> {
    if trials == 0 {
        return Err(Error::input("trials must be >= 1"));
    }
    let configs = space.configs()?;
    let rows: Vec<GridRow> = configs
        .par_iter()
        .map(|c| match c.validate() {
            Ok(()) => run_grid_point(dataset, c, trials),
            Err(e) => GridRow {
                config: c.clone(),
                config_hash: c.hash(),
                trials,
                val_accuracy: f64::NAN,
                val_loss: f64::NAN,
                test_accuracy: f64::NAN,
                failure: Some(e.to_string()),
            },
        })
        .collect();
    let best = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.failure.is_none())
        .min_by(|(_, a), (_, b)| {
            b.val_accuracy
                .total_cmp(&a.val_accuracy)
                .then(a.val_loss.total_cmp(&b.val_loss))
        })
        .map(|(i, _)| i);
    match best {
        Some(best) => Ok(GridResult { rows, best }),
        None => Err(Error::input(format!(
            "every grid point failed; first error: {}",
            rows[0].failure.as_deref().unwrap_or("unknown")
        ))),
    }
}

/// Per-row class-probability standard deviation (population form).
pub fn probability_std(probabilities: &Array2<f64>) -> Vec<f64> {
    probabilities
        .rows()
        .into_iter()
        .map(|r| r.std(0.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_sbm, SbmSpec};
    use crate::graph::propagate_call_count;

    fn quick_config() -> TrainConfig {
        TrainConfig {
            hidden_size: 16,
            propagation_steps: 3,
            max_epochs: 60,
            patience: 20,
            ..TrainConfig::default()
        }
    }

    fn small_sbm() -> DatasetBundle {
        generate_sbm(&SbmSpec {
            n: 90,
            classes: 3,
            p_in: 0.2,
            p_out: 0.02,
            feature_dim: 6,
            train_per_class: 5,
            val_per_class: 5,
            ..SbmSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { dropout_rate: 1.0, ..TrainConfig::default() },
            TrainConfig { perturb_sigma: -0.1, ..TrainConfig::default() },
            TrainConfig { propagation_steps: 0, ..TrainConfig::default() },
            TrainConfig { patience: 0, ..TrainConfig::default() },
            TrainConfig { lambda_kl: -1.0, ..TrainConfig::default() },
            TrainConfig { hops: Some(vec![9]), ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn hop_set_variants() {
        let c = TrainConfig { propagation_steps: 3, ..TrainConfig::default() };
        assert_eq!(c.hop_set(), vec![0, 1, 2, 3]);
        let c = TrainConfig { include_hop0: false, ..c };
        assert_eq!(c.hop_set(), vec![1, 2, 3]);
        let c = TrainConfig { hops: Some(vec![3, 1, 3]), ..c };
        assert_eq!(c.hop_set(), vec![1, 3]);
    }

    #[test]
    fn config_toml_round_trip_and_hash() {
        let c = TrainConfig { lambda_kl: 0.01, seed: 7, ..TrainConfig::default() };
        let text = toml::to_string(&c).unwrap();
        let back = TrainConfig::from_toml(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
        assert_ne!(c.hash(), TrainConfig::default().hash());
        assert!(TrainConfig::from_toml("learning_rat = 0.1").is_err());
        assert_eq!(TrainConfig::from_toml("").unwrap(), TrainConfig::default());
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut rng = stream(1, Stream::Init);
        let mut p = ModelParams::glorot(3, 4, 2, &mut rng);
        let before = p.clone();
        let g = ModelParams::zeros(3, 4, 2);
        let mut s = AdamState::new(&p);
        for _ in 0..5 {
            adam_step(&mut p, &g, &mut s, 0.1, 0.0);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_is_sign_times_lr() {
        let mut p = ModelParams::zeros(2, 2, 2);
        let mut g = ModelParams::zeros(2, 2, 2);
        g.w1[[0, 0]] = 3.5;
        g.w1[[1, 1]] = -0.2;
        g.b2[1] = 1e3;
        let mut s = AdamState::new(&p);
        let lr = 0.01;
        adam_step(&mut p, &g, &mut s, lr, 0.0);
        assert!((p.w1[[0, 0]] + lr).abs() < 1e-9);
        assert!((p.w1[[1, 1]] - lr).abs() < 1e-9);
        assert!((p.b2[1] + lr).abs() < 1e-9);
        assert_eq!(p.w1[[0, 1]], 0.0);
    }

    #[test]
    fn adam_weight_decay_is_multiplicative() {
        let mut p = ModelParams::zeros(1, 1, 2);
        p.w1[[0, 0]] = 2.0;
        let g = ModelParams::zeros(1, 1, 2);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 0.1, 0.5);
        assert!((p.w1[[0, 0]] - 2.0 * 0.95).abs() < 1e-15);
    }

    #[test]
    fn adam_converges_on_quadratic_bowl() {
        // f(w) = Σ c_i (w_i - t_i)², gradient 2 c_i (w_i - t_i)
        let target = [1.5, -0.7, 0.3, 2.0];
        let curv = [1.0, 4.0, 0.5, 2.0];
        let mut p = ModelParams::zeros(1, 1, 2);
        let mut s = AdamState::new(&p);
        let mut dist = Vec::new();
        for _ in 0..100 {
            let mut g = ModelParams::zeros(1, 1, 2);
            let flat = [p.w1[[0, 0]], p.b1[0], p.w2[[0, 0]], p.w2[[0, 1]]];
            let gs: Vec<f64> = (0..4).map(|i| 2.0 * curv[i] * (flat[i] - target[i])).collect();
            g.w1[[0, 0]] = gs[0];
            g.b1[0] = gs[1];
            g.w2[[0, 0]] = gs[2];
            g.w2[[0, 1]] = gs[3];
            adam_step(&mut p, &g, &mut s, 0.05, 0.0);
            let flat = [p.w1[[0, 0]], p.b1[0], p.w2[[0, 0]], p.w2[[0, 1]]];
            dist.push(
                flat.iter()
                    .zip(target)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt(),
            );
        }
        let start = dist[0];
        // after burn-in the distance never grows by more than round-off
        // over a ten-step window, and ends well below the start
        for w in dist[10..].windows(10) {
            assert!(w[9] <= w[0] + 1e-12, "{w:?}");
        }
        assert!(dist[99] < 0.2 * start);
    }

    #[test]
    fn max_epochs_zero_returns_initialisation() {
        let ds = small_sbm();
        let cfg = TrainConfig { max_epochs: 0, ..quick_config() };
        let (model, hist) = train(&ds, &cfg).unwrap();
        assert!(hist.records.is_empty());
        assert_eq!(hist.best_epoch, None);
        let mut rng = stream(cfg.seed, Stream::Init);
        let init = ModelParams::glorot(ds.features().d(), cfg.hidden_size, 3, &mut rng);
        assert_eq!(model.params, init);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = small_sbm();
        let (m1, h1) = train(&ds, &quick_config()).unwrap();
        let (m2, h2) = train(&ds, &quick_config()).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
        let (_, h3) = train(&ds, &TrainConfig { seed: 1, ..quick_config() }).unwrap();
        assert_ne!(h1, h3);
    }

    #[test]
    fn propagation_runs_once_per_training_run() {
        let ds = small_sbm();
        let before = propagate_call_count();
        train(&ds, &quick_config()).unwrap();
        assert_eq!(propagate_call_count() - before, 1);
    }

    #[test]
    fn history_respects_limits() {
        let ds = small_sbm();
        let cfg = TrainConfig { max_epochs: 500, patience: 5, ..quick_config() };
        let (_, h) = train(&ds, &cfg).unwrap();
        assert!(h.records.len() <= 500);
        let best = h.best_epoch.unwrap();
        assert!(best < h.records.len());
        assert!(h.records.len() - 1 - best <= 5);
        for r in &h.records {
            assert!(h.best().unwrap().val_loss <= r.val_loss);
        }
    }

    #[test]
    fn empty_masks_are_input_errors() {
        let ds = small_sbm();
        let mut m = ds.masks().clone();
        m.train.iter_mut().for_each(|v| *v = false);
        let err = train(&ds.with_masks(m).unwrap(), &quick_config()).unwrap_err();
        assert!(err.is_input_error());
    }

    #[test]
    fn divergence_reports_epoch() {
        let ds = small_sbm();
        let x = ds.features().data().mapv(|v| v * 1e300);
        let ds = ds
            .with_features(crate::graph::FeatureMatrix::new(x).unwrap())
            .unwrap();
        let cfg = TrainConfig { learning_rate: 1e3, ..quick_config() };
        match train(&ds, &cfg) {
            Err(Error::Training { .. }) => {}
            other => panic!("expected a training error, got {other:?}"),
        }
    }

    #[test]
    fn evaluate_zero_head_is_constant() {
        let ds = small_sbm();
        let cfg = quick_config();
        let model = Model {
            params: ModelParams::zeros(ds.features().d(), cfg.hidden_size, 3),
            config: cfg,
        };
        let m = evaluate(&model, &ds, Split::Test).unwrap();
        assert!(m.uncertainty.windows(2).all(|w| w[0] == w[1]));
        // equal evidence everywhere: lowest index wins
        assert!(m.predictions.iter().all(|&p| p == 0));
        let share = m.labels.iter().filter(|&&y| y == 0).count() as f64 / m.labels.len() as f64;
        assert_eq!(m.accuracy, share);
        assert_eq!(m, evaluate(&model, &ds, Split::Test).unwrap());
    }

    #[test]
    fn evaluate_perfect_evidence_head() {
        // one-hot features with a head that maps class c straight to huge evidence for c
        let n = 6;
        let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..2).map(|c| (i % 2 == c) as u8 as f64).collect()).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let mut masks = crate::data::SplitMasks::empty(n);
        masks.train[0] = true;
        masks.val[1] = true;
        (2..n).for_each(|i| masks.test[i] = true);
        let ds = DatasetBundle::new(
            crate::graph::FeatureMatrix::from_rows(rows).unwrap(),
            vec![],
            labels,
            masks,
        )
        .unwrap();
        let mut params = ModelParams::zeros(2, 2, 2);
        params.w1 = ndarray::array![[1.0, 0.0], [0.0, 1.0]];
        params.w2 = ndarray::array![[1e6, -1e6], [-1e6, 1e6]];
        let config = TrainConfig { hops: Some(vec![0]), propagation_steps: 1, ..TrainConfig::default() };
        let m = evaluate(&Model { params, config }, &ds, Split::Test).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert!(m.uncertainty.iter().all(|&u| u < 1e-5));
    }

    #[test]
    fn grid_single_point_returns_it() {
        let ds = small_sbm();
        let cfg = quick_config();
        let g = grid_search(&ds, &SearchSpace::single(&cfg), 1).unwrap();
        assert_eq!(g.rows.len(), 1);
        assert_eq!(g.best_config(), &cfg);
    }

    #[test]
    fn grid_skips_degenerate_learning_rate() {
        let ds = small_sbm();
        let mut space = SearchSpace::single(&quick_config());
        space.learning_rate = Some(Candidates::Many(vec![0.0, 0.01]));
        let g = grid_search(&ds, &space, 1).unwrap();
        assert_eq!(g.rows.len(), 2);
        assert!(g.rows[0].failure.is_some());
        assert_eq!(g.best_config().learning_rate, 0.01);
    }

    #[test]
    fn search_space_parses_scalars_and_lists() {
        let s = SearchSpace::from_toml("lambda_kl = [0.01, 0.05, 0.1]\nlambda_dis = [0.0, 0.5]\nhidden_size = 8\n").unwrap();
        let cs = s.configs().unwrap();
        assert_eq!(cs.len(), 6);
        assert!(cs.iter().all(|c| c.hidden_size == 8));
        assert_eq!((cs[1].lambda_kl, cs[1].lambda_dis), (0.01, 0.5));
        assert!(SearchSpace::from_toml("lambda_kl = []").unwrap().configs().is_err());
    }

    #[test]
    fn probability_std_population_form() {
        let p = ndarray::array![[0.5, 0.5], [1.0, 0.0]];
        assert_eq!(probability_std(&p), vec![0.0, 0.5]);
    }
}
