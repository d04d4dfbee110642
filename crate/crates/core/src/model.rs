//! The shared evidence head, evidence fusion, the three-term evidential loss
//! and its hand-derived reverse pass.
//!
//! The head is a two-layer perceptron applied with the same weights to every
//! propagated hop:
//!
//! ```text
//! E^ℓ = softplus( relu(X̃^ℓ W1 + b1) ⊙ keep W2 + b2 )
//! ```
//!
//! Per-hop evidence is fused by summation, `α̂ = 1 + Σ_ℓ E^ℓ`, and the loss for
//! a labelled node is `ECE + λ_dis · dissonance + λ_kl · KL`, averaged over the
//! labelled nodes.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{node_keep_mask, PropagatedFeatures};
use crate::special::{digamma_unchecked, lgamma_unchecked, trigamma_unchecked};
use crate::subjective_logic::{dissonance, dissonance_gradient, uniform_base_rate, DirichletParams, Opinion};

/// Weights of the shared evidence head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl ModelParams {
    pub fn zeros(d: usize, h: usize, k: usize) -> Self {
        Self {
            w1: Array2::zeros((d, h)),
            b1: Array1::zeros(h),
            w2: Array2::zeros((h, k)),
            b2: Array1::zeros(k),
        }
    }

    /// Glorot-uniform weights and zero biases.
    pub fn glorot<R: Rng + ?Sized>(d: usize, h: usize, k: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(d, h, k);
        let l1 = (6.0 / (d + h) as f64).sqrt();
        let l2 = (6.0 / (h + k) as f64).sqrt();
        p.w1.mapv_inplace(|_| rng.random_range(-l1..l1));
        p.w2.mapv_inplace(|_| rng.random_range(-l2..l2));
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn classes(&self) -> usize {
        self.w2.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h) = self.w1.dim();
        let k = self.w2.ncols();
        if h == 0 || self.b1.len() != h || self.w2.nrows() != h || self.b2.len() != k {
            return Err(Error::input(format!(
                "inconsistent head shapes: w1 {:?}, b1 {}, w2 {:?}, b2 {}",
                (d, h),
                self.b1.len(),
                self.w2.dim(),
                self.b2.len()
            )));
        }
        if self.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::input("head parameters contain non-finite values"));
        }
        Ok(())
    }

    /// Flat views in a fixed order: w1, b1, w2, b2.
    pub fn tensors(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// Non-negative loss weights `λ_kl` and `λ_dis`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_kl: f64,
    pub lambda_dis: f64,
}

impl LossWeights {
    pub fn new(lambda_kl: f64, lambda_dis: f64) -> Result<Self> {
        for (name, v) in [("lambda_kl", lambda_kl), ("lambda_dis", lambda_dis)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::input(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(Self {
            lambda_kl,
            lambda_dis,
        })
    }

    /// Evidence cross-entropy only.
    pub fn ece_only() -> Self {
        Self {
            lambda_kl: 0.0,
            lambda_dis: 0.0,
        }
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Features for the hops fed to the head, optionally restricted to a subset
/// of node rows.
#[derive(Debug, Clone)]
pub struct HopInputs {
    hops: Vec<usize>,
    features: Vec<Array2<f64>>,
}

impl HopInputs {
    pub fn new(propagated: &PropagatedFeatures, hops: &[usize], rows: Option<&[usize]>) -> Result<Self> {
        if hops.is_empty() {
            return Err(Error::input("hop set is empty"));
        }
        let mut features = Vec::with_capacity(hops.len());
        for &l in hops {
            if l > propagated.steps() {
                return Err(Error::input(format!(
                    "hop {l} requested but only {} propagation steps were computed",
                    propagated.steps()
                )));
            }
            let x = propagated.hop(l).data();
            features.push(match rows {
                Some(r) => x.select(Axis(0), r),
                None => x.clone(),
            });
        }
        Ok(Self {
            hops: hops.to_vec(),
            features,
        })
    }

    pub fn hops(&self) -> &[usize] {
        &self.hops
    }

    pub fn features(&self) -> &[Array2<f64>] {
        &self.features
    }

    pub fn n(&self) -> usize {
        self.features[0].nrows()
    }

    pub fn d(&self) -> usize {
        self.features[0].ncols()
    }
}

/// Random masks for one training forward pass, one entry per hop.
#[derive(Debug, Clone)]
pub struct ForwardMasks {
    /// Per-node input multipliers (node-level perturbation).
    pub node_keep: Vec<Vec<f64>>,
    /// Per-unit hidden multipliers (element-wise dropout).
    pub hidden_keep: Vec<Array2<f64>>,
}

impl ForwardMasks {
    /// Draws perturbation masks from `perturb_rng` and dropout masks from
    /// `dropout_rng`, keeping the two random streams independent.
    pub fn sample<R1: Rng + ?Sized, R2: Rng + ?Sized>(
        hops: usize,
        n: usize,
        hidden: usize,
        perturb_sigma: f64,
        dropout: f64,
        perturb_rng: &mut R1,
        dropout_rng: &mut R2,
    ) -> Result<Self> {
        Ok(Self {
            node_keep: node_masks(hops, n, perturb_sigma, perturb_rng)?,
            hidden_keep: hidden_masks(hops, n, hidden, dropout, dropout_rng)?,
        })
    }
}

fn node_masks<R: Rng + ?Sized>(hops: usize, n: usize, sigma: f64, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    (0..hops).map(|_| node_keep_mask(n, sigma, rng)).collect()
}

fn hidden_masks<R: Rng + ?Sized>(
    hops: usize,
    n: usize,
    hidden: usize,
    dropout: f64,
    rng: &mut R,
) -> Result<Vec<Array2<f64>>> {
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::input(format!("dropout must lie in [0, 1), got {dropout}")));
    }
    let scale = 1.0 / (1.0 - dropout);
    Ok((0..hops)
        .map(|_| {
            if dropout == 0.0 {
                Array2::ones((n, hidden))
            } else {
                Array2::from_shape_simple_fn((n, hidden), || {
                    if rng.random::<f64>() < dropout {
                        0.0
                    } else {
                        scale
                    }
                })
            }
        })
        .collect())
}

/// Per-hop evidence matrices (`n × K` each).
#[derive(Debug, Clone, PartialEq)]
pub struct HopEvidenceSet {
    hops: Vec<usize>,
    evidence: Vec<Array2<f64>>,
}

impl HopEvidenceSet {
    pub fn new(hops: Vec<usize>, evidence: Vec<Array2<f64>>) -> Result<Self> {
        if hops.is_empty() || hops.len() != evidence.len() {
            return Err(Error::input("hop list and evidence list must be non-empty and aligned"));
        }
        let dim = evidence[0].dim();
        for e in &evidence {
            if e.dim() != dim {
                return Err(Error::input("evidence matrices differ in shape"));
            }
            if e.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::input("evidence must be finite and non-negative"));
            }
        }
        Ok(Self { hops, evidence })
    }

    pub fn hops(&self) -> &[usize] {
        &self.hops
    }

    pub fn evidence(&self) -> &[Array2<f64>] {
        &self.evidence
    }

    pub fn n(&self) -> usize {
        self.evidence[0].nrows()
    }

    pub fn classes(&self) -> usize {
        self.evidence[0].ncols()
    }
}

/// Intermediate activations of one hop, kept for the reverse pass.
#[derive(Debug, Clone)]
struct HopCache {
    input: Array2<f64>,
    pre_hidden: Array2<f64>,
    hidden: Array2<f64>,
    pre_out: Array2<f64>,
}

fn check_dims(params: &ModelParams, inputs: &HopInputs) -> Result<()> {
    if params.input_dim() != inputs.d() {
        return Err(Error::input(format!(
            "head expects {} input features, got {}",
            params.input_dim(),
            inputs.d()
        )));
    }
    Ok(())
}

fn hop_forward(
    params: &ModelParams,
    x: ArrayView2<'_, f64>,
    node_keep: Option<&[f64]>,
    hidden_keep: Option<&Array2<f64>>,
) -> HopCache {
    let mut input = x.to_owned();
    if let Some(keep) = node_keep {
        for (mut row, k) in input.axis_iter_mut(Axis(0)).zip(keep) {
            row *= *k;
        }
    }
    let pre_hidden = input.dot(&params.w1) + &params.b1;
    let mut hidden = pre_hidden.mapv(|v| v.max(0.0));
    if let Some(keep) = hidden_keep {
        hidden *= keep;
    }
    let pre_out = hidden.dot(&params.w2) + &params.b2;
    HopCache {
        input,
        pre_hidden,
        hidden,
        pre_out,
    }
}

/// Evaluation-mode forward pass: no perturbation, no dropout.
pub fn forward_evidence_eval(params: &ModelParams, inputs: &HopInputs) -> Result<HopEvidenceSet> {
    check_dims(params, inputs)?;
    let evidence = inputs
        .features
        .iter()
        .map(|x| hop_forward(params, x.view(), None, None).pre_out.mapv(softplus))
        .collect();
    Ok(HopEvidenceSet {
        hops: inputs.hops.clone(),
        evidence,
    })
}

/// Training-mode forward pass with explicit masks.
pub fn forward_evidence_masked(
    params: &ModelParams,
    inputs: &HopInputs,
    masks: &ForwardMasks,
) -> Result<HopEvidenceSet> {
    check_dims(params, inputs)?;
    let evidence = inputs
        .features
        .iter()
        .enumerate()
        .map(|(i, x)| {
            hop_forward(
                params,
                x.view(),
                Some(&masks.node_keep[i]),
                Some(&masks.hidden_keep[i]),
            )
            .pre_out
            .mapv(softplus)
        })
        .collect();
    Ok(HopEvidenceSet {
        hops: inputs.hops.clone(),
        evidence,
    })
}

/// Forward pass through the shared head. With `train_mode` set, node rows
/// are perturbed with probability `perturb_sigma` and hidden units dropped
/// with probability `dropout`, drawing from `rng`.
pub fn forward_evidence<R: Rng + ?Sized>(
    params: &ModelParams,
    inputs: &HopInputs,
    perturb_sigma: f64,
    dropout: f64,
    rng: &mut R,
    train_mode: bool,
) -> Result<HopEvidenceSet> {
    if !train_mode {
        return forward_evidence_eval(params, inputs);
    }
    check_dims(params, inputs)?;
    let hops = inputs.hops.len();
    let masks = ForwardMasks {
        node_keep: node_masks(hops, inputs.n(), perturb_sigma, rng)?,
        hidden_keep: hidden_masks(hops, inputs.n(), params.hidden_dim(), dropout, rng)?,
    };
    forward_evidence_masked(params, inputs, &masks)
}

/// Fused per-node Dirichlet parameters `α̂ = 1 + Σ_ℓ E^ℓ` (`n × K`).
#[derive(Debug, Clone, PartialEq)]
pub struct FusedOutput {
    alpha: Array2<f64>,
}

impl FusedOutput {
    pub fn from_alpha(alpha: Array2<f64>) -> Result<Self> {
        if alpha.ncols() < 2 || alpha.iter().any(|a| !(a.is_finite() && *a >= 1.0)) {
            return Err(Error::input("fused alpha must have K >= 2 and entries >= 1"));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> &Array2<f64> {
        &self.alpha
    }

    pub fn n(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn classes(&self) -> usize {
        self.alpha.ncols()
    }

    pub fn dirichlet(&self, i: usize) -> DirichletParams {
        DirichletParams::new(self.alpha.row(i).to_vec()).expect("fused alpha is valid")
    }

    pub fn opinion(&self, i: usize) -> Opinion {
        let d = self.dirichlet(i);
        crate::subjective_logic::dirichlet_to_opinion(&d, &uniform_base_rate(d.classes()))
            .expect("uniform base rate is valid")
    }

    pub fn strength(&self) -> Array1<f64> {
        self.alpha.sum_axis(Axis(1))
    }

    /// `û_i = K / Ŝ_i` for every node.
    pub fn uncertainty(&self) -> Array1<f64> {
        let k = self.classes() as f64;
        self.strength().mapv(|s| k / s)
    }

    /// Expected class probabilities `α̂ / Ŝ`, row-wise.
    pub fn probabilities(&self) -> Array2<f64> {
        let s = self.strength();
        &self.alpha / &s.insert_axis(Axis(1))
    }

    /// Arg-max class per node; ties go to the lowest index.
    pub fn predictions(&self) -> Vec<usize> {
        self.alpha.rows().into_iter().map(argmax).collect()
    }
}

pub(crate) fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (k, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = k;
        }
    }
    best
}

/// Cumulative belief fusion across hops.
pub fn fuse_forward(evidence: &HopEvidenceSet) -> FusedOutput {
    let mut alpha = Array2::ones((evidence.n(), evidence.classes()));
    for e in &evidence.evidence {
        alpha += e;
    }
    FusedOutput { alpha }
}

fn check_label(alpha: &DirichletParams, label: usize) -> Result<()> {
    if label >= alpha.classes() {
        return Err(Error::input(format!(
            "label {label} out of range for {} classes",
            alpha.classes()
        )));
    }
    Ok(())
}

/// Evidence cross-entropy `ψ(S) - ψ(α_y)`.
pub fn loss_ece(alpha: &DirichletParams, label: usize) -> Result<f64> {
    check_label(alpha, label)?;
    Ok(ece_raw(alpha.alpha(), label))
}

/// Dissonance of the fused belief masses.
pub fn loss_dissonance(alpha: &DirichletParams) -> f64 {
    dissonance(&alpha.belief())
}

/// `KL(Dir(α̃) ‖ Dir(1))` where `α̃` replaces the true-class entry by 1.
pub fn loss_kl(alpha: &DirichletParams, label: usize) -> Result<f64> {
    check_label(alpha, label)?;
    Ok(kl_raw(alpha.alpha(), label))
}

fn ece_raw(alpha: &[f64], label: usize) -> f64 {
    let s: f64 = alpha.iter().sum();
    digamma_unchecked(s) - digamma_unchecked(alpha[label])
}

fn masked_alpha(alpha: &[f64], label: usize) -> Vec<f64> {
    alpha
        .iter()
        .enumerate()
        .map(|(k, a)| if k == label { 1.0 } else { *a })
        .collect()
}

fn kl_raw(alpha: &[f64], label: usize) -> f64 {
    let tilde = masked_alpha(alpha, label);
    let k = tilde.len() as f64;
    let s: f64 = tilde.iter().sum();
    let psi_s = digamma_unchecked(s);
    let mut kl = lgamma_unchecked(s) - lgamma_unchecked(k);
    for a in &tilde {
        kl += (a - 1.0) * (digamma_unchecked(*a) - psi_s) - lgamma_unchecked(*a);
    }
    kl
}

fn dissonance_raw(alpha: &[f64]) -> f64 {
    let s: f64 = alpha.iter().sum();
    let b: Vec<f64> = alpha.iter().map(|a| (a - 1.0) / s).collect();
    dissonance(&b)
}

/// Per-node loss and its gradient with respect to `α̂`.
fn node_loss_grad(alpha: &[f64], label: usize, w: LossWeights, grad: &mut [f64]) -> f64 {
    let k = alpha.len();
    let s: f64 = alpha.iter().sum();

    // ECE: ∂/∂α_j = ψ′(S) - [j = y] ψ′(α_y)
    let tri_s = trigamma_unchecked(s);
    grad.iter_mut().for_each(|g| *g = tri_s);
    grad[label] -= trigamma_unchecked(alpha[label]);
    let mut loss = ece_raw(alpha, label);

    if w.lambda_dis != 0.0 {
        let b: Vec<f64> = alpha.iter().map(|a| (a - 1.0) / s).collect();
        loss += w.lambda_dis * dissonance(&b);
        // b_k = (α_k - 1)/S  ⇒  ∂b_k/∂α_j = [k = j]/S - b_k/S
        let gb = dissonance_gradient(&b);
        let dot: f64 = gb.iter().zip(&b).map(|(g, b)| g * b).sum();
        for j in 0..k {
            grad[j] += w.lambda_dis * (gb[j] - dot) / s;
        }
    }

    if w.lambda_kl != 0.0 {
        loss += w.lambda_kl * kl_raw(alpha, label);
        // ∂KL/∂α̃_j = (α̃_j - 1) ψ′(α̃_j) - (S̃ - K) ψ′(S̃); the true class is masked out
        let tilde = masked_alpha(alpha, label);
        let st: f64 = tilde.iter().sum();
        let common = (st - k as f64) * trigamma_unchecked(st);
        for j in 0..k {
            if j != label {
                grad[j] += w.lambda_kl * ((tilde[j] - 1.0) * trigamma_unchecked(tilde[j]) - common);
            }
        }
    }
    loss
}

/// Mean loss over the labelled rows of `fused`.
///
/// `labels[i]` is the class of row `i`, or `None` to exclude the row.
pub fn loss_total(fused: &FusedOutput, labels: &[Option<usize>], w: LossWeights) -> Result<f64> {
    let (loss, _) = loss_and_alpha_grad(fused, labels, w, false)?;
    Ok(loss)
}

/// Individual terms averaged over labelled rows: (ECE, dissonance, KL).
pub fn loss_terms(fused: &FusedOutput, labels: &[Option<usize>]) -> Result<(f64, f64, f64)> {
    check_labels(fused, labels)?;
    let mut acc = (0.0, 0.0, 0.0);
    let mut m = 0usize;
    for (row, label) in fused.alpha.rows().into_iter().zip(labels) {
        if let Some(y) = *label {
            let a = row.as_slice().expect("standard layout");
            acc.0 += ece_raw(a, y);
            acc.1 += dissonance_raw(a);
            acc.2 += kl_raw(a, y);
            m += 1;
        }
    }
    if m == 0 {
        return Ok((0.0, 0.0, 0.0));
    }
    let m = m as f64;
    Ok((acc.0 / m, acc.1 / m, acc.2 / m))
}

fn check_labels(fused: &FusedOutput, labels: &[Option<usize>]) -> Result<()> {
    if labels.len() != fused.n() {
        return Err(Error::input(format!(
            "{} labels for {} nodes",
            labels.len(),
            fused.n()
        )));
    }
    if let Some(y) = labels.iter().flatten().find(|y| **y >= fused.classes()) {
        return Err(Error::input(format!("label {y} out of range")));
    }
    Ok(())
}

fn loss_and_alpha_grad(
    fused: &FusedOutput,
    labels: &[Option<usize>],
    w: LossWeights,
    want_grad: bool,
) -> Result<(f64, Array2<f64>)> {
    check_labels(fused, labels)?;
    let k = fused.classes();
    let mut grad = Array2::zeros(if want_grad { (fused.n(), k) } else { (0, k) });
    let m = labels.iter().filter(|l| l.is_some()).count();
    if m == 0 {
        return Ok((0.0, Array2::zeros((fused.n(), k))));
    }
    let mut total = 0.0;
    let mut scratch = vec![0.0; k];
    for (i, (row, label)) in fused.alpha.rows().into_iter().zip(labels).enumerate() {
        let Some(y) = *label else { continue };
        let a = row.as_slice().expect("standard layout");
        total += node_loss_grad(a, y, w, &mut scratch);
        if want_grad {
            for (g, s) in grad.row_mut(i).iter_mut().zip(&scratch) {
                *g = s / m as f64;
            }
        }
    }
    Ok((total / m as f64, grad))
}

/// Loss and parameter gradients for one training step with fixed masks.
///
/// `labels` is aligned with the rows of `inputs`; unlabelled rows carry no
/// loss. Returns the mean loss and gradients shaped like `params`.
pub fn backward(
    params: &ModelParams,
    inputs: &HopInputs,
    labels: &[Option<usize>],
    w: LossWeights,
    masks: Option<&ForwardMasks>,
) -> Result<(f64, ModelParams)> {
    check_dims(params, inputs)?;
    let caches: Vec<HopCache> = inputs
        .features
        .iter()
        .enumerate()
        .map(|(i, x)| {
            hop_forward(
                params,
                x.view(),
                masks.map(|m| m.node_keep[i].as_slice()),
                masks.map(|m| &m.hidden_keep[i]),
            )
        })
        .collect();
    let mut alpha = Array2::ones((inputs.n(), params.classes()));
    for c in &caches {
        alpha += &c.pre_out.mapv(softplus);
    }
    let fused = FusedOutput { alpha };
    let (loss, d_alpha) = loss_and_alpha_grad(&fused, labels, w, true)?;

    let mut grads = ModelParams::zeros(params.input_dim(), params.hidden_dim(), params.classes());
    for (i, c) in caches.iter().enumerate() {
        // every hop's evidence enters α̂ additively, so dL/dE^ℓ = dL/dα̂
        let mut d_out = d_alpha.clone();
        Zip::from(&mut d_out)
            .and(&c.pre_out)
            .for_each(|g, z| *g *= sigmoid(*z));
        grads.w2 += &c.hidden.t().dot(&d_out);
        grads.b2 += &d_out.sum_axis(Axis(0));
        let mut d_hidden = d_out.dot(&params.w2.t());
        if let Some(m) = masks {
            d_hidden *= &m.hidden_keep[i];
        }
        Zip::from(&mut d_hidden)
            .and(&c.pre_hidden)
            .for_each(|g, z| {
                if *z <= 0.0 {
                    *g = 0.0
                }
            });
        grads.w1 += &c.input.t().dot(&d_hidden);
        grads.b1 += &d_hidden.sum_axis(Axis(0));
    }
    Ok((loss, grads))
}
