//! Subjective-logic opinions and their Dirichlet parameterisation.
//!
//! An [`Evidence`] vector maps to a [`DirichletParams`] by `α = e + 1`, and a
//! Dirichlet maps to a multinomial [`Opinion`] by `b = (α - 1) / S`,
//! `u = K / S`. Cumulative belief fusion is evidence addition
//! ([`fuse_evidence`]); [`fuse_opinions`] is the same operator expressed
//! directly on opinions.

use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-9;
const BASE_RATE_TOL: f64 = 1e-12;

/// Non-negative per-class evidence mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Evidence(Vec<f64>);

impl Evidence {
    pub fn new(e: Vec<f64>) -> Result<Self> {
        if e.len() < 2 {
            return Err(Error::input(format!(
                "evidence needs at least 2 classes, got {}",
                e.len()
            )));
        }
        if let Some((k, v)) = e.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::input(format!(
                "evidence must be finite and non-negative, class {k} has {v}"
            )));
        }
        Ok(Self(e))
    }

    pub fn zeros(k: usize) -> Result<Self> {
        Self::new(vec![0.0; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Dirichlet concentration `α` with its cached strength `S = Σ α`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParams {
    alpha: Vec<f64>,
    strength: f64,
}

impl DirichletParams {
    /// Every `α_k` must be finite and at least 1.
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(Error::input("dirichlet needs at least 2 classes"));
        }
        if let Some(a) = alpha.iter().find(|a| !(a.is_finite() && **a >= 1.0)) {
            return Err(Error::input(format!("dirichlet parameter {a} is below 1")));
        }
        let strength = alpha.iter().sum();
        Ok(Self { alpha, strength })
    }

    pub fn from_evidence(e: &Evidence) -> Self {
        let alpha: Vec<f64> = e.0.iter().map(|v| v + 1.0).collect();
        let strength = alpha.iter().sum();
        Self { alpha, strength }
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn classes(&self) -> usize {
        self.alpha.len()
    }

    /// `E[p_k] = α_k / S`.
    pub fn expected_probability(&self) -> Vec<f64> {
        self.alpha.iter().map(|a| a / self.strength).collect()
    }

    /// `b_k = (α_k - 1) / S`.
    pub fn belief(&self) -> Vec<f64> {
        self.alpha.iter().map(|a| (a - 1.0) / self.strength).collect()
    }

    /// `u = K / S`.
    pub fn uncertainty(&self) -> f64 {
        self.alpha.len() as f64 / self.strength
    }

    pub fn to_evidence(&self) -> Evidence {
        Evidence(self.alpha.iter().map(|a| a - 1.0).collect())
    }
}

/// A multinomial opinion `ω = (b, u, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Opinion {
    belief: Vec<f64>,
    uncertainty: f64,
    base_rate: Vec<f64>,
}

impl Opinion {
    pub fn new(belief: Vec<f64>, uncertainty: f64, base_rate: Vec<f64>) -> Result<Self> {
        let k = belief.len();
        if k < 2 || base_rate.len() != k {
            return Err(Error::input(format!(
                "opinion has {} beliefs and {} base rates",
                k,
                base_rate.len()
            )));
        }
        if uncertainty.is_nan() || uncertainty < 0.0 || belief.iter().any(|b| b.is_nan() || *b < 0.0) {
            return Err(Error::input("opinion masses must be non-negative"));
        }
        let mass = uncertainty + belief.iter().sum::<f64>();
        if (mass - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::input(format!("opinion masses sum to {mass}, not 1")));
        }
        validate_base_rate(&base_rate)?;
        Ok(Self {
            belief,
            uncertainty,
            base_rate,
        })
    }

    /// The opinion with no belief at all (`u = 1`) and a uniform base rate.
    pub fn vacuous(k: usize) -> Self {
        Self {
            belief: vec![0.0; k],
            uncertainty: 1.0,
            base_rate: uniform_base_rate(k),
        }
    }

    pub fn belief(&self) -> &[f64] {
        &self.belief
    }

    pub fn uncertainty(&self) -> f64 {
        self.uncertainty
    }

    pub fn base_rate(&self) -> &[f64] {
        &self.base_rate
    }

    pub fn classes(&self) -> usize {
        self.belief.len()
    }

    /// `p_k = b_k + a_k u`.
    pub fn projected_probability(&self) -> Vec<f64> {
        self.belief
            .iter()
            .zip(&self.base_rate)
            .map(|(b, a)| b + a * self.uncertainty)
            .collect()
    }

    /// Recovers the evidence behind a non-dogmatic opinion, `e_k = K b_k / u`.
    pub fn to_evidence(&self) -> Result<Evidence> {
        if self.uncertainty <= 0.0 {
            return Err(Error::DogmaticFusion);
        }
        let w = self.belief.len() as f64;
        Evidence::new(self.belief.iter().map(|b| w * b / self.uncertainty).collect())
    }
}

pub fn uniform_base_rate(k: usize) -> Vec<f64> {
    vec![1.0 / k as f64; k]
}

fn validate_base_rate(a: &[f64]) -> Result<()> {
    if a.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::input("base rates must be finite and non-negative"));
    }
    let sum: f64 = a.iter().sum();
    if (sum - 1.0).abs() > BASE_RATE_TOL {
        return Err(Error::input(format!("base rates sum to {sum}, not 1")));
    }
    Ok(())
}

pub fn evidence_to_dirichlet(e: &Evidence) -> DirichletParams {
    DirichletParams::from_evidence(e)
}

pub fn dirichlet_to_opinion(alpha: &DirichletParams, base_rate: &[f64]) -> Result<Opinion> {
    if base_rate.len() != alpha.classes() {
        return Err(Error::input("base rate length does not match class count"));
    }
    validate_base_rate(base_rate)?;
    Ok(Opinion {
        belief: alpha.belief(),
        uncertainty: alpha.uncertainty(),
        base_rate: base_rate.to_vec(),
    })
}

/// Cumulative belief fusion in evidence form: `ê_k = Σ_ℓ e_k^ℓ`.
pub fn fuse_evidence(hops: &[Evidence]) -> Result<Evidence> {
    let first = hops
        .first()
        .ok_or_else(|| Error::input("cannot fuse an empty list of evidence"))?;
    let k = first.classes();
    let mut sum = vec![0.0; k];
    for e in hops {
        if e.classes() != k {
            return Err(Error::input(format!(
                "evidence class counts differ ({} vs {k})",
                e.classes()
            )));
        }
        for (s, v) in sum.iter_mut().zip(&e.0) {
            *s += v;
        }
    }
    Ok(Evidence(sum))
}

/// Cumulative belief fusion of two opinions sharing a base rate:
///
/// `û = u₁u₂ / (u₁ + u₂ - u₁u₂)`, `b̂_k = (b₁_k u₂ + u₁ b₂_k) / (u₁ + u₂ - u₁u₂)`.
///
/// Fails with [`Error::DogmaticFusion`] when both uncertainties are zero.
pub fn fuse_opinions(w1: &Opinion, w2: &Opinion) -> Result<Opinion> {
    if w1.classes() != w2.classes() {
        return Err(Error::input("opinions have different class counts"));
    }
    if w1
        .base_rate
        .iter()
        .zip(&w2.base_rate)
        .any(|(a, b)| (a - b).abs() > BASE_RATE_TOL)
    {
        return Err(Error::input("opinions have different base rates"));
    }
    let (u1, u2) = (w1.uncertainty, w2.uncertainty);
    if u1 == 0.0 && u2 == 0.0 {
        return Err(Error::DogmaticFusion);
    }
    let denom = u1 + u2 - u1 * u2;
    let belief = w1
        .belief
        .iter()
        .zip(&w2.belief)
        .map(|(b1, b2)| (b1 * u2 + u1 * b2) / denom)
        .collect();
    Ok(Opinion {
        belief,
        uncertainty: u1 * u2 / denom,
        base_rate: w1.base_rate.clone(),
    })
}

/// Relative mass balance between two belief masses.
pub fn balance(bq: f64, bj: f64) -> f64 {
    if bq * bj != 0.0 {
        1.0 - (bq - bj).abs() / (bq + bj)
    } else {
        0.0
    }
}

/// Dissonance of a belief vector: for every class `j`, the balance of the
/// other classes' masses against `b_j`, weighted by their relative mass and
/// by `b_j` itself. Terms whose complementary mass is zero contribute 0.
pub fn dissonance(belief: &[f64]) -> f64 {
    let total: f64 = belief.iter().sum();
    belief
        .iter()
        .enumerate()
        .map(|(j, &bj)| {
            let others = total - bj;
            if bj == 0.0 || others <= 0.0 {
                return 0.0;
            }
            let weighted: f64 = belief
                .iter()
                .enumerate()
                .filter(|(q, _)| *q != j)
                .map(|(_, &bq)| bq * balance(bq, bj))
                .sum();
            bj * weighted / others
        })
        .sum()
}

/// Gradient of [`dissonance`] with respect to each belief mass.
///
/// Uses `b_q · Bal(b_q, b_j) = 2 b_q min(b_q, b_j) / (b_q + b_j)`; at exact
/// ties the `b_q < b_j` branch is taken.
pub fn dissonance_gradient(belief: &[f64]) -> Vec<f64> {
    let k = belief.len();
    let total: f64 = belief.iter().sum();
    let mut grad = vec![0.0; k];
    for (j, &bj) in belief.iter().enumerate() {
        let others = total - bj;
        if bj == 0.0 || others <= 0.0 {
            continue;
        }
        let mut weighted = 0.0;
        // ∂(weighted)/∂b_q for q ≠ j, and the accumulated ∂(weighted)/∂b_j
        let mut d_other = vec![0.0; k];
        let mut d_self = 0.0;
        for (q, &bq) in belief.iter().enumerate() {
            if q == j || bq == 0.0 {
                continue;
            }
            let s = bq + bj;
            let s2 = s * s;
            if bq <= bj {
                weighted += 2.0 * bq * bq / s;
                d_other[q] = (2.0 * bq * bq + 4.0 * bq * bj) / s2;
                d_self += -2.0 * bq * bq / s2;
            } else {
                weighted += 2.0 * bq * bj / s;
                d_other[q] = 2.0 * bj * bj / s2;
                d_self += 2.0 * bq * bq / s2;
            }
        }
        // term_j = bj * weighted / others, where others = Σ_{q≠j} b_q
        let term = bj * weighted / others;
        grad[j] += weighted / others + bj * d_self / others;
        for q in 0..k {
            if q != j {
                grad[q] += bj * d_other[q] / others - term / others;
            }
        }
    }
    grad
}
