//! Sparse symmetric-normalised adjacency and multi-hop feature propagation.

use std::cell::Cell;
use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

thread_local! {
    static PROPAGATE_CALLS: Cell<usize> = const { Cell::new(0) };
}

/// Number of [`propagate`] calls made on the current thread.
pub fn propagate_call_count() -> usize {
    PROPAGATE_CALLS.with(Cell::get)
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAdjacency {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseAdjacency {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Stored entries of row `i` as `(column, value)` pairs.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[span.clone()].binary_search(&j) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                out[[i, j]] = v;
            }
        }
        out
    }

    /// `self · x` for a dense right-hand side, parallel over output rows.
    pub fn matmul(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        assert_eq!(self.n, x.nrows(), "adjacency/feature row mismatch");
        let mut out = Array2::zeros((self.n, x.ncols()));
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut dst)| {
                for (j, v) in self.row(i) {
                    dst.scaled_add(v, &x.row(j));
                }
            });
        out
    }
}

/// Builds the self-looped, symmetric-normalised adjacency of an undirected
/// graph. Duplicate pairs (in either orientation) are collapsed and explicit
/// self-loop pairs are ignored, since every node receives exactly one.
pub fn normalize_adjacency(edges: &[(usize, usize)], n: usize) -> Result<SparseAdjacency> {
    if n == 0 {
        return Err(Error::input("graph must have at least one node"));
    }
    let mut neighbours: Vec<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
    for &(a, b) in edges {
        if a >= n || b >= n {
            return Err(Error::input(format!(
                "edge ({a}, {b}) references a node outside 0..{n}"
            )));
        }
        neighbours[a].insert(b);
        neighbours[b].insert(a);
    }
    let degree: Vec<usize> = neighbours.iter().map(BTreeSet::len).collect();

    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for (i, row) in neighbours.iter().enumerate() {
        for &j in row {
            col_idx.push(j);
            // integer product first: identical for (i, j) and (j, i)
            values.push(1.0 / ((degree[i] * degree[j]) as f64).sqrt());
        }
        row_ptr.push(col_idx.len());
    }
    Ok(SparseAdjacency {
        n,
        row_ptr,
        col_idx,
        values,
    })
}

/// Dense node-feature matrix, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(Array2<f64>);

impl FeatureMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("feature matrix contains non-finite values"));
        }
        Ok(Self(data))
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::input("feature rows have unequal lengths"));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let data = Array2::from_shape_vec((n, d), flat).map_err(|e| Error::input(e.to_string()))?;
        Self::new(data)
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn d(&self) -> usize {
        self.0.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// `hops[ℓ] = Â^ℓ X` for `ℓ = 0..=L`.
#[derive(Debug, Clone)]
pub struct PropagatedFeatures {
    hops: Vec<FeatureMatrix>,
}

impl PropagatedFeatures {
    pub fn hops(&self) -> &[FeatureMatrix] {
        &self.hops
    }

    pub fn hop(&self, l: usize) -> &FeatureMatrix {
        &self.hops[l]
    }

    /// Number of propagation steps `L` (one less than the number of hops).
    pub fn steps(&self) -> usize {
        self.hops.len() - 1
    }

    pub fn n(&self) -> usize {
        self.hops[0].n()
    }

    pub fn d(&self) -> usize {
        self.hops[0].d()
    }
}

pub fn propagate(
    adj: &SparseAdjacency,
    x: &FeatureMatrix,
    steps: usize,
) -> Result<PropagatedFeatures> {
    if adj.n() != x.n() {
        return Err(Error::input(format!(
            "adjacency has {} nodes but features have {} rows",
            adj.n(),
            x.n()
        )));
    }
    if steps == 0 {
        return Err(Error::input("propagation needs at least one step"));
    }
    PROPAGATE_CALLS.with(|c| c.set(c.get() + 1));
    let mut hops = Vec::with_capacity(steps + 1);
    hops.push(x.clone());
    for _ in 0..steps {
        let next = adj.matmul(hops.last().expect("non-empty").view());
        hops.push(FeatureMatrix(next));
    }
    Ok(PropagatedFeatures { hops })
}

/// Node-level random perturbation: each row is zeroed with probability
/// `sigma`; surviving rows are scaled by `1 / (1 - sigma)`.
pub fn perturb<R: Rng + ?Sized>(x: &FeatureMatrix, sigma: f64, rng: &mut R) -> Result<FeatureMatrix> {
    let keep = node_keep_mask(x.n(), sigma, rng)?;
    let mut out = x.0.clone();
    for (mut row, k) in out.axis_iter_mut(Axis(0)).zip(&keep) {
        row *= *k;
    }
    Ok(FeatureMatrix(out))
}

/// Per-node multipliers used by [`perturb`]: `0` or `1 / (1 - sigma)`.
pub fn node_keep_mask<R: Rng + ?Sized>(n: usize, sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&sigma) {
        return Err(Error::input(format!(
            "perturbation probability must lie in [0, 1), got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(vec![1.0; n]);
    }
    let scale = 1.0 / (1.0 - sigma);
    Ok((0..n)
        .map(|_| if rng.random::<f64>() < sigma { 0.0 } else { scale })
        .collect())
}
