//! Node-classification datasets: loaders, the synthetic block-model
//! generator, split handling and out-of-distribution noise.
//!
//! # File formats
//!
//! **Citation raw** (`<name>.content`, `<name>.cites`), whitespace separated:
//!
//! * `.content`: one node per line, `<id> <f_1> ... <f_d> <label>`. Ids and
//!   labels are arbitrary tokens; every line must carry the same number of
//!   feature columns. Node order is file order. Labels are numbered in
//!   lexicographic order of their strings.
//! * `.cites`: one edge per line, `<cited-id> <citing-id>`. Edges are
//!   undirected; duplicates and self-citations are dropped, and endpoints
//!   missing from `.content` are counted as dangling and skipped.
//!
//! Unless a split file is given, the split takes the first 20 nodes of every
//! class (in file order) for training, the next 500 remaining nodes for
//! validation and the last 1000 remaining nodes for testing.
//!
//! **Generic** (a directory with four files):
//!
//! * `features.csv`: `n` lines of `d` comma-separated reals, no header.
//! * `edges.tsv`: one undirected edge per line, `<i>\t<j>`, zero-based.
//! * `labels.csv`: `n` lines, one integer class per line.
//! * `splits.txt`: lines `<train|val|test> <range> <range> ...`, each range
//!   either `a` or the half-open `a..b`. Missing lines mean empty masks.
//!
//! [`save_generic`] writes the canonical form: edges as `i < j` sorted,
//! reals in shortest round-trip notation, ranges maximally merged.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::FeatureMatrix;
use crate::rng::{stream, Stream};

/// Train/validation/test membership, one flag per node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMasks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl SplitMasks {
    pub fn empty(n: usize) -> Self {
        Self {
            train: vec![false; n],
            val: vec![false; n],
            test: vec![false; n],
        }
    }

    pub fn get(&self, split: Split) -> &[bool] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        mask_indices(self.get(split))
    }
}

pub fn mask_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, m)| m.then_some(i))
        .collect()
}

/// Features, graph, labels and splits of one node-classification problem.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    features: FeatureMatrix,
    edges: Vec<(usize, usize)>,
    labels: Vec<usize>,
    masks: SplitMasks,
    classes: usize,
}

impl DatasetBundle {
    /// Validates and canonicalises: edges become sorted `i < j` pairs with
    /// duplicates and self-loops removed.
    pub fn new(
        features: FeatureMatrix,
        edges: Vec<(usize, usize)>,
        labels: Vec<usize>,
        masks: SplitMasks,
    ) -> Result<Self> {
        let n = features.n();
        if n == 0 {
            return Err(Error::input("dataset has no nodes"));
        }
        if labels.len() != n {
            return Err(Error::input(format!(
                "{} labels for {n} feature rows",
                labels.len()
            )));
        }
        for (name, m) in [("train", &masks.train), ("val", &masks.val), ("test", &masks.test)] {
            if m.len() != n {
                return Err(Error::input(format!("{name} mask has {} entries for {n} nodes", m.len())));
            }
        }
        if (0..n).any(|i| (masks.train[i] as u8 + masks.val[i] as u8 + masks.test[i] as u8) > 1) {
            return Err(Error::input("split masks overlap"));
        }
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        if classes < 2 {
            return Err(Error::input("dataset needs at least two classes"));
        }
        let mut seen = vec![false; classes];
        labels.iter().for_each(|&y| seen[y] = true);
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::input(format!("class {missing} has no nodes")));
        }
        let mut canon = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::input(format!("edge ({a}, {b}) outside 0..{n}")));
            }
            if a != b {
                canon.insert((a.min(b), a.max(b)));
            }
        }
        Ok(Self {
            features,
            edges: canon.into_iter().collect(),
            labels,
            masks,
            classes,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn masks(&self) -> &SplitMasks {
        &self.masks
    }

    /// The same graph with different node features.
    pub fn with_features(&self, features: FeatureMatrix) -> Result<Self> {
        if features.n() != self.n() {
            return Err(Error::input("replacement features have the wrong row count"));
        }
        let mut out = self.clone();
        out.features = features;
        Ok(out)
    }

    pub fn with_masks(&self, masks: SplitMasks) -> Result<Self> {
        Self::new(self.features.clone(), self.edges.clone(), self.labels.clone(), masks)
    }
}

/// Scales every feature row to unit L1 norm (rows summing to 0 are kept).
pub fn normalize_rows(features: &FeatureMatrix) -> FeatureMatrix {
    let mut x = features.data().clone();
    for mut row in x.rows_mut() {
        let s: f64 = row.iter().map(|v| v.abs()).sum();
        if s > 0.0 {
            row /= s;
        }
    }
    FeatureMatrix::new(x).expect("scaling keeps values finite")
}

/// Planetoid-style split over node order.
pub fn standard_split(
    labels: &[usize],
    classes: usize,
    train_per_class: usize,
    val_count: usize,
    test_count: usize,
) -> SplitMasks {
    let n = labels.len();
    let mut masks = SplitMasks::empty(n);
    let mut taken = vec![0usize; classes];
    for (i, &y) in labels.iter().enumerate() {
        if taken[y] < train_per_class {
            taken[y] += 1;
            masks.train[i] = true;
        }
    }
    let mut remaining = (0..n).filter(|&i| !masks.train[i]);
    for i in remaining.by_ref().take(val_count) {
        masks.val[i] = true;
    }
    let rest: Vec<usize> = remaining.collect();
    for &i in rest.iter().rev().take(test_count) {
        masks.test[i] = true;
    }
    masks
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Result of loading citation raw files.
#[derive(Debug, Clone)]
pub struct CitationLoad {
    pub bundle: DatasetBundle,
    /// Citation lines whose endpoints are missing from the content file.
    pub dangling: usize,
    /// Label strings, indexed by class id.
    pub label_names: Vec<String>,
    /// Original node ids, indexed by node.
    pub node_ids: Vec<String>,
}

pub fn load_citation_raw(
    content_path: &Path,
    cites_path: &Path,
    splits_path: Option<&Path>,
) -> Result<CitationLoad> {
    let content = read(content_path)?;
    let mut ids = Vec::new();
    let mut index = HashMap::new();
    let mut rows = Vec::new();
    let mut raw_labels = Vec::new();
    let mut width = None;
    for (lineno, line) in content.lines().enumerate() {
        let lineno = lineno + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() < 3 {
            return Err(parse_err(content_path, lineno, "expected <id> <features...> <label>"));
        }
        let d = tokens.len() - 2;
        if *width.get_or_insert(d) != d {
            return Err(parse_err(
                content_path,
                lineno,
                format!("expected {} feature columns, found {d}", width.unwrap()),
            ));
        }
        let feats = tokens[1..=d]
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(content_path, lineno, format!("bad feature value `{t}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let id = tokens[0].to_string();
        if index.insert(id.clone(), ids.len()).is_some() {
            return Err(parse_err(content_path, lineno, format!("duplicate node id `{id}`")));
        }
        ids.push(id);
        rows.push(feats);
        raw_labels.push(tokens[d + 1].to_string());
    }
    if ids.is_empty() {
        return Err(parse_err(content_path, 0, "content file has no nodes"));
    }

    let label_names: Vec<String> = raw_labels
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let label_index: HashMap<&str, usize> = label_names
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let labels: Vec<usize> = raw_labels.iter().map(|l| label_index[l.as_str()]).collect();

    let cites = read(cites_path)?;
    let mut edges = Vec::new();
    let mut dangling = 0;
    for (lineno, line) in cites.lines().enumerate() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => continue,
            [a, b] => match (index.get(*a), index.get(*b)) {
                (Some(&i), Some(&j)) => edges.push((i, j)),
                _ => dangling += 1,
            },
            _ => {
                return Err(parse_err(
                    cites_path,
                    lineno + 1,
                    "expected <cited-id> <citing-id>",
                ))
            }
        }
    }

    let features = FeatureMatrix::from_rows(rows)?;
    let n = ids.len();
    let masks = match splits_path {
        Some(p) => read_splits(p, n)?,
        None => standard_split(&labels, label_names.len(), 20, 500, 1000),
    };
    let bundle = DatasetBundle::new(features, edges, labels, masks)?;
    Ok(CitationLoad {
        bundle,
        dangling,
        label_names,
        node_ids: ids,
    })
}

/// Locates `<prefix>.content` / `<prefix>.cites`, or the single pair inside
/// a directory.
pub fn citation_paths(path: &Path) -> Result<(PathBuf, PathBuf)> {
    if path.is_dir() {
        let entries = fs::read_dir(path).map_err(|e| Error::io(path, e))?;
        let mut contents: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "content"))
            .collect();
        contents.sort();
        return match contents.as_slice() {
            [one] => Ok((one.clone(), one.with_extension("cites"))),
            [] => Err(Error::input(format!("no .content file in {}", path.display()))),
            _ => Err(Error::input(format!(
                "several .content files in {}; pass the prefix instead",
                path.display()
            ))),
        };
    }
    Ok((path.with_extension("content"), path.with_extension("cites")))
}

pub const GENERIC_FEATURES: &str = "features.csv";
pub const GENERIC_EDGES: &str = "edges.tsv";
pub const GENERIC_LABELS: &str = "labels.csv";
pub const GENERIC_SPLITS: &str = "splits.txt";

pub fn load_generic_dir(dir: &Path) -> Result<DatasetBundle> {
    load_generic(
        &dir.join(GENERIC_FEATURES),
        &dir.join(GENERIC_EDGES),
        &dir.join(GENERIC_LABELS),
        &dir.join(GENERIC_SPLITS),
    )
}

pub fn load_generic(
    features_path: &Path,
    edges_path: &Path,
    labels_path: &Path,
    splits_path: &Path,
) -> Result<DatasetBundle> {
    let mut rows = Vec::new();
    for (lineno, line) in read(features_path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(features_path, lineno + 1, format!("bad value `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if rows.first().is_some_and(|r: &Vec<f64>| r.len() != row.len()) {
            return Err(parse_err(features_path, lineno + 1, "row width differs from first row"));
        }
        rows.push(row);
    }
    let n = rows.len();

    let mut labels = Vec::new();
    for (lineno, line) in read(labels_path)?.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        labels.push(
            t.parse::<usize>()
                .map_err(|_| parse_err(labels_path, lineno + 1, format!("bad label `{t}`")))?,
        );
    }
    if labels.len() != n {
        return Err(Error::input(format!(
            "{} has {} rows but {} has {n}",
            labels_path.display(),
            labels.len(),
            features_path.display()
        )));
    }

    let mut edges = Vec::new();
    for (lineno, line) in read(edges_path)?.lines().enumerate() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => continue,
            [a, b] => {
                let parse = |t: &str| {
                    t.parse::<usize>()
                        .map_err(|_| parse_err(edges_path, lineno + 1, format!("bad node index `{t}`")))
                };
                edges.push((parse(a)?, parse(b)?));
            }
            _ => return Err(parse_err(edges_path, lineno + 1, "expected two node indices")),
        }
    }

    let masks = read_splits(splits_path, n)?;
    DatasetBundle::new(FeatureMatrix::from_rows(rows)?, edges, labels, masks)
}

pub fn read_splits(path: &Path, n: usize) -> Result<SplitMasks> {
    let mut masks = SplitMasks::empty(n);
    for (lineno, line) in read(path)?.lines().enumerate() {
        let mut tokens = line.split_whitespace();
        let Some(name) = tokens.next() else { continue };
        let mask = match name {
            "train" => &mut masks.train,
            "val" => &mut masks.val,
            "test" => &mut masks.test,
            other => return Err(parse_err(path, lineno + 1, format!("unknown split `{other}`"))),
        };
        for range in tokens {
            let bad = || parse_err(path, lineno + 1, format!("bad range `{range}`"));
            let (lo, hi) = match range.split_once("..") {
                Some((a, b)) => (a.parse::<usize>().map_err(|_| bad())?, b.parse::<usize>().map_err(|_| bad())?),
                None => {
                    let a = range.parse::<usize>().map_err(|_| bad())?;
                    (a, a + 1)
                }
            };
            if lo >= hi || hi > n {
                return Err(parse_err(path, lineno + 1, format!("range `{range}` outside 0..{n}")));
            }
            mask[lo..hi].iter_mut().for_each(|m| *m = true);
        }
    }
    Ok(masks)
}

fn format_ranges(mask: &[bool]) -> String {
    let mut out = String::new();
    let mut i = 0;
    while i < mask.len() {
        if !mask[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < mask.len() && mask[i] {
            i += 1;
        }
        if i - start == 1 {
            write!(out, " {start}").unwrap();
        } else {
            write!(out, " {start}..{i}").unwrap();
        }
    }
    out
}

pub fn write_splits(masks: &SplitMasks) -> String {
    let mut out = String::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        writeln!(out, "{}{}", split.name(), format_ranges(masks.get(split))).unwrap();
    }
    out
}

/// Writes the canonical generic format into `dir` (created if missing).
/// File names and contents of `bundle` in the generic format.
pub fn generic_files(bundle: &DatasetBundle) -> [(&'static str, String); 4] {
    let mut features = String::new();
    for row in bundle.features.data().rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        features.push_str(&cells.join(","));
        features.push('\n');
    }
    let mut edges = String::new();
    for (a, b) in &bundle.edges {
        writeln!(edges, "{a}\t{b}").unwrap();
    }
    let mut labels = String::new();
    for y in &bundle.labels {
        writeln!(labels, "{y}").unwrap();
    }
    [
        (GENERIC_FEATURES, features),
        (GENERIC_EDGES, edges),
        (GENERIC_LABELS, labels),
        (GENERIC_SPLITS, write_splits(&bundle.masks)),
    ]
}

pub fn save_generic(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, body) in generic_files(bundle) {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

/// Parameters of the planted-partition generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SbmSpec {
    pub n: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Mean offset on the feature columns owned by a node's class.
    pub separation: f64,
    /// Standard deviation of the isotropic Gaussian feature noise.
    pub noise: f64,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub seed: u64,
}

impl Default for SbmSpec {
    fn default() -> Self {
        Self {
            n: 300,
            classes: 3,
            p_in: 0.1,
            p_out: 0.01,
            feature_dim: 32,
            separation: 1.0,
            noise: 0.5,
            train_per_class: 20,
            val_per_class: 30,
            seed: 0,
        }
    }
}

impl SbmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.n < self.classes {
            return Err(Error::input("block model needs K >= 2 and n >= K"));
        }
        if !(0.0 <= self.p_out && self.p_out < self.p_in && self.p_in <= 1.0) {
            return Err(Error::input("block model needs 0 <= p_out < p_in <= 1"));
        }
        if self.feature_dim == 0 || self.noise.is_nan() || self.noise < 0.0 || !self.separation.is_finite() {
            return Err(Error::input("block model needs feature_dim >= 1 and noise >= 0"));
        }
        Ok(())
    }

    /// Class of node `i`: contiguous blocks, remainder to the first blocks.
    pub fn block_of(&self, i: usize) -> usize {
        let base = self.n / self.classes;
        let extra = self.n % self.classes;
        let big = extra * (base + 1);
        if i < big {
            i / (base + 1)
        } else {
            extra + (i - big) / base
        }
    }
}

/// Samples a planted-partition graph. Class `c` owns the feature columns
/// `j` with `j % K == c`; node features are `separation` on owned columns
/// plus `N(0, noise²)` everywhere. Each class contributes
/// `train_per_class` training and `val_per_class` validation nodes chosen
/// at random; the rest are test nodes.
pub fn generate_sbm(spec: &SbmSpec) -> Result<DatasetBundle> {
    spec.validate()?;
    let n = spec.n;
    let labels: Vec<usize> = (0..n).map(|i| spec.block_of(i)).collect();

    let mut g = stream(spec.seed, Stream::Graph);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] { spec.p_in } else { spec.p_out };
            if g.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    let mut f = stream(spec.seed, Stream::Features);
    let x = Array2::from_shape_fn((n, spec.feature_dim), |(i, j)| {
        let mean = if j % spec.classes == labels[i] { spec.separation } else { 0.0 };
        let z: f64 = f.sample(StandardNormal);
        mean + spec.noise * z
    });

    let mut s = stream(spec.seed, Stream::Split);
    let mut masks = SplitMasks::empty(n);
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        members.entry(y).or_default().push(i);
    }
    for nodes in members.values_mut() {
        nodes.shuffle(&mut s);
        for (rank, &i) in nodes.iter().enumerate() {
            if rank < spec.train_per_class {
                masks.train[i] = true;
            } else if rank < spec.train_per_class + spec.val_per_class {
                masks.val[i] = true;
            } else {
                masks.test[i] = true;
            }
        }
    }
    DatasetBundle::new(FeatureMatrix::new(x)?, edges, labels, masks)
}

/// `X + η ε` with `ε ~ N(0, I)`.
pub fn inject_ood_noise(features: &FeatureMatrix, eta: f64, seed: u64) -> Result<FeatureMatrix> {
    inject_ood_noise_rows(features, eta, seed, None)
}

/// Like [`inject_ood_noise`] but only rows with `rows[i] == true` are
/// polluted. The noise drawn for row `i` does not depend on the row filter.
pub fn inject_ood_noise_rows(
    features: &FeatureMatrix,
    eta: f64,
    seed: u64,
    rows: Option<&[bool]>,
) -> Result<FeatureMatrix> {
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(Error::input(format!("noise intensity must be >= 0, got {eta}")));
    }
    if rows.is_some_and(|r| r.len() != features.n()) {
        return Err(Error::input("row filter length does not match feature rows"));
    }
    let mut rng = stream(seed, Stream::Noise);
    let mut x = features.data().clone();
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        let selected = rows.is_none_or(|r| r[i]);
        for v in row.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            if selected {
                *v += eta * z;
            }
        }
    }
    FeatureMatrix::new(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Newman modularity of a partition, computed from scratch.
    fn modularity(n: usize, edges: &[(usize, usize)], labels: &[usize]) -> f64 {
        let m = edges.len() as f64;
        let mut deg = vec![0.0; n];
        let mut inside = 0.0;
        for &(a, b) in edges {
            deg[a] += 1.0;
            deg[b] += 1.0;
            if labels[a] == labels[b] {
                inside += 1.0;
            }
        }
        let k = labels.iter().max().unwrap() + 1;
        let mut vol = vec![0.0; k];
        for i in 0..n {
            vol[labels[i]] += deg[i];
        }
        inside / m - vol.iter().map(|v| (v / (2.0 * m)).powi(2)).sum::<f64>()
    }

    fn tiny_bundle() -> DatasetBundle {
        let x = FeatureMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.25]]).unwrap();
        let mut masks = SplitMasks::empty(3);
        masks.train[0] = true;
        masks.val[1] = true;
        masks.test[2] = true;
        DatasetBundle::new(x, vec![(0, 1), (1, 0), (2, 2)], vec![0, 1, 1], masks).unwrap()
    }

    #[test]
    fn bundle_canonicalises_edges() {
        let b = tiny_bundle();
        assert_eq!(b.edges(), &[(0, 1)]);
        assert_eq!(b.classes(), 2);
    }

    #[test]
    fn bundle_rejects_inconsistent_input() {
        let x = FeatureMatrix::from_rows(vec![vec![1.0], vec![2.0]]).unwrap();
        let masks = SplitMasks::empty(2);
        assert!(DatasetBundle::new(x.clone(), vec![], vec![0], masks.clone()).is_err());
        assert!(DatasetBundle::new(x.clone(), vec![], vec![0, 0], masks.clone()).is_err());
        assert!(DatasetBundle::new(x.clone(), vec![], vec![0, 2], masks.clone()).is_err());
        assert!(DatasetBundle::new(x.clone(), vec![(0, 5)], vec![0, 1], masks.clone()).is_err());
        let mut overlap = masks;
        overlap.train[0] = true;
        overlap.test[0] = true;
        assert!(DatasetBundle::new(x, vec![], vec![0, 1], overlap).is_err());
    }

    #[test]
    fn standard_split_counts() {
        let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let m = standard_split(&labels, 4, 5, 30, 40);
        assert_eq!(m.indices(Split::Train).len(), 20);
        assert_eq!(m.indices(Split::Val).len(), 30);
        assert_eq!(m.indices(Split::Test).len(), 40);
        assert_eq!(m.indices(Split::Train)[..4], [0, 1, 2, 3]);
        assert_eq!(*m.indices(Split::Test).last().unwrap(), 99);
        // small graphs clip rather than fail
        let m = standard_split(&[0, 1, 1], 2, 20, 500, 1000);
        assert_eq!(m.indices(Split::Train), vec![0, 1, 2]);
        assert!(m.indices(Split::Val).is_empty());
    }

    #[test]
    fn splits_text_round_trip() {
        let mut m = SplitMasks::empty(10);
        for i in [0, 1, 2, 5] {
            m.train[i] = true;
        }
        m.val[3] = true;
        for i in 6..10 {
            m.test[i] = true;
        }
        let text = write_splits(&m);
        assert_eq!(text, "train 0..3 5\nval 3\ntest 6..10\n");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.txt");
        fs::write(&p, &text).unwrap();
        assert_eq!(read_splits(&p, 10).unwrap(), m);
        fs::write(&p, "train 8..12\n").unwrap();
        assert!(read_splits(&p, 10).is_err());
        fs::write(&p, "holdout 1\n").unwrap();
        assert!(read_splits(&p, 10).is_err());
    }

    #[test]
    fn sbm_cliques_when_deterministic() {
        let spec = SbmSpec {
            n: 10,
            classes: 2,
            p_in: 1.0,
            p_out: 0.0,
            train_per_class: 1,
            val_per_class: 1,
            ..SbmSpec::default()
        };
        let b = generate_sbm(&spec).unwrap();
        // two K5 cliques
        assert_eq!(b.edges().len(), 2 * 10);
        for &(i, j) in b.edges() {
            assert_eq!(b.labels()[i], b.labels()[j]);
        }
    }

    #[test]
    fn sbm_is_seed_deterministic() {
        let spec = SbmSpec::default();
        assert_eq!(generate_sbm(&spec).unwrap(), generate_sbm(&spec).unwrap());
        let other = SbmSpec { seed: 1, ..spec.clone() };
        assert_ne!(generate_sbm(&spec).unwrap(), generate_sbm(&other).unwrap());
    }

    #[test]
    fn sbm_split_counts() {
        let b = generate_sbm(&SbmSpec::default()).unwrap();
        assert_eq!(b.masks().indices(Split::Train).len(), 60);
        assert_eq!(b.masks().indices(Split::Val).len(), 90);
        assert_eq!(b.masks().indices(Split::Test).len(), 150);
        for c in 0..3 {
            let t = b.masks().indices(Split::Train).iter().filter(|&&i| b.labels()[i] == c).count();
            assert_eq!(t, 20);
        }
    }

    #[test]
    fn sbm_planted_partition_is_modular() {
        let spec = SbmSpec {
            n: 300,
            classes: 3,
            p_in: 0.1,
            p_out: 0.01,
            ..SbmSpec::default()
        };
        let b = generate_sbm(&spec).unwrap();
        let q = modularity(b.n(), b.edges(), b.labels());
        assert!(q > 0.3, "modularity {q}");
    }

    #[test]
    fn sbm_rejects_bad_spec() {
        let bad = SbmSpec { p_out: 0.2, p_in: 0.1, ..SbmSpec::default() };
        assert!(generate_sbm(&bad).is_err());
        let bad = SbmSpec { n: 1, ..SbmSpec::default() };
        assert!(generate_sbm(&bad).is_err());
    }

    #[test]
    fn ood_noise_zero_is_identity() {
        let x = generate_sbm(&SbmSpec::default()).unwrap().features().clone();
        assert_eq!(inject_ood_noise(&x, 0.0, 3).unwrap(), x);
        assert!(inject_ood_noise(&x, -1.0, 3).is_err());
    }

    #[test]
    fn ood_noise_variance() {
        let x = FeatureMatrix::new(Array2::zeros((1000, 100))).unwrap();
        let eta = 1.7;
        let y = inject_ood_noise(&x, eta, 5).unwrap();
        let n = y.data().len() as f64;
        let mean = y.data().sum() / n;
        let var = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var / (eta * eta) - 1.0).abs() < 0.05, "variance {var}");
        assert_eq!(y, inject_ood_noise(&x, eta, 5).unwrap());
    }

    #[test]
    fn ood_noise_row_filter() {
        let x = FeatureMatrix::new(Array2::zeros((4, 3))).unwrap();
        let all = inject_ood_noise(&x, 1.0, 9).unwrap();
        let some = inject_ood_noise_rows(&x, 1.0, 9, Some(&[false, true, false, true])).unwrap();
        assert!(some.data().row(0).iter().all(|v| *v == 0.0));
        assert_eq!(some.data().row(1), all.data().row(1));
        assert_eq!(some.data().row(3), all.data().row(3));
    }

    #[test]
    fn normalize_rows_unit_l1() {
        let x = FeatureMatrix::from_rows(vec![vec![1.0, 3.0], vec![0.0, 0.0]]).unwrap();
        let y = normalize_rows(&x);
        assert_eq!(y.data().row(0).to_vec(), vec![0.25, 0.75]);
        assert_eq!(y.data().row(1).to_vec(), vec![0.0, 0.0]);
    }
}
