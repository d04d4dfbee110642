//! Checkpoint files: trained head parameters plus the config that produced
//! them.
//!
//! The container is a JSON object
//!
//! ```text
//! {
//!   "format": "evfuse-checkpoint",
//!   "version": 1,
//!   "config_hash": "<hex sha-256 of the canonical config JSON>",
//!   "config": { ...TrainConfig... },
//!   "tensors": [ { "name": "w1", "shape": [d, h], "values": [...] }, ... ]
//! }
//! ```
//!
//! Tensors appear in the order `w1` (d×h), `b1` (h), `w2` (h×K), `b2` (K),
//! each flattened row-major. Values are written in shortest round-trip
//! notation, so saving and loading is lossless.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::train::{Model, TrainConfig};

pub const FORMAT: &str = "evfuse-checkpoint";
pub const VERSION: u32 = 1;
const NAMES: [&str; 4] = ["w1", "b1", "w2", "b2"];

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Tensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Container {
    format: String,
    version: u32,
    config_hash: String,
    config: TrainConfig,
    tensors: Vec<Tensor>,
}

pub fn to_string(model: &Model) -> String {
    let p = &model.params;
    let shapes = [
        vec![p.w1.nrows(), p.w1.ncols()],
        vec![p.b1.len()],
        vec![p.w2.nrows(), p.w2.ncols()],
        vec![p.b2.len()],
    ];
    let tensors = NAMES
        .iter()
        .zip(shapes)
        .zip(p.tensors())
        .map(|((name, shape), values)| Tensor {
            name: name.to_string(),
            shape,
            values: values.to_vec(),
        })
        .collect();
    let c = Container {
        format: FORMAT.into(),
        version: VERSION,
        config_hash: model.config.hash(),
        config: model.config.clone(),
        tensors,
    };
    let mut s = serde_json::to_string_pretty(&c).expect("checkpoint serialises");
    s.push('\n');
    s
}

pub fn from_str(text: &str) -> Result<Model> {
    let bad = |m: String| Error::Checkpoint(m);
    let c: Container = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    if c.format != FORMAT {
        return Err(bad(format!("unexpected format tag `{}`", c.format)));
    }
    if c.version != VERSION {
        return Err(bad(format!("unsupported version {}", c.version)));
    }
    if c.config.hash() != c.config_hash {
        return Err(bad("config hash does not match the embedded config".into()));
    }
    c.config.validate().map_err(|e| bad(e.to_string()))?;
    let names: Vec<&str> = c.tensors.iter().map(|t| t.name.as_str()).collect();
    if names != NAMES {
        return Err(bad(format!("expected tensors {NAMES:?}, found {names:?}")));
    }
    for t in &c.tensors {
        if t.shape.iter().product::<usize>() != t.values.len() {
            return Err(bad(format!("tensor {} has {} values for shape {:?}", t.name, t.values.len(), t.shape)));
        }
    }
    let matrix = |t: &Tensor| -> Result<Array2<f64>> {
        match t.shape.as_slice() {
            [r, c] => Ok(Array2::from_shape_vec((*r, *c), t.values.clone()).expect("length checked")),
            _ => Err(bad(format!("tensor {} must be 2-dimensional", t.name))),
        }
    };
    let vector = |t: &Tensor| -> Result<Array1<f64>> {
        match t.shape.as_slice() {
            [_] => Ok(Array1::from(t.values.clone())),
            _ => Err(bad(format!("tensor {} must be 1-dimensional", t.name))),
        }
    };
    let params = ModelParams {
        w1: matrix(&c.tensors[0])?,
        b1: vector(&c.tensors[1])?,
        w2: matrix(&c.tensors[2])?,
        b2: vector(&c.tensors[3])?,
    };
    params.validate().map_err(|e| bad(e.to_string()))?;
    Ok(Model {
        params,
        config: c.config,
    })
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, to_string(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    from_str(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}
