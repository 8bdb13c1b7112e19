//! Self-describing model container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes   b"SPGATE\r\n"
//! version    u32
//! header_len u64
//! header     header_len bytes of JSON
//! payload    f64 values of every tensor listed in the header, in order
//! ```
//!
//! The header records the training configuration, the residue alphabet and,
//! for each tensor, its section (`encoder` or `forest`), name and shape. The
//! payload stores raw IEEE-754 bits, so a save/load cycle is bit-exact and
//! saving the same model twice produces identical bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{Forest, ForestParams, Tree};
use crate::data::ALPHABET;
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::trainer::{TrainConfig, TrainOutcome};

pub const MAGIC: &[u8; 8] = b"SPGATE\r\n";
pub const FORMAT_VERSION: u32 = 1;

const ENCODER: &str = "encoder";
const FOREST: &str = "forest";

/// A trained encoder, optionally with a pair classifier on top.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: EncoderParams<Tensor>,
    pub forest: Option<Forest>,
    pub best_epoch: usize,
    pub best_val_auroc: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    section: String,
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ForestEntry {
    params: ForestParams,
    n_features: usize,
    trees: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    alphabet: String,
    config: TrainConfig,
    best_epoch: usize,
    best_val_auroc: Option<f64>,
    tensors: Vec<TensorEntry>,
    forest: Option<ForestEntry>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn from_outcome(config: &TrainConfig, outcome: &TrainOutcome) -> Self {
        Checkpoint {
            config: config.clone(),
            params: outcome.params.clone(),
            forest: None,
            best_epoch: outcome.best_epoch,
            best_val_auroc: outcome.best_val_auroc,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::new();
        let mut payload: Vec<&Tensor> = Vec::new();
        for (name, t) in self.params.named() {
            entries.push(TensorEntry {
                section: ENCODER.into(),
                name: name.into(),
                shape: t.shape().to_vec(),
            });
            payload.push(t);
        }
        let tree_tensors: Vec<Tensor> = self
            .forest
            .iter()
            .flat_map(|f| f.trees.iter().map(Tree::to_tensor))
            .collect();
        for (i, t) in tree_tensors.iter().enumerate() {
            entries.push(TensorEntry {
                section: FOREST.into(),
                name: format!("tree.{i}"),
                shape: t.shape().to_vec(),
            });
            payload.push(t);
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            alphabet: ALPHABET.into(),
            config: self.config.clone(),
            best_epoch: self.best_epoch,
            best_val_auroc: self.best_val_auroc,
            tensors: entries,
            forest: self.forest.as_ref().map(|f| ForestEntry {
                params: f.params,
                n_features: f.n_features,
                trees: f.trees.len(),
            }),
        };
        let json = serde_json::to_vec(&header).map_err(|e| corrupt(format!("cannot encode header: {e}")))?;
        let n: usize = payload.iter().map(|t| t.len()).sum();
        let mut out = Vec::with_capacity(20 + json.len() + 8 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in payload {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(corrupt("not a model checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported format version {version}")));
        }
        let header_len = usize::try_from(u64::from_le_bytes(bytes[12..20].try_into().unwrap()))
            .map_err(|_| corrupt("header length overflows"))?;
        let body = &bytes[20..];
        if header_len > body.len() {
            return Err(corrupt("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..header_len]).map_err(|e| corrupt(format!("bad header: {e}")))?;
        if header.format_version != version {
            return Err(corrupt("header and container versions disagree"));
        }
        if header.alphabet != ALPHABET {
            return Err(corrupt(format!("unknown residue alphabet '{}'", header.alphabet)));
        }
        header.config.validate()?;
        let mut payload = &body[header_len..];
        let mut encoder = Vec::new();
        let mut trees = Vec::new();
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            if payload.len() < 8 * n {
                return Err(corrupt(format!("truncated payload at tensor '{}'", e.name)));
            }
            let data = payload[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            payload = &payload[8 * n..];
            let t = Tensor::new(e.shape.clone(), data)?;
            match e.section.as_str() {
                ENCODER => encoder.push((e.name.as_str(), t)),
                FOREST => trees.push(t),
                other => return Err(corrupt(format!("unknown section '{other}'"))),
            }
        }
        if !payload.is_empty() {
            return Err(corrupt(format!("{} trailing bytes after payload", payload.len())));
        }

        let template = EncoderParams::init(&header.config.model, 0)?;
        let expected = template.named();
        if expected.len() != encoder.len() {
            return Err(corrupt(format!(
                "expected {} encoder tensors, found {}",
                expected.len(),
                encoder.len()
            )));
        }
        for ((want, like), (got, t)) in expected.iter().zip(&encoder) {
            if want != got || like.shape() != t.shape() {
                return Err(corrupt(format!(
                    "tensor '{got}' {:?} does not match expected '{want}' {:?}",
                    t.shape(),
                    like.shape()
                )));
            }
        }
        let params = template.with_values(encoder.into_iter().map(|(_, t)| t).collect())?;

        let forest = match header.forest {
            None if trees.is_empty() => None,
            None => return Err(corrupt("forest tensors without a forest section")),
            Some(f) => {
                if f.trees != trees.len() || trees.is_empty() {
                    return Err(corrupt(format!("expected {} trees, found {}", f.trees, trees.len())));
                }
                Some(Forest {
                    params: f.params,
                    n_features: f.n_features,
                    trees: trees
                        .iter()
                        .map(|t| Tree::from_tensor(t, f.n_features))
                        .collect::<Result<_>>()?,
                })
            }
        };
        Ok(Checkpoint {
            config: header.config,
            params,
            forest,
            best_epoch: header.best_epoch,
            best_val_auroc: header.best_val_auroc,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
