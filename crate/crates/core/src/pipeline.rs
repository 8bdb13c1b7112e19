//! End-to-end helpers shared by the command-line tool and the test suites:
//! dataset assembly, classifier fitting, scoring and the tabular formats.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::BufRead;

use crate::checkpoint::Checkpoint;
use crate::classifier::{featurize_embedding, grid_search, predict_pair, Forest, GridResult, PredictMode};
use crate::data::{sample_negatives, split, InteractionDataset, LabeledPair, PairRecord, SequenceStore, Split};
use crate::encoder::{encode_all, EncodedSequence, Embedding, EncoderParams, GaussianEmbedding, ModelConfig};
use crate::error::{Error, Result};
use crate::evalkit::{auroc, average_precision, ScoredPairs};
use crate::tensor::Tensor;
use crate::trainer::{derive_seed, TrainConfig};

/// Builds a labeled dataset from interaction file records. Unlabeled records
/// are positives; when the file holds no negatives they are sampled at
/// `cfg.neg_ratio`. Pairs are then split at `cfg.split`.
pub fn build_dataset(records: &[PairRecord], store: &SequenceStore, cfg: &TrainConfig, localization: Option<&HashMap<String, String>>) -> Result<InteractionDataset> {
    let labeled: Vec<PairRecord> = records
        .iter()
        .map(|r| PairRecord {
            label: Some(r.label.unwrap_or(true)),
            ..r.clone()
        })
        .collect();
    let mut ds = InteractionDataset::from_records(&labeled, store)?;
    if ds.positives.is_empty() {
        return Err(Error::Dataset("the interaction file lists no positive pair".into()));
    }
    if ds.negatives.is_empty() {
        ds.negatives = sample_negatives(&ds.positives, &store.ids(), cfg.neg_ratio, derive_seed(cfg.seed, 2), localization)?;
    }
    split(&ds, cfg.split, derive_seed(cfg.seed, 3))
}

/// Labeled records of one split, positives first.
pub fn split_records(ds: &InteractionDataset, which: Split) -> Vec<PairRecord> {
    let mut out = Vec::new();
    for (set, label) in [(&ds.positives, true), (&ds.negatives, false)] {
        for p in set {
            if ds.split.get(p) == Some(&which) {
                out.push(PairRecord {
                    a: p.a.clone(),
                    b: p.b.clone(),
                    label: Some(label),
                });
            }
        }
    }
    out
}

pub fn pairs_tsv(records: &[PairRecord]) -> String {
    let mut s = String::new();
    for r in records {
        match r.label {
            Some(l) => writeln!(s, "{}\t{}\t{}", r.a, r.b, u8::from(l)),
            None => writeln!(s, "{}\t{}", r.a, r.b),
        }
        .unwrap();
    }
    s
}

/// Store indices of both members of every record.
pub fn resolve_pairs(records: &[PairRecord], store: &SequenceStore) -> Result<Vec<(usize, usize)>> {
    records
        .iter()
        .map(|r| {
            let idx = |id: &str| {
                store
                    .position(id)
                    .ok_or_else(|| Error::Dataset(format!("unknown protein id '{id}'")))
            };
            Ok((idx(&r.a)?, idx(&r.b)?))
        })
        .collect()
}

/// Encodes only the proteins some pair refers to. Returns the encodings and
/// a lookup from store index to encoding slot.
pub fn encode_needed(pairs: &[(usize, usize)], store: &SequenceStore, params: &EncoderParams<Tensor>, model: &ModelConfig) -> Result<(Vec<EncodedSequence>, HashMap<usize, usize>)> {
    let needed: BTreeSet<usize> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    let order: Vec<usize> = needed.into_iter().collect();
    let records: Vec<_> = order.iter().map(|&i| store.records()[i].clone()).collect();
    let encoded = encode_all(&records, params, model)?;
    let slot = order.iter().enumerate().map(|(s, &i)| (i, s)).collect();
    Ok((encoded, slot))
}

fn features(pairs: &[LabeledPair], enc: &[EncodedSequence], slot: &HashMap<usize, usize>) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
    let mut x = Vec::with_capacity(pairs.len());
    for p in pairs {
        x.push(featurize_embedding(&enc[slot[&p.a]].embedding, &enc[slot[&p.b]].embedding)?);
    }
    Ok((x, pairs.iter().map(|p| p.label).collect()))
}

/// Freezes the encoder, featurizes the train split and grid-searches a
/// forest on the validation split (the train split itself when there is no
/// usable validation split).
pub fn fit_classifier(params: &EncoderParams<Tensor>, cfg: &TrainConfig, ds: &InteractionDataset, store: &SequenceStore) -> Result<(Forest, Vec<GridResult>)> {
    let train = ds.pairs_in(Split::Train, store)?;
    let mut val = ds.pairs_in(Split::Val, store)?;
    if !(val.iter().any(|p| p.label) && val.iter().any(|p| !p.label)) {
        val = train.clone();
    }
    let all: Vec<(usize, usize)> = train.iter().chain(&val).map(|p| (p.a, p.b)).collect();
    let (enc, slot) = encode_needed(&all, store, params, &cfg.model)?;
    let (tx, ty) = features(&train, &enc, &slot)?;
    let (vx, vy) = features(&val, &enc, &slot)?;
    grid_search(&tx, &ty, &vx, &vy, derive_seed(cfg.seed, 4))
}

/// Held-out accuracy of `forest` at the 0.5 threshold.
pub fn classifier_accuracy(forest: &Forest, ckpt: &Checkpoint, pairs: &[LabeledPair], store: &SequenceStore) -> Result<f64> {
    let idx: Vec<(usize, usize)> = pairs.iter().map(|p| (p.a, p.b)).collect();
    let (enc, slot) = encode_needed(&idx, store, &ckpt.params, &ckpt.config.model)?;
    let (x, y) = features(pairs, &enc, &slot)?;
    forest.accuracy(&x, &y)
}

/// One score per pair: `−distance` in ranking mode, the forest probability
/// in classifier mode.
pub fn score_pairs(mode: PredictMode, ckpt: &Checkpoint, pairs: &[(usize, usize)], store: &SequenceStore) -> Result<Vec<f64>> {
    let (enc, slot) = encode_needed(pairs, store, &ckpt.params, &ckpt.config.model)?;
    pairs
        .iter()
        .map(|(a, b)| predict_pair(mode, ckpt.forest.as_ref(), &enc[slot[a]].embedding, &enc[slot[b]].embedding))
        .collect()
}

/// AUROC and AP of labeled pairs.
pub fn evaluate_pairs(mode: PredictMode, ckpt: &Checkpoint, pairs: &[LabeledPair], store: &SequenceStore) -> Result<(f64, f64)> {
    let idx: Vec<(usize, usize)> = pairs.iter().map(|p| (p.a, p.b)).collect();
    let scores = score_pairs(mode, ckpt, &idx, store)?;
    let sp = ScoredPairs::new(scores, pairs.iter().map(|p| p.label).collect())?;
    Ok((auroc(&sp)?, average_precision(&sp)?))
}

/// Converts labeled file records to store-indexed pairs. Every record must
/// carry a label.
pub fn labeled_pairs(records: &[PairRecord], store: &SequenceStore) -> Result<Vec<LabeledPair>> {
    let idx = resolve_pairs(records, store)?;
    records
        .iter()
        .zip(idx)
        .map(|(r, (a, b))| {
            let label = r
                .label
                .ok_or_else(|| Error::Dataset(format!("pair {}–{} has no label", r.a, r.b)))?;
            Ok(LabeledPair { a, b, label })
        })
        .collect()
}

/// `id`, then `mu_1..mu_d`, then `sigma_1..sigma_d` for Gaussian heads.
/// Values use the shortest representation that parses back exactly.
pub fn embeddings_tsv(ids: &[String], encoded: &[EncodedSequence]) -> String {
    let mut s = String::from("id");
    if let Some(first) = encoded.first() {
        let d = first.embedding.mean().len();
        for k in 1..=d {
            write!(s, "\tmu_{k}").unwrap();
        }
        if first.embedding.variance().is_some() {
            for k in 1..=d {
                write!(s, "\tsigma_{k}").unwrap();
            }
        }
    }
    s.push('\n');
    for (id, e) in ids.iter().zip(encoded) {
        s.push_str(id);
        for v in e.embedding.mean().data() {
            write!(s, "\t{v}").unwrap();
        }
        if let Some(var) = e.embedding.variance() {
            for v in var.data() {
                write!(s, "\t{v}").unwrap();
            }
        }
        s.push('\n');
    }
    s
}

/// Reads the output of [`embeddings_tsv`].
pub fn parse_embeddings_tsv(reader: impl BufRead) -> Result<Vec<(String, Embedding)>> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(h) => h.map_err(|e| Error::Parse { line: 1, message: e.to_string() })?,
        None => return Ok(Vec::new()),
    };
    let cols: Vec<&str> = header.split('\t').collect();
    let d = cols.iter().filter(|c| c.starts_with("mu_")).count();
    let gaussian = cols.iter().any(|c| c.starts_with("sigma_"));
    let width = 1 + d * if gaussian { 2 } else { 1 };
    if cols.first() != Some(&"id") || cols.len() != width {
        return Err(Error::Parse {
            line: 1,
            message: "not an embedding table".into(),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::Parse { line: lineno, message: e.to_string() })?;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != width {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {width} columns, got {}", cols.len()),
            });
        }
        let vals = cols[1..]
            .iter()
            .map(|v| {
                v.parse::<f64>().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("not a number: '{v}'"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let mu = Tensor::vector(vals[..d].to_vec());
        let e = if gaussian {
            Embedding::Gaussian(GaussianEmbedding {
                mu,
                sigma: Tensor::vector(vals[d..].to_vec()),
            })
        } else {
            Embedding::Point(mu)
        };
        out.push((cols[0].to_string(), e));
    }
    Ok(out)
}

/// `a, b, score` rows, plus the label when the input carried one.
pub fn predictions_tsv(mode: PredictMode, records: &[PairRecord], scores: &[f64]) -> String {
    let column = match mode {
        PredictMode::Ranking => "score",
        PredictMode::Classifier => "probability",
    };
    let labeled = records.iter().all(|r| r.label.is_some()) && !records.is_empty();
    let mut s = format!("a\tb\t{column}{}\n", if labeled { "\tlabel" } else { "" });
    for (r, v) in records.iter().zip(scores) {
        write!(s, "{}\t{}\t{v}", r.a, r.b).unwrap();
        if labeled {
            write!(s, "\t{}", u8::from(r.label.unwrap())).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn grid_csv(results: &[GridResult]) -> String {
    let mut s = String::from("n_trees,max_depth,val_auroc\n");
    for r in results {
        let depth = r.max_depth.map_or("unlimited".to_string(), |d| d.to_string());
        writeln!(s, "{},{depth},{:.17e}", r.n_trees, r.val_auroc).unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::PredictMode;
    use crate::data::ProteinRecord;

    fn store() -> SequenceStore {
        SequenceStore::new(
            ["p1", "p2", "p3", "p4"]
                .iter()
                .map(|id| ProteinRecord::from_sequence(*id, "MKVLA").unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn unlabeled_pairs_get_sampled_negatives() {
        let records = vec![
            PairRecord { a: "p1".into(), b: "p2".into(), label: None },
            PairRecord { a: "p3".into(), b: "p4".into(), label: None },
        ];
        let cfg = TrainConfig::default();
        let ds = build_dataset(&records, &store(), &cfg, None).unwrap();
        assert_eq!(ds.positives.len(), 2);
        assert_eq!(ds.negatives.len(), 2);
        assert_eq!(ds.split.len(), 4);
        assert!(ds.negatives.is_disjoint(&ds.positives));
    }

    #[test]
    fn embeddings_round_trip_exactly() {
        let e = EncodedSequence {
            hidden: Tensor::zeros(&[1, 1]),
            gates: crate::projections::GateVector::new(vec![1.0]),
            embedding: Embedding::Gaussian(GaussianEmbedding {
                mu: Tensor::vector(vec![0.1 + 0.2, -1e-300]),
                sigma: Tensor::vector(vec![std::f64::consts::PI, 5e-324]),
            }),
        };
        let text = embeddings_tsv(&["x".into()], std::slice::from_ref(&e));
        let back = parse_embeddings_tsv(text.as_bytes()).unwrap();
        assert_eq!(back, vec![("x".to_string(), e.embedding)]);
    }

    #[test]
    fn prediction_table_layout() {
        let recs = vec![PairRecord { a: "p1".into(), b: "p2".into(), label: Some(true) }];
        assert_eq!(predictions_tsv(PredictMode::Classifier, &recs, &[0.75]), "a\tb\tprobability\tlabel\np1\tp2\t0.75\t1\n");
    }
}
