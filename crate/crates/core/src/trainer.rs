//! Initialization, Adam, and the deduplicated training loop.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{make_batches, Batch, InteractionDataset, LabeledPair, SequenceStore, Split};
use crate::encoder::{encode_all, encode_on_tape, EncoderParams, ModelConfig, VarEmbedding};
use crate::error::{Error, Result};
use crate::evalkit::{auroc, average_precision, ScoredPairs};
use crate::objective::{distance, ranking_loss_var, Reduction};
use crate::projections::Gating;
use crate::tensor::Tensor;

/// Mixes `tag` into `seed` (SplitMix64 finalizer), giving independent
/// streams for each consumer of randomness.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Glorot uniform on `[−a, a]`, `a = √(6 / (fan_in + fan_out))`.
pub fn xavier_init(shape: &[usize], seed: u64) -> Result<Tensor> {
    let [fan_in, fan_out] = shape else {
        return Err(Error::Parameter(format!(
            "Xavier initialization needs a 2-D shape, got {shape:?}"
        )));
    };
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-a..=a)).collect();
    Tensor::new(shape.to_vec(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.003,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for a list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, like: &[&Tensor]) -> Self {
        let zeros: Vec<Tensor> = like.iter().map(|t| Tensor::zeros(t.shape())).collect();
        Adam {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    /// One bias-corrected update. `names` label the parameters in errors.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], names: &[&str]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "Adam got {} parameters, {} gradients and {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let name = names.get(i).copied().unwrap_or("?");
            if p.shape() != g.shape() {
                return Err(Error::shape("adam_step", p.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite gradient for parameter '{name}'"
                )));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for k in 0..pd.len() {
                md[k] = c.beta1 * md[k] + (1.0 - c.beta1) * gd[k];
                vd[k] = c.beta2 * vd[k] + (1.0 - c.beta2) * gd[k] * gd[k];
                let mhat = md[k] / bc1;
                let vhat = vd[k] / bc2;
                pd[k] -= c.learning_rate * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// Everything that shapes a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub adam: AdamConfig,
    /// Pairs per mini-batch.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub reduction: Reduction,
    /// Global-norm gradient clipping; off by default.
    pub clip_norm: Option<f64>,
    /// Negatives sampled per positive when the pair file has none.
    pub neg_ratio: f64,
    pub split: (f64, f64, f64),
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            adam: AdamConfig::default(),
            batch_size: 256,
            max_epochs: 50,
            seed: 0,
            reduction: Reduction::Sum,
            clip_norm: None,
            neg_ratio: 1.0,
            split: (0.6, 0.2, 0.2),
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::TrainConfig(format!("invalid value '{value}' for '{key}'")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::TrainConfig(format!(
                "learning_rate must be positive, got {}",
                self.adam.learning_rate
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::TrainConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::TrainConfig("batch_size must be at least 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::TrainConfig(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "lr" | "learning_rate" => self.adam.learning_rate = parse_value(key, v)?,
            "beta1" => self.adam.beta1 = parse_value(key, v)?,
            "beta2" => self.adam.beta2 = parse_value(key, v)?,
            "adam_eps" => self.adam.eps = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "epochs" | "max_epochs" => self.max_epochs = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "gating" => {
                self.model.gate.gating = v.parse::<Gating>().map_err(|e| Error::TrainConfig(e.to_string()))?
            }
            "head" => self.model.head = v.parse().map_err(|e: Error| Error::TrainConfig(e.to_string()))?,
            "gamma" => self.model.gate.gamma = parse_value(key, v)?,
            "lambda" => self.model.gate.lambda = parse_value(key, v)?,
            "temperature" => self.model.gate.temperature = parse_value(key, v)?,
            "dim" => self.model.dim = parse_value(key, v)?,
            "hidden" => self.model.hidden = parse_value(key, v)?,
            "embed_dim" => self.model.embed_dim = parse_value(key, v)?,
            "max_len" => self.model.max_len = parse_value(key, v)?,
            "reduction" => {
                self.reduction = match v {
                    "sum" => Reduction::Sum,
                    "mean" => Reduction::Mean,
                    _ => return Err(Error::TrainConfig(format!("reduction must be sum or mean, got '{v}'"))),
                }
            }
            "clip_norm" => {
                self.clip_norm = match v {
                    "none" | "off" => None,
                    _ => Some(parse_value(key, v)?),
                }
            }
            "neg_ratio" => self.neg_ratio = parse_value(key, v)?,
            "split" => {
                let parts: Vec<f64> = v
                    .split(',')
                    .map(|p| parse_value(key, p.trim()))
                    .collect::<Result<_>>()?;
                let [a, b, c] = parts.as_slice() else {
                    return Err(Error::TrainConfig("split needs three comma-separated fractions".into()));
                };
                self.split = (*a, *b, *c);
            }
            other => return Err(Error::TrainConfig(format!("unknown configuration key '{other}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected 'key = value', got '{line}'"),
            })?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let _ = writeln!(s, "learning_rate = {}", self.adam.learning_rate);
        let _ = writeln!(s, "beta1 = {}", self.adam.beta1);
        let _ = writeln!(s, "beta2 = {}", self.adam.beta2);
        let _ = writeln!(s, "adam_eps = {}", self.adam.eps);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "epochs = {}", self.max_epochs);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "gating = {}", m.gate.gating);
        let _ = writeln!(s, "head = {}", m.head);
        let _ = writeln!(s, "gamma = {}", m.gate.gamma);
        let _ = writeln!(s, "lambda = {}", m.gate.lambda);
        let _ = writeln!(s, "temperature = {}", m.gate.temperature);
        let _ = writeln!(s, "dim = {}", m.dim);
        let _ = writeln!(s, "hidden = {}", m.hidden);
        let _ = writeln!(s, "embed_dim = {}", m.embed_dim);
        let _ = writeln!(s, "max_len = {}", m.max_len);
        let _ = writeln!(
            s,
            "reduction = {}",
            match self.reduction {
                Reduction::Sum => "sum",
                Reduction::Mean => "mean",
            }
        );
        let _ = writeln!(
            s,
            "clip_norm = {}",
            self.clip_norm.map_or("none".to_string(), |c| c.to_string())
        );
        let _ = writeln!(s, "neg_ratio = {}", self.neg_ratio);
        let _ = writeln!(s, "split = {},{},{}", self.split.0, self.split.1, self.split.2);
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss per trained pair.
    pub train_loss: f64,
    pub val_auroc: Option<f64>,
    pub val_ap: Option<f64>,
    pub seconds: f64,
    /// Encoder forward passes spent on training batches.
    pub encodes: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub const HEADER: &'static str = "epoch,train_loss,val_auroc,val_ap";

    /// Per-epoch losses and validation metrics. Wall-clock times live in
    /// [`History::timing_csv`] so that this table depends only on the seed.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.17e}"));
        for e in &self.epochs {
            let _ = writeln!(s, "{},{:.17e},{},{}", e.epoch, e.train_loss, opt(e.val_auroc), opt(e.val_ap));
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("epoch,seconds,encodes\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{:.6},{}", e.epoch, e.seconds, e.encodes);
        }
        s
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation AUROC (the last epoch
    /// when there is no validation split).
    pub params: EncoderParams<Tensor>,
    pub history: History,
    pub best_epoch: usize,
    pub best_val_auroc: Option<f64>,
}

/// Scores pairs by negative embedding distance.
pub fn ranking_scores(pairs: &[LabeledPair], store: &SequenceStore, params: &EncoderParams<Tensor>, cfg: &ModelConfig) -> Result<ScoredPairs> {
    let needed: BTreeSet<usize> = pairs.iter().flat_map(|p| [p.a, p.b]).collect();
    let needed: Vec<usize> = needed.into_iter().collect();
    let records: Vec<_> = needed.iter().map(|&i| store.records()[i].clone()).collect();
    let encoded = encode_all(&records, params, cfg)?;
    let slot = |i: usize| needed.binary_search(&i).unwrap();
    let mut scores = Vec::with_capacity(pairs.len());
    for p in pairs {
        let d = distance(&encoded[slot(p.a)].embedding, &encoded[slot(p.b)].embedding)?;
        scores.push(-d);
    }
    ScoredPairs::new(scores, pairs.iter().map(|p| p.label).collect())
}

/// Loss value and gradients (canonical order) of one deduplicated batch.
pub fn batch_loss_and_grads(batch: &Batch, store: &SequenceStore, params: &EncoderParams<Tensor>, cfg: &TrainConfig) -> Result<(f64, Vec<Tensor>)> {
    let tape = Tape::new();
    let vars = params.to_tape(&tape);
    let mut embeddings: Vec<VarEmbedding> = Vec::with_capacity(batch.sequences.len());
    for &s in &batch.sequences {
        let rec = &store.records()[s];
        embeddings.push(encode_on_tape(&tape, &vars, &cfg.model.gate, rec)?.embedding);
    }
    let loss = ranking_loss_var(&tape, &embeddings, &batch.pos_pairs, &batch.neg_pairs, cfg.reduction)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    let out = vars
        .tensors()
        .into_iter()
        .zip(params.tensors())
        .map(|(&v, like)| grads.wrt(v, like))
        .collect();
    Ok((value, out))
}

/// The same loss with both members of every pair encoded separately, as a
/// Siamese network without sharing would.
pub fn naive_loss_and_grads(pairs: &[LabeledPair], store: &SequenceStore, params: &EncoderParams<Tensor>, cfg: &TrainConfig) -> Result<(f64, Vec<Tensor>, usize)> {
    let tape = Tape::new();
    let vars = params.to_tape(&tape);
    let mut embeddings = Vec::new();
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for p in pairs {
        let i = embeddings.len();
        embeddings.push(encode_on_tape(&tape, &vars, &cfg.model.gate, &store.records()[p.a])?.embedding);
        embeddings.push(encode_on_tape(&tape, &vars, &cfg.model.gate, &store.records()[p.b])?.embedding);
        if p.label {
            pos.push((i, i + 1));
        } else {
            neg.push((i, i + 1));
        }
    }
    let loss = ranking_loss_var(&tape, &embeddings, &pos, &neg, cfg.reduction)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    let out = vars
        .tensors()
        .into_iter()
        .zip(params.tensors())
        .map(|(&v, like)| grads.wrt(v, like))
        .collect();
    Ok((value, out, embeddings.len()))
}

fn clip(grads: &mut [Tensor], max_norm: f64) {
    let norm: f64 = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// One pass over `pairs`. Returns the summed loss, the number of pairs that
/// contributed and the number of encoder passes.
fn run_epoch(pairs: &[LabeledPair], store: &SequenceStore, params: &mut EncoderParams<Tensor>, adam: &mut Adam, cfg: &TrainConfig, epoch: usize) -> Result<(f64, usize, usize)> {
    let names: Vec<&str> = params.named().into_iter().map(|(n, _)| n).collect();
    let batches = make_batches(pairs, cfg.batch_size, derive_seed(cfg.seed, 1_000 + epoch as u64))?;
    let mut total = 0.0;
    let mut used = 0;
    let mut encodes = 0;
    for (bi, batch) in batches.iter().enumerate() {
        // a chunk holding only one label carries no ranking signal
        if batch.pos_pairs.is_empty() || batch.neg_pairs.is_empty() {
            continue;
        }
        let (loss, mut grads) = batch_loss_and_grads(batch, store, params, cfg)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss at epoch {epoch}, batch {}",
                bi + 1
            )));
        }
        if let Some(c) = cfg.clip_norm {
            clip(&mut grads, c);
        }
        let mut flat: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
        adam.step(&mut flat, &grads, &names).map_err(|e| match e {
            Error::Numerical(m) => Error::Numerical(format!("{m} at epoch {epoch}, batch {}", bi + 1)),
            other => other,
        })?;
        *params = params.with_values(flat)?;
        total += loss;
        used += batch.pos_pairs.len() + batch.neg_pairs.len();
        encodes += batch.sequences.len();
    }
    Ok((total, used, encodes))
}

/// Trains from a fresh initialization on the train split and keeps the
/// parameters with the best validation AUROC.
pub fn train(cfg: &TrainConfig, dataset: &InteractionDataset, store: &SequenceStore) -> Result<TrainOutcome> {
    train_with(cfg, dataset, store, |_| {})
}

/// [`train`] with a callback after each epoch.
pub fn train_with(cfg: &TrainConfig, dataset: &InteractionDataset, store: &SequenceStore, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let store = store.truncated(cfg.model.max_len);
    let train_pairs = dataset.pairs_in(Split::Train, &store)?;
    if !train_pairs.iter().any(|p| p.label) || !train_pairs.iter().any(|p| !p.label) {
        return Err(Error::TrainConfig(
            "the training split needs both positive and negative pairs".into(),
        ));
    }
    let val_pairs = dataset.pairs_in(Split::Val, &store)?;
    let has_val = val_pairs.iter().any(|p| p.label) && val_pairs.iter().any(|p| !p.label);

    let mut params = EncoderParams::init(&cfg.model, derive_seed(cfg.seed, 1))?;
    let mut adam = Adam::new(cfg.adam, &params.tensors());
    let mut history = History::default();
    let mut best: Option<(f64, usize, EncoderParams<Tensor>)> = None;

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let (total, used, encodes) = run_epoch(&train_pairs, &store, &mut params, &mut adam, cfg, epoch)?;
        let (val_auroc, val_ap) = if has_val {
            let sp = ranking_scores(&val_pairs, &store, &params, &cfg.model)?;
            (Some(auroc(&sp)?), Some(average_precision(&sp)?))
        } else {
            (None, None)
        };
        if let Some(a) = val_auroc {
            if best.as_ref().is_none_or(|(b, _, _)| a > *b) {
                best = Some((a, epoch, params.clone()));
            }
        }
        let record = EpochRecord {
            epoch,
            train_loss: if used > 0 { total / used as f64 } else { f64::NAN },
            val_auroc,
            val_ap,
            seconds: start.elapsed().as_secs_f64(),
            encodes,
        };
        on_epoch(&record);
        history.epochs.push(record);
    }
    Ok(match best {
        Some((a, epoch, p)) => TrainOutcome {
            params: p,
            history,
            best_epoch: epoch,
            best_val_auroc: Some(a),
        },
        None => TrainOutcome {
            params,
            history,
            best_epoch: cfg.max_epochs,
            best_val_auroc: None,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub pairs: usize,
    pub seconds: f64,
    pub encodes: usize,
    pub unique_proteins: usize,
}

/// Times one training epoch on the first `n` pairs of `pairs` for each `n`
/// in `sizes`, starting from the same initialization each time.
pub fn benchmark_epoch(cfg: &TrainConfig, pairs: &[LabeledPair], store: &SequenceStore, sizes: &[usize]) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let store = store.truncated(cfg.model.max_len);
    let init = EncoderParams::init(&cfg.model, derive_seed(cfg.seed, 1))?;
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        if n > pairs.len() {
            return Err(Error::Parameter(format!(
                "benchmark size {n} exceeds the {} available pairs",
                pairs.len()
            )));
        }
        let subset = &pairs[..n];
        let unique: BTreeSet<usize> = subset.iter().flat_map(|p| [p.a, p.b]).collect();
        let mut params = init.clone();
        let mut adam = Adam::new(cfg.adam, &params.tensors());
        let start = Instant::now();
        let (_, _, encodes) = run_epoch(subset, &store, &mut params, &mut adam, cfg, 1)?;
        rows.push(BenchRow {
            pairs: n,
            seconds: start.elapsed().as_secs_f64(),
            encodes,
            unique_proteins: unique.len(),
        });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("pairs,seconds_per_epoch,encodes_per_epoch,unique_proteins\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.6},{},{}", r.pairs, r.seconds, r.encodes, r.unique_proteins);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xavier_bounds_and_determinism() {
        let t = xavier_init(&[3, 3], 5).unwrap();
        assert!(t.data().iter().all(|v| v.abs() <= 1.0));
        assert_eq!(t, xavier_init(&[3, 3], 5).unwrap());
        assert_ne!(t, xavier_init(&[3, 3], 6).unwrap());
        assert!(xavier_init(&[3], 0).is_err());
    }

    #[test]
    fn xavier_mean_is_centered() {
        let t = xavier_init(&[500, 200], 1).unwrap();
        let n = t.len() as f64;
        let a = (6.0f64 / 700.0).sqrt();
        let mean = t.sum() / n;
        let sd = a / 3.0f64.sqrt() / n.sqrt();
        assert!(mean.abs() < 3.0 * sd, "{mean} vs {sd}");
    }

    fn one_param(x: f64) -> (Vec<Tensor>, Adam) {
        let p = vec![Tensor::scalar(x)];
        let adam = Adam::new(AdamConfig::default(), &p.iter().collect::<Vec<_>>());
        (p, adam)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut p, mut adam) = one_param(1.5);
        adam.step(&mut p, &[Tensor::scalar(0.0)], &["x"]).unwrap();
        assert_eq!(p[0].item(), 1.5);
    }

    #[test]
    fn first_step_on_square() {
        let (mut p, mut adam) = one_param(1.0);
        let g = 2.0; // d/dx x² at 1
        adam.step(&mut p, &[Tensor::scalar(g)], &["x"]).unwrap();
        let m = 0.1 * g;
        let v = 0.001 * g * g;
        let mhat = m / (1.0 - 0.9);
        let vhat = v / (1.0 - 0.999);
        let expect = 1.0 - 0.003 * mhat / (vhat.sqrt() + 1e-8);
        assert!((p[0].item() - expect).abs() < 1e-12);
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let (mut p, mut adam) = one_param(0.0);
        let mut last = 0.0;
        for _ in 0..2000 {
            let before = p[0].item();
            adam.step(&mut p, &[Tensor::scalar(-0.7)], &["x"]).unwrap();
            last = p[0].item() - before;
        }
        assert!((last - 0.003).abs() < 1e-6, "{last}");
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let (mut p, mut adam) = one_param(0.0);
        match adam.step(&mut p, &[Tensor::scalar(f64::NAN)], &["gate.w1"]) {
            Err(Error::Numerical(m)) => assert!(m.contains("gate.w1")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_text_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.set("gating", "fusedmax").unwrap();
        cfg.set("lr", "0.01").unwrap();
        cfg.set("split", "0.5, 0.25, 0.25").unwrap();
        cfg.set("clip_norm", "5").unwrap();
        let back = TrainConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert!(TrainConfig::parse("bogus = 1").is_err());
        assert!(TrainConfig::parse("lr = -1").is_err());
        assert!(TrainConfig::parse("epochs = 0").is_err());
        assert!(matches!(TrainConfig::parse("lr 0.1"), Err(Error::Parse { line: 1, .. })));
        let with_comment = TrainConfig::parse("# defaults\nbatch_size = 32 # small\n").unwrap();
        assert_eq!(with_comment.batch_size, 32);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(0, 1), derive_seed(0, 2));
        assert_ne!(derive_seed(1, 1), derive_seed(0, 1));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }
}
