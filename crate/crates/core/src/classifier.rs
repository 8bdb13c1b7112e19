//! Pair classification on top of frozen embeddings.
//!
//! A pair of Gaussians becomes the symmetric feature vector
//! `[|μ_i − μ_j| ; |Σ_i − Σ_j| ; μ_i ⊙ μ_j]`, which stays informative for
//! homodimers where the distance collapses to zero. A random forest with
//! Gini splits, bootstrap samples and `√F` candidate features per split maps
//! features to an interaction probability.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{Embedding, GaussianEmbedding};
use crate::error::{Error, Result};
use crate::evalkit::{auroc, ScoredPairs};
use crate::objective::distance;
use crate::tensor::Tensor;
use crate::trainer::derive_seed;

/// `[|μ_a − μ_b| ; |Σ_a − Σ_b| ; μ_a ⊙ μ_b]`, length `3d`.
pub fn featurize(a: &GaussianEmbedding, b: &GaussianEmbedding) -> Result<Vec<f64>> {
    if a.mu.shape() != b.mu.shape() || a.sigma.shape() != b.sigma.shape() || a.mu.shape() != a.sigma.shape() {
        return Err(Error::shape("featurize", a.mu.shape(), b.mu.shape()));
    }
    let (ma, mb) = (a.mu.data(), b.mu.data());
    let (sa, sb) = (a.sigma.data(), b.sigma.data());
    let mut f = Vec::with_capacity(3 * ma.len());
    f.extend(ma.iter().zip(mb).map(|(x, y)| (x - y).abs()));
    f.extend(sa.iter().zip(sb).map(|(x, y)| (x - y).abs()));
    f.extend(ma.iter().zip(mb).map(|(x, y)| x * y));
    Ok(f)
}

/// Point embeddings have no variance block: `[|z_a − z_b| ; z_a ⊙ z_b]`.
pub fn featurize_embedding(a: &Embedding, b: &Embedding) -> Result<Vec<f64>> {
    match (a, b) {
        (Embedding::Gaussian(a), Embedding::Gaussian(b)) => featurize(a, b),
        (Embedding::Point(a), Embedding::Point(b)) => {
            if a.shape() != b.shape() {
                return Err(Error::shape("featurize", a.shape(), b.shape()));
            }
            let (x, y) = (a.data(), b.data());
            let mut f: Vec<f64> = x.iter().zip(y).map(|(p, q)| (p - q).abs()).collect();
            f.extend(x.iter().zip(y).map(|(p, q)| p * q));
            Ok(f)
        }
        _ => Err(Error::Contract("cannot featurize Gaussian against point embeddings".into())),
    }
}

const LEAF: u32 = u32::MAX;

/// Flat binary tree. Internal nodes send `x[feature] <= threshold` left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    feature: Vec<u32>,
    threshold: Vec<f64>,
    left: Vec<u32>,
    right: Vec<u32>,
    /// Positive fraction of the training samples reaching each node.
    value: Vec<f64>,
}

impl Tree {
    fn push_leaf(&mut self, value: f64) -> u32 {
        self.feature.push(LEAF);
        self.threshold.push(0.0);
        self.left.push(LEAF);
        self.right.push(LEAF);
        self.value.push(value);
        (self.value.len() - 1) as u32
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, n: usize) -> usize {
            if t.feature[n] == LEAF {
                0
            } else {
                1 + go(t, t.left[n] as usize).max(go(t, t.right[n] as usize))
            }
        }
        go(self, 0)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut n = 0usize;
        while self.feature[n] != LEAF {
            n = if x[self.feature[n] as usize] <= self.threshold[n] {
                self.left[n] as usize
            } else {
                self.right[n] as usize
            };
        }
        self.value[n]
    }

    /// `[nodes × 5]` rows of `(feature, threshold, left, right, value)`;
    /// leaves store −1 in the index columns.
    pub fn to_tensor(&self) -> Tensor {
        let idx = |v: u32| if v == LEAF { -1.0 } else { v as f64 };
        let mut data = Vec::with_capacity(self.len() * 5);
        for n in 0..self.len() {
            data.extend([
                idx(self.feature[n]),
                self.threshold[n],
                idx(self.left[n]),
                idx(self.right[n]),
                self.value[n],
            ]);
        }
        Tensor::new(vec![self.len(), 5], data).unwrap()
    }

    pub fn from_tensor(t: &Tensor, n_features: usize) -> Result<Tree> {
        let bad = |m: &str| Error::Checkpoint(format!("malformed tree: {m}"));
        let (rows, cols) = t.dims2();
        if cols != 5 {
            return Err(bad("expected 5 columns"));
        }
        let idx = |v: f64, limit: usize| -> Result<u32> {
            if v == -1.0 {
                Ok(LEAF)
            } else if v >= 0.0 && v.fract() == 0.0 && (v as usize) < limit {
                Ok(v as u32)
            } else {
                Err(bad("index out of range"))
            }
        };
        let mut tree = Tree {
            feature: Vec::with_capacity(rows),
            threshold: Vec::with_capacity(rows),
            left: Vec::with_capacity(rows),
            right: Vec::with_capacity(rows),
            value: Vec::with_capacity(rows),
        };
        for r in 0..rows {
            let row = t.row(r);
            let (f, l, rt) = (idx(row[0], n_features)?, idx(row[2], rows)?, idx(row[3], rows)?);
            if (f == LEAF) != (l == LEAF) || (l == LEAF) != (rt == LEAF) {
                return Err(bad("inconsistent leaf marker"));
            }
            if f != LEAF && (l as usize <= r || rt as usize <= r) {
                return Err(bad("children must follow their parent"));
            }
            if !(0.0..=1.0).contains(&row[4]) {
                return Err(bad("leaf value outside [0, 1]"));
            }
            tree.feature.push(f);
            tree.threshold.push(row[1]);
            tree.left.push(l);
            tree.right.push(rt);
            tree.value.push(row[4]);
        }
        Ok(tree)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or hold fewer than two samples.
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub params: ForestParams,
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [bool],
    mtry: usize,
    max_depth: Option<usize>,
    rng: ChaCha8Rng,
    tree: Tree,
}

impl Grower<'_> {
    /// Best `(feature, threshold, weighted child impurity)` among `features`.
    fn best_split(&self, idx: &[usize], features: &[usize]) -> Option<(usize, f64, f64)> {
        let n = idx.len();
        let total_pos = idx.iter().filter(|&&i| self.y[i]).count();
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order: Vec<usize> = idx.to_vec();
        for &f in features {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left_pos = 0usize;
            for k in 0..n - 1 {
                if self.y[order[k]] {
                    left_pos += 1;
                }
                let (lo, hi) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                if lo == hi {
                    continue;
                }
                let nl = k + 1;
                let nr = n - nl;
                let imp = (nl as f64 * gini(left_pos, nl) + nr as f64 * gini(total_pos - left_pos, nr)) / n as f64;
                if best.is_none_or(|(_, _, b)| imp < b) {
                    let mid = lo + (hi - lo) / 2.0;
                    best = Some((f, if mid < hi { mid } else { lo }, imp));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> u32 {
        let n = idx.len();
        let pos = idx.iter().filter(|&&i| self.y[i]).count();
        let value = pos as f64 / n as f64;
        let pure = pos == 0 || pos == n;
        if pure || n < 2 || self.max_depth.is_some_and(|d| depth >= d) {
            return self.tree.push_leaf(value);
        }
        let n_features = self.x[0].len();
        let drawn: Vec<usize> = sample(&mut self.rng, n_features, self.mtry).into_vec();
        let mut split = self.best_split(&idx, &drawn);
        if split.is_none() && self.mtry < n_features {
            // every drawn feature is constant here; consider the rest
            let rest: Vec<usize> = (0..n_features).filter(|f| !drawn.contains(f)).collect();
            split = self.best_split(&idx, &rest);
        }
        let Some((f, thr, _)) = split else {
            return self.tree.push_leaf(value);
        };
        let node = self.tree.push_leaf(value);
        self.tree.feature[node as usize] = f as u32;
        self.tree.threshold[node as usize] = thr;
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| self.x[i][f] <= thr);
        let li = self.grow(l, depth + 1);
        let ri = self.grow(r, depth + 1);
        self.tree.left[node as usize] = li;
        self.tree.right[node as usize] = ri;
        node
    }
}

fn check_training_set(x: &[Vec<f64>], y: &[bool]) -> Result<usize> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::TrainConfig(format!(
            "a forest needs at least two labeled samples, got {} features and {} labels",
            x.len(),
            y.len()
        )));
    }
    let nf = x[0].len();
    if nf == 0 || x.iter().any(|r| r.len() != nf) {
        return Err(Error::Contract("feature rows must share a non-zero length".into()));
    }
    if y.iter().all(|&l| l) || y.iter().all(|&l| !l) {
        return Err(Error::TrainConfig("a forest needs both classes".into()));
    }
    Ok(nf)
}

pub fn rf_fit(x: &[Vec<f64>], y: &[bool], params: ForestParams) -> Result<Forest> {
    let nf = check_training_set(x, y)?;
    if params.n_trees == 0 {
        return Err(Error::Parameter("n_trees must be at least 1".into()));
    }
    let mtry = ((nf as f64).sqrt().floor() as usize).clamp(1, nf);
    let n = x.len();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, t as u64));
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut g = Grower {
                x,
                y,
                mtry,
                max_depth: params.max_depth,
                rng,
                tree: Tree {
                    feature: Vec::new(),
                    threshold: Vec::new(),
                    left: Vec::new(),
                    right: Vec::new(),
                    value: Vec::new(),
                },
            };
            g.grow(idx, 0);
            g.tree
        })
        .collect();
    Ok(Forest {
        params,
        n_features: nf,
        trees,
    })
}

impl Forest {
    /// Mean over trees of the leaf positive fraction.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::shape("rf_predict_proba", &[x.len()], &[self.n_features]));
        }
        let s: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok(s / self.trees.len() as f64)
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[bool]) -> Result<f64> {
        let mut correct = 0usize;
        for (row, &label) in x.iter().zip(y) {
            if (self.predict_proba(row)? >= 0.5) == label {
                correct += 1;
            }
        }
        Ok(correct as f64 / y.len() as f64)
    }
}

pub fn rf_predict_proba(forest: &Forest, x: &[f64]) -> Result<f64> {
    forest.predict_proba(x)
}

/// One grid candidate and its validation AUROC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridResult {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub val_auroc: f64,
}

pub const GRID_TREES: [usize; 2] = [100, 300];
pub const GRID_DEPTHS: [Option<usize>; 3] = [Some(8), Some(16), None];

/// Fits every `(n_trees, max_depth)` combination and keeps the one with the
/// best validation AUROC; ties go to the smaller forest, then the shallower
/// depth.
pub fn grid_search(train_x: &[Vec<f64>], train_y: &[bool], val_x: &[Vec<f64>], val_y: &[bool], seed: u64) -> Result<(Forest, Vec<GridResult>)> {
    grid_search_over(train_x, train_y, val_x, val_y, seed, &GRID_TREES, &GRID_DEPTHS)
}

pub fn grid_search_over(train_x: &[Vec<f64>], train_y: &[bool], val_x: &[Vec<f64>], val_y: &[bool], seed: u64, trees: &[usize], depths: &[Option<usize>]) -> Result<(Forest, Vec<GridResult>)> {
    let mut results = Vec::new();
    let mut best: Option<(f64, Forest)> = None;
    let mut candidates: Vec<(usize, Option<usize>)> = trees
        .iter()
        .flat_map(|&t| depths.iter().map(move |&d| (t, d)))
        .collect();
    // smaller forests first, then shallower, so strict improvement keeps the
    // simpler model on ties
    candidates.sort_by_key(|&(t, d)| (t, d.unwrap_or(usize::MAX)));
    for (n_trees, max_depth) in candidates {
        let forest = rf_fit(
            train_x,
            train_y,
            ForestParams {
                n_trees,
                max_depth,
                seed,
            },
        )?;
        let scores = val_x.iter().map(|r| forest.predict_proba(r)).collect::<Result<Vec<_>>>()?;
        let a = auroc(&ScoredPairs::new(scores, val_y.to_vec())?)?;
        results.push(GridResult {
            n_trees,
            max_depth,
            val_auroc: a,
        });
        if best.as_ref().is_none_or(|(b, _)| a > *b) {
            best = Some((a, forest));
        }
    }
    let (_, forest) = best.ok_or_else(|| Error::Parameter("empty hyperparameter grid".into()))?;
    Ok((forest, results))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictMode {
    Ranking,
    Classifier,
}

impl std::str::FromStr for PredictMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ranking" => Ok(PredictMode::Ranking),
            "classifier" => Ok(PredictMode::Classifier),
            other => Err(Error::Usage(format!(
                "unknown mode '{other}' (expected ranking or classifier)"
            ))),
        }
    }
}

/// Ranking: `−distance(a, b)`. Classifier: forest probability of the pair
/// features.
pub fn predict_pair(mode: PredictMode, forest: Option<&Forest>, a: &Embedding, b: &Embedding) -> Result<f64> {
    match mode {
        PredictMode::Ranking => Ok(-distance(a, b)?),
        PredictMode::Classifier => {
            let forest = forest.ok_or_else(|| {
                Error::Usage("classifier mode needs a model with a trained forest".into())
            })?;
            forest.predict_proba(&featurize_embedding(a, b)?)
        }
    }
}
