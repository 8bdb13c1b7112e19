//! Independent reference implementations used by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsegate::data::ProteinRecord;
use sparsegate::encoder::{HeadKind, ModelConfig};
use sparsegate::projections::{GateConfig, Gating};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn on_simplex(x: &[f64]) -> bool {
    x.iter().all(|&v| v >= -1e-12) && (x.iter().sum::<f64>() - 1.0).abs() < 1e-9
}

fn sq_dist(x: &[f64], z: &[f64]) -> f64 {
    x.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum()
}

/// `argmin_{x ∈ Δ} ½‖x − z‖²` by trying every support set. On a fixed
/// support the minimizer is `z_S − τ` with `τ` set by the sum constraint; the
/// global minimizer is the best feasible candidate.
pub fn sparsemax_oracle(z: &[f64]) -> Vec<f64> {
    let n = z.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let k = mask.count_ones() as f64;
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| z[i]).sum();
        let tau = (s - 1.0) / k;
        let x: Vec<f64> = (0..n)
            .map(|i| if mask >> i & 1 == 1 { z[i] - tau } else { 0.0 })
            .collect();
        if !on_simplex(&x) {
            continue;
        }
        let obj = 0.5 * sq_dist(&x, z);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, x));
        }
    }
    best.unwrap().1
}

/// `½‖x − z‖² + λ Σ |x_{i+1} − x_i|`.
pub fn fused_objective(x: &[f64], z: &[f64], lambda: f64) -> f64 {
    0.5 * sq_dist(x, z) + lambda * x.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>()
}

/// `argmin_{x ∈ Δ} ½‖x − z‖² + λ TV(x)` by face enumeration.
///
/// A face is a split of the positions into contiguous blocks, a choice of
/// which blocks are pinned at zero, and the sign of every jump between
/// consecutive blocks. On a face the objective is a quadratic with one linear
/// constraint, solved in closed form: block `k` takes the value
/// `mean_k(z) − λ c_k / |k| + μ`, where `c_k` is the jump-sign coefficient and
/// `μ` enforces the unit sum. The minimizer is the best feasible candidate.
pub fn fusedmax_oracle(z: &[f64], lambda: f64) -> Vec<f64> {
    let n = z.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for cuts in 0u32..(1 << (n - 1)) {
        let mut blocks = Vec::new();
        let mut start = 0;
        for i in 0..n - 1 {
            if cuts >> i & 1 == 1 {
                blocks.push((start, i));
                start = i + 1;
            }
        }
        blocks.push((start, n - 1));
        let nb = blocks.len();
        for zeros in 0u32..(1 << nb) {
            if zeros.count_ones() as usize == nb {
                continue;
            }
            for signs in 0u32..(1 << (nb - 1)) {
                // sign of x_{k+1} − x_k
                let s = |k: usize| if signs >> k & 1 == 1 { 1.0 } else { -1.0 };
                let mut base = vec![0.0; nb];
                let (mut size_free, mut base_free) = (0.0, 0.0);
                for (k, &(a, b)) in blocks.iter().enumerate() {
                    if zeros >> k & 1 == 1 {
                        continue;
                    }
                    let len = (b - a + 1) as f64;
                    let mean = z[a..=b].iter().sum::<f64>() / len;
                    let left = if k > 0 { s(k - 1) } else { 0.0 };
                    let right = if k + 1 < nb { s(k) } else { 0.0 };
                    base[k] = mean - lambda * (left - right) / len;
                    size_free += len;
                    base_free += len * base[k];
                }
                let mu = (1.0 - base_free) / size_free;
                let mut x = vec![0.0; n];
                for (k, &(a, b)) in blocks.iter().enumerate() {
                    if zeros >> k & 1 == 0 {
                        x[a..=b].iter_mut().for_each(|v| *v = base[k] + mu);
                    }
                }
                if !on_simplex(&x) {
                    continue;
                }
                let obj = fused_objective(&x, z, lambda);
                if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                    best = Some((obj, x));
                }
            }
        }
    }
    best.unwrap().1
}

/// Average precision from its definition: the mean, over positives, of the
/// precision among all items ranked at or above it. Ties are ranked by the
/// original index.
pub fn ap_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let n = scores.len();
    let ahead = |i: usize, j: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j <= i);
    let mut total = 0.0;
    let mut npos = 0;
    for i in 0..n {
        if !labels[i] {
            continue;
        }
        npos += 1;
        let rank = (0..n).filter(|&j| ahead(i, j)).count();
        let tp = (0..n).filter(|&j| labels[j] && ahead(i, j)).count();
        total += tp as f64 / rank as f64;
    }
    total / npos as f64
}

/// AUROC as the fraction of (positive, negative) pairs ordered correctly,
/// ties counting one half.
pub fn auroc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                den += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

pub fn tiny_model(gating: Gating, head: HeadKind) -> ModelConfig {
    ModelConfig {
        gate: GateConfig {
            gating,
            lambda: 0.05,
            ..GateConfig::default()
        },
        head,
        embed_dim: 3,
        hidden: 2,
        dim: 3,
        max_len: 1024,
        profile_dim: None,
    }
}

pub fn random_records(rng: &mut ChaCha8Rng, n: usize, min_len: usize, max_len: usize) -> Vec<ProteinRecord> {
    const RES: &[u8] = b"ACDEFGHIKLMNPQRSTVWY";
    (0..n)
        .map(|i| {
            let len = rng.random_range(min_len..=max_len);
            let seq: String = (0..len).map(|_| RES[rng.random_range(0..RES.len())] as char).collect();
            ProteinRecord::from_sequence(format!("p{i}"), &seq).unwrap()
        })
        .collect()
}
