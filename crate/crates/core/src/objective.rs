//! Pair energies and the square-exponential ranking loss.
//!
//! For diagonal Gaussians the 2-Wasserstein distance separates by
//! coordinate:
//!
//! ```text
//! W2² = ‖μ_a − μ_b‖² + ‖√Σ_a − √Σ_b‖²
//! ```
//!
//! The loss over a batch is `Σ_pos E² + Σ_neg exp(−E)`. The positive term is
//! taken from `E²` directly, so the square root is never differentiated at
//! zero.

use crate::autodiff::{Tape, Var};
use crate::encoder::{Embedding, GaussianEmbedding, VarEmbedding};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor applied to the distance inside `exp(−E)`.
pub const DIST_FLOOR: f64 = 1e-12;

fn same_dims(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// Squared 2-Wasserstein distance between diagonal Gaussians.
pub fn w2_diag_sq(a: &GaussianEmbedding, b: &GaussianEmbedding) -> Result<f64> {
    same_dims("w2_diag", &a.mu, &b.mu)?;
    same_dims("w2_diag", &a.sigma, &b.sigma)?;
    same_dims("w2_diag", &a.mu, &a.sigma)?;
    let mean: f64 = a.mu.data().iter().zip(b.mu.data()).map(|(x, y)| (x - y).powi(2)).sum();
    let cov: f64 = a
        .sigma
        .data()
        .iter()
        .zip(b.sigma.data())
        .map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2))
        .sum();
    Ok(mean + cov)
}

pub fn w2_diag(a: &GaussianEmbedding, b: &GaussianEmbedding) -> Result<f64> {
    Ok(w2_diag_sq(a, b)?.sqrt())
}

/// The general trace form `‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2(Σ_a^½ Σ_b Σ_a^½)^½)`
/// evaluated for diagonal covariances.
pub fn w2_general_diag_oracle(a: &GaussianEmbedding, b: &GaussianEmbedding) -> Result<f64> {
    same_dims("w2_general_diag_oracle", &a.mu, &b.mu)?;
    same_dims("w2_general_diag_oracle", &a.sigma, &b.sigma)?;
    let mean: f64 = a.mu.data().iter().zip(b.mu.data()).map(|(x, y)| (x - y).powi(2)).sum();
    let trace: f64 = a
        .sigma
        .data()
        .iter()
        .zip(b.sigma.data())
        .map(|(&sa, &sb)| {
            let root_a = sa.sqrt();
            sa + sb - 2.0 * (root_a * sb * root_a).sqrt()
        })
        .sum();
    Ok((mean + trace).max(0.0).sqrt())
}

pub fn l2_point(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_dims("l2_point", a, b)?;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
}

/// Distance between two embeddings of the same kind.
pub fn distance(a: &Embedding, b: &Embedding) -> Result<f64> {
    match (a, b) {
        (Embedding::Gaussian(a), Embedding::Gaussian(b)) => w2_diag(a, b),
        (Embedding::Point(a), Embedding::Point(b)) => l2_point(a, b),
        _ => Err(Error::Contract("cannot compare Gaussian and point embeddings".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

/// Embedding variables with the per-coordinate square roots of the variance
/// precomputed, so each protein pays for them once per batch.
#[derive(Debug, Clone, Copy)]
pub struct PreparedEmbedding {
    mu: Var,
    root_sigma: Option<Var>,
}

pub fn prepare(tape: &Tape, e: &VarEmbedding) -> PreparedEmbedding {
    PreparedEmbedding {
        mu: e.mu,
        root_sigma: e.sigma.map(|s| tape.sqrt(s)),
    }
}

/// `E²` on the tape: squared W2 for Gaussians, squared L2 for points.
pub fn energy_sq_var(tape: &Tape, a: &PreparedEmbedding, b: &PreparedEmbedding) -> Result<Var> {
    let dm = tape.sub(a.mu, b.mu)?;
    let mut e2 = tape.sum(tape.square(dm));
    match (a.root_sigma, b.root_sigma) {
        (Some(sa), Some(sb)) => {
            let ds = tape.sub(sa, sb)?;
            let cov = tape.sum(tape.square(ds));
            e2 = tape.add(e2, cov)?;
        }
        (None, None) => {}
        _ => return Err(Error::Contract("cannot compare Gaussian and point embeddings".into())),
    }
    Ok(e2)
}

/// `Σ_pos E² + Σ_neg exp(−max(E, floor))` over embeddings indexed by the
/// pair lists.
pub fn ranking_loss_var(
    tape: &Tape,
    embeddings: &[VarEmbedding],
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
    reduction: Reduction,
) -> Result<Var> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::TrainConfig(format!(
            "a loss batch needs positive and negative pairs, got {} and {}",
            pos.len(),
            neg.len()
        )));
    }
    let n = embeddings.len();
    if let Some(&(i, j)) = pos.iter().chain(neg).find(|&&(i, j)| i >= n || j >= n) {
        return Err(Error::Contract(format!(
            "pair ({i}, {j}) out of range for {n} embeddings"
        )));
    }
    let prepared: Vec<PreparedEmbedding> = embeddings.iter().map(|e| prepare(tape, e)).collect();
    let mut terms = Vec::with_capacity(pos.len() + neg.len());
    for &(i, j) in pos {
        terms.push(energy_sq_var(tape, &prepared[i], &prepared[j])?);
    }
    for &(i, j) in neg {
        let e2 = energy_sq_var(tape, &prepared[i], &prepared[j])?;
        let e = tape.sqrt(tape.clamp_min(e2, DIST_FLOOR * DIST_FLOOR));
        terms.push(tape.exp(tape.neg(e)));
    }
    let total = tape.sum_scalars(&terms)?;
    Ok(match reduction {
        Reduction::Sum => total,
        Reduction::Mean => tape.scale(total, 1.0 / terms.len() as f64),
    })
}

/// Plain-value loss from precomputed energies.
pub fn ranking_loss_from_energies(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::TrainConfig("a loss batch needs positive and negative pairs".into()));
    }
    let p: f64 = pos.iter().map(|e| e * e).sum();
    let n: f64 = neg.iter().map(|e| (-e.max(DIST_FLOOR)).exp()).sum();
    Ok(p + n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use proptest::prelude::*;

    fn g(mu: &[f64], sigma: &[f64]) -> GaussianEmbedding {
        GaussianEmbedding {
            mu: Tensor::vector(mu.to_vec()),
            sigma: Tensor::vector(sigma.to_vec()),
        }
    }

    #[test]
    fn closed_form_examples() {
        let a = g(&[1.0, 0.0], &[1.0, 1.0]);
        let b = g(&[0.0, 0.0], &[1.0, 1.0]);
        assert_eq!(w2_diag(&a, &a).unwrap(), 0.0);
        assert_eq!(w2_diag_sq(&a, &b).unwrap(), 1.0);
        let c = g(&[0.0], &[4.0]);
        let d = g(&[0.0], &[1.0]);
        assert_eq!(w2_diag_sq(&c, &d).unwrap(), 1.0);
        assert_eq!(w2_general_diag_oracle(&c, &d).unwrap(), 1.0);
        assert!(w2_diag(&a, &c).is_err());
    }

    #[test]
    fn point_distance() {
        let a = Tensor::vector(vec![3.0, 4.0]);
        let b = Tensor::vector(vec![0.0, 0.0]);
        assert_eq!(l2_point(&a, &b).unwrap(), 5.0);
        assert_eq!(l2_point(&a, &a).unwrap(), 0.0);
        assert!(l2_point(&a, &Tensor::vector(vec![1.0])).is_err());
    }

    #[test]
    fn loss_examples() {
        assert!((ranking_loss_from_energies(&[1.0], &[0.0]).unwrap() - 2.0).abs() < 1e-11);
        let floor = ranking_loss_from_energies(&[0.0, 0.0], &[20.0, 20.0, 20.0]).unwrap();
        assert!((floor - 3.0 * (-20.0f64).exp()).abs() < 1e-18);
        assert!(matches!(ranking_loss_from_energies(&[], &[1.0]), Err(Error::TrainConfig(_))));
    }

    fn arb_gauss(d: usize) -> impl Strategy<Value = GaussianEmbedding> {
        (
            proptest::collection::vec(-3.0f64..3.0, d),
            proptest::collection::vec(0.01f64..5.0, d),
        )
            .prop_map(|(m, s)| g(&m, &s))
    }

    proptest! {
        #[test]
        fn oracle_agreement(a in arb_gauss(6), b in arb_gauss(6)) {
            let x = w2_diag(&a, &b).unwrap();
            let y = w2_general_diag_oracle(&a, &b).unwrap();
            prop_assert!((x - y).abs() < 1e-12);
        }

        #[test]
        fn metric_axioms(a in arb_gauss(4), b in arb_gauss(4), c in arb_gauss(4)) {
            let ab = w2_diag(&a, &b).unwrap();
            prop_assert_eq!(ab, w2_diag(&b, &a).unwrap());
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(w2_diag(&a, &a).unwrap(), 0.0);
            let ac = w2_diag(&a, &c).unwrap();
            let cb = w2_diag(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
        }

        #[test]
        fn loss_is_monotone(
            pos in proptest::collection::vec(0.0f64..5.0, 1..5),
            neg in proptest::collection::vec(0.0f64..5.0, 1..5),
            k in 0usize..5,
            delta in 0.0f64..1.0,
        ) {
            let base = ranking_loss_from_energies(&pos, &neg).unwrap();
            let mut p2 = pos.clone();
            let i = k % p2.len();
            p2[i] = (p2[i] - delta).max(0.0);
            prop_assert!(ranking_loss_from_energies(&p2, &neg).unwrap() <= base);
            let mut n2 = neg.clone();
            let j = k % n2.len();
            n2[j] += delta;
            prop_assert!(ranking_loss_from_energies(&pos, &n2).unwrap() <= base);
        }
    }

    fn leaf_embeddings(v: &[Var]) -> Vec<VarEmbedding> {
        v.chunks(2)
            .map(|c| VarEmbedding {
                mu: c[0],
                sigma: Some(c[1]),
            })
            .collect()
    }

    #[test]
    fn tape_loss_matches_hand_sum() {
        let embs = [
            g(&[0.1, -0.4], &[1.0, 0.5]),
            g(&[0.7, 0.2], &[0.3, 2.0]),
            g(&[-1.0, 0.9], &[1.5, 1.5]),
        ];
        let pos = [(0, 1), (1, 2)];
        let neg = [(0, 2), (2, 1)];
        let tape = Tape::new();
        let vars: Vec<Var> = embs
            .iter()
            .flat_map(|e| [tape.param(e.mu.clone()), tape.param(e.sigma.clone())])
            .collect();
        let loss = ranking_loss_var(&tape, &leaf_embeddings(&vars), &pos, &neg, Reduction::Sum).unwrap();
        let mut expect = 0.0;
        for &(i, j) in &pos {
            expect += w2_diag_sq(&embs[i], &embs[j]).unwrap();
        }
        for &(i, j) in &neg {
            expect += (-w2_diag(&embs[i], &embs[j]).unwrap()).exp();
        }
        assert!((tape.value(loss).item() - expect).abs() < 1e-12);

        let mean = ranking_loss_var(&tape, &leaf_embeddings(&vars), &pos, &neg, Reduction::Mean).unwrap();
        assert!((tape.value(mean).item() - expect / 4.0).abs() < 1e-12);
    }

    #[test]
    fn loss_gradients_match_central_differences() {
        let point = vec![
            Tensor::vector(vec![0.1, -0.4, 0.3]),
            Tensor::vector(vec![1.0, 0.5, 0.8]),
            Tensor::vector(vec![0.7, 0.2, -0.2]),
            Tensor::vector(vec![0.3, 2.0, 1.1]),
            Tensor::vector(vec![-1.0, 0.9, 0.0]),
            Tensor::vector(vec![1.5, 1.5, 0.2]),
        ];
        let check = grad_check(
            |t, v| ranking_loss_var(t, &leaf_embeddings(v), &[(0, 1), (2, 2)], &[(0, 2), (1, 2)], Reduction::Sum),
            &point,
            1e-6,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-5, "{check:?}");
    }

    #[test]
    fn self_pairs_have_finite_gradients() {
        let tape = Tape::new();
        let mu = tape.param(Tensor::vector(vec![0.5]));
        let s = tape.param(Tensor::vector(vec![2.0]));
        let e = [VarEmbedding { mu, sigma: Some(s) }];
        let loss = ranking_loss_var(&tape, &e, &[(0, 0)], &[(0, 0)], Reduction::Sum).unwrap();
        assert!((tape.value(loss).item() - 1.0).abs() < 1e-11);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.wrt(mu, &Tensor::zeros(&[1])).is_finite());
        assert!(grads.wrt(s, &Tensor::zeros(&[1])).is_finite());
    }

    #[test]
    fn empty_pair_lists_are_rejected() {
        let tape = Tape::new();
        let mu = tape.param(Tensor::vector(vec![0.5]));
        let e = [VarEmbedding { mu, sigma: None }];
        assert!(matches!(
            ranking_loss_var(&tape, &e, &[], &[(0, 0)], Reduction::Sum),
            Err(Error::TrainConfig(_))
        ));
        assert!(ranking_loss_var(&tape, &e, &[(0, 1)], &[(0, 0)], Reduction::Sum).is_err());
    }
}
