//! Maps from score vectors onto the probability simplex.
//!
//! * [`softmax`]: full support.
//! * [`sparsemax`]: Euclidean projection onto the simplex; low scores get
//!   exactly zero weight.
//! * [`fusedmax`]: sparsemax after a 1-D total-variation proximal step, so
//!   the weights are sparse *and* constant over contiguous segments.
//!
//! Fusedmax is evaluated as `sparsemax(tv_prox(p / γ, λ))`. The TV proximal
//! operator is computed by a direct (non-iterative) segment-merging pass that
//! also reports the fused segments, which is what its Jacobian needs: the
//! Jacobian of the TV prox averages within each segment, the sparsemax
//! Jacobian centres on the support and zeroes everything else.
//!
//! ```
//! use sparsegate::projections::{fusedmax, sparsemax};
//!
//! let g = sparsemax(&[1.0, 0.5, -1.0]);
//! assert_eq!(g.values(), &[0.75, 0.25, 0.0]);
//!
//! let f = fusedmax(&[2.0, 2.1, -1.0, -1.0], 1.0, 0.5).unwrap();
//! assert_eq!(f.values()[0], f.values()[1]);
//! assert_eq!(&f.values()[2..], &[0.0, 0.0]);
//! ```

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Weights on the probability simplex, one per sequence position.
#[derive(Debug, Clone, PartialEq)]
pub struct GateVector(Vec<f64>);

impl GateVector {
    pub fn new(values: Vec<f64>) -> Self {
        GateVector(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Positions with strictly positive weight.
    pub fn support(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| self.0[i] > 0.0).collect()
    }

    /// Whether every weight is nonnegative and the weights sum to one.
    pub fn on_simplex(&self, tol: f64) -> bool {
        self.0.iter().all(|&g| g >= 0.0) && (self.0.iter().sum::<f64>() - 1.0).abs() <= tol
    }
}

/// Which simplex mapping turns gate scores into gate weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gating {
    /// Uniform weights `1/L`, ignoring the scores.
    None,
    Softmax,
    Sparsemax,
    Fusedmax,
}

impl std::str::FromStr for Gating {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Gating::None),
            "softmax" => Ok(Gating::Softmax),
            "sparsemax" => Ok(Gating::Sparsemax),
            "fusedmax" => Ok(Gating::Fusedmax),
            other => Err(Error::Usage(format!(
                "unknown gating '{other}', expected none|softmax|sparsemax|fusedmax"
            ))),
        }
    }
}

impl std::fmt::Display for Gating {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Gating::None => "none",
            Gating::Softmax => "softmax",
            Gating::Sparsemax => "sparsemax",
            Gating::Fusedmax => "fusedmax",
        })
    }
}

/// Gate mapping together with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub gating: Gating,
    /// Scores are divided by this before softmax/sparsemax.
    pub temperature: f64,
    /// Fusedmax regularization strength γ.
    pub gamma: f64,
    /// Fusedmax segment penalty λ.
    pub lambda: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            gating: Gating::Sparsemax,
            temperature: 1.0,
            gamma: 1.0,
            lambda: 0.1,
        }
    }
}

impl GateConfig {
    pub fn with_gating(gating: Gating) -> Self {
        GateConfig {
            gating,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Parameter(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::Parameter(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Parameter(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

pub fn softmax(p: &[f64]) -> GateVector {
    let m = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = p.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    GateVector(e.into_iter().map(|x| x / z).collect())
}

/// Euclidean projection of `p` onto the simplex by sort-and-threshold.
pub fn sparsemax(p: &[f64]) -> GateVector {
    let tau = sparsemax_threshold(p);
    GateVector(p.iter().map(|&x| (x - tau).max(0.0)).collect())
}

/// The threshold τ with `sparsemax(p) = max(p − τ, 0)`.
pub fn sparsemax_threshold(p: &[f64]) -> f64 {
    let mut sorted = p.to_vec();
    // stable: ties keep their original order
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut k_best = 1;
    let mut sum_best = sorted[0];
    for (i, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let k = i + 1;
        if 1.0 + k as f64 * v > cumsum {
            k_best = k;
            sum_best = cumsum;
        }
    }
    (sum_best - 1.0) / k_best as f64
}

/// Piecewise-constant output of [`tv_prox`] with its fused segments.
#[derive(Debug, Clone, PartialEq)]
pub struct TvProx {
    pub values: Vec<f64>,
    /// Inclusive `(start, end)` index ranges, in order, covering every position.
    pub segments: Vec<(usize, usize)>,
}

impl TvProx {
    /// Applies the Jacobian of the prox to `u`: averages `u` within segments.
    pub fn jacobian_apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        for &(s, e) in &self.segments {
            let mean = u[s..=e].iter().sum::<f64>() / (e - s + 1) as f64;
            out[s..=e].iter_mut().for_each(|o| *o = mean);
        }
        out
    }
}

/// `argmin_y ½‖y − z‖² + λ Σ_j |y_{j+1} − y_j|`.
///
/// Direct segment-merging algorithm: one left-to-right sweep that keeps the
/// admissible value range of the current segment and restarts from the last
/// position where a jump became unavoidable. Worst case quadratic, linear in
/// practice.
pub fn tv_prox(z: &[f64], lambda: f64) -> Result<TvProx> {
    if !(lambda >= 0.0) {
        return Err(Error::Parameter(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    let n = z.len();
    if n == 0 {
        return Err(Error::Contract("tv_prox of an empty vector".into()));
    }
    if lambda == 0.0 {
        return Ok(TvProx {
            values: z.to_vec(),
            segments: (0..n).map(|i| (i, i)).collect(),
        });
    }

    let values = vec![0.0; n];
    let segments = Vec::new();
    fn emit(out: &mut (Vec<f64>, Vec<(usize, usize)>), from: usize, to: usize, v: f64) -> usize {
        let to = to.max(from);
        out.0[from..=to].iter_mut().for_each(|o| *o = v);
        out.1.push((from, to));
        to + 1
    }
    let mut out = (values, segments);

    let mut k = 0usize;
    let mut k0 = 0usize;
    let mut kplus = 0usize;
    let mut kminus = 0usize;
    // dual variable bounds and the admissible range of the segment value
    let mut umin = lambda;
    let mut umax = -lambda;
    let mut vmin = z[0] - lambda;
    let mut vmax = z[0] + lambda;
    let two_lambda = 2.0 * lambda;

    loop {
        while k == n - 1 {
            if umin < 0.0 {
                k0 = emit(&mut out, k0, kminus, vmin);
                k = k0;
                kminus = k0;
                vmin = z[k0];
                umin = lambda;
                umax = vmin + umin - vmax;
            } else if umax > 0.0 {
                k0 = emit(&mut out, k0, kplus, vmax);
                k = k0;
                kplus = k0;
                vmax = z[k0];
                umax = -lambda;
                umin = vmax + umax - vmin;
            } else {
                vmin += umin / (k - k0 + 1) as f64;
                emit(&mut out, k0, k, vmin);
                return Ok(TvProx { values: out.0, segments: out.1 });
            }
        }
        umin += z[k + 1] - vmin;
        if umin < -lambda {
            k0 = emit(&mut out, k0, kminus, vmin);
            k = k0;
            kplus = k0;
            kminus = k0;
            vmin = z[k0];
            vmax = vmin + two_lambda;
            umin = lambda;
            umax = -lambda;
            continue;
        }
        umax += z[k + 1] - vmax;
        if umax > lambda {
            k0 = emit(&mut out, k0, kplus, vmax);
            k = k0;
            kplus = k0;
            kminus = k0;
            vmax = z[k0];
            vmin = vmax - two_lambda;
            umin = lambda;
            umax = -lambda;
            continue;
        }
        k += 1;
        if umin >= lambda {
            kminus = k;
            vmin += (umin - lambda) / (kminus - k0 + 1) as f64;
            umin = lambda;
        }
        if umax <= -lambda {
            kplus = k;
            vmax += (umax + lambda) / (kplus - k0 + 1) as f64;
            umax = -lambda;
        }
    }
}

/// Fusedmax with its intermediate TV solution, needed for the Jacobian.
#[derive(Debug, Clone)]
pub struct Fused {
    pub gates: GateVector,
    pub prox: TvProx,
    pub gamma: f64,
}

pub fn fusedmax_full(p: &[f64], gamma: f64, lambda: f64) -> Result<Fused> {
    if !(gamma > 0.0) {
        return Err(Error::Parameter(format!("gamma must be positive, got {gamma}")));
    }
    let scaled: Vec<f64> = p.iter().map(|&x| x / gamma).collect();
    let prox = tv_prox(&scaled, lambda)?;
    let gates = sparsemax(&prox.values);
    Ok(Fused { gates, prox, gamma })
}

/// `argmin_{g ∈ Δ} ½‖g − p/γ‖² + λ Σ |g_{j+1} − g_j|`.
pub fn fusedmax(p: &[f64], gamma: f64, lambda: f64) -> Result<GateVector> {
    Ok(fusedmax_full(p, gamma, lambda)?.gates)
}

/// `J·u` for softmax at output `g` (the Jacobian is symmetric).
pub fn softmax_jvp(g: &GateVector, u: &[f64]) -> Vec<f64> {
    let gu: f64 = g.0.iter().zip(u).map(|(a, b)| a * b).sum();
    g.0.iter().zip(u).map(|(gi, ui)| gi * (ui - gu)).collect()
}

/// `J·u` for sparsemax at output `g`: `u − mean_S(u)` on the support `S`,
/// zero elsewhere (symmetric).
pub fn sparsemax_jvp(g: &GateVector, u: &[f64]) -> Vec<f64> {
    let (sum, count) = g
        .0
        .iter()
        .zip(u)
        .filter(|(gi, _)| **gi > 0.0)
        .fold((0.0, 0usize), |(s, c), (_, ui)| (s + ui, c + 1));
    let mean = sum / count as f64;
    g.0.iter()
        .zip(u)
        .map(|(&gi, &ui)| if gi > 0.0 { ui - mean } else { 0.0 })
        .collect()
}

impl Fused {
    /// `J·u`: perturbation of the scores pushed through prox then projection.
    pub fn jvp(&self, u: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = u.iter().map(|x| x / self.gamma).collect();
        sparsemax_jvp(&self.gates, &self.prox.jacobian_apply(&scaled))
    }

    /// `Jᵀ·u`, the adjoint used by backpropagation.
    pub fn vjp(&self, u: &[f64]) -> Vec<f64> {
        let through_proj = sparsemax_jvp(&self.gates, u);
        self.prox
            .jacobian_apply(&through_proj)
            .into_iter()
            .map(|x| x / self.gamma)
            .collect()
    }

    fn branch_bits(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for &(s, e) in &self.prox.segments {
            h = (h ^ (s as u64 * 1_000_003 + e as u64)).wrapping_mul(0x100_0000_01b3);
        }
        h ^ support_bits(&self.gates)
    }
}

fn support_bits(g: &GateVector) -> u64 {
    let mut h = 0u64;
    for (i, &v) in g.0.iter().enumerate() {
        if v > 0.0 {
            h = h.wrapping_mul(0x100_0000_01b3).wrapping_add(i as u64 + 1);
        }
    }
    h
}

/// Applies the configured mapping, without a tape.
pub fn project(p: &[f64], cfg: &GateConfig) -> Result<GateVector> {
    cfg.validate()?;
    if p.is_empty() {
        return Err(Error::Contract("cannot project an empty score vector".into()));
    }
    let t = cfg.temperature;
    Ok(match cfg.gating {
        Gating::None => GateVector(vec![1.0 / p.len() as f64; p.len()]),
        Gating::Softmax => softmax(&scaled(p, t)),
        Gating::Sparsemax => sparsemax(&scaled(p, t)),
        Gating::Fusedmax => fusedmax(p, cfg.gamma, cfg.lambda)?,
    })
}

fn scaled(p: &[f64], t: f64) -> Vec<f64> {
    if t == 1.0 {
        p.to_vec()
    } else {
        p.iter().map(|x| x / t).collect()
    }
}

/// Records the configured mapping on a tape. `scores` must be a vector.
pub fn project_var(tape: &Tape, scores: Var, cfg: &GateConfig) -> Result<Var> {
    cfg.validate()?;
    let p = tape.value(scores).data().to_vec();
    if p.is_empty() || tape.value(scores).rank() != 1 {
        return Err(Error::Contract("gate scores must be a non-empty vector".into()));
    }
    let n = p.len();
    let t = cfg.temperature;
    match cfg.gating {
        Gating::None => Ok(tape.constant(Tensor::full(&[n], 1.0 / n as f64))),
        Gating::Softmax => {
            let g = softmax(&scaled(&p, t));
            let value = Tensor::vector(g.0.clone());
            Ok(tape.custom(
                &[scores],
                value,
                Box::new(move |adj, _, _| {
                    let d: Vec<f64> = softmax_jvp(&g, adj.data()).into_iter().map(|x| x / t).collect();
                    vec![Some(Tensor::vector(d))]
                }),
            ))
        }
        Gating::Sparsemax => {
            let g = sparsemax(&scaled(&p, t));
            tape.record_branch(support_bits(&g));
            let value = Tensor::vector(g.0.clone());
            Ok(tape.custom(
                &[scores],
                value,
                Box::new(move |adj, _, _| {
                    let d: Vec<f64> = sparsemax_jvp(&g, adj.data()).into_iter().map(|x| x / t).collect();
                    vec![Some(Tensor::vector(d))]
                }),
            ))
        }
        Gating::Fusedmax => {
            let fused = fusedmax_full(&p, cfg.gamma, cfg.lambda)?;
            tape.record_branch(fused.branch_bits());
            let value = Tensor::vector(fused.gates.0.clone());
            Ok(tape.custom(
                &[scores],
                value,
                Box::new(move |adj, _, _| vec![Some(Tensor::vector(fused.vjp(adj.data())))]),
            ))
        }
    }
}
