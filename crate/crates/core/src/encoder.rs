//! The gated sequence encoder: embedding, bidirectional GRU, position-wise
//! gate network, gated pooling and a Gaussian (or point) head.
//!
//! Parameters live in [`EncoderParams`], generic over the leaf type so the
//! same layout holds plain tensors, tape variables, gradients or optimizer
//! moments.

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Tape, Var};
use crate::data::{ProteinRecord, ALPHABET_SIZE};
use crate::error::{Error, Result};
use crate::projections::{project_var, GateConfig, GateVector};
use crate::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};
use crate::trainer::{derive_seed, xavier_init};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    #[default]
    Gaussian,
    Point,
}

impl std::str::FromStr for HeadKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(HeadKind::Gaussian),
            "point" => Ok(HeadKind::Point),
            other => Err(Error::Usage(format!(
                "unknown head '{other}' (expected gaussian or point)"
            ))),
        }
    }
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HeadKind::Gaussian => "gaussian",
            HeadKind::Point => "point",
        })
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub gate: GateConfig,
    pub head: HeadKind,
    /// Residue embedding width `d_e`.
    pub embed_dim: usize,
    /// GRU hidden size per direction; hidden states are `2 × hidden` wide.
    pub hidden: usize,
    /// Width of the mean and of the variance vector.
    pub dim: usize,
    pub max_len: usize,
    /// Feature width of per-residue profiles; `None` uses the residue lookup.
    pub profile_dim: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            gate: GateConfig::default(),
            head: HeadKind::Gaussian,
            embed_dim: 32,
            hidden: 16,
            dim: 128,
            max_len: 1024,
            profile_dim: None,
        }
    }
}

impl ModelConfig {
    pub fn hidden_width(&self) -> usize {
        2 * self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        self.gate.validate()?;
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("hidden", self.hidden),
            ("dim", self.dim),
            ("max_len", self.max_len),
        ] {
            if v == 0 {
                return Err(Error::Parameter(format!("{name} must be at least 1")));
            }
        }
        if self.profile_dim == Some(0) {
            return Err(Error::Parameter("profile_dim must be at least 1".into()));
        }
        Ok(())
    }
}

/// Weights of one GRU direction, gates packed as `[reset | update | candidate]`
/// along the last axis: `w: [in × 3H]`, `u: [H × 3H]`, `b: [3H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams<T> {
    pub w: T,
    pub u: T,
    pub b: T,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InputParams<T> {
    /// Residue lookup table `[N × d_e]`.
    Embedding { table: T },
    /// Row-wise linear map from profile features: `w: [F × d_e]`, `b: [d_e]`.
    Profile { w: T, b: T },
}

/// `p_l = w2ᵀ tanh(w1ᵀ h_l + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams<T> {
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadParams<T> {
    Gaussian { w_mu: T, b_mu: T, w_sigma: T, b_sigma: T },
    Point { w_z: T, b_z: T },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub input: InputParams<T>,
    pub forward: GruParams<T>,
    pub backward: GruParams<T>,
    pub gate: GateParams<T>,
    pub head: HeadParams<T>,
}

impl<T> EncoderParams<T> {
    /// Every tensor with its stable name, in canonical order.
    pub fn named(&self) -> Vec<(&'static str, &T)> {
        let mut out = Vec::with_capacity(16);
        match &self.input {
            InputParams::Embedding { table } => out.push(("embed.table", table)),
            InputParams::Profile { w, b } => {
                out.push(("profile.w", w));
                out.push(("profile.b", b));
            }
        }
        for (names, g) in [
            (["gru.fwd.w", "gru.fwd.u", "gru.fwd.b"], &self.forward),
            (["gru.bwd.w", "gru.bwd.u", "gru.bwd.b"], &self.backward),
        ] {
            out.push((names[0], &g.w));
            out.push((names[1], &g.u));
            out.push((names[2], &g.b));
        }
        out.push(("gate.w1", &self.gate.w1));
        out.push(("gate.b1", &self.gate.b1));
        out.push(("gate.w2", &self.gate.w2));
        out.push(("gate.b2", &self.gate.b2));
        match &self.head {
            HeadParams::Gaussian {
                w_mu,
                b_mu,
                w_sigma,
                b_sigma,
            } => {
                out.push(("head.w_mu", w_mu));
                out.push(("head.b_mu", b_mu));
                out.push(("head.w_sigma", w_sigma));
                out.push(("head.b_sigma", b_sigma));
            }
            HeadParams::Point { w_z, b_z } => {
                out.push(("head.w_z", w_z));
                out.push(("head.b_z", b_z));
            }
        }
        out
    }

    pub fn tensors(&self) -> Vec<&T> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    /// Same layout with every leaf transformed, visited in canonical order.
    pub fn map<U>(&self, mut f: impl FnMut(&'static str, &T) -> U) -> EncoderParams<U> {
        let gru = |g: &GruParams<T>, n: [&'static str; 3], f: &mut dyn FnMut(&'static str, &T) -> U| GruParams {
            w: f(n[0], &g.w),
            u: f(n[1], &g.u),
            b: f(n[2], &g.b),
        };
        let input = match &self.input {
            InputParams::Embedding { table } => InputParams::Embedding {
                table: f("embed.table", table),
            },
            InputParams::Profile { w, b } => InputParams::Profile {
                w: f("profile.w", w),
                b: f("profile.b", b),
            },
        };
        let forward = gru(&self.forward, ["gru.fwd.w", "gru.fwd.u", "gru.fwd.b"], &mut f);
        let backward = gru(&self.backward, ["gru.bwd.w", "gru.bwd.u", "gru.bwd.b"], &mut f);
        let gate = GateParams {
            w1: f("gate.w1", &self.gate.w1),
            b1: f("gate.b1", &self.gate.b1),
            w2: f("gate.w2", &self.gate.w2),
            b2: f("gate.b2", &self.gate.b2),
        };
        let head = match &self.head {
            HeadParams::Gaussian {
                w_mu,
                b_mu,
                w_sigma,
                b_sigma,
            } => HeadParams::Gaussian {
                w_mu: f("head.w_mu", w_mu),
                b_mu: f("head.b_mu", b_mu),
                w_sigma: f("head.w_sigma", w_sigma),
                b_sigma: f("head.b_sigma", b_sigma),
            },
            HeadParams::Point { w_z, b_z } => HeadParams::Point {
                w_z: f("head.w_z", w_z),
                b_z: f("head.b_z", b_z),
            },
        };
        EncoderParams {
            input,
            forward,
            backward,
            gate,
            head,
        }
    }

    /// Replaces the leaves by `values`, given in canonical order.
    pub fn with_values<U>(&self, values: Vec<U>) -> Result<EncoderParams<U>> {
        let n = self.named().len();
        if values.len() != n {
            return Err(Error::Contract(format!(
                "parameter layout has {n} tensors but {} were given",
                values.len()
            )));
        }
        let mut it = values.into_iter();
        Ok(self.map(|_, _| it.next().unwrap()))
    }
}

impl EncoderParams<Tensor> {
    /// Xavier-uniform matrices and zero biases.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (de, h, dh, d) = (cfg.embed_dim, cfg.hidden, cfg.hidden_width(), cfg.dim);
        let mut tag = 0u64;
        let mut mat = |r: usize, c: usize| {
            tag += 1;
            xavier_init(&[r, c], derive_seed(seed, tag))
        };
        let zeros = |n: usize| Tensor::zeros(&[n]);
        let input = match cfg.profile_dim {
            None => InputParams::Embedding {
                table: mat(ALPHABET_SIZE, de)?,
            },
            Some(f) => InputParams::Profile {
                w: mat(f, de)?,
                b: zeros(de),
            },
        };
        let gru = |mat: &mut dyn FnMut(usize, usize) -> Result<Tensor>| -> Result<GruParams<Tensor>> {
            Ok(GruParams {
                w: mat(de, 3 * h)?,
                u: mat(h, 3 * h)?,
                b: zeros(3 * h),
            })
        };
        let forward = gru(&mut mat)?;
        let backward = gru(&mut mat)?;
        let gate = GateParams {
            w1: mat(dh, dh)?,
            b1: zeros(dh),
            w2: mat(dh, 1)?,
            b2: zeros(1),
        };
        let head = match cfg.head {
            HeadKind::Gaussian => HeadParams::Gaussian {
                w_mu: mat(dh, d)?,
                b_mu: zeros(d),
                w_sigma: mat(dh, d)?,
                b_sigma: zeros(d),
            },
            HeadKind::Point => HeadParams::Point {
                w_z: mat(dh, d)?,
                b_z: zeros(d),
            },
        };
        Ok(EncoderParams {
            input,
            forward,
            backward,
            gate,
            head,
        })
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Puts every tensor on `tape` as a tracked leaf.
    pub fn to_tape(&self, tape: &Tape) -> EncoderParams<Var> {
        self.map(|_, t| tape.param(t.clone()))
    }

    /// Puts every tensor on `tape` as a constant.
    pub fn to_tape_constant(&self, tape: &Tape) -> EncoderParams<Var> {
        self.map(|_, t| tape.constant(t.clone()))
    }
}

/// Diagonal Gaussian; `sigma` holds variances.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianEmbedding {
    pub mu: Tensor,
    pub sigma: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Embedding {
    Gaussian(GaussianEmbedding),
    Point(Tensor),
}

impl Embedding {
    /// The mean (or the point).
    pub fn mean(&self) -> &Tensor {
        match self {
            Embedding::Gaussian(g) => &g.mu,
            Embedding::Point(z) => z,
        }
    }

    pub fn variance(&self) -> Option<&Tensor> {
        match self {
            Embedding::Gaussian(g) => Some(&g.sigma),
            Embedding::Point(_) => None,
        }
    }
}

/// Embedding variables recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarEmbedding {
    pub mu: Var,
    pub sigma: Option<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSequence {
    pub hidden: Tensor,
    pub gates: GateVector,
    pub embedding: Embedding,
}

/// Tape handles of one encoded sequence.
#[derive(Debug, Clone, Copy)]
pub struct TapeEncoding {
    pub hidden: Var,
    pub gates: Var,
    pub embedding: VarEmbedding,
}

/// Residue lookup: row `l` is `table[tokens[l]]`.
pub fn embed(tape: &Tape, tokens: &[usize], table: Var) -> Result<Var> {
    tape.gather_rows(table, tokens)
}

/// Per-direction activations cached for the adjoint pass.
struct GruTrace {
    /// `[L × 3H]` rows of `[r | z | n]` in processing order.
    gates: Vec<f64>,
    /// `[L × H]` hidden state entering each step, in processing order.
    h_prev: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn gru_forward(x: &[f64], len: usize, input: usize, w: &[f64], u: &[f64], b: &[f64], h: usize, reverse: bool, out: &mut [f64], col: usize) -> GruTrace {
    let h3 = 3 * h;
    let mut xw = vec![0.0; len * h3];
    for row in xw.chunks_mut(h3) {
        row.copy_from_slice(b);
    }
    matmul_into(x, w, &mut xw, len, input, h3);

    let mut gates = vec![0.0; len * h3];
    let mut h_prev_all = vec![0.0; len * h];
    let mut state = vec![0.0; h];
    let mut acc = vec![0.0; h3];
    let mut rh = vec![0.0; h];
    for step in 0..len {
        let t = if reverse { len - 1 - step } else { step };
        h_prev_all[step * h..(step + 1) * h].copy_from_slice(&state);
        acc[..2 * h].copy_from_slice(&xw[t * h3..t * h3 + 2 * h]);
        for (i, &hp) in state.iter().enumerate() {
            if hp != 0.0 {
                let urow = &u[i * h3..i * h3 + 2 * h];
                for (a, &uv) in acc[..2 * h].iter_mut().zip(urow) {
                    *a += hp * uv;
                }
            }
        }
        let g = &mut gates[step * h3..(step + 1) * h3];
        for j in 0..2 * h {
            g[j] = sigmoid(acc[j]);
        }
        for i in 0..h {
            rh[i] = g[i] * state[i];
        }
        let cand = &mut acc[2 * h..];
        cand.copy_from_slice(&xw[t * h3 + 2 * h..(t + 1) * h3]);
        for (i, &v) in rh.iter().enumerate() {
            if v != 0.0 {
                let urow = &u[i * h3 + 2 * h..(i + 1) * h3];
                for (a, &uv) in cand.iter_mut().zip(urow) {
                    *a += v * uv;
                }
            }
        }
        for j in 0..h {
            let n = cand[j].tanh();
            g[2 * h + j] = n;
            let z = g[h + j];
            state[j] = (1.0 - z) * n + z * state[j];
        }
        out[t * 2 * h + col..t * 2 * h + col + h].copy_from_slice(&state);
    }
    GruTrace {
        gates,
        h_prev: h_prev_all,
    }
}

/// Returns `(dx, dw, du, db)` for one direction given the adjoint of the full
/// `[L × 2H]` output.
#[allow(clippy::too_many_arguments)]
fn gru_backward(trace: &GruTrace, dout: &[f64], x: &[f64], len: usize, input: usize, w: &[f64], u: &[f64], h: usize, reverse: bool, col: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let h3 = 3 * h;
    let mut da_all = vec![0.0; len * h3];
    let mut du = vec![0.0; h * h3];
    let mut dh = vec![0.0; h];
    let mut dhp = vec![0.0; h];
    let mut d_rh = vec![0.0; h];
    for step in (0..len).rev() {
        let t = if reverse { len - 1 - step } else { step };
        for j in 0..h {
            dh[j] += dout[t * 2 * h + col + j];
        }
        let g = &trace.gates[step * h3..(step + 1) * h3];
        let hp = &trace.h_prev[step * h..(step + 1) * h];
        let da = &mut da_all[step * h3..(step + 1) * h3];
        for j in 0..h {
            let (z, n) = (g[h + j], g[2 * h + j]);
            let dn = dh[j] * (1.0 - z);
            let dz = dh[j] * (hp[j] - n);
            dhp[j] = dh[j] * z;
            da[2 * h + j] = dn * (1.0 - n * n);
            da[h + j] = dz * z * (1.0 - z);
        }
        // candidate path through U_n (r ⊙ h_prev)
        for i in 0..h {
            let urow = &u[i * h3 + 2 * h..(i + 1) * h3];
            d_rh[i] = urow.iter().zip(&da[2 * h..]).map(|(a, b)| a * b).sum();
            let rh = g[i] * hp[i];
            if rh != 0.0 {
                let durow = &mut du[i * h3 + 2 * h..(i + 1) * h3];
                for (d, &a) in durow.iter_mut().zip(&da[2 * h..]) {
                    *d += rh * a;
                }
            }
        }
        for i in 0..h {
            let r = g[i];
            let dr = d_rh[i] * hp[i];
            dhp[i] += d_rh[i] * r;
            da[i] = dr * r * (1.0 - r);
        }
        // reset and update paths through U_r, U_z
        for i in 0..h {
            let urow = &u[i * h3..i * h3 + 2 * h];
            dhp[i] += urow.iter().zip(&da[..2 * h]).map(|(a, b)| a * b).sum::<f64>();
            if hp[i] != 0.0 {
                let durow = &mut du[i * h3..i * h3 + 2 * h];
                for (d, &a) in durow.iter_mut().zip(&da[..2 * h]) {
                    *d += hp[i] * a;
                }
            }
        }
        std::mem::swap(&mut dh, &mut dhp);
    }
    // da rows are in processing order; reorder to time order for the input
    // projections
    let da_time: Vec<f64> = if reverse {
        let mut v = vec![0.0; len * h3];
        for step in 0..len {
            let t = len - 1 - step;
            v[t * h3..(t + 1) * h3].copy_from_slice(&da_all[step * h3..(step + 1) * h3]);
        }
        v
    } else {
        da_all
    };
    let mut dw = vec![0.0; input * h3];
    matmul_tn_into(x, &da_time, &mut dw, len, input, h3);
    let mut db = vec![0.0; h3];
    for row in da_time.chunks(h3) {
        for (d, v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
    let mut dx = vec![0.0; len * input];
    matmul_nt_into(&da_time, w, &mut dx, len, h3, input);
    (dx, dw, du, db)
}

/// Bidirectional GRU over `x: [L × d]` from zero initial states. Row `l` of
/// the result is `[→h_l ; ←h_l]`.
pub fn bigru(tape: &Tape, x: Var, fwd: &GruParams<Var>, bwd: &GruParams<Var>) -> Result<Var> {
    let (len, input) = tape.value(x).dims2();
    let h = {
        let u = tape.value(fwd.u);
        let (r, c) = u.dims2();
        if c != 3 * r {
            return Err(Error::shape("bigru recurrent weights", u.shape(), &[r, 3 * r]));
        }
        r
    };
    for g in [fwd, bwd] {
        let w = tape.value(g.w);
        if w.shape() != [input, 3 * h] {
            return Err(Error::shape("bigru input weights", w.shape(), &[input, 3 * h]));
        }
        if tape.value(g.u).shape() != [h, 3 * h] {
            return Err(Error::shape("bigru recurrent weights", tape.value(g.u).shape(), &[h, 3 * h]));
        }
        if tape.value(g.b).shape() != [3 * h] {
            return Err(Error::shape("bigru bias", tape.value(g.b).shape(), &[3 * h]));
        }
    }
    let mut out = vec![0.0; len * 2 * h];
    let traces = {
        let xv = tape.value(x);
        let mut run = |g: &GruParams<Var>, reverse: bool, col: usize| {
            gru_forward(
                xv.data(),
                len,
                input,
                tape.value(g.w).data(),
                tape.value(g.u).data(),
                tape.value(g.b).data(),
                h,
                reverse,
                &mut out,
                col,
            )
        };
        [run(fwd, false, 0), run(bwd, true, h)]
    };
    let value = Tensor::new(vec![len, 2 * h], out)?;
    Ok(tape.custom(
        &[x, fwd.w, fwd.u, fwd.b, bwd.w, bwd.u, bwd.b],
        value,
        Box::new(move |g, p, _| {
            let x = p[0].data();
            let mut grads: Vec<Option<Tensor>> = vec![None; 7];
            let mut dx_total = vec![0.0; len * input];
            for (dir, trace) in traces.iter().enumerate() {
                let base = 1 + 3 * dir;
                let (dx, dw, du, db) = gru_backward(
                    trace,
                    g.data(),
                    x,
                    len,
                    input,
                    p[base].data(),
                    p[base + 1].data(),
                    h,
                    dir == 1,
                    dir * h,
                );
                for (a, b) in dx_total.iter_mut().zip(&dx) {
                    *a += b;
                }
                grads[base] = Some(Tensor::new(vec![input, 3 * h], dw).unwrap());
                grads[base + 1] = Some(Tensor::new(vec![h, 3 * h], du).unwrap());
                grads[base + 2] = Some(Tensor::new(vec![3 * h], db).unwrap());
            }
            grads[0] = Some(Tensor::new(vec![len, input], dx_total).unwrap());
            grads
        }),
    ))
}

/// Position-wise scores `p_l = w2ᵀ tanh(w1ᵀ h_l + b1) + b2`, as a vector.
pub fn gate_scores(tape: &Tape, hidden: Var, gate: &GateParams<Var>) -> Result<Var> {
    let a = tape.add_row(tape.matmul(hidden, gate.w1)?, gate.b1)?;
    let a = tape.tanh(a);
    let p = tape.add_row(tape.matmul(a, gate.w2)?, gate.b2)?;
    let len = tape.value(hidden).dims2().0;
    tape.reshape(p, &[len])
}

/// `v = Σ_l g_l h_l`.
pub fn pool(tape: &Tape, hidden: Var, gates: Var) -> Result<Var> {
    let (len, _) = tape.value(hidden).dims2();
    let g = tape.value(gates);
    if g.rank() != 1 || g.len() != len {
        return Err(Error::shape("pool", g.shape(), &[len]));
    }
    drop(g);
    tape.matmul(gates, hidden)
}

/// `μ = W_μᵀ v + b_μ`, `Σ = ELU(W_Σᵀ v + b_Σ) + 1`.
pub fn gaussian_head(tape: &Tape, v: Var, w_mu: Var, b_mu: Var, w_sigma: Var, b_sigma: Var) -> Result<VarEmbedding> {
    let mu = tape.add_row(tape.matmul(v, w_mu)?, b_mu)?;
    let pre = tape.add_row(tape.matmul(v, w_sigma)?, b_sigma)?;
    let sigma = tape.elu_plus_one(pre);
    Ok(VarEmbedding {
        mu,
        sigma: Some(sigma),
    })
}

pub fn point_head(tape: &Tape, v: Var, w_z: Var, b_z: Var) -> Result<VarEmbedding> {
    let z = tape.add_row(tape.matmul(v, w_z)?, b_z)?;
    Ok(VarEmbedding { mu: z, sigma: None })
}

/// Records the full encoder for one record on `tape`.
pub fn encode_on_tape(tape: &Tape, params: &EncoderParams<Var>, gate_cfg: &GateConfig, rec: &ProteinRecord) -> Result<TapeEncoding> {
    let x = match &params.input {
        InputParams::Embedding { table } => embed(tape, &rec.tokens, *table)?,
        InputParams::Profile { w, b } => {
            let prof = rec.profile.as_ref().ok_or_else(|| {
                Error::Dataset(format!("model expects a profile for '{}'", rec.id))
            })?;
            let xp = tape.constant(prof.clone());
            tape.add_row(tape.matmul(xp, *w)?, *b)?
        }
    };
    let hidden = bigru(tape, x, &params.forward, &params.backward)?;
    let scores = gate_scores(tape, hidden, &params.gate)?;
    let gates = project_var(tape, scores, gate_cfg)?;
    let v = pool(tape, hidden, gates)?;
    let embedding = match &params.head {
        HeadParams::Gaussian {
            w_mu,
            b_mu,
            w_sigma,
            b_sigma,
        } => gaussian_head(tape, v, *w_mu, *b_mu, *w_sigma, *b_sigma)?,
        HeadParams::Point { w_z, b_z } => point_head(tape, v, *w_z, *b_z)?,
    };
    if let Some(s) = embedding.sigma {
        check_variance(&tape.value(s), &rec.id)?;
    }
    Ok(TapeEncoding {
        hidden,
        gates,
        embedding,
    })
}

fn check_variance(sigma: &Tensor, id: &str) -> Result<()> {
    if sigma.data().iter().all(|&s| s > 0.0 && s.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "non-positive or non-finite variance while encoding '{id}'"
        )))
    }
}

/// Encodes one record with fixed parameters.
pub fn encode(rec: &ProteinRecord, params: &EncoderParams<Tensor>, cfg: &ModelConfig) -> Result<EncodedSequence> {
    let tape = Tape::new();
    let vars = params.to_tape_constant(&tape);
    let enc = encode_on_tape(&tape, &vars, &cfg.gate, rec)?;
    let hidden = tape.value(enc.hidden).clone();
    if !hidden.is_finite() {
        return Err(Error::Numerical(format!("non-finite hidden state for '{}'", rec.id)));
    }
    let gates = GateVector::new(tape.value(enc.gates).data().to_vec());
    let mu = tape.value(enc.embedding.mu).clone();
    let embedding = match enc.embedding.sigma {
        Some(s) => Embedding::Gaussian(GaussianEmbedding {
            mu,
            sigma: tape.value(s).clone(),
        }),
        None => Embedding::Point(mu),
    };
    Ok(EncodedSequence {
        hidden,
        gates,
        embedding,
    })
}

/// Encodes many records in parallel.
pub fn encode_all(records: &[ProteinRecord], params: &EncoderParams<Tensor>, cfg: &ModelConfig) -> Result<Vec<EncodedSequence>> {
    use rayon::prelude::*;
    records
        .par_iter()
        .map(|r| encode(&r.truncate(cfg.max_len), params, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{elu_plus_one, grad_check};
    use crate::projections::Gating;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg(gating: Gating, head: HeadKind) -> ModelConfig {
        ModelConfig {
            gate: GateConfig::with_gating(gating),
            head,
            embed_dim: 4,
            hidden: 3,
            dim: 5,
            max_len: 1024,
            profile_dim: None,
        }
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
    }

    fn rec(seq: &str) -> ProteinRecord {
        ProteinRecord::from_sequence("t", seq).unwrap()
    }

    #[test]
    fn identity_embedding_is_one_hot() {
        let tape = Tape::new();
        let table = tape.constant(Tensor::identity(ALPHABET_SIZE));
        let x = embed(&tape, &[3, 3, 7], table).unwrap();
        let v = tape.value(x);
        assert_eq!(v.shape(), &[3, ALPHABET_SIZE]);
        assert_eq!(v.row(0)[3], 1.0);
        assert_eq!(v.row(0), v.row(1));
        assert_eq!(v.row(2).iter().sum::<f64>(), 1.0);
        drop(v);
        assert!(embed(&tape, &[ALPHABET_SIZE], table).is_err());
    }

    #[test]
    fn embedding_gradient_counts_tokens() {
        let tape = Tape::new();
        let table = tape.param(Tensor::zeros(&[ALPHABET_SIZE, 2]));
        let y = tape.sum(embed(&tape, &[1, 4, 1, 1], table).unwrap());
        let g = tape.backward(y).unwrap();
        let g = g.get(table).unwrap();
        assert_eq!(g.row(1), &[3.0, 3.0]);
        assert_eq!(g.row(4), &[1.0, 1.0]);
        assert_eq!(g.row(0), &[0.0, 0.0]);
    }

    /// Straight-line GRU for one direction, per-gate matrices sliced out of
    /// the packed layout.
    fn gru_reference(x: &Tensor, w: &Tensor, u: &Tensor, b: &Tensor, reverse: bool) -> Vec<Vec<f64>> {
        let (len, input) = x.dims2();
        let h = u.shape()[0];
        let wv = |i: usize, j: usize| w.data()[i * 3 * h + j];
        let uv = |i: usize, j: usize| u.data()[i * 3 * h + j];
        let mut state = vec![0.0; h];
        let mut out = vec![vec![0.0; h]; len];
        let order: Vec<usize> = if reverse { (0..len).rev().collect() } else { (0..len).collect() };
        for t in order {
            let xt = x.row(t);
            let lin = |gate: usize, hv: &[f64]| -> Vec<f64> {
                (0..h)
                    .map(|j| {
                        let col = gate * h + j;
                        let mut s = b.data()[col];
                        for i in 0..input {
                            s += xt[i] * wv(i, col);
                        }
                        for i in 0..h {
                            s += hv[i] * uv(i, col);
                        }
                        s
                    })
                    .collect()
            };
            let r: Vec<f64> = lin(0, &state).into_iter().map(sigmoid).collect();
            let z: Vec<f64> = lin(1, &state).into_iter().map(sigmoid).collect();
            let rh: Vec<f64> = r.iter().zip(&state).map(|(a, b)| a * b).collect();
            let n: Vec<f64> = lin(2, &rh).into_iter().map(f64::tanh).collect();
            for j in 0..h {
                state[j] = (1.0 - z[j]) * n[j] + z[j] * state[j];
            }
            out[t] = state.clone();
        }
        out
    }

    fn random_gru(rng: &mut ChaCha8Rng, input: usize, h: usize) -> GruParams<Tensor> {
        GruParams {
            w: rand_tensor(rng, &[input, 3 * h], 0.8),
            u: rand_tensor(rng, &[h, 3 * h], 0.8),
            b: rand_tensor(rng, &[3 * h], 0.5),
        }
    }

    #[test]
    fn bigru_matches_reference_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for len in [1, 2, 7] {
            let x = rand_tensor(&mut rng, &[len, 4], 1.0);
            let f = random_gru(&mut rng, 4, 3);
            let b = random_gru(&mut rng, 4, 3);
            let tape = Tape::new();
            let xv = tape.constant(x.clone());
            let fv = GruParams {
                w: tape.constant(f.w.clone()),
                u: tape.constant(f.u.clone()),
                b: tape.constant(f.b.clone()),
            };
            let bv = GruParams {
                w: tape.constant(b.w.clone()),
                u: tape.constant(b.u.clone()),
                b: tape.constant(b.b.clone()),
            };
            let out = bigru(&tape, xv, &fv, &bv).unwrap();
            let out = tape.value(out);
            let rf = gru_reference(&x, &f.w, &f.u, &f.b, false);
            let rb = gru_reference(&x, &b.w, &b.u, &b.b, true);
            for t in 0..len {
                let row = out.row(t);
                for j in 0..3 {
                    assert!((row[j] - rf[t][j]).abs() < 1e-12);
                    assert!((row[3 + j] - rb[t][j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_gru_stays_zero() {
        let tape = Tape::new();
        let zero = |s: &[usize]| tape.constant(Tensor::zeros(s));
        let g = || GruParams {
            w: zero(&[2, 6]),
            u: zero(&[2, 6]),
            b: zero(&[6]),
        };
        let (f, b) = (g(), g());
        let x = tape.constant(Tensor::new(vec![3, 2], vec![1.0, -2.0, 3.0, 0.5, 9.0, -4.0]).unwrap());
        let out = bigru(&tape, x, &f, &b).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_gru_directions_agree_on_shared_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_gru(&mut rng, 3, 2);
        let tape = Tape::new();
        let x = tape.constant(rand_tensor(&mut rng, &[1, 3], 1.0));
        let p = GruParams {
            w: tape.constant(f.w.clone()),
            u: tape.constant(f.u.clone()),
            b: tape.constant(f.b.clone()),
        };
        let out = bigru(&tape, x, &p, &p).unwrap();
        let v = tape.value(out);
        assert_eq!(&v.data()[..2], &v.data()[2..]);
    }

    #[test]
    fn bigru_gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..3 {
            let (len, input, h) = (3, 4, 3);
            let f = random_gru(&mut rng, input, h);
            let b = random_gru(&mut rng, input, h);
            let x = rand_tensor(&mut rng, &[len, input], 1.0);
            let weights = rand_tensor(&mut rng, &[len, 2 * h], 1.0);
            let point = vec![x, f.w, f.u, f.b, b.w, b.u, b.b];
            let check = grad_check(
                |t, v| {
                    let fp = GruParams { w: v[1], u: v[2], b: v[3] };
                    let bp = GruParams { w: v[4], u: v[5], b: v[6] };
                    let out = bigru(t, v[0], &fp, &bp)?;
                    let wt = t.constant(weights.clone());
                    let sq = t.square(out);
                    Ok(t.sum(t.mul(sq, wt)?))
                },
                &point,
                1e-6,
            )
            .unwrap();
            assert!(check.max_rel_error < 1e-6, "trial {trial}: {check:?}");
            assert_eq!(check.skipped, 0);
        }
    }

    #[test]
    fn constant_scores_when_w2_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tape = Tape::new();
        let h = tape.constant(rand_tensor(&mut rng, &[5, 4], 1.0));
        let gp = GateParams {
            w1: tape.constant(rand_tensor(&mut rng, &[4, 4], 1.0)),
            b1: tape.constant(Tensor::zeros(&[4])),
            w2: tape.constant(Tensor::zeros(&[4, 1])),
            b2: tape.constant(Tensor::scalar(0.3)),
        };
        let p = gate_scores(&tape, h, &gp).unwrap();
        assert!(tape.value(p).data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn gate_scores_match_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let hv = rand_tensor(&mut rng, &[6, 4], 1.0);
        let w1 = rand_tensor(&mut rng, &[4, 4], 1.0);
        let b1 = rand_tensor(&mut rng, &[4], 1.0);
        let w2 = rand_tensor(&mut rng, &[4, 1], 1.0);
        let b2 = rand_tensor(&mut rng, &[1], 1.0);
        let tape = Tape::new();
        let gp = GateParams {
            w1: tape.constant(w1.clone()),
            b1: tape.constant(b1.clone()),
            w2: tape.constant(w2.clone()),
            b2: tape.constant(b2.clone()),
        };
        let mut rows = hv.clone();
        rows.data_mut()[4..8].copy_from_slice(&hv.data()[..4]);
        let h = tape.constant(rows.clone());
        let p = gate_scores(&tape, h, &gp).unwrap();
        let p = tape.value(p);
        for l in 0..6 {
            let mut s = b2.data()[0];
            for j in 0..4 {
                let mut a = b1.data()[j];
                for i in 0..4 {
                    a += rows.row(l)[i] * w1.data()[i * 4 + j];
                }
                s += a.tanh() * w2.data()[j];
            }
            assert!((p.data()[l] - s).abs() < 1e-12);
        }
        assert_eq!(p.data()[0], p.data()[1]);
    }

    #[test]
    fn pooling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hv = rand_tensor(&mut rng, &[4, 3], 1.0);
        let tape = Tape::new();
        let h = tape.constant(hv.clone());
        let one_hot = tape.constant(Tensor::vector(vec![0.0, 0.0, 1.0, 0.0]));
        let v = pool(&tape, h, one_hot).unwrap();
        assert_eq!(tape.value(v).data(), hv.row(2));

        let uniform = tape.constant(Tensor::vector(vec![0.25; 4]));
        let v = pool(&tape, h, uniform).unwrap();
        for j in 0..3 {
            let mean = (0..4).map(|l| hv.row(l)[j]).sum::<f64>() / 4.0;
            assert!((tape.value(v).data()[j] - mean).abs() < 1e-12);
        }

        let gv: Vec<f64> = crate::projections::softmax(&[0.3, -1.0, 2.0, 0.1]).into_values();
        let g = tape.constant(Tensor::vector(gv.clone()));
        let v = pool(&tape, h, g).unwrap();
        for j in 0..3 {
            let mut s = 0.0;
            for l in 0..4 {
                s += gv[l] * hv.row(l)[j];
            }
            assert!((tape.value(v).data()[j] - s).abs() < 1e-12);
        }
        let short = tape.constant(Tensor::vector(vec![1.0; 3]));
        assert!(pool(&tape, h, short).is_err());
    }

    #[test]
    fn gaussian_head_asymptotes() {
        let tape = Tape::new();
        let v = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        let w = tape.constant(Tensor::zeros(&[2, 2]));
        let b_mu = tape.constant(Tensor::vector(vec![0.5, -1.0]));
        let b_s = tape.constant(Tensor::vector(vec![0.0, -50.0]));
        let e = gaussian_head(&tape, v, w, b_mu, w, b_s).unwrap();
        assert_eq!(tape.value(e.mu).data(), &[0.5, -1.0]);
        let s = tape.value(e.sigma.unwrap());
        assert_eq!(s.data()[0], 1.0);
        assert!(s.data()[1] > 0.0 && s.data()[1] < 1e-20);
        assert_eq!(s.data()[1], elu_plus_one(-50.0));
        assert_eq!(elu_plus_one(-50.0), (-50.0f64).exp());
    }

    #[test]
    fn no_gating_equals_softmax_with_flat_scores() {
        let cfg_none = small_cfg(Gating::None, HeadKind::Gaussian);
        let cfg_soft = small_cfg(Gating::Softmax, HeadKind::Gaussian);
        let mut params = EncoderParams::init(&cfg_none, 1).unwrap();
        params.gate.w2 = Tensor::zeros(&[6, 1]);
        let r = rec("MKVLAAGHWE");
        let a = encode(&r, &params, &cfg_none).unwrap();
        let b = encode(&r, &params, &cfg_soft).unwrap();
        assert!(a.embedding.mean().max_abs_diff(b.embedding.mean()) < 1e-12);
        assert!(a.embedding.variance().unwrap().max_abs_diff(b.embedding.variance().unwrap()) < 1e-12);
    }

    #[test]
    fn sparsemax_gates_are_sparse_for_random_inits() {
        let cfg = ModelConfig {
            gate: GateConfig::with_gating(Gating::Sparsemax),
            ..ModelConfig::default()
        };
        let seq: String = "MKTAYIAKQRQISFVKSHFSRQLEERLGLIEVQAPILSRVGDGTQDNLSGAEKAVQVKVKALPDAQ".into();
        let mut fractions = Vec::new();
        for seed in 0..5 {
            let params = EncoderParams::init(&cfg, seed).unwrap();
            let e = encode(&rec(&seq), &params, &cfg).unwrap();
            assert!(e.gates.on_simplex(1e-9));
            fractions.push(e.gates.support().len() as f64 / seq.len() as f64);
        }
        assert!(fractions.iter().all(|&f| f < 1.0), "{fractions:?}");
    }

    #[test]
    fn encoding_is_deterministic_and_dimension_stable() {
        let cfg = small_cfg(Gating::Fusedmax, HeadKind::Gaussian);
        let params = EncoderParams::init(&cfg, 9).unwrap();
        let a = encode(&rec("MKVLAW"), &params, &cfg).unwrap();
        let b = encode(&rec("MKVLAW"), &params, &cfg).unwrap();
        assert_eq!(a, b);
        let c = encode(&rec("GGGMKVLAW"), &params, &cfg).unwrap();
        assert_eq!(c.embedding.mean().shape(), a.embedding.mean().shape());
        assert_eq!(c.hidden.shape(), &[9, 6]);
        assert_eq!(c.gates.len(), 9);
    }

    #[test]
    fn point_head_has_no_variance() {
        let cfg = small_cfg(Gating::Sparsemax, HeadKind::Point);
        let params = EncoderParams::init(&cfg, 2).unwrap();
        let e = encode(&rec("MKV"), &params, &cfg).unwrap();
        assert!(e.embedding.variance().is_none());
        assert_eq!(e.embedding.mean().shape(), &[5]);
    }

    #[test]
    fn profile_input() {
        let cfg = ModelConfig {
            profile_dim: Some(3),
            ..small_cfg(Gating::Softmax, HeadKind::Gaussian)
        };
        let params = EncoderParams::init(&cfg, 2).unwrap();
        let mut r = rec("MKVL");
        assert!(matches!(encode(&r, &params, &cfg), Err(Error::Dataset(_))));
        r.profile = Some(Tensor::full(&[4, 3], 0.2));
        let e = encode(&r, &params, &cfg).unwrap();
        assert_eq!(e.hidden.shape(), &[4, 6]);
    }

    #[test]
    fn off_support_positions_get_no_pooling_gradient() {
        let tape = Tape::new();
        let h = tape.param(Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let g = tape.constant(Tensor::vector(vec![0.6, 0.0, 0.4]));
        let v = pool(&tape, h, g).unwrap();
        let y = tape.sum(tape.square(v));
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(h).unwrap().row(1), &[0.0, 0.0]);
    }

    #[test]
    fn named_layout_round_trips() {
        let cfg = small_cfg(Gating::Sparsemax, HeadKind::Gaussian);
        let p = EncoderParams::init(&cfg, 0).unwrap();
        let names: Vec<&str> = p.named().iter().map(|(n, _)| *n).collect();
        assert_eq!(names.len(), 15);
        let mut uniq = names.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), names.len());
        let values: Vec<Tensor> = p.tensors().into_iter().cloned().collect();
        assert_eq!(p.with_values(values).unwrap(), p);
        assert!(p.with_values(vec![Tensor::scalar(0.0)]).is_err());
    }
}
