//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation as a node in creation order, which is a
//! topological order of the computation graph. [`Tape::backward`] walks the
//! nodes in reverse and accumulates adjoints into each parent, so a tensor
//! used in several places receives the sum of its adjoints.
//!
//! Leaves are created with [`Tape::param`] (gradients tracked) or
//! [`Tape::constant`] (no gradient). Nodes whose parents are all constants do
//! not keep a backward rule, so purely forward evaluation stays cheap.
//!
//! Non-smooth operations fold their active branch (sign pattern, support set,
//! fused segment layout) into a running signature, see
//! [`Tape::branch_signature`]. The finite-difference harness uses it to skip
//! coordinates whose perturbation crosses a kink.

use std::cell::{Cell, Ref, RefCell};

use crate::error::{Error, Result};
use crate::tensor::{matmul_nt_into, matmul_tn_into, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Adjoint rule: given the output adjoint, the parent values and the node's
/// own value, produce one optional adjoint per parent.
pub type BackwardFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    signature: Cell<u64>,
}

/// Adjoints produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adjoint of `v`, or zeros shaped like `like` when `v` did not influence
    /// the output.
    pub fn wrt(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, parents: Vec<usize>, backward: Option<BackwardFn>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|&p| nodes[p].requires_grad);
        let backward = if requires_grad { backward } else { None };
        nodes.push(Node {
            value,
            parents,
            backward,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&self, value: Tensor) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: true,
        });
        Var(nodes.len() - 1)
    }

    /// A leaf treated as a constant.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Vec::new(), None)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Folds a branch identifier of a non-smooth operation into the tape's
    /// signature.
    pub fn record_branch(&self, bits: u64) {
        let mut h = self.signature.get() ^ bits;
        h = h.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        h ^= h >> 31;
        self.signature.set(h);
    }

    /// Signature of every branch taken by non-smooth operations so far. Two
    /// evaluations with equal signatures lie on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        self.signature.get()
    }

    /// Records an operation with a hand-written adjoint rule.
    pub fn custom(&self, parents: &[Var], value: Tensor, backward: BackwardFn) -> Var {
        self.push(value, parents.iter().map(|v| v.0).collect(), Some(backward))
    }

    /// Propagates adjoints from a scalar output back to every node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out = &nodes[output.0].value;
        if out.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[output.0] = Some(Tensor::full(out.shape(), 1.0));
        for i in (0..=output.0).rev() {
            let node = &nodes[i];
            let Some(rule) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let parent_vals: Vec<&Tensor> = node.parents.iter().map(|&p| &nodes[p].value).collect();
            let parent_grads = rule(&g, &parent_vals, &node.value);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[p].value.shape());
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    // ---- linear algebra -------------------------------------------------

    /// Matrix product `a[m×k] · b[k×n]`. A rank-1 `a` acts as a single row
    /// and yields a rank-1 result.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(&self.value(b))?;
        Ok(self.custom(
            &[a, b],
            value,
            Box::new(|g, p, _| {
                let (a, b) = (p[0], p[1]);
                let (m, k) = a.dims2();
                let (_, n) = b.dims2();
                let mut ga = vec![0.0; m * k];
                matmul_nt_into(g.data(), b.data(), &mut ga, m, n, k);
                let mut gb = vec![0.0; k * n];
                matmul_tn_into(a.data(), g.data(), &mut gb, m, k, n);
                vec![
                    Some(Tensor::new(a.shape().to_vec(), ga).unwrap()),
                    Some(Tensor::new(b.shape().to_vec(), gb).unwrap()),
                ]
            }),
        ))
    }

    /// Adds `row` to every row of the matrix `m`.
    pub fn add_row(&self, m: Var, row: Var) -> Result<Var> {
        let value = {
            let mv = self.value(m);
            let rv = self.value(row);
            let (r, c) = mv.dims2();
            if rv.rank() != 1 || rv.len() != c {
                return Err(Error::shape("add_row", mv.shape(), rv.shape()));
            }
            let mut out = mv.clone();
            for i in 0..r {
                for (o, b) in out.data_mut()[i * c..(i + 1) * c].iter_mut().zip(rv.data()) {
                    *o += b;
                }
            }
            out
        };
        Ok(self.custom(
            &[m, row],
            value,
            Box::new(|g, p, _| {
                let (r, c) = g.dims2();
                let mut gr = vec![0.0; c];
                for i in 0..r {
                    for (acc, v) in gr.iter_mut().zip(&g.data()[i * c..(i + 1) * c]) {
                        *acc += v;
                    }
                }
                vec![
                    Some(g.clone()),
                    Some(Tensor::new(p[1].shape().to_vec(), gr).unwrap()),
                ]
            }),
        ))
    }

    /// Row lookup `table[idx[l], :]`, the one-hot product realized as a gather.
    pub fn gather_rows(&self, table: Var, idx: &[usize]) -> Result<Var> {
        if idx.is_empty() {
            return Err(Error::Contract("gather_rows with no indices".into()));
        }
        let value = {
            let t = self.value(table);
            let (n, c) = t.dims2();
            if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
                return Err(Error::Contract(format!(
                    "token index {bad} out of range for a table of {n} rows"
                )));
            }
            let mut out = Vec::with_capacity(idx.len() * c);
            for &i in idx {
                out.extend_from_slice(t.row(i));
            }
            Tensor::new(vec![idx.len(), c], out).unwrap()
        };
        let idx = idx.to_vec();
        Ok(self.custom(
            &[table],
            value,
            Box::new(move |g, p, _| {
                let (_, c) = p[0].dims2();
                let mut gt = Tensor::zeros(p[0].shape());
                for (l, &i) in idx.iter().enumerate() {
                    let src = &g.data()[l * c..(l + 1) * c];
                    for (acc, v) in gt.data_mut()[i * c..(i + 1) * c].iter_mut().zip(src) {
                        *acc += v;
                    }
                }
                vec![Some(gt)]
            }),
        ))
    }

    /// Horizontal concatenation of two matrices with equal row counts.
    pub fn concat_cols(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let av = self.value(a);
            let bv = self.value(b);
            let (ra, ca) = av.dims2();
            let (rb, cb) = bv.dims2();
            if ra != rb || av.rank() != 2 || bv.rank() != 2 {
                return Err(Error::shape("concat_cols", av.shape(), bv.shape()));
            }
            let mut out = Vec::with_capacity(ra * (ca + cb));
            for i in 0..ra {
                out.extend_from_slice(av.row(i));
                out.extend_from_slice(bv.row(i));
            }
            Tensor::new(vec![ra, ca + cb], out).unwrap()
        };
        Ok(self.custom(
            &[a, b],
            value,
            Box::new(|g, p, _| {
                let (r, ca) = p[0].dims2();
                let (_, cb) = p[1].dims2();
                let mut ga = Vec::with_capacity(r * ca);
                let mut gb = Vec::with_capacity(r * cb);
                for i in 0..r {
                    let row = g.row(i);
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                vec![
                    Some(Tensor::new(p[0].shape().to_vec(), ga).unwrap()),
                    Some(Tensor::new(p[1].shape().to_vec(), gb).unwrap()),
                ]
            }),
        ))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        Ok(self.custom(
            &[a],
            value,
            Box::new(|g, p, _| vec![Some(g.reshape(p[0].shape()).unwrap())]),
        ))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.custom(
            &[a],
            value,
            Box::new(|g, p, _| vec![Some(Tensor::full(p[0].shape(), g.item()))]),
        )
    }

    /// Sum of a list of scalars in the given order.
    pub fn sum_scalars(&self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Contract("sum of an empty list".into()));
        }
        let mut total = 0.0;
        for &x in xs {
            let v = self.value(x);
            if v.len() != 1 {
                return Err(Error::shape("sum_scalars", v.shape(), &[1]));
            }
            total += v.item();
        }
        let n = xs.len();
        Ok(self.custom(
            xs,
            Tensor::scalar(total),
            Box::new(move |g, _, _| vec![Some(g.clone()); n]),
        ))
    }

    // ---- elementwise binary ops (equal shapes or scalar broadcast) -------

    fn binary(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: fn(f64, f64) -> f64,
        // partial derivatives (da, db) at (x, y)
        df: fn(f64, f64) -> (f64, f64),
    ) -> Result<Var> {
        let value = {
            let av = self.value(a);
            let bv = self.value(b);
            if av.shape() == bv.shape() {
                av.zip_map(&bv, f)
            } else if bv.len() == 1 {
                let y = bv.item();
                av.map(|x| f(x, y))
            } else if av.len() == 1 {
                let x = av.item();
                bv.map(|y| f(x, y))
            } else {
                return Err(Error::shape(op, av.shape(), bv.shape()));
            }
        };
        Ok(self.custom(
            &[a, b],
            value,
            Box::new(move |g, p, _| {
                let (av, bv) = (p[0], p[1]);
                let n = g.len();
                let at = |i: usize| if av.len() == 1 { av.data()[0] } else { av.data()[i] };
                let bt = |i: usize| if bv.len() == 1 { bv.data()[0] } else { bv.data()[i] };
                let mut ga = vec![0.0; av.len()];
                let mut gb = vec![0.0; bv.len()];
                for i in 0..n {
                    let (da, db) = df(at(i), bt(i));
                    let gi = g.data()[i];
                    ga[if av.len() == 1 { 0 } else { i }] += gi * da;
                    gb[if bv.len() == 1 { 0 } else { i }] += gi * db;
                }
                vec![
                    Some(Tensor::new(av.shape().to_vec(), ga).unwrap()),
                    Some(Tensor::new(bv.shape().to_vec(), gb).unwrap()),
                ]
            }),
        ))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, |_, _| (1.0, 1.0))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, |_, _| (1.0, -1.0))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, |x, y| (y, x))
    }

    // ---- elementwise unary ops -------------------------------------------

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Var {
        let value = self.value(a).map(f);
        self.custom(
            &[a],
            value,
            Box::new(move |g, p, out| {
                let x = p[0].data();
                let y = out.data();
                let data = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, gi)| gi * df(x[i], y[i]))
                    .collect();
                vec![Some(Tensor::new(g.shape().to_vec(), data).unwrap())]
            }),
        )
    }

    fn record_signs(&self, a: Var, at: f64) {
        let mut h = 0u64;
        for (i, &x) in self.value(a).data().iter().enumerate() {
            if x >= at {
                h = h.wrapping_mul(31).wrapping_add(i as u64 + 1);
            }
        }
        self.record_branch(h);
    }

    pub fn neg(&self, a: Var) -> Var {
        self.unary(a, |x| -x, |_, _| -1.0)
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let value = self.value(a).scaled(c);
        self.custom(&[a], value, Box::new(move |g, _, _| vec![Some(g.scaled(c))]))
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        self.unary(a, move |x| x + c, |_, _| 1.0)
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, |x| x * x, |x, _| 2.0 * x)
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, f64::exp, |_, y| y)
    }

    pub fn sqrt(&self, a: Var) -> Var {
        self.unary(a, f64::sqrt, |_, y| 0.5 / y)
    }

    /// ELU with α = 1. The derivative at 0 is taken as 1, its right limit.
    pub fn elu(&self, a: Var) -> Var {
        self.record_signs(a, 0.0);
        self.unary(a, elu, |x, y| if x >= 0.0 { 1.0 } else { y + 1.0 })
    }

    /// `ELU(a) + 1`, evaluated as `exp(a)` on the negative side so that it
    /// stays strictly positive where the sum would round to zero.
    pub fn elu_plus_one(&self, a: Var) -> Var {
        self.record_signs(a, 0.0);
        self.unary(a, elu_plus_one, |x, y| if x >= 0.0 { 1.0 } else { y })
    }

    /// Absolute value with subgradient 0 at 0.
    pub fn abs(&self, a: Var) -> Var {
        self.record_signs(a, 0.0);
        self.unary(a, f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// `max(a, floor)` elementwise; gradient flows only where `a > floor`.
    pub fn clamp_min(&self, a: Var, floor: f64) -> Var {
        self.record_signs(a, floor);
        self.unary(a, move |x| x.max(floor), move |x, _| if x > floor { 1.0 } else { 0.0 })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub fn elu_plus_one(x: f64) -> f64 {
    if x >= 0.0 {
        x + 1.0
    } else {
        x.exp()
    }
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// `max |analytic − numeric| / max(1, |analytic|)` over checked coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±eps perturbation changed the branch signature.
    pub skipped: usize,
    /// (input index, flat coordinate) of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many coordinates per input, spread evenly.
    pub max_coords_per_input: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            max_coords_per_input: None,
        }
    }
}

/// Compares the tape gradient of a scalar function against central
/// differences at `point`.
///
/// `f` receives a tape and one leaf per input tensor and must return a scalar.
pub fn grad_check<F>(f: F, point: &[Tensor], eps: f64) -> Result<GradCheck>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    grad_check_with(
        f,
        point,
        &GradCheckOptions {
            eps,
            ..Default::default()
        },
    )
}

pub fn grad_check_with<F>(f: F, point: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheck>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let eps = opts.eps;
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::Parameter(format!("eps must lie in (0, 1e-2], got {eps}")));
    }
    let tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar-valued function, got shape {:?}",
            tape.shape(out)
        )));
    }
    let base_sig = tape.branch_signature();
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(point)
        .map(|(&v, t)| grads.wrt(v, t))
        .collect();
    drop(grads);
    drop(tape);

    let eval = |inputs: &[Tensor]| -> Result<(f64, u64)> {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let y = tape.value(out).item();
        Ok((y, tape.branch_signature()))
    };

    let mut report = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
    };
    let mut work: Vec<Tensor> = point.to_vec();
    for (input, a) in analytic.iter().enumerate() {
        let n = a.len();
        let stride = match opts.max_coords_per_input {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for j in (0..n).step_by(stride) {
            let x0 = point[input].data()[j];
            work[input].data_mut()[j] = x0 + eps;
            let (fp, sp) = eval(&work)?;
            work[input].data_mut()[j] = x0 - eps;
            let (fm, sm) = eval(&work)?;
            work[input].data_mut()[j] = x0;
            if sp != base_sig || sm != base_sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * eps);
            let g = a.data()[j];
            let rel = (g - numeric).abs() / g.abs().max(1.0);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((input, j));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
    }

    #[test]
    fn elu_and_sigmoid_boundaries() {
        assert_eq!(elu(0.0), 0.0);
        assert_eq!(elu(0.0) + 1.0, 1.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn tanh_gradient_matches_central_difference() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(0.3));
        let y = tape.tanh(x);
        let g = tape.backward(y).unwrap();
        let h = 1e-5;
        let fd = ((0.3f64 + h).tanh() - (0.3f64 - h).tanh()) / (2.0 * h);
        assert!((g.get(x).unwrap().item() - fd).abs() < 1e-6);
    }

    #[test]
    fn sum_of_squares_is_exact() {
        let r = grad_check(
            |t, v| Ok(t.sum(t.square(v[0]))),
            &[Tensor::vector(vec![1.0, 2.0])],
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let s = tape.sum(tape.square(x));
        assert_eq!(tape.backward(s).unwrap().get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let r = grad_check(
            |t, v| {
                let z = t.scale(v[0], 0.0);
                Ok(t.add_scalar(t.sum(z), 3.0))
            },
            &[Tensor::vector(vec![0.5, -0.5, 2.0])],
            1e-5,
        )
        .unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn grad_check_rejects_vector_output_and_bad_eps() {
        let p = [Tensor::vector(vec![1.0, 2.0])];
        let err = grad_check(|t, v| Ok(t.tanh(v[0])), &p, 1e-5).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        assert!(matches!(
            grad_check(|t, v| Ok(t.sum(v[0])), &p, 0.5),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn matmul_gradient_at_random_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Tensor::identity(2);
        let b = random(&[2, 3], &mut rng);
        let w = random(&[2, 3], &mut rng);
        let r = grad_check(
            move |t, v| {
                let p = t.matmul(v[0], v[1])?;
                let wv = t.constant(w.clone());
                Ok(t.sum(t.mul(p, wv)?))
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    type Prim = fn(&Tape, Var) -> Var;

    #[test]
    fn every_primitive_passes_grad_check_at_ten_points() {
        let prims: Vec<(&str, Prim)> = vec![
            ("tanh", |t, x| t.tanh(x)),
            ("sigmoid", |t, x| t.sigmoid(x)),
            ("elu", |t, x| t.elu(x)),
            ("elu_plus_one", |t, x| t.elu_plus_one(x)),
            ("abs", |t, x| t.abs(x)),
            ("neg", |t, x| t.neg(x)),
            ("exp", |t, x| t.exp(x)),
            ("square", |t, x| t.square(x)),
            ("sqrt", |t, x| {
                let y = t.square(x);
                t.sqrt(t.add_scalar(y, 0.5))
            }),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (name, op) in prims {
            for _ in 0..10 {
                let x = random(&[5], &mut rng);
                let w = random(&[5], &mut rng);
                let r = grad_check(
                    |t, v| {
                        let y = op(t, v[0]);
                        let wv = t.constant(w.clone());
                        Ok(t.sum(t.mul(y, wv)?))
                    },
                    &[x],
                    1e-5,
                )
                .unwrap();
                assert!(r.max_rel_error < 1e-5, "{name}: {r:?}");
            }
        }
        for _ in 0..10 {
            let a = random(&[3, 4], &mut rng);
            let b = random(&[3, 4], &mut rng);
            let s = random(&[1], &mut rng);
            let r = grad_check(
                |t, v| {
                    let p = t.mul(v[0], v[1])?;
                    let q = t.add(p, v[2])?;
                    let q = t.sub(q, v[0])?;
                    let m = t.matmul(q, t.constant(Tensor::full(&[4, 2], 0.7)))?;
                    let m = t.add_row(m, t.reshape(t.concat_cols(v[2], v[2])?, &[2])?)?;
                    Ok(t.sum(t.tanh(m)))
                },
                &[a, b, s.reshape(&[1, 1]).unwrap()],
                1e-5,
            );
            // concat of 1×1 blocks gives a 1×2 row
            let r = r.unwrap();
            assert!(r.max_rel_error < 1e-5, "{r:?}");
        }
    }

    #[test]
    fn gradients_accumulate_over_reuse() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.5, -2.0]));
        let a = tape.sum(tape.square(x));
        let b = tape.sum(tape.tanh(x));
        let both = tape.add(a, b).unwrap();
        let g = tape.backward(both).unwrap().get(x).unwrap().clone();

        let ga = {
            let t = Tape::new();
            let x = t.param(Tensor::vector(vec![1.5, -2.0]));
            let a = t.sum(t.square(x));
            t.backward(a).unwrap().get(x).unwrap().clone()
        };
        let gb = {
            let t = Tape::new();
            let x = t.param(Tensor::vector(vec![1.5, -2.0]));
            let b = t.sum(t.tanh(x));
            t.backward(b).unwrap().get(x).unwrap().clone()
        };
        let mut sum = ga.clone();
        sum.add_assign(&gb);
        assert!(g.max_abs_diff(&sum) < 1e-15);
    }

    #[test]
    fn gather_rows_scatters_counts() {
        let tape = Tape::new();
        let table = tape.param(Tensor::zeros(&[4, 2]));
        let rows = tape.gather_rows(table, &[1, 3, 1]).unwrap();
        let s = tape.sum(rows);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(table).unwrap().data(), &[0., 0., 2., 2., 0., 0., 1., 1.]);
        assert!(tape.gather_rows(table, &[4]).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let t = Tape::new();
            let x = t.param(Tensor::vector((0..50).map(|i| (i as f64).sin()).collect()));
            let y = t.sum(t.exp(t.tanh(x)));
            let v = t.value(y).item();
            v
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn broadcast_other_than_scalar_is_rejected() {
        let t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[3]));
        assert!(matches!(t.add(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn kink_crossing_coordinates_are_skipped() {
        // |x| at x = 1e-7 sits within eps of the kink.
        let r = grad_check(|t, v| Ok(t.sum(t.abs(v[0]))), &[Tensor::vector(vec![1e-7, 0.5])], 1e-5)
            .unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(r.checked, 1);
        assert!(r.max_rel_error < 1e-9);
    }
}
