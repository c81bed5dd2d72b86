//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every differentiable primitive appends a node holding its output value and
//! whatever it needs for the backward pass. [`Tape::backward`] walks the nodes
//! in reverse and accumulates one gradient contribution per use of each input.

use std::cell::RefCell;
use std::fmt;

use super::tensor::split_axis;
use super::{Element, NumericsError, Rng, Tensor};

const GELU_COEF: f64 = 0.044_715;

fn gelu_scale() -> f64 {
    (2.0 / std::f64::consts::PI).sqrt()
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, T),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Narrow {
        input: usize,
        axis: usize,
        start: usize,
    },
    Gather {
        input: usize,
        axis: usize,
        indices: Vec<usize>,
    },
    Scatter {
        input: usize,
        axis: usize,
        indices: Vec<usize>,
    },
    Sum(usize),
    Mean(usize),
    SumAxis {
        input: usize,
        axis: usize,
    },
    Softmax {
        input: usize,
        axis: usize,
    },
    LayerNorm {
        input: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(usize),
    Dropout {
        input: usize,
        mask: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Ordered record of executed differentiable operations.
pub struct Tape<T: Element> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.borrow().len())
            .finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Element> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Element> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients produced by [`Tape::backward`], indexed by tape position.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the loss with respect to `var`, if it was reachable.
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Like [`get`](Self::get) but yields zeros for unreachable variables.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&var.shape()))
    }
}

fn shape_err(msg: String) -> NumericsError {
    NumericsError::Shape(msg)
}

/// Validates that `rhs` broadcasts over the leading axes of `lhs`.
fn check_broadcast(op: &str, lhs: &[usize], rhs: &[usize]) -> Result<(), NumericsError> {
    let rhs_numel: usize = rhs.iter().product();
    if lhs == rhs || rhs_numel == 1 {
        return Ok(());
    }
    // Trailing size-1 axes on either side are ignored by the suffix match.
    let trim = |s: &[usize]| -> Vec<usize> {
        let first = s.iter().position(|&d| d != 1).unwrap_or(s.len());
        s[first..].to_vec()
    };
    let r = trim(rhs);
    if r.len() <= lhs.len() && lhs[lhs.len() - r.len()..] == r[..] {
        Ok(())
    } else {
        Err(shape_err(format!(
            "{op}: shape {rhs:?} does not broadcast onto {lhs:?}"
        )))
    }
}

/// Sums a broadcast-expanded gradient back onto the rhs extent.
fn reduce_cyclic<T: Element>(g: &[T], rhs_numel: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rhs_numel];
    for chunk in g.chunks(rhs_numel) {
        for (o, &v) in out.iter_mut().zip(chunk) {
            *o = *o + v;
        }
    }
    out
}

fn accumulate<T: Element>(slot: &mut Option<Vec<T>>, contribution: Vec<T>) {
    match slot {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contribution) {
                *e = *e + c;
            }
        }
        None => *slot = Some(contribution),
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records a trainable leaf whose gradient will be materialized.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// Records a constant leaf (no gradient).
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    fn value(&self, id: usize) -> Tensor<T> {
        self.nodes.borrow()[id].value.clone()
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    /// Computes gradients of the scalar `loss` for every `param` leaf it reaches.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>, NumericsError> {
        let nodes = self.nodes.borrow();
        let loss_node = nodes
            .get(loss.id)
            .filter(|_| std::ptr::eq(loss.tape, self))
            .ok_or_else(|| NumericsError::Contract("loss is not on this tape".into()))?;
        if loss_node.value.numel() != 1 {
            return Err(NumericsError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::one()]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.backprop_node(&nodes, node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }

        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, node)| match (g, &node.op) {
                (Some(g), Op::Leaf) if node.needs_grad => {
                    Some(Tensor::new(node.value.shape(), g).expect("gradient matches value shape"))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop_node(
        &self,
        nodes: &[Node<T>],
        node: &Node<T>,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let val = |id: usize| nodes[id].value.data();
        let wants = |id: usize| nodes[id].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let negate = matches!(node.op, Op::Sub(..));
                if wants(*a) {
                    accumulate(&mut grads[*a], g.to_vec());
                }
                if wants(*b) {
                    let mut gb = reduce_cyclic(g, nodes[*b].value.numel());
                    if negate {
                        gb.iter_mut().for_each(|v| *v = -*v);
                    }
                    accumulate(&mut grads[*b], gb);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let nb = bv.len();
                if wants(*a) {
                    let ga = g.iter().enumerate().map(|(i, &gi)| gi * bv[i % nb]).collect();
                    accumulate(&mut grads[*a], ga);
                }
                if wants(*b) {
                    let prod: Vec<T> = g.iter().zip(av).map(|(&gi, &ai)| gi * ai).collect();
                    accumulate(&mut grads[*b], reduce_cyclic(&prod, nb));
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let nb = bv.len();
                if wants(*a) {
                    let ga = g.iter().enumerate().map(|(i, &gi)| gi / bv[i % nb]).collect();
                    accumulate(&mut grads[*a], ga);
                }
                if wants(*b) {
                    let prod: Vec<T> = g
                        .iter()
                        .enumerate()
                        .map(|(i, &gi)| {
                            let bi = bv[i % nb];
                            -gi * av[i] / (bi * bi)
                        })
                        .collect();
                    accumulate(&mut grads[*b], reduce_cyclic(&prod, nb));
                }
            }
            Op::Scale(a, s) => {
                if wants(*a) {
                    accumulate(&mut grads[*a], g.iter().map(|&v| v * *s).collect());
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = nodes[*a].value.dims2().expect("matmul lhs is 2-D");
                let n = nodes[*b].value.shape()[1];
                if wants(*a) {
                    // dA = G · Bᵀ
                    let mut ga = vec![T::zero(); m * k];
                    T::gemm(m, n, k, g, (n as isize, 1), val(*b), (1, n as isize), &mut ga, false);
                    accumulate(&mut grads[*a], ga);
                }
                if wants(*b) {
                    // dB = Aᵀ · G
                    let mut gb = vec![T::zero(); k * n];
                    T::gemm(k, m, n, val(*a), (1, k as isize), g, (n as isize, 1), &mut gb, false);
                    accumulate(&mut grads[*b], gb);
                }
            }
            Op::Transpose(a) => {
                if wants(*a) {
                    accumulate(&mut grads[*a], transpose_last2(g, node.value.shape()));
                }
            }
            Op::Reshape(a) => {
                if wants(*a) {
                    accumulate(&mut grads[*a], g.to_vec());
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &input in inputs {
                    let len = nodes[input].value.shape()[*axis];
                    if wants(input) {
                        let mut gi = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            gi.extend_from_slice(&g[base..base + len * inner]);
                        }
                        accumulate(&mut grads[input], gi);
                    }
                    offset += len;
                }
            }
            Op::Narrow { input, axis, start } => {
                if wants(*input) {
                    let (outer, full, inner) = split_axis(nodes[*input].value.shape(), *axis);
                    let len = node.value.shape()[*axis];
                    let mut gi = vec![T::zero(); outer * full * inner];
                    for o in 0..outer {
                        let src = o * len * inner;
                        let dst = (o * full + start) * inner;
                        gi[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                    }
                    accumulate(&mut grads[*input], gi);
                }
            }
            Op::Gather {
                input,
                axis,
                indices,
            } => {
                if wants(*input) {
                    let (outer, full, inner) = split_axis(nodes[*input].value.shape(), *axis);
                    let picked = indices.len();
                    let mut gi = vec![T::zero(); outer * full * inner];
                    for o in 0..outer {
                        for (j, &idx) in indices.iter().enumerate() {
                            let src = (o * picked + j) * inner;
                            let dst = (o * full + idx) * inner;
                            for t in 0..inner {
                                gi[dst + t] = gi[dst + t] + g[src + t];
                            }
                        }
                    }
                    accumulate(&mut grads[*input], gi);
                }
            }
            Op::Scatter {
                input,
                axis,
                indices,
            } => {
                if wants(*input) {
                    let (outer, full, inner) = split_axis(node.value.shape(), *axis);
                    let picked = indices.len();
                    let mut gi = Vec::with_capacity(outer * picked * inner);
                    for o in 0..outer {
                        for &idx in indices {
                            let src = (o * full + idx) * inner;
                            gi.extend_from_slice(&g[src..src + inner]);
                        }
                    }
                    accumulate(&mut grads[*input], gi);
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    accumulate(&mut grads[*a], vec![g[0]; nodes[*a].value.numel()]);
                }
            }
            Op::Mean(a) => {
                if wants(*a) {
                    let n = nodes[*a].value.numel();
                    let v = g[0] / T::from_usize(n).expect("count fits");
                    accumulate(&mut grads[*a], vec![v; n]);
                }
            }
            Op::SumAxis { input, axis } => {
                if wants(*input) {
                    let (outer, len, inner) = split_axis(nodes[*input].value.shape(), *axis);
                    let mut gi = vec![T::zero(); outer * len * inner];
                    for o in 0..outer {
                        for l in 0..len {
                            for t in 0..inner {
                                gi[(o * len + l) * inner + t] = g[o * inner + t];
                            }
                        }
                    }
                    accumulate(&mut grads[*input], gi);
                }
            }
            Op::Softmax { input, axis } => {
                if wants(*input) {
                    let y = node.value.data();
                    let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                    let mut gi = vec![T::zero(); y.len()];
                    for o in 0..outer {
                        for t in 0..inner {
                            let at = |l: usize| (o * len + l) * inner + t;
                            let dot: T = (0..len).map(|l| g[at(l)] * y[at(l)]).sum();
                            for l in 0..len {
                                gi[at(l)] = y[at(l)] * (g[at(l)] - dot);
                            }
                        }
                    }
                    accumulate(&mut grads[*input], gi);
                }
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = *node.value.shape().last().expect("layer_norm rank >= 1");
                let rows = xhat.len() / d;
                let gam = val(*gamma);
                if wants(*gamma) || wants(*beta) {
                    let mut gg = vec![T::zero(); d];
                    let mut gb = vec![T::zero(); d];
                    for r in 0..rows {
                        for c in 0..d {
                            let i = r * d + c;
                            gg[c] = gg[c] + g[i] * xhat[i];
                            gb[c] = gb[c] + g[i];
                        }
                    }
                    if wants(*gamma) {
                        accumulate(&mut grads[*gamma], gg);
                    }
                    if wants(*beta) {
                        accumulate(&mut grads[*beta], gb);
                    }
                }
                if wants(*input) {
                    let dn = T::from_usize(d).expect("extent fits");
                    let mut gi = vec![T::zero(); xhat.len()];
                    for r in 0..rows {
                        let row = r * d..(r + 1) * d;
                        let mut mean_dy = T::zero();
                        let mut mean_dy_xhat = T::zero();
                        for c in 0..d {
                            let dy = g[row.start + c] * gam[c];
                            mean_dy = mean_dy + dy;
                            mean_dy_xhat = mean_dy_xhat + dy * xhat[row.start + c];
                        }
                        mean_dy = mean_dy / dn;
                        mean_dy_xhat = mean_dy_xhat / dn;
                        for c in 0..d {
                            let i = row.start + c;
                            let dy = g[i] * gam[c];
                            gi[i] = rstd[r] * (dy - mean_dy - xhat[i] * mean_dy_xhat);
                        }
                    }
                    accumulate(&mut grads[*input], gi);
                }
            }
            Op::Gelu(a) => {
                if wants(*a) {
                    let s = gelu_scale();
                    let gi = val(*a)
                        .iter()
                        .zip(g)
                        .map(|(&x, &gx)| {
                            let x = x.as_f64();
                            let u = s * (x + GELU_COEF * x * x * x);
                            let t = u.tanh();
                            let du = s * (1.0 + 3.0 * GELU_COEF * x * x);
                            let d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                            gx * T::from_f64_lossy(d)
                        })
                        .collect();
                    accumulate(&mut grads[*a], gi);
                }
            }
            Op::Dropout { input, mask } => {
                if wants(*input) {
                    accumulate(&mut grads[*input], g.iter().zip(mask).map(|(&a, &m)| a * m).collect());
                }
            }
        }
    }
}

fn transpose_last2<T: Element>(data: &[T], shape: &[usize]) -> Vec<T> {
    let n = shape.len();
    let (r, c) = (shape[n - 2], shape[n - 1]);
    let batch = data.len() / (r * c).max(1);
    let mut out = vec![T::zero(); data.len()];
    for b in 0..batch {
        let base = b * r * c;
        for i in 0..r {
            for j in 0..c {
                out[base + j * r + i] = data[base + i * c + j];
            }
        }
    }
    out
}

impl<'t, T: Element> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.needs(self.id)
    }

    fn same_tape(&self, other: &Var<'t, T>) -> Result<(), NumericsError> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(NumericsError::Contract("operands live on different tapes".into()))
        }
    }

    fn unary(&self, value: Tensor<T>, op: Op<T>) -> Var<'t, T> {
        let needs = self.requires_grad();
        self.tape.push(value, op, needs)
    }

    fn binary(
        &self,
        other: &Var<'t, T>,
        name: &str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var<'t, T>, NumericsError> {
        self.same_tape(other)?;
        let (a, b) = (self.value(), other.value());
        check_broadcast(name, a.shape(), b.shape())?;
        let nb = b.numel();
        let bd = b.data();
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[i % nb]))
            .collect();
        let out = Tensor::new(a.shape(), data)?;
        let needs = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(out, op, needs))
    }

    /// Elementwise sum; `other` may broadcast over leading axes.
    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
        self.binary(other, "add", |x, y| x + y, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
        self.binary(other, "sub", |x, y| x - y, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
        self.binary(other, "mul", |x, y| x * y, Op::Mul(self.id, other.id))
    }

    pub fn div(&self, other: &Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
        self.binary(other, "div", |x, y| x / y, Op::Div(self.id, other.id))
    }

    pub fn scale(&self, s: T) -> Var<'t, T> {
        let v = self.value().map(|x| x * s);
        self.unary(v, Op::Scale(self.id, s))
    }

    /// `[m×k] · [k×n] → [m×n]`.
    pub fn matmul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
        self.same_tape(other)?;
        let (a, b) = (self.value(), other.value());
        let (m, k) = a.dims2()?;
        let (k2, n) = b.dims2()?;
        if k != k2 {
            return Err(shape_err(format!(
                "matmul: inner extents differ ({:?} × {:?})",
                a.shape(),
                b.shape()
            )));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, a.data(), (k as isize, 1), b.data(), (n as isize, 1), &mut out, false);
        let needs = self.requires_grad() || other.requires_grad();
        Ok(self
            .tape
            .push(Tensor::new(&[m, n], out)?, Op::MatMul(self.id, other.id), needs))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Var<'t, T>, NumericsError> {
        let a = self.value();
        let n = a.ndim();
        if n < 2 {
            return Err(shape_err(format!("transpose needs rank ≥ 2, got {:?}", a.shape())));
        }
        let mut shape = a.shape().to_vec();
        shape.swap(n - 2, n - 1);
        let data = transpose_last2(a.data(), a.shape());
        Ok(self.unary(Tensor::new(&shape, data)?, Op::Transpose(self.id)))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>, NumericsError> {
        let v = self.value().reshaped(shape)?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>, NumericsError> {
        let first = parts
            .first()
            .ok_or_else(|| NumericsError::Contract("concat of zero tensors".into()))?;
        let values: Vec<Tensor<T>> = parts.iter().map(Var::value).collect();
        let base = values[0].shape();
        if axis >= base.len() {
            return Err(shape_err(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for (p, v) in parts.iter().zip(&values) {
            first.same_tape(p)?;
            let s = v.shape();
            if s.len() != base.len()
                || s.iter()
                    .zip(base)
                    .enumerate()
                    .any(|(i, (x, y))| i != axis && x != y)
            {
                return Err(shape_err(format!("concat: {s:?} incompatible with {base:?}")));
            }
            total += s[axis];
        }
        let mut shape = base.to_vec();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &values {
                let len = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * len..(o + 1) * len]);
            }
        }
        let needs = parts.iter().any(Var::requires_grad);
        Ok(first.tape.push(
            Tensor::new(&shape, data)?,
            Op::Concat {
                inputs: parts.iter().map(|p| p.id).collect(),
                axis,
            },
            needs,
        ))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>, NumericsError> {
        let a = self.value();
        if axis >= a.ndim() || start + len > a.shape()[axis] {
            return Err(shape_err(format!(
                "narrow({axis}, {start}, {len}) out of range for {:?}",
                a.shape()
            )));
        }
        let (outer, full, inner) = split_axis(a.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&a.data()[base..base + len * inner]);
        }
        let mut shape = a.shape().to_vec();
        shape[axis] = len;
        Ok(self.unary(
            Tensor::new(&shape, data)?,
            Op::Narrow {
                input: self.id,
                axis,
                start,
            },
        ))
    }

    /// Selects slices along `axis`; indices may repeat.
    pub fn gather(&self, axis: usize, indices: &[usize]) -> Result<Var<'t, T>, NumericsError> {
        let a = self.value();
        if axis >= a.ndim() {
            return Err(shape_err(format!("gather axis {axis} out of range for {:?}", a.shape())));
        }
        let (outer, full, inner) = split_axis(a.shape(), axis);
        if let Some(&bad) = indices.iter().find(|&&i| i >= full) {
            return Err(NumericsError::Contract(format!(
                "gather index {bad} out of range for extent {full}"
            )));
        }
        let mut data = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &idx in indices {
                let base = (o * full + idx) * inner;
                data.extend_from_slice(&a.data()[base..base + inner]);
            }
        }
        let mut shape = a.shape().to_vec();
        shape[axis] = indices.len();
        Ok(self.unary(
            Tensor::new(&shape, data)?,
            Op::Gather {
                input: self.id,
                axis,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Places slice `j` of `self` at position `indices[j]` of a zero tensor
    /// whose `axis` extent is `size`. Indices must be distinct.
    pub fn scatter(&self, axis: usize, indices: &[usize], size: usize) -> Result<Var<'t, T>, NumericsError> {
        let a = self.value();
        if axis >= a.ndim() || a.shape()[axis] != indices.len() {
            return Err(shape_err(format!(
                "scatter: {} indices for shape {:?} along axis {axis}",
                indices.len(),
                a.shape()
            )));
        }
        let mut seen = vec![false; size];
        for &i in indices {
            if i >= size || std::mem::replace(&mut seen[i], true) {
                return Err(NumericsError::Contract(format!(
                    "scatter index {i} repeated or out of range for extent {size}"
                )));
            }
        }
        let mut shape = a.shape().to_vec();
        shape[axis] = size;
        let (outer, _, inner) = split_axis(&shape, axis);
        let picked = indices.len();
        let mut data = vec![T::zero(); outer * size * inner];
        for o in 0..outer {
            for (j, &idx) in indices.iter().enumerate() {
                let src = (o * picked + j) * inner;
                let dst = (o * size + idx) * inner;
                data[dst..dst + inner].copy_from_slice(&a.data()[src..src + inner]);
            }
        }
        Ok(self.unary(
            Tensor::new(&shape, data)?,
            Op::Scatter {
                input: self.id,
                axis,
                indices: indices.to_vec(),
            },
        ))
    }

    pub fn sum(&self) -> Var<'t, T> {
        let s = self.value().sum();
        self.unary(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t, T> {
        let v = self.value();
        let n = T::from_usize(v.numel().max(1)).expect("count fits");
        self.unary(Tensor::scalar(v.sum() / n), Op::Mean(self.id))
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t, T>, NumericsError> {
        let a = self.value();
        if axis >= a.ndim() {
            return Err(shape_err(format!("sum_axis {axis} out of range for {:?}", a.shape())));
        }
        let (outer, len, inner) = split_axis(a.shape(), axis);
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for t in 0..inner {
                    data[o * inner + t] = data[o * inner + t] + a.data()[(o * len + l) * inner + t];
                }
            }
        }
        let mut shape = a.shape().to_vec();
        shape.remove(axis);
        Ok(self.unary(Tensor::new(&shape, data)?, Op::SumAxis { input: self.id, axis }))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Var<'t, T>, NumericsError> {
        let a = self.value();
        if axis >= a.ndim() {
            return Err(shape_err(format!("softmax axis {axis} out of range for {:?}", a.shape())));
        }
        if !a.is_finite() {
            return Err(NumericsError::NonFinite("softmax input".into()));
        }
        let (outer, len, inner) = split_axis(a.shape(), axis);
        let x = a.data();
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for t in 0..inner {
                let at = |l: usize| (o * len + l) * inner + t;
                let max = (0..len).map(|l| x[at(l)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for l in 0..len {
                    let e = (x[at(l)] - max).exp();
                    y[at(l)] = e;
                    total = total + e;
                }
                for l in 0..len {
                    y[at(l)] = y[at(l)] / total;
                }
            }
        }
        Ok(self.unary(Tensor::new(a.shape(), y)?, Op::Softmax { input: self.id, axis }))
    }

    /// Normalizes over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&self, gamma: &Var<'t, T>, beta: &Var<'t, T>, eps: f64) -> Result<Var<'t, T>, NumericsError> {
        self.same_tape(gamma)?;
        self.same_tape(beta)?;
        let a = self.value();
        let d = *a
            .shape()
            .last()
            .ok_or_else(|| shape_err("layer_norm on a scalar".into()))?;
        if d == 0 || gamma.shape() != [d] || beta.shape() != [d] {
            return Err(shape_err(format!(
                "layer_norm: gamma {:?} / beta {:?} vs feature extent {d}",
                gamma.shape(),
                beta.shape()
            )));
        }
        let (gv, bv) = (gamma.value(), beta.value());
        let rows = a.numel() / d;
        let dn = T::from_usize(d).expect("extent fits");
        let eps = T::from_f64_lossy(eps);
        let mut xhat = vec![T::zero(); a.numel()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); a.numel()];
        for r in 0..rows {
            let row = &a.data()[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..d {
                let xh = (row[c] - mean) * rs;
                xhat[r * d + c] = xh;
                out[r * d + c] = xh * gv.data()[c] + bv.data()[c];
            }
        }
        let needs = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        Ok(self.tape.push(
            Tensor::new(a.shape(), out)?,
            Op::LayerNorm {
                input: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                rstd,
            },
            needs,
        ))
    }

    /// Tanh-approximation GELU.
    pub fn gelu(&self) -> Var<'t, T> {
        let v = self.value().map(|x| T::from_f64_lossy(gelu_scalar(x.as_f64())));
        self.unary(v, Op::Gelu(self.id))
    }

    /// Inverted dropout: zeroes each element with probability `p` in training
    /// mode and rescales survivors by `1/(1-p)`; identity otherwise.
    pub fn dropout(&self, p: f64, training: bool, rng: &mut Rng) -> Result<Var<'t, T>, NumericsError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumericsError::Param(format!("dropout probability {p} not in [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(*self);
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let a = self.value();
        let mask: Vec<T> = (0..a.numel())
            .map(|_| if rng.uniform() < p { T::zero() } else { keep })
            .collect();
        let out = a.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        Ok(self.unary(Tensor::new(a.shape(), out)?, Op::Dropout { input: self.id, mask }))
    }
}

/// Scalar tanh-approximation GELU.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (gelu_scale() * (x + GELU_COEF * x * x * x)).tanh())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let tape = Tape::<f64>::new();
        let b = tape.constant(t(&[3, 2], &[1., 2., 3., 4., 5., 6.]));
        let i = tape.constant(Tensor::eye(3));
        assert_eq!(i.matmul(&b).unwrap().value(), b.value());

        let a = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let ones = tape.constant(t(&[2, 1], &[1., 1.]));
        assert_eq!(a.matmul(&ones).unwrap().value().data(), &[3., 7.]);
    }

    #[test]
    fn matmul_shape_mismatch_is_an_error() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(a.matmul(&b), Err(NumericsError::Shape(_))));
    }

    #[test]
    fn matmul_grad_is_ones_times_b_transpose() {
        let tape = Tape::<f64>::new();
        let a = tape.param(t(&[2, 3], &[0.5, -1., 2., 1., 0., 3.]));
        let b = tape.constant(t(&[3, 2], &[1., 2., 3., 4., 5., 6.]));
        let loss = a.matmul(&b).unwrap().sum();
        let grads = tape.backward(loss).unwrap();
        // ones(2×2) · Bᵀ: each row is the row-sums of B.
        assert_eq!(grads.get(a).unwrap().data(), &[3., 7., 11., 3., 7., 11.]);
    }

    #[test]
    fn softmax_cases() {
        let tape = Tape::<f64>::new();
        let s = tape.constant(t(&[2], &[0., 0.])).softmax(0).unwrap().value();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = tape
            .constant(t(&[2], &[1f64.ln(), 3f64.ln()]))
            .softmax(0)
            .unwrap()
            .value();
        assert!((s.data()[0] - 0.25).abs() < 1e-15 && (s.data()[1] - 0.75).abs() < 1e-15);
        let s = tape.constant(t(&[2], &[1000., 0.])).softmax(0).unwrap().value();
        assert!(s.is_finite());
        assert!((s.data()[0] - 1.0).abs() < 1e-12 && s.data()[1] < 1e-300);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2], &[f64::NAN, 0.]));
        assert!(matches!(x.softmax(0), Err(NumericsError::NonFinite(_))));
    }

    #[test]
    fn softmax_along_leading_axis() {
        let tape = Tape::<f64>::new();
        let y = tape
            .constant(t(&[2, 2], &[0., 1f64.ln(), 0., 3f64.ln()]))
            .softmax(0)
            .unwrap()
            .value();
        assert!((y.at(&[0, 0]) - 0.5).abs() < 1e-15);
        assert!((y.at(&[1, 1]) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_cases() {
        let tape = Tape::<f64>::new();
        let g = tape.constant(Tensor::ones(&[2]));
        let b = tape.constant(Tensor::zeros(&[2]));
        let y = tape
            .constant(t(&[2], &[1., 3.]))
            .layer_norm(&g, &b, 1e-6)
            .unwrap()
            .value();
        assert!((y.data()[0] + 1.0).abs() < 1e-3 && (y.data()[1] - 1.0).abs() < 1e-3);

        let g = tape.constant(Tensor::ones(&[3]));
        let b = tape.constant(Tensor::zeros(&[3]));
        let y = tape
            .constant(t(&[3], &[4., 4., 4.]))
            .layer_norm(&g, &b, 1e-6)
            .unwrap()
            .value();
        assert_eq!(y.data(), &[0., 0., 0.]);
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-9);
        assert!(gelu_scalar(-10.0).abs() < 1e-9);
        let inner = (2.0 / std::f64::consts::PI).sqrt() * (1.0 + 0.044715);
        let expected = 0.5 * (1.0 + inner.tanh());
        assert!((gelu_scalar(1.0) - expected).abs() < 1e-15);
        assert!((gelu_scalar(1.0) - 0.841_191_990_608_276_8).abs() < 1e-12);
    }

    #[test]
    fn dropout_modes() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(&[100]));
        let mut rng = Rng::new(0, 0);
        assert_eq!(x.dropout(0.5, false, &mut rng).unwrap().value(), x.value());
        assert_eq!(x.dropout(0.0, true, &mut rng).unwrap().value(), x.value());
        assert!(matches!(x.dropout(1.0, true, &mut rng), Err(NumericsError::Param(_))));
    }

    #[test]
    fn dropout_zero_fraction_concentrates() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones(&[1_000_000]));
        let mut rng = Rng::new(42, 1);
        let y = x.dropout(0.1, true, &mut rng).unwrap().value();
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / 1e6;
        assert!((zeros - 0.1).abs() <= 0.003, "zero fraction {zeros}");
        let survivor = y.data().iter().find(|&&v| v != 0.0).unwrap();
        assert!((survivor - 1.0 / 0.9).abs() < 1e-6);
    }

    #[test]
    fn backward_simple_identities() {
        let tape = Tape::<f64>::new();
        let x = tape.param(t(&[3], &[1., -2., 0.5]));
        let g = tape.backward(x.sum()).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1., 1., 1.]);

        let tape = Tape::<f64>::new();
        let x = tape.param(t(&[3], &[1., -2., 0.5]));
        let loss = x.mul(&x).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2., -4., 1.]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::ones(&[2]));
        assert!(matches!(tape.backward(x), Err(NumericsError::Contract(_))));
    }

    #[test]
    fn broadcast_rules() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        let row = tape.constant(t(&[3], &[1., 2., 3.]));
        assert_eq!(x.add(&row).unwrap().value().data(), &[1., 2., 3., 1., 2., 3.]);
        let col = tape.constant(Tensor::zeros(&[2]));
        assert!(x.add(&col).is_err());
        let one_row = tape.constant(t(&[1, 3], &[1., 1., 1.]));
        assert!(x.add(&one_row).is_ok());
    }

    #[test]
    fn gather_scatter_roundtrip_on_disjoint_sets() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(&[5, 2], |i| i as f64));
        let idx = [4, 1, 3];
        let picked = x.gather(0, &idx).unwrap();
        let placed = picked.scatter(0, &idx, 5).unwrap();
        let back = placed.gather(0, &idx).unwrap();
        assert_eq!(back.value(), picked.value());
        assert_eq!(placed.value().row(0), &[0., 0.]);
        assert_eq!(placed.value().row(4), &[8., 9.]);
    }

    #[test]
    fn scatter_rejects_duplicates() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(x.scatter(0, &[1, 1], 3).is_err());
        assert!(x.scatter(0, &[0, 3], 3).is_err());
    }

    #[test]
    fn gather_with_repeats_accumulates_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.param(t(&[2, 1], &[1., 2.]));
        let loss = x.gather(0, &[0, 0, 1]).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2., 1.]);
    }

    #[test]
    fn concat_and_narrow_are_inverse() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_fn(&[2, 2], |i| i as f64));
        let b = tape.constant(Tensor::from_fn(&[2, 3], |i| 10.0 + i as f64));
        let c = Var::concat(&[a, b], 1).unwrap();
        assert_eq!(c.shape(), vec![2, 5]);
        assert_eq!(c.narrow(1, 0, 2).unwrap().value(), a.value());
        assert_eq!(c.narrow(1, 2, 3).unwrap().value(), b.value());
    }

    #[test]
    fn transpose_swaps_last_axes() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_fn(&[2, 3], |i| i as f64));
        let at = a.transpose().unwrap().value();
        assert_eq!(at.shape(), &[3, 2]);
        assert_eq!(at.data(), &[0., 3., 1., 4., 2., 5.]);
    }

    #[test]
    fn cross_tape_operands_are_rejected() {
        let t1 = Tape::<f64>::new();
        let t2 = Tape::<f64>::new();
        let a = t1.constant(Tensor::ones(&[2]));
        let b = t2.constant(Tensor::ones(&[2]));
        assert!(matches!(a.add(&b), Err(NumericsError::Contract(_))));
    }
}
