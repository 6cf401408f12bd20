use std::cell::{Ref, RefCell};

use super::{broadcast_index_map, broadcast_shape, Tensor};
use crate::error::{Error, Result};

/// Norms at or below this are treated as zero by [`Var::pow_norm`] and
/// [`Var::pairwise_pow_sum`]; the subgradient there is 0.
pub const EPS_NORM: f64 = 1e-12;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Relu(usize),
    Sigmoid(usize),
    Abs(usize),
    Square(usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    Mean(usize),
    SumAxis(usize, usize),
    BroadcastTo(usize),
    MatMul(usize, usize),
    PowNorm(usize, f64),
    PairwisePowSum(usize, f64),
    Reshape(usize),
    Narrow(usize, usize),
    Concat(Vec<usize>),
    Columns(usize, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of operations. Operands always precede the nodes that
/// use them, so a single reverse sweep is a valid backward traversal.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients of a scalar root with respect to every node on the tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` does not influence the root.
    pub fn get(&self, v: Var<'_>) -> Tensor {
        match self.grads.get(v.id).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.id]),
        }
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

    /// Records a differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push_checked(
        &self,
        value: Tensor,
        op: Op,
        requires_grad: bool,
        name: &'static str,
    ) -> Result<Var<'_>> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        Ok(self.push(value, op, requires_grad))
    }

    fn requires_grad(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Reverse sweep from a scalar `root`. Does not mutate the tape, so
    /// repeated calls return identical gradients.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(root.tape, self) {
            return Err(Error::contract("root belongs to a different tape"));
        }
        let nodes = self.nodes.borrow();
        if nodes[root.id].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward root must be scalar, got shape {:?}",
                nodes[root.id].value.shape()
            )));
        }
        let shapes: Vec<Vec<usize>> = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.id] = Some(Tensor::full(nodes[root.id].value.shape(), 1.0));

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], id: usize, contrib: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(contrib.data()) {
                *a += b;
            }
        }
        slot => *slot = Some(contrib),
    }
}

/// When `small` broadcasts to `big` by whole-block repetition (its shape,
/// minus leading 1s, is a suffix of `big`), returns the block length, so
/// element k of the broadcast reads `small[k % len]`.
fn tile_len(small: &[usize], big: &[usize]) -> Option<usize> {
    let lead = small.iter().take_while(|&&d| d == 1).count();
    let core = &small[lead..];
    (core.len() <= big.len() && big.ends_with(core)).then(|| core.iter().product())
}

/// Sums `g` (shaped like the op output) down onto a broadcast operand.
fn reduce_to(g: &Tensor, target: &[usize]) -> Tensor {
    if g.shape() == target {
        return g.clone();
    }
    let mut out = Tensor::zeros(target);
    let data = out.data_mut();
    if let Some(len) = tile_len(target, g.shape()) {
        for chunk in g.data().chunks(len) {
            for (d, v) in data.iter_mut().zip(chunk) {
                *d += v;
            }
        }
        return out;
    }
    let map = broadcast_index_map(target, g.shape());
    for (k, &src) in map.iter().enumerate() {
        data[src] += g.data()[k];
    }
    out
}

/// Elementwise product of `g` with a broadcast operand `other`, reduced to `target`.
fn reduce_mul(g: &Tensor, other: &Tensor, target: &[usize]) -> Tensor {
    let prod: Vec<f64> = if tile_len(other.shape(), g.shape()).is_some() {
        g.data()
            .chunks(other.numel())
            .flat_map(|chunk| chunk.iter().zip(other.data()).map(|(gv, o)| gv * o))
            .collect()
    } else {
        let map = broadcast_index_map(other.shape(), g.shape());
        g.data()
            .iter()
            .zip(&map)
            .map(|(gv, &j)| gv * other.data()[j])
            .collect()
    };
    reduce_to(&Tensor::from_parts(g.shape().to_vec(), prod), target)
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn backprop_node(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let out = &nodes[id].value;
    let val = |i: usize| &nodes[i].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, reduce_to(g, val(*a).shape()));
            accumulate(grads, nodes, *b, reduce_to(g, val(*b).shape()));
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, reduce_to(g, val(*a).shape()));
            accumulate(grads, nodes, *b, reduce_to(&g.map(|v| -v), val(*b).shape()));
        }
        Op::Mul(a, b) => {
            if nodes[*a].requires_grad {
                accumulate(grads, nodes, *a, reduce_mul(g, val(*b), val(*a).shape()));
            }
            if nodes[*b].requires_grad {
                accumulate(grads, nodes, *b, reduce_mul(g, val(*a), val(*b).shape()));
            }
        }
        Op::Scale(a, c) => accumulate(grads, nodes, *a, g.map(|v| v * c)),
        Op::AddScalar(a) => accumulate(grads, nodes, *a, g.clone()),
        Op::Exp(a) => accumulate(grads, nodes, *a, zip_map(g, out, |gv, y| gv * y)),
        Op::Log(a) => accumulate(grads, nodes, *a, zip_map(g, val(*a), |gv, x| gv / x)),
        Op::Tanh(a) => accumulate(grads, nodes, *a, zip_map(g, out, |gv, y| gv * (1.0 - y * y))),
        Op::Relu(a) => accumulate(
            grads,
            nodes,
            *a,
            zip_map(g, val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 }),
        ),
        Op::Sigmoid(a) => {
            accumulate(grads, nodes, *a, zip_map(g, out, |gv, y| gv * y * (1.0 - y)))
        }
        Op::Abs(a) => accumulate(grads, nodes, *a, zip_map(g, val(*a), |gv, x| gv * sign(x))),
        Op::Square(a) => accumulate(grads, nodes, *a, zip_map(g, val(*a), |gv, x| 2.0 * gv * x)),
        Op::Clamp(a, lo, hi) => accumulate(
            grads,
            nodes,
            *a,
            zip_map(g, val(*a), |gv, x| if x < *lo || x > *hi { 0.0 } else { gv }),
        ),
        Op::Sum(a) => {
            let gv = g.data()[0];
            accumulate(grads, nodes, *a, Tensor::full(val(*a).shape(), gv));
        }
        Op::Mean(a) => {
            let n = val(*a).numel() as f64;
            let gv = g.data()[0] / n;
            accumulate(grads, nodes, *a, Tensor::full(val(*a).shape(), gv));
        }
        Op::SumAxis(a, axis) => {
            let shape = val(*a).shape();
            let (outer, len, inner) = axis_split(shape, *axis);
            let mut data = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for l in 0..len {
                    let dst = (o * len + l) * inner;
                    data[dst..dst + inner].copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                }
            }
            accumulate(grads, nodes, *a, Tensor::from_parts(shape.to_vec(), data));
        }
        Op::BroadcastTo(a) => accumulate(grads, nodes, *a, reduce_to(g, val(*a).shape())),
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (p, q, r) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            if nodes[*a].requires_grad {
                // dA = G · Bᵀ
                let mut da = vec![0.0; p * q];
                gemm(p, r, q, g.data(), (r, 1), bv.data(), (1, r), &mut da);
                accumulate(grads, nodes, *a, Tensor::from_parts(vec![p, q], da));
            }
            if nodes[*b].requires_grad {
                // dB = Aᵀ · G
                let mut db = vec![0.0; q * r];
                gemm(q, p, r, av.data(), (1, q), g.data(), (r, 1), &mut db);
                accumulate(grads, nodes, *b, Tensor::from_parts(vec![q, r], db));
            }
        }
        Op::PowNorm(a, beta) => {
            let x = val(*a);
            let n = x.cols();
            let mut data = vec![0.0; x.numel()];
            for (r, (row, dst)) in x.data().chunks(n).zip(data.chunks_mut(n)).enumerate() {
                let coef = g.data()[r] * pow_norm_coef(row, *beta);
                for (d, v) in dst.iter_mut().zip(row) {
                    *d = coef * v;
                }
            }
            accumulate(grads, nodes, *a, Tensor::from_parts(x.shape().to_vec(), data));
        }
        Op::PairwisePowSum(a, beta) => {
            let s = val(*a);
            let (m, b, n) = (s.shape()[0], s.shape()[1], s.shape()[2]);
            let sd = s.data();
            let mut data = vec![0.0; s.numel()];
            let mut diff = vec![0.0; n];
            for bi in 0..b {
                let gb = g.data()[bi];
                for i in 0..m {
                    let si = (i * b + bi) * n;
                    for j in (i + 1)..m {
                        let sj = (j * b + bi) * n;
                        for k in 0..n {
                            diff[k] = sd[si + k] - sd[sj + k];
                        }
                        let coef = gb * pow_norm_coef(&diff, *beta);
                        for k in 0..n {
                            data[si + k] += coef * diff[k];
                            data[sj + k] -= coef * diff[k];
                        }
                    }
                }
            }
            accumulate(grads, nodes, *a, Tensor::from_parts(s.shape().to_vec(), data));
        }
        Op::Reshape(a) => {
            let shape = val(*a).shape().to_vec();
            accumulate(grads, nodes, *a, Tensor::from_parts(shape, g.data().to_vec()));
        }
        Op::Narrow(a, start) => {
            let x = val(*a);
            let row = x.numel() / x.shape()[0];
            let mut data = vec![0.0; x.numel()];
            data[start * row..start * row + g.numel()].copy_from_slice(g.data());
            accumulate(grads, nodes, *a, Tensor::from_parts(x.shape().to_vec(), data));
        }
        Op::Concat(parts) => {
            let mut offset = 0;
            for &p in parts {
                let len = val(p).numel();
                let piece = g.data()[offset..offset + len].to_vec();
                offset += len;
                accumulate(grads, nodes, p, Tensor::from_parts(val(p).shape().to_vec(), piece));
            }
        }
        Op::Columns(a, start) => {
            let x = val(*a);
            let (r, c) = (x.shape()[0], x.shape()[1]);
            let w = g.shape()[1];
            let mut data = vec![0.0; r * c];
            for i in 0..r {
                data[i * c + start..i * c + start + w].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
            }
            accumulate(grads, nodes, *a, Tensor::from_parts(vec![r, c], data));
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// d‖v‖^β / dv = coef · v.
fn pow_norm_coef(v: &[f64], beta: f64) -> f64 {
    let sq: f64 = v.iter().map(|x| x * x).sum();
    if beta == 2.0 {
        return 2.0;
    }
    let norm = sq.sqrt();
    if norm <= EPS_NORM {
        0.0
    } else if beta == 1.0 {
        1.0 / norm
    } else {
        beta * norm.powf(beta - 2.0)
    }
}

fn pow_norm_value(v: &[f64], beta: f64) -> f64 {
    let sq: f64 = v.iter().map(|x| x * x).sum();
    if beta == 2.0 {
        sq
    } else if beta == 1.0 {
        sq.sqrt()
    } else {
        sq.powf(beta / 2.0)
    }
}

/// tanh through a single `exp`, several times cheaper than libm's `tanh`;
/// absolute error stays within a few ulps of 1.
fn fast_tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// C[m×n] += A[m×k] · B[k×n] with explicit (row, col) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    assert!(m == 0 || k == 0 || (m - 1) * a_strides.0 + (k - 1) * a_strides.1 < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * b_strides.0 + (n - 1) * b_strides.1 < b.len());
    // SAFETY: the asserts above bound every index dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Borrowed view of the forward value. Drop it before recording more ops.
    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn to_tensor(&self) -> Tensor {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    fn same_tape(&self, other: Var<'_>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::contract("operands recorded on different tapes"))
        }
    }

    fn binary(
        self,
        other: Var<'t>,
        op: fn(usize, usize) -> Op,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            let shape = broadcast_shape(a.shape(), b.shape())?;
            if a.shape() == b.shape() {
                zip_map(a, b, f)
            } else if a.shape() == shape.as_slice() && tile_len(b.shape(), &shape).is_some() {
                let mut data = Vec::with_capacity(a.numel());
                for chunk in a.data().chunks(b.numel()) {
                    data.extend(chunk.iter().zip(b.data()).map(|(&x, &y)| f(x, y)));
                }
                Tensor::from_parts(shape, data)
            } else if b.shape() == shape.as_slice() && tile_len(a.shape(), &shape).is_some() {
                let mut data = Vec::with_capacity(b.numel());
                for chunk in b.data().chunks(a.numel()) {
                    data.extend(a.data().iter().zip(chunk).map(|(&x, &y)| f(x, y)));
                }
                Tensor::from_parts(shape, data)
            } else {
                let ma = broadcast_index_map(a.shape(), &shape);
                let mb = broadcast_index_map(b.shape(), &shape);
                let data = ma
                    .iter()
                    .zip(&mb)
                    .map(|(&i, &j)| f(a.data()[i], b.data()[j]))
                    .collect();
                Tensor::from_parts(shape, data)
            }
        };
        let rg = self.tape.requires_grad(&[self.id, other.id]);
        self.tape.push_checked(value, op(self.id, other.id), rg, name)
    }

    fn unary(self, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var<'t>> {
        let value = self.value().map(f);
        let rg = self.tape.requires_grad(&[self.id]);
        self.tape.push_checked(value, op, rg, name)
    }

    fn structural(self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'t> {
        let rg = self.tape.requires_grad(inputs);
        self.tape.push(value, op, rg)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Add, "add", |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Sub, "sub", |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Mul, "mul", |a, b| a * b)
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.unary(Op::Scale(self.id, c), "scale", |v| v * c)
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t>> {
        self.unary(Op::AddScalar(self.id), "add_scalar", |v| v + c)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary(Op::Exp(self.id), "exp", f64::exp)
    }

    /// Natural log; nonpositive inputs are an error rather than NaN/-inf.
    pub fn log(self) -> Result<Var<'t>> {
        if self.value().data().iter().any(|&v| v <= 0.0) {
            return Err(Error::NonFinite { op: "log" });
        }
        self.unary(Op::Log(self.id), "log", f64::ln)
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.unary(Op::Tanh(self.id), "tanh", fast_tanh)
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.unary(Op::Relu(self.id), "relu", |v| v.max(0.0))
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary(Op::Sigmoid(self.id), "sigmoid", |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn abs(self) -> Result<Var<'t>> {
        self.unary(Op::Abs(self.id), "abs", f64::abs)
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.unary(Op::Square(self.id), "square", |v| v * v)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(self, lo: f64, hi: f64) -> Result<Var<'t>> {
        self.unary(Op::Clamp(self.id, lo, hi), "clamp", |v| v.clamp(lo, hi))
    }

    pub fn sum(self) -> Result<Var<'t>> {
        let s: f64 = self.value().data().iter().sum();
        let rg = self.tape.requires_grad(&[self.id]);
        self.tape.push_checked(Tensor::scalar(s), Op::Sum(self.id), rg, "sum")
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let v = self.value();
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        drop(v);
        let rg = self.tape.requires_grad(&[self.id]);
        self.tape.push_checked(Tensor::scalar(s), Op::Mean(self.id), rg, "mean")
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        let value = {
            let x = self.value();
            if axis >= x.rank() {
                return Err(Error::shape(format!(
                    "sum_axis({axis}) on shape {:?}",
                    x.shape()
                )));
            }
            let (outer, len, inner) = axis_split(x.shape(), axis);
            let mut data = vec![0.0; outer * inner];
            for o in 0..outer {
                for l in 0..len {
                    let src = (o * len + l) * inner;
                    for i in 0..inner {
                        data[o * inner + i] += x.data()[src + i];
                    }
                }
            }
            let mut shape = x.shape().to_vec();
            shape.remove(axis);
            Tensor::from_parts(shape, data)
        };
        let rg = self.tape.requires_grad(&[self.id]);
        self.tape.push_checked(value, Op::SumAxis(self.id, axis), rg, "sum_axis")
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>> {
        let len = *self
            .shape()
            .get(axis)
            .ok_or_else(|| Error::shape(format!("mean_axis({axis}) out of range")))?;
        self.sum_axis(axis)?.scale(1.0 / len as f64)
    }

    pub fn broadcast_to(self, shape: &[usize]) -> Result<Var<'t>> {
        let value = {
            let x = self.value();
            if broadcast_shape(x.shape(), shape)? != shape {
                return Err(Error::shape(format!(
                    "cannot broadcast {:?} to {shape:?}",
                    x.shape()
                )));
            }
            let map = broadcast_index_map(x.shape(), shape);
            Tensor::from_parts(shape.to_vec(), map.iter().map(|&i| x.data()[i]).collect())
        };
        Ok(self.structural(value, Op::BroadcastTo(self.id), &[self.id]))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(Error::shape(format!(
                    "matmul of {:?} and {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let (p, q, r) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut c = vec![0.0; p * r];
            gemm(p, q, r, a.data(), (q, 1), b.data(), (r, 1), &mut c);
            Tensor::from_parts(vec![p, r], c)
        };
        let rg = self.tape.requires_grad(&[self.id, other.id]);
        self.tape
            .push_checked(value, Op::MatMul(self.id, other.id), rg, "matmul")
    }

    /// ‖v‖₂^β over the last axis: `[.., n] -> [..]`; a 1-D input gives a scalar.
    pub fn pow_norm(self, beta: f64) -> Result<Var<'t>> {
        check_beta(beta)?;
        let value = {
            let x = self.value();
            let n = x.cols();
            let data: Vec<f64> = x.data().chunks(n).map(|r| pow_norm_value(r, beta)).collect();
            let mut shape = x.shape().to_vec();
            shape.pop();
            Tensor::from_parts(shape, data)
        };
        let rg = self.tape.requires_grad(&[self.id]);
        self.tape
            .push_checked(value, Op::PowNorm(self.id, beta), rg, "pow_norm")
    }

    /// For samples `[M, B, n]`, returns `[B]` with Σ_{i<j} ‖s_i − s_j‖^β per column b.
    pub fn pairwise_pow_sum(self, beta: f64) -> Result<Var<'t>> {
        check_beta(beta)?;
        let value = {
            let s = self.value();
            if s.rank() != 3 {
                return Err(Error::shape(format!(
                    "pairwise_pow_sum needs [M, B, n], got {:?}",
                    s.shape()
                )));
            }
            let (m, b, n) = (s.shape()[0], s.shape()[1], s.shape()[2]);
            let sd = s.data();
            let mut out = vec![0.0; b];
            let mut diff = vec![0.0; n];
            for (bi, acc) in out.iter_mut().enumerate() {
                for i in 0..m {
                    let si = (i * b + bi) * n;
                    for j in (i + 1)..m {
                        let sj = (j * b + bi) * n;
                        for k in 0..n {
                            diff[k] = sd[si + k] - sd[sj + k];
                        }
                        *acc += pow_norm_value(&diff, beta);
                    }
                }
            }
            Tensor::from_parts(vec![b], out)
        };
        let rg = self.tape.requires_grad(&[self.id]);
        self.tape
            .push_checked(value, Op::PairwisePowSum(self.id, beta), rg, "pairwise_pow_sum")
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let value = self.to_tensor().reshape(shape)?;
        Ok(self.structural(value, Op::Reshape(self.id), &[self.id]))
    }

    /// Rows `start..start+len` along the leading axis.
    pub fn narrow(self, start: usize, len: usize) -> Result<Var<'t>> {
        let value = {
            let x = self.value();
            let lead = *x.shape().first().unwrap_or(&1);
            if x.rank() == 0 || len == 0 || start + len > lead {
                return Err(Error::shape(format!(
                    "narrow({start}, {len}) on shape {:?}",
                    x.shape()
                )));
            }
            let row = x.numel() / lead;
            let mut shape = x.shape().to_vec();
            shape[0] = len;
            Tensor::from_parts(shape, x.data()[start * row..(start + len) * row].to_vec())
        };
        Ok(self.structural(value, Op::Narrow(self.id, start), &[self.id]))
    }

    /// Columns `start..start+len` of a 2-D tensor.
    pub fn columns(self, start: usize, len: usize) -> Result<Var<'t>> {
        let value = {
            let x = self.value();
            if x.rank() != 2 || len == 0 || start + len > x.shape()[1] {
                return Err(Error::shape(format!(
                    "columns({start}, {len}) on shape {:?}",
                    x.shape()
                )));
            }
            let (r, c) = (x.shape()[0], x.shape()[1]);
            let mut data = Vec::with_capacity(r * len);
            for i in 0..r {
                data.extend_from_slice(&x.data()[i * c + start..i * c + start + len]);
            }
            Tensor::from_parts(vec![r, len], data)
        };
        Ok(self.structural(value, Op::Columns(self.id, start), &[self.id]))
    }
}

/// Stacks tensors along the leading axis; trailing dims must agree.
pub fn concat<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = *parts
        .first()
        .ok_or_else(|| Error::shape("concat of zero tensors"))?;
    for p in parts {
        first.same_tape(*p)?;
    }
    let value = {
        let nodes = first.tape.nodes.borrow();
        let tail = nodes[first.id].value.shape().get(1..).unwrap_or(&[]).to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            let v = &nodes[p.id].value;
            if v.rank() == 0 || v.shape()[1..] != tail[..] {
                return Err(Error::shape(format!(
                    "concat: shape {:?} does not match trailing {tail:?}",
                    v.shape()
                )));
            }
            lead += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        Tensor::from_parts(shape, data)
    };
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    Ok(first.structural(value, Op::Concat(ids.clone()), &ids))
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta <= 2.0 {
        Ok(())
    } else {
        Err(Error::config(format!("beta must lie in (0, 2], got {beta}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_arithmetic() {
        let tape = Tape::new();
        let i2 = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(i2.matmul(m).unwrap().to_tensor().data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2, 1], &[3.0, 4.0]));
        assert_eq!(a.matmul(b).unwrap().to_tensor().data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(a.matmul(b), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_gradient_wrt_lhs() {
        // d/da sum(a·b) = 1·bᵀ
        let tape = Tape::new();
        let a = tape.leaf(t(&[1, 2], &[1.0, 1.0]));
        let b = tape.constant(t(&[2, 1], &[2.0, 5.0]));
        let root = a.matmul(b).unwrap().sum().unwrap();
        let g = tape.backward(root).unwrap();
        assert_eq!(g.get(a).data(), &[2.0, 5.0]);
    }

    #[test]
    fn pow_norm_values() {
        let tape = Tape::new();
        let v = tape.constant(Tensor::vector(&[3.0, 4.0]));
        assert_eq!(v.pow_norm(1.0).unwrap().item().unwrap(), 5.0);
        assert_eq!(v.pow_norm(2.0).unwrap().item().unwrap(), 25.0);
        let w = tape.constant(Tensor::vector(&[1.0, 1.0]));
        let got = w.pow_norm(0.5).unwrap().item().unwrap();
        assert!((got - 2f64.powf(0.25)).abs() < 1e-12);
        assert!((got - 1.189207).abs() < 1e-6);
    }

    #[test]
    fn pow_norm_rejects_bad_beta() {
        let tape = Tape::new();
        let v = tape.constant(Tensor::vector(&[1.0]));
        assert!(matches!(v.pow_norm(0.0), Err(Error::Config(_))));
        assert!(matches!(v.pow_norm(2.5), Err(Error::Config(_))));
    }

    #[test]
    fn pow_norm_zero_subgradient() {
        let tape = Tape::new();
        let v = tape.leaf(Tensor::vector(&[0.0, 0.0]));
        let root = v.pow_norm(1.0).unwrap();
        let g = tape.backward(root).unwrap();
        assert_eq!(g.get(v).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_sum_is_ones() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[2, 3], 0.7));
        let g = tape.backward(x.sum().unwrap()).unwrap();
        assert_eq!(g.get(x), Tensor::ones(&[2, 3]));
    }

    #[test]
    fn backward_squared_norm() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(&[1.0, 2.0]));
        let g = tape.backward(x.pow_norm(2.0).unwrap()).unwrap();
        assert_eq!(g.get(x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(&[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(&[1.0, 2.0]));
        let y = tape.leaf(Tensor::vector(&[3.0]));
        let g = tape.backward(x.sum().unwrap()).unwrap();
        assert_eq!(g.get(y).data(), &[0.0]);
    }

    #[test]
    fn backward_is_pure() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(&[0.3, -1.2, 2.0]));
        let root = x.tanh().unwrap().square().unwrap().sum().unwrap();
        let g1 = tape.backward(root).unwrap().get(x);
        let g2 = tape.backward(root).unwrap().get(x);
        assert_eq!(g1, g2);
    }

    #[test]
    fn log_of_nonpositive_is_error() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(&[1.0, 0.0]));
        assert!(matches!(x.log(), Err(Error::NonFinite { op: "log" })));
    }

    #[test]
    fn exp_overflow_is_error() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(&[1000.0]));
        assert!(matches!(x.exp(), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn broadcast_violation_is_error() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[3, 4]));
        let b = tape.constant(Tensor::zeros(&[3]));
        assert!(matches!(a.add(b), Err(Error::Shape(_))));
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[3, 2]));
        let b = tape.leaf(Tensor::zeros(&[2]));
        let g = tape.backward(a.add(b).unwrap().sum().unwrap()).unwrap();
        assert_eq!(g.get(b).data(), &[3.0, 3.0]);
    }

    #[test]
    fn pairwise_sum_small() {
        // samples {0, 2} in 1-D, one column: |0-2| = 2
        let tape = Tape::new();
        let s = tape.constant(t(&[2, 1, 1], &[0.0, 2.0]));
        assert_eq!(s.pairwise_pow_sum(1.0).unwrap().to_tensor().data(), &[2.0]);
    }

    #[test]
    fn concat_narrow_columns() {
        let tape = Tape::new();
        let a = tape.leaf(t(&[1, 3], &[1.0, 2.0, 3.0]));
        let b = tape.leaf(t(&[2, 3], &[4.0, 5.0, 6.0, 7.0, 8.0, 9.0]));
        let c = concat(&[a, b]).unwrap();
        assert_eq!(c.shape(), vec![3, 3]);
        let tail = c.narrow(1, 2).unwrap().columns(1, 2).unwrap();
        assert_eq!(tail.to_tensor().data(), &[5.0, 6.0, 8.0, 9.0]);
        let g = tape.backward(tail.sum().unwrap()).unwrap();
        assert_eq!(g.get(a).data(), &[0.0, 0.0, 0.0]);
        assert_eq!(g.get(b).data(), &[0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn nodes_are_topological() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(&[1.0]));
        let y = x.exp().unwrap().add(x).unwrap();
        let nodes = tape.nodes.borrow();
        for (i, n) in nodes.iter().enumerate() {
            let operands: Vec<usize> = match &n.op {
                Op::Add(a, b) => vec![*a, *b],
                Op::Exp(a) => vec![*a],
                _ => vec![],
            };
            assert!(operands.iter().all(|&o| o < i));
        }
        assert_eq!(y.id, nodes.len() - 1);
    }
}
