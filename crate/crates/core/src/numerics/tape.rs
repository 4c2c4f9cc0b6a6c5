//! The computation tape: an append-only, topologically ordered op record.

use std::cell::RefCell;
use std::ops::Range;

use crate::numerics::Tensor;
use crate::Scalar;

/// Handle to a node on a [`Tape`]. Only meaningful for the tape it came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Value {
    idx: usize,
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, S),
    /// `[n] - [1]` broadcast subtraction.
    SubScalar(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Concat(Vec<usize>),
    Slice { input: usize, start: usize },
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Ln(usize),
    Softmax(usize),
    LogSumExp(usize),
    Mean(usize),
    Sum(usize),
    SquaredNorm(usize),
}

struct Node<S> {
    op: Op<S>,
    shape: Vec<usize>,
    values: Vec<S>,
    /// Same length as `values` when the node participates in gradients,
    /// empty otherwise.
    grad: Vec<S>,
    requires_grad: bool,
}

/// Recorder for one differentiable computation.
///
/// Nodes are appended in construction order, so every op's inputs precede it
/// and the reverse sweep in [`Tape::backward`] visits consumers before
/// producers. Forward evaluation happens eagerly at op-construction time and
/// is deterministic: identical inputs yield bit-identical node values.
pub struct Tape<S: Scalar = f64> {
    nodes: RefCell<Vec<Node<S>>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op<S>, shape: Vec<usize>, values: Vec<S>, requires_grad: bool) -> Value {
        let grad = if requires_grad { vec![S::zero(); values.len()] } else { Vec::new() };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, shape, values, grad, requires_grad });
        Value { idx: nodes.len() - 1 }
    }

    fn shape_of(&self, v: Value) -> Vec<usize> {
        self.nodes.borrow()[v.idx].shape.clone()
    }

    fn tracked(&self, v: Value) -> bool {
        self.nodes.borrow()[v.idx].requires_grad
    }

    /// Copy of a node's forward values.
    pub fn values(&self, v: Value) -> Vec<S> {
        self.nodes.borrow()[v.idx].values.clone()
    }

    pub fn value_scalar(&self, v: Value) -> S {
        let nodes = self.nodes.borrow();
        let node = &nodes[v.idx];
        assert_eq!(node.values.len(), 1, "expected scalar node, shape {:?}", node.shape);
        node.values[0]
    }

    /// Copy of the gradient accumulated for `v` by `backward` calls so far.
    pub fn grad(&self, v: Value) -> Vec<S> {
        let nodes = self.nodes.borrow();
        let node = &nodes[v.idx];
        assert!(node.requires_grad, "grad requested for an untracked node");
        node.grad.clone()
    }

    // ---- inputs ----

    /// Enter a tensor's current values as a leaf. Tracking follows the
    /// tensor's `requires_grad` flag.
    pub fn leaf(&self, t: &Tensor<S>) -> Value {
        self.push(Op::Leaf, t.shape().to_vec(), t.values().to_vec(), t.requires_grad())
    }

    pub fn constant(&self, shape: Vec<usize>, values: Vec<S>) -> Value {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, values.len(), "constant shape {:?} vs {} values", shape, values.len());
        self.push(Op::Leaf, shape, values, false)
    }

    pub fn constant_scalar(&self, x: S) -> Value {
        self.constant(vec![1], vec![x])
    }

    // ---- elementwise ----

    fn binary_same_shape(&self, a: Value, b: Value, name: &str) -> (Vec<usize>, Vec<S>, Vec<S>) {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        assert_eq!(sa, sb, "{name} shape mismatch: {sa:?} vs {sb:?}");
        (sa, self.values(a), self.values(b))
    }

    pub fn add(&self, a: Value, b: Value) -> Value {
        let (shape, va, vb) = self.binary_same_shape(a, b, "add");
        let out = va.iter().zip(&vb).map(|(&x, &y)| x + y).collect();
        self.push(Op::Add(a.idx, b.idx), shape, out, self.tracked(a) || self.tracked(b))
    }

    pub fn sub(&self, a: Value, b: Value) -> Value {
        let (shape, va, vb) = self.binary_same_shape(a, b, "sub");
        let out = va.iter().zip(&vb).map(|(&x, &y)| x - y).collect();
        self.push(Op::Sub(a.idx, b.idx), shape, out, self.tracked(a) || self.tracked(b))
    }

    pub fn mul(&self, a: Value, b: Value) -> Value {
        let (shape, va, vb) = self.binary_same_shape(a, b, "mul");
        let out = va.iter().zip(&vb).map(|(&x, &y)| x * y).collect();
        self.push(Op::Mul(a.idx, b.idx), shape, out, self.tracked(a) || self.tracked(b))
    }

    pub fn neg(&self, a: Value) -> Value {
        let out = self.values(a).iter().map(|&x| -x).collect();
        self.push(Op::Neg(a.idx), self.shape_of(a), out, self.tracked(a))
    }

    pub fn scale(&self, a: Value, c: S) -> Value {
        let out = self.values(a).iter().map(|&x| x * c).collect();
        self.push(Op::Scale(a.idx, c), self.shape_of(a), out, self.tracked(a))
    }

    /// Broadcast `a - s` where `s` has a single element.
    pub fn sub_scalar(&self, a: Value, s: Value) -> Value {
        let ss = self.shape_of(s);
        assert_eq!(ss.iter().product::<usize>(), 1, "sub_scalar rhs must be scalar, got {ss:?}");
        let sv = self.values(s)[0];
        let out = self.values(a).iter().map(|&x| x - sv).collect();
        self.push(Op::SubScalar(a.idx, s.idx), self.shape_of(a), out, self.tracked(a) || self.tracked(s))
    }

    // ---- linear algebra ----

    /// `[r,k] x [k,c] -> [r,c]`, or `[r,k] x [k] -> [r]`.
    pub fn matmul(&self, a: Value, b: Value) -> Value {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        assert_eq!(sa.len(), 2, "matmul lhs must be a matrix: {sa:?} x {sb:?}");
        let (r, k) = (sa[0], sa[1]);
        let (kb, c, vec_rhs) = match sb.len() {
            2 => (sb[0], sb[1], false),
            1 => (sb[0], 1, true),
            _ => panic!("matmul rhs rank unsupported: {sa:?} x {sb:?}"),
        };
        assert_eq!(k, kb, "matmul inner dim mismatch: {sa:?} x {sb:?}");
        let (va, vb) = (self.values(a), self.values(b));
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            for l in 0..k {
                let ail = va[i * k + l];
                if ail == S::zero() {
                    continue;
                }
                for j in 0..c {
                    out[i * c + j] = out[i * c + j] + ail * vb[l * c + j];
                }
            }
        }
        let shape = if vec_rhs { vec![r] } else { vec![r, c] };
        self.push(Op::MatMul(a.idx, b.idx), shape, out, self.tracked(a) || self.tracked(b))
    }

    pub fn transpose(&self, a: Value) -> Value {
        let sa = self.shape_of(a);
        assert_eq!(sa.len(), 2, "transpose expects a matrix, got {sa:?}");
        let (r, c) = (sa[0], sa[1]);
        let va = self.values(a);
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = va[i * c + j];
            }
        }
        self.push(Op::Transpose(a.idx), vec![c, r], out, self.tracked(a))
    }

    // ---- shape ----

    /// Concatenate vectors into one longer vector.
    pub fn concat_vec(&self, parts: &[Value]) -> Value {
        assert!(!parts.is_empty(), "concat of zero parts");
        let mut out = Vec::new();
        let mut tracked = false;
        for &p in parts {
            let sp = self.shape_of(p);
            assert_eq!(sp.len(), 1, "concat_vec expects vectors, got {sp:?}");
            out.extend(self.values(p));
            tracked |= self.tracked(p);
        }
        let n = out.len();
        self.push(Op::Concat(parts.iter().map(|p| p.idx).collect()), vec![n], out, tracked)
    }

    /// Stack equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&self, rows: &[Value]) -> Value {
        assert!(!rows.is_empty(), "stack of zero rows");
        let width = {
            let s0 = self.shape_of(rows[0]);
            assert_eq!(s0.len(), 1, "stack_rows expects vectors, got {s0:?}");
            s0[0]
        };
        let mut out = Vec::with_capacity(rows.len() * width);
        let mut tracked = false;
        for &p in rows {
            let sp = self.shape_of(p);
            assert_eq!(sp, vec![width], "stack_rows width mismatch: {sp:?} vs [{width}]");
            out.extend(self.values(p));
            tracked |= self.tracked(p);
        }
        let shape = vec![rows.len(), width];
        self.push(Op::Concat(rows.iter().map(|p| p.idx).collect()), shape, out, tracked)
    }

    /// Contiguous element range of a vector.
    pub fn slice(&self, a: Value, range: Range<usize>) -> Value {
        let sa = self.shape_of(a);
        assert_eq!(sa.len(), 1, "slice expects a vector, got {sa:?}");
        assert!(range.end <= sa[0], "slice {range:?} out of bounds for {sa:?}");
        let out = self.values(a)[range.clone()].to_vec();
        let n = out.len();
        self.push(Op::Slice { input: a.idx, start: range.start }, vec![n], out, self.tracked(a))
    }

    /// Row `i` of a matrix, as a vector.
    pub fn row(&self, a: Value, i: usize) -> Value {
        let sa = self.shape_of(a);
        assert_eq!(sa.len(), 2, "row expects a matrix, got {sa:?}");
        let (r, c) = (sa[0], sa[1]);
        assert!(i < r, "row {i} out of bounds for {sa:?}");
        let out = self.values(a)[i * c..(i + 1) * c].to_vec();
        self.push(Op::Slice { input: a.idx, start: i * c }, vec![c], out, self.tracked(a))
    }

    // ---- nonlinearities ----

    pub fn tanh(&self, a: Value) -> Value {
        let out = self.values(a).iter().map(|x| x.tanh()).collect();
        self.push(Op::Tanh(a.idx), self.shape_of(a), out, self.tracked(a))
    }

    pub fn sigmoid(&self, a: Value) -> Value {
        let one = S::one();
        let out = self.values(a).iter().map(|&x| one / (one + (-x).exp())).collect();
        self.push(Op::Sigmoid(a.idx), self.shape_of(a), out, self.tracked(a))
    }

    pub fn exp(&self, a: Value) -> Value {
        let out = self.values(a).iter().map(|x| x.exp()).collect();
        self.push(Op::Exp(a.idx), self.shape_of(a), out, self.tracked(a))
    }

    pub fn ln(&self, a: Value) -> Value {
        let out = self.values(a).iter().map(|x| x.ln()).collect();
        self.push(Op::Ln(a.idx), self.shape_of(a), out, self.tracked(a))
    }

    /// Softmax over a vector, stabilized by max subtraction. Entries whose
    /// shifted exponent underflows come out exactly zero.
    pub fn softmax(&self, a: Value) -> Value {
        let sa = self.shape_of(a);
        assert_eq!(sa.len(), 1, "softmax expects a vector, got {sa:?}");
        let va = self.values(a);
        let max = va.iter().cloned().fold(S::neg_infinity(), S::max);
        let exps: Vec<S> = va.iter().map(|&x| (x - max).exp()).collect();
        let total: S = exps.iter().cloned().sum();
        let out: Vec<S> = exps.iter().map(|&e| e / total).collect();
        self.push(Op::Softmax(a.idx), sa, out, self.tracked(a))
    }

    /// `ln(sum(exp(x)))` of a vector, stabilized by max subtraction.
    pub fn logsumexp(&self, a: Value) -> Value {
        let sa = self.shape_of(a);
        assert_eq!(sa.len(), 1, "logsumexp expects a vector, got {sa:?}");
        let va = self.values(a);
        let max = va.iter().cloned().fold(S::neg_infinity(), S::max);
        let total: S = va.iter().map(|&x| (x - max).exp()).sum();
        let out = max + total.ln();
        self.push(Op::LogSumExp(a.idx), vec![1], vec![out], self.tracked(a))
    }

    // ---- reductions ----

    pub fn sum(&self, a: Value) -> Value {
        let out: S = self.values(a).iter().cloned().sum();
        self.push(Op::Sum(a.idx), vec![1], vec![out], self.tracked(a))
    }

    pub fn mean(&self, a: Value) -> Value {
        let va = self.values(a);
        let out: S = va.iter().cloned().sum::<S>() / S::of(va.len() as f64);
        self.push(Op::Mean(a.idx), vec![1], vec![out], self.tracked(a))
    }

    pub fn squared_norm(&self, a: Value) -> Value {
        let out: S = self.values(a).iter().map(|&x| x * x).sum();
        self.push(Op::SquaredNorm(a.idx), vec![1], vec![out], self.tracked(a))
    }

    pub fn dot(&self, a: Value, b: Value) -> Value {
        self.sum(self.mul(a, b))
    }

    // ---- backward ----

    /// Accumulate `d out / d node` into every tracked node's gradient buffer.
    /// Repeated calls without clearing add up.
    pub fn backward(&self, out: Value) {
        let mut nodes = self.nodes.borrow_mut();
        assert_eq!(
            nodes[out.idx].values.len(),
            1,
            "backward requires a scalar output, shape {:?}",
            nodes[out.idx].shape
        );
        if !nodes[out.idx].requires_grad {
            return;
        }

        // Scratch buffers for d out / d node of this sweep; node.grad keeps
        // the across-sweep accumulation.
        let mut local: Vec<Vec<S>> = nodes
            .iter()
            .map(|n| if n.requires_grad { vec![S::zero(); n.values.len()] } else { Vec::new() })
            .collect();
        local[out.idx][0] = S::one();

        for i in (0..=out.idx).rev() {
            if !nodes[i].requires_grad || local[i].is_empty() {
                continue;
            }
            let go = std::mem::take(&mut local[i]);
            for (slot, g) in nodes[i].grad.iter_mut().zip(&go) {
                *slot = *slot + *g;
            }
            let op = nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut local, &nodes, a, |t| go[t]);
                    accumulate(&mut local, &nodes, b, |t| go[t]);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut local, &nodes, a, |t| go[t]);
                    accumulate(&mut local, &nodes, b, |t| -go[t]);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (nodes[a].values.clone(), nodes[b].values.clone());
                    accumulate(&mut local, &nodes, a, |t| go[t] * vb[t]);
                    accumulate(&mut local, &nodes, b, |t| go[t] * va[t]);
                }
                Op::Neg(a) => accumulate(&mut local, &nodes, a, |t| -go[t]),
                Op::Scale(a, c) => accumulate(&mut local, &nodes, a, |t| go[t] * c),
                Op::SubScalar(a, s) => {
                    accumulate(&mut local, &nodes, a, |t| go[t]);
                    let total: S = go.iter().cloned().sum();
                    accumulate(&mut local, &nodes, s, |_| -total);
                }
                Op::MatMul(a, b) => {
                    let (sa, sb) = (nodes[a].shape.clone(), nodes[b].shape.clone());
                    let (r, k) = (sa[0], sa[1]);
                    let c = if sb.len() == 2 { sb[1] } else { 1 };
                    let (va, vb) = (nodes[a].values.clone(), nodes[b].values.clone());
                    accumulate(&mut local, &nodes, a, |t| {
                        let (i, l) = (t / k, t % k);
                        let mut acc = S::zero();
                        for j in 0..c {
                            acc = acc + go[i * c + j] * vb[l * c + j];
                        }
                        acc
                    });
                    accumulate(&mut local, &nodes, b, |t| {
                        let (l, j) = (t / c, t % c);
                        let mut acc = S::zero();
                        for i in 0..r {
                            acc = acc + va[i * k + l] * go[i * c + j];
                        }
                        acc
                    });
                }
                Op::Transpose(a) => {
                    let sa = nodes[a].shape.clone();
                    let (r, c) = (sa[0], sa[1]);
                    accumulate(&mut local, &nodes, a, |t| {
                        let (i, j) = (t / c, t % c);
                        go[j * r + i]
                    });
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = nodes[p].values.len();
                        let base = offset;
                        accumulate(&mut local, &nodes, p, |t| go[base + t]);
                        offset += len;
                    }
                }
                Op::Slice { input, start } => {
                    let out_len = go.len();
                    if nodes[input].requires_grad {
                        let buf = &mut local[input];
                        if buf.is_empty() {
                            *buf = vec![S::zero(); nodes[input].values.len()];
                        }
                        for t in 0..out_len {
                            buf[start + t] = buf[start + t] + go[t];
                        }
                    }
                }
                Op::Tanh(a) => {
                    let y = nodes[i].values.clone();
                    accumulate(&mut local, &nodes, a, |t| go[t] * (S::one() - y[t] * y[t]));
                }
                Op::Sigmoid(a) => {
                    let y = nodes[i].values.clone();
                    accumulate(&mut local, &nodes, a, |t| go[t] * y[t] * (S::one() - y[t]));
                }
                Op::Exp(a) => {
                    let y = nodes[i].values.clone();
                    accumulate(&mut local, &nodes, a, |t| go[t] * y[t]);
                }
                Op::Ln(a) => {
                    let x = nodes[a].values.clone();
                    accumulate(&mut local, &nodes, a, |t| go[t] / x[t]);
                }
                Op::Softmax(a) => {
                    let y = nodes[i].values.clone();
                    let inner: S = go.iter().zip(&y).map(|(&g, &p)| g * p).sum();
                    accumulate(&mut local, &nodes, a, |t| y[t] * (go[t] - inner));
                }
                Op::LogSumExp(a) => {
                    let x = nodes[a].values.clone();
                    let out_val = nodes[i].values[0];
                    accumulate(&mut local, &nodes, a, |t| go[0] * (x[t] - out_val).exp());
                }
                Op::Sum(a) => accumulate(&mut local, &nodes, a, |_| go[0]),
                Op::Mean(a) => {
                    let n = S::of(nodes[a].values.len() as f64);
                    accumulate(&mut local, &nodes, a, |_| go[0] / n);
                }
                Op::SquaredNorm(a) => {
                    let x = nodes[a].values.clone();
                    accumulate(&mut local, &nodes, a, |t| go[0] * S::of(2.0) * x[t]);
                }
            }
        }
    }

    /// Add the gradient accumulated for leaf `v` into `param`'s grad buffer.
    pub fn accumulate_into(&self, v: Value, param: &mut Tensor<S>) {
        let nodes = self.nodes.borrow();
        let node = &nodes[v.idx];
        assert!(matches!(node.op, Op::Leaf), "accumulate_into expects a leaf");
        assert_eq!(node.shape, param.shape(), "leaf/param shape mismatch: {:?} vs {:?}", node.shape, param.shape());
        if !node.requires_grad {
            return;
        }
        let grad = param.grad_mut().expect("parameter is tracked");
        for (slot, g) in grad.iter_mut().zip(&node.grad) {
            *slot = *slot + *g;
        }
    }
}

/// Add `f(t)` into the local gradient buffer of node `target` for each
/// element index `t`, allocating the buffer on first touch.
fn accumulate<S: Scalar>(
    local: &mut [Vec<S>],
    nodes: &[Node<S>],
    target: usize,
    f: impl Fn(usize) -> S,
) {
    if !nodes[target].requires_grad {
        return;
    }
    let buf = &mut local[target];
    if buf.is_empty() {
        *buf = vec![S::zero(); nodes[target].values.len()];
    }
    for t in 0..buf.len() {
        buf[t] = buf[t] + f(t);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{central_difference, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_derivative() {
        let tape: Tape = Tape::new();
        let x = Tensor::scalar(3.0, true);
        let lx = tape.leaf(&x);
        let y = tape.mul(lx, lx);
        tape.backward(y);
        assert_eq!(tape.value_scalar(y), 9.0);
        assert_eq!(tape.grad(lx), vec![6.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let tape: Tape = Tape::new();
        let x = Tensor::scalar(3.0, true);
        let lx = tape.leaf(&x);
        let y = tape.mul(lx, lx);
        tape.backward(y);
        tape.backward(y);
        assert_eq!(tape.grad(lx), vec![12.0]);
    }

    #[test]
    fn softmax_uniform_logits() {
        let tape: Tape = Tape::new();
        let z = tape.constant(vec![3], vec![0.0, 0.0, 0.0]);
        let p = tape.values(tape.softmax(z));
        for &pi in &p {
            assert!((pi - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_nonlinearities() {
        let tape: Tape = Tape::new();
        let z = tape.constant_scalar(0.0);
        assert_eq!(tape.value_scalar(tape.tanh(z)), 0.0);
        assert_eq!(tape.value_scalar(tape.sigmoid(z)), 0.5);
    }

    #[test]
    fn matmul_fixed_instance() {
        // [[1,2,3],[4,5,6]] x [1,0,-1]^T = [-2,-2]
        let tape: Tape = Tape::new();
        let a = tape.constant(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = tape.constant(vec![3], vec![1.0, 0.0, -1.0]);
        assert_eq!(tape.values(tape.matmul(a, b)), vec![-2.0, -2.0]);
    }

    #[test]
    fn softmax_cross_entropy_gradient_is_p_minus_onehot() {
        // loss = -log softmax(z)[true]; dz = softmax(z) - onehot(true)
        let tape: Tape = Tape::new();
        let z = Tensor::new(vec![3], vec![0.2, -0.4, 1.1], true);
        let lz = tape.leaf(&z);
        let lse = tape.logsumexp(lz);
        let z_true = tape.slice(lz, 1..2);
        let loss = tape.sub(lse, tape.sum(z_true));
        tape.backward(loss);
        let p = tape.values(tape.softmax(lz));
        let g = tape.grad(lz);
        for i in 0..3 {
            let expect = p[i] - if i == 1 { 1.0 } else { 0.0 };
            assert!((g[i] - expect).abs() < 1e-12, "slot {i}: {} vs {expect}", g[i]);
        }
    }

    /// Random compositions of every primitive, checked against central
    /// finite differences.
    #[test]
    fn finite_difference_agreement_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..20 {
            let a = Tensor::init_uniform(vec![3, 4], 4, &mut rng);
            let b = Tensor::init_uniform(vec![4], 4, &mut rng);
            let c = Tensor::init_uniform(vec![4, 3], 3, &mut rng);
            let params = [a, b, c];

            let mut f = |ts: &[Tensor<f64>]| {
                let tape: Tape = Tape::new();
                let (la, lb, lc) = (tape.leaf(&ts[0]), tape.leaf(&ts[1]), tape.leaf(&ts[2]));
                let mv = tape.matmul(la, lb); // [3]
                let act = tape.tanh(mv);
                let sig = tape.sigmoid(tape.slice(act, 0..2));
                let joined = tape.concat_vec(&[act, sig]); // [5]
                let prod = tape.matmul(tape.transpose(lc), tape.exp(tape.scale(lb, 0.3))); // [3]
                let shifted = tape.sub_scalar(prod, tape.logsumexp(prod));
                let sm = tape.softmax(tape.slice(joined, 1..4));
                let mixed = tape.mul(sm, shifted);
                let h = tape.sub(mixed, tape.neg(tape.ln(tape.exp(sm))));
                let total = tape.add(
                    tape.add(tape.mean(h), tape.squared_norm(mv)),
                    tape.sum(tape.mul(sig, sig)),
                );
                tape.value_scalar(total)
            };

            // analytic gradients
            let tape: Tape = Tape::new();
            let leaves: Vec<Value> = params.iter().map(|t| tape.leaf(t)).collect();
            let out = {
                let (la, lb, lc) = (leaves[0], leaves[1], leaves[2]);
                let mv = tape.matmul(la, lb);
                let act = tape.tanh(mv);
                let sig = tape.sigmoid(tape.slice(act, 0..2));
                let joined = tape.concat_vec(&[act, sig]);
                let prod = tape.matmul(tape.transpose(lc), tape.exp(tape.scale(lb, 0.3)));
                let shifted = tape.sub_scalar(prod, tape.logsumexp(prod));
                let sm = tape.softmax(tape.slice(joined, 1..4));
                let mixed = tape.mul(sm, shifted);
                let h = tape.sub(mixed, tape.neg(tape.ln(tape.exp(sm))));
                tape.add(
                    tape.add(tape.mean(h), tape.squared_norm(mv)),
                    tape.sum(tape.mul(sig, sig)),
                )
            };
            tape.backward(out);

            let fd = central_difference(&mut f, &params, 1e-4);
            for (which, (lv, fd_g)) in leaves.iter().zip(&fd).enumerate() {
                let an = tape.grad(*lv);
                for (i, (&ag, &fg)) in an.iter().zip(fd_g).enumerate() {
                    assert!(
                        relative_error(ag, fg) < 1e-3,
                        "trial {trial} tensor {which} slot {i}: analytic {ag} vs fd {fg}"
                    );
                }
            }
        }
    }

    #[test]
    #[should_panic(expected = "shape mismatch")]
    fn add_shape_mismatch_reports_both_shapes() {
        let tape: Tape = Tape::new();
        let a = tape.constant(vec![2], vec![1.0, 2.0]);
        let b = tape.constant(vec![3], vec![1.0, 2.0, 3.0]);
        tape.add(a, b);
    }

    #[test]
    #[should_panic(expected = "scalar output")]
    fn backward_rejects_non_scalar() {
        let tape: Tape = Tape::new();
        let x = Tensor::new(vec![2], vec![1.0, 2.0], true);
        let lx = tape.leaf(&x);
        tape.backward(lx);
    }

    #[test]
    fn determinism_bit_identical() {
        let run = || {
            let tape: Tape = Tape::new();
            let x = Tensor::new(vec![3], vec![0.1, -0.7, 2.3], true);
            let lx = tape.leaf(&x);
            let y = tape.sum(tape.softmax(tape.tanh(tape.scale(lx, 1.7))));
            tape.value_scalar(y).to_bits()
        };
        assert_eq!(run(), run());
    }
}
