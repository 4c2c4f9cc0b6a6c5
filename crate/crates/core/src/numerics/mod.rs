//! Minimal reverse-mode automatic differentiation and the optimizer built on it.
//!
//! [`Tensor`] is a plain shape + row-major value buffer with an optional
//! gradient accumulator. Differentiable computations are recorded on a
//! [`Tape`]: every primitive appends a node holding its forward value, so the
//! node list is topologically ordered by construction and [`Tape::backward`]
//! is a single reverse sweep.

mod adam;
mod tape;

pub use adam::{Adam, AdamError};
pub use tape::{Tape, Value};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Dense array of scalars with an optional gradient buffer of the same shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TensorRepr<S>", into = "TensorRepr<S>")]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct Tensor<S: Scalar = f64> {
    shape: Vec<usize>,
    values: Vec<S>,
    grad: Option<Vec<S>>,
    requires_grad: bool,
}

/// Serialized form: shape and values only. Gradients are transient state and
/// deserialized tensors come back tracked, matching how checkpoints are used.
#[derive(Serialize, Deserialize)]
struct TensorRepr<S> {
    shape: Vec<usize>,
    values: Vec<S>,
}

impl<S: Scalar> TryFrom<TensorRepr<S>> for Tensor<S> {
    type Error = String;

    fn try_from(r: TensorRepr<S>) -> Result<Self, String> {
        let numel: usize = r.shape.iter().product();
        if numel != r.values.len() {
            return Err(format!(
                "tensor shape {:?} implies {} values, got {}",
                r.shape,
                numel,
                r.values.len()
            ));
        }
        Ok(Tensor::new(r.shape, r.values, true))
    }
}

impl<S: Scalar> From<Tensor<S>> for TensorRepr<S> {
    fn from(t: Tensor<S>) -> Self {
        TensorRepr { shape: t.shape, values: t.values }
    }
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, values: Vec<S>, requires_grad: bool) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            values.len(),
            "tensor shape {:?} implies {} values, got {}",
            shape,
            numel,
            values.len()
        );
        let grad = requires_grad.then(|| vec![S::zero(); values.len()]);
        Tensor { shape, values, grad, requires_grad }
    }

    pub fn zeros(shape: Vec<usize>, requires_grad: bool) -> Self {
        let numel = shape.iter().product();
        Self::new(shape, vec![S::zero(); numel], requires_grad)
    }

    pub fn scalar(value: S, requires_grad: bool) -> Self {
        Self::new(vec![1], vec![value], requires_grad)
    }

    /// Weight initialization: uniform on `(-1/sqrt(fan_in), +1/sqrt(fan_in))`.
    pub fn init_uniform<R: Rng + ?Sized>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Self {
        let bound = S::one() / S::of(fan_in as f64).sqrt();
        let numel: usize = shape.iter().product();
        let values = (0..numel)
            .map(|_| (S::unit_uniform(rng) * S::of(2.0) - S::one()) * bound)
            .collect();
        Self::new(shape, values, true)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [S]> {
        self.grad.as_deref_mut()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|x| *x = S::zero());
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Central-difference gradients of `f` with respect to every element of every
/// tensor. `f` is evaluated on perturbed copies; the result has one gradient
/// buffer per tensor. This is the oracle the tape is checked against and must
/// stay independent of [`Tape::backward`].
pub fn central_difference<S: Scalar>(
    f: &mut dyn FnMut(&[Tensor<S>]) -> S,
    tensors: &[Tensor<S>],
    step: S,
) -> Vec<Vec<S>> {
    let mut work: Vec<Tensor<S>> = tensors.to_vec();
    let mut grads = Vec::with_capacity(tensors.len());
    for t in 0..tensors.len() {
        let mut g = vec![S::zero(); tensors[t].numel()];
        for i in 0..tensors[t].numel() {
            let orig = work[t].values[i];
            work[t].values[i] = orig + step;
            let hi = f(&work);
            work[t].values[i] = orig - step;
            let lo = f(&work);
            work[t].values[i] = orig;
            g[i] = (hi - lo) / (S::of(2.0) * step);
        }
        grads.push(g);
    }
    grads
}

/// Relative error between an analytic and a reference gradient entry, with an
/// absolute floor so near-zero pairs do not blow up the ratio.
pub fn relative_error<S: Scalar>(analytic: S, reference: S) -> S {
    let denom = analytic.abs().max(reference.abs()).max(S::of(1e-6));
    (analytic - reference).abs() / denom
}
