//! Energy-aware placement of AI-model service chains onto host servers.
//!
//! The crate models a star-topology NFV infrastructure, evaluates placements
//! for energy and constraint feasibility under sampled demand uncertainty, and
//! provides three placement engines: a sequence-to-sequence neural policy with
//! an epistemic-uncertainty-weighted attention layer (trained by policy
//! gradient), a First Fit heuristic, and an exact branch-and-bound solver.
//!
//! All numeric code is generic over the scalar type via [`Scalar`]; `f64` is
//! the default everywhere and the type the CLI and experiment harness use.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub mod domain;
pub mod evaluator;
pub mod harness;
pub mod numerics;
pub mod policy;
pub mod solvers;
pub mod trainer;
pub mod uncertainty;

/// Scalar type the whole crate is generic over: `f32` or `f64`.
///
/// Sampling lives on the trait so that draws stay bit-reproducible per type
/// without threading distribution bounds through every signature.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, for literals and config values.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to any Scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    /// One draw from the standard normal distribution.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// One draw from the uniform distribution on `[0, 1)`.
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f64 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random()
    }
}

impl Scalar for f32 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random()
    }
}

pub use domain::{
    AIModelProfile, DistributionSpec, HostSpec, Placement, Scenario, ServiceChain,
};
pub use evaluator::{ConstraintFamily, ConstraintReport, RealizedDemand};
pub use numerics::{Tape, Tensor, Value};
pub use policy::{DecodeMode, DecodeTrace, EncoderOutput, PolicyParameters, UncertaintyMode};
pub use solvers::{SolveResult, SolveStatus};
pub use trainer::{Checkpoint, RewardConfig, TrainConfig};

/// Concrete aliases for the default `f64` instantiation.
pub type Tensor64 = Tensor<f64>;
pub type Scenario64 = Scenario<f64>;
pub type Policy64 = PolicyParameters<f64>;
