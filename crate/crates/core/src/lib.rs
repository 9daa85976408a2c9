//! Metric-embedding library built around an adversarially robust triplet loss.
//!
//! The crate trains a small MLP embedder so that samples of the same identity
//! land closer together (in squared Euclidean distance) than samples of
//! different identities, even when the anchor embedding is perturbed by a
//! worst-case offset inside an epsilon ball. The inner maximisation has a
//! closed form, so the robust loss costs about as much as the plain one.
//!
//! Modules:
//! - [`linalg`]: dense vectors/matrices with the handful of BLAS-1/2 ops the
//!   trainer needs, with a pinned left-to-right summation order.
//! - [`rng`]: a seeded, platform-independent random stream (ChaCha8).
//! - [`embedder`]: MLP forward/backward, Adam with a staged LR schedule,
//!   binary checkpoints.
//! - [`losses`]: hinge / softplus / adversarial / Gaussian-MAP triplet losses
//!   with analytic gradients, plus Monte-Carlo and ascent oracles.
//! - [`mining`]: PK batch construction and batch-hard / stochastic-soft
//!   triplet mining.
//! - [`metrics`]: CMC and mean-average-precision retrieval evaluation.
//! - [`dataset`]: labelled feature sets, synthetic cluster generation, text
//!   file IO, identity-disjoint splits.
//! - [`gradcheck`]: central finite-difference gradient checking utilities.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! [`Vec64`]/[`Mat64`] pin the default double-precision types used by the
//! experiment harness.

use std::fmt::{Debug, Display};
use std::num::ParseFloatError;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub mod dataset;
pub mod embedder;
pub mod gradcheck;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod mining;
pub mod rng;

/// Floating-point element type for all numeric containers and algorithms.
///
/// This is a closed-world convenience bound: anything that behaves like an
/// IEEE float, converts to/from `f64` (the native precision of the random
/// stream and config files), parses/prints losslessly, and serialises. `f32`
/// and `f64` implement it via the blanket impl.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + FromStr<Err = ParseFloatError>
    + serde::Serialize
    + serde::de::DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant into `Self`, rounding if needed.
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 converts to any float scalar")
    }

    /// Converts `self` to `f64` for logging and reporting, rounding if needed.
    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("float scalar converts to f64")
    }
}

impl<S> Scalar for S where
    S: Float
        + FromPrimitive
        + ToPrimitive
        + Debug
        + Display
        + FromStr<Err = ParseFloatError>
        + serde::Serialize
        + serde::de::DeserializeOwned
        + Send
        + Sync
        + 'static
{
}

/// Double-precision vector, the default for training and evaluation.
pub type Vec64 = linalg::Vector<f64>;
/// Double-precision matrix, the default for training and evaluation.
pub type Mat64 = linalg::Matrix<f64>;
