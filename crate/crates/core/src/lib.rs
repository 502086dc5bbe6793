//! Group membership verification with sparse ternary codes.
//!
//! Signatures are projected by a random orthogonal transform and quantized
//! to `{−1, 0, +1}` codes; a group of signatures is summarized by a single
//! code (aggregate then quantize, or quantize then pool). Beyond enrollment
//! and verification the crate models a curious server's reconstruction
//! attack and a Bloom filter baseline, and runs whole experiments.
//!
//! Heavy loops go through [`Exec`], which runs on rayon when the `parallel`
//! feature is enabled and sequentially otherwise; every random draw comes
//! from a seeded substream so results do not depend on the schedule.

// Domain checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregation;
pub mod attack;
pub mod bloom;
pub mod embedding;
pub mod error;
pub mod exec;
pub mod format;
pub mod harness;
pub mod normal;
pub mod partition;
pub mod quadrature;
pub mod rng;
pub mod verification;

pub use aggregation::{AggregationScheme, SignatureSet};
pub use embedding::{TernaryCode, TransformMatrix};
pub use error::{Error, Result};
pub use exec::Exec;
pub use partition::{GroupAssignment, Partitioner};
pub use verification::{OperatingPoint, RocCurve};
