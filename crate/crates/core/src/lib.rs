//! Selective-representation learning for partial domain adaptation.
//!
//! A labeled source domain whose label set strictly contains the unlabeled
//! target label set is adapted by (1) splitting every image into a shared
//! content code and a domain-private style code, (2) training a label
//! classifier and an adversarial domain classifier on the content code only,
//! and (3) estimating, per source class, the probability that the class is
//! shared with the target, then binarizing those soft weights at the
//! threshold that maximizes the between-cluster variance so that outlier
//! source classes are removed from training entirely.
//!
//! The crate is `no_std` (with `alloc`); everything here is pure
//! computation. File formats, image ingestion, and the command-line driver
//! live in the companion `selrep-cli` crate.
//!
//! Module map:
//! - [`data`]: domain samples, partial-task specification, synthetic task
//!   generator, batch iteration.
//! - [`net`]: encoders, decoders, classifier heads, gradient reversal, and
//!   the [`net::NetworkBundle`] tying them together.
//! - [`loss`]: reconstruction, classification, adversarial, entropy, and
//!   orthogonality objectives plus the combined training objective.
//! - [`select`]: soft class-weight estimation and threshold binarization.
//! - [`train`]: SGD-with-momentum trainer alternating gradient steps with
//!   class-weight refreshes.
//! - [`eval`]: target-accuracy evaluation with optional outlier masking.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
mod math;
pub mod net;
pub mod select;
pub mod tensor;
pub mod train;

pub use error::Error;
pub use tensor::Tensor;

/// Crate result alias.
pub type Result<T> = core::result::Result<T, Error>;
