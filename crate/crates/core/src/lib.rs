//! Self-supervised pretraining on clip sequences that contain a latent
//! intentional-to-unintentional transition.
//!
//! The crate is organised bottom-up:
//!
//! - [`datamodel`]: videos, clips, the three-way clip labeling rule and the
//!   evaluation clip grid.
//! - [`synthgen`]: seeded synthetic videos with a regime change at an
//!   annotated transition point.
//! - [`sampling`]: anchor / positive / negative triplet construction with a
//!   margin zone and global or local negative scope.
//! - [`nn`]: a small reverse-mode autodiff tape, the encoder and heads,
//!   optimizers and the binary checkpoint format.
//! - [`losses`]: symmetric temporal InfoNCE, pairwise order loss, the
//!   permutation variant and the combined objective.
//! - [`train`]: the pretraining driver.
//! - [`evaluation`]: linear probes, localization, anticipation and the
//!   ablation matrix.
//! - [`config`] and [`report`]: run configuration, digests and static reports.

// Validation uses negated comparisons so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod datamodel;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod nn;
pub mod report;
pub mod sampling;
pub mod synthgen;
pub mod train;

pub use error::{Error, Result};
