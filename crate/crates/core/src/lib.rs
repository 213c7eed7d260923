//! Core math for uncertainty-aware panoptic segmentation.
//!
//! The crate is organised bottom-up:
//!
//! - [`grid`]: dense fields, label/panoptic grids, masks, boxes, resize and argmax.
//! - [`evidential`]: evidence activations, the Dirichlet transform and the
//!   entropy / temperature-scaling baselines.
//! - [`losses`]: evidential losses with analytic gradients, the KL regulariser,
//!   the annealing schedule and the Lovász evidential loss.
//! - [`fusion`]: probabilistic fusion of semantic logits and instance predictions.
//! - [`metrics`]: segment matching, PQ/SQ/RQ, ECE/uECE/pECE/uPQ and mergeable
//!   accumulators.
//! - [`synth`]: seeded synthetic scenes and predictors.

pub mod classes;
pub mod error;
pub mod evidential;
pub mod fusion;
pub mod gradcheck;
pub mod grid;
pub mod losses;
pub mod metrics;
pub mod special;
pub mod synth;

pub use classes::ClassSplit;
pub use error::{Error, Result};
pub use grid::{BBox, DenseGrid, LabelGrid, Mask, PanopticGrid, OFFSET, VOID};
