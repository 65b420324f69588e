//! Click-supervised video semantic segmentation at desk scale.
//!
//! The pipeline trains a compact segmentation net from single-click
//! annotations: a larger teacher net is trained on clicks alone, then a
//! student net is trained with the click loss plus two dense distillation
//! signals — temporal consistency against its own flow-warped neighboring
//! predictions, and per-pixel KL against the frozen teacher. Inference
//! uses only the student, one frame at a time.
//!
//! Everything is self-contained: a small reverse-mode autodiff core
//! ([`tensor`]), tiny conv nets ([`nets`]), flow fields and warping
//! ([`flow`]), the training objectives ([`losses`]), click generation from
//! dense masks ([`clickgen`]), a procedural video corpus with exact
//! ground-truth flow ([`synthdata`]), and the training/evaluation/ablation
//! driver ([`trainer`]).

pub mod clickgen;
pub mod error;
pub mod flow;
pub mod losses;
pub mod nets;
pub mod synthdata;
pub mod tensor;

pub use error::{Error, Result};
