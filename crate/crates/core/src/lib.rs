//! Pseudo-label curation for video instance segmentation: mask codecs,
//! dataset models, supervision losses, track curation, evaluation and a
//! synthetic scene generator.

pub mod curate;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod loss;
pub mod mask;
pub mod selfcheck;
pub mod synth;
