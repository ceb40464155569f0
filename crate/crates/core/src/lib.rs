//! Difference captioning for image pairs: a synthetic change dataset, a
//! paired-image Transformer encoder adapted with a symmetric contrastive
//! objective, a captioning encoder-decoder fine-tuned on top, and the
//! retrieval/caption metrics to evaluate both stages.

pub mod autograd;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod text;
pub mod training;

pub use error::{Error, Result};
