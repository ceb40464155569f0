//! Differentiable networks: paired-image vision encoder (intra + inter
//! stages with projection), language encoder, and the captioning
//! encoder-decoder.

mod captioner;
mod config;
mod params;
mod text_enc;
mod vision;

pub use captioner::{caption_forward, caption_logits, encode_visual, greedy_decode};
pub use config::{ModelConfig, Stage};
pub use params::{Bindings, ParamStore};
pub use text_enc::encode_text;
pub use vision::{attention_heatmaps, encode_pair, patchify, patchify_matrix, PairAttention};
