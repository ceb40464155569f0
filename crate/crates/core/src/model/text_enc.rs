//! Adaptation-stage language encoder: token + positional embeddings, `n_g`
//! Transformer layers, final norm, output read at the eos position.

use super::{Bindings, ModelConfig};
use crate::autograd::{Tape, Var};
use crate::nn::{encoder_block, Dropout};
use crate::text::TokenSequence;

/// Encode a caption into a single `d_T` vector. Only the effective prefix
/// (bos..eos) participates, so padding contents can never influence the
/// output.
pub fn encode_text(
    tape: &mut Tape,
    b: &Bindings,
    cfg: &ModelConfig,
    seq: &TokenSequence,
    drop: &mut Dropout,
) -> Var {
    let len = seq.length;
    assert!(len >= 2 && len <= cfg.l_max, "invalid sequence length {len}");
    let emb = tape.embedding(b.var("text.tok_embed"), &seq.ids[..len]);
    let pos = tape.slice_rows(b.var("text.pos"), 0, len);
    let mut x = tape.add(emb, pos);
    for layer in 0..cfg.n_g {
        let block = b.block(&format!("text.layers.{layer}"));
        x = encoder_block(tape, x, &block, cfg.heads, None, drop, None);
    }
    let x = tape.layer_norm(x, b.var("text.ln_final.gamma"), b.var("text.ln_final.beta"));
    tape.row(x, len - 1)
}
