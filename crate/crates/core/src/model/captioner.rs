//! Captioning encoder-decoder: Transformer encoder over the visual pair
//! sequence, causal decoder with cross-attention, greedy decoding.

use super::{Bindings, ModelConfig};
use crate::autograd::{Tape, Var};
use crate::nn::{causal_mask, decoder_block, encoder_block, Dropout};
use crate::text::{TokenSequence, BOS, EOS};

/// Captioning encoder over the `2(n+1) x d_T` visual sequence.
pub fn encode_visual(
    tape: &mut Tape,
    b: &Bindings,
    cfg: &ModelConfig,
    visual: Var,
    drop: &mut Dropout,
) -> Var {
    let mut x = visual;
    for layer in 0..cfg.n_cap_enc {
        let block = b.block(&format!("cap.enc.{layer}"));
        x = encoder_block(tape, x, &block, cfg.heads, None, drop, None);
    }
    tape.layer_norm(x, b.var("cap.enc_ln.gamma"), b.var("cap.enc_ln.beta"))
}

/// Next-token logits for a decoder input prefix: shape `(len(input), vocab)`.
/// Row `t` depends only on `memory` and `input_ids[..=t]`.
pub fn caption_logits(
    tape: &mut Tape,
    b: &Bindings,
    cfg: &ModelConfig,
    memory: Var,
    input_ids: &[usize],
    drop: &mut Dropout,
) -> Var {
    let len = input_ids.len();
    assert!(len >= 1 && len <= cfg.l_max, "decoder prefix length {len}");
    let emb = tape.embedding(b.var("cap.tok_embed"), input_ids);
    let pos = tape.slice_rows(b.var("cap.pos"), 0, len);
    let mut x = tape.add(emb, pos);
    let mask = tape.leaf(causal_mask(len).into_dyn());
    for layer in 0..cfg.n_cap_dec {
        let block = b.decoder_block(&format!("cap.dec.{layer}"));
        x = decoder_block(tape, x, memory, &block, cfg.heads, mask, drop);
    }
    let x = tape.layer_norm(x, b.var("cap.ln_final.gamma"), b.var("cap.ln_final.beta"));
    let logits = tape.matmul(x, b.var("cap.out.weight"));
    tape.add_row_broadcast(logits, b.var("cap.out.bias"))
}

/// Teacher-forced logits predicting target positions `1..l_max`: shape
/// `(l_max - 1, vocab)`; row `t` sees target ids `..=t` only.
pub fn caption_forward(
    tape: &mut Tape,
    b: &Bindings,
    cfg: &ModelConfig,
    visual: Var,
    target: &TokenSequence,
    drop: &mut Dropout,
) -> Var {
    let memory = encode_visual(tape, b, cfg, visual, drop);
    caption_logits(tape, b, cfg, memory, &target.ids[..cfg.l_max - 1], drop)
}

/// Greedy decoding from bos: at each step append the argmax token (ties
/// broken by the smallest id), stopping at eos or after `max_steps` content
/// tokens. Returns the content token ids (no bos/eos).
pub fn greedy_decode(
    tape: &mut Tape,
    b: &Bindings,
    cfg: &ModelConfig,
    memory: Var,
    max_steps: usize,
) -> Vec<usize> {
    assert!(max_steps >= 1);
    let mut prefix = vec![BOS];
    let mut out = Vec::new();
    for _ in 0..max_steps {
        let take = prefix.len().min(cfg.l_max - 1);
        let logits = caption_logits(
            tape,
            b,
            cfg,
            memory,
            &prefix[prefix.len() - take..],
            &mut Dropout::eval(),
        );
        let row = tape.value(logits);
        let last = row.shape()[0] - 1;
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for t in 0..cfg.vocab_size {
            let v = row[[last, t]];
            if v > best_v {
                best_v = v;
                best = t;
            }
        }
        if best == EOS {
            break;
        }
        out.push(best);
        prefix.push(best);
    }
    out
}
