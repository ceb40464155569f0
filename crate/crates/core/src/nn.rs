//! Transformer building blocks recorded on an autograd [`Tape`].
//!
//! Pre-norm blocks: `x + Attn(LN(x))` then `x + MLP(LN(x))`, GELU MLP with
//! 4x expansion. Attention probabilities can be captured for visualization.

use crate::autograd::{Tape, Var};
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

/// Dropout context for one forward pass: a rate plus the RNG driving the
/// masks. With no RNG (evaluation mode) dropout is the identity.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> Dropout<'a> {
    pub fn eval() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub fn train(rate: f64, rng: &'a mut ChaCha8Rng) -> Self {
        Self { rate, rng: Some(rng) }
    }

    fn apply(&mut self, tape: &mut Tape, x: Var) -> Var {
        match (&mut self.rng, self.rate > 0.0) {
            (Some(rng), true) => tape.dropout(x, self.rate, rng),
            _ => x,
        }
    }
}

/// Projection weights of one attention module.
#[derive(Debug, Clone, Copy)]
pub struct AttnVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub ln1_g: Var,
    pub ln1_b: Var,
    pub attn: AttnVars,
    pub ln2_g: Var,
    pub ln2_b: Var,
    pub mlp_w1: Var,
    pub mlp_b1: Var,
    pub mlp_w2: Var,
    pub mlp_b2: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderBlockVars {
    pub ln1_g: Var,
    pub ln1_b: Var,
    pub self_attn: AttnVars,
    pub ln2_g: Var,
    pub ln2_b: Var,
    pub cross_attn: AttnVars,
    pub ln3_g: Var,
    pub ln3_b: Var,
    pub mlp_w1: Var,
    pub mlp_b1: Var,
    pub mlp_w2: Var,
    pub mlp_b2: Var,
}

/// Additive attention mask: 0 where attending is allowed, `-inf` where not.
pub fn causal_mask(len: usize) -> Array2<f64> {
    let mut m = Array2::zeros((len, len));
    for r in 0..len {
        for c in r + 1..len {
            m[(r, c)] = f64::NEG_INFINITY;
        }
    }
    m
}

/// Multi-head attention with queries from `q_in` and keys/values from `kv_in`.
/// Captured probability matrices are per head, recorded before dropout.
#[allow(clippy::too_many_arguments)]
pub fn attention(
    tape: &mut Tape,
    q_in: Var,
    kv_in: Var,
    p: &AttnVars,
    heads: usize,
    mask: Option<Var>,
    drop: &mut Dropout,
    mut capture: Option<&mut Vec<Array2<f64>>>,
) -> Var {
    let d = tape.value(q_in).shape()[1];
    assert_eq!(d % heads, 0, "width {d} not divisible by {heads} heads");
    let dh = d / heads;
    let q = tape.matmul(q_in, p.wq);
    let q = tape.add_row_broadcast(q, p.bq);
    let k = tape.matmul(kv_in, p.wk);
    let k = tape.add_row_broadcast(k, p.bk);
    let v = tape.matmul(kv_in, p.wv);
    let v = tape.add_row_broadcast(v, p.bv);

    let mut head_outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * dh, dh);
        let kh = tape.slice_cols(k, h * dh, dh);
        let vh = tape.slice_cols(v, h * dh, dh);
        let mut scores = tape.matmul_nt(qh, kh);
        scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        if let Some(m) = mask {
            scores = tape.add(scores, m);
        }
        let probs = tape.softmax_rows(scores);
        if let Some(cap) = capture.as_deref_mut() {
            cap.push(
                tape.value(probs)
                    .view()
                    .into_dimensionality::<ndarray::Ix2>()
                    .unwrap()
                    .to_owned(),
            );
        }
        let probs = drop.apply(tape, probs);
        head_outs.push(tape.matmul(probs, vh));
    }
    let merged = tape.concat_cols(&head_outs);
    let out = tape.matmul(merged, p.wo);
    tape.add_row_broadcast(out, p.bo)
}

fn mlp(tape: &mut Tape, x: Var, w1: Var, b1: Var, w2: Var, b2: Var, drop: &mut Dropout) -> Var {
    let h = tape.matmul(x, w1);
    let h = tape.add_row_broadcast(h, b1);
    let h = tape.gelu(h);
    let h = drop.apply(tape, h);
    let out = tape.matmul(h, w2);
    tape.add_row_broadcast(out, b2)
}

/// Pre-norm encoder block.
pub fn encoder_block(
    tape: &mut Tape,
    x: Var,
    p: &BlockVars,
    heads: usize,
    mask: Option<Var>,
    drop: &mut Dropout,
    capture: Option<&mut Vec<Array2<f64>>>,
) -> Var {
    let h = tape.layer_norm(x, p.ln1_g, p.ln1_b);
    let a = attention(tape, h, h, &p.attn, heads, mask, drop, capture);
    let a = drop.apply(tape, a);
    let x = tape.add(x, a);
    let h = tape.layer_norm(x, p.ln2_g, p.ln2_b);
    let m = mlp(tape, h, p.mlp_w1, p.mlp_b1, p.mlp_w2, p.mlp_b2, drop);
    let m = drop.apply(tape, m);
    tape.add(x, m)
}

/// Pre-norm decoder block: causal self-attention then cross-attention on `memory`.
pub fn decoder_block(
    tape: &mut Tape,
    x: Var,
    memory: Var,
    p: &DecoderBlockVars,
    heads: usize,
    causal: Var,
    drop: &mut Dropout,
) -> Var {
    let h = tape.layer_norm(x, p.ln1_g, p.ln1_b);
    let a = attention(tape, h, h, &p.self_attn, heads, Some(causal), drop, None);
    let a = drop.apply(tape, a);
    let x = tape.add(x, a);
    let h = tape.layer_norm(x, p.ln2_g, p.ln2_b);
    let c = attention(tape, h, memory, &p.cross_attn, heads, None, drop, None);
    let c = drop.apply(tape, c);
    let x = tape.add(x, c);
    let h = tape.layer_norm(x, p.ln3_g, p.ln3_b);
    let m = mlp(tape, h, p.mlp_w1, p.mlp_b1, p.mlp_w2, p.mlp_b2, drop);
    let m = drop.apply(tape, m);
    tape.add(x, m)
}
