//! Paired-image vision encoder: patch projection, shared intra stage,
//! pair-token/positional embeddings, inter stage, and output projection.

use super::{Bindings, ModelConfig};
use crate::autograd::{Tape, Var};
use crate::nn::{encoder_block, Dropout};
use ndarray::{Array2, Array3};

/// Pixel normalization constants (dataset mean and scale). Centering on the
/// dominant background level makes unchanged regions map near zero, which
/// raises the signal-to-noise ratio of the patch features.
pub const PIXEL_MEAN: f64 = 0.9;
pub const PIXEL_STD: f64 = 0.25;

/// Flatten an `(H, W, 3)` image in `[0,1]` into `(n, patch*patch*3)` rows of
/// normalized pixels, patches in row-major order.
pub fn patchify_matrix(image: &Array3<f64>, patch: usize) -> Array2<f64> {
    let (h, w, c) = image.dim();
    assert_eq!(c, 3);
    assert_eq!(h % patch, 0);
    assert_eq!(w % patch, 0);
    let (rows, cols) = (h / patch, w / patch);
    let mut out = Array2::zeros((rows * cols, patch * patch * 3));
    for pr in 0..rows {
        for pc in 0..cols {
            let mut k = 0;
            for y in 0..patch {
                for x in 0..patch {
                    for ch in 0..3 {
                        out[(pr * cols + pc, k)] =
                            (image[(pr * patch + y, pc * patch + x, ch)] - PIXEL_MEAN) / PIXEL_STD;
                        k += 1;
                    }
                }
            }
        }
    }
    out
}

/// Patchify one image and prepend the class token: `[x_cls, x_1..x_n] + p_I`,
/// length `n + 1`, width `d_I`.
pub fn patchify(tape: &mut Tape, b: &Bindings, cfg: &ModelConfig, image: &Array3<f64>) -> Var {
    assert_eq!(image.dim().0, cfg.image_size, "image height mismatch");
    assert_eq!(image.dim().1, cfg.image_size, "image width mismatch");
    let patches = tape.leaf(patchify_matrix(image, cfg.patch_size).into_dyn());
    let projected = tape.matmul(patches, b.var("vision.patch_proj.weight"));
    let cls = b.var("vision.cls");
    let cls_row = tape.reshape(cls, &[1, cfg.d_i]);
    let seq = tape.concat_rows(&[cls_row, projected]);
    tape.add(seq, b.var("vision.pos"))
}

/// Attention probabilities captured during one pair forward pass:
/// `intra[image][layer][head]` and `inter[layer][head]` matrices.
#[derive(Debug, Clone, Default)]
pub struct PairAttention {
    pub intra: [Vec<Vec<Array2<f64>>>; 2],
    pub inter: Vec<Vec<Array2<f64>>>,
}

/// Encode an image pair into a `2(n+1) x d_T` sequence: shared intra stage
/// per image, pair token embeddings `e1`/`e2` added to every position of the
/// respective half, concatenation plus joint positional embedding, inter
/// stage, final norm, and linear projection.
pub fn encode_pair(
    tape: &mut Tape,
    b: &Bindings,
    cfg: &ModelConfig,
    before: &Array3<f64>,
    after: &Array3<f64>,
    drop: &mut Dropout,
    mut capture: Option<&mut PairAttention>,
) -> Var {
    let mut halves = Vec::with_capacity(2);
    for (img_idx, image) in [before, after].into_iter().enumerate() {
        let mut x = patchify(tape, b, cfg, image);
        for layer in 0..cfg.n_intra {
            let block = b.block(&format!("vision.intra.{layer}"));
            let mut heads_cap = capture.as_deref_mut().map(|_| Vec::new());
            x = encoder_block(tape, x, &block, cfg.heads, None, drop, heads_cap.as_mut());
            if let (Some(cap), Some(hc)) = (capture.as_deref_mut(), heads_cap) {
                cap.intra[img_idx].push(hc);
            }
        }
        let pair_tok = b.var(if img_idx == 0 { "vision.e1" } else { "vision.e2" });
        halves.push(tape.add_row_broadcast(x, pair_tok));
    }
    let mut joint = tape.concat_rows(&halves);
    joint = tape.add(joint, b.var("vision.joint_pos"));
    for layer in 0..cfg.n_inter {
        let block = b.block(&format!("vision.inter.{layer}"));
        let mut heads_cap = capture.as_deref_mut().map(|_| Vec::new());
        joint = encoder_block(tape, joint, &block, cfg.heads, None, drop, heads_cap.as_mut());
        if let (Some(cap), Some(hc)) = (capture.as_deref_mut(), heads_cap) {
            cap.inter.push(hc);
        }
    }
    let normed = tape.layer_norm(
        joint,
        b.var("vision.ln_post.gamma"),
        b.var("vision.ln_post.beta"),
    );
    tape.matmul(normed, b.var("vision.proj"))
}

/// Reduce captured attention to one heatmap grid per image and layer: the
/// class-token row averaged over heads, restricted to that image's patch
/// positions, reshaped to the `(side, side)` patch grid.
pub fn attention_heatmaps(cap: &PairAttention, cfg: &ModelConfig) -> [Vec<Array2<f64>>; 2] {
    let n = cfg.n();
    let side = cfg.image_size / cfg.patch_size;
    let mut out: [Vec<Array2<f64>>; 2] = [Vec::new(), Vec::new()];
    for img in 0..2 {
        // Intra stage: class token is row 0, patches are columns 1..=n.
        for layer in &cap.intra[img] {
            let mut grid = Array2::zeros((side, side));
            for head in layer {
                for p in 0..n {
                    grid[(p / side, p % side)] += head[(0, p + 1)];
                }
            }
            grid /= layer.len() as f64;
            out[img].push(grid);
        }
        // Inter stage: each image's class token row over its own patches.
        let cls_row = img * (n + 1);
        let patch_base = img * (n + 1) + 1;
        for layer in &cap.inter {
            let mut grid = Array2::zeros((side, side));
            for head in layer {
                for p in 0..n {
                    grid[(p / side, p % side)] += head[(cls_row, patch_base + p)];
                }
            }
            grid /= layer.len() as f64;
            out[img].push(grid);
        }
    }
    out
}
