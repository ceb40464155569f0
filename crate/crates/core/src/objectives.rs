//! Adaptation contrastive loss and captioning cross-entropy.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::text::TokenSequence;

/// Minimum and maximum of the learnable temperature after clamping.
pub const TAU_MIN: f64 = 0.01;
pub const TAU_MAX: f64 = 100.0;

/// Pool a `2(n+1) x d_T` pair sequence into one vector: the mean of the two
/// class-token outputs (positions 1 and n+2, 1-indexed).
pub fn pool_pair(tape: &mut Tape, pair_seq: Var, n: usize) -> Var {
    let len = tape.value(pair_seq).shape()[0];
    assert!(len >= n + 2, "pair sequence length {len} too short for n={n}");
    let a = tape.row(pair_seq, 0);
    let b = tape.row(pair_seq, n + 1);
    let s = tape.add(a, b);
    tape.scale(s, 0.5)
}

/// Cosine similarity of two plain vectors; errors on a zero vector.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cosine_sim length mismatch {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numerical("cosine_sim of zero vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

/// The symmetric contrastive loss and its two components.
pub struct ContrastiveLoss {
    pub total: Var,
    pub i2t: Var,
    pub t2i: Var,
}

/// Bidirectional InfoNCE over pooled pair embeddings `vs` and caption
/// embeddings `gs` with a learnable log-temperature: cosine similarities
/// scaled by `1/tau`, row-wise (pair-to-text) and column-wise (text-to-pair)
/// cross-entropy on the diagonal, each averaged over the batch.
pub fn contrastive_loss(tape: &mut Tape, vs: &[Var], gs: &[Var], log_tau: Var) -> ContrastiveLoss {
    let batch = vs.len();
    assert_eq!(batch, gs.len(), "batch size mismatch");
    assert!(batch >= 1);
    let tau = tape.exp(log_tau);
    let mut sims = vec![Vec::with_capacity(batch); batch];
    for (i, &v) in vs.iter().enumerate() {
        for &g in gs {
            sims[i].push(tape.cosine(v, g));
        }
    }

    let mut i2t_terms = Vec::with_capacity(batch);
    let mut t2i_terms = Vec::with_capacity(batch);
    for i in 0..batch {
        let row = tape.stack_scalars(&sims[i]);
        let row = tape.div_scalar(row, tau);
        let row = tape.reshape(row, &[1, batch]);
        let lsm = tape.log_softmax_rows(row);
        i2t_terms.push(tape.pick(lsm, 0, i));

        let col_sims: Vec<Var> = (0..batch).map(|j| sims[j][i]).collect();
        let col = tape.stack_scalars(&col_sims);
        let col = tape.div_scalar(col, tau);
        let col = tape.reshape(col, &[1, batch]);
        let lsm = tape.log_softmax_rows(col);
        t2i_terms.push(tape.pick(lsm, 0, i));
    }
    let i2t_sum = tape.stack_scalars(&i2t_terms);
    let i2t_sum = tape.sum(i2t_sum);
    let i2t = tape.scale(i2t_sum, -1.0 / batch as f64);
    let t2i_sum = tape.stack_scalars(&t2i_terms);
    let t2i_sum = tape.sum(t2i_sum);
    let t2i = tape.scale(t2i_sum, -1.0 / batch as f64);
    let total = tape.add(i2t, t2i);
    ContrastiveLoss { total, i2t, t2i }
}

/// Mean negative log-likelihood of the target over non-pad positions.
/// `logits` has one row per predicted position (targets `1..length`); eos is
/// a target, pad positions are excluded from the mean.
pub fn caption_xe_loss(tape: &mut Tape, logits: Var, target: &TokenSequence) -> Var {
    let rows = tape.value(logits).shape()[0];
    assert!(
        target.length - 1 <= rows,
        "logit rows {rows} cannot cover {} targets",
        target.length - 1
    );
    let lsm = tape.log_softmax_rows(logits);
    let mut terms = Vec::with_capacity(target.length - 1);
    for t in 1..target.length {
        terms.push(tape.pick(lsm, t - 1, target.ids[t]));
    }
    let count = terms.len() as f64;
    let s = tape.stack_scalars(&terms);
    let s = tape.sum(s);
    tape.scale(s, -1.0 / count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::scalar;
    use ndarray::{arr1, arr2, ArrayD, IxDyn};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_circle(theta: f64) -> ArrayD<f64> {
        arr1(&[theta.cos(), theta.sin()]).into_dyn()
    }

    /// Embedding pairs realizing an exact similarity matrix [[1,0],[0,1]].
    fn orthogonal_fixture(tape: &mut Tape) -> (Vec<Var>, Vec<Var>) {
        let v0 = tape.leaf(unit_circle(0.0));
        let v1 = tape.leaf(unit_circle(std::f64::consts::FRAC_PI_2));
        (vec![v0, v1], vec![v0, v1])
    }

    #[test]
    fn pool_pair_is_mean_of_class_tokens() {
        let mut tape = Tape::new();
        let n = 3;
        let mut seq = arr2(&[[0.0; 2]; 8]);
        seq.row_mut(0).assign(&arr1(&[1.0, 3.0]));
        seq.row_mut(n + 1).assign(&arr1(&[5.0, 1.0]));
        let x = tape.leaf(seq.into_dyn());
        let v = pool_pair(&mut tape, x, n);
        assert_eq!(tape.value(v), &arr1(&[3.0, 2.0]).into_dyn());
    }

    #[test]
    fn cosine_sim_basic_identities() {
        let u = [0.3, -0.4, 0.5];
        let nu: Vec<f64> = u.iter().map(|v| -v).collect();
        assert!((cosine_sim(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine_sim(&u, &nu).unwrap() + 1.0).abs() < 1e-12);
        assert!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap().abs() < 1e-12);
        assert!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn batch_of_one_has_zero_loss() {
        let mut tape = Tape::new();
        let v = tape.leaf(unit_circle(0.3));
        let g = tape.leaf(unit_circle(1.1));
        let lt = tape.leaf(ArrayD::from_elem(IxDyn(&[1]), 0.0));
        let loss = contrastive_loss(&mut tape, &[v], &[g], lt);
        assert_eq!(tape.scalar_value(loss.total), 0.0);
    }

    #[test]
    fn identity_similarity_fixture_matches_closed_form() {
        let mut tape = Tape::new();
        let (vs, gs) = orthogonal_fixture(&mut tape);
        let lt = tape.leaf(ArrayD::from_elem(IxDyn(&[1]), 0.0)); // tau = 1
        let loss = contrastive_loss(&mut tape, &vs, &gs, lt);
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((tape.scalar_value(loss.i2t) - expected).abs() < 1e-12);
        assert!((tape.scalar_value(loss.t2i) - expected).abs() < 1e-12);
        assert!((tape.scalar_value(loss.total) - 2.0 * expected).abs() < 1e-12);
    }

    #[test]
    fn well_separated_pairs_at_low_temperature_have_negligible_loss() {
        // Diagonal similarity 1, off-diagonal -1, tau = 0.07.
        let mut tape = Tape::new();
        let v0 = tape.leaf(unit_circle(0.0));
        let v1 = tape.leaf(unit_circle(std::f64::consts::PI));
        let lt = tape.leaf(ArrayD::from_elem(IxDyn(&[1]), 0.07f64.ln()));
        let loss = contrastive_loss(&mut tape, &[v0, v1], &[v0, v1], lt);
        assert!(tape.scalar_value(loss.total) < 1e-10);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let batch = 4;
        let dim = 8;
        let vs0: Vec<ArrayD<f64>> = (0..batch)
            .map(|_| ArrayD::from_shape_fn(IxDyn(&[dim]), |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let gs0: Vec<ArrayD<f64>> = (0..batch)
            .map(|_| ArrayD::from_shape_fn(IxDyn(&[dim]), |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let lt0 = ArrayD::from_elem(IxDyn(&[1]), -1.3);

        let eval = |vs: &[ArrayD<f64>], gs: &[ArrayD<f64>], lt: &ArrayD<f64>| {
            let mut tape = Tape::new();
            let vvars: Vec<Var> = vs.iter().map(|v| tape.leaf(v.clone())).collect();
            let gvars: Vec<Var> = gs.iter().map(|g| tape.leaf(g.clone())).collect();
            let ltv = tape.leaf(lt.clone());
            let loss = contrastive_loss(&mut tape, &vvars, &gvars, ltv);
            (tape.scalar_value(loss.total), tape, vvars, gvars, ltv, loss.total)
        };
        let (_, tape, vvars, gvars, ltv, root) = eval(&vs0, &gs0, &lt0);
        let grads = tape.backward(root);

        let h = 1e-6;
        for (bi, &vv) in vvars.iter().enumerate() {
            let ga = grads.wrt(vv).unwrap();
            for k in [0usize, dim - 1] {
                let mut plus = vs0.clone();
                plus[bi][[k]] += h;
                let mut minus = vs0.clone();
                minus[bi][[k]] -= h;
                let num = (eval(&plus, &gs0, &lt0).0 - eval(&minus, &gs0, &lt0).0) / (2.0 * h);
                let rel = (ga[[k]] - num).abs() / (ga[[k]].abs() + num.abs()).max(1e-10);
                assert!(rel < 1e-6, "dv[{bi}][{k}] rel err {rel}");
            }
        }
        for (bi, &gv) in gvars.iter().enumerate() {
            let ga = grads.wrt(gv).unwrap();
            let mut plus = gs0.clone();
            plus[bi][[1]] += h;
            let mut minus = gs0.clone();
            minus[bi][[1]] -= h;
            let num = (eval(&vs0, &plus, &lt0).0 - eval(&vs0, &minus, &lt0).0) / (2.0 * h);
            let rel = (ga[[1]] - num).abs() / (ga[[1]].abs() + num.abs()).max(1e-10);
            assert!(rel < 1e-6, "dg[{bi}] rel err {rel}");
        }
        let glt = grads.wrt(ltv).unwrap();
        let mut plus = lt0.clone();
        plus[[0]] += h;
        let mut minus = lt0.clone();
        minus[[0]] -= h;
        let num = (eval(&vs0, &gs0, &plus).0 - eval(&vs0, &gs0, &minus).0) / (2.0 * h);
        let rel = (glt[[0]] - num).abs() / (glt[[0]].abs() + num.abs()).max(1e-10);
        assert!(rel < 1e-6, "d(log tau) rel err {rel}");
    }

    #[test]
    fn uniform_logits_give_ln_v() {
        let mut tape = Tape::new();
        let v = 7;
        let logits = tape.leaf(ArrayD::zeros(IxDyn(&[5, v])));
        let target = TokenSequence {
            ids: vec![crate::text::BOS, 4, 5, crate::text::EOS, 0, 0],
            length: 4,
        };
        let loss = caption_xe_loss(&mut tape, logits, &target);
        assert!((tape.scalar_value(loss) - (v as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_logits_give_near_zero_loss() {
        let mut tape = Tape::new();
        let target = TokenSequence {
            ids: vec![crate::text::BOS, 4, 5, crate::text::EOS, 0, 0],
            length: 4,
        };
        let mut l = ndarray::Array2::<f64>::zeros((5, 7));
        for t in 1..target.length {
            l[(t - 1, target.ids[t])] = 50.0;
        }
        let logits = tape.leaf(l.into_dyn());
        let loss = caption_xe_loss(&mut tape, logits, &target);
        assert!(tape.scalar_value(loss) < 1e-9);
    }

    #[test]
    fn xe_is_invariant_to_pad_position_logits() {
        let target = TokenSequence {
            ids: vec![crate::text::BOS, 4, crate::text::EOS, 0, 0, 0],
            length: 3,
        };
        let run = |pad_fill: f64| {
            let mut tape = Tape::new();
            let mut l = ndarray::Array2::<f64>::zeros((5, 7));
            for r in 2..5 {
                l.row_mut(r).fill(pad_fill);
            }
            let logits = tape.leaf(l.into_dyn());
            let loss = caption_xe_loss(&mut tape, logits, &target);
            tape.scalar_value(loss)
        };
        assert_eq!(run(0.0), run(123.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        /// Permuting the batch jointly leaves the loss unchanged.
        #[test]
        fn permutation_equivariance(seed in 0u64..1000, batch in 2usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vs0: Vec<ArrayD<f64>> = (0..batch)
                .map(|_| ArrayD::from_shape_fn(IxDyn(&[4]), |_| rng.gen_range(-1.0..1.0)))
                .collect();
            let gs0: Vec<ArrayD<f64>> = (0..batch)
                .map(|_| ArrayD::from_shape_fn(IxDyn(&[4]), |_| rng.gen_range(-1.0..1.0)))
                .collect();
            let eval = |vs: &[ArrayD<f64>], gs: &[ArrayD<f64>]| {
                let mut tape = Tape::new();
                let vv: Vec<Var> = vs.iter().map(|v| tape.leaf(v.clone())).collect();
                let gv: Vec<Var> = gs.iter().map(|g| tape.leaf(g.clone())).collect();
                let lt = tape.leaf(scalar(-0.5).into_shape(IxDyn(&[1])).unwrap());
                let l = contrastive_loss(&mut tape, &vv, &gv, lt);
                tape.scalar_value(l.total)
            };
            let base = eval(&vs0, &gs0);
            prop_assert!(base >= 0.0);
            let rot_v: Vec<ArrayD<f64>> = (0..batch).map(|i| vs0[(i + 1) % batch].clone()).collect();
            let rot_g: Vec<ArrayD<f64>> = (0..batch).map(|i| gs0[(i + 1) % batch].clone()).collect();
            prop_assert!((eval(&rot_v, &rot_g) - base).abs() < 1e-9);
            // Positive rescaling of one embedding is a no-op (cosine).
            let mut scaled = vs0.clone();
            scaled[0] = &scaled[0] * 3.7;
            prop_assert!((eval(&scaled, &gs0) - base).abs() < 1e-9);
        }
    }
}
