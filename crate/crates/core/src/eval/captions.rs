//! Corpus caption metrics: BLEU, ROUGE-L, CIDEr-D.

use crate::error::{Error, Result};
use crate::text::tokenize;
use std::collections::HashMap;

/// ROUGE-L F-measure weight (beta squared).
pub const ROUGE_BETA_SQ: f64 = 1.44;
/// CIDEr-D gaussian length-penalty width.
pub const CIDER_SIGMA: f64 = 6.0;
/// CIDEr-D final scale.
pub const CIDER_SCALE: f64 = 10.0;

fn validate(candidates: &[String], references: &[Vec<String>]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::Data("empty caption corpus".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Data(format!(
            "{} candidates but {} reference lists",
            candidates.len(),
            references.len()
        )));
    }
    if let Some(i) = references.iter().position(Vec::is_empty) {
        return Err(Error::Data(format!("item {i} has no references")));
    }
    Ok(())
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<Vec<String>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU with modified n-gram precisions (n = 1..max_n), no smoothing,
/// and the closest-reference-length brevity penalty. Zero if any precision
/// is zero.
pub fn bleu(candidates: &[String], references: &[Vec<String>], max_n: usize) -> Result<f64> {
    validate(candidates, references)?;
    assert!(max_n >= 1);
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (cand, refs) in candidates.iter().zip(references) {
        let ct = tokenize(cand);
        let rts: Vec<Vec<String>> = refs.iter().map(|r| tokenize(r)).collect();
        cand_len += ct.len();
        // Closest reference length; ties resolved toward the shorter one.
        ref_len += rts
            .iter()
            .map(Vec::len)
            .min_by_key(|&l| (l.abs_diff(ct.len()), l))
            .unwrap();
        for n in 1..=max_n {
            let cc = ngram_counts(&ct, n);
            let mut max_ref: HashMap<Vec<String>, usize> = HashMap::new();
            for rt in &rts {
                for (g, c) in ngram_counts(rt, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, &c) in &cc {
                total[n - 1] += c;
                matched[n - 1] += c.min(*max_ref.get(g).unwrap_or(&0));
            }
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..max_n {
        if matched[n] == 0 || total[n] == 0 {
            return Ok(0.0);
        }
        log_sum += (matched[n] as f64 / total[n] as f64).ln();
    }
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(bp * (log_sum / max_n as f64).exp())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Mean over items of the LCS F-measure (beta^2 = 1.44); multi-reference
/// items take the maximum over their references.
pub fn rouge_l(candidates: &[String], references: &[Vec<String>]) -> Result<f64> {
    validate(candidates, references)?;
    let mut sum = 0.0;
    for (cand, refs) in candidates.iter().zip(references) {
        let ct = tokenize(cand);
        let mut best = 0.0f64;
        for r in refs {
            let rt = tokenize(r);
            let l = lcs_len(&ct, &rt);
            if l == 0 || ct.is_empty() || rt.is_empty() {
                continue;
            }
            let p = l as f64 / ct.len() as f64;
            let rc = l as f64 / rt.len() as f64;
            let f = (1.0 + ROUGE_BETA_SQ) * p * rc / (rc + ROUGE_BETA_SQ * p);
            best = best.max(f);
        }
        sum += best;
    }
    Ok(sum / candidates.len() as f64)
}

/// CIDEr-D per-item scores in `[0, 10]` plus the corpus mean. Standard
/// formulation: tf-idf n-gram vectors (n = 1..4) with idf from the reference
/// corpus, count clipping, gaussian length penalty, average over n, x10.
pub struct CiderScores {
    pub mean: f64,
    pub per_item: Vec<f64>,
}

pub fn cider_d(candidates: &[String], references: &[Vec<String>]) -> Result<CiderScores> {
    validate(candidates, references)?;
    let n_items = candidates.len();
    if n_items < 2 {
        return Err(Error::Data(
            "CIDEr-D needs at least 2 items for a meaningful idf".into(),
        ));
    }
    const MAX_N: usize = 4;
    // Document frequency over reference sets: one count per item in which the
    // n-gram appears in any reference.
    let ref_tokens: Vec<Vec<Vec<String>>> = references
        .iter()
        .map(|refs| refs.iter().map(|r| tokenize(r)).collect())
        .collect();
    let mut df: HashMap<Vec<String>, f64> = HashMap::new();
    for refs in &ref_tokens {
        let mut seen: HashMap<Vec<String>, ()> = HashMap::new();
        for rt in refs {
            for n in 1..=MAX_N {
                for g in ngram_counts(rt, n).into_keys() {
                    seen.entry(g).or_insert(());
                }
            }
        }
        for g in seen.into_keys() {
            *df.entry(g).or_insert(0.0) += 1.0;
        }
    }
    let log_n = (n_items as f64).ln();
    let idf = |g: &Vec<String>| log_n - df.get(g).copied().unwrap_or(0.0).max(1.0).ln();

    let mut per_item = Vec::with_capacity(n_items);
    for (cand, refs) in candidates.iter().zip(&ref_tokens) {
        let ct = tokenize(cand);
        let c_counts: Vec<HashMap<Vec<String>, usize>> =
            (1..=MAX_N).map(|n| ngram_counts(&ct, n)).collect();
        let c_vecs: Vec<HashMap<&Vec<String>, f64>> = c_counts
            .iter()
            .map(|m| m.iter().map(|(g, &c)| (g, c as f64 * idf(g))).collect())
            .collect();
        let c_norms: Vec<f64> = c_vecs
            .iter()
            .map(|v| v.values().map(|x| x * x).sum::<f64>().sqrt())
            .collect();

        let mut score_n = [0.0f64; MAX_N];
        for rt in refs {
            let delta = ct.len() as f64 - rt.len() as f64;
            let len_pen = (-delta * delta / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
            for n in 0..MAX_N {
                let r_counts = ngram_counts(rt, n + 1);
                let r_vec: HashMap<&Vec<String>, f64> = r_counts
                    .iter()
                    .map(|(g, &c)| (g, c as f64 * idf(g)))
                    .collect();
                let r_norm = r_vec.values().map(|x| x * x).sum::<f64>().sqrt();
                if c_norms[n] == 0.0 || r_norm == 0.0 {
                    continue;
                }
                // Clipped numerator: min(candidate, reference) tf-idf against
                // the reference vector.
                let mut num = 0.0;
                for (g, &cv) in &c_vecs[n] {
                    if let Some(&rv) = r_vec.get(*g) {
                        num += cv.min(rv) * rv;
                    }
                }
                score_n[n] += len_pen * num / (c_norms[n] * r_norm);
            }
        }
        let nrefs = refs.len() as f64;
        let score: f64 = score_n.iter().map(|s| s / nrefs).sum::<f64>() / MAX_N as f64;
        per_item.push(CIDER_SCALE * score);
    }
    let mean = per_item.iter().sum::<f64>() / n_items as f64;
    Ok(CiderScores { mean, per_item })
}
