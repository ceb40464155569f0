//! Retrieval and captioning evaluation with report emission.

mod captions;
mod rank;

pub use captions::{bleu, cider_d, rouge_l, CiderScores, CIDER_SCALE, CIDER_SIGMA, ROUGE_BETA_SQ};
pub use rank::{ground_truth_ranks, rank_metrics, RankMetrics, TIE_RULE};

use crate::autograd::Tape;
use crate::data::{ChangeType, Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{encode_pair, encode_text, encode_visual, greedy_decode, Bindings, ModelConfig, Stage};
use crate::nn::Dropout;
use crate::objectives::{cosine_sim, pool_pair};
use crate::text::{decode, encode, Vocabulary};
use crate::training::Checkpoint;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

/// Default recall cutoffs.
pub const DEFAULT_KS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSection {
    /// Keyed by direction: `pair_to_text`, `text_to_pair`.
    pub directions: BTreeMap<String, RankMetrics>,
    pub tie_rule: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptioningSection {
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider_d: f64,
    /// Reserved for externally computed scores; never filled in here.
    pub meteor: Option<f64>,
    pub cider_d_by_type: BTreeMap<String, f64>,
    pub count_by_type: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub split: String,
    pub sample_count: usize,
    pub config_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<RetrievalSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub captioning: Option<CaptioningSection>,
}

/// One decoded test item, emitted line-by-line for external rescoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub caption: String,
    pub references: Vec<String>,
    pub change_type: ChangeType,
}

/// Short stable digest of a model configuration for report provenance.
pub fn config_digest(cfg: &ModelConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serialization");
    let hash = Sha256::digest(&json);
    hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn split_samples<'a>(dataset: &'a Dataset, split: Split) -> Result<Vec<&'a crate::data::LoadedSample>> {
    let samples: Vec<_> = dataset
        .samples
        .iter()
        .filter(|s| s.record.split == split)
        .collect();
    if samples.is_empty() {
        return Err(Error::Data(format!("split '{}' is empty", split.as_str())));
    }
    Ok(samples)
}

/// Full-split similarity matrix: rows are image pairs, columns are each
/// record's first caption, diagonal entries are the ground-truth matches.
pub fn similarity_matrix(
    ck: &Checkpoint,
    dataset: &Dataset,
    vocab: &Vocabulary,
    split: Split,
) -> Result<Array2<f64>> {
    if ck.header.stage != Stage::Adapt {
        return Err(Error::Config(
            "retrieval evaluation needs an adaptation-stage checkpoint".into(),
        ));
    }
    let store = ck.to_store()?;
    let cfg = &ck.header.config;
    let samples = split_samples(dataset, split)?;
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(samples.len());
    let mut gs: Vec<Vec<f64>> = Vec::with_capacity(samples.len());
    for sample in &samples {
        let mut tape = Tape::new();
        let b = Bindings::bind_all(&store, &mut tape);
        let pair = encode_pair(
            &mut tape,
            &b,
            cfg,
            &sample.before.to_f64(),
            &sample.after.to_f64(),
            &mut Dropout::eval(),
            None,
        );
        let v = pool_pair(&mut tape, pair, cfg.n());
        vs.push(tape.value(v).iter().copied().collect());
        let target = encode(vocab, &sample.record.captions[0], cfg.l_max)?;
        let g = encode_text(&mut tape, &b, cfg, &target, &mut Dropout::eval());
        gs.push(tape.value(g).iter().copied().collect());
    }
    let b = samples.len();
    let mut s = Array2::zeros((b, b));
    for i in 0..b {
        for j in 0..b {
            s[(i, j)] = cosine_sim(&vs[i], &gs[j])?;
        }
    }
    Ok(s)
}

/// Retrieval evaluation in both directions over one split.
pub fn eval_retrieval(
    ck: &Checkpoint,
    dataset: &Dataset,
    vocab: &Vocabulary,
    split: Split,
    ks: &[usize],
) -> Result<MetricReport> {
    let s = similarity_matrix(ck, dataset, vocab, split)?;
    let mut directions = BTreeMap::new();
    directions.insert("pair_to_text".to_string(), rank_metrics(&s, ks)?);
    directions.insert("text_to_pair".to_string(), rank_metrics(&s.t().to_owned(), ks)?);
    Ok(MetricReport {
        split: split.as_str().to_string(),
        sample_count: s.nrows(),
        config_digest: config_digest(&ck.header.config),
        retrieval: Some(RetrievalSection {
            directions,
            tie_rule: TIE_RULE.to_string(),
        }),
        captioning: None,
    })
}

/// Greedy-decode one split and score the generated captions.
pub fn eval_captioning(
    ck: &Checkpoint,
    dataset: &Dataset,
    vocab: &Vocabulary,
    split: Split,
) -> Result<(MetricReport, Vec<Prediction>)> {
    if ck.header.stage != Stage::Caption {
        return Err(Error::Config(
            "caption evaluation needs a captioning-stage checkpoint".into(),
        ));
    }
    let store = ck.to_store()?;
    let cfg = &ck.header.config;
    let samples = split_samples(dataset, split)?;
    let mut predictions = Vec::with_capacity(samples.len());
    for sample in &samples {
        let mut tape = Tape::new();
        let b = Bindings::bind_all(&store, &mut tape);
        let pair = encode_pair(
            &mut tape,
            &b,
            cfg,
            &sample.before.to_f64(),
            &sample.after.to_f64(),
            &mut Dropout::eval(),
            None,
        );
        let memory = encode_visual(&mut tape, &b, cfg, pair, &mut Dropout::eval());
        let ids = greedy_decode(&mut tape, &b, cfg, memory, cfg.l_max - 2);
        predictions.push(Prediction {
            id: sample.record.id.clone(),
            caption: decode(vocab, &ids)?,
            references: sample.record.captions.clone(),
            change_type: sample.record.change_type,
        });
    }
    let report = score_predictions(&predictions, split, config_digest(cfg))?;
    Ok((report, predictions))
}

/// Score already decoded predictions; exposed so external caption sets can be
/// rescored without a checkpoint.
pub fn score_predictions(
    predictions: &[Prediction],
    split: Split,
    config_digest: String,
) -> Result<MetricReport> {
    let candidates: Vec<String> = predictions.iter().map(|p| p.caption.clone()).collect();
    let references: Vec<Vec<String>> = predictions.iter().map(|p| p.references.clone()).collect();
    let bleu4 = bleu(&candidates, &references, 4)?;
    let rl = rouge_l(&candidates, &references)?;
    let cd = cider_d(&candidates, &references)?;

    let mut cider_d_by_type: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (p, &score) in predictions.iter().zip(&cd.per_item) {
        let e = cider_d_by_type
            .entry(p.change_type.as_str().to_string())
            .or_insert((0.0, 0));
        e.0 += score;
        e.1 += 1;
    }
    let count_by_type: BTreeMap<String, usize> =
        cider_d_by_type.iter().map(|(k, &(_, c))| (k.clone(), c)).collect();
    let cider_d_by_type: BTreeMap<String, f64> = cider_d_by_type
        .into_iter()
        .map(|(k, (sum, c))| (k, sum / c as f64))
        .collect();

    Ok(MetricReport {
        split: split.as_str().to_string(),
        sample_count: predictions.len(),
        config_digest,
        retrieval: None,
        captioning: Some(CaptioningSection {
            bleu4,
            rouge_l: rl,
            cider_d: cd.mean,
            meteor: None,
            cider_d_by_type,
            count_by_type,
        }),
    })
}

/// Classify a generated caption by its template keywords. Priority order
/// resolves shared words ("became" appears in color and texture templates).
pub fn change_type_from_caption(caption: &str) -> Option<ChangeType> {
    let c = caption.to_lowercase();
    let words = crate::text::tokenize(&c);
    let has = |w: &str| words.iter().any(|t| t == w);
    if c.contains("no change") || c.contains("no difference") {
        Some(ChangeType::Distractor)
    } else if has("striped") || has("solid") {
        Some(ChangeType::Texture)
    } else if has("moved") || has("location") {
        Some(ChangeType::Move)
    } else if has("added") || has("new") {
        Some(ChangeType::Add)
    } else if has("missing") || has("removed") {
        Some(ChangeType::Drop)
    } else if has("became") || c.contains("changed to") {
        Some(ChangeType::Color)
    } else {
        None
    }
}
