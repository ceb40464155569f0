//! Two-stage training: contrastive adaptation, then captioning fine-tune.

mod checkpoint;

pub use checkpoint::{caption_store_from, Checkpoint, CheckpointHeader, Tensor32};

use crate::autograd::Tape;
use crate::data::{batch_iter, mix_seed, Dataset, Manifest, SampleRef, Split};
use crate::error::{Error, Result};
use crate::model::{caption_forward, encode_pair, encode_text, Bindings, ModelConfig, ParamStore, Stage};
use crate::nn::Dropout;
use crate::objectives::{caption_xe_loss, contrastive_loss, pool_pair, TAU_MAX, TAU_MIN};
use crate::text::{encode, Vocabulary};
use indexmap::IndexMap;
use ndarray::ArrayD;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Global gradient-norm clip threshold; clipping is noted in the loss log.
pub const GRAD_CLIP: f64 = 1.0;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate for `vision.*` parameters.
    pub lr_vision: f64,
    /// Learning rate for `cap.*` parameters (captioning stage).
    pub lr_caption: f64,
    /// Learning rate for `text.*` and `adapt.*` parameters (adaptation stage).
    pub lr_adapt: f64,
    pub seed: u64,
    /// Captioning stage only: leave every `vision.*` tensor untouched.
    pub freeze_vision: bool,
}

impl TrainConfig {
    pub fn desk(seed: u64) -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            // Adam moves each weight by roughly lr per step regardless of
            // gradient scale; 1e-3 overruns the 0.02-std init and collapses
            // the contrastive stage, 1e-4 trains stably.
            lr_vision: 1e-4,
            lr_caption: 1e-3,
            lr_adapt: 1e-4,
            seed,
            freeze_vision: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        for (name, lr) in [
            ("lr_vision", self.lr_vision),
            ("lr_caption", self.lr_caption),
            ("lr_adapt", self.lr_adapt),
        ] {
            if !(lr > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }

    fn lr_for(&self, name: &str) -> f64 {
        if name.starts_with("vision.") {
            self.lr_vision
        } else if name.starts_with("cap.") {
            self.lr_caption
        } else {
            self.lr_adapt
        }
    }
}

/// One line of the loss log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub components: BTreeMap<String, f64>,
}

pub fn write_loss_log(records: &[LossRecord], path: &std::path::Path) -> Result<()> {
    let mut body = String::new();
    for r in records {
        body.push_str(&serde_json::to_string(r).expect("loss record"));
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Adam with decoupled first/second-moment state per named tensor.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    t: usize,
    m: IndexMap<String, ArrayD<f64>>,
    v: IndexMap<String, ArrayD<f64>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Self {
            beta1,
            beta2,
            t: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    /// Betas for a stage: the adaptation stage uses the contrastive
    /// pretraining convention beta2 = 0.98.
    pub fn for_stage(stage: Stage) -> Self {
        match stage {
            Stage::Adapt => Self::new(0.9, 0.98),
            Stage::Caption => Self::new(0.9, 0.999),
        }
    }

    /// Apply one update. Gradients are pre-clipped by the caller; tensors
    /// without a gradient entry are left untouched.
    pub fn step<F: Fn(&str) -> f64>(
        &mut self,
        store: &mut ParamStore,
        grads: &IndexMap<String, ArrayD<f64>>,
        lr_for: F,
    ) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, g) in grads {
            let lr = lr_for(name);
            let p = store.tensors.get_mut(name).expect("gradient for unknown tensor");
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *p -= lr * mh / (vh.sqrt() + ADAM_EPS);
                });
        }
    }
}

/// Scale all gradients so their global L2 norm is at most [`GRAD_CLIP`].
/// Returns true when clipping fired.
fn clip_gradients(grads: &mut IndexMap<String, ArrayD<f64>>) -> bool {
    let sq: f64 = grads.values().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum();
    let norm = sq.sqrt();
    if norm > GRAD_CLIP {
        let scale = GRAD_CLIP / norm;
        for g in grads.values_mut() {
            *g *= scale;
        }
        true
    } else {
        false
    }
}

fn collect_gradients(
    bindings: &Bindings,
    grads: &crate::autograd::Gradients,
) -> IndexMap<String, ArrayD<f64>> {
    let mut out = IndexMap::new();
    for (name, var) in bindings.iter() {
        if let Some(g) = grads.wrt(var) {
            out.insert(name.to_string(), g.clone());
        }
    }
    out
}

fn check_finite(loss: f64, stage: Stage, epoch: usize, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "non-finite loss {loss} at stage {stage:?} epoch {epoch} step {step}"
        )))
    }
}

fn encode_refs(
    manifest: &Manifest,
    vocab: &Vocabulary,
    l_max: usize,
    batch: &[SampleRef],
) -> Result<Vec<crate::text::TokenSequence>> {
    batch
        .iter()
        .map(|s| {
            let r = &manifest.records[s.index];
            encode(vocab, &r.captions[s.caption], l_max)
        })
        .collect()
}

/// Adaptation stage: optimize the symmetric contrastive loss over the vision
/// encoder, language encoder, and temperature. Deterministic given the seed.
pub fn train_adapt(
    manifest: &Manifest,
    dataset: &Dataset,
    vocab: &Vocabulary,
    cfg: &ModelConfig,
    tc: &TrainConfig,
) -> Result<(Checkpoint, Vec<LossRecord>)> {
    cfg.validate()?;
    tc.validate()?;
    let mut store = ParamStore::init(cfg, Stage::Adapt, tc.seed);
    let mut opt = Adam::for_stage(Stage::Adapt);
    let mut log = Vec::new();
    let mut step = 0usize;
    let log_tau_bounds = (TAU_MIN.ln(), TAU_MAX.ln());

    for epoch in 0..tc.epochs {
        let batches = batch_iter(manifest, Split::Train, tc.batch_size, tc.seed, epoch as u64, false)?;
        for batch in batches {
            let targets = encode_refs(manifest, vocab, cfg.l_max, &batch)?;
            let mut tape = Tape::new();
            let b = Bindings::bind_all(&store, &mut tape);
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[tc.seed, step as u64, 1]));
            let mut vs = Vec::with_capacity(batch.len());
            let mut gs = Vec::with_capacity(batch.len());
            for (sref, target) in batch.iter().zip(&targets) {
                let sample = &dataset.samples[sref.index];
                let mut drop = dropout_ctx(cfg, &mut rng);
                let pair = encode_pair(
                    &mut tape,
                    &b,
                    cfg,
                    &sample.before.to_f64(),
                    &sample.after.to_f64(),
                    &mut drop,
                    None,
                );
                vs.push(pool_pair(&mut tape, pair, cfg.n()));
                let mut drop = dropout_ctx(cfg, &mut rng);
                gs.push(encode_text(&mut tape, &b, cfg, target, &mut drop));
            }
            let loss = contrastive_loss(&mut tape, &vs, &gs, b.var("adapt.log_tau"));
            let total = tape.scalar_value(loss.total);
            check_finite(total, Stage::Adapt, epoch, step)?;
            let i2t = tape.scalar_value(loss.i2t);
            let t2i = tape.scalar_value(loss.t2i);

            let g = tape.backward(loss.total);
            let mut grads = collect_gradients(&b, &g);
            let clipped = clip_gradients(&mut grads);
            opt.step(&mut store, &grads, |name| tc.lr_for(name));
            let lt = store.tensors.get_mut("adapt.log_tau").unwrap();
            lt[[0]] = lt[[0]].clamp(log_tau_bounds.0, log_tau_bounds.1);

            let mut components = BTreeMap::new();
            components.insert("i2t".into(), i2t);
            components.insert("t2i".into(), t2i);
            components.insert("tau".into(), store.get("adapt.log_tau")[[0]].exp());
            if clipped {
                components.insert("grad_clipped".into(), 1.0);
            }
            log.push(LossRecord {
                stage: Stage::Adapt,
                epoch,
                step,
                loss: total,
                components,
            });
            step += 1;
        }
    }
    let ck = Checkpoint::from_store(&store, cfg, Stage::Adapt, tc.epochs, tc.seed);
    Ok((ck, log))
}

/// Captioning stage: teacher-forced cross-entropy from an adaptation (or any
/// compatible) initialization; `freeze_vision` leaves `vision.*` untouched.
pub fn train_caption(
    manifest: &Manifest,
    dataset: &Dataset,
    vocab: &Vocabulary,
    cfg: &ModelConfig,
    tc: &TrainConfig,
    init: &Checkpoint,
) -> Result<(Checkpoint, Vec<LossRecord>)> {
    cfg.validate()?;
    tc.validate()?;
    let mut store = caption_store_from(init, cfg, tc.seed)?;
    let mut opt = Adam::for_stage(Stage::Caption);
    let mut log = Vec::new();
    let mut step = 0usize;

    for epoch in 0..tc.epochs {
        let batches = batch_iter(manifest, Split::Train, tc.batch_size, tc.seed, epoch as u64, false)?;
        for batch in batches {
            let targets = encode_refs(manifest, vocab, cfg.l_max, &batch)?;
            let mut tape = Tape::new();
            let b = Bindings::bind_all(&store, &mut tape);
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[tc.seed, step as u64, 2]));
            let mut terms = Vec::with_capacity(batch.len());
            for (sref, target) in batch.iter().zip(&targets) {
                let sample = &dataset.samples[sref.index];
                let mut drop = dropout_ctx(cfg, &mut rng);
                let pair = encode_pair(
                    &mut tape,
                    &b,
                    cfg,
                    &sample.before.to_f64(),
                    &sample.after.to_f64(),
                    &mut drop,
                    None,
                );
                let mut drop = dropout_ctx(cfg, &mut rng);
                let logits = caption_forward(&mut tape, &b, cfg, pair, target, &mut drop);
                terms.push(caption_xe_loss(&mut tape, logits, target));
            }
            let stacked = tape.stack_scalars(&terms);
            let summed = tape.sum(stacked);
            let loss = tape.scale(summed, 1.0 / terms.len() as f64);
            let total = tape.scalar_value(loss);
            check_finite(total, Stage::Caption, epoch, step)?;

            let g = tape.backward(loss);
            let mut grads = collect_gradients(&b, &g);
            if tc.freeze_vision {
                grads.retain(|name, _| !name.starts_with("vision."));
            }
            let clipped = clip_gradients(&mut grads);
            opt.step(&mut store, &grads, |name| tc.lr_for(name));

            let mut components = BTreeMap::new();
            components.insert("xe".into(), total);
            if clipped {
                components.insert("grad_clipped".into(), 1.0);
            }
            log.push(LossRecord {
                stage: Stage::Caption,
                epoch,
                step,
                loss: total,
                components,
            });
            step += 1;
        }
    }
    let ck = Checkpoint::from_store(&store, cfg, Stage::Caption, tc.epochs, tc.seed);
    Ok((ck, log))
}

fn dropout_ctx<'a>(cfg: &ModelConfig, rng: &'a mut ChaCha8Rng) -> Dropout<'a> {
    if cfg.dropout > 0.0 {
        Dropout::train(cfg.dropout, rng)
    } else {
        Dropout::eval()
    }
}
