//! Named parameter storage, deterministic initialization, and tape binding.

use super::{ModelConfig, Stage};
use crate::autograd::{Tape, Var};
use crate::nn::{AttnVars, BlockVars, DecoderBlockVars};
use indexmap::IndexMap;
use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Initial value of the learnable temperature (stored as a log-scale).
pub const LOG_TAU_INIT: f64 = -2.659_260_036_932_778; // ln(0.07)

enum Init {
    TruncNormal,
    Zeros,
    Ones,
    Const(f64),
}

/// All parameters of one stage, keyed by name in a stable insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub tensors: IndexMap<String, ArrayD<f64>>,
}

impl ParamStore {
    /// Deterministic random initialization: truncated normal (std 0.02) for
    /// weights; zeros for biases and for the pair token embeddings `e1`/`e2`
    /// and the joint positional embedding, so an untrained model treats the
    /// two halves symmetrically.
    pub fn init(cfg: &ModelConfig, stage: Stage, seed: u64) -> Self {
        let mut b = Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            tensors: IndexMap::new(),
        };
        b.vision(cfg);
        match stage {
            Stage::Adapt => {
                b.text(cfg);
                b.add("adapt.log_tau", &[1], Init::Const(LOG_TAU_INIT));
            }
            Stage::Caption => b.captioner(cfg),
        }
        Self { tensors: b.tensors }
    }

    pub fn get(&self, name: &str) -> &ArrayD<f64> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"))
    }
}

struct Builder {
    rng: ChaCha8Rng,
    tensors: IndexMap<String, ArrayD<f64>>,
}

impl Builder {
    fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::TruncNormal => (0..n).map(|_| trunc_normal(&mut self.rng, 0.02)).collect(),
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Const(c) => vec![c; n],
        };
        let prev = self
            .tensors
            .insert(name.into(), ArrayD::from_shape_vec(IxDyn(shape), data).unwrap());
        debug_assert!(prev.is_none(), "duplicate parameter name");
    }

    fn attn(&mut self, prefix: &str, d: usize) {
        for w in ["wq", "wk", "wv", "wo"] {
            self.add(format!("{prefix}.{w}"), &[d, d], Init::TruncNormal);
        }
        for b in ["bq", "bk", "bv", "bo"] {
            self.add(format!("{prefix}.{b}"), &[d], Init::Zeros);
        }
    }

    fn ln(&mut self, prefix: &str, d: usize) {
        self.add(format!("{prefix}.gamma"), &[d], Init::Ones);
        self.add(format!("{prefix}.beta"), &[d], Init::Zeros);
    }

    fn mlp(&mut self, prefix: &str, d: usize) {
        self.add(format!("{prefix}.w1"), &[d, 4 * d], Init::TruncNormal);
        self.add(format!("{prefix}.b1"), &[4 * d], Init::Zeros);
        self.add(format!("{prefix}.w2"), &[4 * d, d], Init::TruncNormal);
        self.add(format!("{prefix}.b2"), &[d], Init::Zeros);
    }

    fn block(&mut self, prefix: &str, d: usize) {
        self.ln(&format!("{prefix}.ln1"), d);
        self.attn(&format!("{prefix}.attn"), d);
        self.ln(&format!("{prefix}.ln2"), d);
        self.mlp(&format!("{prefix}.mlp"), d);
    }

    fn decoder_block(&mut self, prefix: &str, d: usize) {
        self.ln(&format!("{prefix}.ln1"), d);
        self.attn(&format!("{prefix}.self_attn"), d);
        self.ln(&format!("{prefix}.ln2"), d);
        self.attn(&format!("{prefix}.cross_attn"), d);
        self.ln(&format!("{prefix}.ln3"), d);
        self.mlp(&format!("{prefix}.mlp"), d);
    }

    fn vision(&mut self, cfg: &ModelConfig) {
        let d = cfg.d_i;
        let pp3 = cfg.patch_size * cfg.patch_size * 3;
        self.add("vision.patch_proj.weight", &[pp3, d], Init::TruncNormal);
        self.add("vision.cls", &[d], Init::TruncNormal);
        self.add("vision.pos", &[cfg.n() + 1, d], Init::TruncNormal);
        for i in 0..cfg.n_intra {
            self.block(&format!("vision.intra.{i}"), d);
        }
        self.add("vision.e1", &[d], Init::Zeros);
        self.add("vision.e2", &[d], Init::Zeros);
        self.add("vision.joint_pos", &[cfg.pair_len(), d], Init::Zeros);
        for i in 0..cfg.n_inter {
            self.block(&format!("vision.inter.{i}"), d);
        }
        self.ln("vision.ln_post", d);
        self.add("vision.proj", &[d, cfg.d_t], Init::TruncNormal);
    }

    fn text(&mut self, cfg: &ModelConfig) {
        let d = cfg.d_t;
        self.add("text.tok_embed", &[cfg.vocab_size, d], Init::TruncNormal);
        self.add("text.pos", &[cfg.l_max, d], Init::TruncNormal);
        for i in 0..cfg.n_g {
            self.block(&format!("text.layers.{i}"), d);
        }
        self.ln("text.ln_final", d);
    }

    fn captioner(&mut self, cfg: &ModelConfig) {
        let d = cfg.d_t;
        for i in 0..cfg.n_cap_enc {
            self.block(&format!("cap.enc.{i}"), d);
        }
        self.ln("cap.enc_ln", d);
        self.add("cap.tok_embed", &[cfg.vocab_size, d], Init::TruncNormal);
        self.add("cap.pos", &[cfg.l_max, d], Init::TruncNormal);
        for i in 0..cfg.n_cap_dec {
            self.decoder_block(&format!("cap.dec.{i}"), d);
        }
        self.ln("cap.ln_final", d);
        self.add("cap.out.weight", &[d, cfg.vocab_size], Init::TruncNormal);
        self.add("cap.out.bias", &[cfg.vocab_size], Init::Zeros);
    }
}

fn trunc_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    // Box-Muller, resampling outside two standard deviations.
    loop {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen::<f64>();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

/// Every parameter of a store bound onto a tape, by name.
pub struct Bindings {
    map: IndexMap<String, Var>,
}

impl Bindings {
    pub fn bind_all(store: &ParamStore, tape: &mut Tape) -> Self {
        let map = store
            .tensors
            .iter()
            .map(|(name, value)| (name.clone(), tape.leaf(value.clone())))
            .collect();
        Self { map }
    }

    pub fn var(&self, name: &str) -> Var {
        *self
            .map
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter '{name}'"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.map.iter().map(|(n, &v)| (n.as_str(), v))
    }

    pub(crate) fn attn(&self, prefix: &str) -> AttnVars {
        AttnVars {
            wq: self.var(&format!("{prefix}.wq")),
            bq: self.var(&format!("{prefix}.bq")),
            wk: self.var(&format!("{prefix}.wk")),
            bk: self.var(&format!("{prefix}.bk")),
            wv: self.var(&format!("{prefix}.wv")),
            bv: self.var(&format!("{prefix}.bv")),
            wo: self.var(&format!("{prefix}.wo")),
            bo: self.var(&format!("{prefix}.bo")),
        }
    }

    pub(crate) fn block(&self, prefix: &str) -> BlockVars {
        BlockVars {
            ln1_g: self.var(&format!("{prefix}.ln1.gamma")),
            ln1_b: self.var(&format!("{prefix}.ln1.beta")),
            attn: self.attn(&format!("{prefix}.attn")),
            ln2_g: self.var(&format!("{prefix}.ln2.gamma")),
            ln2_b: self.var(&format!("{prefix}.ln2.beta")),
            mlp_w1: self.var(&format!("{prefix}.mlp.w1")),
            mlp_b1: self.var(&format!("{prefix}.mlp.b1")),
            mlp_w2: self.var(&format!("{prefix}.mlp.w2")),
            mlp_b2: self.var(&format!("{prefix}.mlp.b2")),
        }
    }

    pub(crate) fn decoder_block(&self, prefix: &str) -> DecoderBlockVars {
        DecoderBlockVars {
            ln1_g: self.var(&format!("{prefix}.ln1.gamma")),
            ln1_b: self.var(&format!("{prefix}.ln1.beta")),
            self_attn: self.attn(&format!("{prefix}.self_attn")),
            ln2_g: self.var(&format!("{prefix}.ln2.gamma")),
            ln2_b: self.var(&format!("{prefix}.ln2.beta")),
            cross_attn: self.attn(&format!("{prefix}.cross_attn")),
            ln3_g: self.var(&format!("{prefix}.ln3.gamma")),
            ln3_b: self.var(&format!("{prefix}.ln3.beta")),
            mlp_w1: self.var(&format!("{prefix}.mlp.w1")),
            mlp_b1: self.var(&format!("{prefix}.mlp.b1")),
            mlp_w2: self.var(&format!("{prefix}.mlp.w2")),
            mlp_b2: self.var(&format!("{prefix}.mlp.b2")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_finite() {
        let cfg = ModelConfig::desk(50);
        let a = ParamStore::init(&cfg, Stage::Adapt, 42);
        let b = ParamStore::init(&cfg, Stage::Adapt, 42);
        assert_eq!(a, b);
        let c = ParamStore::init(&cfg, Stage::Adapt, 43);
        assert_ne!(a, c);
        for (name, t) in &a.tensors {
            assert!(t.iter().all(|v| v.is_finite()), "{name} not finite");
        }
    }

    #[test]
    fn pair_embeddings_start_at_zero() {
        let cfg = ModelConfig::desk(50);
        let s = ParamStore::init(&cfg, Stage::Adapt, 1);
        for name in ["vision.e1", "vision.e2", "vision.joint_pos"] {
            assert!(s.get(name).iter().all(|&v| v == 0.0), "{name} not zero");
        }
        assert!((s.get("adapt.log_tau")[[0]] - 0.07f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn caption_store_has_vision_and_captioner_only() {
        let cfg = ModelConfig::desk(50);
        let s = ParamStore::init(&cfg, Stage::Caption, 1);
        assert!(s.tensors.keys().any(|k| k.starts_with("cap.")));
        assert!(s.tensors.keys().all(|k| !k.starts_with("text.")));
        assert!(s.tensors.keys().any(|k| k.starts_with("vision.")));
    }
}
