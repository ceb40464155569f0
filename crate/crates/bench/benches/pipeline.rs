//! Benchmarks for the three hot paths: the paired-image forward pass, one
//! contrastive training step, and the caption metric computations.

use criterion::{criterion_group, criterion_main, Criterion};
use diffcap_core::autograd::Tape;
use diffcap_core::eval::{bleu, cider_d, rouge_l};
use diffcap_core::model::{encode_pair, Bindings, ModelConfig, ParamStore, Stage};
use diffcap_core::nn::Dropout;
use diffcap_core::objectives::{contrastive_loss, pool_pair};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn desk_setup() -> (ModelConfig, ParamStore, Vec<(Array3<f64>, Array3<f64>)>) {
    let cfg = ModelConfig::desk(64);
    let store = ParamStore::init(&cfg, Stage::Adapt, 42);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pairs = (0..4)
        .map(|_| {
            let mut gen = |_| Array3::from_shape_fn((cfg.image_size, cfg.image_size, 3), |_| {
                rng.gen_range(0.0..1.0)
            });
            (gen(0), gen(1))
        })
        .collect();
    (cfg, store, pairs)
}

fn bench_encode_pair(c: &mut Criterion) {
    let (cfg, store, pairs) = desk_setup();
    c.bench_function("encode_pair_forward_desk", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let bind = Bindings::bind_all(&store, &mut tape);
            let v = encode_pair(
                &mut tape,
                &bind,
                &cfg,
                &pairs[0].0,
                &pairs[0].1,
                &mut Dropout::eval(),
                None,
            );
            std::hint::black_box(tape.value(v).sum())
        })
    });
}

fn bench_contrastive_step(c: &mut Criterion) {
    let (cfg, store, pairs) = desk_setup();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let texts: Vec<ndarray::ArrayD<f64>> = (0..pairs.len())
        .map(|_| ndarray::ArrayD::from_shape_fn(ndarray::IxDyn(&[cfg.d_t]), |_| rng.gen_range(-1.0..1.0)))
        .collect();
    c.bench_function("contrastive_step_b4_desk", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let bind = Bindings::bind_all(&store, &mut tape);
            let vs: Vec<_> = pairs
                .iter()
                .map(|(x1, x2)| {
                    let p = encode_pair(&mut tape, &bind, &cfg, x1, x2, &mut Dropout::eval(), None);
                    pool_pair(&mut tape, p, cfg.n())
                })
                .collect();
            let gs: Vec<_> = texts.iter().map(|t| tape.leaf(t.clone())).collect();
            let loss = contrastive_loss(&mut tape, &vs, &gs, bind.var("adapt.log_tau"));
            let grads = tape.backward(loss.total);
            std::hint::black_box(grads.wrt(bind.var("vision.proj")).map(|g| g.sum()))
        })
    });
}

fn bench_caption_metrics(c: &mut Criterion) {
    let colors = ["red", "green", "blue", "yellow", "purple", "orange"];
    let shapes = ["ball", "block", "triangle"];
    let candidates: Vec<String> = (0..100)
        .map(|i| format!("the {} {} moved", colors[i % 6], shapes[i % 3]))
        .collect();
    let references: Vec<Vec<String>> = (0..100)
        .map(|i| {
            vec![
                format!("the {} {} moved", colors[i % 6], shapes[i % 3]),
                format!("the {} {} changed its location", colors[(i + 1) % 6], shapes[i % 3]),
            ]
        })
        .collect();
    c.bench_function("caption_metrics_100_items", |b| {
        b.iter(|| {
            let bl = bleu(&candidates, &references, 4).unwrap();
            let rl = rouge_l(&candidates, &references).unwrap();
            let cd = cider_d(&candidates, &references).unwrap();
            std::hint::black_box((bl, rl, cd.mean))
        })
    });
}

criterion_group!(benches, bench_encode_pair, bench_contrastive_step, bench_caption_metrics);
criterion_main!(benches);
