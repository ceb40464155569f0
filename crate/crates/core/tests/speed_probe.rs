use diffcap_core::data::{generate_minichange, load_manifest, Dataset, GenSpec, Split};
use diffcap_core::eval::{eval_retrieval, MetricReport};
use diffcap_core::model::ModelConfig;
use diffcap_core::text::Vocabulary;
use diffcap_core::training::{train_adapt, TrainConfig};

fn r1(r: &MetricReport) -> (f64, f64) {
    let s = r.retrieval.clone().unwrap();
    (s.directions["pair_to_text"].recall[&1], s.directions["text_to_pair"].recall[&1])
}

#[test]
#[ignore]
fn lr_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let spec = GenSpec { seed: 42, n_train: 240, n_val: 0, n_test: 60, image_size: 64 };
    generate_minichange(&spec, dir.path()).unwrap();
    let manifest = load_manifest(&dir.path().join("manifest.jsonl")).unwrap();
    let dataset = Dataset::load(&manifest).unwrap();
    let vocab = Vocabulary::build(&manifest, 1).unwrap();
    let cfg = ModelConfig::desk(vocab.len());
    for (bs, lr_v, lr_t) in [
        (8usize, 6e-4, 1e-4),
        (8, 6e-4, 3e-4),
        (8, 3e-4, 3e-4),
        (8, 1e-3, 3e-4),
        (16, 6e-4, 3e-4),
    ] {
        let mut tc = TrainConfig::desk(42);
        tc.epochs = 40;
        tc.batch_size = bs;
        tc.lr_adapt = lr_t;
        tc.lr_vision = lr_v;
        let (ck, log) = train_adapt(&manifest, &dataset, &vocab, &cfg, &tc).unwrap();
        let spe = log.len() / tc.epochs;
        let loss: f64 = log[log.len() - spe..].iter().map(|r| r.loss).sum::<f64>() / spe as f64;
        let tau = ck.tensors["adapt.log_tau"].data[0].exp();
        let tr = eval_retrieval(&ck, &dataset, &vocab, Split::Train, &[1]).unwrap();
        let te = eval_retrieval(&ck, &dataset, &vocab, Split::Test, &[1]).unwrap();
        println!(
            "bs={bs} lr_v={lr_v} lr_t={lr_t} loss {loss:.3} tau {tau:.4} train {:?} test {:?}",
            r1(&tr),
            r1(&te)
        );
    }
}
