//! `diffcap`: pipeline driver for the paired-image difference captioner.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
//! failure.

mod config;

use clap::{Parser, Subcommand};
use config::FlatConfig;
use diffcap_core::data::{
    generate_minichange, load_manifest, Dataset, GenSpec, RgbBuf, Split,
};
use diffcap_core::eval::{
    eval_captioning, eval_retrieval, MetricReport, Prediction,
};
use diffcap_core::model::{
    attention_heatmaps, encode_pair, encode_visual, greedy_decode, Bindings, PairAttention, Stage,
};
use diffcap_core::nn::Dropout;
use diffcap_core::text::{decode, Vocabulary};
use diffcap_core::training::{train_adapt, train_caption, write_loss_log, Checkpoint};
use diffcap_core::{Error, Result};
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Parser)]
#[command(name = "diffcap", version, about = "Two-stage difference captioning pipeline")]
struct Cli {
    /// TOML config file with flat dotted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set train.epochs=30 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic Mini-Change dataset.
    GenData,
    /// Build the word vocabulary from the train split.
    BuildVocab,
    /// Run the contrastive adaptation stage.
    Adapt,
    /// Fine-tune the captioner from an adaptation checkpoint.
    CaptionTrain {
        /// Initialization checkpoint; defaults to <out>/adapt.ckpt.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Skip the adaptation initialization and start from random weights.
        #[arg(long)]
        random_init: bool,
    },
    /// Evaluate pair/text retrieval on a split.
    EvalRetrieval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Greedy-decode a split and score the captions.
    EvalCaption {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Caption one image pair.
    Decode {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Ablate (N_intra, N_inter) splits at fixed total depth.
    SweepLayers {
        /// Comma-separated splits, e.g. 3:1,4:0.
        #[arg(long)]
        splits: String,
    },
    /// Export per-layer attention heatmaps for one image pair.
    ExportAttention {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are not failures.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(&cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = FlatConfig::load(cli.config.as_deref(), &cli.set)?;
    let out_dir = cfg.out_dir();
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    match &cli.command {
        Command::GenData => gen_data(&cfg),
        Command::BuildVocab => build_vocab(&cfg),
        Command::Adapt => adapt(&cfg),
        Command::CaptionTrain { init, random_init } => {
            caption_train(&cfg, init.as_deref(), *random_init)
        }
        Command::EvalRetrieval { checkpoint } => eval_retrieval_cmd(&cfg, checkpoint.as_deref()),
        Command::EvalCaption { checkpoint } => eval_caption_cmd(&cfg, checkpoint.as_deref()),
        Command::Decode {
            before,
            after,
            checkpoint,
        } => decode_cmd(&cfg, before, after, checkpoint.as_deref()),
        Command::SweepLayers { splits } => sweep_layers(&cfg, splits),
        Command::ExportAttention {
            before,
            after,
            checkpoint,
            out,
        } => export_attention(&cfg, before, after, checkpoint.as_deref(), out.as_deref()),
    }
}

fn eval_split(cfg: &FlatConfig) -> Result<Split> {
    Split::from_str(&cfg.get_str("eval.split", "test"))
}

fn load_pipeline_inputs(cfg: &FlatConfig) -> Result<(diffcap_core::data::Manifest, Dataset, Vocabulary)> {
    let manifest = load_manifest(&cfg.data_dir().join("manifest.jsonl"))?;
    let dataset = Dataset::load(&manifest)?;
    let vocab = Vocabulary::load(&cfg.vocab_path())?;
    Ok((manifest, dataset, vocab))
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let body = serde_json::to_string_pretty(value).expect("report serialization");
    std::fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
}

fn gen_data(cfg: &FlatConfig) -> Result<()> {
    let spec = GenSpec {
        seed: cfg.get("data.seed", 42u64)?,
        n_train: cfg.get("data.n_train", 600usize)?,
        n_val: cfg.get("data.n_val", 0usize)?,
        n_test: cfg.get("data.n_test", 100usize)?,
        image_size: cfg.get("data.image_size", 64usize)?,
    };
    let dir = cfg.data_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let manifest = generate_minichange(&spec, &dir)?;
    cfg.write_resolved(&dir, "gen-data")?;
    println!(
        "wrote {} records to {}",
        manifest.records.len(),
        dir.join("manifest.jsonl").display()
    );
    Ok(())
}

fn build_vocab(cfg: &FlatConfig) -> Result<()> {
    let manifest = load_manifest(&cfg.data_dir().join("manifest.jsonl"))?;
    let min_freq = cfg.get("vocab.min_freq", 1usize)?;
    let vocab = Vocabulary::build(&manifest, min_freq)?;
    let path = cfg.vocab_path();
    vocab.save(&path)?;
    cfg.write_resolved(&cfg.out_dir(), "build-vocab")?;
    println!("wrote {} tokens to {}", vocab.len(), path.display());
    Ok(())
}

fn adapt(cfg: &FlatConfig) -> Result<()> {
    let (manifest, dataset, vocab) = load_pipeline_inputs(cfg)?;
    let model = cfg.model_config(vocab.len())?;
    let tc = cfg.train_config()?;
    let (ck, log) = train_adapt(&manifest, &dataset, &vocab, &model, &tc)?;
    let out = cfg.out_dir();
    ck.save(&out.join("adapt.ckpt"))?;
    write_loss_log(&log, &out.join("adapt_loss.jsonl"))?;
    cfg.write_resolved(&out, "adapt")?;
    println!(
        "adapt: {} steps, final loss {:.6}, checkpoint {}",
        log.len(),
        log.last().map(|r| r.loss).unwrap_or(f64::NAN),
        out.join("adapt.ckpt").display()
    );
    Ok(())
}

fn caption_train(cfg: &FlatConfig, init: Option<&Path>, random_init: bool) -> Result<()> {
    let (manifest, dataset, vocab) = load_pipeline_inputs(cfg)?;
    let model = cfg.model_config(vocab.len())?;
    let tc = cfg.train_config()?;
    let init_ck = if random_init {
        let store = diffcap_core::model::ParamStore::init(&model, Stage::Adapt, tc.seed);
        Checkpoint::from_store(&store, &model, Stage::Adapt, 0, tc.seed)
    } else {
        let path = init
            .map(Path::to_path_buf)
            .unwrap_or_else(|| cfg.out_dir().join("adapt.ckpt"));
        Checkpoint::load(&path)?
    };
    let (ck, log) = train_caption(&manifest, &dataset, &vocab, &model, &tc, &init_ck)?;
    let out = cfg.out_dir();
    ck.save(&out.join("caption.ckpt"))?;
    write_loss_log(&log, &out.join("caption_loss.jsonl"))?;
    cfg.write_resolved(&out, "caption-train")?;
    println!(
        "caption-train: {} steps, final loss {:.6}, checkpoint {}",
        log.len(),
        log.last().map(|r| r.loss).unwrap_or(f64::NAN),
        out.join("caption.ckpt").display()
    );
    Ok(())
}

fn eval_retrieval_cmd(cfg: &FlatConfig, checkpoint: Option<&Path>) -> Result<()> {
    let (_, dataset, vocab) = load_pipeline_inputs(cfg)?;
    let path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir().join("adapt.ckpt"));
    let ck = Checkpoint::load(&path)?;
    let report = eval_retrieval(&ck, &dataset, &vocab, eval_split(cfg)?, &cfg.eval_ks()?)?;
    let out = cfg.out_dir();
    write_json(&report, &out.join("retrieval_report.json"))?;
    cfg.write_resolved(&out, "eval-retrieval")?;
    print_report(&report);
    Ok(())
}

fn eval_caption_cmd(cfg: &FlatConfig, checkpoint: Option<&Path>) -> Result<()> {
    let (_, dataset, vocab) = load_pipeline_inputs(cfg)?;
    let path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir().join("caption.ckpt"));
    let ck = Checkpoint::load(&path)?;
    let (report, predictions) = eval_captioning(&ck, &dataset, &vocab, eval_split(cfg)?)?;
    let out = cfg.out_dir();
    write_json(&report, &out.join("caption_report.json"))?;
    write_predictions(&predictions, &out.join("predictions.jsonl"))?;
    cfg.write_resolved(&out, "eval-caption")?;
    print_report(&report);
    Ok(())
}

fn write_predictions(preds: &[Prediction], path: &Path) -> Result<()> {
    let mut body = String::new();
    for p in preds {
        body.push_str(&serde_json::to_string(p).expect("prediction"));
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn print_report(report: &MetricReport) {
    println!("{}", serde_json::to_string_pretty(report).expect("report"));
}

fn load_image(path: &Path, expected: usize) -> Result<RgbBuf> {
    let img = RgbBuf::load_png(path)?;
    if img.size != expected {
        return Err(Error::Data(format!(
            "{}: expected {expected}x{expected} image, got {size}x{size}",
            path.display(),
            size = img.size,
        )));
    }
    Ok(img)
}

fn decode_cmd(cfg: &FlatConfig, before: &Path, after: &Path, checkpoint: Option<&Path>) -> Result<()> {
    let vocab = Vocabulary::load(&cfg.vocab_path())?;
    let path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir().join("caption.ckpt"));
    let ck = Checkpoint::load(&path)?;
    if ck.header.stage != Stage::Caption {
        return Err(Error::Config("decode needs a captioning-stage checkpoint".into()));
    }
    let model = &ck.header.config;
    let store = ck.to_store()?;
    let before = load_image(before, model.image_size)?;
    let after = load_image(after, model.image_size)?;
    let mut tape = diffcap_core::autograd::Tape::new();
    let b = Bindings::bind_all(&store, &mut tape);
    let pair = encode_pair(
        &mut tape,
        &b,
        model,
        &before.to_f64(),
        &after.to_f64(),
        &mut Dropout::eval(),
        None,
    );
    let memory = encode_visual(&mut tape, &b, model, pair, &mut Dropout::eval());
    let ids = greedy_decode(&mut tape, &b, model, memory, model.l_max - 2);
    println!("{}", decode(&vocab, &ids)?);
    Ok(())
}

fn parse_splits(raw: &str) -> Result<Vec<(usize, usize)>> {
    let splits: Result<Vec<(usize, usize)>> = raw
        .split(',')
        .map(|part| {
            let (a, b) = part
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("bad split '{part}' (expected intra:inter)")))?;
            let intra = a.trim().parse().map_err(|_| Error::Config(format!("bad split '{part}'")))?;
            let inter = b.trim().parse().map_err(|_| Error::Config(format!("bad split '{part}'")))?;
            Ok((intra, inter))
        })
        .collect();
    let splits = splits?;
    if splits.is_empty() {
        return Err(Error::Config("no layer splits given".into()));
    }
    let total = splits[0].0 + splits[0].1;
    for &(a, b) in &splits {
        if a + b != total {
            return Err(Error::Config(format!(
                "layer splits must share a total depth; {a}:{b} differs from {total}"
            )));
        }
    }
    Ok(splits)
}

#[derive(serde::Serialize)]
struct SweepRow {
    n_intra: usize,
    n_inter: usize,
    retrieval_r1_pair_to_text: f64,
    retrieval_r1_text_to_pair: f64,
    cider_d: f64,
}

fn sweep_layers(cfg: &FlatConfig, splits: &str) -> Result<()> {
    let splits = parse_splits(splits)?;
    let (manifest, dataset, vocab) = load_pipeline_inputs(cfg)?;
    let tc = cfg.train_config()?;
    let split = eval_split(cfg)?;
    let mut rows = Vec::new();
    for (n_intra, n_inter) in splits {
        let mut model = cfg.model_config(vocab.len())?;
        model.n_intra = n_intra;
        model.n_inter = n_inter;
        model.validate()?;
        let (adapt_ck, _) = train_adapt(&manifest, &dataset, &vocab, &model, &tc)?;
        let retrieval = eval_retrieval(&adapt_ck, &dataset, &vocab, split, &[1])?;
        let mut cap_tc = tc.clone();
        cap_tc.freeze_vision = true;
        let (cap_ck, _) = train_caption(&manifest, &dataset, &vocab, &model, &cap_tc, &adapt_ck)?;
        let (cap_report, _) = eval_captioning(&cap_ck, &dataset, &vocab, split)?;
        let dirs = retrieval.retrieval.expect("retrieval section").directions;
        rows.push(SweepRow {
            n_intra,
            n_inter,
            retrieval_r1_pair_to_text: dirs["pair_to_text"].recall[&1],
            retrieval_r1_text_to_pair: dirs["text_to_pair"].recall[&1],
            cider_d: cap_report.captioning.expect("caption section").cider_d,
        });
    }
    let out = cfg.out_dir();
    write_json(&rows, &out.join("sweep_layers.json"))?;
    cfg.write_resolved(&out, "sweep-layers")?;
    println!("intra:inter  R@1 IP-T  R@1 T-IP  CIDEr-D");
    for r in &rows {
        println!(
            "{:>5}:{:<5} {:>8.1} {:>9.1} {:>8.3}",
            r.n_intra, r.n_inter, r.retrieval_r1_pair_to_text, r.retrieval_r1_text_to_pair, r.cider_d
        );
    }
    Ok(())
}

fn export_attention(
    cfg: &FlatConfig,
    before: &Path,
    after: &Path,
    checkpoint: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir().join("adapt.ckpt"));
    let ck = Checkpoint::load(&path)?;
    let model = &ck.header.config;
    let store = ck.to_store()?;
    let before = load_image(before, model.image_size)?;
    let after = load_image(after, model.image_size)?;
    let mut tape = diffcap_core::autograd::Tape::new();
    let b = Bindings::bind_all(&store, &mut tape);
    let mut capture = PairAttention::default();
    let _ = encode_pair(
        &mut tape,
        &b,
        model,
        &before.to_f64(),
        &after.to_f64(),
        &mut Dropout::eval(),
        Some(&mut capture),
    );
    let maps = attention_heatmaps(&capture, model);
    let json: Vec<Vec<Vec<Vec<f64>>>> = maps
        .iter()
        .map(|image| {
            image
                .iter()
                .map(|grid| grid.rows().into_iter().map(|r| r.to_vec()).collect())
                .collect()
        })
        .collect();
    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir().join("attention.json"));
    write_json(&json, &out_path)?;
    cfg.write_resolved(&cfg.out_dir(), "export-attention")?;
    println!(
        "wrote class-token heatmaps ({} layers per image) to {}",
        json[0].len(),
        out_path.display()
    );
    Ok(())
}
