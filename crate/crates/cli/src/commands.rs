use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};

use sarl::aligner::{DistanceProvider, FileTeacher, LexiconTeacher, Teacher, TreeDistances};
use sarl::antibias::PriorLexicon;
use sarl::data::{build_vocab, gen_synthetic, load_dataset, write_dataset, Dataset, SyntheticSpec, Vocab};
use sarl::metrics::{bias_report, MetricsReport};
use sarl::model::{
    predict, prepare_dataset, train, write_predictions, ForwardOptions, ModelConfig, Prediction, Resources, SarlModel,
};
use sarl::numerics::{load_checkpoint, save_checkpoint};

use crate::config::CliConfig;

pub const VOCAB_FILE: &str = "vocab.txt";
pub const MODEL_FILE: &str = "model.json";
pub const FINAL_CHECKPOINT: &str = "model.ckpt";
pub const EPOCH_LOG: &str = "epoch_log.jsonl";
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

fn output_dir(cfg: &CliConfig, command: &str) -> Result<PathBuf> {
    let dir = cfg.require("output", &cfg.paths.output, command)?;
    fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    fs::write(dir.join(RESOLVED_CONFIG), cfg.to_toml())
        .with_context(|| format!("writing {}", dir.join(RESOLVED_CONFIG).display()))?;
    Ok(dir)
}

fn lexicon(cfg: &CliConfig) -> Result<PriorLexicon> {
    match &cfg.paths.lexicon {
        Some(p) => Ok(PriorLexicon::load(p)?),
        None => Ok(PriorLexicon::builtin()),
    }
}

fn distances(cfg: &CliConfig) -> Result<DistanceProvider> {
    match &cfg.paths.tree_distances {
        Some(p) => Ok(DistanceProvider::Tree(TreeDistances::load(p)?)),
        None => Ok(DistanceProvider::Linear),
    }
}

fn dataset(cfg: &CliConfig, command: &str) -> Result<Dataset> {
    let path = cfg.require("dataset", &cfg.paths.dataset, command)?;
    let ds = load_dataset(&path).with_context(|| format!("loading dataset {}", path.display()))?;
    for (id, reason) in &ds.rejected {
        log::warn!("skipped {id}: {reason}");
    }
    Ok(ds)
}

pub fn train_command(cfg: &CliConfig) -> Result<()> {
    let out = output_dir(cfg, "train")?;
    let ds = dataset(cfg, "train")?;
    let lex = lexicon(cfg)?;
    let dist = distances(cfg)?;
    let file_teacher;
    let lexicon_teacher;
    let teacher: &dyn Teacher = match &cfg.paths.teacher {
        Some(p) => {
            file_teacher = FileTeacher::load(p)?;
            &file_teacher
        }
        None => {
            let mut t = LexiconTeacher::new(lex.clone());
            t.confidence = cfg.teacher.confidence;
            t.miss_confidence = cfg.teacher.miss_confidence;
            t.matching = cfg.teacher.matching.into();
            lexicon_teacher = t;
            &lexicon_teacher
        }
    };
    let vocab = build_vocab(&ds.records, cfg.model.min_freq);
    let model_config = cfg.model.model_config(vocab.len());
    let res = Resources {
        vocab: &vocab,
        lexicon: &lex,
        distances: &dist,
        teacher: Some(teacher),
        l: cfg.train.l,
        max_len: model_config.encoder.max_seq_len,
    };
    let data = prepare_dataset(&ds.records, &res)?;
    vocab.save(&out.join(VOCAB_FILE))?;
    fs::write(out.join(MODEL_FILE), serde_json::to_string_pretty(&model_config)?)?;

    let (model, mut store) = SarlModel::new(model_config, cfg.train.seed)?;
    let log_path = out.join(EPOCH_LOG);
    let mut log_file = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let mut io_error: Option<anyhow::Error> = None;
    train(&model, &mut store, &data, &cfg.train, &mut |log, st| {
        println!("{}", log.summary());
        let ckpt = out.join(format!("epoch-{:03}.ckpt", log.epoch));
        save_checkpoint(st, &ckpt)?;
        let line = serde_json::to_string(log).expect("epoch log serializes");
        if let Err(e) = writeln!(log_file, "{line}") {
            io_error.get_or_insert_with(|| anyhow::Error::new(e).context(format!("writing {}", log_path.display())));
        }
        Ok(())
    })?;
    if let Some(e) = io_error {
        return Err(e);
    }
    save_checkpoint(&store, &out.join(FINAL_CHECKPOINT))?;
    println!("wrote {}", out.join(FINAL_CHECKPOINT).display());
    Ok(())
}

struct Loaded {
    model: SarlModel,
    store: sarl::numerics::ParamStore,
    vocab: Vocab,
}

fn load_model(checkpoint: &Path) -> Result<Loaded> {
    let dir = checkpoint.parent().unwrap_or_else(|| Path::new("."));
    let model_path = dir.join(MODEL_FILE);
    let text = fs::read_to_string(&model_path).with_context(|| format!("reading {}", model_path.display()))?;
    let config: ModelConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", model_path.display()))?;
    let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
    if vocab.len() != config.encoder.vocab_size {
        anyhow::bail!(
            "vocabulary has {} entries but the model expects {}",
            vocab.len(),
            config.encoder.vocab_size
        );
    }
    let (model, mut store) = SarlModel::new(config, 0)?;
    load_checkpoint(&mut store, checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    Ok(Loaded { model, store, vocab })
}

fn run_predictions(cfg: &CliConfig, command: &str) -> Result<(Dataset, Vec<Prediction>)> {
    let checkpoint = cfg.require("checkpoint", &cfg.paths.checkpoint, command)?;
    let loaded = load_model(&checkpoint)?;
    let ds = dataset(cfg, command)?;
    let lex = lexicon(cfg)?;
    let dist = distances(cfg)?;
    let res = Resources {
        vocab: &loaded.vocab,
        lexicon: &lex,
        distances: &dist,
        teacher: None,
        l: cfg.train.l,
        max_len: loaded.model.config.encoder.max_seq_len,
    };
    let data = prepare_dataset(&ds.records, &res)?;
    let opts = ForwardOptions {
        ablation: cfg.train.ablation,
        delta: cfg.train.delta,
        with_prior: false,
    };
    let preds = predict(&loaded.model, &loaded.store, &data, &opts)?;
    Ok((ds, preds))
}

pub fn evaluate_command(cfg: &CliConfig) -> Result<()> {
    let out = output_dir(cfg, "evaluate")?;
    let (ds, preds) = run_predictions(cfg, "evaluate")?;
    let report = MetricsReport::compute(&preds, &ds.records)?;
    let text = report.to_text();
    print!("{text}");
    fs::write(out.join("metrics.txt"), &text)?;
    fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

pub fn extract_command(cfg: &CliConfig) -> Result<()> {
    let out = output_dir(cfg, "extract")?;
    let (ds, preds) = run_predictions(cfg, "extract")?;
    let path = out.join("predictions.jsonl");
    write_predictions(&preds, &ds.records, cfg.extract.top_n, &path)?;
    println!("wrote {} aspect predictions to {}", preds.len(), path.display());
    Ok(())
}

pub fn bias_report_command(cfg: &CliConfig) -> Result<()> {
    let out = output_dir(cfg, "bias-report")?;
    let (_, preds) = run_predictions(cfg, "bias-report")?;
    let items: Vec<_> = preds.iter().map(|p| (p.prior, p.gold, p.label)).collect();
    let b = bias_report(&items);
    let ratio = b.ratio.map_or("undefined".to_string(), |r| format!("{r:.4}"));
    let text = format!("|S|\t{}\n|Q|\t{}\n|Q|/|S|\t{ratio}\n", b.s, b.q);
    print!("{text}");
    fs::write(out.join("bias.txt"), text)?;
    Ok(())
}

pub fn gen_data_command(cfg: &CliConfig) -> Result<()> {
    let out = output_dir(cfg, "gen-data")?;
    let spec = SyntheticSpec {
        bias_rate: cfg.gen.bias_rate,
        no_opinion_neutral_rate: cfg.gen.no_opinion_neutral_rate,
        pair_rate: cfg.gen.pair_rate,
        ..SyntheticSpec::default()
    };
    let records = gen_synthetic(&spec, cfg.gen.count, cfg.gen.seed)?;
    write_dataset(&records, &out.join("data.jsonl"))?;
    fs::write(out.join("lexicon.tsv"), spec.lexicon().to_tsv())?;
    println!(
        "wrote {} sentences to {} and the matching lexicon to {}",
        records.len(),
        out.join("data.jsonl").display(),
        out.join("lexicon.tsv").display()
    );
    Ok(())
}
