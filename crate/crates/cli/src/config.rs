//! Layered run configuration: built-in defaults, then a TOML file, then flags.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use sarl::aligner::LexiconMatch;
use sarl::encoder::EncoderConfig;
use sarl::model::{Alpha, DeltaMode, ModelConfig, TrainConfig};

/// Bad invocation: unknown flag or key, missing path, invalid value.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> UsageError {
    UsageError(msg.into())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub teacher: Option<PathBuf>,
    pub tree_distances: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
    pub z_dim: usize,
    /// Tokens rarer than this in the training set map to the unknown id.
    pub min_freq: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let enc = EncoderConfig::toy(0);
        ModelSection {
            model_dim: enc.model_dim,
            layers: enc.layers,
            heads: enc.heads,
            ffn_dim: enc.ffn_dim,
            max_seq_len: enc.max_seq_len,
            dropout: enc.dropout,
            z_dim: ModelConfig::toy(0).z_dim,
            min_freq: 1,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                vocab_size,
                model_dim: self.model_dim,
                layers: self.layers,
                heads: self.heads,
                max_seq_len: self.max_seq_len,
                dropout: self.dropout,
                ffn_dim: self.ffn_dim,
            },
            z_dim: self.z_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matching {
    ExactPhrase,
    PhraseThenMajority,
}

impl From<Matching> for LexiconMatch {
    fn from(m: Matching) -> Self {
        match m {
            Matching::ExactPhrase => LexiconMatch::ExactPhrase,
            Matching::PhraseThenMajority => LexiconMatch::PhraseThenMajority,
        }
    }
}

/// Lexicon teacher settings; ignored when `paths.teacher` names a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherSection {
    pub confidence: f64,
    pub miss_confidence: f64,
    pub matching: Matching,
}

impl Default for TeacherSection {
    fn default() -> Self {
        TeacherSection {
            confidence: 0.8,
            miss_confidence: 0.8,
            matching: Matching::ExactPhrase,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractSection {
    pub top_n: usize,
}

impl Default for ExtractSection {
    fn default() -> Self {
        ExtractSection { top_n: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSection {
    pub count: usize,
    pub seed: u64,
    pub bias_rate: f64,
    pub no_opinion_neutral_rate: f64,
    pub pair_rate: f64,
}

impl Default for GenSection {
    fn default() -> Self {
        let spec = sarl::data::SyntheticSpec::default();
        GenSection {
            count: 2000,
            seed: 0,
            bias_rate: spec.bias_rate,
            no_opinion_neutral_rate: spec.no_opinion_neutral_rate,
            pair_rate: spec.pair_rate,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub paths: Paths,
    pub train: TrainConfig,
    pub model: ModelSection,
    pub teacher: TeacherSection,
    pub extract: ExtractSection,
    pub gen: GenSection,
}

/// Flags shared by every subcommand; each one overrides the file value.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML configuration file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Precomputed teacher distributions (TSV).
    #[arg(long)]
    pub teacher_file: Option<PathBuf>,
    /// Token-pair tree distances (TSV).
    #[arg(long)]
    pub tree_distances: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Maximum candidate span width.
    #[arg(long = "l")]
    pub l: Option<usize>,
    /// Proportion of discriminator steps, as `p/q`.
    #[arg(long)]
    pub alpha: Option<Alpha>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// `1/m` or a fixed non-negative number.
    #[arg(long)]
    pub delta: Option<String>,
    #[arg(long)]
    pub warmup_fraction: Option<f64>,
    #[arg(long)]
    pub no_adv: bool,
    #[arg(long)]
    pub no_aligner: bool,
    #[arg(long)]
    pub no_distill: bool,
    #[arg(long)]
    pub no_sentiment_score: bool,
    #[arg(long)]
    pub neutral_reinforce: bool,
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Number of sentences for gen-data.
    #[arg(long)]
    pub count: Option<usize>,
}

fn parse_delta(s: &str) -> Result<DeltaMode, UsageError> {
    let t = s.trim();
    if t == "1/m" || t == "one_over_m" {
        return Ok(DeltaMode::OneOverM);
    }
    t.parse::<f64>()
        .map(DeltaMode::Fixed)
        .map_err(|_| usage(format!("--delta expects `1/m` or a number, got `{s}`")))
}

/// An instance with every optional field present, so that its serialized
/// form lists all accepted keys.
fn schema() -> toml::Table {
    let all = PathBuf::from("x");
    let cfg = CliConfig {
        paths: Paths {
            dataset: Some(all.clone()),
            lexicon: Some(all.clone()),
            checkpoint: Some(all.clone()),
            teacher: Some(all.clone()),
            tree_distances: Some(all.clone()),
            output: Some(all),
        },
        ..CliConfig::default()
    };
    toml::Table::try_from(cfg).expect("config serializes")
}

fn suggestion(key: &str, candidates: &toml::Table) -> String {
    candidates
        .keys()
        .map(|c| (strsim::damerau_levenshtein(key, c), c))
        .filter(|(d, _)| *d <= 2)
        .min()
        .map(|(_, c)| format!("; did you mean `{c}`?"))
        .unwrap_or_default()
}

fn check_keys(user: &toml::Table, schema: &toml::Table, prefix: &str) -> Result<(), UsageError> {
    for (key, value) in user {
        match schema.get(key) {
            None => {
                return Err(usage(format!(
                    "unknown config key `{prefix}{key}`{}",
                    suggestion(key, schema)
                )))
            }
            Some(toml::Value::Table(sub)) => {
                if let toml::Value::Table(u) = value {
                    check_keys(u, sub, &format!("{prefix}{key}."))?;
                }
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// Parses file text, rejecting unknown keys with a suggestion.
pub fn parse_file(text: &str, origin: &Path) -> Result<CliConfig, UsageError> {
    let table: toml::Table = text
        .parse()
        .map_err(|e| usage(format!("{}: {e}", origin.display())))?;
    check_keys(&table, &schema(), "")?;
    table
        .try_into()
        .map_err(|e| usage(format!("{}: {e}", origin.display())))
}

/// Defaults, overlaid by the optional config file, overlaid by flags.
pub fn parse_config(flags: &Overrides) -> Result<CliConfig, UsageError> {
    let mut cfg = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            parse_file(&text, path)?
        }
        None => CliConfig::default(),
    };
    let p = &mut cfg.paths;
    for (slot, flag) in [
        (&mut p.dataset, &flags.dataset),
        (&mut p.lexicon, &flags.lexicon),
        (&mut p.checkpoint, &flags.checkpoint),
        (&mut p.teacher, &flags.teacher_file),
        (&mut p.tree_distances, &flags.tree_distances),
        (&mut p.output, &flags.output),
    ] {
        if let Some(v) = flag {
            *slot = Some(v.clone());
        }
    }
    let t = &mut cfg.train;
    if let Some(v) = flags.seed {
        t.seed = v;
        cfg.gen.seed = v;
    }
    if let Some(v) = flags.epochs {
        t.epochs = v;
    }
    if let Some(v) = flags.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = flags.l {
        t.l = v;
    }
    if let Some(v) = flags.alpha {
        t.alpha = v;
    }
    if let Some(v) = flags.beta {
        t.beta = v;
    }
    if let Some(v) = flags.gamma {
        t.gamma = v;
    }
    if let Some(v) = &flags.delta {
        t.delta = parse_delta(v)?;
    }
    if let Some(v) = flags.warmup_fraction {
        t.warmup_fraction = v;
    }
    let a = &mut t.ablation;
    a.no_adv |= flags.no_adv;
    a.no_aligner |= flags.no_aligner;
    a.no_distill |= flags.no_distill;
    a.no_sentiment_score |= flags.no_sentiment_score;
    a.neutral_reinforce |= flags.neutral_reinforce;
    if let Some(v) = flags.top_n {
        cfg.extract.top_n = v;
    }
    if let Some(v) = flags.count {
        cfg.gen.count = v;
    }
    cfg.train.validate().map_err(|e| usage(e.to_string()))?;
    if cfg.extract.top_n == 0 {
        return Err(usage("extract.top_n must be at least 1"));
    }
    Ok(cfg)
}

impl CliConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn require(&self, name: &str, value: &Option<PathBuf>, command: &str) -> Result<PathBuf, UsageError> {
        value
            .clone()
            .ok_or_else(|| usage(format!("`{command}` needs a {name} path (flag --{} or key paths.{name})", flag_name(name))))
    }
}

fn flag_name(key: &str) -> String {
    match key {
        "teacher" => "teacher-file".into(),
        other => other.replace('_', "-"),
    }
}
