//! Dataset records, JSONL ingestion, vocabularies and the synthetic corpus.

mod synthetic;
mod vocab;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::antibias::SentimentLabel;
use crate::error::{Result, SarlError};

pub use synthetic::{gen_synthetic, SyntheticSpec};
pub use vocab::{build_vocab, Vocab, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};

/// Aspects (and hence records) reaching past this token index are rejected.
pub const MAX_ASPECT_TOKENS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(String, usize, usize)", into = "(String, usize, usize)")]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

impl From<(String, usize, usize)> for Token {
    fn from((text, start, end): (String, usize, usize)) -> Self {
        Token { text, start, end }
    }
}

impl From<Token> for (String, usize, usize) {
    fn from(t: Token) -> Self {
        (t.text, t.start, t.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectRecord {
    pub s: usize,
    pub e: usize,
    pub label: SentimentLabel,
    /// `None` when opinions were not annotated; `Some(vec![])` marks an
    /// aspect annotated as having no opinion term.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_opinions: Option<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub sentence_id: String,
    pub text: String,
    pub tokens: Vec<Token>,
    pub aspects: Vec<AspectRecord>,
}

impl DatasetRecord {
    pub fn span_text(&self, s: usize, e: usize) -> String {
        self.tokens[s..=e]
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Character interval `[start, end)` covered by tokens `s..=e`.
    pub fn char_span(&self, s: usize, e: usize) -> (usize, usize) {
        (self.tokens[s].start, self.tokens[e].end)
    }

    /// Structural validation; returns the first problem found.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| SarlError::InvalidRecord {
            record: self.sentence_id.clone(),
            msg,
        };
        if self.tokens.is_empty() {
            return Err(bad("no tokens".into()));
        }
        let text_len = self.text.chars().count();
        let mut prev_end = 0;
        for (i, t) in self.tokens.iter().enumerate() {
            if t.start >= t.end || t.start < prev_end || t.end > text_len {
                return Err(bad(format!("token {i} has invalid offsets [{}, {})", t.start, t.end)));
            }
            prev_end = t.end;
        }
        let n = self.tokens.len();
        for (k, a) in self.aspects.iter().enumerate() {
            if a.s > a.e || a.e >= n {
                return Err(bad(format!("aspect {k} span ({}, {}) invalid for {n} tokens", a.s, a.e)));
            }
            for &(s, e) in a.gold_opinions.iter().flatten() {
                if s > e || e >= n {
                    return Err(bad(format!("aspect {k} opinion ({s}, {e}) invalid for {n} tokens")));
                }
                if !(e < a.s || s > a.e) {
                    return Err(bad(format!("aspect {k} opinion ({s}, {e}) overlaps the aspect")));
                }
            }
        }
        Ok(())
    }
}

/// Per-class aspect counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub positive: usize,
    pub neutral: usize,
    pub negative: usize,
}

impl ClassCounts {
    pub fn of(records: &[DatasetRecord]) -> Self {
        let mut c = ClassCounts::default();
        for a in records.iter().flat_map(|r| &r.aspects) {
            match a.label {
                SentimentLabel::Positive => c.positive += 1,
                SentimentLabel::Neutral => c.neutral += 1,
                SentimentLabel::Negative => c.negative += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.positive + self.neutral + self.negative
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    pub counts: ClassCounts,
    /// `(sentence_id, reason)` for records skipped at ingestion.
    pub rejected: Vec<(String, String)>,
}

/// Reads a JSONL dataset, one record per non-blank line.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let f = fs::File::open(path).map_err(|e| SarlError::io(path, e))?;
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (lineno, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| SarlError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(&line).map_err(|e| SarlError::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        record.validate()?;
        if let Some(a) = record.aspects.iter().find(|a| a.e >= MAX_ASPECT_TOKENS) {
            let reason = format!("aspect ({}, {}) beyond token {MAX_ASPECT_TOKENS}", a.s, a.e);
            log::warn!("rejecting record {}: {reason}", record.sentence_id);
            rejected.push((record.sentence_id.clone(), reason));
            continue;
        }
        records.push(record);
    }
    let counts = ClassCounts::of(&records);
    log::info!(
        "loaded {} records from {}: positive={} neutral={} negative={}",
        records.len(),
        path.display(),
        counts.positive,
        counts.neutral,
        counts.negative
    );
    Ok(Dataset {
        records,
        counts,
        rejected,
    })
}

pub fn write_dataset(records: &[DatasetRecord], path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| SarlError::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(f, "{line}").map_err(|e| SarlError::io(path, e))?;
    }
    Ok(())
}

/// Builds a record from raw text, locating aspect and opinion spans by token index.
pub fn record_from_text(id: &str, text: &str, aspects: Vec<AspectRecord>) -> DatasetRecord {
    let tokens = crate::encoder::tokenize(text)
        .into_iter()
        .map(|t| Token {
            text: t.text,
            start: t.start,
            end: t.end,
        })
        .collect();
    DatasetRecord {
        sentence_id: id.to_string(),
        text: text.to_string(),
        tokens,
        aspects,
    }
}
