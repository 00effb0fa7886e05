use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::antibias::{lookup_prior, PriorLexicon, SentimentLabel};
use crate::data::DatasetRecord;
use crate::error::{Result, SarlError};
use crate::spans::Span;

/// Phrase-level sentiment provider used as the distillation target.
pub trait Teacher: Send + Sync {
    fn predict(&self, record: &DatasetRecord, span: Span) -> Result<[f64; 3]>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexiconMatch {
    /// Only a lexicon entry equal to the whole span counts as a hit.
    ExactPhrase,
    /// Same rule as prior lookup: phrase, then token majority vote.
    PhraseThenMajority,
}

/// Puts `confidence` on the looked-up polarity and spreads the rest evenly.
/// Spans without any lexicon hit get `miss_confidence` on Neutral.
#[derive(Debug, Clone)]
pub struct LexiconTeacher {
    pub lexicon: PriorLexicon,
    pub confidence: f64,
    pub miss_confidence: f64,
    pub matching: LexiconMatch,
}

impl LexiconTeacher {
    pub fn new(lexicon: PriorLexicon) -> Self {
        LexiconTeacher {
            lexicon,
            confidence: 0.8,
            miss_confidence: 0.8,
            matching: LexiconMatch::ExactPhrase,
        }
    }

    fn hit(&self, text: &str) -> Option<SentimentLabel> {
        match self.matching {
            LexiconMatch::ExactPhrase => self.lexicon.get(text),
            LexiconMatch::PhraseThenMajority => {
                let any = self.lexicon.get(text).is_some()
                    || text.split_whitespace().any(|w| self.lexicon.get(w).is_some());
                any.then(|| lookup_prior(text, &self.lexicon))
            }
        }
    }

    pub fn distribution(&self, text: &str) -> [f64; 3] {
        let (label, conf) = match self.hit(text) {
            Some(label) => (label, self.confidence),
            None => (SentimentLabel::Neutral, self.miss_confidence),
        };
        let rest = (1.0 - conf) / 2.0;
        let mut p = [rest; 3];
        p[label.index()] = conf;
        p
    }
}

impl Teacher for LexiconTeacher {
    fn predict(&self, record: &DatasetRecord, span: Span) -> Result<[f64; 3]> {
        span.check(record.tokens.len())?;
        Ok(self.distribution(&record.span_text(span.s, span.e)))
    }
}

/// Precomputed distributions keyed by `(sentence_id, s, e)`.
///
/// TSV lines `sentence_id<TAB>s<TAB>e<TAB>p0<TAB>p1<TAB>p2`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileTeacher {
    entries: HashMap<(String, usize, usize), [f64; 3]>,
}

impl FileTeacher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, sentence_id: &str, span: Span, p: [f64; 3]) -> Result<()> {
        check_distribution(&p)?;
        self.entries.insert((sentence_id.to_string(), span.s, span.e), p);
        Ok(())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut t = FileTeacher::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| SarlError::Parse {
                path: origin.to_string(),
                line: lineno + 1,
                msg,
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(err(format!("expected 6 fields, found {}", f.len())));
            }
            let s = f[1].parse().map_err(|_| err(format!("bad start `{}`", f[1])))?;
            let e = f[2].parse().map_err(|_| err(format!("bad end `{}`", f[2])))?;
            let mut p = [0.0; 3];
            for k in 0..3 {
                p[k] = f[3 + k].parse().map_err(|_| err(format!("bad probability `{}`", f[3 + k])))?;
            }
            t.insert(f[0], Span::new(s, e), p).map_err(|e| err(e.to_string()))?;
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| SarlError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_tsv(&self) -> String {
        let mut keys: Vec<_> = self.entries.keys().collect();
        keys.sort();
        let mut out = String::new();
        for k in keys {
            let p = self.entries[k];
            out.push_str(&format!("{}\t{}\t{}\t{}\t{}\t{}\n", k.0, k.1, k.2, p[0], p[1], p[2]));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| SarlError::io(path, e))
    }
}

impl Teacher for FileTeacher {
    fn predict(&self, record: &DatasetRecord, span: Span) -> Result<[f64; 3]> {
        self.entries
            .get(&(record.sentence_id.clone(), span.s, span.e))
            .copied()
            .ok_or_else(|| {
                SarlError::NotFound(format!(
                    "teacher has no entry for ({}, {}, {})",
                    record.sentence_id, span.s, span.e
                ))
            })
    }
}

fn check_distribution(p: &[f64; 3]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (sum - 1.0).abs() > 1e-6 {
        return Err(SarlError::Contract(format!("teacher output {p:?} is not a distribution")));
    }
    Ok(())
}
