use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::tokenize;
use crate::error::{Result, SarlError};

/// Three-way sentiment polarity. The index mapping is fixed project-wide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentLabel {
    Positive = 0,
    Neutral = 1,
    Negative = 2,
}

impl SentimentLabel {
    pub const ALL: [SentimentLabel; 3] = [SentimentLabel::Positive, SentimentLabel::Neutral, SentimentLabel::Negative];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        SentimentLabel::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SentimentLabel::Positive => "positive",
            SentimentLabel::Neutral => "neutral",
            SentimentLabel::Negative => "negative",
        }
    }

    /// Argmax with ties resolved toward the lowest class index.
    pub fn argmax(dist: &[f64]) -> SentimentLabel {
        let mut best = 0;
        for (i, &p) in dist.iter().enumerate().take(3) {
            if p > dist[best] {
                best = i;
            }
        }
        SentimentLabel::ALL[best]
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SentimentLabel {
    type Err = SarlError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" | "pos" => Ok(SentimentLabel::Positive),
            "neutral" | "neu" => Ok(SentimentLabel::Neutral),
            "negative" | "neg" => Ok(SentimentLabel::Negative),
            other => Err(SarlError::Contract(format!("unknown polarity `{other}`"))),
        }
    }
}

/// Term (or phrase) to prior polarity. Absent terms read as neutral.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriorLexicon {
    entries: HashMap<String, SentimentLabel>,
}

/// Small curated lexicon shipped with the crate.
pub const BUILTIN_LEXICON: &str = include_str!("../../fixtures/lexicon.tsv");

impl PriorLexicon {
    pub fn new() -> Self {
        PriorLexicon::default()
    }

    pub fn builtin() -> Self {
        PriorLexicon::parse(BUILTIN_LEXICON, "<builtin>").expect("builtin lexicon is valid")
    }

    pub fn insert(&mut self, term: &str, label: SentimentLabel) {
        self.entries.insert(normalize(term), label);
    }

    pub fn get(&self, term: &str) -> Option<SentimentLabel> {
        self.entries.get(&normalize(term)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries sorted by term.
    pub fn entries(&self) -> Vec<(&str, SentimentLabel)> {
        let mut v: Vec<_> = self.entries.iter().map(|(k, &l)| (k.as_str(), l)).collect();
        v.sort();
        v
    }

    /// Parses `term<TAB>polarity` lines; `#` starts a comment line.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lex = PriorLexicon::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(term), Some(pol), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(SarlError::Parse {
                    path: origin.to_string(),
                    line: lineno + 1,
                    msg: "expected `term<TAB>polarity`".into(),
                });
            };
            let label = pol.parse::<SentimentLabel>().map_err(|e| SarlError::Parse {
                path: origin.to_string(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
            if term.trim().is_empty() {
                return Err(SarlError::Parse {
                    path: origin.to_string(),
                    line: lineno + 1,
                    msg: "empty term".into(),
                });
            }
            lex.insert(term, label);
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| SarlError::io(path, e))?;
        PriorLexicon::parse(&text, &path.display().to_string())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# term\tpolarity\n");
        for (term, label) in self.entries() {
            out.push_str(&format!("{term}\t{label}\n"));
        }
        out
    }
}

fn normalize(term: &str) -> String {
    tokenize(term)
        .into_iter()
        .map(|t| t.text)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Prior polarity of an aspect: the exact phrase if listed, otherwise a
/// majority vote over the non-neutral polarities of its tokens. Ties and
/// misses give `Neutral`.
pub fn lookup_prior(aspect_text: &str, lexicon: &PriorLexicon) -> SentimentLabel {
    if let Some(label) = lexicon.get(aspect_text) {
        return label;
    }
    let (mut pos, mut neg) = (0usize, 0usize);
    for tok in tokenize(aspect_text) {
        match lexicon.get(&tok.text) {
            Some(SentimentLabel::Positive) => pos += 1,
            Some(SentimentLabel::Negative) => neg += 1,
            _ => {}
        }
    }
    match pos.cmp(&neg) {
        std::cmp::Ordering::Greater => SentimentLabel::Positive,
        std::cmp::Ordering::Less => SentimentLabel::Negative,
        std::cmp::Ordering::Equal => SentimentLabel::Neutral,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex(pairs: &[(&str, SentimentLabel)]) -> PriorLexicon {
        let mut l = PriorLexicon::new();
        for &(t, p) in pairs {
            l.insert(t, p);
        }
        l
    }

    #[test]
    fn direct_lookup() {
        let l = lex(&[("tasty", SentimentLabel::Positive)]);
        assert_eq!(lookup_prior("tasty", &l), SentimentLabel::Positive);
        assert_eq!(lookup_prior("Tasty", &l), SentimentLabel::Positive);
    }

    #[test]
    fn absent_is_neutral() {
        let l = lex(&[("tasty", SentimentLabel::Positive)]);
        assert_eq!(lookup_prior("battery life", &l), SentimentLabel::Neutral);
    }

    #[test]
    fn majority_vote_and_ties() {
        let l = lex(&[
            ("good", SentimentLabel::Positive),
            ("bad", SentimentLabel::Negative),
            ("great", SentimentLabel::Positive),
        ]);
        assert_eq!(lookup_prior("good bad combo", &l), SentimentLabel::Neutral);
        assert_eq!(lookup_prior("good great bad", &l), SentimentLabel::Positive);
    }

    #[test]
    fn phrase_beats_tokens() {
        let l = lex(&[("good", SentimentLabel::Positive), ("not good", SentimentLabel::Negative)]);
        assert_eq!(lookup_prior("not good", &l), SentimentLabel::Negative);
    }

    #[test]
    fn parses_tsv_with_comments() {
        let l = PriorLexicon::parse("# comment\nmusic\tpositive\nnot good\tnegative\n\n", "t").unwrap();
        assert_eq!(l.get("music"), Some(SentimentLabel::Positive));
        assert_eq!(l.get("not  good"), Some(SentimentLabel::Negative));
        assert!(PriorLexicon::parse("music positive\n", "t").is_err());
        assert!(PriorLexicon::parse("music\tgreat\n", "t").is_err());
    }

    #[test]
    fn builtin_parses() {
        let l = PriorLexicon::builtin();
        assert!(l.len() > 10);
        assert_eq!(l.to_tsv().lines().count(), l.len() + 1);
    }

    #[test]
    fn argmax_ties_to_lowest() {
        let third = 1.0 / 3.0;
        assert_eq!(SentimentLabel::argmax(&[third, third, third]), SentimentLabel::Positive);
        assert_eq!(SentimentLabel::argmax(&[0.1, 0.7, 0.2]), SentimentLabel::Neutral);
    }
}
