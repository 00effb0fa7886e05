//! Template-based restaurant-review corpus with planted opinions and
//! injectable aspect-sentiment bias.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::antibias::{PriorLexicon, SentimentLabel};
use crate::data::{AspectRecord, DatasetRecord, Token};
use crate::error::{Result, SarlError};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Clauses with `{A}` (aspect) and `{O}` (opinion) slots.
    pub opinion_templates: Vec<String>,
    /// Clauses with only an `{A}` slot.
    pub plain_templates: Vec<String>,
    /// Words joining the two clauses of a two-aspect sentence.
    pub connectors: Vec<String>,
    /// Aspect words whose prior polarity is neutral.
    pub neutral_aspects: Vec<String>,
    /// Aspect words with an intrinsic polarity.
    pub biased_aspects: Vec<(String, SentimentLabel)>,
    /// Opinion phrases per polarity, indexed by [`SentimentLabel::index`].
    pub opinions: [Vec<String>; 3],
    /// Probability that an aspect is a biased word whose label contradicts its prior.
    pub bias_rate: f64,
    /// Fraction of neutral aspects generated with no opinion at all.
    pub no_opinion_neutral_rate: f64,
    /// Fraction of sentences carrying two aspects.
    pub pair_rate: f64,
    /// Sampling weights of the gold labels for unbiased aspects.
    pub label_weights: [f64; 3],
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            opinion_templates: strings(&[
                "the {A} is {O}",
                "the {A} was {O}",
                "{O} {A}",
                "i think the {A} is {O}",
                "the {A} here is {O}",
                "we found the {A} {O}",
                "our {A} was {O}",
            ]),
            plain_templates: strings(&[
                "we ordered the {A}",
                "there is {A} downstairs",
                "i heard the {A} after dinner",
                "they brought the {A} to us",
                "the {A} is on the left",
                "we asked about the {A}",
                "my friend mentioned the {A}",
            ]),
            connectors: strings(&["but", "and", ",", "while"]),
            neutral_aspects: strings(&[
                "food", "service", "staff", "pasta", "menu", "waiter", "price", "table", "decor", "pizza", "salad",
                "coffee", "bread", "portion",
            ]),
            biased_aspects: vec![
                ("music".into(), SentimentLabel::Positive),
                ("dessert".into(), SentimentLabel::Positive),
                ("view".into(), SentimentLabel::Positive),
                ("garden".into(), SentimentLabel::Positive),
                ("noise".into(), SentimentLabel::Negative),
                ("crowd".into(), SentimentLabel::Negative),
                ("smoke".into(), SentimentLabel::Negative),
            ],
            opinions: [
                strings(&[
                    "tasty",
                    "delicious",
                    "great",
                    "friendly",
                    "excellent",
                    "lovely",
                    "amazing",
                    "very fresh",
                    "really good",
                ]),
                strings(&["average", "okay", "ordinary", "standard"]),
                strings(&[
                    "terrible",
                    "awful",
                    "rude",
                    "bland",
                    "horrible",
                    "cold",
                    "not good",
                    "too slow",
                    "quite poor",
                ]),
            ],
            bias_rate: 0.2,
            no_opinion_neutral_rate: 0.7,
            pair_rate: 0.35,
            label_weights: [0.4, 0.25, 0.35],
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("bias_rate", self.bias_rate),
            ("no_opinion_neutral_rate", self.no_opinion_neutral_rate),
            ("pair_rate", self.pair_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(SarlError::Contract(format!("{name} = {r} outside [0, 1]")));
            }
        }
        if self.label_weights.iter().any(|&w| w < 0.0) || self.label_weights.iter().sum::<f64>() <= 0.0 {
            return Err(SarlError::Contract("label weights must be non-negative, not all zero".into()));
        }
        if self.neutral_aspects.len() < 2 || self.opinion_templates.is_empty() || self.plain_templates.is_empty() {
            return Err(SarlError::Contract("synthetic spec needs aspects and templates".into()));
        }
        for (i, ops) in self.opinions.iter().enumerate() {
            if ops.is_empty() && self.label_weights[i] > 0.0 {
                return Err(SarlError::Contract(format!("no opinions for class {i}")));
            }
        }
        if self.bias_rate > 0.0 && self.biased_aspects.is_empty() {
            return Err(SarlError::Contract("bias_rate > 0 with no biased aspects".into()));
        }
        Ok(())
    }

    /// Lexicon covering the biased aspects and every opinion phrase.
    pub fn lexicon(&self) -> PriorLexicon {
        let mut lex = PriorLexicon::new();
        for (w, p) in &self.biased_aspects {
            lex.insert(w, *p);
        }
        for label in SentimentLabel::ALL {
            for o in &self.opinions[label.index()] {
                lex.insert(o, label);
            }
        }
        lex
    }

    pub fn is_biased_word(&self, word: &str) -> Option<SentimentLabel> {
        self.biased_aspects.iter().find(|(w, _)| w == word).map(|&(_, p)| p)
    }
}

struct PlannedAspect {
    word: String,
    label: SentimentLabel,
    opinion: Option<String>,
}

/// Builds tokens incrementally so that spans are known without re-tokenizing.
#[derive(Default)]
struct SentenceBuilder {
    text: String,
    tokens: Vec<Token>,
}

impl SentenceBuilder {
    /// Appends whitespace-separated words; returns the inclusive token span.
    fn push_words(&mut self, words: &str) -> (usize, usize) {
        let first = self.tokens.len();
        for w in words.split_whitespace() {
            if !self.text.is_empty() {
                self.text.push(' ');
            }
            let start = self.text.chars().count();
            self.text.push_str(w);
            self.tokens.push(Token {
                text: w.to_lowercase(),
                start,
                end: start + w.chars().count(),
            });
        }
        (first, self.tokens.len() - 1)
    }

    fn push_clause(&mut self, template: &str, aspect: &str, opinion: Option<&str>) -> ((usize, usize), Option<(usize, usize)>) {
        let mut aspect_span = None;
        let mut opinion_span = None;
        for piece in template.split_whitespace() {
            match piece {
                "{A}" => aspect_span = Some(self.push_words(aspect)),
                "{O}" => opinion_span = Some(self.push_words(opinion.expect("opinion template needs an opinion"))),
                w => {
                    self.push_words(w);
                }
            }
        }
        (aspect_span.expect("template has an aspect slot"), opinion_span)
    }
}

fn pick_label<R: Rng>(weights: &[f64; 3], rng: &mut R) -> SentimentLabel {
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if x < w {
            return SentimentLabel::ALL[i];
        }
        x -= w;
    }
    SentimentLabel::Negative
}

fn plan_aspect<R: Rng>(spec: &SyntheticSpec, taken: &[String], rng: &mut R) -> PlannedAspect {
    let (word, label) = if rng.gen::<f64>() < spec.bias_rate {
        let choices: Vec<_> = spec.biased_aspects.iter().filter(|(w, _)| !taken.contains(w)).collect();
        let (w, prior) = choices.choose(rng).copied().expect("biased aspects available");
        let contradicting: Vec<SentimentLabel> = SentimentLabel::ALL.into_iter().filter(|l| l != prior).collect();
        (w.clone(), *contradicting.choose(rng).unwrap())
    } else {
        let choices: Vec<_> = spec.neutral_aspects.iter().filter(|w| !taken.contains(w)).collect();
        ((*choices.choose(rng).unwrap()).clone(), pick_label(&spec.label_weights, rng))
    };
    let opinion = match label {
        SentimentLabel::Neutral if rng.gen::<f64>() < spec.no_opinion_neutral_rate => None,
        _ => spec.opinions[label.index()].choose(rng).cloned(),
    };
    PlannedAspect { word, label, opinion }
}

/// Generates `count` sentences deterministically from `seed`.
pub fn gen_synthetic(spec: &SyntheticSpec, count: usize, seed: u64) -> Result<Vec<DatasetRecord>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for idx in 0..count {
        let n_aspects = if rng.gen::<f64>() < spec.pair_rate { 2 } else { 1 };
        let mut planned: Vec<PlannedAspect> = Vec::new();
        for _ in 0..n_aspects {
            let taken: Vec<String> = planned.iter().map(|p| p.word.clone()).collect();
            planned.push(plan_aspect(spec, &taken, &mut rng));
        }
        let mut b = SentenceBuilder::default();
        let mut aspects = Vec::new();
        for (k, p) in planned.iter().enumerate() {
            if k > 0 {
                let conn = spec.connectors.choose(&mut rng).map(String::as_str).unwrap_or("and");
                b.push_words(conn);
            }
            let template = match p.opinion {
                Some(_) => spec.opinion_templates.choose(&mut rng).unwrap(),
                None => spec.plain_templates.choose(&mut rng).unwrap(),
            };
            let (a_span, o_span) = b.push_clause(template, &p.word, p.opinion.as_deref());
            aspects.push(AspectRecord {
                s: a_span.0,
                e: a_span.1,
                label: p.label,
                gold_opinions: Some(o_span.into_iter().collect()),
            });
        }
        b.push_words(".");
        let record = DatasetRecord {
            sentence_id: format!("syn-{idx:05}"),
            text: b.text,
            tokens: b.tokens,
            aspects,
        };
        record.validate()?;
        out.push(record);
    }
    Ok(out)
}
