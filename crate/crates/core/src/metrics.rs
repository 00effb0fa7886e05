//! Classification, opinion-extraction and bias metrics.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::antibias::SentimentLabel;
use crate::data::DatasetRecord;
use crate::error::{Result, SarlError};
use crate::model::{OpinionRef, Prediction};
use crate::spans::Span;

/// Accuracy and the unweighted mean of the three per-class F1 scores.
pub fn accuracy_macro_f1(preds: &[SentimentLabel], golds: &[SentimentLabel]) -> Result<(f64, f64)> {
    if preds.len() != golds.len() {
        return Err(SarlError::shape("accuracy_macro_f1", &[preds.len()], &[golds.len()]));
    }
    if preds.is_empty() {
        return Err(SarlError::Contract("no predictions to score".into()));
    }
    let mut tp = [0usize; 3];
    let mut pred_count = [0usize; 3];
    let mut gold_count = [0usize; 3];
    for (&p, &g) in preds.iter().zip(golds) {
        pred_count[p.index()] += 1;
        gold_count[g.index()] += 1;
        if p == g {
            tp[p.index()] += 1;
        }
    }
    let correct: usize = tp.iter().sum();
    let mut f1_sum = 0.0;
    for k in 0..3 {
        let denom = pred_count[k] + gold_count[k];
        if denom > 0 {
            f1_sum += 2.0 * tp[k] as f64 / denom as f64;
        }
    }
    Ok((correct as f64 / preds.len() as f64, f1_sum / 3.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SpanChars {
    pub tokens: Span,
    /// Half-open character interval.
    pub chars: (usize, usize),
}

/// The ranked extraction output of one aspect against its gold opinions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractionJudgment {
    /// Best first; `None` marks the dummy.
    pub ranked: Vec<Option<SpanChars>>,
    pub gold: Vec<SpanChars>,
    /// 1-based.
    pub dummy_rank: usize,
}

fn check_n(n: usize) -> Result<()> {
    if n < 1 {
        return Err(SarlError::Contract("N must be at least 1".into()));
    }
    Ok(())
}

/// Fraction of aspects with gold opinions whose top-`n` contains one exactly.
/// `None` when no aspect has a gold opinion.
pub fn em_at_n(judgments: &[ExtractionJudgment], n: usize) -> Result<Option<f64>> {
    check_n(n)?;
    let eligible: Vec<&ExtractionJudgment> = judgments.iter().filter(|j| !j.gold.is_empty()).collect();
    if eligible.is_empty() {
        return Ok(None);
    }
    let hits = eligible
        .iter()
        .filter(|j| {
            j.ranked
                .iter()
                .take(n)
                .flatten()
                .any(|p| j.gold.iter().any(|g| g.tokens == p.tokens))
        })
        .count();
    Ok(Some(hits as f64 / eligible.len() as f64))
}

/// Character-overlap precision, recall and F1 of one predicted interval.
pub fn char_prf(pred: (usize, usize), gold: (usize, usize)) -> (f64, f64, f64) {
    let inter = pred.1.min(gold.1).saturating_sub(pred.0.max(gold.0));
    if inter == 0 {
        return (0.0, 0.0, 0.0);
    }
    let p = inter as f64 / (pred.1 - pred.0) as f64;
    let r = inter as f64 / (gold.1 - gold.0) as f64;
    (p, r, 2.0 * p * r / (p + r))
}

/// Macro-averaged P/R/F@n over aspects with gold opinions. Per aspect the
/// (prediction, gold) pair with the highest F is used; the dummy scores 0.
pub fn prf_at_n(judgments: &[ExtractionJudgment], n: usize) -> Result<Option<(f64, f64, f64)>> {
    check_n(n)?;
    let eligible: Vec<&ExtractionJudgment> = judgments.iter().filter(|j| !j.gold.is_empty()).collect();
    if eligible.is_empty() {
        return Ok(None);
    }
    let mut sum = (0.0, 0.0, 0.0);
    for j in &eligible {
        let mut best = (0.0, 0.0, 0.0);
        for p in j.ranked.iter().take(n).flatten() {
            for g in &j.gold {
                let cur = char_prf(p.chars, g.chars);
                if cur.2 > best.2 {
                    best = cur;
                }
            }
        }
        sum.0 += best.0;
        sum.1 += best.1;
        sum.2 += best.2;
    }
    let k = eligible.len() as f64;
    Ok(Some((sum.0 / k, sum.1 / k, sum.2 / k)))
}

/// Fraction of the given (no-opinion neutral) aspects with dummy rank `<= n`.
pub fn hits_at_n(judgments: &[ExtractionJudgment], n: usize) -> Result<f64> {
    check_n(n)?;
    if judgments.is_empty() {
        return Err(SarlError::Contract("no eligible aspects".into()));
    }
    let hits = judgments.iter().filter(|j| j.dummy_rank <= n).count();
    Ok(hits as f64 / judgments.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasReport {
    /// Aspects whose non-neutral prior disagrees with the gold label.
    pub s: usize,
    /// Those of them predicted as their prior.
    pub q: usize,
    /// `q / s`, undefined when `s = 0`.
    pub ratio: Option<f64>,
}

/// `items` are `(prior, gold, predicted)` triples.
pub fn bias_report(items: &[(SentimentLabel, SentimentLabel, SentimentLabel)]) -> BiasReport {
    let mut s = 0;
    let mut q = 0;
    for &(prior, gold, pred) in items {
        if prior != SentimentLabel::Neutral && prior != gold {
            s += 1;
            if pred == prior {
                q += 1;
            }
        }
    }
    BiasReport {
        s,
        q,
        ratio: (s > 0).then(|| q as f64 / s as f64),
    }
}

/// Opinion judgments split into the two evaluation populations.
#[derive(Debug, Clone, Default)]
pub struct JudgmentSets {
    /// Aspects with at least one gold opinion.
    pub with_opinion: Vec<ExtractionJudgment>,
    /// Neutral aspects annotated as having no opinion.
    pub no_opinion_neutral: Vec<ExtractionJudgment>,
}

/// Builds judgments from predictions that carry rankings. Aspects without
/// opinion annotation are skipped.
pub fn judgments(preds: &[Prediction], records: &[DatasetRecord]) -> Result<JudgmentSets> {
    let by_id: HashMap<&str, &DatasetRecord> = records.iter().map(|r| (r.sentence_id.as_str(), r)).collect();
    let mut out = JudgmentSets::default();
    for p in preds {
        let Some(dummy_rank) = p.dummy_rank else { continue };
        let rec = by_id
            .get(p.sentence_id.as_str())
            .ok_or_else(|| SarlError::NotFound(format!("no record for prediction {}", p.sentence_id)))?;
        let aspect = rec.aspects.get(p.aspect_index).ok_or_else(|| SarlError::IndexOutOfRange {
            index: p.aspect_index,
            len: rec.aspects.len(),
        })?;
        let Some(gold) = &aspect.gold_opinions else { continue };
        let chars = |sp: Span| SpanChars {
            tokens: sp,
            chars: rec.char_span(sp.s, sp.e),
        };
        let j = ExtractionJudgment {
            ranked: p
                .ranking
                .iter()
                .map(|r| match r.opinion {
                    OpinionRef::Candidate(sp) => Some(chars(sp)),
                    OpinionRef::Dummy => None,
                })
                .collect(),
            gold: gold.iter().map(|&(s, e)| chars(Span::new(s, e))).collect(),
            dummy_rank,
        };
        if !j.gold.is_empty() {
            out.with_opinion.push(j);
        } else if aspect.label == SentimentLabel::Neutral {
            out.no_opinion_neutral.push(j);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtN {
    pub n: usize,
    pub em: Option<f64>,
    pub prf: Option<(f64, f64, f64)>,
    pub hits: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub aspects: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub extraction: Vec<AtN>,
    pub opinion_aspects: usize,
    pub no_opinion_aspects: usize,
    pub bias: BiasReport,
}

impl MetricsReport {
    pub fn compute(preds: &[Prediction], records: &[DatasetRecord]) -> Result<Self> {
        let labels: Vec<SentimentLabel> = preds.iter().map(|p| p.label).collect();
        let golds: Vec<SentimentLabel> = preds.iter().map(|p| p.gold).collect();
        let (accuracy, macro_f1) = accuracy_macro_f1(&labels, &golds)?;
        let sets = judgments(preds, records)?;
        let mut extraction = Vec::new();
        if !sets.with_opinion.is_empty() || !sets.no_opinion_neutral.is_empty() {
            for n in [1, 3] {
                extraction.push(AtN {
                    n,
                    em: em_at_n(&sets.with_opinion, n)?,
                    prf: prf_at_n(&sets.with_opinion, n)?,
                    hits: hits_at_n(&sets.no_opinion_neutral, n).ok(),
                });
            }
        }
        let triples: Vec<_> = preds.iter().map(|p| (p.prior, p.gold, p.label)).collect();
        Ok(MetricsReport {
            aspects: preds.len(),
            accuracy,
            macro_f1,
            extraction,
            opinion_aspects: sets.with_opinion.len(),
            no_opinion_aspects: sets.no_opinion_neutral.len(),
            bias: bias_report(&triples),
        })
    }

    pub fn em(&self, n: usize) -> Option<f64> {
        self.extraction.iter().find(|x| x.n == n).and_then(|x| x.em)
    }

    pub fn hits(&self, n: usize) -> Option<f64> {
        self.extraction.iter().find(|x| x.n == n).and_then(|x| x.hits)
    }

    /// Plain-text report with every value at N = 1 and N = 3.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.4}", x * 100.0));
        let _ = writeln!(out, "[classification]");
        let _ = writeln!(out, "aspects\t{}", self.aspects);
        let _ = writeln!(out, "Accu\t{:.4}", self.accuracy * 100.0);
        let _ = writeln!(out, "Ma-F1\t{:.4}", self.macro_f1 * 100.0);
        let _ = writeln!(out);
        let _ = writeln!(out, "[extraction]");
        if self.extraction.is_empty() {
            let _ = writeln!(out, "note\tno gold opinion annotation; extraction metrics omitted");
        } else {
            let _ = writeln!(out, "opinion_aspects\t{}", self.opinion_aspects);
            let _ = writeln!(out, "no_opinion_neutral_aspects\t{}", self.no_opinion_aspects);
            let _ = writeln!(out, "N\tEM@N\tP@N\tR@N\tF@N\tHits@N");
            for x in &self.extraction {
                let (p, r, f) = match x.prf {
                    Some((p, r, f)) => (Some(p), Some(r), Some(f)),
                    None => (None, None, None),
                };
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    x.n,
                    fmt(x.em),
                    fmt(p),
                    fmt(r),
                    fmt(f),
                    fmt(x.hits)
                );
            }
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "[bias]");
        let _ = writeln!(out, "|S|\t{}", self.bias.s);
        let _ = writeln!(out, "|Q|\t{}", self.bias.q);
        let _ = writeln!(out, "|Q|/|S|\t{}", self.bias.ratio.map_or("undefined".into(), |r| format!("{r:.4}")));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use SentimentLabel::{Negative as Ng, Neutral as Nu, Positive as Po};

    fn sc(s: usize, e: usize, cs: usize, ce: usize) -> SpanChars {
        SpanChars {
            tokens: Span::new(s, e),
            chars: (cs, ce),
        }
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy_macro_f1(&[Po, Nu, Ng], &[Po, Nu, Ng]).unwrap(), (1.0, 1.0));
        let (a, f) = accuracy_macro_f1(&[Po, Po, Ng], &[Po, Nu, Ng]).unwrap();
        assert!((a - 2.0 / 3.0).abs() < 1e-12);
        assert!((f - 5.0 / 9.0).abs() < 1e-12);
        assert!(accuracy_macro_f1(&[], &[]).is_err());
    }

    #[test]
    fn em_rank_boundary() {
        let gold = sc(3, 3, 12, 17);
        let j = ExtractionJudgment {
            ranked: vec![Some(sc(0, 0, 0, 3)), None, Some(sc(3, 3, 12, 17))],
            gold: vec![gold],
            dummy_rank: 2,
        };
        assert_eq!(em_at_n(&[j.clone()], 1).unwrap(), Some(0.0));
        assert_eq!(em_at_n(&[j], 3).unwrap(), Some(1.0));
    }

    #[test]
    fn prf_examples() {
        assert_eq!(char_prf((0, 10), (0, 10)), (1.0, 1.0, 1.0));
        let (p, r, f) = char_prf((5, 10), (0, 10));
        assert_eq!((p, r), (1.0, 0.5));
        assert!((f - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(char_prf((0, 3), (5, 9)), (0.0, 0.0, 0.0));
    }

    #[test]
    fn hits_examples() {
        let j = |rank| ExtractionJudgment {
            ranked: vec![],
            gold: vec![],
            dummy_rank: rank,
        };
        assert_eq!(hits_at_n(&[j(1)], 1).unwrap(), 1.0);
        assert_eq!(hits_at_n(&[j(2)], 1).unwrap(), 0.0);
        assert_eq!(hits_at_n(&[j(2)], 3).unwrap(), 1.0);
        assert!(hits_at_n(&[], 1).is_err());
    }

    #[test]
    fn bias_examples() {
        assert_eq!(bias_report(&[(Nu, Po, Ng)]).ratio, None);
        let r = bias_report(&[(Po, Nu, Po)]);
        assert_eq!((r.s, r.q, r.ratio), (1, 1, Some(1.0)));
    }
}
