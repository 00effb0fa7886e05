use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::aligner::DependencyScores;
use crate::antibias::SentimentLabel;
use crate::data::DatasetRecord;
use crate::error::{Result, SarlError};
use crate::model::network::{Context, ForwardOptions, PreparedSentence, SarlModel};
use crate::numerics::{Graph, ParamStore};
use crate::spans::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OpinionRef {
    Candidate(Span),
    Dummy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankedOpinion {
    pub opinion: OpinionRef,
    pub score: f64,
}

/// Full descending ranking of the `m + 1` scores. Ties keep candidate order
/// with the dummy after every candidate it ties with.
pub fn rank_opinions(scores: &DependencyScores, candidates: &[Span]) -> Result<Vec<RankedOpinion>> {
    let m = candidates.len();
    if scores.f.len() != m + 1 {
        return Err(SarlError::shape("extract_opinion", &[scores.f.len()], &[m + 1]));
    }
    let mut idx: Vec<usize> = (0..=m).collect();
    idx.sort_by(|&i, &j| scores.f[j].total_cmp(&scores.f[i]).then(i.cmp(&j)));
    Ok(idx
        .into_iter()
        .map(|i| RankedOpinion {
            opinion: if i == m { OpinionRef::Dummy } else { OpinionRef::Candidate(candidates[i]) },
            score: scores.f[i],
        })
        .collect())
}

/// The `top_n` best-scoring opinions (candidate spans or the dummy).
pub fn extract_opinion(scores: &DependencyScores, candidates: &[Span], top_n: usize) -> Result<Vec<RankedOpinion>> {
    if top_n < 1 {
        return Err(SarlError::Contract("top_n must be at least 1".into()));
    }
    let mut ranked = rank_opinions(scores, candidates)?;
    ranked.truncate(top_n);
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub sentence_id: String,
    pub aspect_index: usize,
    pub aspect: Span,
    pub gold: SentimentLabel,
    pub prior: SentimentLabel,
    pub probs: [f64; 3],
    pub label: SentimentLabel,
    pub candidates: Vec<Span>,
    /// `None` when the aligner is disabled.
    pub scores: Option<DependencyScores>,
    /// Full ranking; empty without the aligner.
    pub ranking: Vec<RankedOpinion>,
    /// 1-based rank of the dummy, when there is a ranking.
    pub dummy_rank: Option<usize>,
    /// Aspect representation before opinion integration.
    pub representation: Vec<f64>,
}

pub fn predict_sentence(
    model: &SarlModel,
    store: &ParamStore,
    s: &PreparedSentence,
    ctx: Context<'_>,
    opts: &ForwardOptions,
) -> Result<Vec<Prediction>> {
    let mut g = Graph::new();
    let opts = ForwardOptions {
        with_prior: false,
        ..*opts
    };
    let fwd = model.forward_sentence(&mut g, store, s, ctx, &opts, None)?;
    let probs = g.value(fwd.p_sc).clone();
    let c = g.value(fwd.c).clone();
    let mut out = Vec::with_capacity(s.aspects.len());
    for (i, pa) in s.aspects.iter().enumerate() {
        let p = probs.row(i);
        let scores = fwd.dependency_scores(&g, i);
        let (ranking, candidates) = match &scores {
            Some(sc) if sc.m() == pa.candidates.len() => (rank_opinions(sc, &pa.candidates)?, pa.candidates.clone()),
            Some(sc) => (rank_opinions(sc, &[])?, vec![]),
            None => (vec![], pa.candidates.clone()),
        };
        let dummy_rank = ranking
            .iter()
            .position(|r| r.opinion == OpinionRef::Dummy)
            .map(|k| k + 1);
        out.push(Prediction {
            sentence_id: s.sentence_id.clone(),
            aspect_index: i,
            aspect: pa.span,
            gold: pa.gold,
            prior: pa.prior,
            probs: [p[0], p[1], p[2]],
            label: SentimentLabel::argmax(p),
            candidates,
            scores,
            ranking,
            dummy_rank,
            representation: c.row(i).to_vec(),
        });
    }
    Ok(out)
}

/// Predictions for every sentence, in input order. Sentences are evaluated
/// in parallel against the frozen parameters.
pub fn predict(
    model: &SarlModel,
    store: &ParamStore,
    data: &[PreparedSentence],
    opts: &ForwardOptions,
) -> Result<Vec<Prediction>> {
    let per: Vec<Result<Vec<Prediction>>> = data
        .par_iter()
        .map(|s| {
            if s.aspects.is_empty() {
                Ok(vec![])
            } else {
                predict_sentence(model, store, s, Context::Encoder, opts)
            }
        })
        .collect();
    let mut out = Vec::new();
    for r in per {
        out.extend(r?);
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct DumpOpinion {
    dummy: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    s: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    e: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    char_start: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    char_end: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    score: f64,
}

#[derive(Debug, Serialize)]
struct DumpRecord<'a> {
    sentence_id: &'a str,
    aspect_index: usize,
    aspect: [usize; 2],
    aspect_text: String,
    gold: SentimentLabel,
    label: SentimentLabel,
    distribution: [f64; 3],
    top_opinions: Vec<DumpOpinion>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dummy_rank: Option<usize>,
}

/// One JSON object per aspect. `records` must contain every predicted sentence.
pub fn prediction_lines(preds: &[Prediction], records: &[DatasetRecord], top_n: usize) -> Result<Vec<String>> {
    let by_id: std::collections::HashMap<&str, &DatasetRecord> =
        records.iter().map(|r| (r.sentence_id.as_str(), r)).collect();
    let mut lines = Vec::with_capacity(preds.len());
    for p in preds {
        let rec = by_id
            .get(p.sentence_id.as_str())
            .ok_or_else(|| SarlError::NotFound(format!("no record for prediction {}", p.sentence_id)))?;
        let top_opinions = p
            .ranking
            .iter()
            .take(top_n)
            .map(|r| match r.opinion {
                OpinionRef::Dummy => DumpOpinion {
                    dummy: true,
                    s: None,
                    e: None,
                    char_start: None,
                    char_end: None,
                    text: None,
                    score: r.score,
                },
                OpinionRef::Candidate(sp) => {
                    let (cs, ce) = rec.char_span(sp.s, sp.e);
                    DumpOpinion {
                        dummy: false,
                        s: Some(sp.s),
                        e: Some(sp.e),
                        char_start: Some(cs),
                        char_end: Some(ce),
                        text: Some(rec.span_text(sp.s, sp.e)),
                        score: r.score,
                    }
                }
            })
            .collect();
        let d = DumpRecord {
            sentence_id: &p.sentence_id,
            aspect_index: p.aspect_index,
            aspect: [p.aspect.s, p.aspect.e],
            aspect_text: rec.span_text(p.aspect.s, p.aspect.e),
            gold: p.gold,
            label: p.label,
            distribution: p.probs,
            top_opinions,
            dummy_rank: p.dummy_rank,
        };
        lines.push(serde_json::to_string(&d).expect("prediction serializes"));
    }
    Ok(lines)
}

pub fn write_predictions(preds: &[Prediction], records: &[DatasetRecord], top_n: usize, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| SarlError::io(path, e))?;
    for line in prediction_lines(preds, records, top_n)? {
        writeln!(f, "{line}").map_err(|e| SarlError::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(f: Vec<f64>) -> DependencyScores {
        let m = f.len() - 1;
        DependencyScores {
            f,
            a: vec![0.0; m],
            r: vec![0.0; m],
            logits: vec![0.0; m],
            delta: 1.0,
        }
    }

    #[test]
    fn top1_is_argmax() {
        let cands = [Span::new(0, 0), Span::new(2, 2)];
        let top = extract_opinion(&scores(vec![0.1, 0.6, 0.05]), &cands, 1).unwrap();
        assert_eq!(top[0].opinion, OpinionRef::Candidate(Span::new(2, 2)));
        assert!(extract_opinion(&scores(vec![0.1, 0.6, 0.05]), &cands, 0).is_err());
    }

    #[test]
    fn dummy_only_ranking() {
        let r = extract_opinion(&DependencyScores::dummy_only(), &[], 3).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].opinion, OpinionRef::Dummy);
    }

    #[test]
    fn ties_keep_order_dummy_last() {
        let cands = [Span::new(0, 0), Span::new(1, 1)];
        let r = rank_opinions(&scores(vec![0.2, 0.2, 0.2]), &cands).unwrap();
        let order: Vec<OpinionRef> = r.iter().map(|x| x.opinion).collect();
        assert_eq!(
            order,
            vec![
                OpinionRef::Candidate(Span::new(0, 0)),
                OpinionRef::Candidate(Span::new(1, 1)),
                OpinionRef::Dummy
            ]
        );
    }
}
