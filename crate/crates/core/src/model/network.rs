use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aligner::{
    alignment_logits, alignment_scores, dummy_score, integrate_opinion, mention_scores, AlignmentScorer,
    DependencyScores, DistanceProvider, Gate, MentionOutput, MentionScorer, PositionTable, Teacher,
};
use crate::antibias::{discriminator_forward, loss_adv, lookup_prior, Discriminator, PriorLexicon, SentimentLabel};
use crate::data::{DatasetRecord, Vocab};
use crate::encoder::{EncoderConfig, FixtureEmbeddings, TransformerEncoder};
use crate::error::{Result, SarlError};
use crate::model::config::{Ablation, DeltaMode};
use crate::numerics::{kl_rows, nll_rows, softmax, Graph, GroupName, Mlp, ParamStore, Tensor, Var};
use crate::spans::{enumerate_candidates, span_reprs_with_scores, Span};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Width of the distance-bucket embedding.
    pub z_dim: usize,
}

impl ModelConfig {
    pub fn toy(vocab_size: usize) -> Self {
        ModelConfig {
            encoder: EncoderConfig::toy(vocab_size),
            z_dim: 8,
        }
    }
}

/// Every trainable component, wired to tensors in one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct SarlModel {
    pub config: ModelConfig,
    pub encoder: TransformerEncoder,
    pub aspect_spans: crate::spans::SpanEncoder,
    pub discriminator: Discriminator,
    pub opinion_spans: crate::spans::SpanEncoder,
    pub mention: MentionScorer,
    pub positions: PositionTable,
    pub alignment: AlignmentScorer,
    pub gate: Gate,
    /// `3d -> d -> 3` in `sc`.
    pub classifier: Mlp,
}

impl SarlModel {
    /// Builds the model and initializes its parameters from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        let d = config.encoder.model_dim;
        if config.z_dim == 0 {
            return Err(SarlError::Contract("z_dim must be positive".into()));
        }
        let encoder = TransformerEncoder::new(config.encoder.clone(), &mut store, &mut rng)?;
        let aspect_spans = crate::spans::SpanEncoder::new(&mut store, GroupName::Aa, "aa", d, &mut rng);
        let discriminator = Discriminator::new(&mut store, d, &mut rng);
        let opinion_spans = crate::spans::SpanEncoder::new(&mut store, GroupName::Ao, "ao", d, &mut rng);
        let mention = MentionScorer::new(&mut store, d, &mut rng);
        let positions = PositionTable::new(&mut store, config.z_dim, &mut rng);
        let alignment = AlignmentScorer::new(&mut store, d, config.z_dim, &mut rng);
        let gate = Gate::new(&mut store, d, &mut rng);
        let classifier = Mlp::new(&mut store, GroupName::Sc, "sc.mlp", &[3 * d, d, 3], &mut rng);
        Ok((
            SarlModel {
                config,
                encoder,
                aspect_spans,
                discriminator,
                opinion_spans,
                mention,
                positions,
                alignment,
                gate,
                classifier,
            },
            store,
        ))
    }

    pub fn dim(&self) -> usize {
        self.config.encoder.model_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedAspect {
    pub span: Span,
    pub gold: SentimentLabel,
    pub prior: SentimentLabel,
    pub candidates: Vec<Span>,
    /// Position of each candidate in the sentence's candidate union.
    pub union_index: Vec<usize>,
    pub buckets: Vec<usize>,
}

/// A record turned into model inputs: ids, candidate sets, priors and
/// distillation targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSentence {
    pub sentence_id: String,
    pub token_ids: Vec<usize>,
    pub aspects: Vec<PreparedAspect>,
    /// Sorted union of every aspect's candidates.
    pub union: Vec<Span>,
    /// Teacher distributions for `union`, `union.len() x 3`.
    pub teacher: Option<Tensor>,
}

pub struct Resources<'a> {
    pub vocab: &'a Vocab,
    pub lexicon: &'a PriorLexicon,
    pub distances: &'a DistanceProvider,
    pub teacher: Option<&'a dyn Teacher>,
    pub l: usize,
    pub max_len: usize,
}

pub fn prepare_sentence(record: &DatasetRecord, res: &Resources<'_>) -> Result<PreparedSentence> {
    record.validate()?;
    let mut token_ids = res.vocab.encode(record.tokens.iter().map(|t| t.text.as_str()));
    if token_ids.len() > res.max_len {
        log::warn!(
            "sentence {} has {} tokens; truncated to {}",
            record.sentence_id,
            token_ids.len(),
            res.max_len
        );
        token_ids.truncate(res.max_len);
    }
    let n = token_ids.len();
    let mut per_aspect = Vec::with_capacity(record.aspects.len());
    for a in &record.aspects {
        let span = Span::new(a.s, a.e);
        if a.e >= n {
            return Err(SarlError::InvalidRecord {
                record: record.sentence_id.clone(),
                msg: format!("aspect ({}, {}) lies beyond the {n}-token window", a.s, a.e),
            });
        }
        per_aspect.push((a, span, enumerate_candidates(n, span, res.l)));
    }
    let mut union: Vec<Span> = per_aspect.iter().flat_map(|(_, _, c)| c.iter().copied()).collect();
    union.sort();
    union.dedup();
    let mut aspects = Vec::with_capacity(per_aspect.len());
    for (a, span, candidates) in per_aspect {
        let union_index = candidates
            .iter()
            .map(|c| union.binary_search(c).expect("candidate is in the union"))
            .collect();
        let buckets = candidates
            .iter()
            .map(|&c| res.distances.bucket(&record.sentence_id, span, c))
            .collect::<Result<Vec<_>>>()?;
        aspects.push(PreparedAspect {
            span,
            gold: a.label,
            prior: lookup_prior(&record.span_text(a.s, a.e), res.lexicon),
            candidates,
            union_index,
            buckets,
        });
    }
    let teacher = match (res.teacher, union.is_empty()) {
        (Some(t), false) => {
            let mut data = Vec::with_capacity(union.len() * 3);
            for &sp in &union {
                data.extend_from_slice(&t.predict(record, sp)?);
            }
            Some(Tensor::matrix(union.len(), 3, data)?)
        }
        _ => None,
    };
    Ok(PreparedSentence {
        sentence_id: record.sentence_id.clone(),
        token_ids,
        aspects,
        union,
        teacher,
    })
}

pub fn prepare_dataset(records: &[DatasetRecord], res: &Resources<'_>) -> Result<Vec<PreparedSentence>> {
    records.iter().map(|r| prepare_sentence(r, res)).collect()
}

/// Where the contextual matrix comes from.
#[derive(Debug, Clone, Copy)]
pub enum Context<'a> {
    Encoder,
    /// Precomputed matrices; gradients stop at them.
    Fixture(&'a FixtureEmbeddings),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    pub ablation: Ablation,
    pub delta: DeltaMode,
    /// Also run the discriminator on the aspect representations.
    pub with_prior: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions {
            ablation: Ablation::default(),
            delta: DeltaMode::OneOverM,
            with_prior: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AspectForward {
    pub delta: f64,
    /// `1 x 3d` slice of the aspect representations.
    pub c: Var,
    /// Present when the aspect has at least one candidate and the aligner is on.
    pub logits: Option<Var>,
    pub a: Option<Var>,
    pub r_row: Option<Var>,
    /// `1 x (m + 1)` final scores, dummy last.
    pub f: Option<Var>,
    pub gate: Option<Var>,
    pub v: Var,
}

#[derive(Debug, Clone)]
pub struct SentenceForward {
    /// `n x d`.
    pub h: Var,
    /// `k x 3d`.
    pub c: Var,
    /// `k x 3d` after opinion integration.
    pub v: Var,
    /// `k x 3`.
    pub p_sc: Var,
    /// `k x 3` discriminator output.
    pub prior: Option<Var>,
    pub mention: Option<MentionOutput>,
    pub aspects: Vec<AspectForward>,
}

impl SentenceForward {
    /// Plain-valued scores for aspect `i` (`None` without the aligner).
    pub fn dependency_scores(&self, g: &Graph, i: usize) -> Option<DependencyScores> {
        let af = &self.aspects[i];
        match (af.f, af.a, af.r_row, af.logits) {
            (Some(f), Some(a), Some(r), Some(l)) => Some(DependencyScores {
                f: g.value(f).data().to_vec(),
                a: g.value(a).data().to_vec(),
                r: g.value(r).data().to_vec(),
                logits: g.value(l).data().to_vec(),
                delta: af.delta,
            }),
            (Some(_), ..) => Some(DependencyScores::dummy_only()),
            _ => None,
        }
    }
}

impl SarlModel {
    fn context(&self, g: &mut Graph, store: &ParamStore, s: &PreparedSentence, ctx: Context<'_>, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        match ctx {
            Context::Encoder => Ok(self.encoder.forward(g, store, &s.token_ids, rng)?.hidden),
            Context::Fixture(fx) => {
                fx.check_dim(self.dim())?;
                let h = fx.to_graph(g, &s.sentence_id)?;
                if g.shape(h).0 != s.token_ids.len() {
                    return Err(SarlError::shape("fixture_length", &[s.token_ids.len()], &[g.shape(h).0]));
                }
                Ok(h)
            }
        }
    }

    /// Encodes the sentence and the aspect representations only.
    pub fn forward_aspects(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        s: &PreparedSentence,
        ctx: Context<'_>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Var)> {
        if s.aspects.is_empty() {
            return Err(SarlError::Contract(format!("sentence {} has no aspects", s.sentence_id)));
        }
        let h = self.context(g, store, s, ctx, rng)?;
        let spans: Vec<Span> = s.aspects.iter().map(|a| a.span).collect();
        let scores = self.aspect_spans.scores(g, store, h)?;
        let c = span_reprs_with_scores(g, h, scores, &spans)?;
        Ok((h, c))
    }

    /// Full pipeline for all aspects of one sentence over a single encoder pass.
    pub fn forward_sentence(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        s: &PreparedSentence,
        ctx: Context<'_>,
        opts: &ForwardOptions,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<SentenceForward> {
        let (h, c) = self.forward_aspects(g, store, s, ctx, rng)?;
        let use_aligner = !opts.ablation.no_aligner;
        let mention = if use_aligner && !s.union.is_empty() {
            let scores = self.opinion_spans.scores(g, store, h)?;
            let u_all = span_reprs_with_scores(g, h, scores, &s.union)?;
            let out = mention_scores(g, store, &self.mention, u_all)?;
            Some((u_all, out))
        } else {
            None
        };

        let mut aspects = Vec::with_capacity(s.aspects.len());
        let mut vs = Vec::with_capacity(s.aspects.len());
        for (i, pa) in s.aspects.iter().enumerate() {
            let ci = g.slice_rows(c, i, 1)?;
            let m = pa.candidates.len();
            let delta = opts.delta.delta(m);
            if !use_aligner {
                vs.push(ci);
                aspects.push(AspectForward {
                    delta,
                    c: ci,
                    logits: None,
                    a: None,
                    r_row: None,
                    f: None,
                    gate: None,
                    v: ci,
                });
                continue;
            }
            let af = match (&mention, m) {
                (Some((u_all, ms)), m) if m > 0 => {
                    let u = g.gather_rows(*u_all, &pa.union_index)?;
                    let r_row = if opts.ablation.no_sentiment_score {
                        g.constant(Tensor::filled(1, m, 1.0))
                    } else {
                        let r_col = g.gather_rows(ms.r, &pa.union_index)?;
                        g.transpose(r_col)
                    };
                    let q = crate::aligner::pair_reprs(g, store, &self.positions, ci, u, &pa.buckets)?;
                    let logits = alignment_logits(g, store, &self.alignment, q)?;
                    let al = alignment_scores(g, logits, r_row)?;
                    let fd = dummy_score(g, al.a, r_row, delta)?;
                    let f = g.concat_cols(&[al.f, fd])?;
                    let integ = integrate_opinion(g, store, &self.gate, ci, Some(u), f)?;
                    AspectForward {
                        delta,
                        c: ci,
                        logits: Some(logits),
                        a: Some(al.a),
                        r_row: Some(r_row),
                        f: Some(f),
                        gate: Some(integ.gate),
                        v: integ.v,
                    }
                }
                _ => {
                    let f = g.constant(Tensor::scalar(1.0));
                    let integ = integrate_opinion(g, store, &self.gate, ci, None, f)?;
                    AspectForward {
                        delta,
                        c: ci,
                        logits: None,
                        a: None,
                        r_row: None,
                        f: Some(f),
                        gate: Some(integ.gate),
                        v: integ.v,
                    }
                }
            };
            vs.push(af.v);
            aspects.push(af);
        }
        let v = g.concat_rows(&vs)?;
        let logits = self.classifier.forward(g, store, v)?;
        let p_sc = softmax(g, logits);
        let prior = if opts.with_prior {
            Some(discriminator_forward(g, store, &self.discriminator, c)?)
        } else {
            None
        };
        Ok(SentenceForward {
            h,
            c,
            v,
            p_sc,
            prior,
            mention: mention.map(|(_, m)| m),
            aspects,
        })
    }
}

/// `sum -ln p_sc[gold]` over the rows of `p_sc`.
pub fn loss_sc(g: &mut Graph, p_sc: Var, golds: &[SentimentLabel]) -> Result<Var> {
    let classes: Vec<usize> = golds.iter().map(|l| l.index()).collect();
    nll_rows(g, p_sc, &classes)
}

/// `L_sc + beta L_adv + gamma L_kl`; absent terms contribute nothing.
pub fn loss_total(g: &mut Graph, sc: Var, adv: Option<Var>, kl: Option<Var>, beta: f64, gamma: f64) -> Result<Var> {
    let mut total = sc;
    if let Some(a) = adv {
        let t = g.scale(a, beta);
        total = g.add(total, t)?;
    }
    if let Some(k) = kl {
        let t = g.scale(k, gamma);
        total = g.add(total, t)?;
    }
    Ok(total)
}

/// The same combination on plain numbers.
pub fn combine_losses(sc: f64, adv: Option<f64>, kl: Option<f64>, beta: f64, gamma: f64) -> f64 {
    sc + adv.map_or(0.0, |a| beta * a) + kl.map_or(0.0, |k| gamma * k)
}

#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub sc: Var,
    pub adv: Option<Var>,
    pub kl: Option<Var>,
}

/// Loss components of one sentence; which terms exist follows the ablation.
pub fn sentence_losses(g: &mut Graph, fwd: &SentenceForward, s: &PreparedSentence, ablation: &Ablation) -> Result<LossTerms> {
    let golds: Vec<SentimentLabel> = s.aspects.iter().map(|a| a.gold).collect();
    let sc = loss_sc(g, fwd.p_sc, &golds)?;
    let adv = match (ablation.uses_adv(), fwd.prior) {
        (true, Some(p)) => Some(loss_adv(g, p)?),
        (true, None) => return Err(SarlError::Contract("adversarial loss needs the discriminator output".into())),
        _ => None,
    };
    let kl = match (ablation.uses_kl(), &fwd.mention, &s.teacher) {
        (true, Some(ms), Some(teacher)) => {
            let rows = kl_rows(g, teacher, ms.probs)?;
            let idx: Vec<usize> = s.aspects.iter().flat_map(|a| a.union_index.iter().copied()).collect();
            let picked = g.gather_rows(rows, &idx)?;
            Some(g.sum(picked))
        }
        (true, Some(_), None) => {
            return Err(SarlError::Contract(format!(
                "sentence {} has candidates but no teacher targets",
                s.sentence_id
            )))
        }
        _ => None,
    };
    Ok(LossTerms { sc, adv, kl })
}
