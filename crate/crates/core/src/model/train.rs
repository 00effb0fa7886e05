use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::antibias::{dis_groups, discriminator_forward, loss_dis, SentimentLabel};
use crate::error::{Result, SarlError};
use crate::model::config::TrainConfig;
use crate::model::network::{loss_total, sentence_losses, Context, ForwardOptions, PreparedSentence, SarlModel};
use crate::numerics::{adam_step, Graph, GroupName, OptimizerState, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Discriminator,
    Model,
}

/// Kind of every global batch step under `cfg`.
pub fn step_kind(cfg: &TrainConfig, t: u64) -> StepKind {
    if cfg.ablation.uses_dis_steps() && cfg.alpha.is_dis_step(t) {
        StepKind::Discriminator
    } else {
        StepKind::Model
    }
}

/// Per-epoch sums of the loss components and running training accuracy
/// over the aspects seen in model steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub dis_steps: usize,
    pub model_steps: usize,
    pub loss_dis: f64,
    pub loss_sc: f64,
    pub loss_adv: f64,
    pub loss_kl: f64,
    pub loss_total: f64,
    pub train_accuracy: f64,
}

impl EpochLog {
    pub fn summary(&self) -> String {
        format!(
            "epoch {:>3}  dis={} model={}  L_dis={:.4} L_sc={:.4} L_adv={:.4} L_kl={:.4} L_total={:.4}  acc={:.4}",
            self.epoch,
            self.dis_steps,
            self.model_steps,
            self.loss_dis,
            self.loss_sc,
            self.loss_adv,
            self.loss_kl,
            self.loss_total,
            self.train_accuracy
        )
    }
}

fn finite(value: f64, batch: u64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(SarlError::NonFinite {
            batch: batch as usize,
            detail: format!("{what} = {value}"),
        })
    }
}

/// Groups in `wanted` that actually received a gradient.
fn touched(store: &ParamStore, wanted: &[GroupName]) -> Vec<GroupName> {
    wanted
        .iter()
        .copied()
        .filter(|&g| store.ids(g).any(|id| store.grad(id).is_some()))
        .collect()
}

/// Discriminator-only step over one batch; returns the summed loss.
pub fn discriminator_step(
    model: &SarlModel,
    store: &mut ParamStore,
    batch: &[&PreparedSentence],
    state: &mut OptimizerState,
    batch_id: u64,
) -> Result<f64> {
    let mut total = 0.0;
    for s in batch {
        let mut g = Graph::new();
        let (_, c) = model.forward_aspects(&mut g, store, s, Context::Encoder, None)?;
        let p = discriminator_forward(&mut g, store, &model.discriminator, c)?;
        let priors: Vec<SentimentLabel> = s.aspects.iter().map(|a| a.prior).collect();
        let loss = loss_dis(&mut g, p, &priors)?;
        total += finite(g.scalar(loss)?, batch_id, "L_dis")?;
        g.backward(loss, store, dis_groups())?;
    }
    adam_step(store, dis_groups(), state)?;
    Ok(total)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ModelStepStats {
    pub sc: f64,
    pub adv: f64,
    pub kl: f64,
    pub total: f64,
    pub correct: usize,
    pub aspects: usize,
}

/// One optimizer step on `L_sc + beta L_adv + gamma L_kl` over the batch.
pub fn model_step(
    model: &SarlModel,
    store: &mut ParamStore,
    batch: &[&PreparedSentence],
    cfg: &TrainConfig,
    state: &mut OptimizerState,
    batch_id: u64,
    mut dropout: Option<&mut ChaCha8Rng>,
) -> Result<ModelStepStats> {
    let opts = ForwardOptions {
        ablation: cfg.ablation,
        delta: cfg.delta,
        with_prior: cfg.ablation.uses_adv(),
    };
    let groups = cfg.model_groups();
    let mut st = ModelStepStats::default();
    for s in batch {
        let mut g = Graph::new();
        let fwd = model.forward_sentence(&mut g, store, s, Context::Encoder, &opts, dropout.as_deref_mut())?;
        let terms = sentence_losses(&mut g, &fwd, s, &cfg.ablation)?;
        let total = loss_total(&mut g, terms.sc, terms.adv, terms.kl, cfg.beta, cfg.gamma)?;
        st.sc += finite(g.scalar(terms.sc)?, batch_id, "L_sc")?;
        if let Some(a) = terms.adv {
            st.adv += finite(g.scalar(a)?, batch_id, "L_adv")?;
        }
        if let Some(k) = terms.kl {
            st.kl += finite(g.scalar(k)?, batch_id, "L_kl")?;
        }
        st.total += finite(g.scalar(total)?, batch_id, "L_total")?;
        let probs = g.value(fwd.p_sc);
        for (i, a) in s.aspects.iter().enumerate() {
            if SentimentLabel::argmax(probs.row(i)) == a.gold {
                st.correct += 1;
            }
        }
        st.aspects += s.aspects.len();
        g.backward(total, store, &groups)?;
    }
    let step_groups = touched(store, &groups);
    adam_step(store, &step_groups, state)?;
    Ok(st)
}

fn apply_learning_rates(store: &mut ParamStore, cfg: &TrainConfig) {
    for g in GroupName::ALL {
        store.set_learning_rate(g, cfg.learning_rates.get(g));
    }
}

/// Alternating optimization over `data` following `cfg`.
///
/// Batches are drawn from a seeded shuffle every epoch; the global step
/// counter decides between discriminator and model steps. `on_epoch` runs
/// after each epoch with its log and the current parameters.
pub fn train(
    model: &SarlModel,
    store: &mut ParamStore,
    data: &[PreparedSentence],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog, &ParamStore) -> Result<()>,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    let usable: Vec<&PreparedSentence> = data.iter().filter(|s| !s.aspects.is_empty()).collect();
    if usable.is_empty() {
        return Err(SarlError::Contract("training set has no aspects".into()));
    }
    apply_learning_rates(store, cfg);
    store.zero_grads();
    let per_epoch = usable.len().div_ceil(cfg.batch_size) as u64;
    let mut state = OptimizerState::new(per_epoch * cfg.epochs as u64, cfg.warmup_fraction)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9));
    let use_dropout = model.config.encoder.dropout > 0.0;
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut t: u64 = 0;
    for epoch in 1..=cfg.epochs {
        let mut order = usable.clone();
        order.shuffle(&mut shuffle_rng);
        let mut log = EpochLog {
            epoch,
            dis_steps: 0,
            model_steps: 0,
            loss_dis: 0.0,
            loss_sc: 0.0,
            loss_adv: 0.0,
            loss_kl: 0.0,
            loss_total: 0.0,
            train_accuracy: 0.0,
        };
        let (mut correct, mut seen) = (0usize, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            match step_kind(cfg, t) {
                StepKind::Discriminator => {
                    log.loss_dis += discriminator_step(model, store, batch, &mut state, t)?;
                    log.dis_steps += 1;
                }
                StepKind::Model => {
                    let rng = if use_dropout { Some(&mut dropout_rng) } else { None };
                    let st = model_step(model, store, batch, cfg, &mut state, t, rng)?;
                    log.loss_sc += st.sc;
                    log.loss_adv += st.adv;
                    log.loss_kl += st.kl;
                    log.loss_total += st.total;
                    correct += st.correct;
                    seen += st.aspects;
                    log.model_steps += 1;
                }
            }
            t += 1;
        }
        log.train_accuracy = if seen > 0 { correct as f64 / seen as f64 } else { 0.0 };
        log::info!("{}", log.summary());
        on_epoch(&log, store)?;
        logs.push(log);
    }
    Ok(logs)
}
