//! Prior-sentiment lexicon and the adversarial prior discriminator.

mod lexicon;

pub use lexicon::{lookup_prior, PriorLexicon, SentimentLabel, BUILTIN_LEXICON};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SarlError};
use crate::numerics::{adam_step, nll_rows, softmax, Graph, GroupName, Mlp, OptimizerState, ParamStore, Tensor, Var};

/// Predicts the prior polarity of an aspect from its span representation.
/// Architecture `3d -> d -> 3`, all parameters in the `dis` group.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub mlp: Mlp,
}

impl Discriminator {
    pub fn new<R: Rng>(store: &mut ParamStore, d: usize, rng: &mut R) -> Self {
        Discriminator {
            mlp: Mlp::new(store, GroupName::Dis, "dis.mlp", &[3 * d, d, 3], rng),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.mlp.in_dim()
    }
}

/// Row-wise prior distributions for `k x 3d` aspect representations.
pub fn discriminator_forward(g: &mut Graph, store: &ParamStore, disc: &Discriminator, c: Var) -> Result<Var> {
    let (k, w) = g.shape(c);
    if w != disc.in_dim() {
        return Err(SarlError::shape("discriminator_forward", &[k, w], &[k, disc.in_dim()]));
    }
    let logits = disc.mlp.forward(g, store, c)?;
    Ok(softmax(g, logits))
}

/// `sum -ln p_pr[y_prior]`. Back-propagate into [`dis_groups`] only.
pub fn loss_dis(g: &mut Graph, prior_probs: Var, priors: &[SentimentLabel]) -> Result<Var> {
    let classes: Vec<usize> = priors.iter().map(|p| p.index()).collect();
    nll_rows(g, prior_probs, &classes)
}

/// `sum -ln p_pr[Neutral]`. Back-propagate into [`adv_groups`].
pub fn loss_adv(g: &mut Graph, prior_probs: Var) -> Result<Var> {
    let (k, _) = g.shape(prior_probs);
    nll_rows(g, prior_probs, &vec![SentimentLabel::Neutral.index(); k])
}

pub fn dis_groups() -> &'static [GroupName] {
    &[GroupName::Dis]
}

/// Groups the adversarial loss updates. The neutral-reinforce variant also
/// pushes the discriminator itself toward neutral.
pub fn adv_groups(neutral_reinforce: bool) -> &'static [GroupName] {
    if neutral_reinforce {
        &[GroupName::Dis, GroupName::Aa, GroupName::Ptm]
    } else {
        &[GroupName::Aa, GroupName::Ptm]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            steps: 300,
            learning_rate: 1e-2,
            test_fraction: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeReport {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub train_size: usize,
    pub test_size: usize,
}

/// Post-hoc probe: a fresh discriminator-shaped MLP trained on frozen
/// features to recover the prior label, scored on a held-out split.
pub fn bias_probe(features: &[Vec<f64>], labels: &[SentimentLabel], cfg: &ProbeConfig) -> Result<ProbeReport> {
    if features.len() != labels.len() || features.len() < 2 {
        return Err(SarlError::Contract(format!(
            "probe needs matching features and labels, got {} and {}",
            features.len(),
            labels.len()
        )));
    }
    let width = features[0].len();
    if width == 0 || width % 3 != 0 || features.iter().any(|f| f.len() != width) {
        return Err(SarlError::Contract("probe features must share a width divisible by 3".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.shuffle(&mut rng);
    let n_test = ((features.len() as f64 * cfg.test_fraction).round() as usize).clamp(1, features.len() - 1);
    let (test_idx, train_idx) = order.split_at(n_test);

    let to_tensor = |idx: &[usize]| -> Result<Tensor> {
        let data = idx.iter().flat_map(|&i| features[i].iter().copied()).collect();
        Tensor::matrix(idx.len(), width, data)
    };
    let x_train = to_tensor(train_idx)?;
    let x_test = to_tensor(test_idx)?;
    let y_train: Vec<SentimentLabel> = train_idx.iter().map(|&i| labels[i]).collect();
    let y_test: Vec<SentimentLabel> = test_idx.iter().map(|&i| labels[i]).collect();

    let mut store = ParamStore::new(cfg.learning_rate);
    let disc = Discriminator::new(&mut store, width / 3, &mut rng);
    let mut state = OptimizerState::new(cfg.steps as u64, 0.0)?;
    for _ in 0..cfg.steps {
        let mut g = Graph::new();
        let x = g.constant(x_train.clone());
        let p = discriminator_forward(&mut g, &store, &disc, x)?;
        let loss = loss_dis(&mut g, p, &y_train)?;
        let mean = g.scale(loss, 1.0 / y_train.len() as f64);
        g.backward(mean, &mut store, dis_groups())?;
        adam_step(&mut store, dis_groups(), &mut state)?;
    }
    let accuracy = |x: &Tensor, y: &[SentimentLabel]| -> Result<f64> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let p = discriminator_forward(&mut g, &store, &disc, xv)?;
        let probs = g.value(p);
        let hits = (0..y.len()).filter(|&r| SentimentLabel::argmax(probs.row(r)) == y[r]).count();
        Ok(hits as f64 / y.len() as f64)
    };
    Ok(ProbeReport {
        train_accuracy: accuracy(&x_train, &y_train)?,
        test_accuracy: accuracy(&x_test, &y_test)?,
        train_size: y_train.len(),
        test_size: y_test.len(),
    })
}
