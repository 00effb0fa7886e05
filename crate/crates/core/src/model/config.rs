use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SarlError};
use crate::numerics::GroupName;

/// Proportion of discriminator steps, `p/q` kept in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Alpha {
    p: u32,
    q: u32,
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Alpha {
    /// Requires `0 < p < q`.
    pub fn new(p: u32, q: u32) -> Result<Self> {
        if p == 0 || p >= q {
            return Err(SarlError::Contract(format!("alpha {p}/{q} must lie strictly between 0 and 1")));
        }
        let k = gcd(p, q);
        Ok(Alpha { p: p / k, q: q / k })
    }

    pub fn numerator(self) -> u32 {
        self.p
    }

    pub fn denominator(self) -> u32 {
        self.q
    }

    pub fn value(self) -> f64 {
        self.p as f64 / self.q as f64
    }

    /// Whether global batch step `t` is a discriminator step: the first `p`
    /// steps of every window of `q` are.
    pub fn is_dis_step(self, t: u64) -> bool {
        (t % u64::from(self.q)) < u64::from(self.p)
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.p, self.q)
    }
}

impl FromStr for Alpha {
    type Err = SarlError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || SarlError::Contract(format!("alpha `{s}` is not a fraction p/q"));
        let (p, q) = s.trim().split_once('/').ok_or_else(bad)?;
        Alpha::new(p.trim().parse().map_err(|_| bad())?, q.trim().parse().map_err(|_| bad())?)
    }
}

impl TryFrom<String> for Alpha {
    type Error = SarlError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Alpha> for String {
    fn from(a: Alpha) -> String {
        a.to_string()
    }
}

/// Dummy re-scaling factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaMode {
    OneOverM,
    Fixed(f64),
}

impl DeltaMode {
    pub fn delta(self, m: usize) -> f64 {
        match self {
            DeltaMode::OneOverM => 1.0 / m.max(1) as f64,
            DeltaMode::Fixed(x) => x,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// No discriminator steps and no adversarial term.
    pub no_adv: bool,
    /// Classify the aspect representation directly; no alignment, no distillation.
    pub no_aligner: bool,
    /// Drop the distillation term.
    pub no_distill: bool,
    /// Mention scores fixed to one, so the dummy score is always zero.
    pub no_sentiment_score: bool,
    /// Adversarial loss also updates the discriminator; no discriminator steps.
    pub neutral_reinforce: bool,
}

impl Ablation {
    pub fn uses_dis_steps(&self) -> bool {
        !self.no_adv && !self.neutral_reinforce
    }

    pub fn uses_adv(&self) -> bool {
        !self.no_adv
    }

    pub fn uses_kl(&self) -> bool {
        !self.no_aligner && !self.no_distill
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub ptm: f64,
    pub aa: f64,
    pub dis: f64,
    pub ao: f64,
    pub ms: f64,
    #[serde(rename = "as")]
    pub as_: f64,
    pub gm: f64,
    pub sc: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            ptm: 1e-3,
            aa: 2e-3,
            dis: 2e-3,
            ao: 2e-3,
            ms: 2e-3,
            as_: 2e-3,
            gm: 2e-3,
            sc: 2e-3,
        }
    }
}

impl LearningRates {
    pub fn get(&self, group: GroupName) -> f64 {
        match group {
            GroupName::Ptm => self.ptm,
            GroupName::Aa => self.aa,
            GroupName::Dis => self.dis,
            GroupName::Ao => self.ao,
            GroupName::Ms => self.ms,
            GroupName::As => self.as_,
            GroupName::Gm => self.gm,
            GroupName::Sc => self.sc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Maximum candidate width: spans with `e - s <= l`.
    pub l: usize,
    pub alpha: Alpha,
    pub beta: f64,
    pub gamma: f64,
    pub delta: DeltaMode,
    pub seed: u64,
    pub warmup_fraction: f64,
    pub learning_rates: LearningRates,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 10,
            l: 15,
            alpha: Alpha { p: 1, q: 3 },
            beta: 0.05,
            gamma: 1.0,
            delta: DeltaMode::OneOverM,
            seed: 0,
            warmup_fraction: 0.1,
            learning_rates: LearningRates::default(),
            ablation: Ablation::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        Alpha::new(self.alpha.p, self.alpha.q)?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(SarlError::Contract("batch_size and epochs must be positive".into()));
        }
        if !(self.beta >= 0.0 && self.gamma >= 0.0) {
            return Err(SarlError::Contract(format!(
                "beta {} and gamma {} must be non-negative",
                self.beta, self.gamma
            )));
        }
        if let DeltaMode::Fixed(x) = self.delta {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(SarlError::Contract(format!("fixed delta {x} must be non-negative")));
            }
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(SarlError::Contract("warmup_fraction outside [0, 1]".into()));
        }
        if GroupName::ALL.iter().any(|&g| !(self.learning_rates.get(g) > 0.0)) {
            return Err(SarlError::Contract("learning rates must be positive".into()));
        }
        Ok(())
    }

    /// Groups updated by a model step.
    pub fn model_groups(&self) -> Vec<GroupName> {
        GroupName::ALL
            .into_iter()
            .filter(|&g| match g {
                GroupName::Dis => self.ablation.neutral_reinforce,
                GroupName::Ao | GroupName::Ms | GroupName::As | GroupName::Gm => !self.ablation.no_aligner,
                _ => true,
            })
            .collect()
    }
}
