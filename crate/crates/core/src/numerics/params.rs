use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SarlError};
use crate::numerics::Tensor;

/// Standard deviation of the truncated-normal initializer.
pub const INIT_STD: f64 = 0.02;

/// The eight parameter families of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupName {
    /// Sentence encoder.
    Ptm,
    /// Aspect attention pooling.
    Aa,
    /// Prior-sentiment discriminator.
    Dis,
    /// Opinion-candidate attention pooling.
    Ao,
    /// Mention scorer.
    Ms,
    /// Alignment scorer and relative-position table.
    As,
    /// Gate.
    Gm,
    /// Sentiment classifier.
    Sc,
}

impl GroupName {
    pub const ALL: [GroupName; 8] = [
        GroupName::Ptm,
        GroupName::Aa,
        GroupName::Dis,
        GroupName::Ao,
        GroupName::Ms,
        GroupName::As,
        GroupName::Gm,
        GroupName::Sc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupName::Ptm => "ptm",
            GroupName::Aa => "aa",
            GroupName::Dis => "dis",
            GroupName::Ao => "ao",
            GroupName::Ms => "ms",
            GroupName::As => "as",
            GroupName::Gm => "gm",
            GroupName::Sc => "sc",
        }
    }

    pub fn parse(s: &str) -> Option<GroupName> {
        GroupName::ALL.into_iter().find(|g| g.as_str() == s)
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for GroupName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Handle to a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId {
    pub group: GroupName,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub name: GroupName,
    pub learning_rate: f64,
    pub params: Vec<Parameter>,
}

/// Owner of every trainable tensor, partitioned into the eight groups.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    groups: Vec<ParamGroup>,
}

impl Default for ParamStore {
    fn default() -> Self {
        ParamStore::new(1e-3)
    }
}

impl ParamStore {
    pub fn new(default_lr: f64) -> Self {
        ParamStore {
            groups: GroupName::ALL
                .iter()
                .map(|&name| ParamGroup {
                    name,
                    learning_rate: default_lr,
                    params: Vec::new(),
                })
                .collect(),
        }
    }

    pub fn add(&mut self, group: GroupName, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name `{name}`"
        );
        let g = &mut self.groups[group.index()];
        g.params.push(Parameter {
            name,
            value,
            grad: None,
        });
        ParamId {
            group,
            index: g.params.len() - 1,
        }
    }

    /// Adds a `rows x cols` tensor drawn from the truncated normal initializer.
    pub fn add_init<R: Rng>(
        &mut self,
        group: GroupName,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> ParamId {
        let value = truncated_normal(rows, cols, INIT_STD, rng);
        self.add(group, name, value)
    }

    pub fn add_zeros(&mut self, group: GroupName, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(group, name, Tensor::zeros(rows, cols))
    }

    pub fn add_filled(
        &mut self,
        group: GroupName,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        value: f64,
    ) -> ParamId {
        self.add(group, name, Tensor::filled(rows, cols, value))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.groups.iter().find_map(|g| {
            g.params.iter().position(|p| p.name == name).map(|index| ParamId {
                group: g.name,
                index,
            })
        })
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.groups[id.group.index()].params[id.index]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.groups[id.group.index()].params[id.index]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.get(id).value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.get_mut(id).value
    }

    pub fn grad(&self, id: ParamId) -> Option<&[f64]> {
        self.get(id).grad.as_deref()
    }

    pub fn group(&self, name: GroupName) -> &ParamGroup {
        &self.groups[name.index()]
    }

    pub fn group_mut(&mut self, name: GroupName) -> &mut ParamGroup {
        &mut self.groups[name.index()]
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn ids(&self, group: GroupName) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.groups[group.index()].params.len()).map(move |index| ParamId { group, index })
    }

    pub fn all_ids(&self) -> Vec<ParamId> {
        GroupName::ALL.iter().flat_map(|&g| self.ids(g)).collect()
    }

    pub fn set_learning_rate(&mut self, group: GroupName, lr: f64) {
        self.groups[group.index()].learning_rate = lr;
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.groups {
            for p in &mut g.params {
                p.grad = None;
            }
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.groups
            .iter()
            .flat_map(|g| g.params.iter())
            .map(|p| p.value.len())
            .sum()
    }

    /// Adds `delta` into the tensor's gradient buffer, allocating it if absent.
    pub(crate) fn accumulate_grad(&mut self, id: ParamId, delta: &[f64]) -> Result<()> {
        let p = self.get_mut(id);
        if delta.len() != p.value.len() {
            return Err(SarlError::shape("accumulate_grad", p.value.shape(), &[delta.len()]));
        }
        match &mut p.grad {
            Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
            None => p.grad = Some(delta.to_vec()),
        }
        Ok(())
    }
}

/// Normal samples rejected outside two standard deviations.
pub fn truncated_normal<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break z * std;
            }
        })
        .collect();
    Tensor::from_parts_unchecked(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn group_names_cover_eight_families() {
        let names: Vec<_> = GroupName::ALL.iter().map(|g| g.as_str()).collect();
        assert_eq!(names, ["ptm", "aa", "dis", "ao", "ms", "as", "gm", "sc"]);
        for g in GroupName::ALL {
            assert_eq!(GroupName::parse(g.as_str()), Some(g));
        }
    }

    #[test]
    fn truncated_normal_stays_within_two_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = truncated_normal(50, 50, INIT_STD, &mut rng);
        assert!(t.data().iter().all(|v| v.abs() <= 2.0 * INIT_STD));
        let mean = t.data().iter().sum::<f64>() / t.len() as f64;
        assert!(mean.abs() < 0.002);
    }

    #[test]
    #[should_panic(expected = "duplicate")]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::default();
        s.add_zeros(GroupName::Sc, "w", 1, 1);
        s.add_zeros(GroupName::Ms, "w", 1, 1);
    }
}
