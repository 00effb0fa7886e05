use std::collections::BTreeMap;

use crate::error::{Result, SarlError};
use crate::numerics::{GroupName, ParamId, ParamStore};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
    updates: u64,
}

/// Adam moments plus the warmup / linear-decay learning-rate schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    moments: BTreeMap<ParamId, Moments>,
    step: u64,
    pub warmup_fraction: f64,
    pub total_steps: u64,
}

impl OptimizerState {
    pub fn new(total_steps: u64, warmup_fraction: f64) -> Result<Self> {
        if total_steps == 0 {
            return Err(SarlError::Contract("total_steps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&warmup_fraction) {
            return Err(SarlError::Contract(format!("warmup fraction {warmup_fraction} outside [0,1]")));
        }
        Ok(OptimizerState {
            moments: BTreeMap::new(),
            step: 0,
            warmup_fraction,
            total_steps,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn warmup_steps(&self) -> u64 {
        (self.warmup_fraction * self.total_steps as f64).round() as u64
    }

    /// Multiplier on the base learning rate at optimizer step `t`: linear
    /// ramp from 0 over the warmup steps, then linear decay to 0 at
    /// `total_steps`.
    pub fn schedule_factor(&self, t: u64) -> f64 {
        let warm = self.warmup_steps();
        if t < warm {
            t as f64 / warm as f64
        } else if t >= self.total_steps {
            0.0
        } else {
            (self.total_steps - t) as f64 / (self.total_steps - warm) as f64
        }
    }
}

/// One Adam update of every tensor in `groups`, then clears their gradients.
///
/// Every tensor of every listed group must carry a gradient.
pub fn adam_step(store: &mut ParamStore, groups: &[GroupName], state: &mut OptimizerState) -> Result<()> {
    for &group in groups {
        for id in store.ids(group) {
            if store.grad(id).is_none() {
                return Err(SarlError::MissingGradient(store.get(id).name.clone()));
            }
        }
    }
    let factor = state.schedule_factor(state.step);
    for &group in groups {
        let lr = store.group(group).learning_rate * factor;
        let ids: Vec<ParamId> = store.ids(group).collect();
        for id in ids {
            let p = store.get_mut(id);
            let grad = p.grad.take().expect("checked above");
            let mom = state.moments.entry(id).or_insert_with(|| Moments {
                first: vec![0.0; grad.len()],
                second: vec![0.0; grad.len()],
                updates: 0,
            });
            mom.updates += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(mom.updates as i32);
            let bc2 = 1.0 - ADAM_BETA2.powi(mom.updates as i32);
            for (k, value) in p.value.data_mut().iter_mut().enumerate() {
                let gk = grad[k];
                mom.first[k] = ADAM_BETA1 * mom.first[k] + (1.0 - ADAM_BETA1) * gk;
                mom.second[k] = ADAM_BETA2 * mom.second[k] + (1.0 - ADAM_BETA2) * gk * gk;
                let m_hat = mom.first[k] / bc1;
                let v_hat = mom.second[k] / bc2;
                *value -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
    state.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn scalar_store(value: f64, grad: f64, lr: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new(lr);
        let id = store.add(GroupName::Sc, "x", Tensor::scalar(value));
        store.get_mut(id).grad = Some(vec![grad]);
        (store, id)
    }

    #[test]
    fn zero_factor_at_warmup_start_leaves_params() {
        let (mut store, id) = scalar_store(0.5, 1.0, 0.01);
        let mut st = OptimizerState::new(100, 0.1).unwrap();
        adam_step(&mut store, &[GroupName::Sc], &mut st).unwrap();
        assert_eq!(store.value(id).data(), &[0.5]);
        assert_eq!(st.step(), 1);
        assert!(store.grad(id).is_none());
    }

    #[test]
    fn first_full_rate_step_moves_by_rate() {
        let (mut store, id) = scalar_store(0.0, 1.0, 0.01);
        let mut st = OptimizerState::new(100, 0.0).unwrap();
        adam_step(&mut store, &[GroupName::Sc], &mut st).unwrap();
        let v = store.value(id).data()[0];
        assert!((v + 0.01).abs() < 1e-9, "{v}");
    }

    #[test]
    fn schedule_ramps_then_decays() {
        let st = OptimizerState::new(100, 0.1).unwrap();
        assert_eq!(st.schedule_factor(0), 0.0);
        assert!((st.schedule_factor(5) - 0.5).abs() < 1e-12);
        assert_eq!(st.schedule_factor(10), 1.0);
        assert!((st.schedule_factor(55) - 0.5).abs() < 1e-12);
        assert_eq!(st.schedule_factor(100), 0.0);
    }

    #[test]
    fn missing_gradient_names_tensor() {
        let mut store = ParamStore::default();
        store.add(GroupName::Gm, "gate.0.weight", Tensor::scalar(1.0));
        let mut st = OptimizerState::new(10, 0.1).unwrap();
        match adam_step(&mut store, &[GroupName::Gm], &mut st) {
            Err(SarlError::MissingGradient(name)) => assert_eq!(name, "gate.0.weight"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn first_step_magnitude_bounded_by_rate() {
        let grads = [1e-6, -3.0, 250.0, 0.02];
        let mut store = ParamStore::new(0.05);
        let ids: Vec<_> = grads
            .iter()
            .enumerate()
            .map(|(i, &g)| {
                let id = store.add(GroupName::As, format!("p{i}"), Tensor::scalar(1.0));
                store.get_mut(id).grad = Some(vec![g]);
                id
            })
            .collect();
        let mut st = OptimizerState::new(1000, 0.0).unwrap();
        adam_step(&mut store, &[GroupName::As], &mut st).unwrap();
        for id in ids {
            let delta = (store.value(id).data()[0] - 1.0).abs();
            assert!(delta <= 0.05 * (1.0 + 1e-6));
        }
    }
}
