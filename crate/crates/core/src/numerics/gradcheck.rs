//! Central finite-difference checks of tape gradients.

use crate::error::Result;
use crate::numerics::{Graph, GroupName, ParamStore, Var};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so that near-zero gradients
/// are compared on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(tensor name, flat index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares backward gradients of `loss_fn` for every tensor of `groups`
/// against central differences with step `h`.
///
/// `max_coords_per_tensor` bounds the coordinates probed per tensor (spread
/// evenly over its length); `None` probes all of them.
pub fn check_gradients<F>(
    store: &mut ParamStore,
    groups: &[GroupName],
    h: f64,
    max_coords_per_tensor: Option<usize>,
    loss_fn: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    store.zero_grads();
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store)?;
    g.backward(loss, store, groups)?;

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let l = loss_fn(&mut g, store)?;
        g.scalar(l)
    };

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    for &group in groups {
        let ids: Vec<_> = store.ids(group).collect();
        for id in ids {
            let len = store.value(id).len();
            let analytic: Vec<f64> = store
                .grad(id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; len]);
            let coords: Vec<usize> = match max_coords_per_tensor {
                Some(k) if k < len => (0..k).map(|i| i * len / k).collect(),
                _ => (0..len).collect(),
            };
            for k in coords {
                let orig = store.value(id).data()[k];
                store.value_mut(id).data_mut()[k] = orig + h;
                let plus = eval(store)?;
                store.value_mut(id).data_mut()[k] = orig - h;
                let minus = eval(store)?;
                store.value_mut(id).data_mut()[k] = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let err = relative_error(analytic[k], numeric);
                report.checked += 1;
                if err > report.max_rel_error || report.worst.is_none() {
                    report.max_rel_error = err;
                    report.worst = Some((store.get(id).name.clone(), k, analytic[k], numeric));
                }
            }
        }
    }
    store.zero_grads();
    Ok(report)
}
