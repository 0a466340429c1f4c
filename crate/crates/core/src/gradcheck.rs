//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::optim::ParamStore;
use crate::scalar::Scalar;

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone)]
pub struct GradCheckReport<T> {
    /// Worst relative error over every parameter entry.
    pub max_rel_error: T,
    /// Worst relative error per parameter, in store order.
    pub per_param: Vec<(String, T)>,
}

/// Compare analytic gradients against central finite differences.
///
/// `eval` must evaluate the scalar objective at the store's current values
/// without touching gradients. `analytic` holds the already-computed
/// gradient for each parameter, aligned with store order. The relative
/// error for one entry is `|analytic - fd| / max(1, |fd|)` and the report
/// carries the maximum per parameter and overall.
pub fn grad_check<T: Scalar>(
    store: &mut ParamStore<T>,
    mut eval: impl FnMut(&ParamStore<T>) -> Result<T>,
    analytic: &[Vec<T>],
    h: T,
) -> Result<GradCheckReport<T>> {
    if h <= T::zero() {
        return Err(Error::Contract("grad_check step h must be positive".into()));
    }
    if analytic.len() != store.len() {
        return Err(Error::Dim {
            op: "grad_check",
            lhs: vec![analytic.len()],
            rhs: vec![store.len()],
        });
    }
    let two_h = T::from_f(2.0) * h;
    let mut max_rel = T::zero();
    let mut per_param = Vec::with_capacity(store.len());
    for pid in store.ids().collect::<Vec<_>>() {
        let n = store.data(pid).len();
        if analytic[pid.0].len() != n {
            return Err(Error::Dim {
                op: "grad_check",
                lhs: vec![analytic[pid.0].len()],
                rhs: store.shape(pid).to_vec(),
            });
        }
        let mut worst = T::zero();
        for i in 0..n {
            let orig = store.data(pid)[i];
            store.data_mut(pid)[i] = orig + h;
            let f_plus = eval(store)?;
            store.data_mut(pid)[i] = orig - h;
            let f_minus = eval(store)?;
            store.data_mut(pid)[i] = orig;
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "objective non-finite while perturbing {}[{}]",
                    store.name(pid),
                    i
                )));
            }
            let fd = (f_plus - f_minus) / two_h;
            let rel = (analytic[pid.0][i] - fd).abs() / T::one().max(fd.abs());
            if rel > worst {
                worst = rel;
            }
        }
        per_param.push((store.name(pid).to_string(), worst));
        if worst > max_rel {
            max_rel = worst;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        per_param,
    })
}

/// Snapshot the analytic gradients currently stored for every parameter.
pub fn collect_grads<T: Scalar>(store: &ParamStore<T>) -> Vec<Vec<T>> {
    store.ids().map(|id| store.grad(id).to_vec()).collect()
}
