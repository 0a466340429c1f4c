//! Patch-consistency supervision: target matrices built from pseudo
//! location maps, the consistency loss against mean patch attention, and
//! the regularizers steering the learnable consistency factors.
//!
//! For patches (i,j) and (k,l) the target entry is `c1` when both map
//! entries are 0, `c2` when both are 1 and `c3` otherwise. The loss drives
//! `sigmoid` of the mean patch-attention logits toward those targets; the
//! factors are live graph scalars so they receive gradients from the data
//! term as well as from their own regularizers.

use crate::autodiff::{Graph, TensorId};
use crate::error::{Error, Result};
use crate::mvg::LocationMap;
use crate::optim::{Binding, ParamId, ParamStore};
use crate::scalar::Scalar;

/// Guard radius around zero for the reciprocal regularizer terms.
pub const FACTOR_GUARD: f64 = 1e-6;

/// Learnable scalars (c1, c2, c3), initialized to (0.6, 0.6, 0.2).
#[derive(Debug, Clone)]
pub struct ConsistencyFactors {
    pub c1: ParamId,
    pub c2: ParamId,
    pub c3: ParamId,
}

impl ConsistencyFactors {
    pub const INIT: (f64, f64, f64) = (0.6, 0.6, 0.2);

    pub fn init<T: Scalar>(store: &mut ParamStore<T>) -> Self {
        Self::init_with(store, Self::INIT)
    }

    pub fn init_with<T: Scalar>(store: &mut ParamStore<T>, init: (f64, f64, f64)) -> Self {
        ConsistencyFactors {
            c1: store.add("factors.c1", vec![1, 1], vec![T::from_f(init.0)]),
            c2: store.add("factors.c2", vec![1, 1], vec![T::from_f(init.1)]),
            c3: store.add("factors.c3", vec![1, 1], vec![T::from_f(init.2)]),
        }
    }

    pub fn values<T: Scalar>(&self, store: &ParamStore<T>) -> (T, T, T) {
        (
            store.data(self.c1)[0],
            store.data(self.c2)[0],
            store.data(self.c3)[0],
        )
    }

    pub fn bind<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        binding: &mut Binding,
    ) -> BoundFactors {
        let mut bind_one = |pid: ParamId| {
            let tid = store.bind(g, pid);
            binding.pairs.push((pid, tid));
            tid
        };
        BoundFactors {
            c1: bind_one(self.c1),
            c2: bind_one(self.c2),
            c3: bind_one(self.c3),
        }
    }
}

/// Factor leaves inside one graph.
#[derive(Debug, Clone, Copy)]
pub struct BoundFactors {
    pub c1: TensorId,
    pub c2: TensorId,
    pub c3: TensorId,
}

/// Build the `P^2 x P^2` consistency target from a binary location map.
/// Entries reference the live factor scalars, so factor gradients flow
/// through the data term.
pub fn target_matrix<T: Scalar>(
    g: &mut Graph<T>,
    map: &LocationMap<T>,
    factors: BoundFactors,
) -> Result<TensorId> {
    let n = map.p * map.p;
    for &v in &map.values {
        if v != T::zero() && v != T::one() {
            return Err(Error::Contract(format!(
                "target_matrix requires a binary map, found entry {v}"
            )));
        }
    }
    let mut mask1 = vec![T::zero(); n * n];
    let mut mask2 = vec![T::zero(); n * n];
    let mut mask3 = vec![T::zero(); n * n];
    for a in 0..n {
        let ma = map.values[a] == T::one();
        for b in 0..n {
            let mb = map.values[b] == T::one();
            let idx = a * n + b;
            if !ma && !mb {
                mask1[idx] = T::one();
            } else if ma && mb {
                mask2[idx] = T::one();
            } else {
                mask3[idx] = T::one();
            }
        }
    }
    let m1 = g.constant(mask1, vec![n, n]);
    let m2 = g.constant(mask2, vec![n, n]);
    let m3 = g.constant(mask3, vec![n, n]);
    let t1 = g.mul_scalar_node(factors.c1, m1)?;
    let t2 = g.mul_scalar_node(factors.c2, m2)?;
    let t3 = g.mul_scalar_node(factors.c3, m3)?;
    let t12 = g.add(t1, t2)?;
    g.add(t12, t3)
}

/// Consistency loss: `(1/P^2) * sum |sigmoid(upsilon) - target|` over all
/// `P^4` index pairs. With `normalize_pairs` the divisor becomes `P^4`.
pub fn upcl_loss<T: Scalar>(
    g: &mut Graph<T>,
    upsilon_p: TensorId,
    target: TensorId,
    normalize_pairs: bool,
) -> Result<TensorId> {
    if g.shape(upsilon_p) != g.shape(target) {
        return Err(Error::Dim {
            op: "upcl_loss",
            lhs: g.shape(upsilon_p).to_vec(),
            rhs: g.shape(target).to_vec(),
        });
    }
    let n = g.shape(upsilon_p)[0]; // P^2
    let s = g.sigmoid(upsilon_p);
    let diff = g.sub(s, target)?;
    let a = g.abs(diff);
    let total = g.sum_all(a);
    let divisor = if normalize_pairs {
        (n * n) as f64
    } else {
        n as f64
    };
    Ok(g.scale(total, T::from_f(1.0 / divisor)))
}

/// `lambda2 * (1/|c1| + 1/|c2|) + lambda3 * |c3|`: pushes c1 and c2 up and
/// c3 toward zero.
pub fn factor_regularizer<T: Scalar>(
    g: &mut Graph<T>,
    factors: BoundFactors,
    lambda2: T,
    lambda3: T,
) -> Result<TensorId> {
    let guard = T::from_f(FACTOR_GUARD);
    for (name, id) in [("c1", factors.c1), ("c2", factors.c2)] {
        if g.scalar_value(id).abs() < guard {
            return Err(Error::Numeric(format!(
                "factor {name} within {FACTOR_GUARD} of zero; reciprocal regularizer undefined"
            )));
        }
    }
    let a1 = g.abs(factors.c1);
    let a2 = g.abs(factors.c2);
    let r1 = g.recip(a1);
    let r2 = g.recip(a2);
    let rsum = g.add(r1, r2)?;
    let t2 = g.scale(rsum, lambda2);
    let a3 = g.abs(factors.c3);
    let t3 = g.scale(a3, lambda3);
    g.add(t2, t3)
}
