//! Named parameter storage and the adaptive-moment optimizer.
//!
//! Parameters live outside any graph; each forward pass binds them into a
//! fresh [`crate::autodiff::Graph`] as `requires_grad` leaves and the caller
//! copies leaf gradients back into the store. The optimizer consumes the
//! store's gradient buffers in place.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, TensorId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub grad: Vec<T>,
}

/// Ordered collection of named parameters with gradient accumulators.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: BTreeMap<String, ParamId>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, data: Vec<T>) -> ParamId {
        assert_eq!(data.len(), shape.iter().product::<usize>());
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        let grad = vec![T::zero(); data.len()];
        self.params.push(Param {
            name: name.to_string(),
            shape,
            data,
            grad,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    /// Truncated-normal initialization (resampling outside two standard
    /// deviations), the usual transformer weight recipe.
    pub fn add_trunc_normal(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        std: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("valid std");
        let mut data = Vec::with_capacity(n);
        while data.len() < n {
            let v: f64 = dist.sample(rng);
            if v.abs() <= 2.0 * std {
                data.push(T::from_f(v));
            }
        }
        self.add(name, shape, data)
    }

    pub fn add_zeros(&mut self, name: &str, shape: Vec<usize>) -> ParamId {
        let n: usize = shape.iter().product();
        self.add(name, shape, vec![T::zero(); n])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.params[id.0].shape
    }

    pub fn data(&self, id: ParamId) -> &[T] {
        &self.params[id.0].data
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.params[id.0].data
    }

    pub fn grad(&self, id: ParamId) -> &[T] {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.params[id.0].grad
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            for g in &mut p.grad {
                *g = T::zero();
            }
        }
    }

    /// Bind a parameter into a graph as a `requires_grad` leaf.
    pub fn bind(&self, graph: &mut Graph<T>, id: ParamId) -> TensorId {
        let p = &self.params[id.0];
        graph.leaf(p.data.clone(), p.shape.clone(), true)
    }

    /// Add `scale * leaf_grad` into the stored gradient of `id`.
    pub fn accumulate_grad(&mut self, id: ParamId, leaf_grad: &[T], scale: T) {
        let g = &mut self.params[id.0].grad;
        debug_assert_eq!(g.len(), leaf_grad.len());
        for (dst, src) in g.iter_mut().zip(leaf_grad) {
            *dst += scale * *src;
        }
    }
}

/// Record of which graph leaves were created from which parameters during
/// one forward pass, so leaf gradients can be folded back into the store.
#[derive(Debug, Clone, Default)]
pub struct Binding {
    pub pairs: Vec<(ParamId, TensorId)>,
}

impl Binding {
    /// Fold `scale * leaf_grad` into the store for every bound parameter.
    pub fn accumulate<T: Scalar>(&self, store: &mut ParamStore<T>, graph: &Graph<T>, scale: T) {
        for &(pid, tid) in &self.pairs {
            if let Some(g) = graph.grad(tid) {
                store.accumulate_grad(pid, g, scale);
            }
        }
    }
}

/// Adaptive-moment optimizer state: per-parameter first and second moment
/// accumulators, a strictly increasing step counter, and the usual decay
/// rates and stability epsilon.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step_count: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: T) -> Self {
        Adam {
            lr,
            beta1: T::from_f(0.9),
            beta2: T::from_f(0.999),
            eps: T::from_f(1e-8),
            step_count: 0,
            m: store.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
            v: store.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
        }
    }

    /// One bias-corrected update in place, consuming `store`'s gradients.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::Dim {
                op: "adam_step",
                lhs: vec![self.m.len()],
                rhs: vec![store.len()],
            });
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        for (idx, p) in store.params.iter_mut().enumerate() {
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            if m.len() != p.data.len() {
                return Err(Error::Dim {
                    op: "adam_step",
                    lhs: vec![m.len()],
                    rhs: p.shape.clone(),
                });
            }
            for i in 0..p.data.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (T::one() - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (T::one() - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.data[i] = p.data[i] - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    pub fn second_moment(&self, id: ParamId) -> &[T] {
        &self.v[id.0]
    }

    pub fn first_moment(&self, id: ParamId) -> &[T] {
        &self.m[id.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_step_approaches_signed_lr() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let p = store.add("w", vec![1, 3], vec![1.0, 2.0, 3.0]);
        let mut adam = Adam::new(&store, 0.01);
        store.grad_mut(p).copy_from_slice(&[0.5, -2.0, 4.0]);
        adam.step(&mut store).unwrap();
        // First step closes to -lr * sign(g) as eps -> 0.
        let data = store.data(p);
        assert!((data[0] - (1.0 - 0.01)).abs() < 1e-6, "{}", data[0]);
        assert!((data[1] - (2.0 + 0.01)).abs() < 1e-6, "{}", data[1]);
        assert!((data[2] - (3.0 - 0.01)).abs() < 1e-6, "{}", data[2]);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn zero_grad_leaves_everything_unchanged() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let p = store.add("w", vec![1, 2], vec![1.5, -0.5]);
        let mut adam = Adam::new(&store, 0.1);
        adam.step(&mut store).unwrap();
        assert_eq!(store.data(p), &[1.5, -0.5]);
        assert_eq!(adam.first_moment(p), &[0.0, 0.0]);
        assert_eq!(adam.second_moment(p), &[0.0, 0.0]);
    }

    #[test]
    fn constant_grad_builds_positive_second_moment() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let p = store.add("w", vec![1, 1], vec![0.0]);
        let mut adam = Adam::new(&store, 0.1);
        for _ in 0..2 {
            store.grad_mut(p)[0] = 0.7;
            adam.step(&mut store).unwrap();
            store.zero_grads();
        }
        assert!(adam.second_moment(p)[0] > 0.0);
        assert_eq!(adam.step_count, 2);
    }

    #[test]
    fn step_counter_strictly_increases() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.add("w", vec![1, 1], vec![0.0]);
        let mut adam = Adam::new(&store, 0.1);
        for want in 1..=5 {
            adam.step(&mut store).unwrap();
            assert_eq!(adam.step_count, want);
        }
    }

    #[test]
    fn moment_shape_mismatch_is_a_dimension_error() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.add("w", vec![1, 1], vec![0.0]);
        let mut adam = Adam::new(&store, 0.1);
        store.add("late", vec![1, 1], vec![0.0]);
        assert!(matches!(adam.step(&mut store), Err(Error::Dim { .. })));
    }

    #[test]
    fn trunc_normal_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store: ParamStore<f64> = ParamStore::new();
        let p = store.add_trunc_normal("w", vec![16, 16], 0.02, &mut rng);
        for &v in store.data(p) {
            assert!(v.abs() <= 0.04 + 1e-12);
        }
    }

    #[test]
    fn bind_and_accumulate_round_trip() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let p = store.add("w", vec![1, 2], vec![2.0, -1.0]);
        let mut g: Graph<f64> = Graph::new();
        let t = store.bind(&mut g, p);
        assert_eq!(g.value(t), store.data(p));
        store.accumulate_grad(p, &[1.0, 3.0], 0.5);
        assert_eq!(store.grad(p), &[0.5, 1.5]);
    }
}
