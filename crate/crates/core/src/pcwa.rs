//! Progressive consistency-weighted assembly and the classification head.
//!
//! Over training, the patch-pooling weights transfer from uniform averaging
//! to a sigmoid of the class-query attention map, on a logistic schedule in
//! normalized training progress. The pooled patch feature is concatenated
//! with the class embedding and classified by a small MLP.

use rand::Rng;

use crate::autodiff::{sigmoid, Graph, TensorId};
use crate::error::{Error, Result};
use crate::optim::{Binding, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::vit::INIT_STD;

/// Logistic blending schedule: `w(step) = sigmoid(-steepness * (step - midpoint))`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Schedule {
    pub steepness: f64,
    pub midpoint: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            steepness: 12.0,
            midpoint: 0.7,
        }
    }
}

impl Schedule {
    /// Blending weight at normalized progress `step` in `[0, 1]`.
    pub fn weight(&self, step: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&step) {
            return Err(Error::Contract(format!(
                "schedule step {step} outside [0, 1]"
            )));
        }
        Ok(sigmoid(-self.steepness * (step - self.midpoint)))
    }
}

/// `A = w * 1 + (1 - w) * sigmoid(upsilon_c)`, elementwise over the grid.
pub fn blend_weights<T: Scalar>(
    g: &mut Graph<T>,
    upsilon_c: TensorId,
    w: T,
) -> Result<TensorId> {
    if w < T::zero() || w > T::one() {
        return Err(Error::Contract(format!("blend weight {w} outside [0, 1]")));
    }
    if w == T::one() {
        // exactly the all-one matrix
        let shape = g.shape(upsilon_c).to_vec();
        let n: usize = shape.iter().product();
        return Ok(g.constant(vec![T::one(); n], shape));
    }
    let s = g.sigmoid(upsilon_c);
    let scaled = g.scale(s, T::one() - w);
    Ok(g.add_const(scaled, w))
}

/// Weighted patch pooling: `(1/P^2) * sum_ij A_ij * F_ij`, yielding `1 x D`.
/// Weights are not renormalized; with `normalize_weights` the divisor is
/// the sum of weights instead of `P^2`.
pub fn weighted_assemble<T: Scalar>(
    g: &mut Graph<T>,
    blend: TensorId,
    patch_embeddings: TensorId,
    normalize_weights: bool,
) -> Result<TensorId> {
    let n = g.numel(blend);
    let rows = g.shape(patch_embeddings)[0];
    if n != rows {
        return Err(Error::Dim {
            op: "weighted_assemble",
            lhs: g.shape(blend).to_vec(),
            rhs: g.shape(patch_embeddings).to_vec(),
        });
    }
    let flat = g.reshape(blend, vec![1, n])?;
    let pooled = g.matmul(flat, patch_embeddings)?;
    if normalize_weights {
        let total = g.sum_all(flat);
        let inv = g.recip(total);
        g.mul_scalar_node(inv, pooled)
    } else {
        Ok(g.scale(pooled, T::from_f(1.0 / n as f64)))
    }
}

/// Classification head parameters. Depth 2 is a hidden layer of the given
/// width with a smooth nonlinearity followed by a linear logit; depth 1 is
/// a single linear logit layer.
#[derive(Debug, Clone)]
pub struct HeadParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub depth: usize,
    pub w1: Option<ParamId>,
    pub b1: Option<ParamId>,
    pub w_out: ParamId,
    pub b_out: ParamId,
}

impl HeadParams {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        input_dim: usize,
        hidden_dim: usize,
        depth: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if depth != 1 && depth != 2 {
            return Err(Error::Config(format!("head depth {depth} not in {{1, 2}}")));
        }
        let (w1, b1, out_in) = if depth == 2 {
            (
                Some(store.add_trunc_normal("head.w1", vec![input_dim, hidden_dim], INIT_STD, rng)),
                Some(store.add_zeros("head.b1", vec![1, hidden_dim])),
                hidden_dim,
            )
        } else {
            (None, None, input_dim)
        };
        Ok(HeadParams {
            input_dim,
            hidden_dim,
            depth,
            w1,
            b1,
            w_out: store.add_trunc_normal("head.w_out", vec![out_in, 1], INIT_STD, rng),
            b_out: store.add_zeros("head.b_out", vec![1, 1]),
        })
    }

    /// Forward over a `1 x input_dim` feature row; returns the raw logit
    /// and the sigmoid probability as graph nodes.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        input: TensorId,
        binding: &mut Binding,
    ) -> Result<HeadOutput> {
        if g.shape(input) != [1, self.input_dim] {
            return Err(Error::Dim {
                op: "head_forward",
                lhs: g.shape(input).to_vec(),
                rhs: vec![1, self.input_dim],
            });
        }
        let bind_one = |g: &mut Graph<T>, binding: &mut Binding, pid: ParamId| {
            let tid = store.bind(g, pid);
            binding.pairs.push((pid, tid));
            tid
        };
        let mut h = input;
        if self.depth == 2 {
            let w1 = bind_one(g, binding, self.w1.expect("depth 2 has hidden layer"));
            let b1 = bind_one(g, binding, self.b1.expect("depth 2 has hidden layer"));
            h = g.matmul(h, w1)?;
            h = g.add_row_broadcast(h, b1)?;
            h = g.gelu(h);
        }
        let w_out = bind_one(g, binding, self.w_out);
        let b_out = bind_one(g, binding, self.b_out);
        let logit = g.matmul(h, w_out)?;
        let logit = g.add_row_broadcast(logit, b_out)?;
        if !g.scalar_value(logit).is_finite() {
            return Err(Error::Numeric("classifier logit is non-finite".into()));
        }
        let prob = g.sigmoid(logit);
        Ok(HeadOutput { logit, prob })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HeadOutput {
    pub logit: TensorId,
    /// Strictly inside (0, 1).
    pub prob: TensorId,
}

/// Full classification: concatenate the class embedding with the pooled
/// patch feature and run the head.
pub fn classify<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    head: &HeadParams,
    class_embedding: TensorId,
    pooled: TensorId,
    binding: &mut Binding,
) -> Result<HeadOutput> {
    let input = g.concat_cols(&[class_embedding, pooled])?;
    head.forward(g, store, input, binding)
}
