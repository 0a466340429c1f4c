//! Mini vision-transformer backbone.
//!
//! Maps an image to per-layer patch/class embeddings while exposing the
//! pre-softmax scaled dot-product attention logits of every layer, so that
//! downstream losses can supervise attention directly. Blocks are standard
//! pre-norm transformer blocks; a learnable class token is prepended before
//! block 1 and patch features are tapped after a configurable middle block.

use rand::Rng;

use crate::autodiff::{Graph, TensorId};
use crate::error::{Error, Result};
use crate::optim::{Binding, ParamId, ParamStore};
use crate::scalar::Scalar;

/// Layer-norm stabilizer used by every block.
pub const LN_EPS: f64 = 1e-6;
/// Truncated-normal standard deviation for weight initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BackboneConfig {
    pub image_side: usize,
    pub patch_side: usize,
    pub channels: usize,
    /// Encoder depth N.
    pub depth: usize,
    /// Embedding width D.
    pub embed_dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// 1-based index K of the block whose patch output feeds the Gaussian
    /// estimator.
    pub feature_layer: usize,
    /// Attention averaging window n: layers N-n..N inclusive (n+1 layers).
    pub attention_window: usize,
}

impl Default for BackboneConfig {
    /// Desk-scale default: 64px images, 8px patches (8x8 grid), 6 blocks of
    /// width 64 with 4 heads, features tapped at block 3, attention averaged
    /// over the last 3 layers.
    fn default() -> Self {
        BackboneConfig {
            image_side: 64,
            patch_side: 8,
            channels: 3,
            depth: 6,
            embed_dim: 64,
            heads: 4,
            mlp_ratio: 4,
            feature_layer: 3,
            attention_window: 2,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_side == 0 || self.image_side % self.patch_side != 0 {
            return Err(Error::Config(format!(
                "image side {} not divisible by patch side {}",
                self.image_side, self.patch_side
            )));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed dim {} not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if self.feature_layer == 0 || self.feature_layer > self.depth {
            return Err(Error::Config(format!(
                "feature layer {} outside 1..={}",
                self.feature_layer, self.depth
            )));
        }
        if self.attention_window >= self.depth {
            return Err(Error::Config(format!(
                "attention window {} must be smaller than depth {}",
                self.attention_window, self.depth
            )));
        }
        Ok(())
    }

    /// Patches per side P.
    pub fn grid_side(&self) -> usize {
        self.image_side / self.patch_side
    }

    pub fn num_patches(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    /// Sequence length P^2 + 1 (class token first).
    pub fn seq_len(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_side * self.patch_side * self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    /// 1-based inclusive window of layers whose attention maps are averaged.
    pub fn window_range(&self) -> (usize, usize) {
        (self.depth - self.attention_window, self.depth)
    }
}

#[derive(Debug, Clone)]
pub struct BlockParams {
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
    pub mlp_w1: ParamId,
    pub mlp_b1: ParamId,
    pub mlp_w2: ParamId,
    pub mlp_b2: ParamId,
}

#[derive(Debug, Clone)]
pub struct BackboneParams {
    pub embed_w: ParamId,
    pub embed_b: ParamId,
    pub class_token: ParamId,
    pub pos_embed: ParamId,
    pub blocks: Vec<BlockParams>,
    pub final_ln_g: ParamId,
    pub final_ln_b: ParamId,
}

impl BackboneParams {
    /// Register freshly initialized backbone parameters in `store`.
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        cfg: &BackboneConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let d = cfg.embed_dim;
        let pd = cfg.patch_dim();
        let s = cfg.seq_len();
        let hidden = cfg.mlp_ratio * d;
        let embed_w = store.add_trunc_normal("embed.w", vec![pd, d], INIT_STD, rng);
        let embed_b = store.add_zeros("embed.b", vec![1, d]);
        let class_token = store.add_trunc_normal("class_token", vec![1, d], INIT_STD, rng);
        let pos_embed = store.add_trunc_normal("pos_embed", vec![s, d], INIT_STD, rng);
        let mut blocks = Vec::with_capacity(cfg.depth);
        for i in 0..cfg.depth {
            let p = |suffix: &str| format!("blk{i}.{suffix}");
            blocks.push(BlockParams {
                ln1_g: store.add(&p("ln1.g"), vec![1, d], vec![T::one(); d]),
                ln1_b: store.add_zeros(&p("ln1.b"), vec![1, d]),
                wq: store.add_trunc_normal(&p("attn.wq"), vec![d, d], INIT_STD, rng),
                bq: store.add_zeros(&p("attn.bq"), vec![1, d]),
                wk: store.add_trunc_normal(&p("attn.wk"), vec![d, d], INIT_STD, rng),
                bk: store.add_zeros(&p("attn.bk"), vec![1, d]),
                wv: store.add_trunc_normal(&p("attn.wv"), vec![d, d], INIT_STD, rng),
                bv: store.add_zeros(&p("attn.bv"), vec![1, d]),
                wo: store.add_trunc_normal(&p("attn.wo"), vec![d, d], INIT_STD, rng),
                bo: store.add_zeros(&p("attn.bo"), vec![1, d]),
                ln2_g: store.add(&p("ln2.g"), vec![1, d], vec![T::one(); d]),
                ln2_b: store.add_zeros(&p("ln2.b"), vec![1, d]),
                mlp_w1: store.add_trunc_normal(&p("mlp.w1"), vec![d, hidden], INIT_STD, rng),
                mlp_b1: store.add_zeros(&p("mlp.b1"), vec![1, hidden]),
                mlp_w2: store.add_trunc_normal(&p("mlp.w2"), vec![hidden, d], INIT_STD, rng),
                mlp_b2: store.add_zeros(&p("mlp.b2"), vec![1, d]),
            });
        }
        let final_ln_g = store.add("final_ln.g", vec![1, d], vec![T::one(); d]);
        let final_ln_b = store.add_zeros("final_ln.b", vec![1, d]);
        BackboneParams {
            embed_w,
            embed_b,
            class_token,
            pos_embed,
            blocks,
            final_ln_g,
            final_ln_b,
        }
    }
}

/// Everything the rest of the pipeline needs from one encoded image, as
/// live graph nodes so gradients can flow back into the encoder.
#[derive(Debug, Clone)]
pub struct EncoderOutputs {
    /// P (patches per side).
    pub grid_side: usize,
    pub depth: usize,
    pub heads: usize,
    /// Patch embeddings after block K: `P^2 x D`.
    pub features_at_k: TensorId,
    /// Final class embedding: `1 x D`.
    pub final_class: TensorId,
    /// Final patch embeddings: `P^2 x D`.
    pub final_patches: TensorId,
    /// Pre-softmax scaled attention logits, `[layer][head]`, each `S x S`.
    pub attention_logits: Vec<Vec<TensorId>>,
}

/// Split an image (`channels x side x side`, row-major) into flattened
/// patch rows ordered top-left to bottom-right. Each row lays out the
/// patch's pixels channel-major.
pub fn patchify<T: Scalar>(image: &[T], cfg: &BackboneConfig) -> Result<Vec<T>> {
    cfg.validate()?;
    let side = cfg.image_side;
    let ps = cfg.patch_side;
    let c = cfg.channels;
    if image.len() != c * side * side {
        return Err(Error::Dim {
            op: "patchify",
            lhs: vec![image.len()],
            rhs: vec![c, side, side],
        });
    }
    let p = cfg.grid_side();
    let pd = cfg.patch_dim();
    let mut out = vec![T::zero(); p * p * pd];
    for pr in 0..p {
        for pc in 0..p {
            let row = pr * p + pc;
            let mut k = 0;
            for ch in 0..c {
                for y in 0..ps {
                    for x in 0..ps {
                        let py = pr * ps + y;
                        let px = pc * ps + x;
                        out[row * pd + k] = image[ch * side * side + py * side + px];
                        k += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Run the encoder over one patchified image already bound into the graph.
pub fn encode<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    params: &BackboneParams,
    cfg: &BackboneConfig,
    patch_rows: TensorId,
    binding: &mut Binding,
) -> Result<EncoderOutputs> {
    cfg.validate()?;
    let d = cfg.embed_dim;
    let dh = cfg.head_dim();
    let s = cfg.seq_len();
    let p2 = cfg.num_patches();
    let eps = T::from_f(LN_EPS);
    let head_scale = T::from_f(1.0 / (dh as f64).sqrt());

    let bind = |g: &mut Graph<T>, binding: &mut Binding, pid: ParamId| -> TensorId {
        let tid = store.bind(g, pid);
        binding.pairs.push((pid, tid));
        tid
    };

    let embed_w = bind(g, binding, params.embed_w);
    let embed_b = bind(g, binding, params.embed_b);
    let class_token = bind(g, binding, params.class_token);
    let pos_embed = bind(g, binding, params.pos_embed);

    let tokens = g.matmul(patch_rows, embed_w)?;
    let tokens = g.add_row_broadcast(tokens, embed_b)?;
    let seq = g.concat_rows(&[class_token, tokens])?;
    let mut seq = g.add(seq, pos_embed)?;

    let mut attention_logits = Vec::with_capacity(cfg.depth);
    let mut features_at_k = None;

    for (i, blk) in params.blocks.iter().enumerate() {
        let ln1_g = bind(g, binding, blk.ln1_g);
        let ln1_b = bind(g, binding, blk.ln1_b);
        let h = g.layer_norm(seq, ln1_g, ln1_b, eps)?;

        let wq = bind(g, binding, blk.wq);
        let bq = bind(g, binding, blk.bq);
        let wk = bind(g, binding, blk.wk);
        let bk = bind(g, binding, blk.bk);
        let wv = bind(g, binding, blk.wv);
        let bv = bind(g, binding, blk.bv);
        let q = g.matmul(h, wq)?;
        let q = g.add_row_broadcast(q, bq)?;
        let k = g.matmul(h, wk)?;
        let k = g.add_row_broadcast(k, bk)?;
        let v = g.matmul(h, wv)?;
        let v = g.add_row_broadcast(v, bv)?;

        let mut layer_logits = Vec::with_capacity(cfg.heads);
        let mut head_outs = Vec::with_capacity(cfg.heads);
        for hd in 0..cfg.heads {
            let qh = g.narrow_cols(q, hd * dh, dh)?;
            let kh = g.narrow_cols(k, hd * dh, dh)?;
            let vh = g.narrow_cols(v, hd * dh, dh)?;
            let kt = g.transpose(kh);
            let raw = g.matmul(qh, kt)?;
            let logits = g.scale(raw, head_scale);
            let attn = g.softmax_rows(logits).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("block {}: {msg}", i + 1)),
                other => other,
            })?;
            let oh = g.matmul(attn, vh)?;
            layer_logits.push(logits);
            head_outs.push(oh);
        }
        attention_logits.push(layer_logits);
        let o = g.concat_cols(&head_outs)?;
        let wo = bind(g, binding, blk.wo);
        let bo = bind(g, binding, blk.bo);
        let proj = g.matmul(o, wo)?;
        let proj = g.add_row_broadcast(proj, bo)?;
        seq = g.add(seq, proj)?;

        let ln2_g = bind(g, binding, blk.ln2_g);
        let ln2_b = bind(g, binding, blk.ln2_b);
        let h2 = g.layer_norm(seq, ln2_g, ln2_b, eps)?;
        let w1 = bind(g, binding, blk.mlp_w1);
        let b1 = bind(g, binding, blk.mlp_b1);
        let w2 = bind(g, binding, blk.mlp_w2);
        let b2 = bind(g, binding, blk.mlp_b2);
        let m = g.matmul(h2, w1)?;
        let m = g.add_row_broadcast(m, b1)?;
        let m = g.gelu(m);
        let m = g.matmul(m, w2)?;
        let m = g.add_row_broadcast(m, b2)?;
        seq = g.add(seq, m)?;

        if g.value(seq).iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite activation after block {}",
                i + 1
            )));
        }
        if i + 1 == cfg.feature_layer {
            features_at_k = Some(g.narrow_rows(seq, 1, p2)?);
        }
    }

    let fin_g = bind(g, binding, params.final_ln_g);
    let fin_b = bind(g, binding, params.final_ln_b);
    let final_seq = g.layer_norm(seq, fin_g, fin_b, eps)?;
    let final_class = g.narrow_rows(final_seq, 0, 1)?;
    let final_patches = g.narrow_rows(final_seq, 1, p2)?;
    debug_assert_eq!(g.shape(final_seq), &[s, d]);

    Ok(EncoderOutputs {
        grid_side: cfg.grid_side(),
        depth: cfg.depth,
        heads: cfg.heads,
        features_at_k: features_at_k.expect("feature layer within depth"),
        final_class,
        final_patches,
        attention_logits,
    })
}

/// Sum logits over heads and a 1-based inclusive layer window, then scale.
fn mean_logits<T: Scalar>(
    g: &mut Graph<T>,
    outputs: &EncoderOutputs,
    first_layer: usize,
    last_layer: usize,
) -> Result<TensorId> {
    if first_layer == 0 || first_layer > last_layer || last_layer > outputs.depth {
        return Err(Error::Contract(format!(
            "attention window {first_layer}..{last_layer} invalid for depth {}",
            outputs.depth
        )));
    }
    let mut acc: Option<TensorId> = None;
    let mut count = 0usize;
    for layer in first_layer - 1..last_layer {
        for &head_logits in &outputs.attention_logits[layer] {
            acc = Some(match acc {
                None => head_logits,
                Some(prev) => g.add(prev, head_logits)?,
            });
            count += 1;
        }
    }
    let sum = acc.expect("window validated non-empty");
    Ok(g.scale(sum, T::from_f(1.0 / count as f64)))
}

/// Mean patch-to-patch attention logits over the window: `P^2 x P^2`,
/// class row and column removed.
pub fn mean_attention_patch<T: Scalar>(
    g: &mut Graph<T>,
    outputs: &EncoderOutputs,
    first_layer: usize,
    last_layer: usize,
) -> Result<TensorId> {
    let mean = mean_logits(g, outputs, first_layer, last_layer)?;
    let p2 = outputs.grid_side * outputs.grid_side;
    let rows = g.narrow_rows(mean, 1, p2)?;
    g.narrow_cols(rows, 1, p2)
}

/// Mean class-query attention logits over the window, reshaped to the
/// `P x P` patch grid in reading order.
pub fn mean_attention_class<T: Scalar>(
    g: &mut Graph<T>,
    outputs: &EncoderOutputs,
    first_layer: usize,
    last_layer: usize,
) -> Result<TensorId> {
    let mean = mean_logits(g, outputs, first_layer, last_layer)?;
    let p = outputs.grid_side;
    let class_row = g.narrow_rows(mean, 0, 1)?;
    let patch_cols = g.narrow_cols(class_row, 1, p * p)?;
    g.reshape(patch_cols, vec![p, p])
}
