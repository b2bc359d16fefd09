//! Dual-dimension attention blocks.
//!
//! The core block is a macaron-style pre-norm stack: half-step feed-forward,
//! temporal multi-head self-attention, a lightweight frequency-attention
//! (FA) module in the slot a Conformer reserves for its convolution module,
//! and a closing half-step feed-forward with a final LayerNorm. The FA
//! module pools statistics over time (so its weight vector is permutation
//! invariant along the time axis — bitwise, thanks to canonical summation),
//! maps them through two square matrices, and gates every frame with the
//! resulting sigmoid vector.
//!
//! The original Conformer block (depthwise-convolution module, kernel 31)
//! and a Conformer-plus-FA hybrid are implemented for the ablation harness.

use ndarray::IxDyn;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::autograd::{Arr, Graph, Tid};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamStore};

/// Which block family to instantiate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Feed-forward ∥ MHSA ∥ FA ∥ feed-forward.
    Dda,
    /// Feed-forward ∥ MHSA ∥ depthwise-conv module ∥ feed-forward.
    Conformer,
    /// Conformer with an FA residual inserted between MHSA and the conv
    /// module.
    ConformerFa,
}

/// Shape of one block.
#[derive(Clone, Copy, Debug)]
pub struct BlockCfg {
    pub dim: usize,
    pub heads: usize,
    pub ff_expansion: usize,
    pub kind: BlockKind,
    /// Depthwise kernel width for the Conformer variants.
    pub conv_kernel: usize,
}

impl BlockCfg {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.ff_expansion == 0 {
            return Err(Error::Config("block dimensions must be positive".into()));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model width {} not divisible by head count {}",
                self.dim, self.heads
            )));
        }
        if matches!(self.kind, BlockKind::Conformer | BlockKind::ConformerFa)
            && self.conv_kernel % 2 == 0
        {
            return Err(Error::Config("depthwise kernel width must be odd".into()));
        }
        Ok(())
    }
}

/// Training-time stochasticity: dropout probability plus the RNG that draws
/// the masks. With `rng = None` (inference) every mask is the identity.
pub struct TrainCtx {
    pub dropout: f64,
    pub rng: Option<ChaCha20Rng>,
}

impl TrainCtx {
    pub fn inference() -> Self {
        Self { dropout: 0.0, rng: None }
    }

    pub fn training(dropout: f64, rng: ChaCha20Rng) -> Self {
        Self { dropout, rng: Some(rng) }
    }

    /// Apply inverted dropout to `t` when active.
    pub fn apply(&mut self, g: &mut Graph, t: Tid) -> Tid {
        let p = self.dropout;
        match (&mut self.rng, p > 0.0) {
            (Some(rng), true) => {
                let shape = g.shape(t).to_vec();
                let keep = 1.0 - p;
                let mask = Arr::from_shape_fn(IxDyn(&shape), |_| {
                    if rng.gen::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                g.dropout(t, Some(mask))
            }
            _ => t,
        }
    }
}

// ----- parameter registration -----

fn init_layer_norm(store: &mut ParamStore, prefix: &str, dim: usize) {
    store.init_ones(&format!("{prefix}.ln.g"), &[dim]);
    store.init_zeros(&format!("{prefix}.ln.b"), &[dim]);
}

fn init_feed_forward(store: &mut ParamStore, prefix: &str, cfg: &BlockCfg, rng: &mut ChaCha20Rng) {
    let (d, h) = (cfg.dim, cfg.dim * cfg.ff_expansion);
    init_layer_norm(store, prefix, d);
    store.init_linear(&format!("{prefix}.w1"), d, h, rng);
    store.init_zeros(&format!("{prefix}.b1"), &[h]);
    store.init_linear(&format!("{prefix}.w2"), h, d, rng);
    store.init_zeros(&format!("{prefix}.b2"), &[d]);
}

/// Register the four projection matrices, their biases, and the slot's
/// pre-norm for one temporal self-attention module.
pub fn init_mhsa(store: &mut ParamStore, prefix: &str, cfg: &BlockCfg, rng: &mut ChaCha20Rng) {
    let d = cfg.dim;
    init_layer_norm(store, prefix, d);
    for name in ["wq", "wk", "wv", "wo"] {
        store.init_linear(&format!("{prefix}.{name}"), d, d, rng);
    }
    for name in ["bq", "bk", "bv", "bo"] {
        store.init_zeros(&format!("{prefix}.{name}"), &[d]);
    }
}

/// Register the two square FA maps (bias-free) plus the slot's pre-norm.
pub fn init_fa(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut ChaCha20Rng) {
    init_layer_norm(store, prefix, dim);
    store.init_linear(&format!("{prefix}.w1"), dim, dim, rng);
    store.init_linear(&format!("{prefix}.w2"), dim, dim, rng);
}

fn init_conv_module(store: &mut ParamStore, prefix: &str, cfg: &BlockCfg, rng: &mut ChaCha20Rng) {
    let d = cfg.dim;
    init_layer_norm(store, prefix, d);
    store.init_linear(&format!("{prefix}.pw1.w"), d, 2 * d, rng);
    store.init_zeros(&format!("{prefix}.pw1.b"), &[2 * d]);
    store.init_uniform(
        &format!("{prefix}.dw.w"),
        &[cfg.conv_kernel, d],
        1.0 / (cfg.conv_kernel as f64).sqrt(),
        rng,
    );
    store.init_zeros(&format!("{prefix}.dw.b"), &[d]);
    store.init_ones(&format!("{prefix}.mid_ln.g"), &[d]);
    store.init_zeros(&format!("{prefix}.mid_ln.b"), &[d]);
    store.init_linear(&format!("{prefix}.pw2.w"), d, d, rng);
    store.init_zeros(&format!("{prefix}.pw2.b"), &[d]);
}

/// Register every parameter of one block under `prefix`.
pub fn init_block(store: &mut ParamStore, prefix: &str, cfg: &BlockCfg, rng: &mut ChaCha20Rng) {
    init_feed_forward(store, &format!("{prefix}.ff1"), cfg, rng);
    init_mhsa(store, &format!("{prefix}.mhsa"), cfg, rng);
    match cfg.kind {
        BlockKind::Dda => init_fa(store, &format!("{prefix}.fa"), cfg.dim, rng),
        BlockKind::Conformer => init_conv_module(store, &format!("{prefix}.conv"), cfg, rng),
        BlockKind::ConformerFa => {
            init_fa(store, &format!("{prefix}.fa"), cfg.dim, rng);
            init_conv_module(store, &format!("{prefix}.conv"), cfg, rng);
        }
    }
    init_feed_forward(store, &format!("{prefix}.ff2"), cfg, rng);
    store.init_ones(&format!("{prefix}.final_ln.g"), &[cfg.dim]);
    store.init_zeros(&format!("{prefix}.final_ln.b"), &[cfg.dim]);
}

// ----- forward passes -----

const LN_EPS: f64 = 1e-5;

fn layer_norm(g: &mut Graph, x: Tid, bound: &BoundParams, prefix: &str) -> Tid {
    let gamma = bound.tid(&format!("{prefix}.ln.g"));
    let beta = bound.tid(&format!("{prefix}.ln.b"));
    g.layer_norm(x, gamma, beta, LN_EPS)
}

/// FA weight vector: sigmoid of the two pooled time statistics through their
/// square maps. Input `(T, F_d)`, output `(1, F_d)`.
pub fn fa_weights(g: &mut Graph, x: Tid, bound: &BoundParams, prefix: &str) -> Result<Tid> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 2 {
        return Err(Error::Dimension(format!("FA expects (T, F), got {:?}", shape)));
    }
    let w1 = bound.tid(&format!("{prefix}.w1"));
    let w2 = bound.tid(&format!("{prefix}.w2"));
    if g.shape(w1) != [shape[1], shape[1]] {
        return Err(Error::Dimension(format!(
            "FA width {} does not match input width {}",
            g.shape(w1)[0],
            shape[1]
        )));
    }
    let avg = g.mean_rows_sorted(x);
    let mx = g.max_axis(x, 0);
    let mx = g.reshape(mx, &[1, shape[1]]);
    let a = g.matmul(avg, w1);
    let b = g.matmul(mx, w2);
    let s = g.add(a, b);
    Ok(g.sigmoid(s))
}

/// Broadcast the weight vector over all time frames and gate the input.
pub fn fa_apply(g: &mut Graph, x: Tid, u: Tid) -> Result<Tid> {
    let xs = g.shape(x).to_vec();
    let us = g.shape(u).to_vec();
    if us != [1, xs[1]] {
        return Err(Error::Dimension(format!(
            "weight vector {:?} does not match input width {:?}",
            us, xs
        )));
    }
    Ok(g.mul(x, u))
}

/// Output of multi-head self-attention, with per-head attention matrices
/// exposed for inspection.
pub struct MhsaOut {
    pub out: Tid,
    /// One `(T, T)` row-stochastic matrix per head.
    pub attn: Vec<Tid>,
}

/// Scaled dot-product multi-head self-attention over time. Input `(T, D)`.
pub fn mhsa_forward(
    g: &mut Graph,
    x: Tid,
    bound: &BoundParams,
    prefix: &str,
    heads: usize,
    ctx: &mut TrainCtx,
) -> Result<MhsaOut> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 2 {
        return Err(Error::Dimension(format!("MHSA expects (T, D), got {:?}", shape)));
    }
    let (t, d) = (shape[0], shape[1]);
    if d % heads != 0 {
        return Err(Error::Config(format!("width {d} not divisible by {heads} heads")));
    }
    let dh = d / heads;

    let q = g.linear(x, bound.tid(&format!("{prefix}.wq")), bound.tid(&format!("{prefix}.bq")));
    let k = g.linear(x, bound.tid(&format!("{prefix}.wk")), bound.tid(&format!("{prefix}.bk")));
    let v = g.linear(x, bound.tid(&format!("{prefix}.wv")), bound.tid(&format!("{prefix}.bv")));

    let mut head_outs = Vec::with_capacity(heads);
    let mut attn_mats = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = g.slice_axis(q, 1, lo, hi);
        let kh = g.slice_axis(k, 1, lo, hi);
        let vh = g.slice_axis(v, 1, lo, hi);
        let kt = g.permute(kh, &[1, 0]);
        let scores = g.matmul(qh, kt);
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let probs = g.softmax_lastdim(scores);
        attn_mats.push(probs);
        let probs_d = ctx.apply(g, probs);
        head_outs.push(g.matmul(probs_d, vh));
    }
    let merged = g.concat(&head_outs, 1);
    let out = g.linear(
        merged,
        bound.tid(&format!("{prefix}.wo")),
        bound.tid(&format!("{prefix}.bo")),
    );
    let out = ctx.apply(g, out);
    debug_assert_eq!(g.shape(out), &[t, d]);
    Ok(MhsaOut { out, attn: attn_mats })
}

/// Pre-norm feed-forward: LN → linear → swish → dropout → linear → dropout.
fn feed_forward(
    g: &mut Graph,
    x: Tid,
    bound: &BoundParams,
    prefix: &str,
    ctx: &mut TrainCtx,
) -> Tid {
    let normed = layer_norm(g, x, bound, prefix);
    let h = g.linear(
        normed,
        bound.tid(&format!("{prefix}.w1")),
        bound.tid(&format!("{prefix}.b1")),
    );
    let h = g.silu(h);
    let h = ctx.apply(g, h);
    let out = g.linear(h, bound.tid(&format!("{prefix}.w2")), bound.tid(&format!("{prefix}.b2")));
    ctx.apply(g, out)
}

/// Depthwise-separable Conformer convolution module:
/// LN → pointwise (D→2D) → GLU → depthwise (kernel `k` over time) → LN →
/// swish → pointwise (D→D) → dropout.
fn conv_module(
    g: &mut Graph,
    x: Tid,
    bound: &BoundParams,
    prefix: &str,
    cfg: &BlockCfg,
    ctx: &mut TrainCtx,
) -> Tid {
    let d = cfg.dim;
    let t = g.shape(x)[0];
    let normed = layer_norm(g, x, bound, prefix);
    let h = g.linear(
        normed,
        bound.tid(&format!("{prefix}.pw1.w")),
        bound.tid(&format!("{prefix}.pw1.b")),
    );
    // GLU: first half gated by the sigmoid of the second half.
    let a = g.slice_axis(h, 1, 0, d);
    let b = g.slice_axis(h, 1, d, 2 * d);
    let gate = g.sigmoid(b);
    let h = g.mul(a, gate);

    // Depthwise convolution over time as a sum of shifted, per-channel
    // weighted copies.
    let k = cfg.conv_kernel;
    let pad = k / 2;
    let zeros = g.constant(Arr::zeros(IxDyn(&[pad, d])));
    let padded = g.concat(&[zeros, h, zeros], 0);
    let w = bound.tid(&format!("{prefix}.dw.w"));
    let mut acc: Option<Tid> = None;
    for j in 0..k {
        let shifted = g.slice_axis(padded, 0, j, j + t);
        let wj = g.slice_axis(w, 0, j, j + 1);
        let term = g.mul(shifted, wj);
        acc = Some(match acc {
            None => term,
            Some(prev) => g.add(prev, term),
        });
    }
    let conv = acc.expect("kernel width is positive");
    let conv = g.add(conv, bound.tid(&format!("{prefix}.dw.b")));

    let gmid = bound.tid(&format!("{prefix}.mid_ln.g"));
    let bmid = bound.tid(&format!("{prefix}.mid_ln.b"));
    let conv = g.layer_norm(conv, gmid, bmid, LN_EPS);
    let conv = g.silu(conv);
    let out = g.linear(
        conv,
        bound.tid(&format!("{prefix}.pw2.w")),
        bound.tid(&format!("{prefix}.pw2.b")),
    );
    ctx.apply(g, out)
}

/// One block: macaron feed-forwards with half-step residuals around the
/// attention sublayers, closed by a final LayerNorm.
pub fn block_forward(
    g: &mut Graph,
    x: Tid,
    bound: &BoundParams,
    prefix: &str,
    cfg: &BlockCfg,
    ctx: &mut TrainCtx,
) -> Result<Tid> {
    cfg.validate()?;
    let ff1 = feed_forward(g, x, bound, &format!("{prefix}.ff1"), ctx);
    let ff1_half = g.scale(ff1, 0.5);
    let a = g.add(x, ff1_half);

    let a_normed = layer_norm(g, a, bound, &format!("{prefix}.mhsa"));
    let mhsa = mhsa_forward(g, a_normed, bound, &format!("{prefix}.mhsa"), cfg.heads, ctx)?;
    let m = g.add(a, mhsa.out);

    let z = match cfg.kind {
        BlockKind::Dda => {
            let m_normed = layer_norm(g, m, bound, &format!("{prefix}.fa"));
            let u = fa_weights(g, m_normed, bound, &format!("{prefix}.fa"))?;
            let gated = fa_apply(g, m_normed, u)?;
            g.add(m, gated)
        }
        BlockKind::Conformer => {
            let c = conv_module(g, m, bound, &format!("{prefix}.conv"), cfg, ctx);
            g.add(m, c)
        }
        BlockKind::ConformerFa => {
            let m_normed = layer_norm(g, m, bound, &format!("{prefix}.fa"));
            let u = fa_weights(g, m_normed, bound, &format!("{prefix}.fa"))?;
            let gated = fa_apply(g, m_normed, u)?;
            let f = g.add(m, gated);
            let c = conv_module(g, f, bound, &format!("{prefix}.conv"), cfg, ctx);
            g.add(f, c)
        }
    };

    let ff2 = feed_forward(g, z, bound, &format!("{prefix}.ff2"), ctx);
    let ff2_half = g.scale(ff2, 0.5);
    let pre = g.add(z, ff2_half);
    let gamma = bound.tid(&format!("{prefix}.final_ln.g"));
    let beta = bound.tid(&format!("{prefix}.final_ln.b"));
    Ok(g.layer_norm(pre, gamma, beta, LN_EPS))
}

/// Absolute sinusoidal positional encoding, `(t, d)`.
pub fn positional_encoding(t: usize, d: usize) -> Arr {
    let mut pe = Arr::zeros(IxDyn(&[t, d]));
    for pos in 0..t {
        for i in 0..d {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 / rate;
            pe[[pos, i]] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}
