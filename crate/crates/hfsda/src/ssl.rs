//! Self-supervised embedding branch: encoder, frame-rate alignment, fusion.
//!
//! The encoder produces high-level features at its own frame rate (20 ms hop
//! by default). Two encoder sources exist: an external pretrained checkpoint
//! loaded from disk, and a built-in stand-in — a small frozen network
//! (strided-convolution frontend, one self-attention layer, one feed-forward
//! layer) initialized from a fixed seed. The stand-in keeps the whole
//! pipeline runnable without multi-gigabyte downloads while exercising every
//! downstream contract.
//!
//! Encoder weights are frozen either way. The only trainable pieces on this
//! branch are the layer-combination logits (a learned convex combination
//! over the encoder's hidden layers) and the fusion projection.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::autograd::{Arr, Graph, Tid};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamStore};
use crate::tensorio;

/// Audio sample rate the encoder expects.
pub const SAMPLE_RATE: usize = 16_000;
/// Receptive field of the convolutional frontend, in samples.
pub const FRONTEND_WINDOW: usize = 400;
/// Number of hidden layers every encoder exposes.
pub const N_LAYERS: usize = 3;

/// Where encoder weights come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    ExternalPretrained,
    Standin,
}

/// How hidden layers are reduced to one feature sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerPolicy {
    LastLayer,
    WeightedSumAllLayers,
}

/// Encoder selection and geometry.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SslEncoderSpec {
    pub kind: EncoderKind,
    /// Checkpoint path for `external_pretrained`; free-form label otherwise.
    pub identifier: String,
    pub layer_policy: LayerPolicy,
    pub output_dim: usize,
    pub frame_hop_ms: f64,
    pub standin_seed: u64,
}

impl Default for SslEncoderSpec {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Standin,
            identifier: String::new(),
            layer_policy: LayerPolicy::WeightedSumAllLayers,
            output_dim: 768,
            frame_hop_ms: 20.0,
            standin_seed: 17,
        }
    }
}

impl SslEncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.output_dim == 0 {
            return Err(Error::Config("encoder output_dim must be at least 1".into()));
        }
        if !(self.frame_hop_ms > 0.0) {
            return Err(Error::Config("encoder frame_hop_ms must be positive".into()));
        }
        Ok(())
    }

    /// Hop in samples at 16 kHz.
    pub fn hop_samples(&self) -> usize {
        ((self.frame_hop_ms * SAMPLE_RATE as f64 / 1000.0).round() as usize).max(1)
    }
}

/// A loaded, frozen encoder.
pub struct SslEncoder {
    pub output_dim: usize,
    pub hop: usize,
    window: usize,
    conv_w: Array2<f64>,
    conv_b: Vec<f64>,
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
    wo: Array2<f64>,
    ff_w1: Array2<f64>,
    ff_b1: Vec<f64>,
    ff_w2: Array2<f64>,
    ff_b2: Vec<f64>,
}

fn uniform(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = 1.0 / (rows as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

impl SslEncoder {
    /// Build the encoder described by `spec`, loading external weights when
    /// requested.
    pub fn from_spec(spec: &SslEncoderSpec) -> Result<Self> {
        spec.validate()?;
        match spec.kind {
            EncoderKind::Standin => Ok(Self::standin(spec)),
            EncoderKind::ExternalPretrained => Self::load_external(spec),
        }
    }

    /// Deterministic stand-in encoder seeded from `spec.standin_seed`.
    pub fn standin(spec: &SslEncoderSpec) -> Self {
        let d = spec.output_dim;
        let hop = spec.hop_samples();
        let window = FRONTEND_WINDOW.max(hop);
        let mut rng = ChaCha20Rng::seed_from_u64(spec.standin_seed);
        let hidden = d * 2;
        Self {
            output_dim: d,
            hop,
            window,
            conv_w: uniform(&mut rng, window, d),
            conv_b: vec![0.0; d],
            wq: uniform(&mut rng, d, d),
            wk: uniform(&mut rng, d, d),
            wv: uniform(&mut rng, d, d),
            wo: uniform(&mut rng, d, d),
            ff_w1: uniform(&mut rng, d, hidden),
            ff_b1: vec![0.0; hidden],
            ff_w2: uniform(&mut rng, hidden, d),
            ff_b2: vec![0.0; d],
        }
    }

    /// Load pretrained weights from the tensor container at
    /// `spec.identifier`. Any missing file, malformed container, or absent /
    /// mis-shaped tensor maps to [`Error::EncoderUnavailable`] so callers can
    /// fall back to the stand-in.
    pub fn load_external(spec: &SslEncoderSpec) -> Result<Self> {
        let path = Path::new(&spec.identifier);
        let unavailable =
            |reason: String| Error::EncoderUnavailable(format!("{}: {reason}", spec.identifier));
        let tensors = tensorio::load_tensor_file(path).map_err(|e| unavailable(e.to_string()))?;
        let d = spec.output_dim;
        let hop = spec.hop_samples();
        let window = FRONTEND_WINDOW.max(hop);
        let take2 = |name: &str, rows: usize, cols: usize| -> Result<Array2<f64>> {
            let arr = tensors
                .get(name)
                .ok_or_else(|| unavailable(format!("missing tensor '{name}'")))?;
            if arr.shape() != [rows, cols] {
                return Err(unavailable(format!(
                    "tensor '{name}' has shape {:?}, expected [{rows}, {cols}]",
                    arr.shape()
                )));
            }
            Ok(arr.clone().into_dimensionality().expect("rank checked"))
        };
        let take1 = |name: &str, len: usize| -> Result<Vec<f64>> {
            let arr = tensors
                .get(name)
                .ok_or_else(|| unavailable(format!("missing tensor '{name}'")))?;
            if arr.shape() != [len] {
                return Err(unavailable(format!(
                    "tensor '{name}' has shape {:?}, expected [{len}]",
                    arr.shape()
                )));
            }
            Ok(arr.iter().copied().collect())
        };
        let hidden = d * 2;
        Ok(Self {
            output_dim: d,
            hop,
            window,
            conv_w: take2("conv.w", window, d)?,
            conv_b: take1("conv.b", d)?,
            wq: take2("attn.wq", d, d)?,
            wk: take2("attn.wk", d, d)?,
            wv: take2("attn.wv", d, d)?,
            wo: take2("attn.wo", d, d)?,
            ff_w1: take2("ff.w1", d, hidden)?,
            ff_b1: take1("ff.b1", hidden)?,
            ff_w2: take2("ff.w2", hidden, d)?,
            ff_b2: take1("ff.b2", d)?,
        })
    }

    /// Export weights into a tensor map (the format [`load_external`]
    /// expects).
    pub fn export(&self) -> std::collections::BTreeMap<String, Arr> {
        let mut map = std::collections::BTreeMap::new();
        let mut put2 = |name: &str, a: &Array2<f64>| {
            map.insert(name.to_string(), a.clone().into_dyn());
        };
        put2("conv.w", &self.conv_w);
        put2("attn.wq", &self.wq);
        put2("attn.wk", &self.wk);
        put2("attn.wv", &self.wv);
        put2("attn.wo", &self.wo);
        put2("ff.w1", &self.ff_w1);
        put2("ff.w2", &self.ff_w2);
        let mut put1 = |name: &str, v: &[f64]| {
            map.insert(name.to_string(), ndarray::Array1::from(v.to_vec()).into_dyn());
        };
        put1("conv.b", &self.conv_b);
        put1("ff.b1", &self.ff_b1);
        put1("ff.b2", &self.ff_b2);
        map
    }

    /// Frame count the encoder emits for `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len == 0 {
            0
        } else if len < self.window {
            1
        } else {
            (len - self.window) / self.hop + 1
        }
    }

    /// All hidden-layer outputs for `waveform`, each `(T_ssl, output_dim)`.
    pub fn layer_outputs(&self, waveform: &[f64]) -> Result<Vec<Array2<f64>>> {
        if waveform.is_empty() {
            return Err(Error::InvalidInput("cannot embed an empty waveform".into()));
        }
        if waveform.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("waveform contains non-finite samples".into()));
        }
        let t = self.frame_count(waveform.len());
        let d = self.output_dim;

        // Frontend: strided frames through a linear map, tanh.
        let mut frames = Array2::<f64>::zeros((t, self.window));
        for i in 0..t {
            let start = i * self.hop;
            for j in 0..self.window {
                if start + j < waveform.len() {
                    frames[[i, j]] = waveform[start + j];
                }
            }
        }
        let mut l1 = frames.dot(&self.conv_w);
        for mut row in l1.rows_mut() {
            for (v, b) in row.iter_mut().zip(&self.conv_b) {
                *v = (*v + b).tanh();
            }
        }

        // Single-head self-attention with residual.
        let q = l1.dot(&self.wq);
        let k = l1.dot(&self.wk);
        let v = l1.dot(&self.wv);
        let mut scores = q.dot(&k.t());
        scores.mapv_inplace(|s| s / (d as f64).sqrt());
        for mut row in scores.rows_mut() {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|s| (s - mx).exp());
            let sum = row.sum();
            row.mapv_inplace(|s| s / sum);
        }
        let attended = scores.dot(&v).dot(&self.wo);
        let l2 = (&l1 + &attended).mapv(f64::tanh);

        // Feed-forward with residual.
        let mut h = l2.dot(&self.ff_w1);
        for mut row in h.rows_mut() {
            for (x, b) in row.iter_mut().zip(&self.ff_b1) {
                *x = (*x + b).tanh();
            }
        }
        let mut l3 = h.dot(&self.ff_w2);
        for mut row in l3.rows_mut() {
            for (x, b) in row.iter_mut().zip(&self.ff_b2) {
                *x += b;
            }
        }
        let l3 = &l3 + &l2;

        Ok(vec![l1, l2, l3])
    }

    /// Reduce hidden layers to one sequence per `policy`. `layer_logits`
    /// parameterize the softmax combination (`None` means uniform) and are
    /// ignored by `last_layer`.
    pub fn embed(
        &self,
        waveform: &[f64],
        policy: LayerPolicy,
        layer_logits: Option<&[f64]>,
    ) -> Result<Array2<f64>> {
        let layers = self.layer_outputs(waveform)?;
        match policy {
            LayerPolicy::LastLayer => Ok(layers.last().expect("non-empty").clone()),
            LayerPolicy::WeightedSumAllLayers => {
                let logits = match layer_logits {
                    Some(l) if l.len() != layers.len() => {
                        return Err(Error::Dimension(format!(
                            "{} layer logits for {} layers",
                            l.len(),
                            layers.len()
                        )))
                    }
                    Some(l) => l.to_vec(),
                    None => vec![0.0; layers.len()],
                };
                let weights = softmax(&logits);
                let mut out = Array2::<f64>::zeros(layers[0].raw_dim());
                for (w, layer) in weights.iter().zip(&layers) {
                    out.scaled_add(*w, layer);
                }
                Ok(out)
            }
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - mx).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Resample `features` (T × D) onto `target_t` uniformly spaced positions
/// spanning the first and last frame, by linear interpolation. Endpoints are
/// reproduced exactly; `target_t == T` is the identity.
pub fn align(features: &Array2<f64>, target_t: usize) -> Result<Array2<f64>> {
    let (t, d) = features.dim();
    if t == 0 {
        return Err(Error::InvalidInput("cannot align an empty feature sequence".into()));
    }
    if target_t == 0 {
        return Err(Error::InvalidInput("alignment target length must be positive".into()));
    }
    if t == 1 {
        // Single source frame: broadcast it.
        let row = features.row(0);
        return Ok(Array2::from_shape_fn((target_t, d), |(_, j)| row[j]));
    }
    if target_t == t {
        return Ok(features.clone());
    }
    let mut out = Array2::<f64>::zeros((target_t, d));
    for i in 0..target_t {
        let pos = if target_t == 1 {
            0.0
        } else {
            i as f64 * (t - 1) as f64 / (target_t - 1) as f64
        };
        let lo = pos.floor() as usize;
        let hi = lo.min(t - 2) + 1;
        let frac = pos - lo as f64;
        for j in 0..d {
            out[[i, j]] = features[[lo, j]] * (1.0 - frac) + features[[hi, j]] * frac;
        }
    }
    Ok(out)
}

/// Register the trainable pieces of the SSL branch: layer-combination
/// logits under `{prefix}.layer_logits`.
pub fn init_layer_logits(store: &mut ParamStore, prefix: &str) {
    store.init_zeros(&format!("{prefix}.layer_logits"), &[N_LAYERS]);
}

/// Register the fusion projection `((d_ssl + d_spec) × d_model)` plus bias.
pub fn init_fuse(
    store: &mut ParamStore,
    prefix: &str,
    d_ssl: usize,
    d_spec: usize,
    d_model: usize,
    rng: &mut ChaCha20Rng,
) {
    store.init_linear(&format!("{prefix}.w"), d_ssl + d_spec, d_model, rng);
    store.init_zeros(&format!("{prefix}.b"), &[d_model]);
}

/// In-graph convex combination of frozen layer outputs using trainable
/// logits: gradients reach the logits, not the encoder.
pub fn weighted_layers(g: &mut Graph, layers: &[Array2<f64>], logits: Tid) -> Tid {
    assert!(!layers.is_empty());
    let n = layers.len();
    assert_eq!(g.shape(logits), &[n], "one logit per hidden layer");
    let row = g.reshape(logits, &[1, n]);
    let weights = g.softmax_lastdim(row);
    let mut acc: Option<Tid> = None;
    for (i, layer) in layers.iter().enumerate() {
        let w = g.slice_axis(weights, 1, i, i + 1);
        let l = g.constant(layer.clone().into_dyn());
        let term = g.mul(l, w);
        acc = Some(match acc {
            None => term,
            Some(prev) => g.add(prev, term),
        });
    }
    acc.expect("at least one layer")
}

/// Frame-wise fusion: concatenate the aligned SSL stream and the spectral
/// stream along the feature axis, then project to model width.
pub fn fuse_forward(
    g: &mut Graph,
    ssl_aligned: Tid,
    spec_features: Tid,
    bound: &BoundParams,
    prefix: &str,
) -> Result<Tid> {
    let a = g.shape(ssl_aligned).to_vec();
    let b = g.shape(spec_features).to_vec();
    if a.len() != 2 || b.len() != 2 || a[0] != b[0] {
        return Err(Error::Dimension(format!(
            "fusion requires equal frame counts, got {:?} and {:?}",
            a, b
        )));
    }
    let cat = g.concat(&[ssl_aligned, spec_features], 1);
    let w = bound.tid(&format!("{prefix}.w"));
    let bias = bound.tid(&format!("{prefix}.b"));
    Ok(g.linear(cat, w, bias))
}

/// Convenience: embed outside the graph with the current logit values.
pub fn embed_for_model(
    encoder: &SslEncoder,
    waveform: &[f64],
    policy: LayerPolicy,
    store: &ParamStore,
    logits_name: &str,
) -> Result<Array2<f64>> {
    let logits: Vec<f64> = if store.contains(logits_name) {
        store.get(logits_name).iter().copied().collect()
    } else {
        vec![0.0; N_LAYERS]
    };
    encoder.embed(waveform, policy, Some(&logits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Axis, IxDyn};

    fn spec_with_dim(d: usize) -> SslEncoderSpec {
        SslEncoderSpec { output_dim: d, ..SslEncoderSpec::default() }
    }

    fn test_wave(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect()
    }

    #[test]
    fn standin_is_deterministic() {
        let spec = spec_with_dim(32);
        let enc1 = SslEncoder::standin(&spec);
        let enc2 = SslEncoder::standin(&spec);
        let wave = test_wave(5000, 1);
        let a = enc1.embed(&wave, LayerPolicy::WeightedSumAllLayers, None).unwrap();
        let b = enc2.embed(&wave, LayerPolicy::WeightedSumAllLayers, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_give_different_encoders() {
        let base = spec_with_dim(16);
        let other = SslEncoderSpec { standin_seed: 23, ..base.clone() };
        let wave = test_wave(3000, 2);
        let a = SslEncoder::standin(&base).embed(&wave, LayerPolicy::LastLayer, None).unwrap();
        let b = SslEncoder::standin(&other).embed(&wave, LayerPolicy::LastLayer, None).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn frame_count_obeys_the_hop_law_within_one() {
        let enc = SslEncoder::standin(&spec_with_dim(8));
        assert_eq!(enc.hop, 320);
        for len in [24000usize, 16000, 8000, 1040, 720, 640, 400, 399, 1] {
            let t = enc.frame_count(len);
            let law = len / 320;
            assert!(
                (t as i64 - law as i64).abs() <= 1,
                "len {len}: frames {t} vs law {law}"
            );
            let layers = enc.layer_outputs(&test_wave(len, 3)).unwrap();
            assert_eq!(layers.len(), N_LAYERS);
            for l in &layers {
                assert_eq!(l.dim(), (t, 8));
            }
        }
        // The 1.5 s case pinned down by the contract.
        assert_eq!(enc.frame_count(24000), 74);
    }

    #[test]
    fn layer_weights_softmax_to_one_and_drive_the_combination() {
        let enc = SslEncoder::standin(&spec_with_dim(8));
        let wave = test_wave(2000, 4);
        let logits = [0.3, -1.2, 2.0];
        let weights = softmax(&logits);
        assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-6);

        let layers = enc.layer_outputs(&wave).unwrap();
        let mut manual = Array2::<f64>::zeros(layers[0].raw_dim());
        for (w, l) in weights.iter().zip(&layers) {
            manual.scaled_add(*w, l);
        }
        let got = enc.embed(&wave, LayerPolicy::WeightedSumAllLayers, Some(&logits)).unwrap();
        for (a, b) in got.iter().zip(manual.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn last_layer_policy_returns_the_final_layer() {
        let enc = SslEncoder::standin(&spec_with_dim(8));
        let wave = test_wave(2000, 5);
        let layers = enc.layer_outputs(&wave).unwrap();
        let got = enc.embed(&wave, LayerPolicy::LastLayer, None).unwrap();
        assert_eq!(got, layers[N_LAYERS - 1]);
    }

    #[test]
    fn empty_and_non_finite_waveforms_are_rejected() {
        let enc = SslEncoder::standin(&spec_with_dim(4));
        assert!(matches!(enc.layer_outputs(&[]), Err(Error::InvalidInput(_))));
        assert!(matches!(enc.layer_outputs(&[0.0, f64::NAN]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn align_identity_midpoint_and_endpoints() {
        // Identity when target matches.
        let f = Array2::from_shape_fn((5, 3), |(i, j)| (i * 3 + j) as f64);
        assert_eq!(align(&f, 5).unwrap(), f);

        // Two frames to three: middle is the average.
        let two = ndarray::arr2(&[[1.0, 10.0], [3.0, -4.0]]);
        let three = align(&two, 3).unwrap();
        assert_eq!(three.row(0), two.row(0));
        assert_eq!(three.row(2), two.row(1));
        assert_eq!(three[[1, 0]], 2.0);
        assert_eq!(three[[1, 1]], 3.0);

        // 75 -> 151 preserves both endpoints exactly.
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let src = Array2::from_shape_fn((75, 4), |_| rng.gen_range(-1.0..1.0));
        let up = align(&src, 151).unwrap();
        assert_eq!(up.dim(), (151, 4));
        assert_eq!(up.row(0), src.row(0));
        assert_eq!(up.row(150), src.row(74));
    }

    #[test]
    fn align_rejects_empty_input_and_broadcasts_single_frames() {
        let empty = Array2::<f64>::zeros((0, 4));
        assert!(matches!(align(&empty, 5), Err(Error::InvalidInput(_))));
        let one = ndarray::arr2(&[[2.0, -1.0]]);
        let out = align(&one, 4).unwrap();
        for row in out.rows() {
            assert_eq!(row, one.row(0));
        }
    }

    #[test]
    fn fusion_concatenates_then_projects() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        init_fuse(&mut store, "fuse", 6, 4, 5, &mut rng);
        assert_eq!(store.get("fuse.w").shape(), &[10, 5]);

        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let ssl = g.constant(Arr::from_shape_fn(IxDyn(&[3, 6]), |ix| ix[1] as f64));
        let spec = g.constant(Arr::from_shape_fn(IxDyn(&[3, 4]), |ix| -(ix[1] as f64)));
        let y = fuse_forward(&mut g, ssl, spec, &bound, "fuse").unwrap();
        assert_eq!(g.shape(y), &[3, 5]);

        // Zero inputs reduce to the projection bias.
        let mut store2 = ParamStore::new();
        init_fuse(&mut store2, "fuse", 6, 4, 5, &mut rng);
        store2.get_mut("fuse.b").iter_mut().enumerate().for_each(|(i, v)| *v = i as f64);
        let mut g2 = Graph::new();
        let bound2 = store2.bind(&mut g2);
        let z_ssl = g2.constant(Arr::zeros(IxDyn(&[3, 6])));
        let z_spec = g2.constant(Arr::zeros(IxDyn(&[3, 4])));
        let y2 = fuse_forward(&mut g2, z_ssl, z_spec, &bound2, "fuse").unwrap();
        for row in g2.value(y2).rows() {
            assert_eq!(row.to_vec(), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        }
    }

    #[test]
    fn fusion_rejects_frame_count_mismatch() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        init_fuse(&mut store, "fuse", 6, 4, 5, &mut rng);
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let ssl = g.constant(Arr::zeros(IxDyn(&[3, 6])));
        let spec = g.constant(Arr::zeros(IxDyn(&[4, 4])));
        assert!(matches!(
            fuse_forward(&mut g, ssl, spec, &bound, "fuse"),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn fusion_never_mixes_across_frames() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        init_fuse(&mut store, "fuse", 3, 2, 4, &mut rng);
        let ssl0 = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-1.0..1.0));
        let spec0 = Array2::from_shape_fn((5, 2), |_| rng.gen_range(-1.0..1.0));

        let run = |ssl_arr: &Array2<f64>, spec_arr: &Array2<f64>| {
            let mut g = Graph::new();
            let bound = store.bind(&mut g);
            let s = g.constant(ssl_arr.clone().into_dyn());
            let p = g.constant(spec_arr.clone().into_dyn());
            let y = fuse_forward(&mut g, s, p, &bound, "fuse").unwrap();
            g.value(y).clone()
        };
        let base = run(&ssl0, &spec0);
        let mut bumped = spec0.clone();
        bumped[[2, 1]] += 1.0;
        let shifted = run(&ssl0, &bumped);
        for t in 0..5 {
            let differs = base
                .index_axis(Axis(0), t)
                .iter()
                .zip(shifted.index_axis(Axis(0), t).iter())
                .any(|(a, b)| a != b);
            assert_eq!(differs, t == 2, "frame {t}");
        }
    }

    #[test]
    fn weighted_layers_gradient_reaches_the_logits() {
        let enc = SslEncoder::standin(&spec_with_dim(4));
        let layers = enc.layer_outputs(&test_wave(1500, 10)).unwrap();
        let mut store = ParamStore::new();
        init_layer_logits(&mut store, "ssl");
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let logits = bound.tid("ssl.layer_logits");
        let combined = weighted_layers(&mut g, &layers, logits);
        let w = g.constant(Arr::from_shape_fn(g.value(combined).raw_dim(), |ix| {
            (ix[0] as f64 - ix[1] as f64) * 0.1
        }));
        let wy = g.mul(combined, w);
        let loss = g.sum_all(wy);
        let grads = g.backward(loss);
        let grad = grads.get(logits).expect("logits gradient");
        assert_eq!(grad.shape(), &[N_LAYERS]);
        assert!(grad.iter().any(|&v| v.abs() > 0.0));
        // Softmax gradient rows sum to zero.
        assert!(grad.iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn external_loader_errors_then_round_trips() {
        let missing = SslEncoderSpec {
            kind: EncoderKind::ExternalPretrained,
            identifier: "/nonexistent/encoder.hft".into(),
            output_dim: 8,
            ..SslEncoderSpec::default()
        };
        assert!(matches!(
            SslEncoder::from_spec(&missing),
            Err(Error::EncoderUnavailable(_))
        ));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.hft");
        let spec = spec_with_dim(8);
        let original = SslEncoder::standin(&spec);
        tensorio::save_tensor_file(&path, &original.export()).unwrap();

        let loaded = SslEncoder::load_external(&SslEncoderSpec {
            kind: EncoderKind::ExternalPretrained,
            identifier: path.display().to_string(),
            output_dim: 8,
            ..SslEncoderSpec::default()
        })
        .unwrap();
        let wave = test_wave(2000, 11);
        let a = original.embed(&wave, LayerPolicy::WeightedSumAllLayers, None).unwrap();
        let b = loaded.embed(&wave, LayerPolicy::WeightedSumAllLayers, None).unwrap();
        assert_eq!(a, b);

        // Wrong declared width -> unusable checkpoint.
        let bad = SslEncoder::load_external(&SslEncoderSpec {
            kind: EncoderKind::ExternalPretrained,
            identifier: path.display().to_string(),
            output_dim: 16,
            ..SslEncoderSpec::default()
        });
        assert!(matches!(bad, Err(Error::EncoderUnavailable(_))));
    }
}
