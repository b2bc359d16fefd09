//! The full enhancement network.
//!
//! Pipeline: STFT → magnitude → dynamic-convolution spectral branch in
//! parallel with the self-supervised embedding branch → frame-rate alignment
//! → fusion to model width → positional encoding → a stack of attention
//! blocks → feed-forward mask head (LayerNorm → linear → sigmoid) → bounded
//! magnitude mask applied to the noisy complex spectrogram → inverse STFT.
//!
//! Training minimizes mean smooth-L1 between enhanced and clean magnitude
//! spectrograms, optionally mixed with a waveform-domain smooth-L1 term
//! (weight 0 by default) synthesized differentiably inside the graph.

use ndarray::{Array2, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::autograd::{Arr, Graph, Tid};
use crate::dda::{self, BlockCfg, BlockKind, TrainCtx};
use crate::dsp::{self, ComplexSpectrogram, Mask, StftConfig};
use crate::error::{Error, Result};
use crate::odconv::{self, OdconvHyper};
use crate::params::{BoundParams, ParamStore};
use crate::ssl::{self, SslEncoder, SslEncoderSpec};

/// Activation that bounds the mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskActivation {
    Sigmoid,
}

/// Which feature branches feed the fusion stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchMode {
    /// Spectral and SSL branches, concatenated.
    Both,
    /// SSL features only.
    SslOnly,
    /// Spectral features only.
    SpecOnly,
}

/// Complete architectural description; fully serializable so a checkpoint
/// can be tied to the configuration that produced it.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub stft: StftConfig,
    pub odconv: OdconvHyper,
    pub ssl: SslEncoderSpec,
    pub model_dim: usize,
    pub n_blocks: usize,
    pub heads: usize,
    pub ff_expansion: usize,
    pub block_kind: BlockKind,
    pub conv_kernel: usize,
    pub mask_activation: MaskActivation,
    pub loss_beta: f64,
    pub dropout: f64,
    pub branch: BranchMode,
    pub waveform_loss_weight: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            odconv: OdconvHyper::default(),
            ssl: SslEncoderSpec::default(),
            model_dim: 256,
            n_blocks: 2,
            heads: 4,
            ff_expansion: 4,
            block_kind: BlockKind::Dda,
            conv_kernel: 31,
            mask_activation: MaskActivation::Sigmoid,
            loss_beta: 1.0,
            dropout: 0.1,
            branch: BranchMode::Both,
            waveform_loss_weight: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.odconv.validate()?;
        self.ssl.validate()?;
        if self.n_blocks == 0 {
            return Err(Error::Config("at least one block is required".into()));
        }
        self.block_cfg().validate()?;
        if self.odconv.c_in != 1 {
            return Err(Error::Config("the spectral branch consumes a 1-channel magnitude".into()));
        }
        if self.odconv.stride != 1 {
            return Err(Error::Config("the spectral branch must preserve the frame grid".into()));
        }
        if !(self.loss_beta > 0.0) {
            return Err(Error::Config("loss_beta must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if self.waveform_loss_weight < 0.0 {
            return Err(Error::Config("waveform_loss_weight must be non-negative".into()));
        }
        Ok(())
    }

    pub fn block_cfg(&self) -> BlockCfg {
        BlockCfg {
            dim: self.model_dim,
            heads: self.heads,
            ff_expansion: self.ff_expansion,
            kind: self.block_kind,
            conv_kernel: self.conv_kernel,
        }
    }

    /// Width of the flattened spectral-branch frame before projection.
    pub fn spec_flat_width(&self) -> usize {
        self.odconv.c_out * self.stft.n_bins()
    }

    /// Width entering the fusion projection.
    pub fn fuse_input_width(&self) -> usize {
        match self.branch {
            BranchMode::Both => self.ssl.output_dim + self.model_dim,
            BranchMode::SslOnly => self.ssl.output_dim,
            BranchMode::SpecOnly => self.model_dim,
        }
    }
}

/// Everything the forward pass produces.
pub struct EnhancementOutput {
    pub mask: Mask,
    pub enhanced_spectrogram: ComplexSpectrogram,
    pub enhanced_waveform: Vec<f64>,
}

/// Graph-side handles from one forward pass, for building losses on top.
pub struct GraphForward {
    pub mask: Tid,
    pub enhanced_mag: Tid,
    /// Noisy analysis this pass is based on.
    pub spec: ComplexSpectrogram,
    pub noisy_mag: Array2<f64>,
}

/// A configured network plus its (frozen) embedding encoder.
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Option<SslEncoder>,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let encoder = match config.branch {
            BranchMode::SpecOnly => None,
            _ => Some(SslEncoder::from_spec(&config.ssl)?),
        };
        Ok(Self { config, encoder })
    }

    /// Fresh trainable parameters, deterministic in `seed`.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cfg = &self.config;
        if matches!(cfg.branch, BranchMode::Both | BranchMode::SpecOnly) {
            cfg.odconv.init_params(&mut store, "od1", &mut rng);
            store.init_linear("branch.w", cfg.spec_flat_width(), cfg.model_dim, &mut rng);
            store.init_zeros("branch.b", &[cfg.model_dim]);
        }
        if matches!(cfg.branch, BranchMode::Both | BranchMode::SslOnly) {
            ssl::init_layer_logits(&mut store, "ssl");
        }
        store.init_linear("fuse.w", cfg.fuse_input_width(), cfg.model_dim, &mut rng);
        store.init_zeros("fuse.b", &[cfg.model_dim]);
        let block_cfg = cfg.block_cfg();
        for i in 0..cfg.n_blocks {
            dda::init_block(&mut store, &format!("block.{i}"), &block_cfg, &mut rng);
        }
        store.init_ones("head.ln.g", &[cfg.model_dim]);
        store.init_zeros("head.ln.b", &[cfg.model_dim]);
        store.init_linear("head.w", cfg.model_dim, cfg.stft.n_bins(), &mut rng);
        store.init_zeros("head.b", &[cfg.stft.n_bins()]);
        store
    }

    /// Build the differentiable forward pass for one utterance.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        noisy: &[f64],
        ctx: &mut TrainCtx,
    ) -> Result<GraphForward> {
        let cfg = &self.config;
        if noisy.len() < cfg.stft.win_length {
            return Err(Error::InvalidInput(format!(
                "waveform of {} samples is shorter than one {}-sample frame",
                noisy.len(),
                cfg.stft.win_length
            )));
        }
        let spec = dsp::stft(noisy, &cfg.stft)?;
        let noisy_mag = dsp::magnitude(&spec);
        let (t, f) = noisy_mag.dim();

        let spec_feat = match cfg.branch {
            BranchMode::SslOnly => None,
            _ => {
                let image = g.constant(
                    noisy_mag.clone().into_shape(IxDyn(&[1, t, f])).expect("1×T×F view"),
                );
                let conv = odconv::odconv_forward(g, image, bound, "od1", &cfg.odconv)?;
                let per_frame = g.permute(conv, &[1, 0, 2]);
                let flat = g.reshape(per_frame, &[t, cfg.spec_flat_width()]);
                Some(g.linear(flat, bound.tid("branch.w"), bound.tid("branch.b")))
            }
        };
        let ssl_feat = match cfg.branch {
            BranchMode::SpecOnly => None,
            _ => {
                let encoder = self.encoder.as_ref().expect("encoder built for this branch mode");
                let layers = encoder.layer_outputs(noisy)?;
                let aligned: Vec<Array2<f64>> =
                    layers.iter().map(|l| ssl::align(l, t)).collect::<Result<_>>()?;
                let logits = bound.tid("ssl.layer_logits");
                Some(ssl::weighted_layers(g, &aligned, logits))
            }
        };

        let fuse_in = match (ssl_feat, spec_feat) {
            (Some(s), Some(p)) => g.concat(&[s, p], 1),
            (Some(s), None) => s,
            (None, Some(p)) => p,
            (None, None) => unreachable!("validated branch mode"),
        };
        let fused = g.linear(fuse_in, bound.tid("fuse.w"), bound.tid("fuse.b"));

        let pe = g.constant(dda::positional_encoding(t, cfg.model_dim));
        let mut x = g.add(fused, pe);
        let block_cfg = cfg.block_cfg();
        for i in 0..cfg.n_blocks {
            x = dda::block_forward(g, x, bound, &format!("block.{i}"), &block_cfg, ctx)?;
        }

        let gamma = bound.tid("head.ln.g");
        let beta = bound.tid("head.ln.b");
        let normed = g.layer_norm(x, gamma, beta, 1e-5);
        let logits = g.linear(normed, bound.tid("head.w"), bound.tid("head.b"));
        let mask = match cfg.mask_activation {
            MaskActivation::Sigmoid => g.sigmoid(logits),
        };
        let mag_c = g.constant(noisy_mag.clone().into_dyn());
        let enhanced_mag = g.mul(mask, mag_c);
        Ok(GraphForward { mask, enhanced_mag, spec, noisy_mag })
    }

    /// Inference: returns the mask, the masked spectrogram, and the
    /// reconstructed waveform (same length as the input).
    pub fn forward(&self, store: &ParamStore, noisy: &[f64]) -> Result<EnhancementOutput> {
        let mut g = Graph::new();
        let bound = store.bind_frozen(&mut g);
        let fwd = self.forward_graph(&mut g, &bound, noisy, &mut TrainCtx::inference())?;
        let mask_arr = g
            .value(fwd.mask)
            .clone()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("mask is T×F");
        let mask = Mask::new(mask_arr)?;
        let enhanced_spectrogram = dsp::apply_mask(&fwd.spec, &mask)?;
        let enhanced_waveform = dsp::istft(&enhanced_spectrogram)?;
        Ok(EnhancementOutput { mask, enhanced_spectrogram, enhanced_waveform })
    }

    /// Full-utterance enhancement at original length — no slicing, any
    /// length from one analysis window upward.
    pub fn enhance_file(&self, store: &ParamStore, noisy: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(store, noisy)?.enhanced_waveform)
    }

    /// Training loss on top of a forward pass: mean smooth-L1 between
    /// enhanced and clean magnitudes, plus the optional waveform-domain
    /// term.
    pub fn loss_graph(&self, g: &mut Graph, fwd: &GraphForward, clean: &[f64]) -> Result<Tid> {
        let source_len =
            fwd.spec.source_length.ok_or_else(|| Error::InvalidInput("missing length".into()))?;
        if clean.len() != source_len {
            return Err(Error::Dimension(format!(
                "clean reference has {} samples, noisy input {}",
                clean.len(),
                source_len
            )));
        }
        let clean_spec = dsp::stft(clean, &self.config.stft)?;
        let clean_mag = g.constant(dsp::magnitude(&clean_spec).into_dyn());
        let spec_loss = g.smooth_l1_mean(fwd.enhanced_mag, clean_mag, self.config.loss_beta);
        let w = self.config.waveform_loss_weight;
        if w == 0.0 {
            return Ok(spec_loss);
        }
        let est = synthesize_waveform_graph(g, fwd.mask, &fwd.spec)?;
        let clean_c = g.constant(Arr::from_shape_vec(IxDyn(&[clean.len()]), clean.to_vec())
            .expect("1-D"));
        let wav_loss = g.smooth_l1_mean(est, clean_c, self.config.loss_beta);
        let scaled = g.scale(wav_loss, w);
        Ok(g.add(spec_loss, scaled))
    }
}

/// Mean smooth-L1 (Huber) distance between two same-shape matrices:
/// `0.5·d²/beta` for `|d| < beta`, else `|d| − beta/2`, averaged over all
/// entries.
pub fn smooth_l1(a: &Array2<f64>, b: &Array2<f64>, beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::InvalidInput("beta must be positive".into()));
    }
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    let mut acc = 0.0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        let d = (x - y).abs();
        acc += if d < beta { 0.5 * d * d / beta } else { d - 0.5 * beta };
    }
    Ok(acc / a.len() as f64)
}

/// Differentiable inverse transform of `mask ⊙ spec`: mirrors the
/// frequency-domain inverse exactly — inverse DFT of the Hermitian spectrum
/// with the Nyquist bin zeroed, synthesis windowing, overlap-add, and
/// window-energy normalization over the cropped region.
pub fn synthesize_waveform_graph(
    g: &mut Graph,
    mask: Tid,
    spec: &ComplexSpectrogram,
) -> Result<Tid> {
    let cfg = &spec.config;
    let source_len =
        spec.source_length.ok_or_else(|| Error::InvalidInput("missing length".into()))?;
    let (t, f) = (spec.n_frames(), spec.n_bins());
    if g.shape(mask) != [t, f] {
        return Err(Error::Dimension(format!(
            "mask {:?} does not match spectrogram ({t}, {f})",
            g.shape(mask)
        )));
    }
    let n = cfg.fft_size;
    let win = cfg.window_samples();
    let pad = cfg.win_length / 2;
    let padded_len = source_len + 2 * pad;

    let re_noisy = g.constant(spec.data.mapv(|c| c.re).into_dyn());
    let im_noisy = g.constant(spec.data.mapv(|c| c.im).into_dyn());
    let re = g.mul(mask, re_noisy);
    let im = g.mul(mask, im_noisy);

    // Windowed inverse-DFT bases: frame[i] = Σ_k re[k]·cw[k,i] + im[k]·sw[k,i]
    // with Hermitian doubling for k ≥ 1 and the Nyquist bin absent.
    let mut cw = Array2::<f64>::zeros((f, cfg.win_length));
    let mut sw = Array2::<f64>::zeros((f, cfg.win_length));
    for k in 0..f {
        let doubling = if k == 0 { 1.0 } else { 2.0 };
        for i in 0..cfg.win_length {
            let angle = 2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
            cw[[k, i]] = doubling * angle.cos() / n as f64 * win[i];
            sw[[k, i]] = -doubling * angle.sin() / n as f64 * win[i];
        }
    }
    let cw = g.constant(cw.into_dyn());
    let sw = g.constant(sw.into_dyn());
    let fc = g.matmul(re, cw);
    let fs = g.matmul(im, sw);
    let frames = g.add(fc, fs);

    let ola = g.overlap_add(frames, cfg.hop_length, padded_len);
    let cropped = g.slice_axis(ola, 0, pad, pad + source_len);

    let mut den = vec![0.0f64; padded_len];
    for frame in 0..t {
        let base = frame * cfg.hop_length;
        for (i, &w) in win.iter().enumerate() {
            if base + i < padded_len {
                den[base + i] += w * w;
            }
        }
    }
    let recip: Vec<f64> = den[pad..pad + source_len].iter().map(|&d| 1.0 / d).collect();
    let recip = g.constant(Arr::from_shape_vec(IxDyn(&[source_len]), recip).expect("1-D"));
    Ok(g.mul(cropped, recip))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            odconv: OdconvHyper {
                n_kernels: 2,
                c_in: 1,
                c_out: 2,
                k_t: 3,
                k_f: 3,
                stride: 1,
                reduction: 4,
                dynamic: true,
            },
            ssl: SslEncoderSpec { output_dim: 8, ..SslEncoderSpec::default() },
            model_dim: 16,
            n_blocks: 1,
            heads: 2,
            ff_expansion: 2,
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect()
    }

    #[test]
    fn pinned_input_shapes_and_output_length() {
        let model = Model::new(tiny_config()).unwrap();
        let store = model.init_params(1);
        let out = model.forward(&store, &noise(24000, 2)).unwrap();
        assert_eq!(out.mask.shape(), (151, 200));
        assert_eq!(out.enhanced_spectrogram.data.dim(), (151, 200));
        assert_eq!(out.enhanced_waveform.len(), 24000);
    }

    #[test]
    fn mask_bounded_and_enhancement_never_amplifies() {
        let model = Model::new(tiny_config()).unwrap();
        let store = model.init_params(3);
        let wave = noise(4000, 4);
        let out = model.forward(&store, &wave).unwrap();
        assert!(out.mask.data().iter().all(|&m| (0.0..=1.0).contains(&m)));
        let noisy = dsp::stft(&wave, &model.config.stft).unwrap();
        let noisy_mag = dsp::magnitude(&noisy);
        let enh_mag = dsp::magnitude(&out.enhanced_spectrogram);
        for (e, n) in enh_mag.iter().zip(noisy_mag.iter()) {
            assert!(*e <= *n + 1e-12);
        }
    }

    #[test]
    fn saturated_mask_head_passes_through_or_silences() {
        let model = Model::new(tiny_config()).unwrap();
        let mut store = model.init_params(5);
        store.get_mut("head.w").fill(0.0);
        store.get_mut("head.b").fill(40.0);
        let wave = dsp::bandlimited_noise(4001, &model.config.stft, 6);
        let out = model.forward(&store, &wave).unwrap();
        assert!(out.mask.data().iter().all(|&m| m == 1.0));
        let noisy = dsp::stft(&wave, &model.config.stft).unwrap();
        for (e, n) in out.enhanced_spectrogram.data.iter().zip(noisy.data.iter()) {
            assert!((e - n).norm() < 1e-12);
        }
        for (a, b) in out.enhanced_waveform.iter().zip(wave.iter()) {
            assert!((a - b).abs() < 1e-9, "identity mask must reconstruct the input");
        }

        store.get_mut("head.b").fill(-40.0);
        let silent = model.forward(&store, &wave).unwrap();
        let peak = silent.enhanced_waveform.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(peak < 1e-12, "fully closed mask must produce silence, peak {peak}");
    }

    #[test]
    fn too_short_input_is_rejected() {
        let model = Model::new(tiny_config()).unwrap();
        let store = model.init_params(7);
        assert!(matches!(
            model.forward(&store, &noise(399, 8)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn smooth_l1_pinned_values_and_boundary_smoothness() {
        let a = Array2::from_elem((4, 5), 2.0);
        assert_eq!(smooth_l1(&a, &a, 1.0).unwrap(), 0.0);
        let b = a.mapv(|v| v - 0.5);
        assert!((smooth_l1(&a, &b, 1.0).unwrap() - 0.125).abs() < 1e-15);
        let c = a.mapv(|v| v - 2.0);
        assert!((smooth_l1(&a, &c, 1.0).unwrap() - 1.5).abs() < 1e-15);

        let wrong = Array2::<f64>::zeros((4, 4));
        assert!(matches!(smooth_l1(&a, &wrong, 1.0), Err(Error::Dimension(_))));
        assert!(matches!(smooth_l1(&a, &b, 0.0), Err(Error::InvalidInput(_))));

        // Value and first derivative are continuous across |d| = beta.
        let beta = 1.0;
        let at = |d: f64| {
            let x = Array2::from_elem((1, 1), d);
            let z = Array2::zeros((1, 1));
            smooth_l1(&x, &z, beta).unwrap()
        };
        let h = 1e-7;
        assert!((at(beta + h) - at(beta - h)).abs() < 1e-6);
        let left = (at(beta) - at(beta - h)) / h;
        let right = (at(beta + h) - at(beta)) / h;
        assert!((left - 1.0).abs() < 1e-6 && (right - 1.0).abs() < 1e-6);
    }

    #[test]
    fn loss_graph_matches_standalone_evaluation() {
        let model = Model::new(tiny_config()).unwrap();
        let store = model.init_params(9);
        let noisy = noise(3000, 10);
        let clean = noise(3000, 11);
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let fwd = model.forward_graph(&mut g, &bound, &noisy, &mut TrainCtx::inference()).unwrap();
        let loss = model.loss_graph(&mut g, &fwd, &clean).unwrap();

        let enh = g
            .value(fwd.enhanced_mag)
            .clone()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
        let clean_mag = dsp::magnitude(&dsp::stft(&clean, &model.config.stft).unwrap());
        let expect = smooth_l1(&enh, &clean_mag, model.config.loss_beta).unwrap();
        assert!((g.value(loss)[[]] - expect).abs() < 1e-12);

        // Mismatched reference length is rejected.
        assert!(matches!(
            model.loss_graph(&mut g, &fwd, &noise(2999, 12)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn every_parameter_gets_a_finite_gradient_end_to_end() {
        let model = Model::new(tiny_config()).unwrap();
        let store = model.init_params(13);
        let noisy = noise(3000, 14);
        let clean = noise(3000, 15);
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let fwd = model.forward_graph(&mut g, &bound, &noisy, &mut TrainCtx::inference()).unwrap();
        let loss = model.loss_graph(&mut g, &fwd, &clean).unwrap();
        assert!(g.value(loss)[[]].is_finite());
        let grads = g.backward(loss);
        for (name, tid) in bound.iter() {
            let grad = grads.get(tid).unwrap_or_else(|| panic!("{name}: no gradient"));
            assert!(grad.iter().all(|v| v.is_finite()), "{name}: non-finite gradient");
            let max = grad.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            assert!(max > 0.0, "{name}: gradient identically zero");
        }
    }

    #[test]
    fn in_graph_synthesis_matches_the_reference_inverse() {
        let model = Model::new(tiny_config()).unwrap();
        let store = model.init_params(17);
        let wave = noise(4000, 18);
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let fwd = model.forward_graph(&mut g, &bound, &wave, &mut TrainCtx::inference()).unwrap();
        let est = synthesize_waveform_graph(&mut g, fwd.mask, &fwd.spec).unwrap();

        let mask_arr = g
            .value(fwd.mask)
            .clone()
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
        let mask = Mask::new(mask_arr).unwrap();
        let masked = dsp::apply_mask(&fwd.spec, &mask).unwrap();
        let reference = dsp::istft(&masked).unwrap();
        let got = g.value(est);
        assert_eq!(got.len(), reference.len());
        for (a, b) in got.iter().zip(reference.iter()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn waveform_loss_term_contributes_and_stays_differentiable() {
        let mut cfg = tiny_config();
        cfg.waveform_loss_weight = 0.5;
        let model = Model::new(cfg).unwrap();
        let store = model.init_params(19);
        let noisy = noise(2500, 20);
        let clean = noise(2500, 21);

        let run = |m: &Model| {
            let mut g = Graph::new();
            let bound = store.bind(&mut g);
            let fwd = m.forward_graph(&mut g, &bound, &noisy, &mut TrainCtx::inference()).unwrap();
            let loss = m.loss_graph(&mut g, &fwd, &clean).unwrap();
            let v = g.value(loss)[[]];
            let grads = g.backward(loss);
            let finite = bound
                .iter()
                .all(|(_, tid)| grads.get(tid).map_or(true, |ga| ga.iter().all(|x| x.is_finite())));
            (v, finite)
        };
        let (with_wave, finite) = run(&model);
        assert!(finite);
        let plain = Model::new(tiny_config()).unwrap();
        let (without, _) = run(&plain);
        assert!(with_wave > without, "waveform term must add a positive penalty");
    }

    #[test]
    fn enhance_file_preserves_arbitrary_lengths_deterministically() {
        let model = Model::new(tiny_config()).unwrap();
        let store = model.init_params(23);
        for len in [12345usize, 67200] {
            let wave = noise(len, len as u64);
            let a = model.enhance_file(&store, &wave).unwrap();
            let b = model.enhance_file(&store, &wave).unwrap();
            assert_eq!(a.len(), len);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn spot_check_model_gradients_against_finite_differences() {
        use crate::testkit::{self, GradCheckSpec};
        use std::collections::BTreeMap;

        let model = Model::new(tiny_config()).unwrap();
        let store = model.init_params(25);
        let noisy = noise(700, 26);
        let clean = noise(700, 27);

        let eval = |s: &ParamStore| {
            let mut g = Graph::new();
            let bound = s.bind(&mut g);
            let fwd =
                model.forward_graph(&mut g, &bound, &noisy, &mut TrainCtx::inference()).unwrap();
            let loss = model.loss_graph(&mut g, &fwd, &clean).unwrap();
            g.value(loss)[[]]
        };

        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let fwd = model.forward_graph(&mut g, &bound, &noisy, &mut TrainCtx::inference()).unwrap();
        let loss = model.loss_graph(&mut g, &fwd, &clean).unwrap();
        let grads = g.backward(loss);
        let mut analytic = BTreeMap::new();
        for (name, tid) in bound.iter() {
            analytic.insert(
                name.to_string(),
                grads.get(tid).cloned().unwrap_or_else(|| Arr::zeros(g.value(tid).raw_dim())),
            );
        }
        let spec = GradCheckSpec {
            param_filter: vec![
                "head.b".into(),
                "fuse.b".into(),
                "ssl.layer_logits".into(),
                "block.0.fa.w1".into(),
                "od1.attn.b_w".into(),
                "branch.b".into(),
            ],
            ..GradCheckSpec::default()
        };
        testkit::check_param_grads(&store, &spec, eval, &analytic).unwrap();
    }

    #[test]
    fn branch_modes_share_the_interface() {
        for branch in [BranchMode::Both, BranchMode::SslOnly, BranchMode::SpecOnly] {
            let cfg = ModelConfig { branch, ..tiny_config() };
            let model = Model::new(cfg).unwrap();
            let store = model.init_params(29);
            assert_eq!(
                store.contains("od1.kernels"),
                !matches!(branch, BranchMode::SslOnly),
                "{branch:?}"
            );
            assert_eq!(
                store.contains("ssl.layer_logits"),
                !matches!(branch, BranchMode::SpecOnly),
                "{branch:?}"
            );
            let out = model.forward(&store, &noise(2000, 30)).unwrap();
            assert_eq!(out.mask.shape(), (13, 200));
            assert_eq!(out.enhanced_waveform.len(), 2000);
        }
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        let mut cfg = tiny_config();
        cfg.heads = 3;
        assert!(matches!(Model::new(cfg), Err(Error::Config(_))));
        let mut cfg = tiny_config();
        cfg.n_blocks = 0;
        assert!(matches!(Model::new(cfg), Err(Error::Config(_))));
        let mut cfg = tiny_config();
        cfg.loss_beta = 0.0;
        assert!(matches!(Model::new(cfg), Err(Error::Config(_))));
    }
}
