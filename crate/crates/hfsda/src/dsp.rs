//! STFT analysis/synthesis and mask application.
//!
//! Framing follows the model's fixed recipe: 16 kHz audio, 400-sample
//! (25 ms) Hamming window, 400-point FFT, 160-sample (10 ms) hop, reflect
//! center padding. The Nyquist bin is dropped so spectrograms carry 200
//! frequency bins; it is reinserted as zero on synthesis. With center
//! padding the frame count obeys `T = 1 + floor(len / hop)` for every input
//! length.

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Window shape used for analysis and synthesis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Hamming,
}

/// Policy for reducing the one-sided bin count to a power-of-two-friendly
/// width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinPolicy {
    /// Keep bins `0..fft_size/2`, discarding the Nyquist bin.
    DropNyquist,
}

/// Framing parameters for the transform pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub sample_rate_hz: u32,
    pub win_length: usize,
    pub fft_size: usize,
    pub hop_length: usize,
    pub window: WindowKind,
    pub center_pad: bool,
    pub bin_policy: BinPolicy,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            win_length: 400,
            fft_size: 400,
            hop_length: 160,
            window: WindowKind::Hamming,
            center_pad: true,
            bin_policy: BinPolicy::DropNyquist,
        }
    }
}

impl StftConfig {
    /// Retained bin count (half the FFT size under the drop-Nyquist policy).
    pub fn n_bins(&self) -> usize {
        match self.bin_policy {
            BinPolicy::DropNyquist => self.fft_size / 2,
        }
    }

    /// Frame count for an input of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        assert!(self.center_pad, "frame law assumes center padding");
        1 + len / self.hop_length
    }

    pub fn validate(&self) -> Result<()> {
        if self.win_length == 0 || self.hop_length == 0 || self.fft_size == 0 {
            return Err(Error::Config("window, hop and FFT size must be positive".into()));
        }
        if self.win_length > self.fft_size {
            return Err(Error::Config(format!(
                "win_length {} exceeds fft_size {}",
                self.win_length, self.fft_size
            )));
        }
        if self.hop_length > self.win_length {
            return Err(Error::Config(format!(
                "hop_length {} exceeds win_length {} (overlap-add needs overlap)",
                self.hop_length, self.win_length
            )));
        }
        if self.fft_size % 2 != 0 {
            return Err(Error::Config("fft_size must be even".into()));
        }
        Ok(())
    }

    /// Analysis/synthesis window of `win_length` samples.
    pub fn window_samples(&self) -> Vec<f64> {
        match self.window {
            WindowKind::Hamming => hamming(self.win_length),
        }
    }
}

/// Time-frequency representation: `T` frames by `F` retained bins, plus the
/// framing metadata needed to invert it.
#[derive(Clone, Debug)]
pub struct ComplexSpectrogram {
    pub data: Array2<Complex64>,
    pub config: StftConfig,
    /// Original waveform length; required for inversion.
    pub source_length: Option<usize>,
}

impl ComplexSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.data.ncols()
    }
}

/// Bounded real-valued magnitude mask.
#[derive(Clone, Debug)]
pub struct Mask {
    data: Array2<f64>,
}

impl Mask {
    /// Validates every entry into `[0, 1]`.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        for &v in data.iter() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!(
                    "mask entries must lie in [0, 1], found {v}"
                )));
            }
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }
}

/// Periodic Hamming window (the DFT-analysis variant: the cosine period is
/// `n`, not `n - 1`, so the window spectrum is exactly three lines and
/// on-bin sinusoids leak into no other bins).
pub fn hamming(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Reflect-pad `pad` samples on both ends (mirror excluding the edge sample).
/// Inputs shorter than `pad + 1` fall back to zero padding.
fn center_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    for i in 0..pad {
        let k = pad - i;
        out.push(if k < n { x[k] } else { 0.0 });
    }
    out.extend_from_slice(x);
    for i in 0..pad {
        let k = n as isize - 2 - i as isize;
        out.push(if k >= 0 { x[k as usize] } else { 0.0 });
    }
    out
}

/// Forward transform.
pub fn stft(waveform: &[f64], config: &StftConfig) -> Result<ComplexSpectrogram> {
    config.validate()?;
    if waveform.is_empty() {
        return Err(Error::InvalidInput("empty waveform".into()));
    }
    if waveform.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("waveform contains non-finite samples".into()));
    }
    let win = config.window_samples();
    let pad = config.win_length / 2;
    let padded = if config.center_pad { center_pad(waveform, pad) } else { waveform.to_vec() };
    let t_frames = config.n_frames(waveform.len());
    let n_bins = config.n_bins();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(config.fft_size);
    let mut data = Array2::zeros((t_frames, n_bins));
    let mut buf = vec![Complex64::new(0.0, 0.0); config.fft_size];

    for t in 0..t_frames {
        let start = t * config.hop_length;
        for (i, b) in buf.iter_mut().enumerate() {
            let sample = if i < config.win_length {
                padded.get(start + i).copied().unwrap_or(0.0) * win[i]
            } else {
                0.0
            };
            *b = Complex64::new(sample, 0.0);
        }
        fft.process(&mut buf);
        for k in 0..n_bins {
            data[[t, k]] = buf[k];
        }
    }

    Ok(ComplexSpectrogram { data, config: *config, source_length: Some(waveform.len()) })
}

/// Inverse transform via weighted overlap-add with window-power
/// normalization; reconstructs the analyzed waveform exactly up to the
/// discarded Nyquist bin.
pub fn istft(spec: &ComplexSpectrogram) -> Result<Vec<f64>> {
    let config = &spec.config;
    config.validate()?;
    let source_length = spec
        .source_length
        .ok_or_else(|| Error::InvalidInput("spectrogram carries no source_length".into()))?;
    let expect_t = config.n_frames(source_length);
    if spec.n_frames() != expect_t || spec.n_bins() != config.n_bins() {
        return Err(Error::Dimension(format!(
            "spectrogram shape ({}, {}) does not match config expectation ({}, {})",
            spec.n_frames(),
            spec.n_bins(),
            expect_t,
            config.n_bins()
        )));
    }

    let win = config.window_samples();
    let pad = config.win_length / 2;
    let n = config.fft_size;
    let n_bins = config.n_bins();
    let padded_len = source_length + 2 * pad;

    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(n);
    let mut num = vec![0.0f64; padded_len];
    let mut den = vec![0.0f64; padded_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];

    for t in 0..spec.n_frames() {
        // Rebuild the full spectrum: retained bins, zero Nyquist, Hermitian
        // upper half.
        for k in 0..n_bins {
            buf[k] = spec.data[[t, k]];
        }
        buf[n_bins] = Complex64::new(0.0, 0.0);
        for k in 1..n_bins {
            buf[n - k] = spec.data[[t, k]].conj();
        }
        ifft.process(&mut buf);

        let start = t * config.hop_length;
        for i in 0..config.win_length {
            let idx = start + i;
            if idx >= padded_len {
                break;
            }
            let sample = buf[i].re / n as f64;
            num[idx] += sample * win[i];
            den[idx] += win[i] * win[i];
        }
    }

    let mut out = Vec::with_capacity(source_length);
    for i in pad..pad + source_length {
        debug_assert!(den[i] > 0.0, "overlap-add must cover the cropped region");
        out.push(num[i] / den[i]);
    }
    Ok(out)
}

/// Multiply each complex bin by its real mask entry (magnitude scaled, phase
/// untouched).
pub fn apply_mask(spec: &ComplexSpectrogram, mask: &Mask) -> Result<ComplexSpectrogram> {
    if spec.data.dim() != mask.shape() {
        return Err(Error::Dimension(format!(
            "spectrogram {:?} vs mask {:?}",
            spec.data.dim(),
            mask.shape()
        )));
    }
    let mut out = spec.clone();
    ndarray::Zip::from(&mut out.data)
        .and(mask.data())
        .for_each(|s, &m| *s *= m);
    Ok(out)
}

/// Elementwise complex modulus.
pub fn magnitude(spec: &ComplexSpectrogram) -> Array2<f64> {
    spec.data.mapv(|c| c.norm())
}

/// Random band-limited test signal: a sum of zero-phase cosines at exact
/// analysis-bin frequencies below Nyquist.
///
/// Zero-phase cosines are even around sample 0, so the left reflect pad is an
/// exact continuation; when `(len - 1)` is a multiple of `fft_size / 2` they
/// are also even around the last sample, making both pads exact. Every
/// analysis frame then contains only exact-bin components, the dropped
/// Nyquist bin carries no energy, and the transform round trip is exact to
/// machine precision. Broadband (white) signals are lossy by construction —
/// they hold energy in the discarded bin.
pub fn bandlimited_noise(len: usize, config: &StftConfig, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let max_bin = config.n_bins() - 2;
    let mut out = vec![0.0f64; len];
    for _ in 0..60 {
        let k = rng.gen_range(1..=max_bin);
        let amp = rng.gen_range(0.01..0.2);
        let w = 2.0 * std::f64::consts::PI * k as f64 / config.fft_size as f64;
        for (i, s) in out.iter_mut().enumerate() {
            *s += amp * (w * i as f64).cos();
        }
    }
    out
}
