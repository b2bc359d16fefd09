//! Shared test oracles and fixtures.
//!
//! Everything here is an *independent* implementation path: the brute-force
//! evaluators use literal nested loops and share no kernels with the modules
//! they check, so agreement between the two is meaningful evidence. All
//! fixtures are deterministic under their seed.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayD};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::autograd::Arr;
use crate::error::{Error, Result};

/// Settings for finite-difference gradient verification.
#[derive(Clone, Debug)]
pub struct GradCheckSpec {
    /// Central-difference step.
    pub step: f64,
    /// Maximum allowed relative error per coordinate.
    pub tolerance: f64,
    /// Restrict the check to parameter names containing any of these
    /// substrings; empty means check everything.
    pub param_filter: Vec<String>,
}

impl Default for GradCheckSpec {
    fn default() -> Self {
        Self { step: 1e-3, tolerance: 1e-4, param_filter: Vec::new() }
    }
}

impl GradCheckSpec {
    pub fn selects(&self, name: &str) -> bool {
        self.param_filter.is_empty() || self.param_filter.iter().any(|f| name.contains(f))
    }
}

/// Central finite differences of a scalar function, coordinate by coordinate.
pub fn finite_diff_grad(
    f: &mut dyn FnMut(&Arr) -> f64,
    point: &Arr,
    step: f64,
) -> Result<Arr> {
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut grad = ArrayD::zeros(point.raw_dim());
    let mut work = point.clone();
    let indices: Vec<_> = point.indexed_iter().map(|(ix, _)| ix).collect();
    for ix in indices {
        let orig = work[&ix];
        work[&ix] = orig + step;
        let fp = f(&work);
        work[&ix] = orig - step;
        let fm = f(&work);
        work[&ix] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Oracle(format!(
                "non-finite function value near coordinate {ix:?}: f+={fp}, f-={fm}"
            )));
        }
        grad[&ix] = (fp - fm) / (2.0 * step);
    }
    Ok(grad)
}

/// Verify analytic parameter gradients against central finite differences.
///
/// `eval` must recompute the scalar objective from a (perturbed) parameter
/// store; `analytic` maps parameter names to the gradients under test.
/// Parameters not selected by `spec.param_filter` are skipped.
pub fn check_param_grads(
    store: &crate::params::ParamStore,
    spec: &GradCheckSpec,
    mut eval: impl FnMut(&crate::params::ParamStore) -> f64,
    analytic: &std::collections::BTreeMap<String, Arr>,
) -> Result<()> {
    let mut work = store.clone();
    for (name, grad) in analytic {
        if !spec.selects(name) {
            continue;
        }
        let indices: Vec<_> = grad.indexed_iter().map(|(ix, _)| ix).collect();
        for ix in indices {
            let orig = work.get(name)[&ix];
            work.get_mut(name)[&ix] = orig + spec.step;
            let fp = eval(&work);
            work.get_mut(name)[&ix] = orig - spec.step;
            let fm = eval(&work);
            work.get_mut(name)[&ix] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::Oracle(format!(
                    "non-finite objective while perturbing {name}{ix:?}"
                )));
            }
            let numeric = (fp - fm) / (2.0 * spec.step);
            let a = grad[&ix];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            if rel > spec.tolerance {
                return Err(Error::Oracle(format!(
                    "gradient mismatch at {name}{ix:?}: analytic {a:.3e}, numeric {numeric:.3e}, rel {rel:.3e}"
                )));
            }
        }
    }
    Ok(())
}

/// Largest per-coordinate relative error between two gradients.
pub fn max_relative_error(analytic: &Arr, numeric: &Arr) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shape mismatch");
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Attention tensors consumed by [`bruteforce_eq1`], one row per kernel.
pub struct BruteAttention {
    /// `(n, k_t)` kernel-temporal attention.
    pub alpha_s: Array2<f64>,
    /// `(n, k_f)` kernel-frequency attention.
    pub alpha_c: Array2<f64>,
    /// `(n, c_out)` output-channel attention.
    pub alpha_f: Array2<f64>,
    /// `(n,)` kernel-selection attention.
    pub alpha_w: Array1<f64>,
}

/// Literal nested-loop evaluation of the dynamic-convolution rule: attention
/// weights multiply each kernel along every axis, the weighted kernels are
/// summed, and the result is convolved with the input (zero padding).
///
/// Intended only for tiny shapes (≤ 10⁴ multiply-adds); the trusted oracle
/// for the `odconv` module.
pub fn bruteforce_eq1(
    kernels: &ArrayD<f64>, // (n, c_out, c_in, k_t, k_f)
    attn: &BruteAttention,
    input: &ArrayD<f64>, // (c_in, t, f)
    stride: usize,
    pad: (usize, usize),
) -> Result<ArrayD<f64>> {
    let ks = kernels.shape();
    if ks.len() != 5 {
        return Err(Error::Dimension(format!("kernel bank must be rank 5, got {:?}", ks)));
    }
    let (n, c_out, c_in, k_t, k_f) = (ks[0], ks[1], ks[2], ks[3], ks[4]);
    let is = input.shape();
    if is.len() != 3 || is[0] != c_in {
        return Err(Error::Dimension(format!(
            "input {:?} incompatible with kernels {:?}",
            is, ks
        )));
    }
    if attn.alpha_s.shape() != [n, k_t]
        || attn.alpha_c.shape() != [n, k_f]
        || attn.alpha_f.shape() != [n, c_out]
        || attn.alpha_w.len() != n
    {
        return Err(Error::Dimension("attention shapes do not match kernel bank".into()));
    }
    let (t_in, f_in) = (is[1], is[2]);

    // Weighted sum of kernels, element by element.
    let mut agg: ArrayD<f64> = ArrayD::zeros(ndarray::IxDyn(&[c_out, c_in, k_t, k_f]));
    for i in 0..n {
        for o in 0..c_out {
            for c in 0..c_in {
                for p in 0..k_t {
                    for q in 0..k_f {
                        agg[[o, c, p, q]] += attn.alpha_w[i]
                            * attn.alpha_f[[i, o]]
                            * attn.alpha_c[[i, q]]
                            * attn.alpha_s[[i, p]]
                            * kernels[[i, o, c, p, q]];
                    }
                }
            }
        }
    }

    // Plain convolution of the aggregated kernel with the input.
    let t_out = (t_in + 2 * pad.0 - k_t) / stride + 1;
    let f_out = (f_in + 2 * pad.1 - k_f) / stride + 1;
    let mut out: ArrayD<f64> = ArrayD::zeros(ndarray::IxDyn(&[c_out, t_out, f_out]));
    for o in 0..c_out {
        for ot in 0..t_out {
            for of in 0..f_out {
                let mut acc = 0.0;
                for c in 0..c_in {
                    for p in 0..k_t {
                        for q in 0..k_f {
                            let it = (ot * stride + p) as isize - pad.0 as isize;
                            let fi = (of * stride + q) as isize - pad.1 as isize;
                            if it < 0 || it >= t_in as isize || fi < 0 || fi >= f_in as isize {
                                continue;
                            }
                            acc += agg[[o, c, p, q]] * input[[c, it as usize, fi as usize]];
                        }
                    }
                }
                out[[o, ot, of]] = acc;
            }
        }
    }
    Ok(out)
}

/// Hand evaluation of the frequency-attention rule: sigmoid of the two pooled
/// statistics passed through their weight matrices, written as explicit sums.
pub fn eq2_attention(x: &Array2<f64>, w1: &Array2<f64>, w2: &Array2<f64>) -> Array1<f64> {
    let (t, f) = x.dim();
    assert!(t >= 1);
    assert_eq!(w1.dim(), (f, f));
    assert_eq!(w2.dim(), (f, f));
    let mut avg = vec![0.0; f];
    let mut mx = vec![f64::NEG_INFINITY; f];
    for col in 0..f {
        for row in 0..t {
            avg[col] += x[[row, col]];
            mx[col] = mx[col].max(x[[row, col]]);
        }
        avg[col] /= t as f64;
    }
    let mut u = Array1::zeros(f);
    for d in 0..f {
        let mut z = 0.0;
        for j in 0..f {
            z += w1[[j, d]] * avg[j] + w2[[j, d]] * mx[j];
        }
        u[d] = 1.0 / (1.0 + (-z).exp());
    }
    u
}

/// Direct DFT of one windowed frame, literal O(N²) sum. Oracle for the
/// transform front end.
pub fn naive_windowed_dft(frame: &[f64], window: &[f64]) -> Vec<Complex64> {
    assert_eq!(frame.len(), window.len());
    let n = frame.len();
    (0..n)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (i, (&x, &w)) in frame.iter().zip(window.iter()).enumerate() {
                let ang = -2.0 * PI * (k * i) as f64 / n as f64;
                acc += Complex64::new(ang.cos(), ang.sin()) * (x * w);
            }
            acc
        })
        .collect()
}

/// One generated utterance pair.
pub struct MiniPair {
    pub id: String,
    pub clean_path: PathBuf,
    pub noisy_path: PathBuf,
    pub snr_db: f64,
}

/// Generate the 10-pair synthetic mini corpus under `dir/clean` and
/// `dir/noisy`.
///
/// Clean signals are sums of 2–4 harmonics of a random fundamental with
/// random phases and a fade envelope; noisy signals add low-pass-shaped noise
/// scaled to exact SNRs cycling through {0, 5, 10, 15} dB. Lengths span
/// 1.2–4.0 s. Output: mono 16 kHz 16-bit PCM, deterministic under `seed`.
pub fn make_mini_corpus(dir: &Path, seed: u64) -> Result<Vec<MiniPair>> {
    let clean_dir = dir.join("clean");
    let noisy_dir = dir.join("noisy");
    std::fs::create_dir_all(&clean_dir)?;
    std::fs::create_dir_all(&noisy_dir)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let sr = 16_000usize;
    let snr_grid = [0.0, 5.0, 10.0, 15.0];
    let mut pairs = Vec::new();

    for idx in 0..10usize {
        let snr_db = snr_grid[idx % snr_grid.len()];
        let secs = rng.gen_range(1.2..4.0);
        let len = (secs * sr as f64) as usize;
        let f0 = rng.gen_range(110.0..280.0);
        let n_harm = rng.gen_range(2..=4usize);

        let mut clean = vec![0.0f64; len];
        for h in 1..=n_harm {
            let amp = 0.3 / (h as f64);
            let phase = rng.gen_range(0.0..2.0 * PI);
            let freq = f0 * h as f64;
            for (i, s) in clean.iter_mut().enumerate() {
                *s += amp * (2.0 * PI * freq * i as f64 / sr as f64 + phase).sin();
            }
        }
        // Fade the first/last 50 ms so the tone is speech-like (no clicks).
        let fade = sr / 20;
        for i in 0..fade.min(len) {
            let g = i as f64 / fade as f64;
            clean[i] *= g;
            clean[len - 1 - i] *= g;
        }

        // Low-pass shaped noise: one-pole filtered white noise.
        let mut noise = vec![0.0f64; len];
        let mut state = 0.0;
        for n in noise.iter_mut() {
            let white: f64 = rng.gen_range(-1.0..1.0);
            state = 0.9 * state + 0.1 * white;
            *n = state;
        }

        // Scale noise for the exact target SNR.
        let p_clean: f64 = clean.iter().map(|v| v * v).sum::<f64>() / len as f64;
        let p_noise: f64 = noise.iter().map(|v| v * v).sum::<f64>() / len as f64;
        let gain = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
        let noisy: Vec<f64> = clean.iter().zip(noise.iter()).map(|(&c, &n)| c + gain * n).collect();

        // Joint peak normalization preserves the SNR and prevents clipping.
        let peak = noisy
            .iter()
            .chain(clean.iter())
            .map(|v| v.abs())
            .fold(0.0f64, f64::max)
            .max(1e-9);
        let norm = if peak > 0.95 { 0.95 / peak } else { 1.0 };

        let id = format!("pair_{idx:02}");
        let clean_path = clean_dir.join(format!("{id}.wav"));
        let noisy_path = noisy_dir.join(format!("{id}.wav"));
        write_wav_16k(&clean_path, &clean.iter().map(|v| v * norm).collect::<Vec<_>>())?;
        write_wav_16k(&noisy_path, &noisy.iter().map(|v| v * norm).collect::<Vec<_>>())?;
        pairs.push(MiniPair { id, clean_path, noisy_path, snr_db });
    }
    Ok(pairs)
}

/// Write a mono 16 kHz 16-bit PCM file.
pub fn write_wav_16k(path: &Path, samples: &[f64]) -> Result<()> {
    crate::data::write_wav_16k(path, samples)
}
