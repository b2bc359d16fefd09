//! Objective quality and intelligibility measures.
//!
//! Native implementations of STOI (short-time objective intelligibility),
//! scale-invariant SDR, and segmental SNR, plus a subprocess hook for an
//! external PESQ tool. STOI follows the standard construction: resample to
//! 10 kHz, drop frames more than 40 dB below the loudest reference frame,
//! analyze 256-sample Hann frames (512-point FFT, 128 hop), group bins into
//! 15 one-third-octave bands from 150 Hz, and average the clipped, normalized
//! correlation between band envelopes over 30-frame segments.

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::resample::resample;

// ----- SI-SDR -----

/// Cap applied when the error term vanishes (perfect reconstruction).
pub const SI_SDR_CAP_DB: f64 = 100.0;

/// Scale-invariant signal-to-distortion ratio, in dB, capped at
/// [`SI_SDR_CAP_DB`].
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::Dimension(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    let ref_energy: f64 = reference.iter().map(|v| v * v).sum();
    if ref_energy == 0.0 {
        return Err(Error::InvalidInput("reference signal is identically zero".into()));
    }
    let dot: f64 = estimate.iter().zip(reference).map(|(e, r)| e * r).sum();
    let alpha = dot / ref_energy;
    let mut target = 0.0f64;
    let mut error = 0.0f64;
    for (e, r) in estimate.iter().zip(reference) {
        let t = alpha * r;
        target += t * t;
        error += (e - t) * (e - t);
    }
    if error == 0.0 || 10.0 * (target / error).log10() > SI_SDR_CAP_DB {
        return Ok(SI_SDR_CAP_DB);
    }
    Ok(10.0 * (target / error).log10())
}

// ----- segmental SNR -----

/// 30 ms at 16 kHz.
pub const SEG_SNR_FRAME: usize = 480;
pub const SEG_SNR_FLOOR_DB: f64 = -10.0;
pub const SEG_SNR_CEIL_DB: f64 = 35.0;

/// Mean of per-frame `10·log10(Σest² / Σ(est−ref)²)`, each frame clamped to
/// [−10, 35] dB. Non-overlapping 30 ms frames; a signal shorter than one
/// frame is scored as a single frame.
pub fn seg_snr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::Dimension(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    if estimate.is_empty() {
        return Err(Error::InvalidInput("cannot score empty signals".into()));
    }
    let frame = SEG_SNR_FRAME.min(estimate.len());
    let n_frames = estimate.len() / frame;
    let mut acc = 0.0;
    for f in 0..n_frames {
        let span = f * frame..(f + 1) * frame;
        let sig: f64 = estimate[span.clone()].iter().map(|v| v * v).sum();
        let err: f64 = estimate[span.clone()]
            .iter()
            .zip(&reference[span])
            .map(|(e, r)| (e - r) * (e - r))
            .sum();
        let snr = if err == 0.0 {
            SEG_SNR_CEIL_DB
        } else if sig == 0.0 {
            SEG_SNR_FLOOR_DB
        } else {
            (10.0 * (sig / err).log10()).clamp(SEG_SNR_FLOOR_DB, SEG_SNR_CEIL_DB)
        };
        acc += snr;
    }
    Ok(acc / n_frames as f64)
}

// ----- STOI -----

const STOI_SR: u32 = 10_000;
const STOI_FRAME: usize = 256;
const STOI_HOP: usize = 128;
const STOI_NFFT: usize = 512;
const STOI_BANDS: usize = 15;
const STOI_BAND_START_HZ: f64 = 150.0;
const STOI_SEGMENT: usize = 30;
const STOI_DYN_RANGE_DB: f64 = 40.0;
const STOI_CLIP_DB: f64 = -15.0;

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Windowed frames on the STOI grid.
fn frames_of(x: &[f64], window: &[f64]) -> Vec<Vec<f64>> {
    if x.len() < STOI_FRAME {
        return Vec::new();
    }
    let n = (x.len() - STOI_FRAME) / STOI_HOP + 1;
    (0..n)
        .map(|t| {
            let base = t * STOI_HOP;
            (0..STOI_FRAME).map(|i| x[base + i] * window[i]).collect()
        })
        .collect()
}

/// One-third-octave band energies, `(n_frames × STOI_BANDS)`.
fn band_envelopes(frames: &[Vec<f64>]) -> Vec<[f64; STOI_BANDS]> {
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(STOI_NFFT);
    let df = STOI_SR as f64 / STOI_NFFT as f64;
    // Band k spans [150·2^(k/3 − 1/6), 150·2^(k/3 + 1/6)).
    let bins: Vec<(usize, usize)> = (0..STOI_BANDS)
        .map(|k| {
            let center = STOI_BAND_START_HZ * 2f64.powf(k as f64 / 3.0);
            let lo = center * 2f64.powf(-1.0 / 6.0);
            let hi = center * 2f64.powf(1.0 / 6.0);
            (((lo / df).ceil() as usize).max(1), ((hi / df).ceil() as usize).min(STOI_NFFT / 2))
        })
        .collect();

    frames
        .iter()
        .map(|frame| {
            let mut buf: Vec<Complex64> =
                frame.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            buf.resize(STOI_NFFT, Complex64::new(0.0, 0.0));
            fft.process(&mut buf);
            let mut bands = [0.0f64; STOI_BANDS];
            for (k, &(lo, hi)) in bins.iter().enumerate() {
                let mut e = 0.0;
                for bin in lo..hi {
                    e += buf[bin].norm_sqr();
                }
                bands[k] = e.sqrt();
            }
            bands
        })
        .collect()
}

/// Short-time objective intelligibility of `estimate` against the clean
/// `reference`, both at `sample_rate_hz`. Returns a score that is ~1 for
/// perfect intelligibility. Signals must leave at least 30 active frames
/// (≈ 384 ms of speech) after silence removal.
pub fn stoi(estimate: &[f64], reference: &[f64], sample_rate_hz: u32) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::Dimension(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    let est = resample(estimate, sample_rate_hz, STOI_SR);
    let refr = resample(reference, sample_rate_hz, STOI_SR);

    let window = hann(STOI_FRAME);
    let est_frames = frames_of(&est, &window);
    let ref_frames = frames_of(&refr, &window);

    // Voice activity from the reference: keep frames within 40 dB of the
    // loudest frame.
    let energies: Vec<f64> = ref_frames
        .iter()
        .map(|f| f.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let max_e = energies.iter().cloned().fold(0.0f64, f64::max);
    if max_e == 0.0 {
        return Err(Error::InvalidInput("reference contains no signal".into()));
    }
    let threshold = max_e * 10f64.powf(-STOI_DYN_RANGE_DB / 20.0);
    let kept: Vec<usize> =
        (0..ref_frames.len()).filter(|&i| energies[i] > threshold).collect();
    if kept.len() < STOI_SEGMENT {
        return Err(Error::InvalidInput(format!(
            "only {} active frames after silence removal; need at least {STOI_SEGMENT} \
             (≈384 ms of speech)",
            kept.len()
        )));
    }
    let est_kept: Vec<Vec<f64>> = kept.iter().map(|&i| est_frames[i].clone()).collect();
    let ref_kept: Vec<Vec<f64>> = kept.iter().map(|&i| ref_frames[i].clone()).collect();

    let x = band_envelopes(&ref_kept);
    let y = band_envelopes(&est_kept);

    let clip = 10f64.powf(-STOI_CLIP_DB / 20.0); // 1 + 10^(β/20) with β = −15
    let mut acc = 0.0;
    let mut count = 0usize;
    for m in STOI_SEGMENT..=x.len() {
        let seg = m - STOI_SEGMENT..m;
        for band in 0..STOI_BANDS {
            let xs: Vec<f64> = seg.clone().map(|t| x[t][band]).collect();
            let ys: Vec<f64> = seg.clone().map(|t| y[t][band]).collect();
            let xn = xs.iter().map(|v| v * v).sum::<f64>().sqrt();
            let yn = ys.iter().map(|v| v * v).sum::<f64>().sqrt();
            let alpha = if yn > 0.0 { xn / yn } else { 0.0 };
            let clipped: Vec<f64> = xs
                .iter()
                .zip(&ys)
                .map(|(&xv, &yv)| (alpha * yv).min((1.0 + clip) * xv))
                .collect();

            let mx = xs.iter().sum::<f64>() / xs.len() as f64;
            let my = clipped.iter().sum::<f64>() / clipped.len() as f64;
            let mut dot = 0.0;
            let mut nx = 0.0;
            let mut ny = 0.0;
            for (xv, yv) in xs.iter().zip(&clipped) {
                let (a, b) = (xv - mx, yv - my);
                dot += a * b;
                nx += a * a;
                ny += b * b;
            }
            let denom = (nx * ny).sqrt();
            if denom > 1e-12 {
                acc += dot / denom;
            }
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

// ----- external PESQ hook -----

/// Run an external PESQ tool on a reference/estimate file pair. `tool_cmd`
/// is split on whitespace; the reference and estimate paths are appended as
/// the final two arguments. The score is the last floating-point token on
/// stdout. Any failure (missing binary, nonzero exit, no parsable score)
/// comes back as a warning string; scoring continues without the field.
pub fn external_pesq(
    estimate: &Path,
    reference: &Path,
    tool_cmd: &str,
) -> std::result::Result<f64, String> {
    let mut parts = tool_cmd.split_whitespace();
    let program = parts.next().ok_or_else(|| "empty PESQ command".to_string())?;
    let output = std::process::Command::new(program)
        .args(parts)
        .arg(reference)
        .arg(estimate)
        .output()
        .map_err(|e| format!("cannot run '{program}': {e}"))?;
    if !output.status.success() {
        return Err(format!("'{program}' exited with {}", output.status));
    }
    let stdout = String::from_utf8_lossy(&output.stdout);
    stdout
        .split(|c: char| c.is_whitespace() || c == '=' || c == ',')
        .filter_map(|tok| tok.parse::<f64>().ok())
        .next_back()
        .ok_or_else(|| format!("no numeric score in '{program}' output"))
}

// ----- report -----

/// Scores for one utterance; optional fields come from external tools.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FileScores {
    pub stoi: f64,
    pub si_sdr: f64,
    pub seg_snr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pesq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csig: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cbak: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covl: Option<f64>,
}

/// Corpus means; optional fields are averaged only over files where they
/// are present.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MeanScores {
    pub stoi: f64,
    pub si_sdr: f64,
    pub seg_snr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pesq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csig: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cbak: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covl: Option<f64>,
}

/// Evaluation result over a corpus.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScoreReport {
    pub per_file: BTreeMap<String, FileScores>,
    pub corpus_mean: MeanScores,
}

impl ScoreReport {
    pub fn new(per_file: BTreeMap<String, FileScores>) -> Self {
        let n = per_file.len().max(1) as f64;
        let mean_of = |pick: fn(&FileScores) -> Option<f64>| {
            let vals: Vec<f64> = per_file.values().filter_map(pick).collect();
            if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        };
        let corpus_mean = MeanScores {
            stoi: per_file.values().map(|s| s.stoi).sum::<f64>() / n,
            si_sdr: per_file.values().map(|s| s.si_sdr).sum::<f64>() / n,
            seg_snr: per_file.values().map(|s| s.seg_snr).sum::<f64>() / n,
            pesq: mean_of(|s| s.pesq),
            csig: mean_of(|s| s.csig),
            cbak: mean_of(|s| s.cbak),
            covl: mean_of(|s| s.covl),
        };
        Self { per_file, corpus_mean }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    /// Harmonic tone stack with a slow amplitude modulation — enough
    /// band-envelope structure for intelligibility scoring.
    fn speech_like(len: usize, sr: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let f0 = 120.0;
        let phases: Vec<f64> =
            (0..18).map(|_| rng.gen_range(0.0..2.0 * std::f64::consts::PI)).collect();
        (0..len)
            .map(|i| {
                let t = i as f64 / sr;
                let env = 0.55 + 0.45 * (2.0 * std::f64::consts::PI * 3.1 * t).sin();
                let mut v = 0.0;
                for (k, ph) in phases.iter().enumerate() {
                    let f = f0 * (k + 1) as f64;
                    if f < 3800.0 {
                        v += (2.0 * std::f64::consts::PI * f * t + ph).sin() / (k + 1) as f64;
                    }
                }
                0.1 * env * v
            })
            .collect()
    }

    fn white(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn si_sdr_pinned_cases() {
        let r = speech_like(8000, 16000.0, 1);
        assert_eq!(si_sdr(&r, &r).unwrap(), SI_SDR_CAP_DB);
        let scaled: Vec<f64> = r.iter().map(|v| 3.0 * v).collect();
        assert_eq!(si_sdr(&scaled, &r).unwrap(), SI_SDR_CAP_DB);

        // Orthogonal perturbation with ‖n‖ = ‖ref‖/10 → exactly 20 dB.
        let reference = vec![1.0f64; 1000];
        let mut est = reference.clone();
        for (i, v) in est.iter_mut().enumerate() {
            *v += if i % 2 == 0 { 0.1 } else { -0.1 };
        }
        assert!((si_sdr(&est, &reference).unwrap() - 20.0).abs() < 1e-9);

        assert!(matches!(si_sdr(&est, &vec![0.0; 1000]), Err(Error::InvalidInput(_))));
        assert!(matches!(si_sdr(&est, &reference[..999]), Err(Error::Dimension(_))));
    }

    #[test]
    fn seg_snr_pinned_cases() {
        let r = speech_like(4800, 16000.0, 2);
        assert_eq!(seg_snr(&r, &r).unwrap(), SEG_SNR_CEIL_DB);
        let zeros = vec![0.0; r.len()];
        assert_eq!(seg_snr(&zeros, &r).unwrap(), SEG_SNR_FLOOR_DB);

        // Frame A at 0 dB, frame B at 20 dB → mean 10 dB.
        let mut est = vec![0.0f64; 2 * SEG_SNR_FRAME];
        let mut refr = vec![0.0f64; 2 * SEG_SNR_FRAME];
        for i in 0..SEG_SNR_FRAME {
            est[i] = 1.0;
            refr[i] = 0.0; // error = est → ratio 1 → 0 dB
            est[SEG_SNR_FRAME + i] = 1.0;
            refr[SEG_SNR_FRAME + i] = 0.9; // error = 0.1 → ratio 100 → 20 dB
        }
        assert!((seg_snr(&est, &refr).unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn stoi_is_near_one_on_identity() {
        let s = speech_like(16000, 16000.0, 3);
        let d = stoi(&s, &s, 16000).unwrap();
        assert!(d >= 0.99, "self-STOI {d}");
    }

    #[test]
    fn stoi_rejects_too_short_or_silent_input() {
        let s = speech_like(3000, 16000.0, 4);
        assert!(matches!(stoi(&s, &s, 16000), Err(Error::InvalidInput(_))));
        let silence = vec![0.0; 16000];
        assert!(matches!(stoi(&silence, &silence, 16000), Err(Error::InvalidInput(_))));
        let s = speech_like(8000, 16000.0, 5);
        assert!(matches!(stoi(&s[..7999], &s, 16000), Err(Error::Dimension(_))));
    }

    #[test]
    fn stoi_of_noise_against_speech_is_low() {
        let s = speech_like(24000, 16000.0, 6);
        let scale = rms(&s) * 10f64.powf(0.5); // noise 10 dB above the speech
        let n: Vec<f64> = white(24000, 7).iter().map(|v| v * scale).collect();
        let d = stoi(&n, &s, 16000).unwrap();
        assert!(d < 0.5, "noise-vs-speech STOI {d}");
    }

    #[test]
    fn stoi_increases_with_mixture_snr() {
        let s = speech_like(24000, 16000.0, 8);
        let base = white(24000, 9);
        let mut last = -1.0;
        for snr_db in [-5.0f64, 0.0, 5.0, 10.0] {
            let gain = rms(&s) / (rms(&base) * 10f64.powf(snr_db / 20.0));
            let mix: Vec<f64> =
                s.iter().zip(&base).map(|(sv, nv)| sv + nv * gain).collect();
            let d = stoi(&mix, &s, 16000).unwrap();
            assert!(d > last, "STOI must rise with SNR: {d} after {last} at {snr_db} dB");
            last = d;
        }
    }

    #[test]
    fn external_pesq_degrades_gracefully() {
        let est = Path::new("/tmp/est.wav");
        let refr = Path::new("/tmp/ref.wav");
        assert!(external_pesq(est, refr, "definitely-not-a-real-binary-2471").is_err());
        assert!(external_pesq(est, refr, "").is_err());

        // A conforming stand-in tool: echoes a score.
        let score = external_pesq(est, refr, "echo MOS-LQO = 4.5").unwrap();
        assert_eq!(score, 4.5);
        // Parse takes the last numeric token.
        let score = external_pesq(est, refr, "echo 1.0 then 3.25").unwrap();
        assert_eq!(score, 3.25);
    }

    #[test]
    fn report_round_trips_and_averages_present_fields() {
        let mut per_file = BTreeMap::new();
        per_file.insert(
            "a".to_string(),
            FileScores { stoi: 0.8, si_sdr: 10.0, seg_snr: 5.0, pesq: Some(3.0), ..Default::default() },
        );
        per_file.insert(
            "b".to_string(),
            FileScores { stoi: 0.6, si_sdr: 6.0, seg_snr: 3.0, pesq: None, ..Default::default() },
        );
        let report = ScoreReport::new(per_file);
        assert!((report.corpus_mean.stoi - 0.7).abs() < 1e-12);
        assert!((report.corpus_mean.si_sdr - 8.0).abs() < 1e-12);
        assert_eq!(report.corpus_mean.pesq, Some(3.0));
        assert_eq!(report.corpus_mean.csig, None);

        let json = serde_json::to_string_pretty(&report).unwrap();
        let back: ScoreReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
