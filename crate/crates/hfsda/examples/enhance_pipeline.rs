//! End-to-end enhancement walkthrough on a synthetic noisy utterance: build
//! a model, run the masking pipeline, and score the result.
//!
//! An untrained model cannot denoise, but the pipeline contracts hold
//! regardless: the mask stays in [0, 1], enhancement never amplifies any
//! time-frequency cell, and output length equals input length.
//!
//! Usage: cargo run --example enhance_pipeline

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use hfsda::metrics;
use hfsda::model::{Model, ModelConfig};
use hfsda::odconv::OdconvHyper;
use hfsda::ssl::SslEncoderSpec;

fn main() -> hfsda::Result<()> {
    // A small configuration keeps this demo fast; the structure is the same
    // at full width.
    let config = ModelConfig {
        odconv: OdconvHyper { n_kernels: 2, c_out: 2, reduction: 2, ..OdconvHyper::default() },
        ssl: SslEncoderSpec { output_dim: 32, ..SslEncoderSpec::default() },
        model_dim: 32,
        n_blocks: 1,
        heads: 2,
        ff_expansion: 2,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let model = Model::new(config)?;
    let params = model.init_params(42);
    println!("model: {} parameter tensors, {} scalars", params.len(), params.n_scalars(""));

    // Synthetic pair: harmonic "speech" plus shaped noise at 5 dB SNR.
    let len = 16_000;
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let clean: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64 / 16_000.0;
            0.3 * (2.0 * std::f64::consts::PI * 180.0 * t).sin()
                + 0.15 * (2.0 * std::f64::consts::PI * 360.0 * t).sin()
        })
        .collect();
    let p_clean: f64 = clean.iter().map(|v| v * v).sum::<f64>() / len as f64;
    let mut noise: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let p_noise: f64 = noise.iter().map(|v| v * v).sum::<f64>() / len as f64;
    let gain = (p_clean / (p_noise * 10f64.powf(0.5))).sqrt();
    noise.iter_mut().for_each(|n| *n *= gain);
    let noisy: Vec<f64> = clean.iter().zip(&noise).map(|(c, n)| c + n).collect();

    let out = model.forward(&params, &noisy)?;
    let (t, f) = out.mask.shape();
    println!("mask: ({t}, {f})");
    let (lo, hi) = out
        .mask
        .data()
        .iter()
        .fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    println!("mask range: [{lo:.4}, {hi:.4}] (sigmoid keeps it inside [0, 1])");
    assert_eq!(out.enhanced_waveform.len(), len, "length must be preserved");

    // Contract: a multiplicative mask in [0, 1] can only attenuate.
    let noisy_spec = hfsda::dsp::stft(&noisy, &model.config.stft)?;
    let noisy_mag = hfsda::dsp::magnitude(&noisy_spec);
    let enhanced_mag = hfsda::dsp::magnitude(&out.enhanced_spectrogram);
    let amplified = enhanced_mag
        .iter()
        .zip(noisy_mag.iter())
        .filter(|(e, n)| *e > *n)
        .count();
    println!("cells amplified above the noisy magnitude: {amplified} (must be 0)");

    println!("\nscores vs clean reference:");
    println!(
        "  noisy    : SI-SDR {:+6.2} dB, STOI {:.3}",
        metrics::si_sdr(&noisy, &clean)?,
        metrics::stoi(&noisy, &clean, 16_000)?
    );
    println!(
        "  enhanced : SI-SDR {:+6.2} dB, STOI {:.3}  (untrained weights)",
        metrics::si_sdr(&out.enhanced_waveform, &clean)?,
        metrics::stoi(&out.enhanced_waveform, &clean, 16_000)?
    );
    println!("(see the train_smoke example for what a few epochs change)");
    Ok(())
}
