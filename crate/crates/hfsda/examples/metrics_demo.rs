//! Score-metric sanity tour: SI-SDR on constructed mixtures with known
//! answers, STOI monotonicity across an SNR sweep, and segmental SNR.
//!
//! Usage: cargo run --example metrics_demo

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use hfsda::metrics;

/// Speech-like reference: harmonics with a slow amplitude modulation.
fn reference(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let t = i as f64 / 16_000.0;
            let env = 0.5 + 0.5 * (2.0 * std::f64::consts::PI * 3.0 * t).sin();
            env * (0.3 * (2.0 * std::f64::consts::PI * 220.0 * t).sin()
                + 0.2 * (2.0 * std::f64::consts::PI * 440.0 * t).sin()
                + 0.1 * (2.0 * std::f64::consts::PI * 880.0 * t).sin())
        })
        .collect()
}

fn main() -> hfsda::Result<()> {
    let len = 32_000;
    let clean = reference(len);

    // Identity: a signal scored against itself.
    println!("identity:");
    println!("  SI-SDR(x, x) = {:.1} dB (capped)", metrics::si_sdr(&clean, &clean)?);
    println!("  STOI(x, x)   = {:.4}", metrics::stoi(&clean, &clean, 16_000)?);
    println!("  segSNR(x, x) = {:.1} dB (capped per frame)", metrics::seg_snr(&clean, &clean)?);

    // Constructed case with a closed-form answer: estimate = reference plus
    // an orthogonal error at 1/10 the reference's RMS gives exactly 20 dB.
    let rms = (clean.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    let mut err: Vec<f64> = (0..len)
        .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    // Project out the reference component so the error is exactly orthogonal.
    let dot: f64 = err.iter().zip(&clean).map(|(e, c)| e * c).sum();
    let cc: f64 = clean.iter().map(|c| c * c).sum();
    for (e, c) in err.iter_mut().zip(&clean) {
        *e -= dot / cc * c;
    }
    let erms = (err.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    let scale = rms / (10.0 * erms);
    let est: Vec<f64> = clean.iter().zip(&err).map(|(c, e)| c + scale * e).collect();
    println!("\northogonal error at 1/10 RMS: SI-SDR = {:.4} dB (expected 20)", metrics::si_sdr(&est, &clean)?);

    // SI-SDR is scale-invariant: scaling the estimate changes nothing.
    let scaled: Vec<f64> = est.iter().map(|v| v * 3.7).collect();
    println!("same estimate scaled by 3.7: SI-SDR = {:.4} dB", metrics::si_sdr(&scaled, &clean)?);

    // STOI rises monotonically with SNR on additive-noise mixtures.
    println!("\nSNR sweep (additive white noise):");
    println!("  SNR      SI-SDR     segSNR    STOI");
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let noise: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let p_clean: f64 = clean.iter().map(|v| v * v).sum::<f64>() / len as f64;
    let p_noise: f64 = noise.iter().map(|v| v * v).sum::<f64>() / len as f64;
    let mut prev_stoi = -1.0;
    for snr_db in [-5.0, 0.0, 5.0, 10.0] {
        let gain = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
        let noisy: Vec<f64> = clean.iter().zip(&noise).map(|(c, n)| c + gain * n).collect();
        let stoi = metrics::stoi(&noisy, &clean, 16_000)?;
        println!(
            "  {snr_db:>4} dB  {:>7.2} dB  {:>6.2} dB  {stoi:.4}",
            metrics::si_sdr(&noisy, &clean)?,
            metrics::seg_snr(&noisy, &clean)?,
        );
        assert!(stoi > prev_stoi, "STOI must increase with SNR");
        prev_stoi = stoi;
    }
    println!("STOI increased at every step, as it must.");
    Ok(())
}
