//! Generate the synthetic mini corpus: ten noisy/clean 16 kHz WAV pairs at
//! exact SNRs cycling through {0, 5, 10, 15} dB.
//!
//! This is the corpus the `smoke` profile trains on. The generator is fully
//! deterministic in the seed, so the packaged assets can be reproduced
//! byte-for-byte.
//!
//! Usage: cargo run --example make_corpus [-- <out_dir> [seed]]

use std::path::PathBuf;

use hfsda::testkit;

fn main() -> hfsda::Result<()> {
    let mut args = std::env::args().skip(1);
    let out_dir = PathBuf::from(args.next().unwrap_or_else(|| "assets/mini_corpus".into()));
    let seed: u64 = args.next().map(|s| s.parse().expect("seed must be an integer")).unwrap_or(7);

    let pairs = testkit::make_mini_corpus(&out_dir, seed)?;
    println!("wrote {} pairs under {} (seed {seed})", pairs.len(), out_dir.display());
    for pair in &pairs {
        let clean = hfsda::data::ingest(&pair.clean_path)?;
        let noisy = hfsda::data::ingest(&pair.noisy_path)?;
        // Verify the per-pair SNR on disk (quantization shifts it slightly).
        let p_sig: f64 = clean.iter().map(|v| v * v).sum();
        let p_noise: f64 = clean.iter().zip(&noisy).map(|(c, n)| (n - c) * (n - c)).sum();
        let snr = 10.0 * (p_sig / p_noise).log10();
        println!(
            "  {}  {:>6} samples  target {:>4.1} dB  on-disk {:>5.2} dB",
            pair.id,
            clean.len(),
            pair.snr_db,
            snr
        );
    }
    Ok(())
}
