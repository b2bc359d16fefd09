//! Demonstrate the frozen embedding branch: frame-rate encoding, layer
//! weighting, alignment onto the spectrogram time base, and fusion into the
//! model width.
//!
//! Usage: cargo run --example ssl_fusion

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use hfsda::dsp::{self, StftConfig};
use hfsda::params::ParamStore;
use hfsda::ssl::{self, LayerPolicy, SslEncoder, SslEncoderSpec};

fn main() -> hfsda::Result<()> {
    let spec = SslEncoderSpec { output_dim: 48, ..SslEncoderSpec::default() };
    let encoder = SslEncoder::from_spec(&spec)?;

    // A 1.5 s probe: the encoder frames at 20 ms, the spectral front end at
    // 10 ms, so the two branches disagree on sequence length by design.
    let wave: Vec<f64> = (0..24_000)
        .map(|i| {
            let t = i as f64 / 16_000.0;
            0.4 * (2.0 * std::f64::consts::PI * 250.0 * t).sin()
                + 0.2 * (2.0 * std::f64::consts::PI * 1_250.0 * t).sin()
        })
        .collect();

    let layers = encoder.layer_outputs(&wave)?;
    println!("hidden layers: {}", layers.len());
    for (i, layer) in layers.iter().enumerate() {
        println!("  layer {i}: {:?}", layer.dim());
    }

    let stft_cfg = StftConfig::default();
    let spec_frames = dsp::stft(&wave, &stft_cfg)?.n_frames();
    println!(
        "encoder frames: {}, spectrogram frames: {}",
        layers[0].dim().0,
        spec_frames
    );

    // Weighted-sum embedding (uniform weights from zero logits), then linear
    // time interpolation onto the spectrogram's frame count.
    let embedded = encoder.embed(&wave, LayerPolicy::WeightedSumAllLayers, Some(&[0.0; 3]))?;
    let aligned = ssl::align(&embedded, spec_frames)?;
    println!("aligned embedding: {:?}", aligned.dim());
    let first = embedded.row(0);
    let last = embedded.row(embedded.dim().0 - 1);
    let a_first = aligned.row(0);
    let a_last = aligned.row(aligned.dim().0 - 1);
    let end_err = first
        .iter()
        .zip(a_first.iter())
        .chain(last.iter().zip(a_last.iter()))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("endpoint preservation after alignment: max |delta| = {end_err:.1e}");

    // Determinism: the stand-in encoder is frozen and seeded.
    let again = SslEncoder::from_spec(&spec)?.embed(
        &wave,
        LayerPolicy::WeightedSumAllLayers,
        Some(&[0.0; 3]),
    )?;
    let det = embedded
        .iter()
        .zip(again.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("rebuild + re-embed: max |delta| = {det:.1e} (frozen, deterministic)");

    // Fusion: concatenate with a toy spectral feature and project to the
    // model width.
    let d_spec = 24;
    let d_model = 32;
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    ssl::init_fuse(&mut store, "fuse", spec.output_dim, d_spec, d_model, &mut rng);
    let mut g = hfsda::autograd::Graph::new();
    let bound = store.bind(&mut g);
    let ssl_t = g.constant(aligned.into_dyn());
    let spec_feat = g.constant(ndarray::Array2::<f64>::ones((spec_frames, d_spec)).into_dyn());
    let fused = ssl::fuse_forward(&mut g, ssl_t, spec_feat, &bound, "fuse")?;
    println!(
        "fused features: {:?} ({} + {} concatenated, projected to {})",
        g.shape(fused),
        spec.output_dim,
        d_spec,
        d_model
    );
    Ok(())
}
