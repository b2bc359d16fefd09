//! Desk-scale training run: synthesize a tiny paired corpus, train a reduced
//! model for a few epochs, and show the loss trend plus the checkpoint files
//! the run leaves behind.
//!
//! Usage: cargo run --example train_smoke [out_dir]
//!
//! `out_dir` defaults to a fresh directory under the system temp dir; the
//! corpus, checkpoints, and loss curve SVG land there.

use std::path::PathBuf;

use hfsda::data;
use hfsda::model::{Model, ModelConfig};
use hfsda::odconv::OdconvHyper;
use hfsda::plot;
use hfsda::ssl::SslEncoderSpec;
use hfsda::testkit;
use hfsda::trainer::{self, TrainConfig};

fn main() -> hfsda::Result<()> {
    let out_dir: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("hfsda_train_smoke"));
    let corpus_dir = out_dir.join("corpus");
    let ckpt_dir = out_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;

    let pairs = testkit::make_mini_corpus(&corpus_dir, 7)?;
    println!("corpus: {} pairs under {}", pairs.len(), corpus_dir.display());

    let scan = data::scan_corpus(&corpus_dir.join("noisy"), &corpus_dir.join("clean"))?;
    let mut segments = Vec::new();
    for entry in &scan.pairs {
        segments.extend(data::segment(&data::load_pair(entry)?));
    }
    println!("segments: {} (1.5 s windows with a kept tail)", segments.len());

    // Narrow model so the demo finishes in seconds.
    let model = Model::new(ModelConfig {
        odconv: OdconvHyper { n_kernels: 2, c_out: 2, reduction: 2, ..OdconvHyper::default() },
        ssl: SslEncoderSpec { output_dim: 32, ..SslEncoderSpec::default() },
        model_dim: 32,
        n_blocks: 1,
        heads: 2,
        ff_expansion: 2,
        dropout: 0.0,
        ..ModelConfig::default()
    })?;

    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        lr0: 1e-3,
        seed: 42,
        checkpoint_dir: ckpt_dir,
        save_every: 1,
        val_fraction: 0.2,
        ..TrainConfig::default()
    };

    let outcome = trainer::train(&model, &cfg, &segments, None)?;
    println!("\nepoch   lr        train loss   val loss");
    for e in &outcome.log {
        let val = e.val_loss.map_or("-".into(), |v| format!("{v:.6}"));
        println!("{:>5}   {:.1e}   {:<10.6}   {val}", e.epoch, e.lr, e.train_loss);
    }
    let first = outcome.log.first().map(|e| e.train_loss).unwrap_or(f64::NAN);
    let last = outcome.log.last().map(|e| e.train_loss).unwrap_or(f64::NAN);
    println!("train loss: {first:.6} -> {last:.6}");

    let svg = out_dir.join("loss_curve.svg");
    plot::write_loss_curve(&outcome.log, &svg)?;
    println!("loss curve: {}", svg.display());
    println!("last checkpoint: {}", outcome.last_checkpoint.display());
    if let Some(best) = &outcome.best_checkpoint {
        println!("best checkpoint: {}", best.display());
    }

    // Round trip: reload and confirm the stored weights match bitwise.
    let ckpt = trainer::load_checkpoint(
        &outcome.last_checkpoint,
        Some(&trainer::config_hash(&model.config)),
    )?;
    let same = outcome
        .params
        .iter()
        .all(|(name, value)| ckpt.params.get(name) == value);
    println!("reload matches in-memory weights bitwise: {same}");
    Ok(())
}
