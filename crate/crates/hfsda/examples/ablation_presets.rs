//! Walk the seven ablation presets: show how each one rewrites the base
//! model configuration and what that does to the parameter budget.
//!
//! Usage: cargo run --example ablation_presets

use hfsda::model::{Model, ModelConfig};
use hfsda::trainer::{build_ablation, AblationPreset};

fn main() -> hfsda::Result<()> {
    let base = ModelConfig::default();
    println!(
        "base config: model_dim {}, {} blocks, {} ODConv kernels",
        base.model_dim, base.n_blocks, base.odconv.n_kernels
    );
    println!();
    println!("{:<28} {:>10} {:>8}  notes", "preset", "scalars", "tensors");

    let mut counts = std::collections::BTreeMap::new();
    for preset in AblationPreset::all() {
        let cfg = build_ablation(preset, &base)?;
        let model = Model::new(cfg)?;
        let params = model.init_params(0);
        let notes = describe(&model.config, &base);
        println!(
            "{:<28} {:>10} {:>8}  {notes}",
            preset.to_string(),
            params.n_scalars(""),
            params.len()
        );
        counts.insert(preset.to_string(), params.n_scalars(""));
    }

    let dda = counts["full"];
    let conformer = counts["conformer_instead_of_dda"];
    println!();
    println!(
        "the dual-attention stack uses {} fewer scalars than the matched conformer stack \
         ({} vs {}).",
        conformer - dda,
        dda,
        conformer
    );
    assert!(dda < conformer);

    // Unknown names are rejected with the full menu.
    let err = "not_a_preset".parse::<AblationPreset>().unwrap_err();
    println!("\nparsing an unknown preset fails early:\n  {err}");
    Ok(())
}

fn describe(cfg: &ModelConfig, base: &ModelConfig) -> String {
    let mut notes = Vec::new();
    if cfg.block_kind != base.block_kind {
        notes.push(format!("{:?} blocks", cfg.block_kind));
    }
    if cfg.branch != base.branch {
        notes.push(format!("{:?} branch", cfg.branch));
    }
    if cfg.odconv.dynamic != base.odconv.dynamic {
        notes.push("static convolution".into());
    }
    if cfg.ssl.standin_seed != base.ssl.standin_seed {
        notes.push(format!("encoder '{}'", cfg.ssl.identifier));
    }
    if notes.is_empty() {
        "unchanged".into()
    } else {
        notes.join(", ")
    }
}
