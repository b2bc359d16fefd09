//! Command-line front end: `train`, `enhance`, `evaluate`, `ablate`, and
//! `inspect-checkpoint`, all driven by the layered configuration.
//!
//! Exit-code contract: 0 on success, 1 on runtime failure (I/O, damaged
//! files, training aborts), 2 on usage and configuration errors (schema
//! violations, missing corpora, incompatible checkpoints). Argument-parse
//! errors also exit 2 via clap.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};

use crate::config::{self, ConfigSources, Profile, RunConfig};
use crate::data::{self, Segment};
use crate::error::{Error, Result};
use crate::metrics::{self, FileScores, ScoreReport};
use crate::model::Model;
use crate::params::ParamStore;
use crate::plot;
use crate::trainer::{self, AblationPreset, EpochLog};

#[derive(Parser, Debug)]
#[command(
    name = "hfsda",
    version,
    about = "Hybrid-feature speech enhancement: train, enhance, and score"
)]
pub struct Cli {
    /// TOML configuration file (layered under profile/env/--set overrides).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Named settings overlay: 'smoke' (desk-scale run) or 'full'.
    #[arg(long, global = true, value_name = "NAME")]
    pub profile: Option<String>,

    /// Override one configuration key, e.g. --set train.epochs=3 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,

    /// Shorthand for --set train.seed=N.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model on the configured corpus.
    Train {
        /// Resume from this checkpoint.
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
    },
    /// Enhance every .wav file in a directory.
    Enhance {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        in_dir: PathBuf,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
    /// Score estimates against references, matched by filename stem.
    Evaluate {
        #[arg(long, value_name = "DIR")]
        est_dir: PathBuf,
        #[arg(long, value_name = "DIR")]
        ref_dir: PathBuf,
        /// Write the JSON score report here.
        #[arg(long, value_name = "PATH")]
        report: Option<PathBuf>,
        /// Also write SVG plots (per-file scatter; loss curve with --train-log).
        #[arg(long)]
        plot: bool,
        /// Training log (JSONL) to plot a loss curve from.
        #[arg(long, value_name = "PATH")]
        train_log: Option<PathBuf>,
    },
    /// Train + evaluate one ablation preset (or 'all') and append summary rows.
    Ablate {
        /// Preset name, or 'all' to sweep every preset.
        preset: String,
        /// Summary JSONL path (default: <checkpoint_dir>/ablation_summary.jsonl).
        #[arg(long, value_name = "PATH")]
        summary: Option<PathBuf>,
    },
    /// Print the header and tensor inventory of a checkpoint.
    InspectCheckpoint {
        path: PathBuf,
        /// Emit machine-readable JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

/// Map an error to the stable exit-code contract.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Corpus(_) | Error::IncompatibleCheckpoint(_) => 2,
        _ => 1,
    }
}

/// Run a parsed command line; returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Train { resume } => cmd_train(&cfg, resume.as_deref()),
        Command::Enhance { checkpoint, in_dir, out_dir } => {
            cmd_enhance(&cfg, checkpoint, in_dir, out_dir)
        }
        Command::Evaluate { est_dir, ref_dir, report, plot, train_log } => {
            cmd_evaluate(&cfg, est_dir, ref_dir, report.as_deref(), *plot, train_log.as_deref())
        }
        Command::Ablate { preset, summary } => cmd_ablate(&cfg, preset, summary.as_deref()),
        Command::InspectCheckpoint { path, json } => cmd_inspect(path, *json),
    }
}

/// Resolve the layered configuration from CLI flags plus the environment.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let profile = cli.profile.as_deref().map(Profile::from_str).transpose()?;
    config::resolve(&ConfigSources {
        file: cli.config.clone(),
        profile,
        env: config::env_overrides(),
        sets: cli.sets.clone(),
        seed: cli.seed,
    })
}

fn require_dir(dir: &Path, what: &str) -> Result<()> {
    if !dir.is_dir() {
        return Err(Error::Corpus(format!(
            "{what} directory {} does not exist",
            dir.display()
        )));
    }
    Ok(())
}

/// Load and window every pair of the configured training corpus.
fn load_training_segments(cfg: &RunConfig) -> Result<Vec<Segment>> {
    require_dir(&cfg.data.noisy_dir, "noisy corpus")?;
    require_dir(&cfg.data.clean_dir, "clean corpus")?;
    let scan = data::scan_corpus(&cfg.data.noisy_dir, &cfg.data.clean_dir)?;
    for stem in &scan.unmatched_noisy {
        eprintln!("warning: noisy file '{stem}' has no clean counterpart");
    }
    for stem in &scan.unmatched_clean {
        eprintln!("warning: clean file '{stem}' has no noisy counterpart");
    }
    let mut segments = Vec::new();
    for entry in &scan.pairs {
        let pair = data::load_pair(entry)?;
        segments.extend(data::segment(&pair));
    }
    if segments.is_empty() {
        return Err(Error::Corpus("corpus produced no usable training segments".into()));
    }
    Ok(segments)
}

fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<()> {
    let segments = load_training_segments(cfg)?;
    let model = Model::new(cfg.model.clone())?;
    config::write_resolved(cfg, &cfg.train.checkpoint_dir)?;
    println!(
        "training: {} segments, {} epochs, batch {}, lr0 {}",
        segments.len(),
        cfg.train.epochs,
        cfg.train.batch_size,
        cfg.train.lr0
    );
    let outcome = trainer::train(&model, &cfg.train, &segments, resume)?;
    for entry in &outcome.log {
        match entry.val_loss {
            Some(v) => println!(
                "epoch {:>4}  lr {:.3e}  train {:.6}  val {:.6}  ({:.1}s)",
                entry.epoch, entry.lr, entry.train_loss, v, entry.wall_time_s
            ),
            None => println!(
                "epoch {:>4}  lr {:.3e}  train {:.6}  ({:.1}s)",
                entry.epoch, entry.lr, entry.train_loss, entry.wall_time_s
            ),
        }
    }
    plot::write_loss_curve(&outcome.log, &cfg.train.checkpoint_dir.join("loss_curve.svg"))?;
    if let Some(best) = &outcome.best_checkpoint {
        println!("best checkpoint: {}", best.display());
    }
    println!("checkpoint: {}", outcome.last_checkpoint.display());
    Ok(())
}

fn cmd_enhance(cfg: &RunConfig, checkpoint: &Path, in_dir: &Path, out_dir: &Path) -> Result<()> {
    let model = Model::new(cfg.model.clone())?;
    let hash = trainer::config_hash(&model.config);
    let ck = trainer::load_checkpoint(checkpoint, Some(&hash))?;
    require_dir(in_dir, "input")?;
    let files = data::wav_stems(in_dir)?;
    if files.is_empty() {
        eprintln!("warning: no .wav files in {}; nothing to do", in_dir.display());
        return Ok(());
    }
    std::fs::create_dir_all(out_dir)?;
    for (stem, path) in &files {
        let noisy = data::ingest(path)?;
        let enhanced = model.enhance_file(&ck.params, &noisy)?;
        let out_path = out_dir.join(format!("{stem}.wav"));
        data::write_wav_16k(&out_path, &enhanced)?;
        println!("{stem}: {} samples -> {}", enhanced.len(), out_path.display());
    }
    println!("enhanced {} file(s) into {}", files.len(), out_dir.display());
    Ok(())
}

/// Score every stem-matched pair of `est_dir` vs `ref_dir`.
pub fn score_directories(cfg: &RunConfig, est_dir: &Path, ref_dir: &Path) -> Result<ScoreReport> {
    require_dir(est_dir, "estimate")?;
    require_dir(ref_dir, "reference")?;
    let est_files = data::wav_stems(est_dir)?;
    let ref_files: BTreeMap<String, PathBuf> = data::wav_stems(ref_dir)?.into_iter().collect();
    let mut per_file = BTreeMap::new();
    for (stem, est_path) in &est_files {
        let Some(ref_path) = ref_files.get(stem) else { continue };
        let est = data::ingest(est_path)?;
        let reference = data::ingest(ref_path)?;
        let pesq = match cfg.metrics.pesq_tool.as_str() {
            "" => None,
            tool => match metrics::external_pesq(est_path, ref_path, tool) {
                Ok(v) => Some(v),
                Err(msg) => {
                    eprintln!("warning: PESQ unavailable for '{stem}': {msg}");
                    None
                }
            },
        };
        per_file.insert(
            stem.clone(),
            FileScores {
                stoi: metrics::stoi(&est, &reference, data::TARGET_RATE)?,
                si_sdr: metrics::si_sdr(&est, &reference)?,
                seg_snr: metrics::seg_snr(&est, &reference)?,
                pesq,
                csig: None,
                cbak: None,
                covl: None,
            },
        );
    }
    if per_file.is_empty() {
        return Err(Error::Corpus(format!(
            "no matching filename stems between {} and {}",
            est_dir.display(),
            ref_dir.display()
        )));
    }
    Ok(ScoreReport::new(per_file))
}

fn print_report(report: &ScoreReport) {
    println!("{:<16} {:>8} {:>10} {:>10} {:>8}", "file", "STOI", "SI-SDR", "segSNR", "PESQ");
    let fmt_opt = |v: Option<f64>| v.map_or("-".to_string(), |p| format!("{p:.2}"));
    for (id, s) in &report.per_file {
        println!(
            "{:<16} {:>8.3} {:>10.2} {:>10.2} {:>8}",
            id,
            s.stoi,
            s.si_sdr,
            s.seg_snr,
            fmt_opt(s.pesq)
        );
    }
    let m = &report.corpus_mean;
    println!(
        "{:<16} {:>8.3} {:>10.2} {:>10.2} {:>8}",
        "mean",
        m.stoi,
        m.si_sdr,
        m.seg_snr,
        fmt_opt(m.pesq)
    );
}

fn cmd_evaluate(
    cfg: &RunConfig,
    est_dir: &Path,
    ref_dir: &Path,
    report_path: Option<&Path>,
    make_plots: bool,
    train_log: Option<&Path>,
) -> Result<()> {
    let report = score_directories(cfg, est_dir, ref_dir)?;
    print_report(&report);
    let anchor: PathBuf = report_path.map(Path::to_path_buf).unwrap_or_else(|| "report.json".into());
    if let Some(path) = report_path {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(&report).expect("report serializes"))?;
        println!("report: {}", path.display());
    }
    if make_plots {
        let scatter = anchor.with_file_name("scores.svg");
        plot::write_score_scatter(&report, &scatter)?;
        println!("plot: {}", scatter.display());
        if let Some(log_path) = train_log {
            let text = std::fs::read_to_string(log_path)?;
            let log: Vec<EpochLog> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| {
                    serde_json::from_str(l).map_err(|e| {
                        Error::Format {
                            path: log_path.to_path_buf(),
                            reason: format!("bad log line: {e}"),
                        }
                    })
                })
                .collect::<Result<_>>()?;
            let curve = anchor.with_file_name("loss_curve.svg");
            plot::write_loss_curve(&log, &curve)?;
            println!("plot: {}", curve.display());
        }
    }
    Ok(())
}

/// One row of the ablation summary.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct AblationRow {
    pub preset: String,
    pub n_param_tensors: usize,
    pub n_param_scalars: usize,
    pub final_train_loss: f64,
    pub stoi: f64,
    pub si_sdr: f64,
    pub seg_snr: f64,
    pub checkpoint: PathBuf,
}

/// Train one preset on the configured corpus and score full-utterance
/// enhancement against the clean references.
pub fn run_ablation_preset(cfg: &RunConfig, preset: AblationPreset) -> Result<AblationRow> {
    let model_cfg = trainer::build_ablation(preset, &cfg.model)?;
    let model = Model::new(model_cfg)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.checkpoint_dir = cfg.train.checkpoint_dir.join(preset.name());

    let segments = load_training_segments(cfg)?;
    let resolved = RunConfig { model: model.config.clone(), train: train_cfg.clone(), ..cfg.clone() };
    config::write_resolved(&resolved, &train_cfg.checkpoint_dir)?;

    // Parameter-name audit: makes the structural difference between presets
    // visible in the run log.
    let probe_params = model.init_params(train_cfg.seed);
    println!(
        "[{preset}] {} parameter tensors ({} scalars): {}",
        probe_params.len(),
        probe_params.n_scalars(""),
        probe_params.names().collect::<Vec<_>>().join(" ")
    );

    let outcome = trainer::train(&model, &train_cfg, &segments, None)?;
    let final_train_loss = outcome.log.last().map(|e| e.train_loss).unwrap_or(f64::NAN);

    // Score the trained model on the evaluation pairs (full utterances).
    let report = enhance_and_score(cfg, &model, &outcome.params)?;
    Ok(AblationRow {
        preset: preset.name().to_string(),
        n_param_tensors: probe_params.len(),
        n_param_scalars: probe_params.n_scalars(""),
        final_train_loss,
        stoi: report.corpus_mean.stoi,
        si_sdr: report.corpus_mean.si_sdr,
        seg_snr: report.corpus_mean.seg_snr,
        checkpoint: outcome.last_checkpoint,
    })
}

/// Enhance every test pair with `model` and score against the references.
fn enhance_and_score(cfg: &RunConfig, model: &Model, params: &ParamStore) -> Result<ScoreReport> {
    let noisy_dir =
        if cfg.data.test_noisy_dir.as_os_str().is_empty() { &cfg.data.noisy_dir } else { &cfg.data.test_noisy_dir };
    let clean_dir =
        if cfg.data.test_clean_dir.as_os_str().is_empty() { &cfg.data.clean_dir } else { &cfg.data.test_clean_dir };
    let scan = data::scan_corpus(noisy_dir, clean_dir)?;
    let mut per_file = BTreeMap::new();
    for entry in &scan.pairs {
        let pair = data::load_pair(entry)?;
        let enhanced = model.enhance_file(params, &pair.noisy)?;
        per_file.insert(
            entry.id.clone(),
            FileScores {
                stoi: metrics::stoi(&enhanced, &pair.clean, data::TARGET_RATE)?,
                si_sdr: metrics::si_sdr(&enhanced, &pair.clean)?,
                seg_snr: metrics::seg_snr(&enhanced, &pair.clean)?,
                pesq: None,
                csig: None,
                cbak: None,
                covl: None,
            },
        );
    }
    if per_file.is_empty() {
        return Err(Error::Corpus("no evaluation pairs found".into()));
    }
    Ok(ScoreReport::new(per_file))
}

fn cmd_ablate(cfg: &RunConfig, preset_arg: &str, summary: Option<&Path>) -> Result<()> {
    let presets: Vec<AblationPreset> = if preset_arg == "all" {
        AblationPreset::all().to_vec()
    } else {
        vec![preset_arg.parse()?]
    };
    let summary_path = summary
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.train.checkpoint_dir.join("ablation_summary.jsonl"));
    if let Some(dir) = summary_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut file =
        std::fs::OpenOptions::new().create(true).append(true).open(&summary_path)?;

    println!(
        "{:<26} {:>8} {:>10} {:>10} {:>12}",
        "preset", "STOI", "SI-SDR", "segSNR", "final loss"
    );
    for preset in presets {
        let row = run_ablation_preset(cfg, preset)?;
        println!(
            "{:<26} {:>8.3} {:>10.2} {:>10.2} {:>12.6}",
            row.preset, row.stoi, row.si_sdr, row.seg_snr, row.final_train_loss
        );
        use std::io::Write as _;
        writeln!(file, "{}", serde_json::to_string(&row).expect("row serializes"))?;
    }
    println!("summary: {}", summary_path.display());
    Ok(())
}

fn cmd_inspect(path: &Path, json: bool) -> Result<()> {
    let info = trainer::inspect_checkpoint(path)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&info).expect("info serializes"));
        return Ok(());
    }
    println!("format version : {}", info.format_version);
    println!("config hash    : {}", info.config_hash);
    println!("epoch          : {}", info.epoch);
    println!("optimizer step : {}", info.step);
    println!(
        "parameters     : {} tensors, {} scalars",
        info.n_param_tensors, info.n_param_scalars
    );
    println!("optimizer      : {} moment tensors", info.n_optimizer_tensors);
    for t in &info.params {
        let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        println!("  {:<28} [{}]", t.name, dims.join(", "));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes_follow_the_contract() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Corpus("x".into())), 2);
        assert_eq!(exit_code(&Error::IncompatibleCheckpoint("x".into())), 2);
        assert_eq!(exit_code(&Error::Training("x".into())), 1);
        assert_eq!(exit_code(&Error::CorruptCheckpoint("x".into())), 1);
        assert_eq!(exit_code(&Error::InvalidInput("x".into())), 1);
    }

    #[test]
    fn global_flags_parse_before_and_after_subcommand() {
        let cli = Cli::try_parse_from([
            "hfsda",
            "--profile",
            "smoke",
            "train",
            "--set",
            "train.epochs=1",
        ])
        .unwrap();
        assert_eq!(cli.profile.as_deref(), Some("smoke"));
        assert_eq!(cli.sets, vec!["train.epochs=1"]);
        assert!(matches!(cli.command, Command::Train { resume: None }));

        let cli = Cli::try_parse_from(["hfsda", "ablate", "full", "--seed", "7"]).unwrap();
        assert_eq!(cli.seed, Some(7));
        match &cli.command {
            Command::Ablate { preset, .. } => assert_eq!(preset, "full"),
            other => panic!("unexpected command {other:?}"),
        }
    }

    #[test]
    fn unknown_profile_is_a_config_error() {
        let cli = Cli::try_parse_from(["hfsda", "--profile", "huge", "train"]).unwrap();
        match resolve_config(&cli) {
            Err(Error::Config(msg)) => assert!(msg.contains("huge")),
            other => panic!("expected Config error, got {other:?}"),
        }
    }
}
