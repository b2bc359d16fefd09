//! Optimization loop: Adam with stepped learning-rate decay, deterministic
//! batching, versioned checkpoints, and the ablation-preset harness.
//!
//! The loop builds one autodiff graph per sample and averages gradients over
//! the batch, so memory stays proportional to a single utterance segment.
//! Everything that consumes randomness (parameter init, batch order, dropout
//! masks, validation split) is seeded from `TrainConfig::seed` plus a purpose
//! salt, which makes a resumed run bitwise-identical to an uninterrupted one.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::autograd::{Arr, Graph};
use crate::data::{self, Segment};
use crate::dda::{BlockKind, TrainCtx};
use crate::error::{Error, Result};
use crate::model::{BranchMode, Model, ModelConfig};
use crate::params::ParamStore;
use crate::tensorio;

/// Per-epoch salt mixed into the dropout RNG stream.
const DROPOUT_SALT: u64 = 0x517C_C1B7_2722_0A95;
/// Salt for the validation-split shuffle.
const VAL_SPLIT_SALT: u64 = 0x7661_6C5F_7370_6C69;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Optimization hyperparameters and checkpointing policy.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial learning rate.
    pub lr0: f64,
    /// Multiplicative decay applied every `decay_every` epochs.
    pub decay_factor: f64,
    pub decay_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub checkpoint_dir: PathBuf,
    /// Write `epoch_NNNN.ckpt` every this many epochs (0 disables periodic
    /// saves; `last.ckpt` is always written).
    pub save_every: usize,
    /// Optional global-norm gradient clipping; off by default.
    pub clip_global_norm: Option<f64>,
    /// Fraction of source utterances held out for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 16,
            lr0: 1e-4,
            decay_factor: 0.5,
            decay_every: 10,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 42,
            checkpoint_dir: PathBuf::from("checkpoints"),
            save_every: 10,
            clip_global_norm: None,
            val_fraction: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be positive and finite, got {}", self.lr0)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "decay_factor must lie in (0, 1], got {}",
                self.decay_factor
            )));
        }
        if self.decay_every == 0 {
            return Err(Error::Config("decay_every must be at least 1".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if !(0.0..=0.9).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction must lie in [0, 0.9], got {}",
                self.val_fraction
            )));
        }
        if let Some(c) = self.clip_global_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip_global_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Stepped learning-rate schedule: `lr0 · decay_factor^floor(epoch / decay_every)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.decay_factor.powi((epoch / cfg.decay_every) as i32)
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// First/second-moment estimates plus the step counter, keyed by parameter
/// name so the state survives serialization independent of tensor order.
#[derive(Default, Clone, Debug)]
pub struct AdamState {
    pub m: BTreeMap<String, Arr>,
    pub v: BTreeMap<String, Arr>,
    pub t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update over every gradient in `grads`.
/// Parameters without a gradient entry are left untouched.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Arr>,
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) {
    state.t += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    for (name, gr) in grads {
        let m = state.m.entry(name.clone()).or_insert_with(|| Arr::zeros(gr.raw_dim()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Arr::zeros(gr.raw_dim()));
        ndarray::Zip::from(&mut *m).and(gr).for_each(|m, &g| *m = b1 * *m + (1.0 - b1) * g);
        ndarray::Zip::from(&mut *v).and(gr).for_each(|v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
        let p = params.get_mut(name);
        ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
            *p -= lr * (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
        });
    }
}

/// Scale all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_gradients(grads: &mut BTreeMap<String, Arr>, max_norm: f64) -> f64 {
    let sq: f64 = grads.values().map(|a| a.iter().map(|x| x * x).sum::<f64>()).sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for a in grads.values_mut() {
            a.mapv_inplace(|x| x * s);
        }
    }
    norm
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 4] = b"HFSD";
pub const CKPT_FORMAT_VERSION: u32 = 1;

/// Stable fingerprint of a model configuration, stored in checkpoint headers
/// so weights cannot silently load into a different architecture.
pub fn config_hash(cfg: &ModelConfig) -> String {
    let json = serde_json::to_string(cfg).expect("model config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Fully deserialized checkpoint contents.
#[derive(Debug)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    /// Number of completed epochs at save time.
    pub epoch: u64,
    /// Number of optimizer steps taken.
    pub step: u64,
    pub params: ParamStore,
    pub adam: AdamState,
}

/// Write a checkpoint atomically (temp file + rename in the target directory).
///
/// Layout: `HFSD` magic, format version (u32 LE), config-hash length (u32 LE)
/// and bytes, completed epochs (u64 LE), optimizer steps (u64 LE), then a
/// tensor container holding `param.*`, `adam_m.*` and `adam_v.*` entries.
pub fn save_checkpoint(
    path: &Path,
    config_hash: &str,
    epoch: u64,
    params: &ParamStore,
    adam: &AdamState,
) -> Result<PathBuf> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&CKPT_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(config_hash.len() as u32).to_le_bytes());
    buf.extend_from_slice(config_hash.as_bytes());
    buf.extend_from_slice(&epoch.to_le_bytes());
    buf.extend_from_slice(&adam.t.to_le_bytes());

    let mut tensors: BTreeMap<String, Arr> = BTreeMap::new();
    for (name, value) in params.iter() {
        tensors.insert(format!("param.{name}"), (**value).clone());
    }
    for (name, m) in &adam.m {
        tensors.insert(format!("adam_m.{name}"), m.clone());
    }
    for (name, v) in &adam.v {
        tensors.insert(format!("adam_v.{name}"), v.clone());
    }
    tensorio::write_tensors(&mut buf, &tensors)?;

    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.as_file_mut().write_all(&buf)?;
    tmp.as_file_mut().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(path.to_path_buf())
}

fn corrupt(path: &Path, reason: impl fmt::Display) -> Error {
    Error::CorruptCheckpoint(format!("{}: {reason}", path.display()))
}

/// Read and verify a checkpoint. When `expected_hash` is given, a header hash
/// mismatch is an incompatibility error; structural damage of any kind is a
/// corruption error.
pub fn load_checkpoint(path: &Path, expected_hash: Option<&str>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let mut pos = 0usize;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        if pos + n > bytes.len() {
            return Err(corrupt(path, format!("truncated before {what}")));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };

    if take(4, "magic")? != CKPT_MAGIC {
        return Err(corrupt(path, "not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(take(4, "format version")?.try_into().unwrap());
    if version != CKPT_FORMAT_VERSION {
        return Err(corrupt(path, format!("unsupported format version {version}")));
    }
    let hash_len = u32::from_le_bytes(take(4, "hash length")?.try_into().unwrap()) as usize;
    if hash_len > 1024 {
        return Err(corrupt(path, format!("implausible config-hash length {hash_len}")));
    }
    let hash = String::from_utf8(take(hash_len, "config hash")?.to_vec())
        .map_err(|_| corrupt(path, "config hash is not UTF-8"))?;
    let epoch = u64::from_le_bytes(take(8, "epoch")?.try_into().unwrap());
    let step = u64::from_le_bytes(take(8, "step")?.try_into().unwrap());

    if let Some(expect) = expected_hash {
        if expect != hash {
            return Err(Error::IncompatibleCheckpoint(format!(
                "{}: checkpoint was written for model configuration {hash}, current configuration is {expect}",
                path.display()
            )));
        }
    }

    let mut cursor = std::io::Cursor::new(&bytes[pos..]);
    let tensors = tensorio::read_tensors(&mut cursor, path).map_err(|e| match e {
        Error::Format { reason, .. } => corrupt(path, reason),
        other => other,
    })?;
    if (cursor.position() as usize) != bytes.len() - pos {
        return Err(corrupt(path, "trailing bytes after tensor container"));
    }

    let mut params = ParamStore::new();
    let mut adam = AdamState { t: step, ..AdamState::new() };
    for (key, value) in tensors {
        if let Some(name) = key.strip_prefix("param.") {
            params.insert(name, value);
        } else if let Some(name) = key.strip_prefix("adam_m.") {
            adam.m.insert(name.to_string(), value);
        } else if let Some(name) = key.strip_prefix("adam_v.") {
            adam.v.insert(name.to_string(), value);
        } else {
            return Err(corrupt(path, format!("unexpected tensor '{key}'")));
        }
    }
    if params.is_empty() {
        return Err(corrupt(path, "checkpoint holds no parameters"));
    }
    Ok(Checkpoint { format_version: version, config_hash: hash, epoch, step, params, adam })
}

/// Shape summary of one stored tensor.
#[derive(Debug, serde::Serialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub len: usize,
}

/// Header plus per-tensor inventory, for the inspection tooling.
#[derive(Debug, serde::Serialize)]
pub struct CheckpointInfo {
    pub format_version: u32,
    pub config_hash: String,
    pub epoch: u64,
    pub step: u64,
    pub n_param_tensors: usize,
    pub n_param_scalars: usize,
    pub n_optimizer_tensors: usize,
    pub params: Vec<TensorInfo>,
}

pub fn inspect_checkpoint(path: &Path) -> Result<CheckpointInfo> {
    let ck = load_checkpoint(path, None)?;
    let params: Vec<TensorInfo> = ck
        .params
        .iter()
        .map(|(name, v)| TensorInfo {
            name: name.to_string(),
            shape: v.shape().to_vec(),
            len: v.len(),
        })
        .collect();
    Ok(CheckpointInfo {
        format_version: ck.format_version,
        config_hash: ck.config_hash,
        epoch: ck.epoch,
        step: ck.step,
        n_param_tensors: params.len(),
        n_param_scalars: params.iter().map(|t| t.len).sum(),
        n_optimizer_tensors: ck.adam.m.len() + ck.adam.v.len(),
        params,
    })
}

// ---------------------------------------------------------------------------
// Ablation presets
// ---------------------------------------------------------------------------

/// Named model variants for the component-contribution study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationPreset {
    Full,
    ConformerInsteadOfDda,
    ConformerPlusFa,
    SslOnly,
    Wav2vecEncoder,
    StftOdconvOnly,
    StftPlainOnly,
}

impl AblationPreset {
    pub fn all() -> [AblationPreset; 7] {
        [
            Self::Full,
            Self::ConformerInsteadOfDda,
            Self::ConformerPlusFa,
            Self::SslOnly,
            Self::Wav2vecEncoder,
            Self::StftOdconvOnly,
            Self::StftPlainOnly,
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::ConformerInsteadOfDda => "conformer_instead_of_dda",
            Self::ConformerPlusFa => "conformer_plus_fa",
            Self::SslOnly => "ssl_only",
            Self::Wav2vecEncoder => "wav2vec_encoder",
            Self::StftOdconvOnly => "stft_odconv_only",
            Self::StftPlainOnly => "stft_plain_only",
        }
    }
}

impl fmt::Display for AblationPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::all()
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::all().iter().map(|p| p.name()).collect();
                Error::Config(format!(
                    "unknown ablation preset '{s}'; expected one of: {}",
                    names.join(", ")
                ))
            })
    }
}

/// Derive the preset's model configuration from a base configuration.
pub fn build_ablation(preset: AblationPreset, base: &ModelConfig) -> Result<ModelConfig> {
    let mut cfg = base.clone();
    match preset {
        AblationPreset::Full => {}
        AblationPreset::ConformerInsteadOfDda => cfg.block_kind = BlockKind::Conformer,
        AblationPreset::ConformerPlusFa => cfg.block_kind = BlockKind::ConformerFa,
        AblationPreset::SslOnly => cfg.branch = BranchMode::SslOnly,
        AblationPreset::Wav2vecEncoder => {
            // Alternate frozen encoder: same interface, independent weights.
            cfg.ssl.standin_seed = 23;
            cfg.ssl.identifier = "wav2vec2-base-standin".into();
        }
        AblationPreset::StftOdconvOnly => cfg.branch = BranchMode::SpecOnly,
        AblationPreset::StftPlainOnly => {
            cfg.branch = BranchMode::SpecOnly;
            cfg.odconv.dynamic = false;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// One line of the metrics log (also serialized as JSONL on disk).
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub wall_time_s: f64,
}

/// Everything a finished (or resumed-and-finished) run hands back.
#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ParamStore,
    pub adam: AdamState,
    pub log: Vec<EpochLog>,
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: Option<PathBuf>,
}

/// Loss and per-parameter gradients for one segment.
fn sample_gradients(
    model: &Model,
    params: &ParamStore,
    seg: &Segment,
    ctx: &mut TrainCtx,
) -> Result<(f64, BTreeMap<String, Arr>)> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let fwd = model.forward_graph(&mut g, &bound, &seg.noisy, ctx)?;
    let loss = model.loss_graph(&mut g, &fwd, &seg.clean)?;
    let lv = g.value(loss).sum();
    if !lv.is_finite() {
        return Ok((lv, BTreeMap::new()));
    }
    let grads = g.backward(loss);
    let mut out = BTreeMap::new();
    for (name, tid) in bound.iter() {
        if let Some(ga) = grads.get(tid) {
            out.insert(name.to_string(), ga.clone());
        }
    }
    Ok((lv, out))
}

/// Mean loss over `segments` with dropout off and no backward pass.
pub fn evaluate_loss(model: &Model, params: &ParamStore, segments: &[&Segment]) -> Result<f64> {
    assert!(!segments.is_empty(), "evaluate_loss needs at least one segment");
    let mut sum = 0.0;
    for seg in segments {
        let mut g = Graph::new();
        let bound = params.bind_frozen(&mut g);
        let fwd = model.forward_graph(&mut g, &bound, &seg.noisy, &mut TrainCtx::inference())?;
        let loss = model.loss_graph(&mut g, &fwd, &seg.clean)?;
        sum += g.value(loss).sum();
    }
    Ok(sum / segments.len() as f64)
}

/// Partition segment indices into train/validation by source utterance, so
/// no utterance contributes windows to both sides. Returns `(train, val)`.
pub fn split_validation(
    segments: &[Segment],
    val_fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let ids: Vec<&str> = {
        let set: std::collections::BTreeSet<&str> =
            segments.iter().map(|s| s.source_id.as_str()).collect();
        set.into_iter().collect()
    };
    if val_fraction <= 0.0 || ids.len() < 2 {
        return ((0..segments.len()).collect(), Vec::new());
    }
    let n_val = ((ids.len() as f64 * val_fraction).round() as usize)
        .max(1)
        .min(ids.len() - 1);
    let mut shuffled = ids;
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ VAL_SPLIT_SALT);
    use rand::seq::SliceRandom;
    shuffled.shuffle(&mut rng);
    let val_ids: std::collections::BTreeSet<&str> = shuffled[..n_val].iter().copied().collect();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, seg) in segments.iter().enumerate() {
        if val_ids.contains(seg.source_id.as_str()) {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    (train, val)
}

/// Run (or resume) the optimization loop over pre-segmented training data.
///
/// `resume` must point at a checkpoint written for the same model
/// configuration; epoch counter, moments and learning rate all restore, and
/// the continuation reproduces an uninterrupted run exactly.
pub fn train(
    model: &Model,
    cfg: &TrainConfig,
    segments: &[Segment],
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if segments.is_empty() {
        return Err(Error::Corpus("training corpus produced no segments".into()));
    }
    let hash = config_hash(&model.config);
    let (mut params, mut adam, start_epoch) = match resume {
        Some(path) => {
            let ck = load_checkpoint(path, Some(&hash))?;
            (ck.params, ck.adam, ck.epoch as usize)
        }
        None => (model.init_params(cfg.seed), AdamState::new(), 0),
    };
    if start_epoch > cfg.epochs {
        return Err(Error::Training(format!(
            "checkpoint has {start_epoch} completed epochs but the run is configured for {}",
            cfg.epochs
        )));
    }

    let (train_idx, val_idx) = split_validation(segments, cfg.val_fraction, cfg.seed);
    if train_idx.is_empty() {
        return Err(Error::Corpus("validation split left no training segments".into()));
    }
    let val_segments: Vec<&Segment> = val_idx.iter().map(|&i| &segments[i]).collect();

    std::fs::create_dir_all(&cfg.checkpoint_dir)?;
    let mut log_file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(cfg.checkpoint_dir.join("train_log.jsonl"))?;

    let mut log = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_checkpoint = None;

    for epoch in start_epoch..cfg.epochs {
        let started = Instant::now();
        let lr = lr_at(epoch, cfg);
        // Fresh dropout stream per epoch, keyed on (seed, epoch): a resumed
        // run replays exactly the masks the uninterrupted run would draw.
        let mut ctx = if model.config.dropout > 0.0 {
            let rng = ChaCha20Rng::seed_from_u64(
                cfg.seed ^ (epoch as u64 + 1).wrapping_mul(DROPOUT_SALT),
            );
            TrainCtx::training(model.config.dropout, rng)
        } else {
            TrainCtx::inference()
        };

        let batches = data::epoch_batches(train_idx.len(), cfg.batch_size, cfg.seed, epoch as u64);
        let mut loss_sum = 0.0;
        let mut n_seen = 0usize;
        for (batch_id, batch) in batches.iter().enumerate() {
            let mut accum: BTreeMap<String, Arr> = BTreeMap::new();
            for &local in batch {
                let seg = &segments[train_idx[local]];
                let (lv, grads) = sample_gradients(model, &params, seg, &mut ctx)?;
                if !lv.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite loss ({lv}) at epoch {epoch}, batch {batch_id}, \
                         segment '{}' at offset {}",
                        seg.source_id, seg.offset
                    )));
                }
                loss_sum += lv;
                n_seen += 1;
                for (name, garr) in grads {
                    accum
                        .entry(name)
                        .and_modify(|a| *a += &garr)
                        .or_insert(garr);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for a in accum.values_mut() {
                a.mapv_inplace(|x| x * scale);
            }
            if let Some(max_norm) = cfg.clip_global_norm {
                clip_gradients(&mut accum, max_norm);
            }
            adam_step(&mut params, &accum, &mut adam, lr, cfg);
        }

        let train_loss = loss_sum / n_seen as f64;
        let val_loss = if val_segments.is_empty() {
            None
        } else {
            Some(evaluate_loss(model, &params, &val_segments)?)
        };
        let entry = EpochLog {
            epoch,
            lr,
            train_loss,
            val_loss,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        writeln!(log_file, "{}", serde_json::to_string(&entry).expect("log entry serializes"))?;
        log.push(entry);

        let completed = (epoch + 1) as u64;
        if cfg.save_every > 0 && (epoch + 1) % cfg.save_every == 0 {
            let path = cfg.checkpoint_dir.join(format!("epoch_{:04}.ckpt", epoch + 1));
            save_checkpoint(&path, &hash, completed, &params, &adam)?;
        }
        if let Some(v) = val_loss {
            if v < best_val {
                best_val = v;
                let path = cfg.checkpoint_dir.join("best.ckpt");
                save_checkpoint(&path, &hash, completed, &params, &adam)?;
                best_checkpoint = Some(path);
            }
        }
    }

    let last_checkpoint = cfg.checkpoint_dir.join("last.ckpt");
    save_checkpoint(&last_checkpoint, &hash, cfg.epochs as u64, &params, &adam)?;
    Ok(TrainOutcome { params, adam, log, last_checkpoint, best_checkpoint })
}
