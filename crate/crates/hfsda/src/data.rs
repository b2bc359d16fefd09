//! Corpus ingestion and training segmentation.
//!
//! The expected layout is two flat directories of mono linear-PCM WAV files
//! — one noisy, one clean — paired by filename stem. Files at 16 kHz pass
//! through; 48 kHz files are resampled down. Training consumes fixed
//! 1.5-second (24000-sample) non-overlapping segments; a partial tail is
//! zero-padded when it covers at least a third of a segment and dropped
//! otherwise, so short utterances still contribute.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::resample;

/// Segment length in samples: 1.5 s at 16 kHz.
pub const SEGMENT_LEN: usize = 24_000;
/// Minimum real samples a padded tail segment must cover.
pub const TAIL_KEEP_MIN: usize = SEGMENT_LEN / 3;
/// Sample rate all ingested audio is normalized to.
pub const TARGET_RATE: u32 = 16_000;

/// One matched noisy/clean file pair, not yet decoded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairEntry {
    pub id: String,
    pub noisy_path: PathBuf,
    pub clean_path: PathBuf,
}

/// Result of scanning a corpus: matched pairs plus the stems present on
/// only one side.
#[derive(Debug)]
pub struct CorpusScan {
    pub pairs: Vec<PairEntry>,
    pub unmatched_noisy: Vec<String>,
    pub unmatched_clean: Vec<String>,
}

/// A decoded pair at 16 kHz.
#[derive(Clone, Debug)]
pub struct UtterancePair {
    pub id: String,
    pub noisy: Vec<f64>,
    pub clean: Vec<f64>,
}

/// One fixed-length training example.
#[derive(Clone, Debug)]
pub struct Segment {
    pub noisy: Vec<f64>,
    pub clean: Vec<f64>,
    pub source_id: String,
    /// Offset of this window in the source utterance, in samples.
    pub offset: usize,
    /// Real (un-padded) sample count; `SEGMENT_LEN` for interior windows.
    pub real_len: usize,
}

/// All `.wav` files in `dir` as `(stem, path)`, sorted by stem.
pub fn wav_stems(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| {
        Error::Corpus(format!("cannot read directory {}: {e}", dir.display()))
    })? {
        let path = entry?.path();
        let is_wav = path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("wav"))
            .unwrap_or(false);
        if path.is_file() && is_wav {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Match the two directories by filename stem. Pairs come back in
/// lexicographic stem order; stems present on only one side are reported,
/// not fatal. An empty intersection is a corpus error.
pub fn scan_corpus(noisy_dir: &Path, clean_dir: &Path) -> Result<CorpusScan> {
    let noisy = wav_stems(noisy_dir)?;
    let clean = wav_stems(clean_dir)?;
    let clean_map: std::collections::BTreeMap<&str, &PathBuf> =
        clean.iter().map(|(s, p)| (s.as_str(), p)).collect();
    let noisy_set: std::collections::BTreeSet<&str> =
        noisy.iter().map(|(s, _)| s.as_str()).collect();

    let mut pairs = Vec::new();
    let mut unmatched_noisy = Vec::new();
    for (stem, path) in &noisy {
        match clean_map.get(stem.as_str()) {
            Some(clean_path) => pairs.push(PairEntry {
                id: stem.clone(),
                noisy_path: path.clone(),
                clean_path: (*clean_path).clone(),
            }),
            None => unmatched_noisy.push(stem.clone()),
        }
    }
    let unmatched_clean: Vec<String> = clean
        .iter()
        .filter(|(s, _)| !noisy_set.contains(s.as_str()))
        .map(|(s, _)| s.clone())
        .collect();

    if pairs.is_empty() {
        return Err(Error::Corpus(format!(
            "no matching stems between {} ({} wav files) and {} ({} wav files)",
            noisy_dir.display(),
            noisy.len(),
            clean_dir.display(),
            clean.len()
        )));
    }
    Ok(CorpusScan { pairs, unmatched_noisy, unmatched_clean })
}

/// Decode one mono linear-PCM WAV file to f64 samples in [−1, 1] at 16 kHz.
/// 48 kHz input is resampled; any other rate, channel count, or encoding is
/// a format error.
pub fn ingest(path: &Path) -> Result<Vec<f64>> {
    let fmt = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    let mut reader = hound::WavReader::open(path).map_err(|e| fmt(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(fmt(format!("expected mono, found {} channels", spec.channels)));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| fmt(e.to_string()))?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| fmt(e.to_string()))?,
        (f, b) => return Err(fmt(format!("unsupported encoding {f:?}/{b}-bit"))),
    };
    match spec.sample_rate {
        TARGET_RATE => Ok(samples),
        48_000 => Ok(resample::resample(&samples, 48_000, TARGET_RATE)),
        rate => Err(fmt(format!("unsupported sample rate {rate} Hz (need 16 or 48 kHz)"))),
    }
}

/// Decode both sides of a pair and enforce equal lengths.
pub fn load_pair(entry: &PairEntry) -> Result<UtterancePair> {
    let noisy = ingest(&entry.noisy_path)?;
    let clean = ingest(&entry.clean_path)?;
    if noisy.len() != clean.len() {
        return Err(Error::Corpus(format!(
            "pair '{}': noisy has {} samples, clean {}",
            entry.id,
            noisy.len(),
            clean.len()
        )));
    }
    Ok(UtterancePair { id: entry.id.clone(), noisy, clean })
}

/// Cut a pair into aligned non-overlapping `SEGMENT_LEN` windows. The final
/// partial window is zero-padded when it covers at least `TAIL_KEEP_MIN`
/// real samples, otherwise dropped.
pub fn segment(pair: &UtterancePair) -> Vec<Segment> {
    let len = pair.noisy.len();
    let mut out = Vec::new();
    let mut offset = 0usize;
    while offset < len {
        let real = (len - offset).min(SEGMENT_LEN);
        if real < SEGMENT_LEN && real < TAIL_KEEP_MIN {
            break;
        }
        let mut noisy = vec![0.0f64; SEGMENT_LEN];
        let mut clean = vec![0.0f64; SEGMENT_LEN];
        noisy[..real].copy_from_slice(&pair.noisy[offset..offset + real]);
        clean[..real].copy_from_slice(&pair.clean[offset..offset + real]);
        out.push(Segment {
            noisy,
            clean,
            source_id: pair.id.clone(),
            offset,
            real_len: real,
        });
        offset += SEGMENT_LEN;
    }
    out
}

/// Index batches for one epoch: a seeded shuffle of `0..n_segments` chopped
/// into `batch_size` groups, the final short batch retained. The epoch
/// number is folded into the seed so every epoch reshuffles reproducibly.
pub fn epoch_batches(
    n_segments: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut indices: Vec<usize> = (0..n_segments).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    indices.shuffle(&mut rng);
    indices.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Single-epoch convenience matching the training contract.
pub fn batch(n_segments: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    epoch_batches(n_segments, batch_size, seed, 0)
}

/// Write mono 16-bit PCM at 16 kHz (values clamped to [−1, 1]).
pub fn write_wav_16k(path: &Path, samples: &[f64]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: TARGET_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })?;
    for &s in samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer
            .write_sample(q)
            .map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })?;
    }
    writer
        .finalize()
        .map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_wav(path: &Path, rate: u32, channels: u16, samples: &[i16]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn scan_matches_stems_and_reports_strays() {
        let dir = tempfile::tempdir().unwrap();
        let noisy = dir.path().join("noisy");
        let clean = dir.path().join("clean");
        std::fs::create_dir_all(&noisy).unwrap();
        std::fs::create_dir_all(&clean).unwrap();
        for stem in ["a", "b"] {
            write_wav(&noisy.join(format!("{stem}.wav")), 16000, 1, &[0; 10]);
        }
        for stem in ["b", "c"] {
            write_wav(&clean.join(format!("{stem}.wav")), 16000, 1, &[0; 10]);
        }
        let scan = scan_corpus(&noisy, &clean).unwrap();
        assert_eq!(scan.pairs.len(), 1);
        assert_eq!(scan.pairs[0].id, "b");
        assert_eq!(scan.unmatched_noisy, vec!["a"]);
        assert_eq!(scan.unmatched_clean, vec!["c"]);
    }

    #[test]
    fn scan_with_no_overlap_is_a_corpus_error() {
        let dir = tempfile::tempdir().unwrap();
        let noisy = dir.path().join("noisy");
        let clean = dir.path().join("clean");
        std::fs::create_dir_all(&noisy).unwrap();
        std::fs::create_dir_all(&clean).unwrap();
        write_wav(&noisy.join("x.wav"), 16000, 1, &[0; 4]);
        write_wav(&clean.join("y.wav"), 16000, 1, &[0; 4]);
        assert!(matches!(scan_corpus(&noisy, &clean), Err(Error::Corpus(_))));
    }

    #[test]
    fn scan_order_is_lexicographic_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let noisy = dir.path().join("noisy");
        let clean = dir.path().join("clean");
        std::fs::create_dir_all(&noisy).unwrap();
        std::fs::create_dir_all(&clean).unwrap();
        for stem in ["zeta", "alpha", "mid"] {
            write_wav(&noisy.join(format!("{stem}.wav")), 16000, 1, &[0; 4]);
            write_wav(&clean.join(format!("{stem}.wav")), 16000, 1, &[0; 4]);
        }
        let ids: Vec<String> =
            scan_corpus(&noisy, &clean).unwrap().pairs.into_iter().map(|p| p.id).collect();
        assert_eq!(ids, vec!["alpha", "mid", "zeta"]);
    }

    #[test]
    fn ingest_decodes_16bit_full_scale() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fs.wav");
        write_wav(&path, 16000, 1, &[32767, -32768, 0]);
        let x = ingest(&path).unwrap();
        assert!((x[0] - 32767.0 / 32768.0).abs() < 1e-12);
        assert!((x[1] + 1.0).abs() < 1e-12);
        assert_eq!(x[2], 0.0);
    }

    #[test]
    fn ingest_rejects_stereo_and_odd_rates() {
        let dir = tempfile::tempdir().unwrap();
        let stereo = dir.path().join("st.wav");
        write_wav(&stereo, 16000, 2, &[0; 8]);
        assert!(matches!(ingest(&stereo), Err(Error::Format { .. })));
        let odd = dir.path().join("odd.wav");
        write_wav(&odd, 44100, 1, &[0; 8]);
        assert!(matches!(ingest(&odd), Err(Error::Format { .. })));
    }

    #[test]
    fn ingest_resamples_48k_tone_preserving_frequency() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tone48.wav");
        let sr = 48000.0;
        let samples: Vec<i16> = (0..96000)
            .map(|i| {
                let v = (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / sr).sin();
                (v * 20000.0).round() as i16
            })
            .collect();
        write_wav(&path, 48000, 1, &samples);
        let x = ingest(&path).unwrap();
        assert_eq!(x.len(), 32000);
        let mag = |freq: f64| {
            let mid = &x[800..x.len() - 800];
            let (mut re, mut im) = (0.0f64, 0.0);
            for (i, &v) in mid.iter().enumerate() {
                let ph = 2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0;
                re += v * ph.cos();
                im -= v * ph.sin();
            }
            (re * re + im * im).sqrt()
        };
        let peak = mag(1000.0);
        assert!(peak > mag(999.0) && peak > mag(1001.0), "peak must stay at 1 kHz");
    }

    #[test]
    fn ingest_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.wav");
        write_wav(&path, 16000, 1, &[5, -9, 1000, 31]);
        assert_eq!(ingest(&path).unwrap(), ingest(&path).unwrap());
    }

    fn pair_of_len(len: usize) -> UtterancePair {
        UtterancePair {
            id: "u".into(),
            noisy: (0..len).map(|i| (i % 97) as f64 / 100.0).collect(),
            clean: (0..len).map(|i| (i % 89) as f64 / 100.0).collect(),
        }
    }

    #[test]
    fn segmentation_tail_rule_matches_the_contract() {
        let segs = segment(&pair_of_len(48000));
        assert_eq!(segs.len(), 2);
        assert_eq!((segs[0].offset, segs[1].offset), (0, 24000));
        assert!(segs.iter().all(|s| s.real_len == SEGMENT_LEN));

        // 30000: the 6000-sample tail is under the keep threshold.
        assert_eq!(segment(&pair_of_len(30000)).len(), 1);

        // 23999: one sample short of a full window, kept zero-padded.
        let segs = segment(&pair_of_len(23999));
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].real_len, 23999);
        assert_eq!(segs[0].noisy[23999], 0.0);
        assert_eq!(segs[0].clean[23999], 0.0);

        // Below the tail threshold nothing survives.
        assert!(segment(&pair_of_len(7999)).is_empty());
        assert_eq!(segment(&pair_of_len(8000)).len(), 1);
    }

    #[test]
    fn segments_realign_to_the_utterance_prefix() {
        let pair = pair_of_len(60000);
        let segs = segment(&pair);
        let mut rebuilt = Vec::new();
        for s in &segs {
            assert_eq!(s.offset, rebuilt.len());
            rebuilt.extend_from_slice(&s.noisy[..s.real_len]);
        }
        assert_eq!(rebuilt.as_slice(), &pair.noisy[..rebuilt.len()]);
        // Noisy and clean come from identical offsets.
        for s in &segs {
            assert_eq!(&s.clean[..s.real_len], &pair.clean[s.offset..s.offset + s.real_len]);
        }
    }

    #[test]
    fn batching_sizes_and_determinism() {
        let batches = batch(35, 16, 7);
        let sizes: Vec<usize> = batches.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![16, 16, 3]);
        let mut seen: Vec<usize> = batches.into_iter().flatten().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..35).collect::<Vec<_>>());

        assert_eq!(batch(35, 16, 7), batch(35, 16, 7));
        let a: Vec<usize> = batch(128, 16, 1).into_iter().flatten().collect();
        let b: Vec<usize> = batch(128, 16, 2).into_iter().flatten().collect();
        assert_ne!(a, b, "different seeds must reorder 128 segments");
        let e0: Vec<usize> = epoch_batches(128, 16, 1, 0).into_iter().flatten().collect();
        let e1: Vec<usize> = epoch_batches(128, 16, 1, 1).into_iter().flatten().collect();
        assert_ne!(e0, e1, "consecutive epochs must reshuffle");
    }
}
