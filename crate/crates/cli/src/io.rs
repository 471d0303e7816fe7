//! Dataset records, path handling and the output manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dser_core::audio::Waveform;
use dser_core::model::MODEL_VERSION;
use dser_core::stages::load_audio_16k;
use dser_core::EmotionSequence;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// A track with optional ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub id: String,
    pub wav: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<EmotionSequence>,
}

/// One sliding-window target sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeqRecord {
    pub id: String,
    pub wav: PathBuf,
    pub sequence: EmotionSequence,
}

/// Records whose audio path can be re-based.
pub trait HasWav {
    fn wav_mut(&mut self) -> &mut PathBuf;
}

impl HasWav for TrackRecord {
    fn wav_mut(&mut self) -> &mut PathBuf {
        &mut self.wav
    }
}

impl HasWav for SeqRecord {
    fn wav_mut(&mut self) -> &mut PathBuf {
        &mut self.wav
    }
}

impl HasWav for dser_core::LabeledClip {
    fn wav_mut(&mut self) -> &mut PathBuf {
        &mut self.audio_path
    }
}

impl HasWav for dser_core::PreferencePair {
    fn wav_mut(&mut self) -> &mut PathBuf {
        &mut self.audio_path
    }
}

/// Fails with a validation error unless `path` exists, and makes it absolute.
pub fn existing(path: &Path) -> CliResult<PathBuf> {
    std::fs::canonicalize(path).map_err(|_| CliError::Validation(format!("input not found: {}", path.display())))
}

/// Reads a JSONL dataset; relative audio paths are resolved against the
/// dataset's directory.
pub fn read_records<T: DeserializeOwned + HasWav>(path: &Path) -> CliResult<Vec<T>> {
    let path = existing(path)?;
    let base = path.parent().unwrap_or(Path::new("/")).to_path_buf();
    let mut records: Vec<T> = dser_core::jsonl::read_all(&path).map_err(|e| CliError::Validation(e.to_string()))?;
    if records.is_empty() {
        return Err(CliError::Validation(format!("{} has no records", path.display())));
    }
    for r in &mut records {
        let wav = r.wav_mut();
        if wav.is_relative() {
            *wav = base.join(&*wav);
        }
    }
    Ok(records)
}

/// Writes a JSONL dataset with audio paths relative to its directory where
/// possible, so an output tree can be moved or compared byte for byte.
pub fn write_records<T: Serialize + HasWav + Clone>(path: &Path, records: &[T]) -> CliResult<()> {
    let base = path.parent().map(absolute).unwrap_or_default();
    let rebased: Vec<T> = records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            let wav = r.wav_mut();
            if let Ok(rel) = absolute(wav).strip_prefix(&base) {
                *wav = rel.to_path_buf();
            }
            r
        })
        .collect();
    dser_core::jsonl::write_all(path, &rebased)?;
    Ok(())
}

fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf()))
}

pub fn load_audio(path: &Path) -> CliResult<Waveform> {
    Ok(load_audio_16k(path)?)
}

pub fn create_out_dir(out: &Path) -> CliResult<PathBuf> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Validation(format!("cannot create output directory {}: {e}", out.display())))?;
    Ok(absolute(out))
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct OutputManifest {
    package_version: String,
    model_format_version: u32,
    runs: BTreeMap<String, RunEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunEntry {
    config_hash: String,
    seed: u64,
    outputs: Vec<String>,
}

/// Records `command`'s config hash, seed and outputs in `out/manifest.json`.
/// Later runs of the same command replace its entry.
pub fn record_run(out: &Path, command: &str, cfg: &RunConfig, outputs: &[PathBuf]) -> CliResult<()> {
    let path = out.join("manifest.json");
    let mut manifest: OutputManifest = match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).unwrap_or_default(),
        Err(_) => OutputManifest::default(),
    };
    manifest.package_version = env!("CARGO_PKG_VERSION").to_string();
    manifest.model_format_version = MODEL_VERSION;
    let mut names: Vec<String> = outputs
        .iter()
        .map(|p| {
            absolute(p)
                .strip_prefix(out)
                .map(|r| r.display().to_string())
                .unwrap_or_else(|_| p.display().to_string())
        })
        .collect();
    names.sort();
    manifest.runs.insert(
        command.to_string(),
        RunEntry {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            outputs: names,
        },
    );
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Minimal CSV table writer.
pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
