//! Pairwise preference collection for stage-3 fine-tuning.
//!
//! A pairs manifest (immutable JSONL) lists the comparisons to show; each
//! records which of its two candidates is presented as "A". Judgments go to
//! an append-only JSONL log that is synced before the request is
//! acknowledged. [`export_dpo_dataset`] turns the log back into
//! [`PreferencePair`]s.

mod log_store;
mod manifest;
mod server;

pub use log_store::{read_log, JudgmentLog, Recorded};
pub use manifest::{assign_a, Manifest, ManifestPair};
pub use server::{router, serve, AppState, ServiceConfig, TaskPayload, DEFAULT_PORT};

use std::path::PathBuf;

use dser_core::PreferencePair;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown pair {0}")]
    UnknownPair(String),
    #[error("pair {pair_id} already judged {existing:?} by {annotator}")]
    Conflict {
        pair_id: String,
        annotator: String,
        existing: Choice,
    },
    #[error("bad manifest {path}: {detail}")]
    BadManifest { path: PathBuf, detail: String },
    #[error("corrupt judgment log {path} line {line}: {detail}")]
    CorruptLog { path: PathBuf, line: usize, detail: String },
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] dser_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
    #[serde(rename = "skip")]
    Skip,
}

/// One annotator decision as stored in the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Judgment {
    pub pair_id: String,
    pub choice: Choice,
    pub annotator: String,
    /// RFC 3339 wall-clock time of the first acknowledgment.
    pub timestamp: String,
}

/// Result of turning a judgment log into training pairs.
#[derive(Debug, Clone, Default)]
pub struct Export {
    pub pairs: Vec<PreferencePair>,
    /// Judgments whose pair is not in the manifest.
    pub orphans: Vec<Judgment>,
}

/// De-randomizes every non-skip judgment into a winner/loser pair. Skips
/// are dropped; judgments for pairs missing from the manifest are reported
/// as orphans.
pub fn export_dpo_dataset(judgments: &[Judgment], manifest: &Manifest) -> Result<Export> {
    let mut out = Export::default();
    for j in judgments {
        let Some(pair) = manifest.get(&j.pair_id) else {
            log::warn!("orphan judgment for unknown pair {}", j.pair_id);
            out.orphans.push(j.clone());
            continue;
        };
        let shown_a = pair.a_index;
        let winner = match j.choice {
            Choice::Skip => continue,
            Choice::A => shown_a,
            Choice::B => 1 - shown_a,
        };
        out.pairs.push(PreferencePair::new(
            format!("{}@{}", j.pair_id, j.annotator),
            pair.wav.clone(),
            pair.candidates[winner].clone(),
            pair.candidates[1 - winner].clone(),
        )?);
    }
    Ok(out)
}

/// Reads a log and manifest from disk and exports them. A partial trailing
/// line in the log is ignored, never repaired.
pub fn export_files(log: impl AsRef<std::path::Path>, manifest: impl AsRef<std::path::Path>) -> Result<Export> {
    let manifest = Manifest::load(manifest)?;
    export_dpo_dataset(&read_log(log)?, &manifest)
}
