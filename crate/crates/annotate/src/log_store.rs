use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::{Choice, Error, Judgment, Result};

/// Outcome of recording a judgment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recorded {
    /// A new line was appended and synced.
    Created,
    /// The same choice was already on record; nothing was written.
    Duplicate,
}

/// Newline-terminated records of `bytes`, plus the length of that prefix.
fn parse_complete_lines(bytes: &[u8], path: &Path) -> Result<(Vec<Judgment>, usize)> {
    let end = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let mut out = Vec::new();
    for (n, line) in bytes[..end].split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let j = serde_json::from_slice(line).map_err(|e| Error::CorruptLog {
            path: path.to_path_buf(),
            line: n + 1,
            detail: e.to_string(),
        })?;
        out.push(j);
    }
    Ok((out, end))
}

/// Reads every complete record of a judgment log without modifying it.
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<Judgment>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Core(dser_core::Error::FileNotFound(path.to_path_buf())),
        _ => Error::Io(e),
    })?;
    Ok(parse_complete_lines(&bytes, path)?.0)
}

/// The append-only judgment log and an index of its contents.
#[derive(Debug)]
pub struct JudgmentLog {
    path: PathBuf,
    file: File,
    records: Vec<Judgment>,
    index: HashMap<(String, String), Choice>,
}

impl JudgmentLog {
    /// Opens or creates the log. A partial trailing line left by a crash
    /// mid-append is cut off; it was never acknowledged.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let (records, end) = parse_complete_lines(&bytes, &path)?;
        if end < bytes.len() {
            log::warn!(
                "{}: dropping {} bytes of unterminated trailing record",
                path.display(),
                bytes.len() - end
            );
            file.set_len(end as u64)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::End(0))?;
        let mut index = HashMap::new();
        for j in &records {
            let key = (j.pair_id.clone(), j.annotator.clone());
            if let Some(prev) = index.insert(key, j.choice) {
                if prev != j.choice {
                    log::warn!(
                        "{}: conflicting judgments for {} by {}; keeping the later one",
                        path.display(),
                        j.pair_id,
                        j.annotator
                    );
                }
            }
        }
        Ok(Self {
            path,
            file,
            records,
            index,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> &[Judgment] {
        &self.records
    }

    pub fn choice(&self, pair_id: &str, annotator: &str) -> Option<Choice> {
        self.index.get(&(pair_id.to_string(), annotator.to_string())).copied()
    }

    /// Appends `j` and syncs it, unless the same choice is already on
    /// record. A different earlier choice is a conflict.
    pub fn record(&mut self, j: Judgment) -> Result<Recorded> {
        if let Some(existing) = self.choice(&j.pair_id, &j.annotator) {
            if existing == j.choice {
                return Ok(Recorded::Duplicate);
            }
            return Err(Error::Conflict {
                pair_id: j.pair_id,
                annotator: j.annotator,
                existing,
            });
        }
        let mut line = serde_json::to_vec(&j)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        self.index.insert((j.pair_id.clone(), j.annotator.clone()), j.choice);
        self.records.push(j);
        Ok(Recorded::Created)
    }
}
