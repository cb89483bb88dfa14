use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::Checkpoint;

use super::record::{EpochRecord, RunRecord};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const RECORD_FILE: &str = "record.json";
pub const TIMING_FILE: &str = "timing.json";
pub const POINTER_FILE: &str = "best.txt";
pub const LOCK_FILE: &str = ".lock";
pub const CHECKPOINT_DIR: &str = "checkpoints";
const RESUME_CHECKPOINT: &str = "resume.ckpt";

/// Output directory of one stage, held under an exclusive lock file.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates the directory if needed and takes the lock. Fails if another
    /// writer holds it.
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root.join(CHECKPOINT_DIR)).map_err(|e| Error::io(root, e))?;
        let lock = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(Error::State(format!(
                    "run directory {} is locked by another writer (remove {} if stale)",
                    root.display(),
                    lock.display()
                )));
            }
            Err(e) => return Err(Error::io(&lock, e)),
        }
        Ok(RunDir {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    /// Replaces the metrics log with `records`.
    pub fn reset_metrics(&self, records: &[EpochRecord]) -> Result<()> {
        let mut text = String::new();
        for r in records {
            text.push_str(&metrics_line(r));
            text.push('\n');
        }
        self.write_text(METRICS_FILE, &text)
    }

    pub fn append_metrics(&self, record: &EpochRecord) -> Result<()> {
        let p = self.path(METRICS_FILE);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&p)
            .map_err(|e| Error::io(&p, e))?;
        writeln!(f, "{}", metrics_line(record)).map_err(|e| Error::io(&p, e))
    }

    pub fn read_metrics(&self) -> Result<Vec<EpochRecord>> {
        read_metrics(&self.path(METRICS_FILE))
    }

    pub fn checkpoint_path(&self, name: &str) -> PathBuf {
        self.root.join(CHECKPOINT_DIR).join(name)
    }

    pub fn save_checkpoint(&self, ck: &Checkpoint, name: &str) -> Result<PathBuf> {
        let p = self.checkpoint_path(name);
        ck.save(&p)?;
        Ok(p)
    }

    pub fn save_resume(&self, ck: &Checkpoint) -> Result<()> {
        self.save_checkpoint(ck, RESUME_CHECKPOINT).map(|_| ())
    }

    pub fn load_resume(&self) -> Result<Option<Checkpoint>> {
        let p = self.checkpoint_path(RESUME_CHECKPOINT);
        if p.exists() {
            Checkpoint::load(&p).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Points `best.txt` at a checkpoint inside this directory.
    pub fn set_pointer(&self, checkpoint: &Path) -> Result<()> {
        let rel = checkpoint.strip_prefix(&self.root).unwrap_or(checkpoint);
        self.write_text(POINTER_FILE, &format!("{}\n", rel.display()))
    }

    pub fn write_record(&self, record: &RunRecord) -> Result<()> {
        let json = serde_json::to_string_pretty(record).expect("records serialize");
        self.write_text(RECORD_FILE, &(json + "\n"))?;
        self.write_text(
            TIMING_FILE,
            &format!("{{\"wall_clock_secs\": {:.3}}}\n", record.wall_clock_secs),
        )
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.root.join(LOCK_FILE));
    }
}

fn metrics_line(r: &EpochRecord) -> String {
    serde_json::to_string(r).expect("records serialize")
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            Error::Checkpoint(format!("{}:{}: bad metrics line: {e}", path.display(), i + 1))
        })?);
    }
    Ok(out)
}

/// Resolves the checkpoint a stage directory points at. `path` may be the
/// stage directory or a checkpoint file.
pub fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    if path.is_file() {
        return Ok(path.to_path_buf());
    }
    let pointer = path.join(POINTER_FILE);
    let text = fs::read_to_string(&pointer).map_err(|_| Error::MissingArtifact {
        path: pointer.clone(),
        reason: "no finished stage output here".into(),
    })?;
    let target = path.join(text.trim());
    if !target.is_file() {
        return Err(Error::MissingArtifact {
            path: target,
            reason: "checkpoint named by best.txt does not exist".into(),
        });
    }
    Ok(target)
}
