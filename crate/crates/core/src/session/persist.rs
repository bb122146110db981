//! Session directories and edit scripts.
//!
//! ```text
//! manifest.json        version, config, classes, split, cursor, checkpoint digests
//! data/*.csv           features, labels, split
//! checkpoints/*.bin    model weights
//! layouts/*.json       base layout and one per retrain boundary
//! history.jsonl        one edit-script line per history entry
//! metrics.json         metrics currently in effect
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{History, HistoryAction, HistoryEntry, RetrainConfig, Session, SessionConfig};
use crate::dataset::{ingest_csv, DatasetBundle, Split};
use crate::embedding::Layout2D;
use crate::error::{Error, Result};
use crate::feedback::{EditSource, EditTransaction, Move};
use crate::metrics::MetricsReport;
use crate::model::checkpoint;

pub const SESSION_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointRecord {
    file: String,
    sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    config: SessionConfig,
    class_names: Vec<String>,
    class_colors: Vec<String>,
    split: Vec<Split>,
    thumbnails: Vec<Option<String>>,
    visibility: Vec<bool>,
    cursor: usize,
    base_checkpoint: usize,
    base_metrics: MetricsReport,
    checkpoints: Vec<CheckpointRecord>,
}

/// One line of an edit script or of a session's `history.jsonl`.
///
/// Plain edits carry only `moves` and `source`. A line with `retrain` marks a
/// retrain boundary; sessions also record the resulting checkpoint, layout
/// file and metrics so they can be reloaded without retraining.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptLine {
    #[serde(default)]
    pub moves: Vec<Move>,
    #[serde(default)]
    pub source: EditSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrain: Option<RetrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
}

impl ScriptLine {
    pub fn edit(tx: &EditTransaction) -> Self {
        Self {
            moves: tx.moves.clone(),
            source: tx.source,
            created_at: tx.created_at,
            label: None,
            retrain: None,
            checkpoint: None,
            layout: None,
            metrics: None,
        }
    }

    pub fn transaction(&self) -> EditTransaction {
        EditTransaction {
            moves: self.moves.clone(),
            source: self.source,
            created_at: self.created_at,
        }
    }
}

pub fn read_edit_script(path: &Path) -> Result<Vec<ScriptLine>> {
    let file = fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.display().to_string()),
        _ => Error::Io(e),
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ScriptLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(parsed);
    }
    Ok(out)
}

pub fn write_edit_script(path: &Path, lines: &[ScriptLine]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for l in lines {
        serde_json::to_writer(&mut f, l)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.display().to_string()),
        _ => Error::Io(e),
    })
}

/// Writes the whole session under `dir`, creating it if needed. The manifest
/// is written last, so an interrupted save never looks complete.
pub fn save_session(session: &Session, dir: &Path) -> Result<()> {
    for sub in ["data", "checkpoints", "layouts"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let ds = session.dataset();
    ds.write_csv(&dir.join("data"))?;

    let mut records = Vec::with_capacity(session.checkpoints().len());
    for (i, model) in session.checkpoints().iter().enumerate() {
        let bytes = checkpoint::encode(model);
        let file = format!("checkpoints/ckpt-{i:04}.bin");
        fs::write(dir.join(&file), &bytes)?;
        records.push(CheckpointRecord {
            file,
            sha256: digest(&bytes),
        });
    }

    let history = session.history();
    fs::write(dir.join("layouts/base.json"), history.base_layout.to_json()?)?;
    fs::write(dir.join("layouts/current.json"), session.layout().to_json()?)?;
    let mut lines = Vec::with_capacity(history.len());
    for (i, e) in history.entries().iter().enumerate() {
        let mut line = match &e.action {
            HistoryAction::Edit { transaction } => ScriptLine::edit(transaction),
            HistoryAction::Retrain { config } => {
                let file = format!("layouts/entry-{i:04}.json");
                fs::write(dir.join(&file), e.layout.to_json()?)?;
                ScriptLine {
                    moves: Vec::new(),
                    source: EditSource::Human,
                    created_at: None,
                    label: None,
                    retrain: Some(config.clone()),
                    checkpoint: Some(e.checkpoint),
                    layout: Some(file),
                    metrics: Some(e.metrics.clone()),
                }
            }
        };
        line.label = e.label.clone();
        line.created_at = e.created_at;
        lines.push(line);
    }
    write_edit_script(&dir.join("history.jsonl"), &lines)?;
    write_json(&dir.join("metrics.json"), session.metrics())?;

    let manifest = Manifest {
        version: SESSION_VERSION,
        config: session.config().clone(),
        class_names: ds.class_names.clone(),
        class_colors: ds.class_colors.clone(),
        split: ds.splits.clone(),
        thumbnails: ds.thumbnails.clone(),
        visibility: session.visibility().to_vec(),
        cursor: history.cursor(),
        base_checkpoint: history.base_checkpoint,
        base_metrics: history.base_metrics.clone(),
        checkpoints: records,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

fn load_layout(dir: &Path, file: &str) -> Result<Layout2D> {
    Layout2D::from_json(&read_to_string(&dir.join(file))?)
}

/// Reads a session written by [`save_session`], verifying checkpoint digests.
pub fn load_session(dir: &Path) -> Result<Session> {
    let manifest_path = dir.join("manifest.json");
    let raw: serde_json::Value = serde_json::from_str(&read_to_string(&manifest_path)?)?;
    let version = raw
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Schema("manifest has no version".into()))?;
    if version != SESSION_VERSION as u64 {
        return Err(Error::Migration {
            found: version as u32,
            expected: SESSION_VERSION,
        });
    }
    let manifest: Manifest = serde_json::from_value(raw)?;

    let data = dir.join("data");
    let mut dataset: DatasetBundle = ingest_csv(&data.join("features.csv"), &data.join("labels.csv"), None, 0)?;
    if manifest.split.len() != dataset.len() {
        return Err(Error::Schema("manifest split does not match the data files".into()));
    }
    dataset.splits = manifest.split;
    dataset.class_names = manifest.class_names;
    dataset.class_colors = manifest.class_colors;
    dataset.thumbnails = manifest.thumbnails;
    dataset.validate()?;

    let mut checkpoints = Vec::with_capacity(manifest.checkpoints.len());
    for rec in &manifest.checkpoints {
        let path: PathBuf = dir.join(&rec.file);
        let bytes = fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.display().to_string()),
            _ => Error::Io(e),
        })?;
        let model = checkpoint::decode(&bytes, manifest.config.model.activation)?;
        if digest(&bytes) != rec.sha256 {
            return Err(Error::Checksum(rec.file.clone()));
        }
        checkpoints.push(model);
    }

    let base_layout = load_layout(dir, "layouts/base.json")?;
    let script = read_edit_script(&dir.join("history.jsonl"))?;
    let mut entries: Vec<HistoryEntry> = Vec::with_capacity(script.len());
    for (i, line) in script.into_iter().enumerate() {
        let (prev_layout, prev_ckpt, prev_metrics) = match entries.last() {
            Some(e) => (&e.layout, e.checkpoint, &e.metrics),
            None => (&base_layout, manifest.base_checkpoint, &manifest.base_metrics),
        };
        let entry = match line.retrain {
            Some(config) => {
                let missing = |what: &str| Error::Schema(format!("history line {} lacks {what}", i + 1));
                HistoryEntry {
                    action: HistoryAction::Retrain { config },
                    layout: load_layout(dir, line.layout.as_deref().ok_or_else(|| missing("a layout"))?)?,
                    checkpoint: line.checkpoint.ok_or_else(|| missing("a checkpoint"))?,
                    metrics: line.metrics.clone().ok_or_else(|| missing("metrics"))?,
                    label: line.label,
                    created_at: line.created_at,
                }
            }
            None => {
                let tx = line.transaction();
                let mut layout = prev_layout.clone();
                for mv in &tx.moves {
                    let slot = layout
                        .coords
                        .get_mut(mv.id)
                        .ok_or_else(|| Error::Schema(format!("history line {} moves unknown item {}", i + 1, mv.id)))?;
                    *slot = mv.new;
                }
                HistoryEntry {
                    action: HistoryAction::Edit { transaction: tx },
                    layout,
                    checkpoint: prev_ckpt,
                    metrics: prev_metrics.clone(),
                    label: line.label,
                    created_at: line.created_at,
                }
            }
        };
        entries.push(entry);
    }
    let history = History::from_parts(
        base_layout,
        manifest.base_checkpoint,
        manifest.base_metrics,
        entries,
        manifest.cursor,
    )?;
    Session::from_parts(dataset, manifest.config, checkpoints, history, manifest.visibility)
}

impl Session {
    /// Re-applies an edit script: edits through [`Session::apply_edits`],
    /// retrain lines by rerunning the recorded configuration.
    pub fn replay_script(&mut self, lines: &[ScriptLine]) -> Result<()> {
        for line in lines {
            match &line.retrain {
                Some(cfg) => {
                    self.retrain(cfg, |_| std::ops::ControlFlow::Continue(()))?;
                }
                None => {
                    let mut tx = line.transaction();
                    tx.source = EditSource::Replay;
                    if self.apply_edits(tx)?.is_none() {
                        continue;
                    }
                }
            }
            if line.label.is_some() {
                let idx = self.history().cursor() - 1;
                self.set_label(idx, line.label.clone())?;
            }
        }
        Ok(())
    }
}
