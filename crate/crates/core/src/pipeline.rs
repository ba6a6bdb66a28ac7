//! Headless replay: run every batch of a dataset and write the snapshots to a directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::engine::{earliest, split_into_batches, Engine, EngineError};
use crate::io::{save_snapshot, to_canonical_json, IoError, RunConfig};
use crate::labeling::LabelClient;
use crate::lineage::build_lineage;
use crate::model::{DataRecord, TimestepSnapshot};
use crate::temporal::TemporalError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchLimit {
    All,
    First(usize),
}

impl std::str::FromStr for BatchLimit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(BatchLimit::All);
        }
        s.parse().map(BatchLimit::First).map_err(|_| format!("expected `all` or a count, got {s:?}"))
    }
}

pub fn snapshot_file_name(batch: usize) -> String {
    format!("snapshot-{batch:04}.json")
}

/// Runs `records` batch by batch. When `out_dir` is given, each snapshot goes to
/// `snapshot-NNNN.json` and the lineage forest to `lineage.json`.
pub fn run_headless(
    records: Vec<DataRecord>,
    config: &RunConfig,
    out_dir: Option<&Path>,
    limit: BatchLimit,
    client: Option<Arc<dyn LabelClient>>,
) -> Result<Vec<Arc<TimestepSnapshot>>, PipelineError> {
    config.validate()?;
    let Some(first) = earliest(&records) else {
        return Err(IoError::EmptyDataset.into());
    };
    let mut engine: Engine<f64> = Engine::new(config.clone(), first);
    if let Some(c) = client {
        engine = engine.with_label_client(c);
    }
    let mut batches = split_into_batches(records, engine.origin(), &config.timestep)?;
    if let BatchLimit::First(n) = limit {
        batches.truncate(n);
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|source| IoError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    for batch in batches {
        let snap = engine.advance(batch)?;
        if let Some(dir) = out_dir {
            save_snapshot(&snap, dir.join(snapshot_file_name(snap.batch_index)))?;
        }
    }
    if let Some(dir) = out_dir {
        let path: PathBuf = dir.join("lineage.json");
        let text = to_canonical_json(&build_lineage(engine.snapshots()))?;
        fs::write(&path, text).map_err(|source| IoError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(engine.snapshots().to_vec())
}
