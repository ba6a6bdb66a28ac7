//! Dataset files, canonical snapshot files and run configuration.
//!
//! Datasets are newline-delimited JSON, one record per line. Snapshots are written as
//! canonical JSON (sorted keys, two-space indentation, every float with 17 significant
//! digits) so identical runs produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::cluster::ClusteringConfig;
use crate::labeling::LabelSource;
use crate::layout::{PhysicsConfig, StopRule};
use crate::model::{DataRecord, ModelError, RawRecord, RecordValidator, TimestepSnapshot};
use crate::similarity::ThresholdPolicy;
use crate::temporal::{TimeUnit, TimestepSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: invalid JSON: {source}")]
    LineJson {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {source}")]
    LineRecord {
        line: usize,
        #[source]
        source: ModelError,
    },
    #[error("dataset contains no records")]
    EmptyDataset,
    #[error("snapshot schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: u64, expected: u32 },
    #[error("malformed snapshot: {0}")]
    MalformedSnapshot(String),
    #[error("cannot encode non-finite number {0} as JSON")]
    NonFinite(f64),
    #[error("invalid config: {0}")]
    Config(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads and validates a dataset, sorted by `(timestamp, id)`. The first record fixes the
/// embedding dimension; the first bad line aborts the load.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<DataRecord>, IoError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    parse_dataset(BufReader::new(file)).map_err(|e| match e {
        IoError::Io { source, .. } => IoError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

pub fn parse_dataset(reader: impl BufRead) -> Result<Vec<DataRecord>, IoError> {
    let mut validator = RecordValidator::new();
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| IoError::Io {
            path: String::from("<reader>"),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|source| IoError::LineJson { line: line_no, source })?;
        let record = validator
            .validate(raw)
            .map_err(|source| IoError::LineRecord { line: line_no, source })?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(IoError::EmptyDataset);
    }
    records.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.id.cmp(&b.id)));
    Ok(records)
}

pub fn write_dataset(records: &[DataRecord], path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(&RawRecord::from(r)).expect("raw record serializes");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn write_number(out: &mut String, n: &serde_json::Number) -> Result<(), IoError> {
    if let Some(u) = n.as_u64() {
        write!(out, "{u}").unwrap();
    } else if let Some(i) = n.as_i64() {
        write!(out, "{i}").unwrap();
    } else {
        let f = n.as_f64().expect("json number");
        if !f.is_finite() {
            return Err(IoError::NonFinite(f));
        }
        write!(out, "{f:.16e}").unwrap();
    }
    Ok(())
}

fn write_canonical(out: &mut String, v: &Value, indent: usize) -> Result<(), IoError> {
    let pad = |out: &mut String, level: usize| {
        out.push('\n');
        out.extend(std::iter::repeat_n(' ', level * 2));
    };
    match v {
        Value::Null | Value::Bool(_) | Value::String(_) => out.push_str(&v.to_string()),
        Value::Number(n) => write_number(out, n)?,
        Value::Array(items) if items.is_empty() => out.push_str("[]"),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                pad(out, indent + 1);
                write_canonical(out, item, indent + 1)?;
            }
            pad(out, indent);
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                pad(out, indent + 1);
                out.push_str(&Value::String(k.clone()).to_string());
                out.push_str(": ");
                write_canonical(out, &map[k], indent + 1)?;
            }
            pad(out, indent);
            out.push('}');
        }
    }
    Ok(())
}

/// Canonical JSON text for any serializable value.
pub fn to_canonical_json<S: Serialize>(value: &S) -> Result<String, IoError> {
    let v = serde_json::to_value(value).map_err(|e| IoError::MalformedSnapshot(e.to_string()))?;
    let mut out = String::new();
    write_canonical(&mut out, &v, 0)?;
    out.push('\n');
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct SnapshotFile {
    schema_version: u32,
    #[serde(flatten)]
    snapshot: TimestepSnapshot,
}

pub fn snapshot_to_string(snapshot: &TimestepSnapshot) -> Result<String, IoError> {
    to_canonical_json(&SnapshotFile {
        schema_version: SCHEMA_VERSION,
        snapshot: snapshot.clone(),
    })
}

pub fn snapshot_from_str(text: &str) -> Result<TimestepSnapshot, IoError> {
    let v: Value = serde_json::from_str(text).map_err(|e| IoError::MalformedSnapshot(e.to_string()))?;
    let found = v
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| IoError::MalformedSnapshot("missing schema_version".into()))?;
    if found != u64::from(SCHEMA_VERSION) {
        return Err(IoError::SchemaVersionMismatch {
            found,
            expected: SCHEMA_VERSION,
        });
    }
    let file: SnapshotFile = serde_json::from_value(v).map_err(|e| IoError::MalformedSnapshot(e.to_string()))?;
    Ok(file.snapshot)
}

pub fn save_snapshot(snapshot: &TimestepSnapshot, path: impl AsRef<Path>) -> Result<(), IoError> {
    let path = path.as_ref();
    fs::write(path, snapshot_to_string(snapshot)?).map_err(io_err(path))
}

pub fn load_snapshot(path: impl AsRef<Path>) -> Result<TimestepSnapshot, IoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    snapshot_from_str(&text)
}

mod timestep_text {
    use super::TimestepSpec;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(spec: &TimestepSpec, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&spec.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<TimestepSpec, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Everything a headless or served run needs besides the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Batch width in `<count> <unit>` form, e.g. `3 mo`.
    #[serde(with = "timestep_text")]
    pub timestep: TimestepSpec,
    /// Start of batch 0; the earliest record when unset.
    pub origin: Option<DateTime<Utc>>,
    pub physics: PhysicsConfig,
    pub threshold: ThresholdPolicy,
    pub clustering: ClusteringConfig,
    pub labels: LabelSource,
    pub z_spacing: f64,
    /// Master seed; overrides `physics.seed`.
    pub seed: u64,
    /// Relaxation budget per batch.
    pub relax: StopRule,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            timestep: TimestepSpec::new(3, TimeUnit::Months).expect("valid default"),
            origin: None,
            physics: PhysicsConfig::default(),
            threshold: ThresholdPolicy::default(),
            clustering: ClusteringConfig::default(),
            labels: LabelSource::default(),
            z_spacing: 1.0,
            seed: 0,
            relax: StopRule::default(),
        }
    }
}

impl RunConfig {
    pub fn physics(&self) -> PhysicsConfig {
        PhysicsConfig {
            seed: self.seed,
            ..self.physics.clone()
        }
    }

    pub fn validate(&self) -> Result<(), IoError> {
        self.physics.validate().map_err(|e| IoError::Config(e.to_string()))?;
        self.clustering.validate().map_err(|e| IoError::Config(e.to_string()))?;
        if !(self.z_spacing.is_finite() && self.z_spacing > 0.0) {
            return Err(IoError::Config("z_spacing must be positive".into()));
        }
        if let ThresholdPolicy::Dynamic { c } = self.threshold {
            if !(c > 1.0) {
                return Err(IoError::Config("threshold constant C must be > 1".into()));
            }
        }
        match self.labels {
            LabelSource::TfIdf { m } | LabelSource::ExternalModel { m, .. } if m == 0 => {
                return Err(IoError::Config("label term count m must be >= 1".into()))
            }
            LabelSource::ExternalModel { sample_size: 0, .. } => {
                return Err(IoError::Config("sample_size must be >= 1".into()))
            }
            _ => {}
        }
        Ok(())
    }

    /// Reads a TOML config, or JSON when the file ends in `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, IoError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| IoError::Config(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| IoError::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::LabelBackend;
    use crate::model::{ClusterLabels, ClusterRecord, HullSlice, SnapshotNode};
    use proptest::prelude::*;

    fn line(id: &str, ts: &str, dim: usize) -> String {
        let emb: Vec<f64> = (0..dim).map(|i| 0.5 + i as f64).collect();
        serde_json::json!({"id": id, "timestamp": ts, "kind": "text", "text": "hello", "embedding": emb}).to_string()
    }

    #[test]
    fn loads_and_sorts() {
        let mut text = String::new();
        for i in (0..12).rev() {
            text.push_str(&line(&format!("r{i:02}"), &format!("2025-01-{:02}T00:00:00Z", i + 1), 4));
            text.push('\n');
        }
        let recs = parse_dataset(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 12);
        assert!(recs.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        assert_eq!(recs[0].id, "r00");
    }

    #[test]
    fn names_the_offending_line() {
        let mut text = String::new();
        for i in 0..10 {
            let dim = if i == 6 { 383 } else { 384 };
            text.push_str(&line(&format!("r{i}"), "2025-01-01T00:00:00Z", dim));
            text.push('\n');
        }
        match parse_dataset(text.as_bytes()) {
            Err(IoError::LineRecord { line: 7, source: ModelError::DimensionMismatch { .. } }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let err = parse_dataset("{not json".as_bytes()).unwrap_err();
        assert!(matches!(err, IoError::LineJson { line: 1, .. }));
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(parse_dataset("".as_bytes()), Err(IoError::EmptyDataset)));
        assert!(matches!(parse_dataset("\n \n".as_bytes()), Err(IoError::EmptyDataset)));
    }

    fn sample_snapshot(x: f64) -> TimestepSnapshot {
        TimestepSnapshot {
            batch_index: 2,
            threshold: Some(0.77343),
            stress: 1.0 / 3.0,
            nodes: vec![
                SnapshotNode { id: "a".into(), batch_index: 0, x, y: -0.0, z: 0.0 },
                SnapshotNode { id: "b".into(), batch_index: 2, x: 1e-300, y: 2.5, z: 2.0 },
            ],
            clusters: vec![ClusterRecord {
                cluster_id: 4,
                parent_id: Some(1),
                member_ids: vec!["a".into()],
                labels: ClusterLabels { tfidf: vec!["covid".into()], llm: None },
                hulls: vec![HullSlice { batch_index: 0, z: 0.0, polygon: vec![[x, -0.0]] }],
            }],
            misc_ids: vec!["b".into()],
        }
    }

    #[test]
    fn snapshot_text_is_canonical() {
        let s = sample_snapshot(0.1);
        let text = snapshot_to_string(&s).unwrap();
        assert!(text.contains("\"schema_version\": 1"));
        assert!(text.contains("1.0000000000000001e-1"));
        let back = snapshot_from_str(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(snapshot_to_string(&back).unwrap(), text);
        // Keys come out sorted.
        let keys: Vec<usize> = ["batch_index", "clusters", "misc_ids", "nodes", "schema_version", "stress", "threshold"]
            .iter()
            .map(|k| text.find(&format!("\"{k}\"")).unwrap())
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn future_schema_is_refused() {
        let text = snapshot_to_string(&sample_snapshot(0.1)).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(matches!(
            snapshot_from_str(&text),
            Err(IoError::SchemaVersionMismatch { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn snapshot_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        let s = sample_snapshot(-12.75);
        save_snapshot(&s, &p).unwrap();
        assert_eq!(load_snapshot(&p).unwrap(), s);
    }

    #[test]
    fn config_from_toml() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        fs::write(
            &p,
            "timestep = \"6 min\"\nseed = 9\n[physics]\nbeta = 2.0\n[labels]\nsource = \"external_model\"\nsample_size = 4\n",
        )
        .unwrap();
        let cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.timestep.to_string(), "6 min");
        assert_eq!(cfg.physics().seed, 9);
        assert_eq!(cfg.physics.beta, 2.0);
        assert_eq!(cfg.physics.dt, 0.02);
        assert_eq!(
            cfg.labels,
            LabelSource::ExternalModel { sample_size: 4, max_label_chars: 60, m: 3, backend: LabelBackend::Http }
        );
        fs::write(&p, "z_spacing = -1.0\n").unwrap();
        assert!(matches!(RunConfig::load(&p), Err(IoError::Config(_))));
    }

    proptest! {
        #[test]
        fn any_finite_coordinates_round_trip_bytewise(x in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO) {
            let s = sample_snapshot(x);
            let text = snapshot_to_string(&s).unwrap();
            let back = snapshot_from_str(&text).unwrap();
            prop_assert_eq!(back.nodes[0].x.to_bits(), x.to_bits());
            prop_assert_eq!(snapshot_to_string(&back).unwrap(), text);
        }

        #[test]
        fn records_round_trip_through_dataset_lines(emb in prop::collection::vec(-1e6f64..1e6, 2..12)) {
            prop_assume!(emb.iter().any(|v| *v != 0.0));
            let text = line("only", "2025-02-20T10:11:12.5Z", 0).replace("[]", &serde_json::to_string(&emb).unwrap());
            let recs = parse_dataset(text.as_bytes()).unwrap();
            let again = serde_json::to_string(&RawRecord::from(&recs[0])).unwrap();
            let recs2 = parse_dataset(again.as_bytes()).unwrap();
            prop_assert_eq!(recs, recs2);
        }
    }
}
