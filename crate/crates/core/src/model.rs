//! Shared domain types: input records, layout nodes, similarity edges and frozen snapshots.

use std::collections::{BTreeMap, HashSet};

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("embedding has {found} dimensions, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding has a non-finite entry at index {index}")]
    NonFiniteEmbedding { index: usize },
    #[error("embedding is the zero vector")]
    ZeroEmbedding,
    #[error("embedding dimension {0} is below the minimum of 2")]
    DimensionTooSmall(usize),
    #[error("cannot parse timestamp {0:?}")]
    UnparseableTimestamp(String),
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("record kind {0:?} is not one of \"text\" or \"image\"")]
    UnknownKind(String),
    #[error("record is missing required field `{0}`")]
    MissingField(&'static str),
    #[error("image record {0:?} has no description")]
    MissingDescription(String),
}

/// Content carried by a record. Images stay opaque references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Payload {
    Text {
        text: String,
    },
    Image {
        image_path: String,
        description: Option<String>,
    },
}

/// One validated input tuple: timestamp, payload and embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRecord {
    pub id: String,
    pub timestamp: DateTime<Utc>,
    pub payload: Payload,
    pub embedding: Vec<f64>,
}

impl DataRecord {
    pub fn dim(&self) -> usize {
        self.embedding.len()
    }

    /// Text used for topic labeling: the text itself, or an image's description.
    pub fn document_text(&self) -> Result<&str, ModelError> {
        match &self.payload {
            Payload::Text { text } => Ok(text),
            Payload::Image {
                description: Some(d),
                ..
            } => Ok(d),
            Payload::Image {
                description: None, ..
            } => Err(ModelError::MissingDescription(self.id.clone())),
        }
    }
}

/// A record as it appears on one line of a dataset file, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub timestamp: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub embedding: Vec<f64>,
}

impl From<&DataRecord> for RawRecord {
    fn from(r: &DataRecord) -> Self {
        let (kind, text, image_path, description) = match &r.payload {
            Payload::Text { text } => ("text", Some(text.clone()), None, None),
            Payload::Image {
                image_path,
                description,
            } => ("image", None, Some(image_path.clone()), description.clone()),
        };
        RawRecord {
            id: r.id.clone(),
            timestamp: r.timestamp.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true),
            kind: kind.to_string(),
            text,
            image_path,
            description,
            embedding: r.embedding.clone(),
        }
    }
}

/// Parses an ISO-8601 instant. Offsets are converted to UTC; naive values are read as UTC.
pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, ModelError> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t.and_utc());
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight").and_utc());
    }
    Err(ModelError::UnparseableTimestamp(s.to_string()))
}

fn check_embedding(embedding: &[f64], expected_dim: usize) -> Result<(), ModelError> {
    if embedding.len() != expected_dim {
        return Err(ModelError::DimensionMismatch {
            expected: expected_dim,
            found: embedding.len(),
        });
    }
    if expected_dim < 2 {
        return Err(ModelError::DimensionTooSmall(expected_dim));
    }
    if let Some(index) = embedding.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteEmbedding { index });
    }
    if embedding.iter().all(|v| *v == 0.0) {
        return Err(ModelError::ZeroEmbedding);
    }
    Ok(())
}

/// Validates a single candidate record against the dataset dimension.
///
/// Uniqueness of ids needs dataset context; see [`RecordValidator`].
pub fn validate_record(raw: RawRecord, expected_dim: usize) -> Result<DataRecord, ModelError> {
    check_embedding(&raw.embedding, expected_dim)?;
    let timestamp = parse_timestamp(&raw.timestamp)?;
    let payload = match raw.kind.as_str() {
        "text" => Payload::Text {
            text: raw.text.ok_or(ModelError::MissingField("text"))?,
        },
        "image" => {
            let image_path = raw.image_path.ok_or(ModelError::MissingField("image_path"))?;
            match raw.description {
                Some(d) if !d.trim().is_empty() => Payload::Image {
                    image_path,
                    description: Some(d),
                },
                _ => return Err(ModelError::MissingDescription(raw.id)),
            }
        }
        other => return Err(ModelError::UnknownKind(other.to_string())),
    };
    Ok(DataRecord {
        id: raw.id,
        timestamp,
        payload,
        embedding: raw.embedding,
    })
}

/// Validates a stream of records that share one dimension and one id namespace.
#[derive(Debug, Default)]
pub struct RecordValidator {
    dim: Option<usize>,
    seen: HashSet<String>,
}

impl RecordValidator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fixes the expected dimension up front instead of inferring it from the first record.
    pub fn with_dim(dim: usize) -> Self {
        RecordValidator {
            dim: Some(dim),
            seen: HashSet::new(),
        }
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn validate(&mut self, raw: RawRecord) -> Result<DataRecord, ModelError> {
        let dim = *self.dim.get_or_insert(raw.embedding.len());
        if self.seen.contains(&raw.id) {
            return Err(ModelError::DuplicateId(raw.id));
        }
        let record = validate_record(raw, dim)?;
        self.seen.insert(record.id.clone());
        Ok(record)
    }
}

/// Simulation state of one node. Z is pinned to the node's batch level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutNode<T> {
    pub record_id: String,
    pub position: [T; 3],
    pub velocity: [T; 2],
    pub base_mass: T,
    pub batch_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeClass {
    Attractive,
    Repulsive,
}

/// One pair of the complete similarity graph, `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityEdge<T> {
    pub a: usize,
    pub b: usize,
    pub similarity: T,
    pub ideal_distance: T,
    pub spring_constant: T,
    pub classification: EdgeClass,
}

impl<T: Scalar> SimilarityEdge<T> {
    /// Builds the edge for an unordered pair. `tau == None` means thresholding is off and
    /// every edge attracts.
    pub fn new(i: usize, j: usize, similarity: T, tau: Option<T>) -> Self {
        debug_assert_ne!(i, j);
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        SimilarityEdge {
            a,
            b,
            similarity,
            ideal_distance: crate::similarity::ideal_distance(similarity),
            spring_constant: similarity,
            classification: crate::similarity::classify(similarity, tau),
        }
    }
}

/// Number of edges of the complete graph on `n` nodes.
pub const fn edge_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClusterLabels {
    pub tfidf: Vec<String>,
    #[serde(default)]
    pub llm: Option<String>,
}

impl ClusterLabels {
    /// Display label: the external-model label when present, else the TF-IDF terms joined by `-`.
    pub fn display(&self) -> String {
        match &self.llm {
            Some(l) => l.clone(),
            None => self.tfidf.join("-"),
        }
    }
}

/// Convex outline of a cluster's members that belong to one batch (one Z level).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullSlice {
    pub batch_index: usize,
    pub z: f64,
    pub polygon: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub cluster_id: u64,
    pub parent_id: Option<u64>,
    /// Sorted.
    pub member_ids: Vec<String>,
    pub labels: ClusterLabels,
    pub hulls: Vec<HullSlice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotNode {
    pub id: String,
    pub batch_index: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Frozen layout, clustering and hulls for one batch index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimestepSnapshot {
    pub batch_index: usize,
    /// `None` while fewer than two nodes exist or thresholding is disabled.
    pub threshold: Option<f64>,
    pub stress: f64,
    /// Sorted by id.
    pub nodes: Vec<SnapshotNode>,
    pub clusters: Vec<ClusterRecord>,
    /// Sorted.
    pub misc_ids: Vec<String>,
}

impl AsRef<TimestepSnapshot> for TimestepSnapshot {
    fn as_ref(&self) -> &TimestepSnapshot {
        self
    }
}

impl TimestepSnapshot {
    pub fn node_positions(&self) -> BTreeMap<&str, [f64; 3]> {
        self.nodes
            .iter()
            .map(|n| (n.id.as_str(), [n.x, n.y, n.z]))
            .collect()
    }

    pub fn hulls(&self) -> BTreeMap<u64, &[HullSlice]> {
        self.clusters
            .iter()
            .map(|c| (c.cluster_id, c.hulls.as_slice()))
            .collect()
    }

    pub fn cluster(&self, cluster_id: u64) -> Option<&ClusterRecord> {
        self.clusters.iter().find(|c| c.cluster_id == cluster_id)
    }

    /// Cluster id holding `record_id`, `None` for misc.
    pub fn cluster_of(&self, record_id: &str) -> Option<u64> {
        self.clusters
            .iter()
            .find(|c| c.member_ids.binary_search_by(|m| m.as_str().cmp(record_id)).is_ok())
            .map(|c| c.cluster_id)
    }

    /// True when every node id appears exactly once across clusters and misc.
    pub fn is_partition(&self) -> bool {
        let mut seen: HashSet<&str> = HashSet::new();
        let members = self
            .clusters
            .iter()
            .flat_map(|c| c.member_ids.iter())
            .chain(self.misc_ids.iter());
        for id in members {
            if !seen.insert(id.as_str()) {
                return false;
            }
        }
        seen.len() == self.nodes.len() && self.nodes.iter().all(|n| seen.contains(n.id.as_str()))
    }
}
