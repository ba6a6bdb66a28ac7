//! The insert, relax, cluster and freeze lifecycle, one batch at a time.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::cluster::{assign_parents, cluster_timestep, convex_hull};
use crate::io::RunConfig;
use crate::labeling::{label_cluster, tokenize, LabelBackend, LabelClient, LabelSource, MockLabelClient, TfIdfIndex};
use crate::layout::{total_stress, LayoutError, LayoutState, PhysicsConfig, StepReport};
use crate::model::{ClusterRecord, DataRecord, HullSlice, ModelError, SnapshotNode, TimestepSnapshot};
use crate::scalar::Scalar;
use crate::similarity::{SimilarityError, SimilarityGraph};
use crate::temporal::{assign_batch, z_coordinate, TemporalError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("record {id:?} belongs to batch {batch}, which is already frozen (next is {expected})")]
    OutOfOrderBatch { id: String, batch: usize, expected: usize },
    #[error("record {id:?} belongs to batch {batch}, ahead of the batch being inserted ({expected})")]
    FutureBatch { id: String, batch: usize, expected: usize },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Node positions between freezes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LiveView {
    /// Batch being relaxed, or the last frozen one when idle.
    pub batch_index: Option<usize>,
    pub steps_taken: u64,
    pub nodes: Vec<SnapshotNode>,
}

/// Streaming layout engine over scalar type `T`. Snapshots are always stored as `f64`.
pub struct Engine<T: Scalar> {
    config: RunConfig,
    physics: PhysicsConfig,
    origin: DateTime<Utc>,
    graph: SimilarityGraph<T>,
    layout: LayoutState<T>,
    records: Vec<DataRecord>,
    tokens: Vec<Vec<String>>,
    index_of: HashMap<String, usize>,
    snapshots: Vec<Arc<TimestepSnapshot>>,
    next_cluster_id: u64,
    label_client: Option<Arc<dyn LabelClient>>,
}

impl<T: Scalar> Engine<T> {
    /// `origin` is used when the config does not pin one.
    pub fn new(config: RunConfig, origin: DateTime<Utc>) -> Self {
        let origin = config.origin.or(config.timestep.origin).unwrap_or(origin);
        Engine {
            physics: config.physics(),
            graph: SimilarityGraph::new(config.threshold),
            config,
            origin,
            layout: LayoutState::new(),
            records: Vec::new(),
            tokens: Vec::new(),
            index_of: HashMap::new(),
            snapshots: Vec::new(),
            next_cluster_id: 0,
            label_client: None,
        }
    }

    /// Client for external labels. Without one, a config asking for the mock backend gets
    /// [`MockLabelClient`] and anything else keeps TF-IDF labels only.
    pub fn with_label_client(mut self, client: Arc<dyn LabelClient>) -> Self {
        self.label_client = Some(client);
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn origin(&self) -> DateTime<Utc> {
        self.origin
    }

    pub fn graph(&self) -> &SimilarityGraph<T> {
        &self.graph
    }

    pub fn layout(&self) -> &LayoutState<T> {
        &self.layout
    }

    pub fn records(&self) -> &[DataRecord] {
        &self.records
    }

    pub fn record(&self, id: &str) -> Option<&DataRecord> {
        self.index_of.get(id).map(|&i| &self.records[i])
    }

    pub fn snapshots(&self) -> &[Arc<TimestepSnapshot>] {
        &self.snapshots
    }

    /// Index the next `advance` will freeze.
    pub fn next_batch(&self) -> usize {
        self.snapshots.len()
    }

    pub fn batch_of(&self, record: &DataRecord) -> Result<usize, TemporalError> {
        assign_batch(record.timestamp, self.origin, &self.config.timestep)
    }

    pub fn live_view(&self) -> LiveView {
        LiveView {
            batch_index: self.snapshots.len().checked_sub(1),
            steps_taken: self.layout.steps_taken,
            nodes: snapshot_nodes(&self.layout),
        }
    }

    pub fn advance(&mut self, records: Vec<DataRecord>) -> Result<Arc<TimestepSnapshot>, EngineError> {
        self.advance_with(records, |_, _, _| {})
    }

    /// Inserts the next batch, relaxes, clusters and freezes it. `observe(iteration, report,
    /// layout)` runs after every relaxation step. Every record must fall in the next batch;
    /// an empty batch still produces a snapshot.
    pub fn advance_with<F>(&mut self, mut records: Vec<DataRecord>, mut observe: F) -> Result<Arc<TimestepSnapshot>, EngineError>
    where
        F: FnMut(usize, &StepReport<T>, &LayoutState<T>),
    {
        let batch = self.next_batch();
        let mut fresh: HashSet<&str> = HashSet::with_capacity(records.len());
        for r in &records {
            let b = self.batch_of(r)?;
            if b < batch {
                return Err(EngineError::OutOfOrderBatch { id: r.id.clone(), batch: b, expected: batch });
            }
            if b > batch {
                return Err(EngineError::FutureBatch { id: r.id.clone(), batch: b, expected: batch });
            }
            if self.index_of.contains_key(&r.id) || !fresh.insert(r.id.as_str()) {
                return Err(EngineError::DuplicateId(r.id.clone()));
            }
        }
        drop(fresh);
        records.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.id.cmp(&b.id)));
        let tokens: Vec<Vec<String>> = records
            .iter()
            .map(|r| r.document_text().map(tokenize))
            .collect::<Result<_, _>>()?;

        self.graph.extend(&records)?;
        for r in records {
            self.index_of.insert(r.id.clone(), self.records.len());
            self.records.push(r);
        }
        self.tokens.extend(tokens);

        self.layout.current_batch = batch;
        let z = T::lit(z_coordinate(batch, self.config.z_spacing));
        self.layout.place_new(&self.graph, batch, z, &self.physics);
        self.layout.relax_with(&self.graph, &self.physics, self.config.relax, &mut observe)?;

        let snapshot = Arc::new(self.freeze(batch));
        self.snapshots.push(snapshot.clone());
        Ok(snapshot)
    }

    fn freeze(&mut self, batch: usize) -> TimestepSnapshot {
        let points: Vec<(String, [T; 2])> = self
            .layout
            .nodes
            .iter()
            .map(|n| (n.record_id.clone(), [n.position[0], n.position[1]]))
            .collect();
        let partition = cluster_timestep(&points, &self.config.clustering);
        let parents = match self.snapshots.last() {
            Some(prev) => assign_parents(prev, &partition.clusters, &self.config.clustering),
            None => vec![None; partition.clusters.len()],
        };

        let index = TfIdfIndex::new(self.tokens.iter().map(Vec::as_slice));
        let client: Option<&dyn LabelClient> = match (&self.label_client, &self.config.labels) {
            (Some(c), _) => Some(c.as_ref()),
            (None, LabelSource::ExternalModel { backend: LabelBackend::Mock, .. }) => Some(&MockLabelClient),
            _ => None,
        };
        let nodes = snapshot_nodes(&self.layout);
        let by_id: BTreeMap<&str, &SnapshotNode> = nodes.iter().map(|n| (n.id.as_str(), n)).collect();

        let mut clusters = Vec::with_capacity(partition.clusters.len());
        for (members, parent_id) in partition.clusters.into_iter().zip(parents) {
            let cluster_id = self.next_cluster_id;
            self.next_cluster_id += 1;
            let idx: Vec<usize> = members.iter().map(|m| self.index_of[m]).collect();
            let cluster_tokens: Vec<&[String]> = idx.iter().map(|&i| self.tokens[i].as_slice()).collect();
            let docs: Vec<&str> = idx
                .iter()
                .map(|&i| self.records[i].document_text().unwrap_or_default())
                .collect();
            let labels = label_cluster(
                &cluster_tokens,
                &docs,
                &index,
                &self.config.labels,
                client,
                self.config.seed ^ cluster_id.wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            let hulls = hull_slices(&members, &by_id);
            clusters.push(ClusterRecord {
                cluster_id,
                parent_id,
                member_ids: members,
                labels,
                hulls,
            });
        }

        TimestepSnapshot {
            batch_index: batch,
            threshold: self.graph.tau().map(|t| t.to_f64_lossy()),
            stress: total_stress(&self.graph, &self.layout).to_f64_lossy(),
            nodes,
            clusters,
            misc_ids: partition.noise,
        }
    }
}

/// Positions in id order, as `f64`.
pub fn snapshot_nodes<T: Scalar>(layout: &LayoutState<T>) -> Vec<SnapshotNode> {
    let mut nodes: Vec<SnapshotNode> = layout
        .nodes
        .iter()
        .map(|n| SnapshotNode {
            id: n.record_id.clone(),
            batch_index: n.batch_index,
            x: n.position[0].to_f64_lossy(),
            y: n.position[1].to_f64_lossy(),
            z: n.position[2].to_f64_lossy(),
        })
        .collect();
    nodes.sort_by(|a, b| a.id.cmp(&b.id));
    nodes
}

/// One outline per batch the cluster has members in, drawn at that batch's level.
fn hull_slices(members: &[String], by_id: &BTreeMap<&str, &SnapshotNode>) -> Vec<HullSlice> {
    let mut per_batch: BTreeMap<usize, (f64, Vec<[f64; 2]>)> = BTreeMap::new();
    for m in members {
        let n = by_id[m.as_str()];
        per_batch.entry(n.batch_index).or_insert_with(|| (n.z, Vec::new())).1.push([n.x, n.y]);
    }
    per_batch
        .into_iter()
        .map(|(batch_index, (z, pts))| HullSlice {
            batch_index,
            z,
            polygon: convex_hull(&pts),
        })
        .collect()
}

/// Splits time-sorted records into consecutive batches, including empty ones, from `origin`.
pub fn split_into_batches(
    records: Vec<DataRecord>,
    origin: DateTime<Utc>,
    spec: &crate::temporal::TimestepSpec,
) -> Result<Vec<Vec<DataRecord>>, TemporalError> {
    let mut batches: Vec<Vec<DataRecord>> = Vec::new();
    for r in records {
        let b = assign_batch(r.timestamp, origin, spec)?;
        if batches.len() <= b {
            batches.resize_with(b + 1, Vec::new);
        }
        batches[b].push(r);
    }
    Ok(batches)
}

/// Earliest timestamp, the default origin.
pub fn earliest(records: &[DataRecord]) -> Option<DateTime<Utc>> {
    records.iter().map(|r| r.timestamp).min()
}
