//! Streaming temporal embedding layout.
//!
//! Records arrive in time-ordered batches. Each batch is inserted into a complete cosine
//! similarity graph, laid out in the X-Y plane by a spring/repulsion simulation (older nodes
//! grow heavier, so earlier structure stays put), pinned to a Z level for its batch, then
//! clustered, labeled and frozen into an immutable snapshot.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); snapshots and files are
//! always `f64`.

pub mod bench;
pub mod cluster;
pub mod engine;
pub mod io;
pub mod labeling;
pub mod layout;
pub mod lineage;
pub mod model;
pub mod pipeline;
pub mod scalar;
pub mod similarity;
pub mod stopwords;
pub mod synthetic;
pub mod temporal;

pub use cluster::{ClusterError, ClusteringConfig, Partition};
pub use engine::{EngineError, LiveView};
pub use io::{load_dataset, load_snapshot, save_snapshot, IoError, RunConfig};
pub use labeling::{LabelBackend, LabelClient, LabelError, LabelSource, MockLabelClient, OfflineLabelClient};
pub use layout::{PhysicsConfig, StepReport, StopRule};
pub use lineage::{build_lineage, LineageForest};
pub use model::{ClusterLabels, ClusterRecord, DataRecord, HullSlice, Payload, SnapshotNode, TimestepSnapshot};
pub use pipeline::{run_headless, BatchLimit};
pub use scalar::Scalar;
pub use similarity::ThresholdPolicy;
pub use temporal::{TimeUnit, TimestepSpec};

pub type Engine = engine::Engine<f64>;
pub type Engine32 = engine::Engine<f32>;
pub type Graph = similarity::SimilarityGraph<f64>;
pub type Layout = layout::LayoutState<f64>;
