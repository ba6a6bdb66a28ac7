//! Per-timestep density clustering of X-Y positions, parent lineage across timesteps, and hull
//! geometry for cluster outlines.

pub mod hdbscan;
pub mod hull;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::TimestepSnapshot;
use crate::scalar::Scalar;

pub use hdbscan::{hdbscan, HdbscanParams};
pub use hull::{contains, convex_hull, delta_cone, polygon_area, DeltaCone};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("hull with {0} vertices is degenerate")]
    DegenerateHull(usize),
    #[error("child level {z_top} must lie above parent level {z_bottom}")]
    InvertedLevels { z_bottom: f64, z_top: f64 },
    #[error("min_cluster_size must be at least 2, got {0}")]
    MinClusterSize(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    /// `None` scales with the point count: `max(5, ceil(N / 50))`.
    pub min_cluster_size: Option<usize>,
    /// `None` follows the resolved `min_cluster_size`.
    pub min_samples: Option<usize>,
    pub allow_single_cluster: bool,
    /// Minimum share of a cluster's previously existing members that the plurality
    /// predecessor must hold before it counts as the parent.
    pub parent_min_share: f64,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            min_cluster_size: None,
            min_samples: None,
            allow_single_cluster: false,
            parent_min_share: 0.0,
        }
    }
}

impl ClusteringConfig {
    pub fn validate(&self) -> Result<(), ClusterError> {
        match self.min_cluster_size {
            Some(m) if m < 2 => Err(ClusterError::MinClusterSize(m)),
            _ => Ok(()),
        }
    }

    pub fn params_for(&self, n_points: usize) -> HdbscanParams {
        let mcs = self
            .min_cluster_size
            .unwrap_or_else(|| 5.max(n_points.div_ceil(50)));
        HdbscanParams {
            min_cluster_size: mcs,
            min_samples: self.min_samples.unwrap_or(mcs),
            allow_single_cluster: self.allow_single_cluster,
        }
    }
}

/// Result of clustering one timestep. Member lists are sorted and clusters are ordered by
/// their smallest member id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Partition {
    pub clusters: Vec<Vec<String>>,
    pub noise: Vec<String>,
}

/// Clusters `(record_id, [x, y])` points. Input order does not affect the result: points are
/// processed in id order.
pub fn cluster_timestep<T: Scalar>(points: &[(String, [T; 2])], cfg: &ClusteringConfig) -> Partition {
    let mut sorted: Vec<&(String, [T; 2])> = points.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let coords: Vec<[T; 2]> = sorted.iter().map(|p| p.1).collect();
    let labels = hdbscan(&coords, cfg.params_for(points.len()));

    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    let mut noise = Vec::new();
    for (p, label) in sorted.iter().zip(labels) {
        match label {
            Some(l) => groups.entry(l).or_default().push(p.0.clone()),
            None => noise.push(p.0.clone()),
        }
    }
    let mut clusters: Vec<Vec<String>> = groups.into_values().collect();
    clusters.sort();
    Partition { clusters, noise }
}

/// Parent for each current cluster.
///
/// Members are restricted to records that already existed in `prev`; the parent is the
/// previous cluster holding the plurality of them. No parent when nothing existed before or
/// when previously unclustered records form the plurality. Ties go to the lowest cluster id,
/// and a real cluster beats noise on a tie.
pub fn assign_parents(prev: &TimestepSnapshot, current: &[Vec<String>], cfg: &ClusteringConfig) -> Vec<Option<u64>> {
    let mut owner: HashMap<&str, Option<u64>> = HashMap::with_capacity(prev.nodes.len());
    for n in &prev.nodes {
        owner.insert(n.id.as_str(), None);
    }
    for c in &prev.clusters {
        for m in &c.member_ids {
            owner.insert(m.as_str(), Some(c.cluster_id));
        }
    }

    current
        .iter()
        .map(|members| {
            let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
            let mut noise = 0usize;
            let mut existing = 0usize;
            for m in members {
                match owner.get(m.as_str()) {
                    Some(Some(cid)) => {
                        *counts.entry(*cid).or_default() += 1;
                        existing += 1;
                    }
                    Some(None) => {
                        noise += 1;
                        existing += 1;
                    }
                    None => {}
                }
            }
            // max_by_key keeps the last maximum; iterate ids in reverse so the lowest id wins.
            let (cid, count) = counts.iter().rev().max_by_key(|(_, c)| **c)?;
            if *count < noise {
                return None;
            }
            let share = *count as f64 / existing as f64;
            (share >= cfg.parent_min_share).then_some(*cid)
        })
        .collect()
}
