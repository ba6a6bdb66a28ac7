//! Cluster lineage across snapshots, with delta cones joining each parent's outline to its
//! children's.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cluster::{delta_cone, DeltaCone};
use crate::model::{HullSlice, TimestepSnapshot};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageNode {
    pub cluster_id: u64,
    pub batch_index: usize,
    pub parent_id: Option<u64>,
    pub children: Vec<u64>,
    pub size: usize,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageLink {
    pub parent_id: u64,
    pub child_id: u64,
    /// `None` when either outline is a point or segment; draw a line instead.
    pub cone: Option<DeltaCone>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LineageForest {
    /// Ordered by cluster id.
    pub nodes: Vec<LineageNode>,
    pub roots: Vec<u64>,
    pub links: Vec<LineageLink>,
}

impl LineageForest {
    pub fn node(&self, cluster_id: u64) -> Option<&LineageNode> {
        self.nodes
            .binary_search_by_key(&cluster_id, |n| n.cluster_id)
            .ok()
            .map(|i| &self.nodes[i])
    }

    /// Clusters with two or more children.
    pub fn forks(&self) -> impl Iterator<Item = &LineageNode> {
        self.nodes.iter().filter(|n| n.children.len() >= 2)
    }
}

fn slice_at(hulls: &[HullSlice], batch: usize) -> Option<&HullSlice> {
    hulls.iter().find(|h| h.batch_index == batch)
}

/// Builds the forest. A cone joins the parent's outline in its own batch slice to the child's
/// outline in the child's batch slice.
pub fn build_lineage<S: AsRef<TimestepSnapshot>>(snapshots: &[S]) -> LineageForest {
    let mut nodes: BTreeMap<u64, LineageNode> = BTreeMap::new();
    let mut links = Vec::new();
    for (k, snap) in snapshots.iter().enumerate() {
        let snap = snap.as_ref();
        for c in &snap.clusters {
            nodes.insert(
                c.cluster_id,
                LineageNode {
                    cluster_id: c.cluster_id,
                    batch_index: snap.batch_index,
                    parent_id: c.parent_id,
                    children: Vec::new(),
                    size: c.member_ids.len(),
                    label: c.labels.display(),
                },
            );
            let Some(pid) = c.parent_id else { continue };
            let parent = k.checked_sub(1).and_then(|p| snapshots[p].as_ref().cluster(pid));
            let cone = parent.and_then(|p| {
                let bottom = slice_at(&p.hulls, p_batch(snapshots, k))?;
                let top = slice_at(&c.hulls, snap.batch_index)?;
                delta_cone(&bottom.polygon, bottom.z, &top.polygon, top.z).ok()
            });
            links.push(LineageLink { parent_id: pid, child_id: c.cluster_id, cone });
        }
    }
    for link in &links {
        if let Some(p) = nodes.get_mut(&link.parent_id) {
            p.children.push(link.child_id);
        }
    }
    let roots = nodes.values().filter(|n| n.parent_id.is_none()).map(|n| n.cluster_id).collect();
    LineageForest {
        nodes: nodes.into_values().collect(),
        roots,
        links,
    }
}

fn p_batch<S: AsRef<TimestepSnapshot>>(snapshots: &[S], k: usize) -> usize {
    snapshots[k - 1].as_ref().batch_index
}
