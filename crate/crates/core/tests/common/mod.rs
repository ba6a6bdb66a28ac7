#![allow(dead_code)]

use std::path::PathBuf;

use serde::Deserialize;

#[derive(Debug, Deserialize)]
pub struct ClusterFixture {
    pub min_cluster_size: usize,
    pub min_samples: usize,
    pub points: Vec<[f64; 2]>,
    /// `-1` marks noise.
    pub reference_labels: Vec<i64>,
}

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn load_cluster_fixture(name: &str) -> ClusterFixture {
    let text = std::fs::read_to_string(fixture_path(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Best fraction of points labeled alike over every one-to-one matching of our clusters to
/// the reference clusters. Noise only matches noise.
pub fn label_agreement(ours: &[Option<usize>], reference: &[i64]) -> f64 {
    assert_eq!(ours.len(), reference.len());
    let k_ours = ours.iter().flatten().max().map_or(0, |m| m + 1);
    let k_ref = reference.iter().filter(|&&l| l >= 0).max().map_or(0, |&m| m as usize + 1);
    let mut overlap = vec![vec![0usize; k_ref]; k_ours];
    let mut noise_both = 0;
    for (o, &r) in ours.iter().zip(reference) {
        match (o, r) {
            (None, -1) => noise_both += 1,
            (Some(a), r) if r >= 0 => overlap[*a][r as usize] += 1,
            _ => {}
        }
    }
    fn best(row: usize, used: &mut Vec<bool>, overlap: &[Vec<usize>]) -> usize {
        if row == overlap.len() {
            return 0;
        }
        let mut top = best(row + 1, used, overlap);
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                top = top.max(overlap[row][j] + best(row + 1, used, overlap));
                used[j] = false;
            }
        }
        top
    }
    let matched = best(0, &mut vec![false; k_ref], &overlap);
    (matched + noise_both) as f64 / ours.len() as f64
}
