//! Synthetic timestamped embedding datasets with known topic structure.
//!
//! Each topic has a unit center direction; a record's embedding is its topic center plus
//! isotropic Gaussian noise, renormalized onto the unit sphere (a von Mises-Fisher-like
//! directional cluster). Topic centers can drift between batches, and one topic can split
//! into two children from a given batch on.

use std::path::Path;

use chrono::{DateTime, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::io::{to_canonical_json, write_dataset, IoError};
use crate::model::{DataRecord, Payload};
use crate::temporal::{TimeUnit, TimestepSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftModel {
    None,
    /// Each topic center rotates by `angle` radians per batch toward a fixed random direction.
    Linear { angle: f64 },
    /// `topic` emits records around two children on either side of its center. Before
    /// `at_batch` the children are `pre_angle` radians apart, from `at_batch` on `angle`.
    Split { topic: usize, at_batch: usize, pre_angle: f64, angle: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_points: usize,
    pub n_topics: usize,
    pub dim: usize,
    pub batches: usize,
    pub drift: DriftModel,
    /// Standard deviation of the per-coordinate noise relative to a unit center, scaled by
    /// `1 / sqrt(dim)` so the angular spread does not depend on the dimension.
    pub spread: f64,
    /// Weight of a direction shared by every topic. Positive values keep cross-topic
    /// similarities above zero.
    pub shared_weight: f64,
    pub start: DateTime<Utc>,
    pub timestep: TimestepSpec,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_points: 120,
            n_topics: 3,
            dim: 16,
            batches: 4,
            drift: DriftModel::None,
            spread: 0.35,
            shared_weight: 0.0,
            start: Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap(),
            timestep: TimestepSpec::new(1, TimeUnit::Months).unwrap(),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthAssignment {
    pub id: String,
    pub batch_index: usize,
    pub topic: usize,
    /// Child index (0 or 1) for records of a split topic.
    pub subtopic: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSplit {
    pub topic: usize,
    pub at_batch: usize,
}

/// Ground truth emitted alongside a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub assignments: Vec<TruthAssignment>,
    pub splits: Vec<TruthSplit>,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub records: Vec<DataRecord>,
    pub truth: GroundTruth,
}

impl SyntheticDataset {
    pub fn write(&self, dataset: impl AsRef<Path>, truth: impl AsRef<Path>) -> Result<(), IoError> {
        write_dataset(&self.records, dataset)?;
        let truth = truth.as_ref();
        std::fs::write(truth, to_canonical_json(&self.truth)?).map_err(|source| IoError::Io {
            path: truth.display().to_string(),
            source,
        })
    }
}

const TOPIC_WORDS: &[&str] = &[
    "pandemic", "vaccine", "climate", "energy", "malaria", "polio", "education", "teachers",
    "books", "reading", "farming", "harvest", "battery", "solar", "hospital", "nurses",
    "software", "startup", "ocean", "forest", "sanitation", "toilets", "nutrition", "mothers",
    "satellite", "rocket", "painting", "portrait", "music", "guitar", "election", "budget",
];
const FILLER_WORDS: &[&str] = &["today", "world", "people", "great", "future", "progress", "work", "year"];
const SUBTOPIC_WORDS: &[&[&str]] = &[&["omicron", "variant", "booster"], &["prevention", "preparedness", "surveillance"]];

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Unit vector orthogonal to `c`.
fn orthogonal(rng: &mut ChaCha8Rng, c: &[f64]) -> Vec<f64> {
    let g = gaussian(rng, c.len());
    let proj: f64 = g.iter().zip(c).map(|(a, b)| a * b).sum();
    unit(g.iter().zip(c).map(|(a, b)| a - proj * b).collect())
}

/// Rotates unit `c` toward orthogonal unit `u` by `angle`.
fn rotate(c: &[f64], u: &[f64], angle: f64) -> Vec<f64> {
    unit(c.iter().zip(u).map(|(a, b)| angle.cos() * a + angle.sin() * b).collect())
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> SyntheticDataset {
    assert!(spec.dim >= 2 && spec.n_topics >= 1 && spec.batches >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let shared = unit(gaussian(&mut rng, spec.dim));
    let centers: Vec<Vec<f64>> = (0..spec.n_topics)
        .map(|_| {
            let g = unit(gaussian(&mut rng, spec.dim));
            unit(g.iter().zip(&shared).map(|(a, s)| a + spec.shared_weight * s).collect())
        })
        .collect();
    let drift_dirs: Vec<Vec<f64>> = centers.iter().map(|c| orthogonal(&mut rng, c)).collect();
    let vocab: Vec<Vec<&str>> = (0..spec.n_topics)
        .map(|t| (0..4).map(|k| TOPIC_WORDS[(t * 4 + k) % TOPIC_WORDS.len()]).collect())
        .collect();

    let noise = spec.spread / (spec.dim as f64).sqrt();
    let mut records = Vec::with_capacity(spec.n_points);
    let mut assignments = Vec::with_capacity(spec.n_points);
    let mut splits = Vec::new();
    if let DriftModel::Split { topic, at_batch, .. } = spec.drift {
        splits.push(TruthSplit { topic, at_batch });
    }

    for batch in 0..spec.batches {
        let in_batch = spec.n_points / spec.batches + usize::from(batch < spec.n_points % spec.batches);
        let start = spec.timestep.batch_start(spec.start, batch).expect("batch start in range");
        let end = spec.timestep.batch_start(spec.start, batch + 1).expect("batch end in range");
        let gap = (end - start) / (in_batch.max(1) as i32);

        for k in 0..in_batch {
            let topic = k % spec.n_topics;
            let mut center = centers[topic].clone();
            let mut subtopic = None;
            match spec.drift {
                DriftModel::None => {}
                DriftModel::Linear { angle } => center = rotate(&center, &drift_dirs[topic], angle * batch as f64),
                DriftModel::Split { topic: t, at_batch, pre_angle, angle } if t == topic => {
                    let side = (k / spec.n_topics) % 2;
                    let sep = if batch >= at_batch { angle } else { pre_angle };
                    let signed = if side == 0 { sep / 2.0 } else { -sep / 2.0 };
                    center = rotate(&center, &drift_dirs[topic], signed);
                    subtopic = Some(side);
                }
                DriftModel::Split { .. } => {}
            }
            let embedding = unit(center.iter().map(|c| c + noise * rng.sample::<f64, _>(StandardNormal)).collect());

            let mut words: Vec<&str> = (0..3).map(|_| *vocab[topic].choose(&mut rng).unwrap()).collect();
            if let Some(side) = subtopic {
                words.push(SUBTOPIC_WORDS[side].choose(&mut rng).unwrap());
                words.push(SUBTOPIC_WORDS[side].choose(&mut rng).unwrap());
            }
            words.push(FILLER_WORDS.choose(&mut rng).unwrap());

            let id = format!("b{batch:03}-{k:04}");
            records.push(DataRecord {
                id: id.clone(),
                timestamp: start + gap * k as i32,
                payload: Payload::Text { text: words.join(" ") },
                embedding,
            });
            assignments.push(TruthAssignment { id, batch_index: batch, topic, subtopic });
        }
    }
    SyntheticDataset {
        records,
        truth: GroundTruth { assignments, splits },
    }
}
