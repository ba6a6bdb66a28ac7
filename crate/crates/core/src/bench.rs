//! Step-rate measurement for the force loop.

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::layout::{LayoutState, PhysicsConfig};
use crate::model::DataRecord;
use crate::similarity::{SimilarityGraph, ThresholdPolicy};
use crate::synthetic::{generate_synthetic, SyntheticSpec};

/// Minimum steps per second expected at each benchmark size.
pub const STEP_RATE_FLOORS: [(usize, f64); 3] = [(200, 30.0), (360, 8.0), (900, 1.0)];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub nodes: usize,
    pub steps: usize,
    pub seconds: f64,
    pub steps_per_second: f64,
    pub floor: Option<f64>,
}

impl BenchResult {
    pub fn meets_floor(&self) -> bool {
        self.floor.is_none_or(|f| self.steps_per_second >= f)
    }
}

pub fn floor_for(nodes: usize) -> Option<f64> {
    STEP_RATE_FLOORS.iter().find(|(n, _)| *n == nodes).map(|(_, f)| *f)
}

fn bench_records(nodes: usize, seed: u64) -> Vec<DataRecord> {
    let spec = SyntheticSpec {
        n_points: nodes,
        n_topics: 6,
        dim: 32,
        batches: 1,
        seed,
        ..Default::default()
    };
    generate_synthetic(&spec).records
}

/// Steps a single-batch layout of `nodes` synthetic records for at least `min_time` (and at
/// least `min_steps` steps) and reports the rate. Graph construction and placement are not
/// timed.
pub fn bench_steps(nodes: usize, min_steps: usize, min_time: Duration, seed: u64) -> BenchResult {
    let records = bench_records(nodes, seed);
    let mut graph: SimilarityGraph<f64> = SimilarityGraph::new(ThresholdPolicy::default());
    graph.extend(&records).expect("synthetic records are consistent");
    let cfg = PhysicsConfig { seed, ..Default::default() };
    let mut layout = LayoutState::new();
    layout.place_new(&graph, 0, 0.0, &cfg);

    let start = Instant::now();
    let mut steps = 0;
    while steps < min_steps || start.elapsed() < min_time {
        layout.step(&graph, &cfg).expect("default physics stays finite");
        steps += 1;
    }
    let seconds = start.elapsed().as_secs_f64();
    BenchResult {
        nodes,
        steps,
        seconds,
        steps_per_second: steps as f64 / seconds,
        floor: floor_for(nodes),
    }
}

pub fn render_table(results: &[BenchResult]) -> String {
    let mut out = String::from("nodes  steps/s    floor  status\n");
    for r in results {
        let floor = r.floor.map_or_else(|| "-".to_string(), |f| format!("{f:.0}"));
        let status = match r.floor {
            None => "-",
            Some(_) if r.meets_floor() => "ok",
            Some(_) => "BELOW",
        };
        out.push_str(&format!("{:>5}  {:>9.1}  {:>5}  {}\n", r.nodes, r.steps_per_second, floor, status));
    }
    out
}
