//! Spring/repulsion physics in the X-Y plane.
//!
//! Attractive edges act as Hooke springs with rest length `1 - s` and stiffness `s`; repulsive
//! edges push with an inverse-square law. Each node integrates its net force with
//! semi-implicit Euler, scaled by a mass that grows by `beta` for every batch the node has
//! survived. Z never changes here.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EdgeClass, LayoutNode};
use crate::scalar::Scalar;
use crate::similarity::{classify, SimilarityGraph};

/// Golden ratio, the default per-batch mass multiplier.
pub const GOLDEN_RATIO: f64 = 1.618;

/// Rows shorter than this are accumulated on the calling thread.
const PAR_MIN_NODES: usize = 128;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayoutError {
    #[error("non-finite position or velocity on node {node:?} after step {step}")]
    NonFiniteState { node: String, step: u64 },
    #[error("layout has {layout} nodes but the graph has {graph}")]
    SizeMismatch { layout: usize, graph: usize },
    #[error("invalid physics config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicsConfig {
    pub dt: f64,
    /// Fraction of velocity kept per step, in `(0, 1]`.
    pub damping: f64,
    pub beta: f64,
    pub repulsion_strength: f64,
    pub repulsion_floor: f64,
    /// Per-step displacement cap. `f64::INFINITY` turns clamping off.
    pub max_speed: f64,
    /// `m0`, the mass of a node in the batch it arrived with.
    pub base_mass: f64,
    pub seed: u64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        PhysicsConfig {
            dt: 0.02,
            damping: 0.85,
            beta: GOLDEN_RATIO,
            repulsion_strength: 2.0,
            repulsion_floor: 1e-3,
            max_speed: 0.5,
            base_mass: 1.0,
            seed: 0,
        }
    }
}

impl PhysicsConfig {
    pub fn validate(&self) -> Result<(), LayoutError> {
        let bad = |m: &str| Err(LayoutError::InvalidConfig(m.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad("damping must be in (0, 1]");
        }
        if !(self.beta >= 1.0 && self.beta.is_finite()) {
            return bad("beta must be >= 1");
        }
        if !(self.repulsion_strength > 0.0) {
            return bad("repulsion_strength must be positive");
        }
        if !(self.repulsion_floor > 0.0) {
            return bad("repulsion_floor must be positive");
        }
        if !(self.max_speed > 0.0) {
            return bad("max_speed must be positive");
        }
        if !(self.base_mass > 0.0 && self.base_mass.is_finite()) {
            return bad("base_mass must be positive");
        }
        Ok(())
    }
}

/// Hooke force along the pair axis. Positive pushes apart, negative pulls together.
#[inline]
pub fn spring_force_magnitude<T: Scalar>(k: T, d_ideal: T, d_current: T) -> T {
    k * (d_ideal - d_current)
}

/// Inverse-square push, always positive.
#[inline]
pub fn repulsive_force_magnitude<T: Scalar>(d_current: T, cfg: &PhysicsConfig) -> T {
    repulsion(d_current, T::lit(cfg.repulsion_strength), T::lit(cfg.repulsion_floor))
}

#[inline]
fn repulsion<T: Scalar>(d: T, strength: T, floor: T) -> T {
    let d = d.max(floor);
    strength / (d * d)
}

/// `m0 * beta^(b_current - b_initial)`.
#[inline]
pub fn effective_mass<T: Scalar>(base_mass: T, beta: T, b_initial: usize, b_current: usize) -> T {
    debug_assert!(b_current >= b_initial);
    let age = b_current.saturating_sub(b_initial);
    base_mass * beta.powi(age as i32)
}

/// Unit direction used to separate a coincident pair, derived from `(seed, a, b)` only.
/// Returned as the push on `a`; `b` receives the negation.
fn pair_direction<T: Scalar>(seed: u64, a: usize, b: usize) -> (T, T) {
    let mut z = seed ^ (a as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (b as u64).rotate_left(32);
    // splitmix64 finalizer
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    let angle = (z >> 11) as f64 / (1u64 << 53) as f64 * std::f64::consts::TAU;
    (T::lit(angle.cos()), T::lit(angle.sin()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport<T> {
    pub max_displacement: T,
    /// Stress at the positions the forces were evaluated from.
    pub total_stress: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StopRule {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            max_iters: 2000,
            tol: 1e-4,
        }
    }
}

/// Node states, index-aligned with a [`SimilarityGraph`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutState<T> {
    pub nodes: Vec<LayoutNode<T>>,
    /// `b_current` for mass scaling.
    pub current_batch: usize,
    pub steps_taken: u64,
}

impl<T: Scalar> Default for LayoutState<T> {
    fn default() -> Self {
        LayoutState {
            nodes: Vec::new(),
            current_batch: 0,
            steps_taken: 0,
        }
    }
}

impl<T: Scalar> LayoutState<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn mass(&self, i: usize, beta: T) -> T {
        let n = &self.nodes[i];
        effective_mass(n.base_mass, beta, n.batch_index, self.current_batch)
    }

    /// Places nodes for `graph` entries `self.len()..graph.len()`, which arrived in `batch_index`.
    ///
    /// Each new node lands uniformly in a disc of radius 0.1 around the similarity-weighted
    /// centroid of its five most similar previously placed nodes from earlier batches
    /// (the origin when there are none).
    pub fn place_new(&mut self, graph: &SimilarityGraph<T>, batch_index: usize, z: T, cfg: &PhysicsConfig) {
        const NEIGHBOURS: usize = 5;
        let radius = T::lit(0.1);
        let existing = self
            .nodes
            .iter()
            .position(|n| n.batch_index >= batch_index)
            .unwrap_or(self.nodes.len());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (batch_index as u64).wrapping_mul(0xA076_1D64_78BD_642F));

        for i in self.nodes.len()..graph.len() {
            let row = graph.row(i);
            let mut nearest: Vec<usize> = (0..existing).collect();
            nearest.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
            nearest.truncate(NEIGHBOURS);

            let (mut cx, mut cy) = (T::zero(), T::zero());
            if !nearest.is_empty() {
                let wsum: T = nearest.iter().map(|&j| row[j].max(T::zero())).sum();
                let uniform = !(wsum > T::zero());
                let total = if uniform { T::from_usize(nearest.len()).unwrap() } else { wsum };
                for &j in &nearest {
                    let w = if uniform { T::one() } else { row[j].max(T::zero()) };
                    cx += w * self.nodes[j].position[0];
                    cy += w * self.nodes[j].position[1];
                }
                cx /= total;
                cy /= total;
            }
            let r = radius * T::lit(rng.random::<f64>().sqrt());
            let theta = T::lit(rng.random::<f64>() * std::f64::consts::TAU);
            self.nodes.push(LayoutNode {
                record_id: graph.ids()[i].clone(),
                position: [cx + r * theta.cos(), cy + r * theta.sin(), z],
                velocity: [T::zero(); 2],
                base_mass: T::lit(cfg.base_mass),
                batch_index,
            });
        }
    }

    /// One Newtonian move over all nodes.
    pub fn step(&mut self, graph: &SimilarityGraph<T>, cfg: &PhysicsConfig) -> Result<StepReport<T>, LayoutError> {
        let n = self.nodes.len();
        if n != graph.len() {
            return Err(LayoutError::SizeMismatch {
                layout: n,
                graph: graph.len(),
            });
        }
        if n == 0 {
            return Ok(StepReport {
                max_displacement: T::zero(),
                total_stress: T::zero(),
            });
        }
        let xs: Vec<T> = self.nodes.iter().map(|p| p.position[0]).collect();
        let ys: Vec<T> = self.nodes.iter().map(|p| p.position[1]).collect();
        let tau = graph.tau();
        let strength = T::lit(cfg.repulsion_strength);
        let floor = T::lit(cfg.repulsion_floor);
        let seed = cfg.seed;

        // (fx, fy, stress over j > i)
        let accumulate = |i: usize| -> (T, T, T) {
            let row = graph.row(i);
            let (xi, yi) = (xs[i], ys[i]);
            let (mut fx, mut fy, mut stress) = (T::zero(), T::zero(), T::zero());
            for j in 0..n {
                if j == i {
                    continue;
                }
                let dx = xi - xs[j];
                let dy = yi - ys[j];
                let d = (dx * dx + dy * dy).sqrt();
                let (ux, uy) = if d < floor {
                    let (a, b) = if i < j { (i, j) } else { (j, i) };
                    let (ux, uy) = pair_direction::<T>(seed, a, b);
                    if i == a {
                        (ux, uy)
                    } else {
                        (-ux, -uy)
                    }
                } else {
                    (dx / d, dy / d)
                };
                let s = row[j];
                let f = match classify(s, tau) {
                    EdgeClass::Attractive => {
                        let ideal = T::one() - s;
                        if j > i {
                            let r = ideal - d;
                            stress += r * r;
                        }
                        spring_force_magnitude(s, ideal, d)
                    }
                    EdgeClass::Repulsive => repulsion(d, strength, floor),
                };
                fx += f * ux;
                fy += f * uy;
            }
            (fx, fy, stress)
        };
        let forces: Vec<(T, T, T)> = if n >= PAR_MIN_NODES {
            (0..n).into_par_iter().map(accumulate).collect()
        } else {
            (0..n).map(accumulate).collect()
        };

        let dt = T::lit(cfg.dt);
        let damping = T::lit(cfg.damping);
        let beta = T::lit(cfg.beta);
        let cap = T::lit(cfg.max_speed);
        let current = self.current_batch;
        let mut max_disp = T::zero();
        let mut total_stress = T::zero();
        for (node, &(fx, fy, stress)) in self.nodes.iter_mut().zip(&forces) {
            total_stress += stress;
            let m = effective_mass(node.base_mass, beta, node.batch_index, current);
            let mut vx = (node.velocity[0] + fx / m * dt) * damping;
            let mut vy = (node.velocity[1] + fy / m * dt) * damping;
            let mut disp = (vx * vx + vy * vy).sqrt() * dt;
            if disp > cap {
                let scale = cap / disp;
                vx *= scale;
                vy *= scale;
                disp = cap;
            }
            node.velocity = [vx, vy];
            node.position[0] += vx * dt;
            node.position[1] += vy * dt;
            if !(node.position[0].is_finite() && node.position[1].is_finite() && vx.is_finite() && vy.is_finite()) {
                return Err(LayoutError::NonFiniteState {
                    node: node.record_id.clone(),
                    step: self.steps_taken + 1,
                });
            }
            max_disp = max_disp.max(disp);
        }
        self.steps_taken += 1;
        Ok(StepReport {
            max_displacement: max_disp,
            total_stress,
        })
    }

    /// Steps until the largest displacement drops below `stop.tol` or `stop.max_iters` is hit.
    pub fn relax(&mut self, graph: &SimilarityGraph<T>, cfg: &PhysicsConfig, stop: StopRule) -> Result<usize, LayoutError> {
        self.relax_with(graph, cfg, stop, |_, _, _| {})
    }

    /// Like [`relax`](Self::relax), calling `observe(iteration, report, state)` after every step.
    pub fn relax_with<F>(&mut self, graph: &SimilarityGraph<T>, cfg: &PhysicsConfig, stop: StopRule, mut observe: F) -> Result<usize, LayoutError>
    where
        F: FnMut(usize, &StepReport<T>, &LayoutState<T>),
    {
        if self.nodes.is_empty() {
            return Ok(0);
        }
        let tol = T::lit(stop.tol);
        let mut iters = 0;
        while iters < stop.max_iters {
            let report = self.step(graph, cfg)?;
            iters += 1;
            observe(iters, &report, self);
            if report.max_displacement < tol {
                break;
            }
        }
        Ok(iters)
    }

    fn distance(&self, i: usize, j: usize) -> T {
        let (a, b) = (&self.nodes[i].position, &self.nodes[j].position);
        let dx = a[0] - b[0];
        let dy = a[1] - b[1];
        (dx * dx + dy * dy).sqrt()
    }
}

/// Sum of squared distance residuals over attractive edges. Repulsive edges have no target.
pub fn total_stress<T: Scalar>(graph: &SimilarityGraph<T>, layout: &LayoutState<T>) -> T {
    graph
        .edges()
        .filter(|e| e.classification == EdgeClass::Attractive)
        .map(|e| {
            let r = e.ideal_distance - layout.distance(e.a, e.b);
            r * r
        })
        .sum()
}

/// Stress weighted by spring constant, the energy the attractive springs minimise (times two).
pub fn weighted_stress<T: Scalar>(graph: &SimilarityGraph<T>, layout: &LayoutState<T>) -> T {
    graph
        .edges()
        .filter(|e| e.classification == EdgeClass::Attractive)
        .map(|e| {
            let r = e.ideal_distance - layout.distance(e.a, e.b);
            e.spring_constant * r * r
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DataRecord, Payload};
    use crate::similarity::ThresholdPolicy;
    use chrono::TimeZone;

    fn rec(id: usize, e: Vec<f64>) -> DataRecord {
        DataRecord {
            id: format!("n{id:03}"),
            timestamp: chrono::Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap(),
            payload: Payload::Text { text: String::new() },
            embedding: e,
        }
    }

    /// Two unit vectors at angle `acos(s)`.
    fn pair_with_similarity(s: f64) -> Vec<DataRecord> {
        vec![rec(0, vec![1.0, 0.0]), rec(1, vec![s, (1.0 - s * s).sqrt()])]
    }

    fn layout_at(graph: &SimilarityGraph<f64>, pts: &[(f64, f64)], batch: usize) -> LayoutState<f64> {
        LayoutState {
            nodes: pts
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| LayoutNode {
                    record_id: graph.ids()[i].clone(),
                    position: [x, y, batch as f64],
                    velocity: [0.0; 2],
                    base_mass: 1.0,
                    batch_index: batch,
                })
                .collect(),
            current_batch: batch,
            steps_taken: 0,
        }
    }

    #[test]
    fn force_magnitudes() {
        assert!((spring_force_magnitude(0.8, 0.2, 0.5) - -0.24_f64).abs() < 1e-15);
        assert_eq!(spring_force_magnitude(0.3, 0.7, 0.7), 0.0);
        assert_eq!(spring_force_magnitude(1.0, 1.0, 0.5), 0.5);

        let cfg = PhysicsConfig::default();
        assert_eq!(repulsive_force_magnitude(1.0, &cfg), 2.0);
        assert!((repulsive_force_magnitude(0.0, &cfg) - 2.0e6_f64).abs() < 1e-6);
        assert_eq!(repulsive_force_magnitude(2.0, &cfg), 0.5);
    }

    #[test]
    fn mass_examples() {
        assert_eq!(effective_mass(1.0, GOLDEN_RATIO, 5, 5), 1.0);
        assert_eq!(effective_mass(1.0, GOLDEN_RATIO, 0, 1), 1.618);
        assert!((effective_mass(1.0, GOLDEN_RATIO, 0, 4) - 6.8534_f64).abs() < 1e-3);
    }

    #[test]
    fn config_validation() {
        assert!(PhysicsConfig::default().validate().is_ok());
        let bad = PhysicsConfig { damping: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = PhysicsConfig { beta: 0.9, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn single_node_does_not_move() {
        let mut g = SimilarityGraph::<f64>::new(ThresholdPolicy::default());
        g.extend(&[rec(0, vec![1.0, 2.0])]).unwrap();
        let mut l = layout_at(&g, &[(0.3, -0.2)], 0);
        let r = l.step(&g, &PhysicsConfig::default()).unwrap();
        assert_eq!(r.max_displacement, 0.0);
        assert_eq!(l.nodes[0].position, [0.3, -0.2, 0.0]);
    }

    #[test]
    fn two_node_spring_settles_at_rest_length() {
        let mut g = SimilarityGraph::<f64>::new(ThresholdPolicy::Disabled);
        g.extend(&pair_with_similarity(0.6)).unwrap();
        let mut l = layout_at(&g, &[(0.0, 0.0), (1.2, 0.1)], 0);
        let stop = StopRule { max_iters: 200_000, tol: 1e-7 };
        let iters = l.relax(&g, &PhysicsConfig::default(), stop).unwrap();
        assert!(iters < stop.max_iters);
        assert!((l.distance(0, 1) - 0.4).abs() < 1e-3, "{}", l.distance(0, 1));
    }

    #[test]
    fn coincident_nodes_separate_deterministically() {
        let mut g = SimilarityGraph::<f64>::new(ThresholdPolicy::Disabled);
        g.extend(&pair_with_similarity(0.5)).unwrap();
        let run = || {
            let mut l = layout_at(&g, &[(0.0, 0.0), (0.0, 0.0)], 0);
            l.step(&g, &PhysicsConfig::default()).unwrap();
            l
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert!(a.distance(0, 1) > 0.0);
        // Equal and opposite.
        assert_eq!(a.nodes[0].position[0], -a.nodes[1].position[0]);
        assert_eq!(a.nodes[0].position[1], -a.nodes[1].position[1]);
    }

    #[test]
    fn square_stays_square() {
        let mut g = SimilarityGraph::<f64>::new(ThresholdPolicy::Disabled);
        let e = vec![1.0, 1.0, 1.0];
        g.extend(&(0..4).map(|i| rec(i, e.clone())).collect::<Vec<_>>()).unwrap();
        let mut l = layout_at(&g, &[(0.5, 0.5), (-0.5, 0.5), (-0.5, -0.5), (0.5, -0.5)], 0);
        for _ in 0..500 {
            l.step(&g, &PhysicsConfig::default()).unwrap();
            let side = l.distance(0, 1);
            for (a, b) in [(1, 2), (2, 3), (3, 0)] {
                assert!((l.distance(a, b) - side).abs() < 1e-9);
            }
            assert!((l.distance(0, 2) - l.distance(1, 3)).abs() < 1e-9);
        }
    }

    #[test]
    fn z_is_never_touched() {
        let mut g = SimilarityGraph::<f64>::new(ThresholdPolicy::default());
        g.extend(&(0..6).map(|i| rec(i, vec![1.0 + i as f64, 2.0, (i as f64).cos()])).collect::<Vec<_>>()).unwrap();
        let mut l = layout_at(&g, &[(0.0, 0.0), (0.1, 0.0), (0.0, 0.1), (0.3, 0.3), (-0.2, 0.1), (0.0, -0.4)], 0);
        for (i, n) in l.nodes.iter_mut().enumerate() {
            n.position[2] = 0.1 * i as f64 + 1.0 / 3.0;
        }
        let before: Vec<f64> = l.nodes.iter().map(|n| n.position[2]).collect();
        for _ in 0..200 {
            l.step(&g, &PhysicsConfig::default()).unwrap();
        }
        let after: Vec<f64> = l.nodes.iter().map(|n| n.position[2]).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn relax_edge_cases() {
        let g = SimilarityGraph::<f64>::new(ThresholdPolicy::default());
        let mut l = LayoutState::<f64>::new();
        assert_eq!(l.relax(&g, &PhysicsConfig::default(), StopRule::default()).unwrap(), 0);

        let mut g = SimilarityGraph::<f64>::new(ThresholdPolicy::Disabled);
        g.extend(&pair_with_similarity(0.5)).unwrap();
        let mut l = layout_at(&g, &[(0.0, 0.0), (0.5, 0.0)], 0);
        assert_eq!(l.relax(&g, &PhysicsConfig::default(), StopRule::default()).unwrap(), 1);
    }

    #[test]
    fn size_mismatch_and_blow_up_are_errors() {
        let mut g = SimilarityGraph::<f64>::new(ThresholdPolicy::Disabled);
        g.extend(&pair_with_similarity(0.5)).unwrap();
        let mut l = layout_at(&g, &[(0.0, 0.0), (0.5, 0.0)], 0);
        l.nodes.pop();
        assert!(matches!(l.step(&g, &PhysicsConfig::default()), Err(LayoutError::SizeMismatch { .. })));

        let mut l = layout_at(&g, &[(0.0, 0.0), (f64::MAX, 0.0)], 0);
        let cfg = PhysicsConfig { max_speed: f64::INFINITY, ..Default::default() };
        assert!(matches!(l.step(&g, &cfg), Err(LayoutError::NonFiniteState { .. })));
    }

    #[test]
    fn stress_examples() {
        let mut g = SimilarityGraph::<f64>::new(ThresholdPolicy::Disabled);
        g.extend(&pair_with_similarity(0.7)).unwrap();
        let l = layout_at(&g, &[(0.0, 0.0), (0.7, 0.0)], 0);
        assert!((total_stress(&g, &l) - 0.16).abs() < 1e-12);
        let l = layout_at(&g, &[(0.0, 0.0), (0.0, 1.0 - g.similarity(0, 1))], 0);
        assert!(total_stress(&g, &l).abs() < 1e-24);
    }

    #[test]
    fn placement_stays_near_neighbours() {
        let mut g = SimilarityGraph::<f64>::new(ThresholdPolicy::default());
        let cfg = PhysicsConfig::default();
        let first: Vec<_> = (0..8).map(|i| rec(i, vec![1.0, 0.05 * i as f64, 0.0])).collect();
        g.extend(&first).unwrap();
        let mut l = LayoutState::new();
        l.place_new(&g, 0, 0.0, &cfg);
        for n in &l.nodes {
            assert!((n.position[0].powi(2) + n.position[1].powi(2)).sqrt() <= 0.1);
        }
        for n in l.nodes.iter_mut() {
            n.position[0] += 5.0;
        }
        g.extend(&[rec(100, vec![1.0, 0.1, 0.0])]).unwrap();
        l.current_batch = 1;
        l.place_new(&g, 1, 1.0, &cfg);
        let new = l.nodes.last().unwrap();
        assert!((new.position[0] - 5.0).abs() < 0.2);
        assert_eq!(new.position[2], 1.0);
        assert_eq!(new.batch_index, 1);
    }

    #[test]
    fn works_in_single_precision() {
        let mut g = SimilarityGraph::<f32>::new(ThresholdPolicy::Disabled);
        g.extend(&pair_with_similarity(0.6)).unwrap();
        let mut l = LayoutState::<f32>::new();
        l.place_new(&g, 0, 0.0, &PhysicsConfig::default());
        l.relax(&g, &PhysicsConfig::default(), StopRule { max_iters: 100_000, tol: 1e-6 }).unwrap();
        assert!((l.distance(0, 1) - 0.4).abs() < 1e-3);
    }
}
