//! Pairwise cosine similarities over the complete graph and the dynamic attraction threshold.
//!
//! Every pair of inserted nodes is an edge. An edge attracts when its similarity is strictly
//! above `tau = mu + (ln N / ln C) * sigma`, where `mu` and `sigma` are the mean and population
//! standard deviation of all edge similarities and `N` is the node count. Otherwise it repels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{edge_count, DataRecord, EdgeClass, SimilarityEdge};
use crate::scalar::Scalar;

/// Default `C`: ln 21.
pub const DEFAULT_C: f64 = 3.044_522_437_723_423;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimilarityError {
    #[error("threshold needs at least 2 nodes, got {0}")]
    InsufficientNodes(usize),
    #[error("threshold needs at least one edge similarity")]
    NoSimilarities,
    #[error("threshold constant C must be > 1, got {0}")]
    InvalidConstant(f64),
    #[error("record {id:?} has {found} dimensions, graph uses {expected}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// Recompute `tau` from the edge statistics on every insertion.
    Dynamic { c: f64 },
    /// Every edge attracts.
    Disabled,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::Dynamic { c: DEFAULT_C }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdState<T> {
    pub mu: T,
    pub sigma: T,
    pub n_nodes: usize,
    pub c_constant: T,
    pub tau: T,
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

#[inline]
fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

#[inline]
fn cosine_with_norms<T: Scalar>(a: &[T], b: &[T], na: T, nb: T) -> T {
    let s = dot(a, b) / (na * nb);
    s.max(-T::one()).min(T::one())
}

/// Cosine similarity clamped to `[-1, 1]`. Both vectors must be non-zero and equally long.
pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    cosine_with_norms(a, b, norm(a), norm(b))
}

/// Target layout distance for a pair with cosine similarity `s`.
#[inline]
pub fn ideal_distance<T: Scalar>(s: T) -> T {
    T::one() - s
}

/// Mean, population standard deviation and the resulting `tau`.
///
/// `ln N / ln C` equals `log_C N`, so the choice of logarithm base does not matter.
pub fn compute_threshold<T: Scalar>(
    similarities: &[T],
    n_nodes: usize,
    c_constant: T,
) -> Result<ThresholdState<T>, SimilarityError> {
    if n_nodes < 2 {
        return Err(SimilarityError::InsufficientNodes(n_nodes));
    }
    if similarities.is_empty() {
        return Err(SimilarityError::NoSimilarities);
    }
    if !(c_constant > T::one()) {
        return Err(SimilarityError::InvalidConstant(c_constant.to_f64_lossy()));
    }
    let count = T::from_usize(similarities.len()).expect("count fits scalar");
    let mu = similarities.iter().copied().sum::<T>() / count;
    let var = similarities
        .iter()
        .map(|s| {
            let d = *s - mu;
            d * d
        })
        .sum::<T>()
        / count;
    let sigma = var.sqrt();
    let n = T::from_usize(n_nodes).expect("node count fits scalar");
    let tau = mu + (n.ln() / c_constant.ln()) * sigma;
    Ok(ThresholdState {
        mu,
        sigma,
        n_nodes,
        c_constant,
        tau,
    })
}

/// Attractive iff `similarity > tau` (strict). `None` disables thresholding.
#[inline]
pub fn classify<T: Scalar>(similarity: T, tau: Option<T>) -> EdgeClass {
    match tau {
        Some(t) if !(similarity > t) => EdgeClass::Repulsive,
        _ => EdgeClass::Attractive,
    }
}

pub fn classify_edges<T: Scalar>(edges: &mut [SimilarityEdge<T>], tau: Option<T>) {
    for e in edges {
        e.classification = classify(e.similarity, tau);
    }
}

/// Complete similarity graph over inserted records, in insertion order.
///
/// Similarities live in a dense symmetric row-major matrix so force accumulation can walk
/// one row per node.
#[derive(Debug, Clone)]
pub struct SimilarityGraph<T> {
    policy: ThresholdPolicy,
    ids: Vec<String>,
    embeddings: Vec<Vec<T>>,
    norms: Vec<T>,
    sims: Vec<T>,
    threshold: Option<ThresholdState<T>>,
}

impl<T: Scalar> SimilarityGraph<T> {
    pub fn new(policy: ThresholdPolicy) -> Self {
        SimilarityGraph {
            policy,
            ids: Vec::new(),
            embeddings: Vec::new(),
            norms: Vec::new(),
            sims: Vec::new(),
            threshold: None,
        }
    }

    pub fn policy(&self) -> ThresholdPolicy {
        self.policy
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.embeddings.first().map(Vec::len)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn embedding(&self, i: usize) -> &[T] {
        &self.embeddings[i]
    }

    pub fn edge_count(&self) -> usize {
        edge_count(self.len())
    }

    #[inline]
    pub fn similarity(&self, i: usize, j: usize) -> T {
        self.sims[i * self.len() + j]
    }

    /// Row `i` of the similarity matrix; the diagonal entry is 1.
    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        let n = self.len();
        &self.sims[i * n..(i + 1) * n]
    }

    pub fn threshold(&self) -> Option<&ThresholdState<T>> {
        self.threshold.as_ref()
    }

    /// Current `tau`; `None` when disabled or fewer than two nodes exist.
    pub fn tau(&self) -> Option<T> {
        self.threshold.map(|t| t.tau)
    }

    pub fn classification(&self, i: usize, j: usize) -> EdgeClass {
        classify(self.similarity(i, j), self.tau())
    }

    pub fn edge(&self, i: usize, j: usize) -> SimilarityEdge<T> {
        SimilarityEdge::new(i, j, self.similarity(i, j), self.tau())
    }

    /// All edges in canonical `(a, b)` order, `a < b`.
    pub fn edges(&self) -> impl Iterator<Item = SimilarityEdge<T>> + '_ {
        let n = self.len();
        (0..n).flat_map(move |a| (a + 1..n).map(move |b| self.edge(a, b)))
    }

    /// Inserts a batch of records: computes one similarity per new pair, then recomputes
    /// `tau` over the full edge set. An empty batch is a no-op.
    pub fn extend(&mut self, records: &[DataRecord]) -> Result<(), SimilarityError> {
        if records.is_empty() {
            return Ok(());
        }
        let dim = self.dim().unwrap_or(records[0].dim());
        if let Some(bad) = records.iter().find(|r| r.dim() != dim) {
            return Err(SimilarityError::DimensionMismatch {
                id: bad.id.clone(),
                expected: dim,
                found: bad.dim(),
            });
        }

        let old_n = self.len();
        for r in records {
            let e: Vec<T> = r.embedding.iter().map(|v| T::lit(*v)).collect();
            self.norms.push(norm(&e));
            self.embeddings.push(e);
            self.ids.push(r.id.clone());
        }
        let n = self.len();

        let embeddings = &self.embeddings;
        let norms = &self.norms;
        let old = &self.sims;
        let mut sims = vec![T::zero(); n * n];
        sims.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = if i == j {
                    T::one()
                } else if i < old_n && j < old_n {
                    old[i * old_n + j]
                } else {
                    let (a, b) = if i < j { (i, j) } else { (j, i) };
                    cosine_with_norms(&embeddings[a], &embeddings[b], norms[a], norms[b])
                };
            }
        });
        self.sims = sims;
        self.recompute_threshold();
        Ok(())
    }

    fn recompute_threshold(&mut self) {
        self.threshold = match self.policy {
            ThresholdPolicy::Disabled => None,
            ThresholdPolicy::Dynamic { c } => {
                let n = self.len();
                let upper: Vec<T> = (0..n)
                    .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
                    .map(|(a, b)| self.similarity(a, b))
                    .collect();
                compute_threshold(&upper, n, T::lit(c)).ok()
            }
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Payload;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn rec(id: &str, e: Vec<f64>) -> DataRecord {
        DataRecord {
            id: id.into(),
            timestamp: chrono::Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap(),
            payload: Payload::Text { text: id.into() },
            embedding: e,
        }
    }

    fn recs(n: usize, offset: usize) -> Vec<DataRecord> {
        (0..n)
            .map(|i| {
                let k = (i + offset) as f64;
                rec(&format!("r{}", i + offset), vec![k.sin() + 1.5, k.cos(), (0.3 * k).sin()])
            })
            .collect()
    }

    #[test]
    fn cosine_examples() {
        let v = [0.3, -2.0, 7.5];
        assert_eq!(cosine_similarity(&v, &v), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        let s: f64 = cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]);
        assert!((s - 0.707_106_781_186_547_6).abs() < 1e-12);
        let s32 = cosine_similarity(&[1.0_f32, 0.0], &[1.0, 1.0]);
        assert!((s32 - std::f32::consts::FRAC_1_SQRT_2).abs() < 1e-6);
    }

    #[test]
    fn threshold_examples() {
        let flat = compute_threshold(&[0.4, 0.4, 0.4], 3, DEFAULT_C).unwrap();
        assert!(flat.sigma.abs() < 1e-15);
        assert!((flat.tau - 0.4).abs() < 1e-15);

        // mu = 0.5, sigma = 0.1 with N = C = 21 gives log ratio 1.
        let sims = [0.4, 0.6];
        let t = compute_threshold(&sims, 21, 21.0_f64).unwrap();
        assert!((t.tau - 0.6).abs() < 1e-12);

        let t = compute_threshold(&sims, 21, DEFAULT_C).unwrap();
        assert!((t.tau - 0.773_457_466).abs() < 1e-9, "{}", t.tau);
    }

    #[test]
    fn threshold_errors() {
        assert_eq!(
            compute_threshold(&[0.5], 1, DEFAULT_C),
            Err(SimilarityError::InsufficientNodes(1))
        );
        assert_eq!(
            compute_threshold::<f64>(&[], 2, DEFAULT_C),
            Err(SimilarityError::NoSimilarities)
        );
        assert!(matches!(
            compute_threshold(&[0.5], 2, 1.0),
            Err(SimilarityError::InvalidConstant(_))
        ));
    }

    #[test]
    fn classification_rule() {
        assert_eq!(classify(0.9, Some(0.77)), EdgeClass::Attractive);
        assert_eq!(classify(0.77, Some(0.77)), EdgeClass::Repulsive);
        assert_eq!(classify(-0.2, Some(-0.2)), EdgeClass::Repulsive);
        assert_eq!(classify(-0.2, Some(0.5)), EdgeClass::Repulsive);
        assert_eq!(classify(-0.9, None), EdgeClass::Attractive);
    }

    #[test]
    fn extend_builds_complete_graph() {
        let mut g = SimilarityGraph::<f64>::new(ThresholdPolicy::default());
        g.extend(&recs(3, 0)).unwrap();
        assert_eq!((g.len(), g.edges().count()), (3, 3));

        let mut g = SimilarityGraph::<f64>::new(ThresholdPolicy::default());
        g.extend(&recs(10, 0)).unwrap();
        g.extend(&recs(5, 10)).unwrap();
        assert_eq!((g.len(), g.edges().count()), (15, 105));

        let tau = g.tau();
        g.extend(&[]).unwrap();
        assert_eq!(g.len(), 15);
        assert_eq!(g.tau(), tau);
    }

    #[test]
    fn edges_match_recomputed_cosines_and_tau() {
        let mut g = SimilarityGraph::<f64>::new(ThresholdPolicy::default());
        let all = recs(12, 0);
        g.extend(&all[..7]).unwrap();
        g.extend(&all[7..]).unwrap();
        let mut sims = Vec::new();
        for e in g.edges() {
            assert!(e.a < e.b);
            let s = cosine_similarity(&all[e.a].embedding, &all[e.b].embedding);
            assert_eq!(e.similarity, s);
            assert_eq!(g.similarity(e.b, e.a), s);
            sims.push(s);
        }
        let t = compute_threshold(&sims, 12, DEFAULT_C).unwrap();
        assert_eq!(g.tau(), Some(t.tau));
        for e in g.edges() {
            assert_eq!(e.classification, classify(e.similarity, Some(t.tau)));
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut g = SimilarityGraph::<f64>::new(ThresholdPolicy::Disabled);
        g.extend(&recs(2, 0)).unwrap();
        let err = g.extend(&[rec("bad", vec![1.0, 2.0])]).unwrap_err();
        assert!(matches!(err, SimilarityError::DimensionMismatch { found: 2, .. }));
        assert!(g.tau().is_none());
    }

    proptest! {
        #[test]
        fn tau_increases_with_node_count(mu in -0.5f64..0.9, sigma in 0.01f64..0.5, n in 2usize..5000) {
            let sims = [mu - sigma, mu + sigma];
            let a = compute_threshold(&sims, n, DEFAULT_C).unwrap();
            let b = compute_threshold(&sims, n + 1, DEFAULT_C).unwrap();
            prop_assert!(b.tau > a.tau);
        }

        #[test]
        fn reclassification_is_idempotent(sims in prop::collection::vec(-1.0f64..1.0, 1..40), tau in -1.0f64..1.0) {
            let mut edges: Vec<_> = sims.iter().enumerate()
                .map(|(i, s)| SimilarityEdge::new(i, i + 1, *s, None)).collect();
            classify_edges(&mut edges, Some(tau));
            let once = edges.clone();
            classify_edges(&mut edges, Some(tau));
            prop_assert_eq!(once, edges);
        }

        #[test]
        fn cosine_stays_in_range(a in prop::collection::vec(-10.0f64..10.0, 4), b in prop::collection::vec(-10.0f64..10.0, 4)) {
            prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
            let s = cosine_similarity(&a, &b);
            prop_assert!((-1.0..=1.0).contains(&s));
        }
    }
}
