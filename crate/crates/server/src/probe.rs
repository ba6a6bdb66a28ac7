//! Live-view responsiveness under load: times `GET /live` while an advance is stepping.

use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use serde::Serialize;
use tower::ServiceExt;

use driftmap_core::layout::StopRule;
use driftmap_core::synthetic::{generate_synthetic, SyntheticSpec};
use driftmap_core::RunConfig;

use crate::api::{router, AppState};

#[derive(Debug, Clone, Serialize)]
pub struct LatencyReport {
    pub nodes: usize,
    pub samples: usize,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Advances one batch of `nodes` synthetic records, capped at `max_iters` steps, and polls the
/// live endpoint every `interval` until the advance returns.
pub async fn live_latency(nodes: usize, max_iters: usize, interval: Duration, seed: u64) -> anyhow::Result<LatencyReport> {
    let spec = SyntheticSpec {
        n_points: nodes,
        n_topics: 6,
        dim: 32,
        batches: 1,
        seed,
        ..Default::default()
    };
    let config = RunConfig {
        timestep: spec.timestep.clone(),
        relax: StopRule { max_iters, tol: 0.0 },
        seed,
        ..Default::default()
    };
    let state = AppState::new(|_| None);
    let app = router(state.clone());
    let id = state.insert_session(generate_synthetic(&spec).records, config)?.session_id;

    let advance = tokio::spawn(
        app.clone()
            .oneshot(Request::post(format!("/sessions/{id}/advance")).body(Body::empty())?),
    );
    let mut times = Vec::new();
    while !advance.is_finished() {
        let t = Instant::now();
        let resp = app
            .clone()
            .oneshot(Request::get(format!("/sessions/{id}/live")).body(Body::empty())?)
            .await?;
        axum::body::to_bytes(resp.into_body(), usize::MAX).await?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
        tokio::time::sleep(interval).await;
    }
    let status = advance.await??.status();
    anyhow::ensure!(status == StatusCode::OK, "advance returned {status}");

    times.sort_by(f64::total_cmp);
    Ok(LatencyReport {
        nodes,
        samples: times.len(),
        p50_ms: percentile(&times, 0.5),
        p99_ms: percentile(&times, 0.99),
        max_ms: times.last().copied().unwrap_or(f64::NAN),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&xs, 0.5), 50.0);
        assert_eq!(percentile(&xs, 0.99), 99.0);
        assert_eq!(percentile(&xs[..1], 0.99), 1.0);
        assert!(percentile(&[], 0.5).is_nan());
    }
}
