use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use driftmap_core::bench::{bench_steps, render_table};
use driftmap_core::synthetic::{generate_synthetic, DriftModel, SyntheticSpec};
use driftmap_core::{load_dataset, run_headless, BatchLimit, RunConfig, TimestepSpec};
use driftmap_server::{client_for, probe, router, AppState};

#[derive(Debug, Parser)]
#[command(name = "driftmap", version, about = "Streaming temporal embedding layout")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Replay a dataset and write one snapshot per batch plus the lineage forest.
    Run {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Batch width such as `3 mo`, `2 d`, `1 y`. Overrides the config file.
        #[arg(long)]
        timestep: Option<TimestepSpec>,
        /// `all` or a number of leading batches.
        #[arg(long, default_value = "all")]
        batches: BatchLimit,
        #[arg(long)]
        seed: Option<u64>,
        /// TOML run configuration.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Measure force-loop step rates.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "200,360,900")]
        nodes: Vec<usize>,
        /// Seconds to run each size for.
        #[arg(long, default_value_t = 2.0)]
        seconds: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Exit non-zero when a size misses its floor.
        #[arg(long)]
        strict: bool,
        /// Also time the live endpoint while an advance of this many nodes is stepping.
        #[arg(long)]
        live_latency: Option<usize>,
    },
    /// Write a synthetic dataset and its ground truth.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 120)]
        points: usize,
        #[arg(long, default_value_t = 3)]
        topics: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 4)]
        batches: usize,
        /// Per-batch rotation of every topic centre, in radians.
        #[arg(long, conflicts_with = "split_at")]
        drift: Option<f64>,
        /// Split topic 0 into two subtopics from this batch on.
        #[arg(long)]
        split_at: Option<usize>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Run {
            input,
            out,
            timestep,
            batches,
            seed,
            config,
        } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(&p).with_context(|| format!("loading {}", p.display()))?,
                None => RunConfig::default(),
            };
            if let Some(t) = timestep {
                cfg.timestep = t;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let records = load_dataset(&input).with_context(|| format!("loading {}", input.display()))?;
            let client = client_for(&cfg);
            let snaps = run_headless(records, &cfg, Some(&out), batches, client)?;
            for s in &snaps {
                println!(
                    "batch {:>3}  nodes {:>5}  clusters {:>3}  misc {:>4}  stress {:.4}",
                    s.batch_index,
                    s.nodes.len(),
                    s.clusters.len(),
                    s.misc_ids.len(),
                    s.stress
                );
            }
            println!("wrote {} snapshots to {}", snaps.len(), out.display());
        }
        Command::Serve { port, host } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
                tracing::info!("listening on {}", listener.local_addr()?);
                axum::serve(listener, router(AppState::new(client_for))).await?;
                anyhow::Ok(())
            })?;
        }
        Command::Bench {
            nodes,
            seconds,
            seed,
            strict,
            live_latency,
        } => {
            let min_time = Duration::from_secs_f64(seconds.max(0.0));
            let results: Vec<_> = nodes.iter().map(|&n| bench_steps(n, 3, min_time, seed)).collect();
            print!("{}", render_table(&results));
            if let Some(n) = live_latency {
                let rt = tokio::runtime::Runtime::new()?;
                let r = rt.block_on(probe::live_latency(n, 300, Duration::from_millis(5), seed))?;
                println!(
                    "live endpoint at {} nodes: {} samples, p50 {:.2} ms, p99 {:.2} ms, max {:.2} ms",
                    r.nodes, r.samples, r.p50_ms, r.p99_ms, r.max_ms
                );
            }
            if strict && results.iter().any(|r| !r.meets_floor()) {
                bail!("step rate below floor");
            }
        }
        Command::Generate {
            out,
            truth,
            points,
            topics,
            dim,
            batches,
            drift,
            split_at,
            seed,
        } => {
            let drift = match (drift, split_at) {
                (Some(angle), _) => DriftModel::Linear { angle },
                (None, Some(at_batch)) => DriftModel::Split {
                    topic: 0,
                    at_batch,
                    pre_angle: 0.3,
                    angle: 1.6,
                },
                (None, None) => DriftModel::None,
            };
            let spec = SyntheticSpec {
                n_points: points,
                n_topics: topics,
                dim,
                batches,
                drift,
                seed,
                ..Default::default()
            };
            generate_synthetic(&spec).write(&out, &truth)?;
            println!("wrote {points} records to {}", out.display());
        }
    }
    Ok(())
}
