//! `simulate`: replica orchestration and result files.
//!
//! Files written to the output directory:
//!
//! | file               | content                                                        |
//! |--------------------|----------------------------------------------------------------|
//! | `records.jsonl`    | one line per replica, engine and observer                       |
//! | `events.jsonl`     | one line per attachment (only with the `events` observer)       |
//! | `tau.csv`          | `replica,k,tau_k` (only with the `tau` observer)                |
//! | `leader_curve.csv` | `engine,horizon,median_changes,median_last_change`              |
//! | `tau_profile.csv`  | `k,median_tau,median_doubling_gap`                              |
//! | `config.toml`      | config echo, loadable with `--config`                           |
//! | `aggregate.json`   | config echo, per-replica summaries, aggregates, version, timing |
//!
//! Every line carries `schema_version`. Replicas may finish in any order;
//! files are always written in replica order, so everything except the
//! timing field of `aggregate.json` is a pure function of the config.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use gpalab::analysis::{
    replica_aggregate, tau_profile, AggregateReport, EventLog, LeaderTimeline, ReplicaSummary,
};
use gpalab::discrete::AttachObserver;
use gpalab::{cmj, discrete, AttachmentSpec, RngStream};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{Engine, Observer, SimConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct EngineRun {
    pub summary: ReplicaSummary,
    pub degrees: Option<Vec<(u64, u64)>>,
    pub events: Option<EventLog>,
    pub tau: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ReplicaOutput {
    pub replica: u64,
    pub engine: Engine,
    pub result: std::result::Result<EngineRun, String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FailedReplica {
    pub replica: u64,
    pub engine: Engine,
    pub error: String,
}

#[derive(Debug, Serialize)]
pub struct RunResult {
    pub schema_version: u32,
    pub software_version: &'static str,
    pub config: SimConfig,
    /// The same config as TOML, loadable with `--config`.
    pub config_toml: String,
    pub wall_clock_seconds: f64,
    pub failed_replicas: Vec<FailedReplica>,
    pub aggregates: BTreeMap<&'static str, AggregateReport>,
    pub replicas: Vec<serde_json::Value>,
}

fn degree_histogram(outdeg: &[u64]) -> Vec<(u64, u64)> {
    let mut h: BTreeMap<u64, u64> = BTreeMap::new();
    for &d in outdeg {
        *h.entry(d).or_default() += 1;
    }
    h.into_iter().collect()
}

fn leader_horizons(cfg: &SimConfig) -> Vec<u64> {
    let mut h = cfg.leader_horizons.clone();
    if cfg.max_time.is_none() {
        h.push(cfg.horizon);
    }
    h.sort_unstable();
    h.dedup();
    h
}

pub fn run_replica(
    cfg: &SimConfig,
    spec: &AttachmentSpec,
    replica: u64,
    engine: Engine,
) -> gpalab::Result<EngineRun> {
    // Each engine gets its own stream so adding an engine leaves the other's
    // output unchanged.
    let stream = 2 * replica + matches!(engine, Engine::Cmj) as u64;
    let mut rng = RngStream::for_replica(cfg.master_seed, stream);
    let mut timeline = cfg.wants(Observer::Leader).then(LeaderTimeline::new);
    let mut events = cfg.wants(Observer::Events).then(EventLog::default);
    let mut observers: Vec<&mut dyn AttachObserver> = Vec::new();
    if let Some(t) = timeline.as_mut() {
        observers.push(t);
    }
    if let Some(e) = events.as_mut() {
        observers.push(e);
    }

    let (outdeg, tau) = match engine {
        Engine::Discrete => {
            let s = discrete::run(spec, cfg.horizon, &mut rng, &mut observers)?;
            (s.outdeg().to_vec(), None)
        }
        Engine::Cmj => {
            let s = cmj::run(spec, cfg.horizon + 1, cfg.max_time, &mut rng, &mut observers)?;
            (s.outdeg().to_vec(), Some(s.tau().to_vec()))
        }
    };
    drop(observers);

    let profile = match (&tau, cfg.wants(Observer::Tau)) {
        (Some(t), true) => Some(tau_profile(t, &cfg.checkpoints)?),
        _ => None,
    };
    Ok(EngineRun {
        summary: ReplicaSummary {
            replica,
            leader: timeline.map(|t| t.summary(&leader_horizons(cfg))),
            tau: profile,
        },
        degrees: cfg
            .wants(Observer::Degrees)
            .then(|| degree_histogram(&outdeg)),
        events,
        tau: tau.filter(|_| cfg.wants(Observer::Tau)),
    })
}

pub fn thread_count(cfg: &SimConfig) -> usize {
    std::env::var("GPALAB_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(cfg.threads)
}

/// Runs every replica on every requested engine, in replica order.
pub fn run_all(cfg: &SimConfig, spec: &AttachmentSpec) -> Result<Vec<ReplicaOutput>> {
    let jobs: Vec<(u64, Engine)> = (0..cfg.replicas)
        .flat_map(|r| cfg.engine.engines().iter().map(move |&e| (r, e)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count(cfg))
        .build()
        .context("building thread pool")?;
    Ok(pool.install(|| {
        jobs.par_iter()
            .map(|&(replica, engine)| ReplicaOutput {
                replica,
                engine,
                result: run_replica(cfg, spec, replica, engine).map_err(|e| e.to_string()),
            })
            .collect()
    }))
}

fn record(replica: u64, engine: Engine, observer: &str, data: serde_json::Value) -> serde_json::Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "replica": replica,
        "engine": engine,
        "observer": observer,
        "data": data,
    })
}

fn writer(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// Writes all output files and returns the run record.
pub fn write_outputs(cfg: &SimConfig, outputs: &[ReplicaOutput], started: Instant) -> Result<RunResult> {
    let dir = &cfg.out;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;

    let mut records = writer(dir, "records.jsonl")?;
    let mut events = cfg
        .wants(Observer::Events)
        .then(|| writer(dir, "events.jsonl"))
        .transpose()?;
    let mut tau_csv = cfg
        .wants(Observer::Tau)
        .then(|| writer(dir, "tau.csv"))
        .transpose()?;
    if let Some(w) = tau_csv.as_mut() {
        writeln!(w, "replica,k,tau_k")?;
    }

    let mut failed = Vec::new();
    let mut by_engine: BTreeMap<Engine, Vec<ReplicaSummary>> = BTreeMap::new();
    let mut per_replica = Vec::new();
    for out in outputs {
        let run = match &out.result {
            Ok(run) => run,
            Err(e) => {
                let line = json!({
                    "schema_version": SCHEMA_VERSION,
                    "replica": out.replica,
                    "engine": out.engine,
                    "observer": "status",
                    "status": "failed",
                    "error": e,
                });
                writeln!(records, "{line}")?;
                failed.push(FailedReplica {
                    replica: out.replica,
                    engine: out.engine,
                    error: e.clone(),
                });
                continue;
            }
        };
        let s = &run.summary;
        if let Some(l) = &s.leader {
            writeln!(records, "{}", record(out.replica, out.engine, "leader", json!(l)))?;
        }
        if let Some(t) = &s.tau {
            writeln!(records, "{}", record(out.replica, out.engine, "tau", json!(t)))?;
        }
        if let Some(d) = &run.degrees {
            writeln!(records, "{}", record(out.replica, out.engine, "degrees", json!(d)))?;
        }
        if let (Some(w), Some(log)) = (events.as_mut(), &run.events) {
            for e in &log.0 {
                let line = json!({
                    "schema_version": SCHEMA_VERSION,
                    "replica": out.replica,
                    "engine": out.engine,
                    "step": e.step,
                    "child": e.child,
                    "parent": e.parent,
                    "parent_new_degree": e.parent_new_degree,
                });
                writeln!(w, "{line}")?;
            }
        }
        if let (Some(w), Some(tau)) = (tau_csv.as_mut(), &run.tau) {
            for (i, t) in tau.iter().enumerate() {
                let k = i as u64 + 1;
                if k == 1 || k.is_multiple_of(cfg.tau_stride) || k == tau.len() as u64 {
                    writeln!(w, "{},{k},{t}", out.replica)?;
                }
            }
        }
        per_replica.push(json!({ "engine": out.engine, "summary": s }));
        by_engine.entry(out.engine).or_default().push(s.clone());
    }
    records.flush()?;
    if let Some(mut w) = events {
        w.flush()?;
    }
    if let Some(mut w) = tau_csv {
        w.flush()?;
    }

    let mut aggregates = BTreeMap::new();
    let mut leader_csv = writer(dir, "leader_curve.csv")?;
    writeln!(leader_csv, "engine,horizon,median_changes,median_last_change")?;
    let mut tau_profile_csv = writer(dir, "tau_profile.csv")?;
    writeln!(tau_profile_csv, "k,median_tau,median_doubling_gap")?;
    for (engine, summaries) in &by_engine {
        let agg = match replica_aggregate(summaries) {
            Ok(a) => a,
            // Replicas stopped by `max_time` can report different horizons.
            Err(_) => continue,
        };
        if let Some(l) = &agg.leader {
            for h in &l.by_horizon {
                writeln!(
                    leader_csv,
                    "{},{},{},{}",
                    engine.name(),
                    h.horizon,
                    h.changes.median,
                    h.last_change.median
                )?;
            }
        }
        if let Some(t) = &agg.tau {
            for c in t {
                writeln!(tau_profile_csv, "{},{},{}", c.k, c.tau.median, c.doubling_gap.median)?;
            }
        }
        aggregates.insert(engine.name(), agg);
    }
    leader_csv.flush()?;
    tau_profile_csv.flush()?;

    let result = RunResult {
        schema_version: SCHEMA_VERSION,
        software_version: env!("CARGO_PKG_VERSION"),
        config: cfg.clone(),
        config_toml: cfg.to_toml(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        failed_replicas: failed,
        aggregates,
        replicas: per_replica,
    };
    std::fs::write(dir.join("config.toml"), &result.config_toml)?;
    let mut agg_file = writer(dir, "aggregate.json")?;
    serde_json::to_writer_pretty(&mut agg_file, &result)?;
    writeln!(agg_file)?;
    agg_file.flush()?;
    Ok(result)
}
