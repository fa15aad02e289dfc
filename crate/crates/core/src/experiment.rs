//! One-call experiment runner shared by the CLI and the FFI layer.

use std::sync::atomic::AtomicBool;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::engine::{
    run_realtime_with, run_virtual_with, EngineError, EngineMode, HostLimits, HostReport, PlantHost,
    RealtimeOptions, RunFailure, VirtualOptions,
};
use crate::io::InprocFabric;
use crate::metrics::{compute_metrics, diverged, Metrics};
use crate::supervisor::{serve, SupervisorHub, SupervisorServer};
use crate::trace::{write_trace_csv, Trace, TraceError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopSummary {
    pub loop_id: u16,
    pub jobs: usize,
    pub stale: usize,
    pub overruns: usize,
    /// `None` for a loop that executed no job.
    pub metrics: Option<Metrics>,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub trace: Trace,
    pub loops: Vec<LoopSummary>,
}

impl ExperimentReport {
    pub fn diverged(&self) -> bool {
        self.loops.iter().any(|l| l.diverged)
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Run(RunFailure),
    #[error("writing trace: {0}")]
    Trace(#[from] TraceError),
    #[error("supervisor: {0}")]
    Supervisor(std::io::Error),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => EXIT_CONFIG,
            ExperimentError::Run(f) if matches!(f.error, EngineError::Config(_)) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        }
    }
}

/// Per-loop summaries; metrics use each loop's configured setpoint.
pub fn summarize(cfg: &ExperimentConfig, trace: &Trace) -> Vec<LoopSummary> {
    cfg.loops
        .iter()
        .map(|l| {
            let recs: Vec<_> = trace.for_loop(l.loop_id).copied().collect();
            LoopSummary {
                loop_id: l.loop_id,
                jobs: recs.len(),
                stale: recs.iter().filter(|r| r.stale).count(),
                overruns: trace.jobs.iter().filter(|j| j.loop_id == l.loop_id && j.overrun).count(),
                metrics: compute_metrics(&recs, l.setpoint, cfg.metrics.band_pct, cfg.metrics.tail_pct).ok(),
                diverged: diverged(&recs, cfg.metrics.diverge_limit),
            }
        })
        .collect()
}

fn start_supervisor(cfg: &ExperimentConfig) -> Result<Option<(SupervisorHub, SupervisorServer)>, ExperimentError> {
    if !cfg.supervisor.enabled {
        return Ok(None);
    }
    let hub = SupervisorHub::new(cfg.mode, cfg.supervisor.queue);
    let server = serve(hub.clone(), &cfg.supervisor.listen).map_err(ExperimentError::Supervisor)?;
    eprintln!("supervisor listening on http://{}", server.local_addr());
    Ok(Some((hub, server)))
}

/// Runs `cfg` in its configured mode, writes the trace if an output path is
/// set, and summarizes each loop. A failed real-time run still writes the
/// partial trace before returning the error.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    let supervisor = start_supervisor(cfg)?;
    let hub = supervisor.as_ref().map(|(h, _)| h.clone());
    let outcome = match cfg.mode {
        EngineMode::VirtualTime => run_virtual_with(
            cfg,
            cfg.duration,
            VirtualOptions {
                hub,
                ..Default::default()
            },
        )
        .map(|o| o.trace)
        .map_err(RunFailure::from),
        EngineMode::RealTime => run_realtime_with(
            cfg,
            cfg.duration,
            RealtimeOptions {
                hub,
                ..Default::default()
            },
        ),
    };
    drop(supervisor);
    let trace = match outcome {
        Ok(t) => t,
        Err(failure) => {
            if let Some(path) = &cfg.output {
                if !failure.partial.records.is_empty() {
                    write_trace_csv(&failure.partial.records, path)?;
                }
            }
            return Err(ExperimentError::Run(failure));
        }
    };
    if let Some(path) = &cfg.output {
        write_trace_csv(&trace.records, path)?;
    }
    let loops = summarize(cfg, &trace);
    Ok(ExperimentReport { trace, loops })
}

/// Hosts every configured loop's plant on the real-time ticker until `stop`
/// is raised or `duration + linger` has elapsed.
pub fn serve_plant(cfg: &ExperimentConfig, linger: Duration, stop: &AtomicBool) -> Result<HostReport, EngineError> {
    let ids: Vec<u16> = cfg.loops.iter().map(|l| l.loop_id).collect();
    let mut host = PlantHost::new(cfg, &ids, InprocFabric::default())?;
    host.run(
        stop,
        HostLimits {
            max_run: Some(cfg.duration.to_std() + linger),
        },
    )
}
