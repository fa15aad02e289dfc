//! Wall-clock engine: one periodic thread per loop against live channels.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crate::config::ExperimentConfig;
use crate::control::ControllerRegistry;
use crate::io::{ChannelError, Endpoints, InprocFabric, MessageKind, SampleSink, SampleSource, Side};
use crate::supervisor::{JobReport, SupervisorHub};
use crate::time::{TickDuration, TickTime};
use crate::trace::{JobRecord, Trace, TraceRecord};

use super::plant_host::{HostLimits, PlantHost};
use super::{EngineError, LoopTask};

/// Artificial execution time for job `k` of a loop, for overrun tests.
pub type JobDelay = Arc<dyn Fn(u16, u64) -> Duration + Send + Sync>;

#[derive(Clone, Default)]
pub struct RealtimeOptions {
    pub registry: Option<ControllerRegistry>,
    pub hub: Option<SupervisorHub>,
    pub job_delay: Option<JobDelay>,
}

/// A run that ended early; the records gathered so far are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub error: EngineError,
    pub partial: Trace,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} after {} records", self.error, self.partial.records.len())
    }
}

impl std::error::Error for RunFailure {}

impl From<EngineError> for RunFailure {
    fn from(error: EngineError) -> Self {
        RunFailure {
            error,
            partial: Trace::default(),
        }
    }
}

const POLL: Duration = Duration::from_millis(5);

pub fn run_realtime(cfg: &ExperimentConfig, duration: TickDuration) -> Result<Trace, RunFailure> {
    run_realtime_with(cfg, duration, RealtimeOptions::default())
}

/// Sleeps until `deadline` unless `stop` is raised first. Returns false on stop.
fn sleep_until(deadline: Instant, stop: &AtomicBool) -> bool {
    loop {
        if stop.load(Ordering::Relaxed) {
            return false;
        }
        let now = Instant::now();
        if now >= deadline {
            return true;
        }
        thread::sleep((deadline - now).min(Duration::from_millis(20)));
    }
}

struct LoopRun {
    task: LoopTask,
    sensor: Box<dyn SampleSource>,
    actuator: Box<dyn SampleSink>,
}

pub fn run_realtime_with(
    cfg: &ExperimentConfig,
    duration: TickDuration,
    opts: RealtimeOptions,
) -> Result<Trace, RunFailure> {
    let registry = opts.registry.unwrap_or_else(ControllerRegistry::with_builtins);
    let fabric = InprocFabric::default();
    let stop = Arc::new(AtomicBool::new(false));

    let inproc_loops: Vec<u16> = cfg
        .loops
        .iter()
        .filter(|l| {
            [&l.sensor, &l.actuator]
                .iter()
                .all(|c| cfg.binding(c).is_some_and(|b| b.is_inproc()))
        })
        .map(|l| l.loop_id)
        .collect();
    let host_thread = if inproc_loops.is_empty() {
        None
    } else {
        let mut host = PlantHost::new(cfg, &inproc_loops, fabric.clone())?;
        let stop = stop.clone();
        Some(thread::spawn(move || host.run(&stop, HostLimits::default())))
    };

    let result = run_loops(cfg, duration, &registry, &opts.hub, &opts.job_delay, fabric, &stop);
    stop.store(true, Ordering::SeqCst);
    if let Some(h) = host_thread {
        if let Ok(Err(e)) = h.join() {
            if result.is_ok() {
                return Err(RunFailure {
                    error: e,
                    partial: result.unwrap_or_default(),
                });
            }
        }
    }
    result
}

fn run_loops(
    cfg: &ExperimentConfig,
    duration: TickDuration,
    registry: &ControllerRegistry,
    hub: &Option<SupervisorHub>,
    job_delay: &Option<JobDelay>,
    fabric: InprocFabric,
    stop: &Arc<AtomicBool>,
) -> Result<Trace, RunFailure> {
    let mut endpoints = Endpoints::new(Side::Controller, fabric).with_connect_timeout(cfg.connect_timeout.to_std());
    let bind = |e: ChannelError| match e {
        ChannelError::Closed(m) | ChannelError::Bind(m) | ChannelError::Io(m) => EngineError::BindFailure(m),
        other => EngineError::BindFailure(other.to_string()),
    };
    let mut runs = Vec::new();
    for l in &cfg.loops {
        let lookup = |name: &str| {
            cfg.binding(name)
                .ok_or_else(|| EngineError::Config(format!("loop {}: channel {name:?} is not defined", l.loop_id)))
        };
        let task = LoopTask::new(l.clone(), registry)?;
        let sensor = endpoints
            .source(lookup(&l.sensor)?, MessageKind::SensorSample, l.loop_id)
            .map_err(bind)?;
        let actuator = endpoints.sink(lookup(&l.actuator)?, l.loop_id).map_err(bind)?;
        runs.push(LoopRun { task, sensor, actuator });
    }

    // Wait for every plant to speak before starting the clock.
    let deadline = Instant::now() + cfg.connect_timeout.to_std();
    for run in &mut runs {
        loop {
            match run.sensor.latest() {
                Ok(Some(_)) => break,
                Ok(None) | Err(ChannelError::Timeout) => {}
                Err(e) => return Err(bind(e).into()),
            }
            if Instant::now() >= deadline {
                return Err(EngineError::BindFailure(format!(
                    "no sample from the plant on channel {:?} within {} s",
                    run.task.config().sensor,
                    cfg.connect_timeout
                ))
                .into());
            }
            thread::sleep(POLL);
        }
    }

    if let Some(h) = hub {
        for run in &runs {
            let l = run.task.config();
            h.register_loop(l.loop_id, l.period, l.activation(0), run.task.gains(), l.setpoint);
        }
    }

    let end = TickTime(duration.micros());
    let start = Instant::now();
    let failure: Arc<Mutex<Option<EngineError>>> = Arc::default();
    let link_timeout = cfg.link_timeout.to_std();
    let mut handles = Vec::new();
    for mut run in runs {
        let (hub, delay, stop, failure) = (hub.clone(), job_delay.clone(), stop.clone(), failure.clone());
        let name = format!("loop-{}", run.task.config().loop_id);
        let handle = thread::Builder::new()
            .name(name)
            .spawn(move || {
                let mut records = Vec::new();
                let mut jobs = Vec::new();
                let outcome = loop_thread(&mut run, start, end, link_timeout, &hub, &delay, &stop, &mut records, &mut jobs);
                if let Err(e) = outcome {
                    failure.lock().unwrap().get_or_insert(e);
                    stop.store(true, Ordering::SeqCst);
                }
                (run.task.config().priority, records, jobs)
            })
            .map_err(|e| RunFailure::from(EngineError::BindFailure(e.to_string())))?;
        handles.push(handle);
    }

    let mut tagged: Vec<(u8, TraceRecord)> = Vec::new();
    let mut jobs = Vec::new();
    for h in handles {
        let (prio, recs, js) = h.join().expect("loop thread panicked");
        tagged.extend(recs.into_iter().map(|r| (prio, r)));
        jobs.extend(js);
    }
    tagged.sort_by_key(|(p, r)| (r.t, *p, r.loop_id));
    jobs.sort_by_key(|j: &JobRecord| (j.activation, j.loop_id));
    let trace = Trace {
        records: tagged.into_iter().map(|(_, r)| r).collect(),
        jobs,
    };
    drop(endpoints);
    let error = failure.lock().unwrap().take();
    match error {
        Some(error) => Err(RunFailure { error, partial: trace }),
        None => Ok(trace),
    }
}

#[allow(clippy::too_many_arguments)]
fn loop_thread(
    run: &mut LoopRun,
    start: Instant,
    end: TickTime,
    link_timeout: Duration,
    hub: &Option<SupervisorHub>,
    delay: &Option<JobDelay>,
    stop: &AtomicBool,
    records: &mut Vec<TraceRecord>,
    jobs: &mut Vec<JobRecord>,
) -> Result<(), EngineError> {
    let cfg = run.task.config().clone();
    let mut last_fresh = Instant::now();
    let since_start = |i: Instant| TickTime(i.duration_since(start).as_micros() as u64);
    for k in 0.. {
        let activation = cfg.activation(k);
        if activation >= end {
            break;
        }
        if !sleep_until(start + Duration::from_micros(activation.micros()), stop) {
            break;
        }
        let began = Instant::now();
        if let Some(h) = hub {
            for cmd in h.begin_job(cfg.loop_id, activation) {
                run.task.apply(&cmd)?;
            }
        }
        if run.task.paused() {
            if let Some(h) = hub {
                h.note_paused(cfg.loop_id, run.task.setpoint(), run.task.gains());
            }
            continue;
        }
        let rec = run
            .task
            .execute_job(activation, run.sensor.as_mut(), run.actuator.as_mut())?;
        if let Some(d) = delay {
            thread::sleep(d(cfg.loop_id, k));
        }
        let finished = Instant::now();
        if rec.stale {
            if finished.duration_since(last_fresh) > link_timeout {
                return Err(EngineError::ChannelClosed(format!(
                    "no sample on channel {:?} for {:.1} s",
                    cfg.sensor,
                    finished.duration_since(last_fresh).as_secs_f64()
                )));
            }
        } else {
            last_fresh = finished;
        }
        let finish = since_start(finished);
        let overrun = finish.saturating_since(activation) > cfg.period;
        records.push(rec);
        jobs.push(JobRecord {
            loop_id: cfg.loop_id,
            activation,
            start: since_start(began),
            finish,
            overrun,
        });
        if let Some(h) = hub {
            h.end_job(JobReport {
                t: activation,
                loop_id: cfg.loop_id,
                r: rec.r,
                y: rec.y,
                u: rec.u,
                stale: rec.stale,
                overrun,
                gains: run.task.gains(),
                paused: false,
            });
        }
    }
    Ok(())
}
