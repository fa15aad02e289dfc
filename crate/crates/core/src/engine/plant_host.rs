//! Real-time plant process: steps each hosted plant on a fixed wall-clock
//! ticker, publishing `y` and applying the latest received `u`.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use crate::config::ExperimentConfig;
use crate::io::{ChannelError, Endpoints, InprocFabric, MessageKind, SampleMessage, SampleSink, SampleSource, Side};
use crate::plant::{Plant, SimulatedPlant};
use crate::time::{TickDuration, TickTime};

use super::EngineError;

#[derive(Debug, Clone, Copy, Default)]
pub struct HostLimits {
    /// Stop after this much wall-clock time.
    pub max_run: Option<Duration>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HostReport {
    pub ticks: u64,
    /// Ticks that started more than one tick late.
    pub late_ticks: u64,
    /// Per loop: (loop_id, commands received, times the held input changed).
    pub loops: Vec<(u16, u64, u64)>,
}

struct Hosted {
    loop_id: u16,
    plant: Box<dyn Plant>,
    y_out: Box<dyn SampleSink>,
    u_in: Box<dyn SampleSource>,
    held_u: f64,
    last_cmd_seq: Option<u32>,
    commands: u64,
    changes: u64,
    seq: u32,
}

pub struct PlantHost {
    hosted: Vec<Hosted>,
    tick: TickDuration,
    // Keeps receiver threads and listeners alive.
    _endpoints: Endpoints,
}

impl std::fmt::Debug for PlantHost {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PlantHost")
            .field("loops", &self.hosted.iter().map(|h| h.loop_id).collect::<Vec<_>>())
            .field("tick", &self.tick)
            .finish()
    }
}

impl PlantHost {
    /// Opens the plant side of every loop in `loop_ids`.
    pub fn new(cfg: &ExperimentConfig, loop_ids: &[u16], fabric: InprocFabric) -> Result<Self, EngineError> {
        let mut endpoints = Endpoints::new(Side::Plant, fabric).with_connect_timeout(cfg.connect_timeout.to_std());
        let bind = |e: ChannelError| EngineError::BindFailure(e.to_string());
        let mut hosted = Vec::new();
        for &id in loop_ids {
            let l = cfg
                .loop_config(id)
                .ok_or_else(|| EngineError::Config(format!("no loop {id}")))?;
            let lookup = |name: &str| {
                cfg.binding(name)
                    .ok_or_else(|| EngineError::Config(format!("loop {id}: channel {name:?} is not defined")))
            };
            let y_out = endpoints.sink(lookup(&l.sensor)?, id).map_err(bind)?;
            let u_in = endpoints
                .source(lookup(&l.actuator)?, MessageKind::ActuatorCmd, id)
                .map_err(bind)?;
            let plant = SimulatedPlant::new(cfg.plant.model, cfg.plant.integrator)
                .map_err(|source| EngineError::Plant { loop_id: id, source })?;
            hosted.push(Hosted {
                loop_id: id,
                plant: Box::new(plant),
                y_out,
                u_in,
                held_u: 0.0,
                last_cmd_seq: None,
                commands: 0,
                changes: 0,
                seq: 0,
            });
        }
        Ok(PlantHost {
            hosted,
            tick: cfg.plant.publish,
            _endpoints: endpoints,
        })
    }

    /// Runs until `stop` is set or the limit expires.
    pub fn run(&mut self, stop: &AtomicBool, limits: HostLimits) -> Result<HostReport, EngineError> {
        let start = Instant::now();
        let tick = self.tick.to_std();
        let mut report = HostReport::default();
        let mut k: u64 = 0;
        while !stop.load(Ordering::Relaxed) {
            if limits.max_run.is_some_and(|m| start.elapsed() >= m) {
                break;
            }
            let deadline = start + Duration::from_micros(k * self.tick.micros());
            let now = Instant::now();
            if deadline > now {
                std::thread::sleep((deadline - now).min(Duration::from_millis(50)));
                continue;
            }
            if now - deadline > tick {
                report.late_ticks += 1;
            }
            let t = TickTime(k * self.tick.micros());
            for h in &mut self.hosted {
                h.seq = h.seq.wrapping_add(1);
                let msg = SampleMessage::new(MessageKind::SensorSample, h.loop_id, h.seq, t, h.plant.output());
                match h.y_out.send(&msg) {
                    Ok(()) | Err(ChannelError::Io(_)) | Err(ChannelError::Closed(_)) => {}
                    Err(e) => {
                        return Err(EngineError::Channel {
                            loop_id: h.loop_id,
                            source: e,
                        })
                    }
                }
                if let Ok(Some(cmd)) = h.u_in.latest() {
                    if h.last_cmd_seq.is_none_or(|s| cmd.seq > s) && cmd.value.is_finite() {
                        h.last_cmd_seq = Some(cmd.seq);
                        h.commands += 1;
                        if cmd.value != h.held_u {
                            h.changes += 1;
                            h.held_u = cmd.value;
                        }
                    }
                }
                h.plant
                    .advance(h.held_u, self.tick)
                    .map_err(|source| EngineError::Plant {
                        loop_id: h.loop_id,
                        source,
                    })?;
            }
            report.ticks += 1;
            k += 1;
        }
        report.loops = self.hosted.iter().map(|h| (h.loop_id, h.commands, h.changes)).collect();
        Ok(report)
    }
}
