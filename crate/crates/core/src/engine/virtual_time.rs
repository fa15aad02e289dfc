//! Discrete-event engine: one thread, no wall-clock reads.
//!
//! At every event instant the engine submits due scripted commands, brings
//! each plant up to the instant under its held input, delivers due network
//! messages, then runs the jobs activated at that instant in
//! [`schedule_next`] order. Each loop drives its own plant instance.

use crate::config::ExperimentConfig;
use crate::control::ControllerRegistry;
use crate::io::{ChannelBinding, MessageKind, NetStats, SampleMessage, SampleSink, SampleSource, VirtualNet, VirtualPort};
use crate::plant::{Plant, SimulatedPlant};
use crate::supervisor::{Ack, JobReport, SupervisorCommand, SupervisorError, SupervisorHub};
use crate::time::{TickDuration, TickTime};
use crate::trace::{JobRecord, Trace};

use super::{schedule_next, EngineError, EngineMode, LoopTask, ScheduleEntry};

/// Replaces or instruments the plant built for a loop.
pub type PlantWrapper = Box<dyn FnMut(u16, Box<dyn Plant>) -> Box<dyn Plant>>;

#[derive(Default)]
pub struct VirtualOptions {
    /// Controller kinds; defaults to the built-ins.
    pub registry: Option<ControllerRegistry>,
    pub hub: Option<SupervisorHub>,
    /// Commands submitted to the hub when virtual time reaches each instant.
    pub scripted: Vec<(TickTime, SupervisorCommand)>,
    pub wrap_plant: Option<PlantWrapper>,
}

#[derive(Debug)]
pub struct VirtualOutcome {
    pub trace: Trace,
    /// Submission time and result of each scripted command.
    pub acks: Vec<(TickTime, Result<Ack, SupervisorError>)>,
    pub net: NetStats,
}

struct Slot {
    task: LoopTask,
    plant: Box<dyn Plant>,
    /// Plant side: publishes `y`, reads `u`.
    y_out: VirtualPort,
    u_in: VirtualPort,
    /// Controller side.
    y_in: VirtualPort,
    u_out: VirtualPort,
    held_u: f64,
    next_k: u64,
    count: u64,
    plant_seq: u32,
}

impl Slot {
    fn next_activation(&self) -> Option<TickTime> {
        (self.next_k < self.count).then(|| self.task.config().activation(self.next_k))
    }

    fn refresh_input(&mut self) {
        if let Ok(Some(msg)) = self.u_in.latest() {
            self.held_u = msg.value;
        }
    }
}

fn inproc_name<'a>(cfg: &'a ExperimentConfig, channel: &str, loop_id: u16) -> Result<&'a ChannelBinding, EngineError> {
    match cfg.binding(channel) {
        Some(b @ ChannelBinding::Inproc { .. }) => Ok(b),
        Some(other) => Err(EngineError::Config(format!(
            "loop {loop_id}: channel {channel:?} is bound to {other}, which cannot run in virtual time"
        ))),
        None => Err(EngineError::Config(format!("loop {loop_id}: channel {channel:?} is not defined"))),
    }
}

pub fn run_virtual(cfg: &ExperimentConfig, duration: TickDuration) -> Result<Trace, EngineError> {
    run_virtual_with(cfg, duration, VirtualOptions::default()).map(|o| o.trace)
}

pub fn run_virtual_with(
    cfg: &ExperimentConfig,
    duration: TickDuration,
    opts: VirtualOptions,
) -> Result<VirtualOutcome, EngineError> {
    let VirtualOptions {
        registry,
        hub,
        mut scripted,
        mut wrap_plant,
    } = opts;
    let registry = registry.unwrap_or_else(ControllerRegistry::with_builtins);
    let mut checked = cfg.clone();
    checked.mode = EngineMode::VirtualTime;
    checked.duration = checked.duration.max(TickDuration(
        cfg.loops.iter().map(|l| l.period.micros() + 1).max().unwrap_or(1),
    ));
    for l in &cfg.loops {
        inproc_name(cfg, &l.sensor, l.loop_id)?;
        inproc_name(cfg, &l.actuator, l.loop_id)?;
    }
    checked
        .validate(&registry)
        .map_err(|e| EngineError::Config(e.to_string()))?;

    let end = TickTime(duration.micros());
    let mut net = VirtualNet::new(cfg.seed, cfg.plant.integrator.substep);
    let mut names = Vec::new();
    for l in &cfg.loops {
        let mut pair = Vec::new();
        for ch in [&l.sensor, &l.actuator] {
            let ChannelBinding::Inproc { name, link } = inproc_name(cfg, ch, l.loop_id)? else {
                unreachable!()
            };
            net.add_link(name, *link);
            pair.push(name.clone());
        }
        names.push(pair);
    }
    let net = net.shared();

    let hub = hub.or_else(|| (!scripted.is_empty()).then(|| SupervisorHub::new(EngineMode::VirtualTime, 64)));
    let mut slots = Vec::with_capacity(cfg.loops.len());
    for (l, pair) in cfg.loops.iter().zip(&names) {
        let task = LoopTask::new(l.clone(), &registry)?;
        let plant = SimulatedPlant::new(cfg.plant.model, cfg.plant.integrator).map_err(|source| EngineError::Plant {
            loop_id: l.loop_id,
            source,
        })?;
        let mut plant: Box<dyn Plant> = Box::new(plant);
        if let Some(wrap) = wrap_plant.as_mut() {
            plant = wrap(l.loop_id, plant);
        }
        if let Some(h) = &hub {
            h.register_loop(l.loop_id, l.period, l.activation(0), task.gains(), l.setpoint);
        }
        let id = l.loop_id;
        slots.push(Slot {
            task,
            plant,
            y_out: VirtualPort::new(&net, &pair[0], MessageKind::SensorSample, id),
            y_in: VirtualPort::new(&net, &pair[0], MessageKind::SensorSample, id),
            u_out: VirtualPort::new(&net, &pair[1], MessageKind::ActuatorCmd, id),
            u_in: VirtualPort::new(&net, &pair[1], MessageKind::ActuatorCmd, id),
            held_u: 0.0,
            next_k: 0,
            count: l.activations_before(end),
            plant_seq: 0,
        });
    }

    scripted.sort_by_key(|(t, _)| *t);
    let mut scripted = scripted.into_iter().peekable();
    let mut acks = Vec::new();
    let mut trace = Trace::default();

    loop {
        let next_job = slots.iter().filter_map(Slot::next_activation).min();
        let next_delivery = net.lock().unwrap().next_delivery().filter(|t| *t < end);
        let Some(now) = next_job.into_iter().chain(next_delivery).min() else {
            break;
        };

        if let Some(h) = &hub {
            while let Some((_, cmd)) = scripted.next_if(|(at, _)| *at <= now) {
                acks.push((now, h.apply_command(cmd)));
            }
        }

        for s in &mut slots {
            let lag = now.saturating_since(s.plant.time());
            if lag.micros() > 0 {
                s.plant.advance(s.held_u, lag).map_err(|source| EngineError::Plant {
                    loop_id: s.task.config().loop_id,
                    source,
                })?;
            }
        }
        {
            let mut n = net.lock().unwrap();
            n.set_now(now);
            n.deliver_due();
        }
        for s in &mut slots {
            s.refresh_input();
        }

        loop {
            let due: Vec<ScheduleEntry> = slots
                .iter()
                .filter(|s| s.next_activation() == Some(now))
                .map(|s| ScheduleEntry {
                    loop_id: s.task.config().loop_id,
                    priority: s.task.config().priority,
                    next: now,
                })
                .collect();
            let Some((loop_id, _)) = schedule_next(&due) else {
                break;
            };
            let s = slots
                .iter_mut()
                .find(|s| s.task.config().loop_id == loop_id)
                .expect("scheduled loop exists");
            s.next_k += 1;
            s.plant_seq = s.plant_seq.wrapping_add(1);
            let sample = SampleMessage::new(MessageKind::SensorSample, loop_id, s.plant_seq, now, s.plant.output());
            s.y_out.send(&sample).expect("virtual ports never fail");
            if let Some(h) = &hub {
                for cmd in h.begin_job(loop_id, now) {
                    s.task.apply(&cmd)?;
                }
            }
            if s.task.paused() {
                if let Some(h) = &hub {
                    h.note_paused(loop_id, s.task.setpoint(), s.task.gains());
                }
                continue;
            }
            let rec = s.task.execute_job(now, &mut s.y_in, &mut s.u_out)?;
            s.refresh_input();
            trace.records.push(rec);
            trace.jobs.push(JobRecord {
                loop_id,
                activation: now,
                start: now,
                finish: now,
                overrun: false,
            });
            if let Some(h) = &hub {
                h.end_job(JobReport {
                    t: now,
                    loop_id,
                    r: rec.r,
                    y: rec.y,
                    u: rec.u,
                    stale: rec.stale,
                    overrun: false,
                    gains: s.task.gains(),
                    paused: false,
                });
            }
        }
    }

    let stats = net.lock().unwrap().stats();
    Ok(VirtualOutcome {
        trace,
        acks,
        net: stats,
    })
}
