//! Multi-rate loop executive: sense, control, actuate at each loop's period,
//! either in deterministic virtual time or against live channels.

mod plant_host;
mod realtime;
mod virtual_time;

pub use plant_host::{HostLimits, HostReport, PlantHost};
pub use realtime::{run_realtime, run_realtime_with, JobDelay, RealtimeOptions, RunFailure};
pub use virtual_time::{run_virtual, run_virtual_with, PlantWrapper, VirtualOptions, VirtualOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ControlError, Controller, ControllerRegistry, ControllerSpec, PidGains};
use crate::io::{ChannelError, MessageKind, SampleMessage, SampleSink, SampleSource};
use crate::plant::PlantError;
use crate::supervisor::{CommandAction, SupervisorCommand};
use crate::time::{TickDuration, TickTime};
use crate::trace::TraceRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineMode {
    VirtualTime,
    RealTime,
}

impl EngineMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EngineMode::VirtualTime => "virtual_time",
            EngineMode::RealTime => "real_time",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub loop_id: u16,
    pub period: TickDuration,
    pub phase: TickDuration,
    /// Lower number runs first at tie instants.
    pub priority: u8,
    pub controller: ControllerSpec,
    pub setpoint: f64,
    /// Channel names, resolved through the experiment's channel table.
    pub sensor: String,
    pub actuator: String,
}

impl LoopConfig {
    /// Activation time of job `k`.
    pub fn activation(&self, k: u64) -> TickTime {
        TickTime(self.phase.micros() + k * self.period.micros())
    }

    /// Number of activations in `[0, end)`.
    pub fn activations_before(&self, end: TickTime) -> u64 {
        if end.micros() <= self.phase.micros() {
            0
        } else {
            (end.micros() - self.phase.micros()).div_ceil(self.period.micros())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("config: {0}")]
    Config(String),
    #[error("channel closed: {0}")]
    ChannelClosed(String),
    #[error("bind failure: {0}")]
    BindFailure(String),
    #[error("loop {loop_id}: {source}")]
    Control { loop_id: u16, source: ControlError },
    #[error("loop {loop_id}: plant: {source}")]
    Plant { loop_id: u16, source: PlantError },
    #[error("loop {loop_id}: channel: {source}")]
    Channel { loop_id: u16, source: ChannelError },
}

/// Entry for [`schedule_next`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleEntry {
    pub loop_id: u16,
    pub priority: u8,
    pub next: TickTime,
}

/// Earliest activation; ties go to the lower priority number, then lower id.
pub fn schedule_next(tasks: &[ScheduleEntry]) -> Option<(u16, TickTime)> {
    tasks
        .iter()
        .min_by_key(|t| (t.next, t.priority, t.loop_id))
        .map(|t| (t.loop_id, t.next))
}

/// A loop's controller, reference and sampling memory.
pub struct LoopTask {
    cfg: LoopConfig,
    controller: Box<dyn Controller>,
    setpoint: f64,
    paused: bool,
    last_y: f64,
    last_seq: Option<u32>,
    out_seq: u32,
}

impl std::fmt::Debug for LoopTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LoopTask")
            .field("loop_id", &self.cfg.loop_id)
            .field("setpoint", &self.setpoint)
            .field("paused", &self.paused)
            .finish()
    }
}

impl LoopTask {
    pub fn new(cfg: LoopConfig, registry: &ControllerRegistry) -> Result<Self, EngineError> {
        let controller = registry
            .instantiate(&cfg.controller)
            .map_err(|source| EngineError::Control {
                loop_id: cfg.loop_id,
                source,
            })?;
        Ok(LoopTask {
            setpoint: cfg.setpoint,
            cfg,
            controller,
            paused: false,
            last_y: 0.0,
            last_seq: None,
            out_seq: 0,
        })
    }

    pub fn config(&self) -> &LoopConfig {
        &self.cfg
    }

    pub fn setpoint(&self) -> f64 {
        self.setpoint
    }

    pub fn paused(&self) -> bool {
        self.paused
    }

    pub fn gains(&self) -> Option<PidGains> {
        self.controller.gains()
    }

    /// Applies a supervisor command between jobs.
    pub fn apply(&mut self, cmd: &SupervisorCommand) -> Result<(), EngineError> {
        match &cmd.action {
            CommandAction::SetSetpoint { value } => self.setpoint = *value,
            CommandAction::SetGains { gains } => {
                self.controller
                    .set_gains(*gains)
                    .map_err(|source| EngineError::Control {
                        loop_id: self.cfg.loop_id,
                        source,
                    })?
            }
            CommandAction::PauseLoop => self.paused = true,
            CommandAction::ResumeLoop => self.paused = false,
        }
        Ok(())
    }

    /// Reads the freshest sensor sample, steps the controller and sends `u`.
    pub fn execute_job(
        &mut self,
        now: TickTime,
        sensor: &mut dyn SampleSource,
        actuator: &mut dyn SampleSink,
    ) -> Result<TraceRecord, EngineError> {
        let loop_id = self.cfg.loop_id;
        let channel = |source: ChannelError| match source {
            ChannelError::Closed(what) => EngineError::ChannelClosed(what),
            source => EngineError::Channel { loop_id, source },
        };
        let fresh = match sensor.latest() {
            Ok(Some(msg)) if self.last_seq.is_none_or(|s| msg.seq > s) => Some(msg),
            Ok(_) | Err(ChannelError::Timeout) => None,
            Err(e) => return Err(channel(e)),
        };
        let stale = match fresh {
            Some(msg) => {
                self.last_seq = Some(msg.seq);
                self.last_y = msg.value;
                false
            }
            None => true,
        };
        let y = self.last_y;
        let u = self
            .controller
            .step(self.setpoint, y, self.cfg.period)
            .map_err(|source| EngineError::Control { loop_id, source })?;
        self.out_seq = self.out_seq.wrapping_add(1);
        actuator
            .send(&SampleMessage::new(MessageKind::ActuatorCmd, loop_id, self.out_seq, now, u))
            .map_err(channel)?;
        Ok(TraceRecord {
            t: now,
            loop_id,
            r: self.setpoint,
            y,
            u,
            stale,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(loop_id: u16, priority: u8, next: u64) -> ScheduleEntry {
        ScheduleEntry {
            loop_id,
            priority,
            next: TickTime(next),
        }
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(
            schedule_next(&[entry(0, 1, 100_000), entry(1, 0, 500_000)]),
            Some((0, TickTime(100_000)))
        );
        assert_eq!(schedule_next(&[entry(0, 1, 0), entry(1, 0, 0)]), Some((1, TickTime(0))));
        assert_eq!(schedule_next(&[entry(2, 0, 0), entry(1, 0, 0)]), Some((1, TickTime(0))));
        assert_eq!(schedule_next(&[]), None);
    }

    fn tank_loop() -> LoopConfig {
        LoopConfig {
            loop_id: 0,
            period: TickDuration(100_000),
            phase: TickDuration(0),
            priority: 0,
            controller: ControllerSpec::pid(&PidGains::default()),
            setpoint: 10.0,
            sensor: "y".into(),
            actuator: "u".into(),
        }
    }

    struct Fixed(Option<SampleMessage>);
    impl SampleSource for Fixed {
        fn latest(&mut self) -> Result<Option<SampleMessage>, ChannelError> {
            Ok(self.0)
        }
    }
    #[derive(Default)]
    struct Collect(Vec<SampleMessage>);
    impl SampleSink for Collect {
        fn send(&mut self, msg: &SampleMessage) -> Result<(), ChannelError> {
            self.0.push(*msg);
            Ok(())
        }
    }

    #[test]
    fn first_tank_job_saturates() {
        let mut task = LoopTask::new(tank_loop(), &ControllerRegistry::with_builtins()).unwrap();
        let mut src = Fixed(Some(SampleMessage::new(MessageKind::SensorSample, 0, 1, TickTime(0), 0.0)));
        let mut sink = Collect::default();
        let rec = task.execute_job(TickTime(0), &mut src, &mut sink).unwrap();
        assert_eq!((rec.r, rec.y, rec.u, rec.stale), (10.0, 0.0, 4.0, false));
        assert_eq!(sink.0[0].kind, MessageKind::ActuatorCmd);
        assert_eq!(sink.0[0].value, 4.0);
    }

    #[test]
    fn silent_sensor_reuses_last_sample() {
        let mut task = LoopTask::new(tank_loop(), &ControllerRegistry::with_builtins()).unwrap();
        let mut src = Fixed(Some(SampleMessage::new(MessageKind::SensorSample, 0, 5, TickTime(0), 3.0)));
        let mut sink = Collect::default();
        task.execute_job(TickTime(0), &mut src, &mut sink).unwrap();
        let rec = task.execute_job(TickTime(100_000), &mut src, &mut sink).unwrap();
        assert!(rec.stale);
        assert_eq!(rec.y, 3.0);
        let rec = task.execute_job(TickTime(200_000), &mut Fixed(None), &mut sink).unwrap();
        assert!(rec.stale);
        assert_eq!(rec.y, 3.0);
    }

    #[test]
    fn closed_sensor_is_fatal() {
        struct Gone;
        impl SampleSource for Gone {
            fn latest(&mut self) -> Result<Option<SampleMessage>, ChannelError> {
                Err(ChannelError::Closed("peer".into()))
            }
        }
        let mut task = LoopTask::new(tank_loop(), &ControllerRegistry::with_builtins()).unwrap();
        let err = task
            .execute_job(TickTime(0), &mut Gone, &mut Collect::default())
            .unwrap_err();
        assert!(matches!(err, EngineError::ChannelClosed(_)));
    }

    #[test]
    fn activation_counts() {
        let mut l = tank_loop();
        assert_eq!(l.activations_before(TickTime(10_000_000)), 100);
        l.period = TickDuration(500_000);
        assert_eq!(l.activations_before(TickTime(10_000_000)), 20);
        l.phase = TickDuration(250_000);
        assert_eq!(l.activations_before(TickTime(10_000_000)), 20);
        assert_eq!(l.activations_before(TickTime(250_000)), 0);
        assert_eq!(l.activation(3), TickTime(1_750_000));
    }
}
