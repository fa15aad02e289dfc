//! Operator surface: per-loop command mailboxes, live status and telemetry fan-out.
//!
//! Loops talk to the hub at two points per activation: [`SupervisorHub::begin_job`]
//! drains the commands queued for that activation, and [`SupervisorHub::end_job`]
//! publishes the resulting telemetry. A command is acknowledged with the
//! first activation that has not begun at submission time; the mailbox lock
//! makes that acknowledgment exact.

mod http;

pub use http::{serve, SupervisorServer};

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use crossbeam_channel::{bounded, Receiver, Sender, TrySendError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::PidGains;
use crate::engine::EngineMode;
use crate::time::{TickDuration, TickTime};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CommandAction {
    SetSetpoint { value: f64 },
    SetGains { gains: PidGains },
    PauseLoop,
    ResumeLoop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisorCommand {
    pub loop_id: u16,
    #[serde(flatten)]
    pub action: CommandAction,
}

impl SupervisorCommand {
    pub fn set_setpoint(loop_id: u16, value: f64) -> Self {
        SupervisorCommand {
            loop_id,
            action: CommandAction::SetSetpoint { value },
        }
    }

    pub fn set_gains(loop_id: u16, gains: PidGains) -> Self {
        SupervisorCommand {
            loop_id,
            action: CommandAction::SetGains { gains },
        }
    }

    pub fn pause(loop_id: u16) -> Self {
        SupervisorCommand {
            loop_id,
            action: CommandAction::PauseLoop,
        }
    }

    pub fn resume(loop_id: u16) -> Self {
        SupervisorCommand {
            loop_id,
            action: CommandAction::ResumeLoop,
        }
    }

    pub fn validate(&self) -> Result<(), SupervisorError> {
        match &self.action {
            CommandAction::SetSetpoint { value } if !value.is_finite() => {
                Err(SupervisorError::InvalidPayload(format!("setpoint {value} is not finite")))
            }
            CommandAction::SetGains { gains } => gains
                .validate()
                .map_err(|e| SupervisorError::InvalidPayload(e.to_string())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub loop_id: u16,
    /// Activation tick at which the command takes effect.
    pub apply_at_us: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SupervisorError {
    #[error("unknown loop {0}")]
    UnknownLoop(u16),
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
}

/// One executed job, as streamed to subscribers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub t_us: u64,
    pub loop_id: u16,
    pub r: f64,
    pub y: f64,
    pub u: f64,
    pub stale: bool,
    pub overruns_total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopStatus {
    pub loop_id: u16,
    pub period_us: u64,
    pub gains: Option<PidGains>,
    pub setpoint: f64,
    pub last_y: Option<f64>,
    pub last_u: Option<f64>,
    pub last_t_us: Option<u64>,
    pub jobs: u64,
    pub overruns: u64,
    pub paused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusDocument {
    pub mode: EngineMode,
    pub uptime_us: u64,
    pub loops: BTreeMap<String, LoopStatus>,
    pub subscribers: usize,
    pub lag_disconnects: u64,
}

/// What a loop reports after executing a job.
#[derive(Debug, Clone, Copy)]
pub struct JobReport {
    pub t: TickTime,
    pub loop_id: u16,
    pub r: f64,
    pub y: f64,
    pub u: f64,
    pub stale: bool,
    pub overrun: bool,
    pub gains: Option<PidGains>,
    pub paused: bool,
}

struct LoopSlot {
    period: TickDuration,
    next_unstarted: TickTime,
    pending: Vec<SupervisorCommand>,
    status: LoopStatus,
}

struct Inner {
    mode: EngineMode,
    started: Instant,
    queue_capacity: usize,
    loops: Mutex<BTreeMap<u16, LoopSlot>>,
    subscribers: Mutex<Vec<Sender<TelemetryFrame>>>,
    overruns_total: AtomicU64,
    lag_disconnects: AtomicU64,
}

#[derive(Clone)]
pub struct SupervisorHub {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for SupervisorHub {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SupervisorHub").field("mode", &self.inner.mode).finish()
    }
}

impl SupervisorHub {
    /// `queue_capacity` bounds each subscriber's backlog before it is dropped.
    pub fn new(mode: EngineMode, queue_capacity: usize) -> Self {
        SupervisorHub {
            inner: Arc::new(Inner {
                mode,
                started: Instant::now(),
                queue_capacity: queue_capacity.max(1),
                loops: Mutex::new(BTreeMap::new()),
                subscribers: Mutex::new(Vec::new()),
                overruns_total: AtomicU64::new(0),
                lag_disconnects: AtomicU64::new(0),
            }),
        }
    }

    pub fn register_loop(
        &self,
        loop_id: u16,
        period: TickDuration,
        first_activation: TickTime,
        gains: Option<PidGains>,
        setpoint: f64,
    ) {
        self.inner.loops.lock().unwrap().insert(
            loop_id,
            LoopSlot {
                period,
                next_unstarted: first_activation,
                pending: Vec::new(),
                status: LoopStatus {
                    loop_id,
                    period_us: period.micros(),
                    gains,
                    setpoint,
                    last_y: None,
                    last_u: None,
                    last_t_us: None,
                    jobs: 0,
                    overruns: 0,
                    paused: false,
                },
            },
        );
    }

    /// Validates and queues `cmd` for the target loop's next activation.
    pub fn apply_command(&self, cmd: SupervisorCommand) -> Result<Ack, SupervisorError> {
        cmd.validate()?;
        let mut loops = self.inner.loops.lock().unwrap();
        let slot = loops
            .get_mut(&cmd.loop_id)
            .ok_or(SupervisorError::UnknownLoop(cmd.loop_id))?;
        if matches!(cmd.action, CommandAction::SetGains { .. }) && slot.status.gains.is_none() {
            return Err(SupervisorError::InvalidPayload(format!(
                "loop {} has no tunable gains",
                cmd.loop_id
            )));
        }
        let ack = Ack {
            loop_id: cmd.loop_id,
            apply_at_us: slot.next_unstarted.micros(),
        };
        slot.pending.push(cmd);
        Ok(ack)
    }

    /// Called by a loop at `activation`, before it reads its sensor.
    /// Returns the commands to apply, in submission order.
    pub fn begin_job(&self, loop_id: u16, activation: TickTime) -> Vec<SupervisorCommand> {
        let mut loops = self.inner.loops.lock().unwrap();
        match loops.get_mut(&loop_id) {
            Some(slot) => {
                slot.next_unstarted = activation + slot.period;
                std::mem::take(&mut slot.pending)
            }
            None => Vec::new(),
        }
    }

    /// Records a job outcome and fans the telemetry frame out.
    pub fn end_job(&self, report: JobReport) {
        if report.overrun {
            self.inner.overruns_total.fetch_add(1, Ordering::Relaxed);
        }
        {
            let mut loops = self.inner.loops.lock().unwrap();
            if let Some(slot) = loops.get_mut(&report.loop_id) {
                let s = &mut slot.status;
                s.setpoint = report.r;
                s.last_y = Some(report.y);
                s.last_u = Some(report.u);
                s.last_t_us = Some(report.t.micros());
                s.jobs += 1;
                s.overruns += report.overrun as u64;
                s.gains = report.gains;
                s.paused = report.paused;
            }
        }
        let frame = TelemetryFrame {
            t_us: report.t.micros(),
            loop_id: report.loop_id,
            r: report.r,
            y: report.y,
            u: report.u,
            stale: report.stale,
            overruns_total: self.inner.overruns_total.load(Ordering::Relaxed),
        };
        self.publish(frame);
    }

    /// Updates status for a loop that skipped its job while paused.
    pub fn note_paused(&self, loop_id: u16, setpoint: f64, gains: Option<PidGains>) {
        let mut loops = self.inner.loops.lock().unwrap();
        if let Some(slot) = loops.get_mut(&loop_id) {
            slot.status.paused = true;
            slot.status.setpoint = setpoint;
            slot.status.gains = gains;
        }
    }

    fn publish(&self, frame: TelemetryFrame) {
        let mut subs = self.inner.subscribers.lock().unwrap();
        subs.retain(|tx| match tx.try_send(frame) {
            Ok(()) => true,
            Err(TrySendError::Full(_)) => {
                self.inner.lag_disconnects.fetch_add(1, Ordering::Relaxed);
                false
            }
            Err(TrySendError::Disconnected(_)) => false,
        });
    }

    /// New subscriber receiving frames from now on. Dropped when it lags.
    pub fn subscribe(&self) -> Receiver<TelemetryFrame> {
        let (tx, rx) = bounded(self.inner.queue_capacity);
        self.inner.subscribers.lock().unwrap().push(tx);
        rx
    }

    pub fn lag_disconnects(&self) -> u64 {
        self.inner.lag_disconnects.load(Ordering::Relaxed)
    }

    pub fn status(&self) -> StatusDocument {
        let loops = self.inner.loops.lock().unwrap();
        StatusDocument {
            mode: self.inner.mode,
            uptime_us: self.inner.started.elapsed().as_micros() as u64,
            loops: loops
                .iter()
                .map(|(id, slot)| (id.to_string(), slot.status.clone()))
                .collect(),
            subscribers: self.inner.subscribers.lock().unwrap().len(),
            lag_disconnects: self.lag_disconnects(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hub() -> SupervisorHub {
        let h = SupervisorHub::new(EngineMode::VirtualTime, 4);
        h.register_loop(0, TickDuration(100_000), TickTime(0), Some(PidGains::default()), 10.0);
        h
    }

    #[test]
    fn ack_names_next_unstarted_activation() {
        let h = hub();
        let ack = h.apply_command(SupervisorCommand::set_setpoint(0, 12.0)).unwrap();
        assert_eq!(ack.apply_at_us, 0);
        let cmds = h.begin_job(0, TickTime(0));
        assert_eq!(cmds.len(), 1);
        let ack = h.apply_command(SupervisorCommand::set_setpoint(0, 13.0)).unwrap();
        assert_eq!(ack.apply_at_us, 100_000);
        assert!(h.begin_job(0, TickTime(100_000)).len() == 1);
    }

    #[test]
    fn rejects_bad_commands() {
        let h = hub();
        assert_eq!(
            h.apply_command(SupervisorCommand::set_setpoint(7, 1.0)),
            Err(SupervisorError::UnknownLoop(7))
        );
        let mut g = PidGains::default();
        g.kd = f64::NAN;
        assert!(matches!(
            h.apply_command(SupervisorCommand::set_gains(0, g)),
            Err(SupervisorError::InvalidPayload(_))
        ));
        g = PidGains::default();
        g.u_min = 10.0;
        assert!(h.apply_command(SupervisorCommand::set_gains(0, g)).is_err());
        assert!(h.begin_job(0, TickTime(0)).is_empty());
    }

    #[test]
    fn command_json_shape() {
        let c: SupervisorCommand =
            serde_json::from_str(r#"{"kind":"set_setpoint","loop_id":0,"value":12}"#).unwrap();
        assert_eq!(c, SupervisorCommand::set_setpoint(0, 12.0));
        let c: SupervisorCommand = serde_json::from_str(
            r#"{"kind":"set_gains","loop_id":1,"gains":{"kp":1,"ki":0.1,"kd":0,"u_min":0,"u_max":4}}"#,
        )
        .unwrap();
        assert!(matches!(c.action, CommandAction::SetGains { .. }));
        let c: SupervisorCommand = serde_json::from_str(r#"{"kind":"pause_loop","loop_id":2}"#).unwrap();
        assert_eq!(c, SupervisorCommand::pause(2));
    }

    #[test]
    fn lagging_subscriber_is_dropped() {
        let h = hub();
        let slow = h.subscribe();
        let fast = h.subscribe();
        let mut got = 0;
        for k in 0..10u64 {
            h.end_job(JobReport {
                t: TickTime(k * 100_000),
                loop_id: 0,
                r: 10.0,
                y: 0.0,
                u: 4.0,
                stale: false,
                overrun: false,
                gains: None,
                paused: false,
            });
            got += fast.try_iter().count();
        }
        assert_eq!(got, 10);
        assert_eq!(h.lag_disconnects(), 1);
        assert_eq!(slow.try_iter().count(), 4);
        assert!(slow.recv().is_err(), "sender side dropped");
        assert_eq!(h.status().subscribers, 1);
    }

    #[test]
    fn status_tracks_jobs() {
        let h = hub();
        h.register_loop(1, TickDuration(500_000), TickTime(0), None, 3.0);
        let s = h.status();
        assert_eq!(s.loops.len(), 2);
        assert_eq!(s.loops["0"].period_us, 100_000);
        assert_eq!(s.loops["0"].overruns, 0);
        h.end_job(JobReport {
            t: TickTime(0),
            loop_id: 0,
            r: 12.0,
            y: 1.0,
            u: 2.0,
            stale: false,
            overrun: true,
            gains: Some(PidGains::default()),
            paused: false,
        });
        let s = h.status();
        assert_eq!(s.loops["0"].setpoint, 12.0);
        assert_eq!(s.loops["0"].overruns, 1);
        assert_eq!(s.loops["0"].jobs, 1);
    }
}
