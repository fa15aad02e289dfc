//! C ABI over `ecs-core`.
//!
//! Objects are opaque heap handles created by `*_new`/`*_parse` functions and
//! released with the matching `*_free`. Every fallible call returns an
//! [`EcsStatus`]; on failure a description is available from
//! [`ecs_last_error_message`] on the same thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ecs_core::config::{parse_config, ConfigError, ExperimentConfig};
use ecs_core::control::{pid_reset, pid_step, PidGains, PidState};
use ecs_core::engine::run_virtual;
use ecs_core::io::{decode_sample, encode_sample, serial_frame, CodecError, MessageKind, SampleMessage, SAMPLE_LEN};
use ecs_core::metrics::compute_metrics;
use ecs_core::plant::{IntegratorConfig, Plant, PlantModel, SimulatedPlant, WaterTankParams};
use ecs_core::time::{TickDuration, TickTime};
use ecs_core::trace::{write_trace_csv, Trace};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    ValidationError = 4,
    RuntimeError = 5,
    CodecError = 6,
    BufferTooSmall = 7,
    OutOfRange = 8,
    Panic = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: EcsStatus, message: impl Into<String>) -> EcsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = message.into());
    status
}

fn guard(f: impl FnOnce() -> EcsStatus) -> EcsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(EcsStatus::Panic, "internal panic"),
    }
}

/// Copies the last error message of this thread into `buf` as a
/// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
/// message length excluding the terminator.
#[no_mangle]
pub unsafe extern "C" fn ecs_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(EcsStatus::NullPointer, concat!(stringify!($p), " is null"));
        })+
    };
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, EcsStatus> {
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(EcsStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/* ---- configuration and virtual-time runs ---- */

/// Parsed, validated experiment description.
pub struct EcsConfig(ExperimentConfig);

/// Trace of a finished run.
pub struct EcsTrace(Trace);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EcsTraceRecord {
    pub t_us: u64,
    pub loop_id: u16,
    pub stale: bool,
    pub r: f64,
    pub y: f64,
    pub u: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EcsMetrics {
    /// False when the trace never settles; `settling_time_s` is then NaN.
    pub settled: bool,
    pub settling_time_s: f64,
    pub overshoot_pct: f64,
    pub steady_state_error: f64,
    pub iae: f64,
}

/// Parses TOML experiment text.
#[no_mangle]
pub unsafe extern "C" fn ecs_config_parse(text: *const c_char, out: *mut *mut EcsConfig) -> EcsStatus {
    non_null!(text, out);
    guard(|| {
        let text = match c_str(text, "text") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_config(text) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(EcsConfig(cfg)));
                EcsStatus::Ok
            }
            Err(e @ ConfigError::Parse { .. }) => fail(EcsStatus::ParseError, e.to_string()),
            Err(e) => fail(EcsStatus::ValidationError, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn ecs_config_free(cfg: *mut EcsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

#[no_mangle]
pub unsafe extern "C" fn ecs_config_loop_count(cfg: *const EcsConfig) -> usize {
    cfg.as_ref().map_or(0, |c| c.0.loops.len())
}

/// Configured run length in microseconds, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn ecs_config_duration_us(cfg: *const EcsConfig) -> u64 {
    cfg.as_ref().map_or(0, |c| c.0.duration.micros())
}

/// Runs the configuration in virtual time for its configured duration.
#[no_mangle]
pub unsafe extern "C" fn ecs_simulate(cfg: *const EcsConfig, out: *mut *mut EcsTrace) -> EcsStatus {
    non_null!(cfg, out);
    guard(|| {
        let cfg = &(*cfg).0;
        match run_virtual(cfg, cfg.duration) {
            Ok(trace) => {
                *out = Box::into_raw(Box::new(EcsTrace(trace)));
                EcsStatus::Ok
            }
            Err(e) => fail(EcsStatus::RuntimeError, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn ecs_trace_free(trace: *mut EcsTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

#[no_mangle]
pub unsafe extern "C" fn ecs_trace_len(trace: *const EcsTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.records.len())
}

#[no_mangle]
pub unsafe extern "C" fn ecs_trace_get(trace: *const EcsTrace, index: usize, out: *mut EcsTraceRecord) -> EcsStatus {
    non_null!(trace, out);
    let trace = &*trace;
    let Some(r) = trace.0.records.get(index) else {
        return fail(EcsStatus::OutOfRange, format!("index {index} past end of trace"));
    };
    *out = EcsTraceRecord {
        t_us: r.t.micros(),
        loop_id: r.loop_id,
        stale: r.stale,
        r: r.r,
        y: r.y,
        u: r.u,
    };
    EcsStatus::Ok
}

#[no_mangle]
pub unsafe extern "C" fn ecs_trace_write_csv(trace: *const EcsTrace, path: *const c_char) -> EcsStatus {
    non_null!(trace, path);
    guard(|| {
        let path = match c_str(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match write_trace_csv(&(*trace).0.records, path.as_ref()) {
            Ok(()) => EcsStatus::Ok,
            Err(e) => fail(EcsStatus::RuntimeError, e.to_string()),
        }
    })
}

/// Step-response metrics of one loop in the trace.
#[no_mangle]
pub unsafe extern "C" fn ecs_trace_metrics(
    trace: *const EcsTrace,
    loop_id: u16,
    setpoint: f64,
    band_pct: f64,
    tail_pct: f64,
    out: *mut EcsMetrics,
) -> EcsStatus {
    non_null!(trace, out);
    let recs: Vec<_> = (*trace).0.for_loop(loop_id).copied().collect();
    match compute_metrics(&recs, setpoint, band_pct, tail_pct) {
        Ok(m) => {
            *out = EcsMetrics {
                settled: m.settling_time.is_some(),
                settling_time_s: m.settling_time.unwrap_or(f64::NAN),
                overshoot_pct: m.overshoot_pct,
                steady_state_error: m.steady_state_error,
                iae: m.iae,
            };
            EcsStatus::Ok
        }
        Err(e) => fail(EcsStatus::InvalidArgument, format!("loop {loop_id}: {e}")),
    }
}

/* ---- PID controller ---- */

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcsPidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub u_min: f64,
    pub u_max: f64,
    /// Derivative filter coefficient; 0 disables filtering.
    pub n: f64,
}

pub struct EcsPid {
    gains: PidGains,
    state: PidState,
}

/// Fills `out` with the default water-tank gains.
#[no_mangle]
pub unsafe extern "C" fn ecs_pid_default_gains(out: *mut EcsPidGains) -> EcsStatus {
    non_null!(out);
    let g = PidGains::default();
    *out = EcsPidGains {
        kp: g.kp,
        ki: g.ki,
        kd: g.kd,
        u_min: g.u_min,
        u_max: g.u_max,
        n: g.derivative_filter_n,
    };
    EcsStatus::Ok
}

#[no_mangle]
pub unsafe extern "C" fn ecs_pid_new(gains: *const EcsPidGains, out: *mut *mut EcsPid) -> EcsStatus {
    non_null!(gains, out);
    let g = &*gains;
    let gains = PidGains {
        kp: g.kp,
        ki: g.ki,
        kd: g.kd,
        u_min: g.u_min,
        u_max: g.u_max,
        derivative_filter_n: g.n,
    };
    if let Err(e) = gains.validate() {
        return fail(EcsStatus::InvalidArgument, e.to_string());
    }
    *out = Box::into_raw(Box::new(EcsPid {
        gains,
        state: PidState::fresh(),
    }));
    EcsStatus::Ok
}

/// One controller step with sampling period `h_us`; writes the command to `u`.
#[no_mangle]
pub unsafe extern "C" fn ecs_pid_step(pid: *mut EcsPid, r: f64, y: f64, h_us: u64, u: *mut f64) -> EcsStatus {
    non_null!(pid, u);
    if h_us == 0 {
        return fail(EcsStatus::InvalidArgument, "h_us must be positive");
    }
    let pid = &mut *pid;
    match pid_step(&pid.gains, &pid.state, r, y, TickDuration(h_us)) {
        Ok((out, state)) => {
            pid.state = state;
            *u = out;
            EcsStatus::Ok
        }
        Err(e) => fail(EcsStatus::InvalidArgument, e.to_string()),
    }
}

#[no_mangle]
pub unsafe extern "C" fn ecs_pid_reset(pid: *mut EcsPid) -> EcsStatus {
    non_null!(pid);
    (*pid).state = pid_reset(&(*pid).state);
    EcsStatus::Ok
}

#[no_mangle]
pub unsafe extern "C" fn ecs_pid_free(pid: *mut EcsPid) {
    if !pid.is_null() {
        drop(Box::from_raw(pid));
    }
}

/* ---- water tank ---- */

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcsTankParams {
    pub area: f64,
    pub inflow_gain: f64,
    pub outflow_coeff: f64,
    pub level_init: f64,
}

pub struct EcsPlant(SimulatedPlant);

#[no_mangle]
pub unsafe extern "C" fn ecs_tank_default_params(out: *mut EcsTankParams) -> EcsStatus {
    non_null!(out);
    let p = WaterTankParams::default();
    *out = EcsTankParams {
        area: p.area,
        inflow_gain: p.inflow_gain,
        outflow_coeff: p.outflow_coeff,
        level_init: p.level_init,
    };
    EcsStatus::Ok
}

#[no_mangle]
pub unsafe extern "C" fn ecs_tank_new(
    params: *const EcsTankParams,
    substep_us: u64,
    out: *mut *mut EcsPlant,
) -> EcsStatus {
    non_null!(params, out);
    let p = &*params;
    let model = PlantModel::WaterTank(WaterTankParams {
        area: p.area,
        inflow_gain: p.inflow_gain,
        outflow_coeff: p.outflow_coeff,
        level_init: p.level_init,
    });
    match SimulatedPlant::new(model, IntegratorConfig { substep: TickDuration(substep_us) }) {
        Ok(plant) => {
            *out = Box::into_raw(Box::new(EcsPlant(plant)));
            EcsStatus::Ok
        }
        Err(e) => fail(EcsStatus::InvalidArgument, e.to_string()),
    }
}

/// Holds `u` for `duration_us`, a multiple of the substep.
#[no_mangle]
pub unsafe extern "C" fn ecs_plant_advance(plant: *mut EcsPlant, u: f64, duration_us: u64) -> EcsStatus {
    non_null!(plant);
    match (*plant).0.advance(u, TickDuration(duration_us)) {
        Ok(()) => EcsStatus::Ok,
        Err(e) => fail(EcsStatus::InvalidArgument, e.to_string()),
    }
}

#[no_mangle]
pub unsafe extern "C" fn ecs_plant_output(plant: *const EcsPlant, y: *mut f64) -> EcsStatus {
    non_null!(plant, y);
    *y = (*plant).0.output();
    EcsStatus::Ok
}

#[no_mangle]
pub unsafe extern "C" fn ecs_plant_time_us(plant: *const EcsPlant) -> u64 {
    plant.as_ref().map_or(0, |p| p.0.time().micros())
}

#[no_mangle]
pub unsafe extern "C" fn ecs_plant_free(plant: *mut EcsPlant) {
    if !plant.is_null() {
        drop(Box::from_raw(plant));
    }
}

/* ---- wire codecs ---- */

/// Encoded size of one sample message.
pub const ECS_SAMPLE_LEN: usize = 28;

const _: () = assert!(ECS_SAMPLE_LEN == SAMPLE_LEN);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EcsSample {
    /// 0 sensor sample, 1 actuator command, 2 setpoint.
    pub kind: u8,
    pub loop_id: u16,
    pub seq: u32,
    pub timestamp_us: u64,
    pub value: f64,
}

/// Writes the 28-byte encoding of `msg` into `out`.
#[no_mangle]
pub unsafe extern "C" fn ecs_sample_encode(msg: *const EcsSample, out: *mut u8, cap: usize) -> EcsStatus {
    non_null!(msg, out);
    if cap < SAMPLE_LEN {
        return fail(EcsStatus::BufferTooSmall, format!("need {SAMPLE_LEN} bytes"));
    }
    let m = &*msg;
    let Ok(kind) = MessageKind::try_from(m.kind) else {
        return fail(EcsStatus::InvalidArgument, format!("unknown message kind {}", m.kind));
    };
    let bytes = encode_sample(&SampleMessage::new(kind, m.loop_id, m.seq, TickTime(m.timestamp_us), m.value));
    ptr::copy_nonoverlapping(bytes.as_ptr(), out, SAMPLE_LEN);
    EcsStatus::Ok
}

#[no_mangle]
pub unsafe extern "C" fn ecs_sample_decode(buf: *const u8, len: usize, out: *mut EcsSample) -> EcsStatus {
    non_null!(buf, out);
    let bytes = std::slice::from_raw_parts(buf, len);
    match decode_sample(bytes) {
        Ok(m) => {
            *out = EcsSample {
                kind: m.kind as u8,
                loop_id: m.loop_id,
                seq: m.seq,
                timestamp_us: m.timestamp.micros(),
                value: m.value,
            };
            EcsStatus::Ok
        }
        Err(e @ CodecError::ShortRead { .. }) => fail(EcsStatus::BufferTooSmall, e.to_string()),
        Err(e) => fail(EcsStatus::CodecError, e.to_string()),
    }
}

/// Frames `payload` for a serial line. `written` receives the frame length.
#[no_mangle]
pub unsafe extern "C" fn ecs_serial_frame(
    payload: *const u8,
    len: usize,
    out: *mut u8,
    cap: usize,
    written: *mut usize,
) -> EcsStatus {
    non_null!(out, written);
    if payload.is_null() && len > 0 {
        return fail(EcsStatus::NullPointer, "payload is null");
    }
    let data = if len == 0 { &[][..] } else { std::slice::from_raw_parts(payload, len) };
    match serial_frame(data) {
        Ok(frame) => {
            *written = frame.len();
            if cap < frame.len() {
                return fail(EcsStatus::BufferTooSmall, format!("need {} bytes", frame.len()));
            }
            ptr::copy_nonoverlapping(frame.as_ptr(), out, frame.len());
            EcsStatus::Ok
        }
        Err(e) => fail(EcsStatus::CodecError, e.to_string()),
    }
}
