//! Reference models shared by the integration suites. Nothing here calls
//! into the crate's control or plant code.

#![allow(dead_code)]

use std::net::{TcpListener, UdpSocket};

#[derive(Debug, Clone, Copy)]
pub struct Gains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub n: f64,
}

pub const DEFAULT_GAINS: Gains = Gains {
    kp: 2.0,
    ki: 0.4,
    kd: 0.0,
    u_min: 0.0,
    u_max: 4.0,
    n: 0.0,
};

/// Positional PID, backward-Euler integral, conditional integration.
#[derive(Debug, Clone, Default)]
pub struct RefPid {
    pub integral: f64,
    pub prev_e: Option<f64>,
    pub prev_d: f64,
    pub saturated: usize,
    pub held: usize,
}

impl RefPid {
    pub fn step(&mut self, g: &Gains, r: f64, y: f64, h: f64) -> f64 {
        let e = r - y;
        let d = match self.prev_e {
            None => 0.0,
            Some(pe) if g.n > 0.0 => (self.prev_d + g.kd * g.n * (e - pe)) / (1.0 + g.n * h),
            Some(pe) => g.kd * (e - pe) / h,
        };
        let i_next = self.integral + g.ki * h * e;
        let v = g.kp * e + i_next + d;
        let u = v.max(g.u_min).min(g.u_max);
        if v > g.u_max || v < g.u_min {
            self.saturated += 1;
        }
        if (v > g.u_max && e > 0.0) || (v < g.u_min && e < 0.0) {
            self.held += 1;
        } else {
            self.integral = i_next;
        }
        self.prev_e = Some(e);
        self.prev_d = d;
        u
    }
}

/// Tank with unit area and inflow gain, outflow coefficient 0.5.
pub fn tank_rate(h: f64, u: f64) -> f64 {
    u.max(0.0) - 0.5 * h.max(0.0).sqrt()
}

pub fn rk4_hold(mut h: f64, u: f64, steps: u64, dt: f64) -> f64 {
    for _ in 0..steps {
        let k1 = tank_rate(h, u);
        let k2 = tank_rate(h + 0.5 * dt * k1, u);
        let k3 = tank_rate(h + 0.5 * dt * k2, u);
        let k4 = tank_rate(h + dt * k3, u);
        h = (h + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).max(0.0);
    }
    h
}

/// Single-threaded sample-compute-hold loop: returns (t, y, u) per job.
pub fn closed_loop(period_us: u64, duration_us: u64, setpoint: f64) -> Vec<(u64, f64, f64)> {
    let h = period_us as f64 * 1e-6;
    let substeps = period_us / 1000;
    let mut pid = RefPid::default();
    let mut level = 0.0;
    let mut out = Vec::new();
    let mut t = 0;
    while t < duration_us {
        let u = pid.step(&DEFAULT_GAINS, setpoint, level, h);
        out.push((t, level, u));
        level = rk4_hold(level, u, substeps, 1e-3);
        t += period_us;
    }
    out
}

/// Absolute difference allowed between a real-time metric and its
/// virtual-time counterpart: 5 % of the larger, floored at `floor`.
pub fn within_5pct(a: f64, b: f64, floor: f64) -> bool {
    (a - b).abs() <= 0.05 * a.abs().max(b.abs()) + floor
}

pub fn free_udp_port() -> u16 {
    UdpSocket::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

pub fn free_tcp_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}
