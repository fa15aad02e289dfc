mod common;

use std::sync::{Arc, Mutex};

use common::{closed_loop, Gains, RefPid, DEFAULT_GAINS};
use ecs_core::config::{parse_config, ExperimentConfig};
use ecs_core::control::{pid_step_traced, PidGains, PidState};
use ecs_core::engine::{run_virtual, run_virtual_with, VirtualOptions};
use ecs_core::plant::{Plant, PlantError};
use ecs_core::time::{TickDuration, TickTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn to_pid(g: &Gains) -> PidGains {
    PidGains {
        kp: g.kp,
        ki: g.ki,
        kd: g.kd,
        u_min: g.u_min,
        u_max: g.u_max,
        derivative_filter_n: g.n,
    }
}

fn pid_against_reference(g: Gains, seed: u64) -> RefPid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reference = RefPid::default();
    let mut state = PidState::fresh();
    let h = TickDuration::from_millis(100);
    for k in 0..1000 {
        let r = rng.random_range(0.0..20.0);
        let y = rng.random_range(0.0..20.0);
        let want = reference.step(&g, r, y, 0.1);
        let (u, next, _) = pid_step_traced(&to_pid(&g), &state, r, y, h).unwrap();
        assert!((u - want).abs() <= 1e-12, "step {k}: {u} vs {want}");
        state = next;
    }
    reference
}

#[test]
fn pid_follows_recurrence_with_derivative() {
    let g = Gains {
        kd: 0.3,
        ..DEFAULT_GAINS
    };
    pid_against_reference(g, 1);
    pid_against_reference(Gains { n: 8.0, ..g }, 2);
}

#[test]
fn pid_flags_match_reference_counts() {
    let g = DEFAULT_GAINS;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut state = PidState::fresh();
    let (mut sat, mut held) = (0, 0);
    for _ in 0..1000 {
        let (r, y) = (rng.random_range(0.0..20.0), rng.random_range(0.0..20.0));
        let (_, next, flags) = pid_step_traced(&to_pid(&g), &state, r, y, TickDuration::from_millis(100)).unwrap();
        sat += flags.saturated as usize;
        held += flags.integration_held as usize;
        state = next;
    }
    let reference = pid_against_reference(g, 3);
    assert_eq!((sat, held), (reference.saturated, reference.held));
}

#[test]
fn engine_matches_monolithic_loop() {
    for period_ms in [100, 500] {
        let cfg = ExperimentConfig::tank_experiment(TickDuration::from_millis(period_ms), TickDuration::ZERO);
        let trace = run_virtual(&cfg, TickDuration::from_millis(200_000)).unwrap();
        let want = closed_loop(period_ms * 1000, 200_000_000, 10.0);
        assert_eq!(trace.records.len(), want.len());
        for (rec, (t, y, u)) in trace.records.iter().zip(want) {
            assert_eq!(rec.t.micros(), t);
            assert!((rec.y - y).abs() <= 1e-9, "t={t}: y {} vs {y}", rec.y);
            assert!((rec.u - u).abs() <= 1e-9, "t={t}: u {} vs {u}", rec.u);
            assert!(!rec.stale);
        }
    }
}

/// Records every held input and the instant it started.
struct Recording {
    inner: Box<dyn Plant>,
    log: Arc<Mutex<Vec<(u64, f64)>>>,
}

impl Plant for Recording {
    fn output(&self) -> f64 {
        self.inner.output()
    }
    fn time(&self) -> TickTime {
        self.inner.time()
    }
    fn substep(&self) -> TickDuration {
        self.inner.substep()
    }
    fn advance(&mut self, u: f64, duration: TickDuration) -> Result<(), PlantError> {
        self.log.lock().unwrap().push((self.inner.time().micros(), u));
        self.inner.advance(u, duration)
    }
}

#[test]
fn plant_input_changes_only_at_activations() {
    let log = Arc::new(Mutex::new(Vec::new()));
    let sink = log.clone();
    let cfg = ExperimentConfig::tank_experiment(TickDuration::from_millis(100), TickDuration::ZERO);
    let opts = VirtualOptions {
        wrap_plant: Some(Box::new(move |_, inner| {
            Box::new(Recording {
                inner,
                log: sink.clone(),
            })
        })),
        ..Default::default()
    };
    run_virtual_with(&cfg, TickDuration::from_millis(20_000), opts).unwrap();
    let log = log.lock().unwrap();
    assert!(!log.is_empty());
    for w in log.windows(2) {
        if w[0].1 != w[1].1 {
            assert_eq!(w[1].0 % 100_000, 0, "input changed at {} us", w[1].0);
        }
    }
}

const TWO_LOOPS: &str = r#"
[engine]
duration = 30
[[loop]]
id = 0
period = 0.1
setpoint = 10
[[loop]]
id = 1
period = 0.5
priority = 1
setpoint = 4
"#;

#[test]
fn loops_sharing_channels_stay_isolated() {
    let both = parse_config(TWO_LOOPS).unwrap();
    let trace = run_virtual(&both, both.duration).unwrap();
    for l in &both.loops {
        let mut alone = both.clone();
        alone.loops.retain(|x| x.loop_id == l.loop_id);
        let solo = run_virtual(&alone, alone.duration).unwrap();
        let mixed: Vec<_> = trace.for_loop(l.loop_id).copied().collect();
        assert_eq!(mixed, solo.records, "loop {}", l.loop_id);
    }
    assert_eq!(trace.for_loop(0).count(), 300);
    assert_eq!(trace.for_loop(1).count(), 60);
}

#[test]
fn tie_instants_run_in_priority_order() {
    let mut cfg = parse_config(TWO_LOOPS).unwrap();
    cfg.loops[1].priority = 0;
    cfg.loops[0].priority = 5;
    let trace = run_virtual(&cfg, cfg.duration).unwrap();
    let at_zero: Vec<u16> = trace.records.iter().filter(|r| r.t.micros() == 0).map(|r| r.loop_id).collect();
    assert_eq!(at_zero, [1, 0]);
    for w in trace.records.windows(2) {
        assert!(w[0].t <= w[1].t);
    }
}
