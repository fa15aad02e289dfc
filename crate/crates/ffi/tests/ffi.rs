use std::ffi::{c_char, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use ecs_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0u8; 256];
    let n = unsafe { ecs_last_error_message(buf.as_mut_ptr() as *mut c_char, buf.len()) };
    buf.truncate(n.min(255));
    String::from_utf8(buf).unwrap()
}

fn parse(text: &str) -> Result<*mut EcsConfig, EcsStatus> {
    let text = CString::new(text).unwrap();
    let mut cfg = ptr::null_mut();
    match unsafe { ecs_config_parse(text.as_ptr(), &mut cfg) } {
        EcsStatus::Ok => Ok(cfg),
        s => Err(s),
    }
}

#[test]
fn simulate_and_read_back() {
    let cfg = parse("[engine]\nduration = 30\n[[loop]]\nperiod = 0.1\nsetpoint = 10\n").unwrap();
    unsafe {
        assert_eq!(ecs_config_loop_count(cfg), 1);
        assert_eq!(ecs_config_duration_us(cfg), 30_000_000);
        let mut trace = ptr::null_mut();
        assert_eq!(ecs_simulate(cfg, &mut trace), EcsStatus::Ok);
        assert_eq!(ecs_trace_len(trace), 300);

        let mut rec = EcsTraceRecord::default();
        assert_eq!(ecs_trace_get(trace, 0, &mut rec), EcsStatus::Ok);
        assert_eq!((rec.t_us, rec.loop_id, rec.r, rec.y, rec.u), (0, 0, 10.0, 0.0, 4.0));
        assert_eq!(ecs_trace_get(trace, 299, &mut rec), EcsStatus::Ok);
        assert_eq!(rec.t_us, 29_900_000);
        assert_eq!(ecs_trace_get(trace, 300, &mut rec), EcsStatus::OutOfRange);
        assert!(last_error().contains("300"));

        let mut m = EcsMetrics::default();
        assert_eq!(ecs_trace_metrics(trace, 0, 10.0, 2.0, 10.0, &mut m), EcsStatus::Ok);
        assert!(m.settled);
        assert!(m.steady_state_error < 0.2);
        assert_eq!(ecs_trace_metrics(trace, 7, 10.0, 2.0, 10.0, &mut m), EcsStatus::InvalidArgument);

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("t.csv").to_str().unwrap()).unwrap();
        assert_eq!(ecs_trace_write_csv(trace, path.as_ptr()), EcsStatus::Ok);
        let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
        assert_eq!(csv.lines().count(), 301);

        ecs_trace_free(trace);
        ecs_config_free(cfg);
    }
}

#[test]
fn config_errors_map_to_codes() {
    assert_eq!(parse("[engine\n").unwrap_err(), EcsStatus::ParseError);
    assert!(last_error().contains("line"));
    assert_eq!(parse("[[loop]]\nperiod = -1\n").unwrap_err(), EcsStatus::ValidationError);
    assert!(last_error().contains("period"));
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(ecs_config_parse(ptr::null(), &mut cfg), EcsStatus::NullPointer);
        assert_eq!(last_error(), "text is null");
        // null handles are tolerated by the query and free functions
        assert_eq!(ecs_config_loop_count(ptr::null()), 0);
        ecs_config_free(ptr::null_mut());
        ecs_trace_free(ptr::null_mut());
    }
}

#[test]
fn last_error_truncates_and_reports_full_length() {
    let _ = parse("[[loop]]\nperiod = -1\n");
    let full = last_error();
    let mut small = [0x7fu8; 5];
    let n = unsafe { ecs_last_error_message(small.as_mut_ptr() as *mut c_char, small.len()) };
    assert_eq!(n, full.len());
    assert_eq!(&small[..4], &full.as_bytes()[..4]);
    assert_eq!(small[4], 0);
    assert_eq!(unsafe { ecs_last_error_message(ptr::null_mut(), 0) }, full.len());
}

// Positional PID with conditional integration, written out independently.
fn pid_oracle(r: &[f64], y: &[f64], h: f64) -> Vec<f64> {
    let (kp, ki, umin, umax) = (2.0, 0.4, 0.0, 4.0);
    let mut i = 0.0;
    let mut out = Vec::new();
    for k in 0..r.len() {
        let e = r[k] - y[k];
        let cand = i + ki * h * e;
        let raw = kp * e + cand;
        let u = raw.clamp(umin, umax);
        let winding = (raw > umax && e > 0.0) || (raw < umin && e < 0.0);
        if !winding {
            i = cand;
        }
        out.push(u);
    }
    out
}

#[test]
fn pid_matches_oracle() {
    let r: Vec<f64> = (0..400).map(|k| if k < 200 { 10.0 } else { 2.0 }).collect();
    let y: Vec<f64> = (0..400).map(|k| 6.0 + 5.0 * (k as f64 * 0.05).sin()).collect();
    let want = pid_oracle(&r, &y, 0.1);
    unsafe {
        let mut g = EcsPidGains {
            kp: 0.0,
            ki: 0.0,
            kd: 0.0,
            u_min: 0.0,
            u_max: 0.0,
            n: 0.0,
        };
        assert_eq!(ecs_pid_default_gains(&mut g), EcsStatus::Ok);
        assert_eq!((g.kp, g.ki, g.kd, g.u_min, g.u_max), (2.0, 0.4, 0.0, 0.0, 4.0));
        let mut pid = ptr::null_mut();
        assert_eq!(ecs_pid_new(&g, &mut pid), EcsStatus::Ok);
        for k in 0..r.len() {
            let mut u = f64::NAN;
            assert_eq!(ecs_pid_step(pid, r[k], y[k], 100_000, &mut u), EcsStatus::Ok);
            assert!((u - want[k]).abs() <= 1e-12, "step {k}: {u} vs {}", want[k]);
        }
        let mut u = 0.0;
        assert_eq!(ecs_pid_step(pid, 1.0, 0.0, 0, &mut u), EcsStatus::InvalidArgument);
        assert_eq!(ecs_pid_reset(pid), EcsStatus::Ok);
        assert_eq!(ecs_pid_step(pid, r[0], y[0], 100_000, &mut u), EcsStatus::Ok);
        assert!((u - want[0]).abs() <= 1e-12);
        ecs_pid_free(pid);

        g.u_min = 5.0;
        assert_eq!(ecs_pid_new(&g, &mut pid), EcsStatus::InvalidArgument);
    }
}

fn tank_rk4(mut h: f64, u: f64, steps: usize, dt: f64) -> f64 {
    let f = |h: f64| u.max(0.0) - 0.5 * h.max(0.0).sqrt();
    for _ in 0..steps {
        let k1 = f(h);
        let k2 = f(h + dt / 2.0 * k1);
        let k3 = f(h + dt / 2.0 * k2);
        let k4 = f(h + dt * k3);
        h = (h + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).max(0.0);
    }
    h
}

#[test]
fn tank_matches_rk4_oracle() {
    unsafe {
        let mut p = EcsTankParams {
            area: 0.0,
            inflow_gain: 0.0,
            outflow_coeff: 0.0,
            level_init: 0.0,
        };
        assert_eq!(ecs_tank_default_params(&mut p), EcsStatus::Ok);
        p.level_init = 2.0;
        let mut plant = ptr::null_mut();
        assert_eq!(ecs_tank_new(&p, 1000, &mut plant), EcsStatus::Ok);
        assert_eq!(ecs_plant_advance(plant, 1.5, 2_000_000), EcsStatus::Ok);
        assert_eq!(ecs_plant_time_us(plant), 2_000_000);
        let mut y = 0.0;
        assert_eq!(ecs_plant_output(plant, &mut y), EcsStatus::Ok);
        let want = tank_rk4(2.0, 1.5, 2000, 1e-3);
        assert!((y - want).abs() <= 1e-12, "{y} vs {want}");
        assert_eq!(ecs_plant_advance(plant, 1.0, 1500), EcsStatus::InvalidArgument);
        ecs_plant_free(plant);

        p.area = -1.0;
        assert_eq!(ecs_tank_new(&p, 1000, &mut plant), EcsStatus::InvalidArgument);
    }
}

#[test]
fn sample_codec_golden_bytes() {
    let msg = EcsSample {
        kind: 1,
        loop_id: 0x0102,
        seq: 7,
        timestamp_us: 100_000,
        value: 2.5,
    };
    let mut buf = [0u8; ECS_SAMPLE_LEN];
    unsafe {
        assert_eq!(ecs_sample_encode(&msg, buf.as_mut_ptr(), buf.len()), EcsStatus::Ok);
    }
    let mut want = vec![0x31, 0x53, 0x43, 0x45, 1, 1, 0x02, 0x01, 7, 0, 0, 0];
    want.extend_from_slice(&100_000u64.to_le_bytes());
    want.extend_from_slice(&2.5f64.to_le_bytes());
    assert_eq!(buf.to_vec(), want);

    let mut back = EcsSample::default();
    unsafe {
        assert_eq!(ecs_sample_decode(buf.as_ptr(), buf.len(), &mut back), EcsStatus::Ok);
        assert_eq!(back, msg);
        assert_eq!(ecs_sample_decode(buf.as_ptr(), 10, &mut back), EcsStatus::BufferTooSmall);
        assert_eq!(ecs_sample_encode(&msg, buf.as_mut_ptr(), 27), EcsStatus::BufferTooSmall);
        buf[0] = 0;
        assert_eq!(ecs_sample_decode(buf.as_ptr(), buf.len(), &mut back), EcsStatus::CodecError);
        let bad = EcsSample { kind: 9, ..msg };
        assert_eq!(ecs_sample_encode(&bad, buf.as_mut_ptr(), buf.len()), EcsStatus::InvalidArgument);
    }
}

#[test]
fn serial_frame_layout() {
    let payload = [0x01u8, 0x02, 0x04];
    let mut out = [0u8; 8];
    let mut written = 0usize;
    unsafe {
        assert_eq!(
            ecs_serial_frame(payload.as_ptr(), payload.len(), out.as_mut_ptr(), out.len(), &mut written),
            EcsStatus::Ok
        );
        assert_eq!(&out[..written], &[0xA5, 3, 1, 2, 4, 7]);
        assert_eq!(
            ecs_serial_frame(payload.as_ptr(), payload.len(), out.as_mut_ptr(), 4, &mut written),
            EcsStatus::BufferTooSmall
        );
        assert_eq!(written, 6);
        assert_eq!(ecs_serial_frame(ptr::null(), 0, out.as_mut_ptr(), out.len(), &mut written), EcsStatus::Ok);
        assert_eq!(&out[..written], &[0xA5, 0, 0]);
        let long = [0u8; 256];
        assert_eq!(
            ecs_serial_frame(long.as_ptr(), long.len(), out.as_mut_ptr(), out.len(), &mut written),
            EcsStatus::CodecError
        );
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ecs.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["ecs_config_parse", "ecs_simulate", "ecs_pid_step", "ecs_sample_decode", "ECS_STATUS_PANIC"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let Ok(status) = Command::new("cc").args(["-fsyntax-only", "-x", "c", "-std=c99"]).arg(&header).status() else {
        eprintln!("cc not available, skipping syntax check");
        return;
    };
    assert!(status.success());
}

#[test]
fn c_program_links_and_runs() {
    let Ok(exe) = std::env::current_exe() else { return };
    // target/<profile>/deps/<test> -> target/<profile>
    let lib_dir = exe.parent().and_then(Path::parent).unwrap().to_path_buf();
    if !lib_dir.join("libecs_ffi.so").exists() {
        eprintln!("shared library not built, skipping");
        return;
    }
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let out = tempfile::tempdir().unwrap();
    let bin = out.path().join("smoke");
    let Ok(status) = Command::new("cc")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .args(["-lecs_ffi", "-o"])
        .arg(&bin)
        .status()
    else {
        eprintln!("cc not available, skipping");
        return;
    };
    assert!(status.success());
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(String::from_utf8_lossy(&run.stdout), "ok\n");
}
