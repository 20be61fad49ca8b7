use std::ffi::{CStr, CString};
use std::ptr;

use gridic_ffi::*;

const SMIB: &str = r#"{
  "format": 1, "system_base_mva": 100,
  "buses": [{"id": 1, "kind": "slack", "v_setpoint": 1.0},
            {"id": 2, "kind": "pv", "v_setpoint": 1.0, "p_gen_mw": 50}],
  "branches": [{"id": 1, "from": 1, "to": 2, "r": 0.01, "x": 0.3, "b": 0}],
  "machines": [{"bus": 2, "mva_base": 100,
    "machine": {"rs": 0, "xd": 0.3, "xq": 0.3, "xd_prime": 0.3, "xq_prime": 0.3, "xd_dprime": 0.3,
                "xl": 0.1, "td0_prime": 1e6, "tq0_prime": 1e6, "td0_dprime": 1e6, "tq0_dprime": 1e6,
                "h": 4, "d": 1}}],
  "faults": [{"id": 1, "bus": 2, "x": 0.5}],
  "events": [{"kind": "close_fault_switch", "time": 0.1, "target": 1},
             {"kind": "open_fault_switch", "time": 0.15, "target": 1}]
}"#;

fn last_error() -> String {
    unsafe { CStr::from_ptr(gridic_last_error()) }.to_string_lossy().into_owned()
}

fn load(json: &str) -> *mut GridicCase {
    let text = CString::new(json).unwrap();
    let mut case = ptr::null_mut();
    let st = unsafe { gridic_case_from_json(text.as_ptr(), &mut case) };
    assert_eq!(st, GridicStatus::Ok, "{}", last_error());
    case
}

#[test]
fn version_and_defaults() {
    let v = unsafe { CStr::from_ptr(gridic_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    let c = gridic_config_default();
    assert_eq!((c.dt, c.t_stop, c.method), (1e-3, 20.0, GridicMethod::Trapezoidal));
}

#[test]
fn run_and_read_back() {
    let case = load(SMIB);
    let mut n = 0;
    assert_eq!(unsafe { gridic_case_bus_count(case, &mut n) }, GridicStatus::Ok);
    assert_eq!(n, 2);

    let (mut ids, mut vm, mut va) = ([0u32; 2], [0.0; 2], [0.0; 2]);
    let st = unsafe { gridic_power_flow(case, false, ids.as_mut_ptr(), vm.as_mut_ptr(), va.as_mut_ptr(), 2) };
    assert_eq!(st, GridicStatus::Ok);
    assert_eq!(ids, [1, 2]);
    assert!((vm[0] - 1.0).abs() < 1e-9 && (vm[1] - 1.0).abs() < 1e-9 && va[1] > 0.0);
    let st = unsafe { gridic_power_flow(case, false, ptr::null_mut(), vm.as_mut_ptr(), ptr::null_mut(), 3) };
    assert_eq!(st, GridicStatus::OutOfRange);

    let mut cfg = gridic_config_default();
    cfg.t_stop = 0.5;
    let mut series = ptr::null_mut();
    assert_eq!(unsafe { gridic_run(case, &cfg, &mut series) }, GridicStatus::Ok, "{}", last_error());
    let len = unsafe { gridic_series_len(series) };
    assert_eq!(len, 501);
    let channels = unsafe { gridic_series_channel_count(series) };
    let names: Vec<String> = (0..channels)
        .map(|k| unsafe { CStr::from_ptr(gridic_series_channel_name(series, k)) }.to_string_lossy().into_owned())
        .collect();
    assert!(names.contains(&"omega_bus2".to_string()));
    assert!(unsafe { gridic_series_channel_name(series, channels) }.is_null());

    let name = CString::new("omega_bus2").unwrap();
    let mut idx = usize::MAX;
    assert_eq!(unsafe { gridic_series_find(series, name.as_ptr(), &mut idx) }, GridicStatus::Ok);
    let mut w = vec![0.0; len];
    assert_eq!(unsafe { gridic_series_channel(series, idx, w.as_mut_ptr(), len) }, GridicStatus::Ok);
    assert!(w.iter().any(|x| *x > 1.0 + 1e-5), "the fault accelerates the machine");
    let mut t = vec![0.0; len];
    assert_eq!(unsafe { gridic_series_time(series, t.as_mut_ptr(), len) }, GridicStatus::Ok);
    assert_eq!((t[0], t[len - 1]), (0.0, 0.5));
    assert_eq!(
        unsafe { gridic_series_time(series, t.as_mut_ptr(), len - 1) },
        GridicStatus::OutOfRange
    );
    assert_eq!(
        unsafe { gridic_series_channel(series, channels, w.as_mut_ptr(), len) },
        GridicStatus::OutOfRange
    );

    // The reference integrator gives the same channels.
    cfg.reference = true;
    let mut reference = ptr::null_mut();
    assert_eq!(unsafe { gridic_run(case, &cfg, &mut reference) }, GridicStatus::Ok, "{}", last_error());
    let mut r = vec![0.0; len];
    assert_eq!(unsafe { gridic_series_channel(reference, idx, r.as_mut_ptr(), len) }, GridicStatus::Ok);
    let dev = w.iter().zip(&r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(dev < 1e-4, "{dev:e}");

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("run.csv").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { gridic_series_write_csv(series, path.as_ptr()) }, GridicStatus::Ok);
    let text = std::fs::read_to_string(dir.path().join("run.csv")).unwrap();
    assert_eq!(text.lines().count(), len + 1);

    unsafe {
        gridic_series_free(series);
        gridic_series_free(reference);
        gridic_case_free(case);
    }
}

#[test]
fn errors_are_reported_with_codes() {
    let mut case = ptr::null_mut();
    assert_eq!(unsafe { gridic_case_from_json(ptr::null(), &mut case) }, GridicStatus::NullPointer);
    assert!(last_error().contains("json"));

    let bad = CString::new(SMIB.replace(r#""kind": "pv""#, r#""kind": "pz""#)).unwrap();
    assert_eq!(unsafe { gridic_case_from_json(bad.as_ptr(), &mut case) }, GridicStatus::InvalidInput);
    assert!(case.is_null());
    assert!(last_error().contains("/buses/1/kind"), "{}", last_error());

    let invalid_utf8 = [0xffu8, 0xfe, 0];
    assert_eq!(
        unsafe { gridic_case_from_json(invalid_utf8.as_ptr().cast(), &mut case) },
        GridicStatus::InvalidUtf8
    );

    let missing = CString::new("/nonexistent/case.json").unwrap();
    assert_eq!(unsafe { gridic_case_from_file(missing.as_ptr(), &mut case) }, GridicStatus::Io);

    // An event beyond the horizon is rejected before anything runs.
    let good = load(SMIB);
    let mut cfg = gridic_config_default();
    cfg.t_stop = 0.12;
    let mut series = ptr::null_mut();
    assert_eq!(unsafe { gridic_run(good, &cfg, &mut series) }, GridicStatus::InvalidInput);
    assert!(series.is_null());
    assert_eq!(unsafe { gridic_run(ptr::null(), &cfg, &mut series) }, GridicStatus::NullPointer);

    // Success clears the message.
    let mut n = 0;
    assert_eq!(unsafe { gridic_case_bus_count(good, &mut n) }, GridicStatus::Ok);
    assert_eq!(last_error(), "");

    unsafe {
        gridic_case_free(good);
        gridic_case_free(ptr::null_mut());
        gridic_series_free(ptr::null_mut());
        assert_eq!(gridic_series_len(ptr::null()), 0);
    }
}

#[test]
fn diverging_power_flow_is_a_convergence_failure() {
    let heavy = r#"{"format": 1, "system_base_mva": 100,
      "buses": [{"id": 1, "kind": "slack"}, {"id": 2, "kind": "pq"}],
      "branches": [{"id": 1, "from": 1, "to": 2, "r": 0.05, "x": 0.5, "b": 0}],
      "loads": [{"bus": 2, "p_mw": 900, "q_mvar": 400, "kind": "constant_pq"}]}"#;
    let case = load(heavy);
    let mut vm = [0.0; 2];
    let st = unsafe { gridic_power_flow(case, false, ptr::null_mut(), vm.as_mut_ptr(), ptr::null_mut(), 2) };
    assert_eq!(st, GridicStatus::Convergence);
    let mut series = ptr::null_mut();
    let mut cfg = gridic_config_default();
    cfg.t_stop = 0.1;
    assert_eq!(unsafe { gridic_run(case, &cfg, &mut series) }, GridicStatus::Convergence);
    unsafe { gridic_case_free(case) };
}
