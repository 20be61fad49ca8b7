use gridic::engine::SolverConfig;
use gridic::oracle::{compare_series, default_tolerances, run_reference_dae, CompareError, Tolerances};
use gridic::scenario::{parse_case, prepare, run_scenario, Case, ScenarioConfig};
use gridic::series::TimeSeries;
use num_complex::Complex64;
use serde_json::json;

fn config(dt: f64, t_stop: f64) -> ScenarioConfig {
    ScenarioConfig {
        solver: SolverConfig {
            dt,
            t_stop,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn constant(names: &[&str], value: f64, n: usize, dt: f64) -> TimeSeries {
    let mut s = TimeSeries::new(names.iter().copied()).unwrap();
    for k in 0..n {
        s.push(k as f64 * dt, &vec![value; names.len()]).unwrap();
    }
    s
}

#[test]
fn comparing_a_series_with_itself() {
    let mut s = TimeSeries::new(["a", "b"]).unwrap();
    for k in 0..50 {
        let t = k as f64 * 0.01;
        s.push(t, &[t.sin(), (3.0 * t).cos()]).unwrap();
    }
    let r = compare_series(&s, &s, &Tolerances::uniform(0.0)).unwrap();
    assert!(r.passed());
    assert!(r.channels.iter().all(|c| c.max_abs == 0.0 && c.rms == 0.0));
}

#[test]
fn constant_offset_is_measured() {
    let a = constant(&["v"], 1.0, 11, 0.1);
    let b = constant(&["v"], 1.005, 11, 0.1);
    let r = compare_series(&a, &b, &Tolerances::uniform(1e-2)).unwrap();
    let c = r.channel("v").unwrap();
    assert!((c.max_abs - 0.005).abs() < 1e-12 && (c.rms - 0.005).abs() < 1e-12);
    assert!(r.passed());
    let r = compare_series(&a, &b, &Tolerances::uniform(1e-3)).unwrap();
    assert!(!r.passed());
    assert!(r.to_string().contains("FAIL"));
    let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(json["channels"][0]["name"], "v");
}

#[test]
fn channel_mismatch_and_overlap_errors() {
    let a = constant(&["v", "w"], 1.0, 5, 0.1);
    let b = constant(&["v"], 1.0, 5, 0.1);
    assert_eq!(
        compare_series(&a, &b, &Tolerances::new()).unwrap_err(),
        CompareError::MissingChannel {
            name: "w".into(),
            side: "second"
        }
    );
    assert!(matches!(
        compare_series(&b, &a, &Tolerances::new()),
        Err(CompareError::MissingChannel { side: "first", .. })
    ));
    let mut late = TimeSeries::new(["v"]).unwrap();
    late.push(5.0, &[1.0]).unwrap();
    late.push(6.0, &[1.0]).unwrap();
    assert_eq!(compare_series(&b, &late, &Tolerances::new()).unwrap_err(), CompareError::EmptyOverlap);
    let empty = TimeSeries::new(["v"]).unwrap();
    assert_eq!(compare_series(&b, &empty, &Tolerances::new()).unwrap_err(), CompareError::EmptyOverlap);
}

#[test]
fn finer_series_is_interpolated_onto_the_coarser() {
    // A ramp is reproduced exactly by linear interpolation, so only the
    // deliberate offset shows.
    let ramp = |dt: f64, n: usize, off: f64| {
        let mut s = TimeSeries::new(["r"]).unwrap();
        for k in 0..n {
            let t = k as f64 * dt;
            s.push(t, &[2.0 * t + off]).unwrap();
        }
        s
    };
    let coarse = ramp(0.1, 11, 0.0);
    let fine = ramp(0.03, 30, 1e-3);
    let r = compare_series(&coarse, &fine, &Tolerances::new()).unwrap();
    assert_eq!(r.samples, 9); // 0.0 ..= 0.8, inside fine's span [0, 0.87]
    assert!((r.channel("r").unwrap().max_abs - 1e-3).abs() < 1e-12);
    let r2 = compare_series(&fine, &coarse, &Tolerances::new()).unwrap();
    assert_eq!(r2.samples, 9);
}

#[test]
fn nan_deviation_fails() {
    let a = constant(&["v"], 1.0, 4, 0.1);
    let b = constant(&["v"], f64::NAN, 4, 0.1);
    let r = compare_series(&a, &b, &Tolerances::new()).unwrap();
    assert!(!r.passed());
}

#[test]
fn tolerance_rules_match_by_prefix() {
    let t = default_tolerances();
    assert_eq!(t.for_channel("vmag_bus4"), Some(1e-2));
    assert_eq!(t.for_channel("omega_bus1"), Some(1e-3));
    assert_eq!(t.for_channel("delta_bus2"), Some(0.05));
    assert_eq!(t.for_channel("efd_bus1"), None);
}

/// Infinite bus 1, classical machine on bus 2 behind a line of reactance
/// `x_line`.
fn smib(x_line: f64, h: f64, d: f64) -> serde_json::Value {
    json!({
        "format": 1,
        "system_base_mva": 100,
        "buses": [
            {"id": 1, "kind": "slack", "v_setpoint": 1.0},
            {"id": 2, "kind": "pv", "v_setpoint": 1.0, "p_gen_mw": 80}
        ],
        "branches": [{"id": 1, "from": 1, "to": 2, "r": 0, "x": x_line, "b": 0}],
        "machines": [{
            "bus": 2, "mva_base": 100,
            "machine": {"rs": 0, "xd": 0.3, "xq": 0.3, "xd_prime": 0.3, "xq_prime": 0.3, "xd_dprime": 0.3,
                        "xl": 0.1, "td0_prime": 1e6, "tq0_prime": 1e6, "td0_dprime": 1e6, "tq0_dprime": 1e6,
                        "h": h, "d": d}
        }]
    })
}

fn case(v: &serde_json::Value) -> Case {
    parse_case(v.to_string().as_bytes()).unwrap()
}

#[test]
fn eventless_reference_is_flat() {
    let c = parse_case(&std::fs::read(concat!(env!("CARGO_MANIFEST_DIR"), "/data/ieee14_modified.json")).unwrap())
        .unwrap();
    let mut quiet = c.clone();
    quiet.events.clear();
    let s = run_reference_dae(&quiet, &config(1e-3, 5.0)).unwrap();
    for (name, ch) in s.channels() {
        let dev = ch.iter().map(|v| (v - ch[0]).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-6, "{name}: {dev:e}");
    }
}

#[test]
fn swing_frequency_matches_linearization() {
    let (x_line, h) = (0.4, 4.0);
    let mut v = smib(x_line, h, 0.0);
    // A short, shallow fault at the machine bus starts the oscillation.
    v["faults"] = json!([{"id": 1, "bus": 2, "x": 2.0}]);
    v["events"] = json!([
        {"kind": "close_fault_switch", "time": 0.5, "target": 1},
        {"kind": "open_fault_switch", "time": 0.55, "target": 1}
    ]);
    let c = case(&v);
    let cfg = config(1e-3, 10.0);

    // Linearized frequency from the operating point.
    let prep = prepare(&c, &cfg.power_flow).unwrap();
    let v2 = prep.power_flow.voltage(2).unwrap();
    let i = (Complex64::new(0.8, prep.power_flow.generation(&c.network, 2).unwrap().im) / v2).conj();
    let e = v2 + Complex64::new(0.0, 0.3) * i;
    let p_max = e.norm() * 1.0 / (0.3 + x_line);
    let delta0 = e.arg();
    let omega_s = 2.0 * std::f64::consts::PI * 60.0;
    let expected = (omega_s * p_max * delta0.cos() / (2.0 * h)).sqrt() / (2.0 * std::f64::consts::PI);

    let s = run_reference_dae(&c, &cfg).unwrap();
    let w = s.channel("omega_bus2").unwrap();
    let t = s.time();
    let mut ups = Vec::new();
    for k in 1..w.len() {
        if t[k] > 1.0 && w[k - 1] < 1.0 && w[k] >= 1.0 {
            let f = (1.0 - w[k - 1]) / (w[k] - w[k - 1]);
            ups.push(t[k - 1] + f * (t[k] - t[k - 1]));
        }
    }
    assert!(ups.len() >= 5, "{} crossings", ups.len());
    let period = (ups.last().unwrap() - ups[0]) / (ups.len() - 1) as f64;
    let measured = 1.0 / period;
    assert!(
        (measured / expected - 1.0).abs() < 0.02,
        "measured {measured:.4} Hz, expected {expected:.4} Hz"
    );
    // Small-signal regime.
    assert!(w.iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max) < 1e-3);
}

#[test]
fn branch_outage_matches_circuit() {
    let mut v = smib(0.5, 4.0, 1.0);
    v["branches"] = json!([
        {"id": 1, "from": 1, "to": 2, "r": 0.01, "x": 0.5, "b": 0.02},
        {"id": 2, "from": 1, "to": 2, "r": 0.01, "x": 0.5, "b": 0.02}
    ]);
    v["events"] = json!([{"kind": "open_branch", "time": 0.5, "target": 2}]);
    let c = case(&v);
    let cfg = config(1e-3, 3.0);
    let reference = run_reference_dae(&c, &cfg).unwrap();
    let circuit = run_scenario(&c, &cfg).unwrap().series;
    let r = compare_series(&circuit, &reference, &Tolerances::uniform(1e-4)).unwrap();
    assert!(r.passed(), "\n{r}");
    // The outage is visible.
    let w = reference.channel("omega_bus2").unwrap();
    assert!(w.iter().any(|x| (x - 1.0).abs() > 1e-4));
}

#[test]
fn constant_power_injection_and_custom_probes_match_circuit() {
    // Three buses: infinite bus, machine bus, and a PV bus with no machine
    // that the dynamic model holds at constant power.
    let mut v = smib(0.3, 5.0, 2.0);
    v["buses"] = json!([
        {"id": 1, "kind": "slack", "v_setpoint": 1.0},
        {"id": 2, "kind": "pv", "v_setpoint": 1.02, "p_gen_mw": 60},
        {"id": 3, "kind": "pv", "v_setpoint": 1.0, "p_gen_mw": 20}
    ]);
    v["branches"] = json!([
        {"id": 1, "from": 1, "to": 2, "r": 0.01, "x": 0.3, "b": 0},
        {"id": 2, "from": 2, "to": 3, "r": 0.02, "x": 0.2, "b": 0.01},
        {"id": 3, "from": 1, "to": 3, "r": 0.02, "x": 0.25, "b": 0}
    ]);
    v["loads"] = json!([{"bus": 3, "p_mw": 50, "q_mvar": 10, "kind": "constant_pq"}]);
    v["faults"] = json!([{"id": 7, "branch": 2, "location": 0.3, "r": 0.01, "x": 0.1}]);
    v["events"] = json!([
        {"kind": "close_fault_switch", "time": 0.2, "target": 7},
        {"kind": "open_fault_switch", "time": 0.3, "target": 7}
    ]);
    v["probes"] = json!([{"name": "v3", "expr": "sqrt(V(bus3_re)^2 + V(bus3_im)^2)"}]);
    let c = case(&v);
    let cfg = config(1e-3, 2.0);
    let reference = run_reference_dae(&c, &cfg).unwrap();
    let circuit = run_scenario(&c, &cfg).unwrap().series;
    assert_eq!(reference.names(), circuit.names());
    let r = compare_series(&circuit, &reference, &Tolerances::uniform(1e-3)).unwrap();
    assert!(r.passed(), "\n{r}");
    let v3 = reference.channel("v3").unwrap();
    assert!((v3[0] - 1.0).abs() < 1e-6);
    assert!(v3[reference.index_at(0.25).unwrap()] < 0.95);
}

#[test]
fn unsupported_probe_is_reported() {
    let mut v = smib(0.3, 4.0, 1.0);
    v["probes"] = json!([{"name": "i", "expr": "I(L1.r)"}]);
    let err = run_reference_dae(&case(&v), &config(1e-3, 0.1)).unwrap_err();
    assert!(err.to_string().contains("probe `i`"), "{err}");
}
