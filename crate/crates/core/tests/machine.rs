use std::f64::consts::{FRAC_PI_2, PI};

use gridic::blocks::LimiterMode;
use gridic::engine::{run_transient, Probe, RunReport, Simulator, SolverConfig};
use gridic::grid::{compile_impedance, BusNodes};
use gridic::machine::equations::saturation_term;
use gridic::machine::{
    build_exciter_subcircuit, build_governor_subcircuit, build_machine_subcircuit, initialize_exciter,
    initialize_governor, initialize_machine, to_machine, to_network, ExciterParams, Genrou, GovernorF, GovernorParams,
    MachineError, MachineParams, Saturation,
};
use gridic::netlist::{Device, Expr, Netlist, Waveform};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WB: f64 = 2.0 * PI * 60.0;

fn machine() -> MachineParams {
    MachineParams {
        rs: 0.003,
        xd: 1.05,
        xq: 0.98,
        xd_prime: 0.185,
        xq_prime: 0.36,
        xd_dprime: 0.13,
        xq_dprime: 0.13,
        xl: 0.1,
        td0_prime: 6.1,
        tq0_prime: 0.3,
        td0_dprime: 0.04,
        tq0_dprime: 0.099,
        h: 6.54,
        d: 2.0,
        saturation: Some(Saturation { a: 0.9, b: 0.3 }),
    }
}

fn classical() -> MachineParams {
    let x = 0.3;
    MachineParams {
        rs: 0.0,
        xd: x,
        xq: x,
        xd_prime: x,
        xq_prime: x,
        xd_dprime: x,
        xq_dprime: x,
        xl: 0.1,
        td0_prime: 1e6,
        tq0_prime: 1e6,
        td0_dprime: 1e6,
        tq0_dprime: 1e6,
        h: 4.0,
        d: 1.0,
        saturation: None,
    }
}

fn exciter() -> ExciterParams {
    ExciterParams {
        tr: 0.02,
        ka: 50.0,
        ta: 0.05,
        ke: 1.0,
        te: 0.5,
        kf: 0.05,
        tf: 1.0,
        vr_max: 6.0,
        vr_min: -6.0,
        saturation: Some(Saturation { a: 1.5, b: 0.08 }),
        limiter: LimiterMode::OutputClamp,
    }
}

fn governor() -> GovernorParams {
    GovernorParams {
        k: 20.0,
        f: 0.3,
        t1: 0.1,
        t2: 0.05,
        t3: 0.25,
        t4: 0.3,
        t5: 7.0,
        p_max: 1.2,
        p_min: 0.0,
        f_mode: GovernorF::ReheatLead,
    }
}

#[test]
fn rotation_convention_and_round_trip() {
    // δ is measured to the q-axis, so at δ = π/2 the (d, q) pair maps onto
    // (re, im) unchanged.
    let (s, c) = FRAC_PI_2.sin_cos();
    let (r, i) = to_network(0.3, 0.7, s, c);
    assert!((r - 0.3).abs() < 1e-15 && (i - 0.7).abs() < 1e-15);
    let (d, q) = to_machine(r, i, s, c);
    assert!((d - 0.3).abs() < 1e-15 && (q - 0.7).abs() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let (d, q, delta): (f64, f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-10.0..10.0));
        let (s, c) = delta.sin_cos();
        let (r, i) = to_network(d, q, s, c);
        assert!((r.hypot(i) - d.hypot(q)).abs() < 1e-14);
        let (d2, q2) = to_machine(r, i, s, c);
        assert!((d2 - d).abs() < 1e-15 && (q2 - q).abs() < 1e-15);
    }
}

#[test]
fn norton_current_examples() {
    let mut p = machine();
    let m = Genrou::new(&p);
    let (ir, ii) = m.norton_current(1.01, 0.2, 1.01, 0.2);
    assert_eq!((ir, ii), (0.0, 0.0));

    p.rs = 0.0;
    p.xd_dprime = 0.2;
    p.xq_dprime = 0.2;
    let m = Genrou::new(&p);
    // E'' − V = j0.2 in the machine frame at δ = 0.
    let (s, c) = 0f64.sin_cos();
    let (er, ei) = to_network(0.0, 0.2, s, c);
    let (ir, ii) = m.norton_current(er, ei, 0.0, 0.0);
    let (id, iq) = to_machine(ir, ii, s, c);
    assert!((id - 1.0).abs() < 1e-15 && iq.abs() < 1e-15);
}

#[test]
fn unloaded_initialization() {
    let init = initialize_machine(&machine(), Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)).unwrap();
    assert_eq!(init.current, Complex64::new(0.0, 0.0));
    assert!(init.pm.abs() < 1e-15);
    let (s, c) = init.state.delta.sin_cos();
    let (er, ei) = to_network(init.ed2, init.eq2, s, c);
    assert!((er - 1.0).abs() < 1e-15 && ei.abs() < 1e-15);
}

#[test]
fn initialization_zeroes_every_derivative() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = machine();
    let m = Genrou::new(&p);
    for _ in 0..200 {
        let v = Complex64::from_polar(rng.random_range(0.9..1.1), rng.random_range(-0.5..0.5));
        let s = Complex64::new(rng.random_range(0.0..1.0), rng.random_range(-0.2..0.6));
        let init = initialize_machine(&p, v, s).unwrap();
        let x = init.state.to_array();
        let alg = m.algebra(&x, v.re, v.im);
        assert!((Complex64::new(alg.i_re, alg.i_im) - init.current).norm() < 1e-12);
        for r in m.derivatives(&x, &alg, init.efd, init.pm, WB) {
            assert!(r.abs() < 1e-9, "{r}");
        }
        // Terminal power equals the request.
        let sv = v * Complex64::new(alg.i_re, alg.i_im).conj();
        assert!((sv - s).norm() < 1e-12);
    }
}

#[test]
fn infeasible_and_invalid_parameters() {
    // Absorbing far more reactive power than the field can supply.
    let r = initialize_machine(&machine(), Complex64::new(1.0, 0.0), Complex64::new(0.0, -2.0));
    assert!(matches!(r, Err(MachineError::Infeasible(_))), "{r:?}");
    let mut p = machine();
    p.xd_prime = 2.0;
    assert!(matches!(p.validate(), Err(MachineError::InvalidParameter { .. })));
    let mut p = machine();
    p.xq_dprime = 0.2;
    assert!(p.validate().is_err());
    let mut p = machine();
    p.h = 0.0;
    assert!(p.validate().is_err());
}

/// Machine on a terminal bus tied through `x_e` to an ideal source.
struct Smib {
    nl: Netlist,
    bus: BusNodes,
    machine: gridic::machine::MachineBlock,
    pm_node: Option<gridic::netlist::NodeId>,
    efd: Expr,
    v_inf: Complex64,
}

const XE: f64 = 0.25;

fn smib(p: &MachineParams, v_t: Complex64, s: Complex64, with_controls: bool, pm_step: Option<(f64, f64)>) -> Smib {
    let init = initialize_machine(p, v_t, s).unwrap();
    let v_inf = v_t - Complex64::new(0.0, XE) * init.current;
    let mut nl = Netlist::new();
    let bus = BusNodes::allocate(&mut nl, 1);
    let inf = BusNodes::allocate(&mut nl, 2);
    nl.add_device(Device::vsource("VINF_R", inf.re, 0, Waveform::Dc(v_inf.re))).unwrap();
    nl.add_device(Device::vsource("VINF_I", inf.im, 0, Waveform::Dc(v_inf.im))).unwrap();
    compile_impedance(&mut nl, "LX", bus, inf, Complex64::new(0.0, XE)).unwrap();
    let omega = nl.new_node(Some("omega"));
    let (efd, pm, pm_node) = if with_controls {
        let ei = initialize_exciter(&exciter(), init.efd, v_t.norm()).unwrap();
        let ex = build_exciter_subcircuit(&mut nl, "AVR", &exciter(), &ei, bus).unwrap();
        let gi = initialize_governor(&governor(), init.pm).unwrap();
        let gov = build_governor_subcircuit(&mut nl, "GOV", &governor(), &gi, &Expr::v(omega)).unwrap();
        (Expr::v(ex.efd), Expr::v(gov.pm), Some(gov.pm))
    } else {
        let w = match pm_step {
            Some((at, dp)) => Waveform::Step {
                at,
                before: init.pm,
                after: init.pm + dp,
            },
            None => Waveform::Dc(init.pm),
        };
        let n = nl.new_node(Some("pm"));
        nl.add_device(Device::vsource("VPM", n, 0, w)).unwrap();
        (Expr::constant(init.efd), Expr::v(n), Some(n))
    };
    let machine = build_machine_subcircuit(&mut nl, "G1", p, &init, bus, &efd, &pm, Some(omega), WB).unwrap();
    Smib {
        nl,
        bus,
        machine,
        pm_node,
        efd,
        v_inf,
    }
}

fn run(nl: &Netlist, dt: f64, t_stop: f64, probes: &[Probe]) -> RunReport {
    let config = SolverConfig {
        dt,
        t_stop,
        ..Default::default()
    };
    Simulator::new(nl, &config, &[]).unwrap().run(probes).unwrap()
}

fn state_probes(m: &gridic::machine::MachineBlock) -> Vec<Probe> {
    gridic::machine::equations::STATE_NAMES
        .iter()
        .zip(m.states)
        .map(|(n, node)| Probe::voltage(*n, node))
        .collect()
}

#[test]
fn machine_with_controls_holds_equilibrium() {
    let s = smib(&machine(), Complex64::from_polar(1.03, 0.2), Complex64::new(0.7, 0.25), true, None);
    let mut probes = state_probes(&s.machine);
    probes.push(Probe::expression("efd", s.efd.clone()));
    probes.push(Probe::voltage("pm", s.pm_node.unwrap()));
    probes.push(Probe::expression("vmag", (s.bus.vr() * s.bus.vr() + s.bus.vi() * s.bus.vi()).sqrt()));
    let report = run(&s.nl, 1e-3, 10.0, &probes);
    for (name, values) in report.series.channels() {
        let drift = values.iter().map(|v| (v - values[0]).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-5, "{name} drifted {drift:e}");
    }
}

/// Terminal voltage of the SMIB network for a given internal EMF.
fn smib_terminal(m: &Genrou, x: &[f64; 6], v_inf: Complex64) -> Complex64 {
    let (s, c) = x[0].sin_cos();
    let (ed2, eq2) = m.subtransient_emf(x[2], x[3], x[4], x[5]);
    let (er, ei) = to_network(ed2, eq2, s, c);
    let y = Complex64::new(m.g, m.b);
    let ye = Complex64::new(0.0, -1.0 / XE);
    (y * Complex64::new(er, ei) + ye * v_inf) / (y + ye)
}

fn rk4<const N: usize>(x: &mut [f64; N], t: f64, h: f64, f: &dyn Fn(f64, &[f64; N]) -> [f64; N]) {
    let add = |a: &[f64; N], b: &[f64; N], k: f64| {
        let mut o = *a;
        for i in 0..N {
            o[i] += k * b[i];
        }
        o
    };
    let k1 = f(t, x);
    let k2 = f(t + h / 2.0, &add(x, &k1, h / 2.0));
    let k3 = f(t + h / 2.0, &add(x, &k2, h / 2.0));
    let k4 = f(t + h, &add(x, &k3, h));
    for i in 0..N {
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

#[test]
fn mechanical_power_step_matches_direct_integration() {
    let p = machine();
    let v_t = Complex64::from_polar(1.02, 0.15);
    let s = Complex64::new(0.6, 0.2);
    let (t_step, dp) = (0.5, 0.1);
    let sm = smib(&p, v_t, s, false, Some((t_step, dp)));
    let report = run(&sm.nl, 1e-3, 5.0, &state_probes(&sm.machine));

    let init = initialize_machine(&p, v_t, s).unwrap();
    let m = Genrou::new(&p);
    let mut x = init.state.to_array();
    let f = |t: f64, x: &[f64; 6]| {
        let v = smib_terminal(&m, x, sm.v_inf);
        let alg = m.algebra(x, v.re, v.im);
        let pm = if t < t_step { init.pm } else { init.pm + dp };
        m.derivatives(x, &alg, init.efd, pm, WB)
    };
    let h = 1e-5;
    let mut worst = [0.0f64; 6];
    let times = report.series.time().to_vec();
    let mut t = 0.0;
    for (k, &ts) in times.iter().enumerate() {
        while t < ts - h / 2.0 {
            rk4(&mut x, t, h, &f);
            t += h;
        }
        for (j, name) in gridic::machine::equations::STATE_NAMES.iter().enumerate() {
            let c = report.series.channel(name).unwrap()[k];
            worst[j] = worst[j].max((c - x[j]).abs());
        }
    }
    assert!(worst.iter().all(|w| *w < 1e-3), "{worst:?}");
    let delta = report.series.channel("delta").unwrap();
    assert!(delta.last().unwrap() > &(delta[0] + 0.01));
    let omega = report.series.channel("omega").unwrap();
    // Speed returns toward synchronous once the angle settles.
    let peak = omega.iter().map(|w| (w - 1.0).abs()).fold(0.0, f64::max);
    assert!((omega.last().unwrap() - 1.0).abs() < 0.5 * peak);
}

#[test]
fn classical_limit_matches_swing_equation() {
    let p = classical();
    let v_t = Complex64::from_polar(1.0, 0.1);
    let s = Complex64::new(0.8, 0.1);
    let (t_step, dp) = (0.2, 0.1);
    let sm = smib(&p, v_t, s, false, Some((t_step, dp)));
    let report = run(&sm.nl, 1e-3, 5.0, &state_probes(&sm.machine));

    let init = initialize_machine(&p, v_t, s).unwrap();
    let e = init.eq2;
    let x_total = p.xd_dprime + XE;
    let theta = sm.v_inf.arg();
    let vinf = sm.v_inf.norm();
    let f = |t: f64, x: &[f64; 2]| {
        let pm = if t < t_step { init.pm } else { init.pm + dp };
        let pe = e * vinf * (x[0] - theta).sin() / x_total;
        [WB * (x[1] - 1.0), (pm - pe - p.d * (x[1] - 1.0)) / (2.0 * p.h)]
    };
    let mut x = [init.state.delta, 1.0];
    let h = 1e-5;
    let mut t = 0.0;
    let mut worst = 0.0f64;
    for (k, &ts) in report.series.time().iter().enumerate() {
        while t < ts - h / 2.0 {
            rk4(&mut x, t, h, &f);
            t += h;
        }
        worst = worst.max((report.series.channel("delta").unwrap()[k] - x[0]).abs());
    }
    assert!(worst < 1e-3, "{worst}");
}

#[test]
fn terminal_power_balance_and_swing_consistency() {
    let p = machine();
    let sm = smib(&p, Complex64::from_polar(1.02, 0.15), Complex64::new(0.6, 0.2), false, Some((0.3, 0.2)));
    let m = &sm.machine;
    let (vr, vi) = (sm.bus.vr(), sm.bus.vi());
    let (ir, ii) = (Expr::v(m.i_re), Expr::v(m.i_im));
    let probes = vec![
        Probe::expression("p_term", vr * ir.clone() + vi * ii.clone()),
        Probe::expression("p_gap", Expr::v(m.te) - (ir.clone() * ir + ii.clone() * ii) * p.rs),
        Probe::voltage("omega", m.omega()),
        Probe::expression(
            "accel",
            Expr::v(sm.pm_node.unwrap()) - Expr::v(m.te) - (Expr::v(m.omega()) - 1.0) * p.d,
        ),
    ];
    let dt = 1e-3;
    let r = run(&sm.nl, dt, 2.0, &probes);
    let s = &r.series;
    let (pt, pg) = (s.channel("p_term").unwrap(), s.channel("p_gap").unwrap());
    assert!(pt.iter().zip(pg).all(|(a, b)| (a - b).abs() < 1e-6));
    let (w, acc) = (s.channel("omega").unwrap(), s.channel("accel").unwrap());
    let t = s.time();
    for k in 0..t.len() - 1 {
        // The first step after the breakpoint is backward Euler.
        if (t[k] - 0.3).abs() < 1e-9 {
            continue;
        }
        let lhs = 2.0 * p.h * (w[k + 1] - w[k]) / dt;
        let rhs = 0.5 * (acc[k] + acc[k + 1]);
        assert!((lhs - rhs).abs() < 1e-6, "t = {}: {lhs} vs {rhs}", t[k]);
    }
}

/// Exciter fed by ideal sources at the terminal.
fn exciter_rig(params: &ExciterParams, v0: f64, v1: f64, at: f64) -> (Netlist, gridic::machine::ExciterBlock, f64) {
    let efd0 = 2.0;
    let init = initialize_exciter(params, efd0, v0).unwrap();
    let mut nl = Netlist::new();
    let bus = BusNodes::allocate(&mut nl, 1);
    nl.add_device(Device::vsource(
        "VT_R",
        bus.re,
        0,
        Waveform::Step {
            at,
            before: v0,
            after: v1,
        },
    ))
    .unwrap();
    nl.add_device(Device::vsource("VT_I", bus.im, 0, Waveform::Dc(0.0))).unwrap();
    let block = build_exciter_subcircuit(&mut nl, "AVR", params, &init, bus).unwrap();
    (nl, block, init.v_ref)
}

#[test]
fn exciter_operating_point() {
    let p = exciter();
    let (nl, b, v_ref) = exciter_rig(&p, 1.04, 1.04, 1.0);
    let config = SolverConfig::default();
    let mut c = gridic::engine::Circuit::new(&nl, &config).unwrap();
    let st = c.solve_dc(None).unwrap();
    let (vr, efd, vm) = (st.voltage(b.vr), st.voltage(b.efd), st.voltage(b.vm));
    let se = saturation_term(p.saturation.as_ref(), efd);
    assert!((vr - (p.ke * efd + se)).abs() < 1e-9);
    assert!((vm - (v_ref - vr / p.ka)).abs() < 1e-9);
    assert!(st.voltage(b.vf).abs() < 1e-9);
}

#[test]
fn exciter_voltage_dip_matches_direct_integration() {
    let mut p = exciter();
    p.vr_max = 100.0;
    p.vr_min = -100.0;
    let (v0, v1, at) = (1.04, 0.94, 0.2);
    let (nl, b, v_ref) = exciter_rig(&p, v0, v1, at);
    let probes = [Probe::voltage("efd", b.efd)];
    let r = run_transient(
        &nl,
        &SolverConfig {
            dt: 1e-3,
            t_stop: 3.0,
            ..Default::default()
        },
        &[],
        &probes,
    )
    .unwrap();
    // States: sensed voltage, amplifier, field voltage, rate-feedback lag.
    let efd0 = 2.0;
    let vr0 = p.ke * efd0 + saturation_term(p.saturation.as_ref(), efd0);
    let mut x = [v0, vr0, efd0, efd0];
    let f = |t: f64, x: &[f64; 4]| {
        let vt = if t <= at { v0 } else { v1 };
        let vf = p.kf / p.tf * (x[2] - x[3]);
        let err = v_ref - x[0] - vf;
        [
            (vt - x[0]) / p.tr,
            (p.ka * err - x[1]) / p.ta,
            (x[1] - p.ke * x[2] - saturation_term(p.saturation.as_ref(), x[2])) / p.te,
            (x[2] - x[3]) / p.tf,
        ]
    };
    let efd = r.channel("efd").unwrap();
    let h = 1e-5;
    let mut t = 0.0;
    let mut worst = 0.0f64;
    for (k, &ts) in r.time().iter().enumerate() {
        while t < ts - h / 2.0 {
            rk4(&mut x, t, h, &f);
            t += h;
        }
        worst = worst.max((efd[k] - x[2]).abs());
    }
    assert!(worst < 1e-3, "{worst}");
    // Rising over the first 100 ms after the dip.
    let k0 = r.index_at(at).unwrap();
    for k in k0 + 1..k0 + 100 {
        assert!(efd[k + 1] > efd[k], "t = {}", r.time()[k]);
    }
}

#[test]
fn regulator_output_respects_its_ceiling() {
    for mode in [LimiterMode::OutputClamp, LimiterMode::NonWindup] {
        let mut p = exciter();
        p.vr_max = 3.0;
        p.limiter = mode;
        let (nl, b, _) = exciter_rig(&p, 1.04, 0.5, 0.1);
        let r = run_transient(
            &nl,
            &SolverConfig {
                dt: 1e-3,
                t_stop: 2.0,
                ..Default::default()
            },
            &[],
            &[Probe::voltage("vr", b.vr)],
        )
        .unwrap();
        let vr = r.channel("vr").unwrap();
        assert!(vr.iter().all(|v| *v <= p.vr_max + 1e-8), "{mode:?}");
        assert!(vr.iter().any(|v| (*v - p.vr_max).abs() < 1e-8), "{mode:?} never reached the ceiling");
    }
}

fn governor_rig(params: &GovernorParams, p_ref: f64, omega: Waveform) -> (Netlist, gridic::machine::GovernorBlock) {
    let mut nl = Netlist::new();
    let w = nl.new_node(Some("omega"));
    nl.add_device(Device::vsource("VW", w, 0, omega)).unwrap();
    let init = initialize_governor(params, p_ref).unwrap();
    let b = build_governor_subcircuit(&mut nl, "GOV", params, &init, &Expr::v(w)).unwrap();
    (nl, b)
}

#[test]
fn governor_steady_states() {
    for mode in [GovernorF::ReheatLead, GovernorF::FilteredGain] {
        let mut g = governor();
        g.f_mode = mode;
        let (nl, b) = governor_rig(&g, 0.7, Waveform::Dc(1.0));
        let st = gridic::engine::solve_dc_operating_point(&nl, &SolverConfig::default(), None).unwrap();
        assert!((st.voltage(b.pm) - 0.7).abs() < 1e-12, "{mode:?}");

        // Sustained overspeed of 0.01 p.u. lowers the output by K·0.01.
        let (nl, b) = governor_rig(&g, 0.7, Waveform::Dc(1.01));
        let st = gridic::engine::solve_dc_operating_point(&nl, &SolverConfig::default(), None).unwrap();
        let want = match mode {
            GovernorF::ReheatLead => 0.7 - g.k * 0.01,
            GovernorF::FilteredGain => 0.7 - g.f * g.k * 0.01,
        };
        assert!((st.voltage(b.pm) - want).abs() < 1e-9, "{mode:?}");
    }
    // Underspeed saturates at P_max.
    let g = governor();
    let (nl, b) = governor_rig(&g, 0.7, Waveform::Dc(0.95));
    let st = gridic::engine::solve_dc_operating_point(&nl, &SolverConfig::default(), None).unwrap();
    assert!((st.voltage(b.pm) - g.p_max).abs() < 1e-9);
}

#[test]
fn governor_output_never_exceeds_pmax() {
    let g = governor();
    let omega = Waveform::Pwl(vec![(0.0, 1.0), (0.5, 1.0), (0.6, 0.9), (3.0, 0.9), (3.2, 1.05), (6.0, 1.0)]);
    let (nl, b) = governor_rig(&g, 1.0, omega);
    let r = run_transient(
        &nl,
        &SolverConfig {
            dt: 1e-3,
            t_stop: 10.0,
            ..Default::default()
        },
        &[],
        &[Probe::voltage("pm", b.pm), Probe::voltage("pgv", b.pgv)],
    )
    .unwrap();
    for ch in ["pm", "pgv"] {
        assert!(r.channel(ch).unwrap().iter().all(|v| *v <= g.p_max + 1e-8), "{ch}");
    }
}
