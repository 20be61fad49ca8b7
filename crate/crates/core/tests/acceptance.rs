//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Built with `harness = false` so the lines always reach the test log. The
//! process fails on any unexpected FAIL, and also when a criterion listed in
//! `KNOWN_FAILURES` starts passing, so the list cannot go stale.

use std::f64::consts::{E, PI};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use gridic::blocks::{make_high_pass, make_integrator, make_lead_lag, make_low_pass, make_operator, Block, Operator};
use gridic::engine::{run_transient, Probe, SolverConfig};
use gridic::grid::{build_ybus, solve_power_flow, BusKind, Network, PowerFlowOptions};
use gridic::netlist::{Device, Expr, MapBindings, Netlist, NodeId, Waveform};
use gridic::oracle::{compare_series, run_reference_dae, CompareReport, Tolerances};
use gridic::scenario::cdf::parse_cdf;
use gridic::scenario::{parse_case, run_scenario, write_csv_to, Case, ScenarioConfig};
use gridic::series::TimeSeries;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Block analytics.
const BLOCK_TOL: f64 = 1e-3;
const INTEGRATOR_TOL: f64 = 1e-4;
const BLOCK_BUDGET: Duration = Duration::from_secs(1);
const OPERATOR_SAMPLES: usize = 1000;
// Network.
const YBUS_TOL: f64 = 1e-12;
const PF_ORACLE_TOL: f64 = 1e-8;
const PF_ARCHIVE_TOL: f64 = 1e-3;
const NETWORK_BUDGET: Duration = Duration::from_secs(1);
// Equilibrium.
const FLAT_TOL: f64 = 1e-4;
const FLAT_SECONDS: f64 = 5.0;
const FLAT_BUDGET: Duration = Duration::from_secs(10);
// Fault scenario.
const FAULT_ON: f64 = 1.0;
const FAULT_OFF: f64 = 2.0;
const T_STOP: f64 = 20.0;
const DT: f64 = 1e-3;
const SETTLED_OMEGA: f64 = 1e-3;
const SETTLED_VMAG: f64 = 1e-2;
const SETTLED_DVDT: f64 = 1e-3;
const VMAG_TOL: f64 = 1e-2;
const OMEGA_TOL: f64 = 1e-3;
const DELTA_TOL: f64 = 0.05;
const RUN_BUDGET: Duration = Duration::from_secs(30);
const RUN_STRETCH: Duration = Duration::from_secs(5);

/// Criteria that fail for reasons outside the implementation; the analysis
/// is kept with the project notes.
const KNOWN_FAILURES: &[&str] = &[
    // The archive prints its own solution to three decimals and that solution
    // is not the exact power flow of its own data (bus 4 is 1.019 in the file,
    // 1.01767 solved from the file's data by any Newton solver).
    "3c",
];

struct Line {
    id: &'static str,
    pass: bool,
    what: String,
}

#[derive(Default)]
struct Report {
    lines: Vec<Line>,
}

impl Report {
    fn check(&mut self, id: &'static str, pass: bool, what: impl Into<String>) {
        let what = what.into();
        println!("{} {id:>3}  {what}", if pass { "PASS" } else { "FAIL" });
        self.lines.push(Line { id, pass, what });
    }
}

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn ieee14() -> Case {
    parse_case(&std::fs::read(data("ieee14_modified.json")).unwrap()).unwrap()
}

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

// ---- 1, 2: blocks -------------------------------------------------------

fn driven(w: Waveform) -> (Netlist, NodeId) {
    let mut nl = Netlist::new();
    let n = nl.new_node(Some("in"));
    nl.add_device(Device::vsource("Vin", n, 0, w)).unwrap();
    (nl, n)
}

fn step_input() -> (Netlist, NodeId) {
    driven(Waveform::Step {
        at: 0.0,
        before: 0.0,
        after: 1.0,
    })
}

fn simulate(nl: &Netlist, out: NodeId, dt: f64, t_stop: f64) -> TimeSeries {
    let config = SolverConfig {
        dt,
        t_stop,
        ..Default::default()
    };
    run_transient(nl, &config, &[], &[Probe::voltage("out", out)]).unwrap()
}

fn block_analytics(r: &mut Report) {
    let started = Instant::now();
    let t = 0.5;
    let dt = t / 1000.0;

    let (mut nl, n) = step_input();
    let b = make_low_pass(&mut nl, "lp", &Expr::v(n), t, 1.0).unwrap();
    let lp = simulate(&nl, b.output, dt, t).interpolate("out", t).unwrap();

    let (mut nl, n) = step_input();
    let b = make_high_pass(&mut nl, "hp", &Expr::v(n), t, 1.0).unwrap();
    let hp = simulate(&nl, b.output, dt, t).interpolate("out", t).unwrap();

    let (t1, t2) = (0.3, 1.2);
    let (mut nl, n) = step_input();
    let b = make_lead_lag(&mut nl, "ll", &Expr::v(n), t1, t2).unwrap();
    let dt_ll = t2 / 1000.0;
    let s = simulate(&nl, b.output, dt_ll, 20.0 * t2);
    let ll0 = s.interpolate("out", dt_ll).unwrap();
    let ll_inf = *s.channel("out").unwrap().last().unwrap();

    let mut nl = Netlist::new();
    let b = make_integrator(&mut nl, "int", 1.0, &Expr::time().cos(), 0.0, None).unwrap();
    let s = simulate(&nl, b.output, 1e-3, 2.0 * PI);
    let int_err = s
        .time()
        .iter()
        .zip(s.channel("out").unwrap())
        .map(|(t, v)| (t.sin() - v).abs())
        .fold(0.0, f64::max);
    let elapsed = started.elapsed();

    let errs = [
        (lp - (1.0 - 1.0 / E)).abs(),
        (hp - 1.0 / E).abs(),
        (ll0 - t1 / t2).abs(),
        (ll_inf - 1.0).abs(),
    ];
    let pass = errs.iter().all(|e| *e < BLOCK_TOL) && int_err < INTEGRATOR_TOL && elapsed < BLOCK_BUDGET;
    r.check(
        "1",
        pass,
        format!(
            "block analytics: |err| low-pass {:.1e}, high-pass {:.1e}, lead-lag start {:.1e} end {:.1e} \
             (tol {BLOCK_TOL:e}); integrator {int_err:.1e} (tol {INTEGRATOR_TOL:e}); {:.3} s (budget {:?})",
            errs[0],
            errs[1],
            errs[2],
            errs[3],
            elapsed.as_secs_f64(),
            BLOCK_BUDGET
        ),
    );
}

fn operators(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    for _ in 0..OPERATOR_SAMPLES {
        let x: [f64; 3] = std::array::from_fn(|_| rng.random_range(-10.0..10.0));
        let k: [f64; 3] = std::array::from_fn(|_| rng.random_range(-5.0..5.0));
        let mut nl = Netlist::new();
        let inputs: Vec<Expr> = (1..=3).map(Expr::v).collect();
        let gain = make_operator(&mut nl, "g", &Operator::Gain(k[0]), &inputs[..1]).unwrap();
        let add = make_operator(&mut nl, "a", &Operator::Adder(k.to_vec()), &inputs).unwrap();
        let prod = make_operator(&mut nl, "p", &Operator::Product, &inputs).unwrap();
        let bind = MapBindings::new()
            .with_voltage(1, x[0])
            .with_voltage(2, x[1])
            .with_voltage(3, x[2]);
        let eval = |b: &Block| {
            let d = nl.device(b.devices[0]);
            d.kind.expression().unwrap().evaluate(&bind).unwrap()
        };
        let want = [k[0] * x[0], k[0] * x[0] + k[1] * x[1] + k[2] * x[2], x[0] * x[1] * x[2]];
        let got = [eval(&gain), eval(&add), eval(&prod)];
        mismatches += want.iter().zip(&got).filter(|(w, g)| w != g).count();
    }
    r.check(
        "2",
        mismatches == 0,
        format!("gain, adder, product on {OPERATOR_SAMPLES} random inputs: {mismatches} inexact outputs"),
    );
}

// ---- 3: network ---------------------------------------------------------

/// `Y = Aᵀ·diag(y)·A` over primitive two-terminal admittances.
fn naive_ybus(net: &Network) -> DMatrix<Complex64> {
    let one = Complex64::new(1.0, 0.0);
    let pos = |id: u32| net.bus_index(id).unwrap();
    // (from, to, y, a, b): current leaving `from` is y·(a·V_from − b·V_to).
    let mut prims: Vec<(usize, Option<usize>, Complex64, Complex64, Complex64)> = Vec::new();
    for b in &net.buses {
        prims.push((pos(b.id), None, Complex64::new(b.g_shunt, b.b_shunt), one, one));
    }
    for br in &net.branches {
        let y = one / Complex64::new(br.r, br.x);
        prims.push((pos(br.from), Some(pos(br.to)), y, one, one));
        prims.push((pos(br.from), None, Complex64::new(0.0, br.b * br.b_from_share), one, one));
        prims.push((pos(br.to), None, Complex64::new(0.0, br.b * (1.0 - br.b_from_share)), one, one));
    }
    for tr in &net.transformers {
        let y = one / Complex64::new(tr.r, tr.x);
        prims.push((pos(tr.from), Some(pos(tr.to)), y, one / tr.n, one));
    }
    let n = net.buses.len();
    let mut a = DMatrix::from_element(prims.len(), n, Complex64::default());
    let mut yp = DMatrix::from_element(prims.len(), prims.len(), Complex64::default());
    for (k, (f, t, y, af, bt)) in prims.iter().enumerate() {
        a[(k, *f)] += af;
        if let Some(t) = t {
            a[(k, *t)] -= bt;
        }
        yp[(k, k)] = *y;
    }
    a.transpose() * yp * a
}

/// Polar Newton with a finite-difference Jacobian on the naive Y-bus.
/// Returns the voltages and the final mismatch.
fn oracle_power_flow(net: &Network, y: &DMatrix<Complex64>) -> (Vec<Complex64>, f64) {
    let n = net.buses.len();
    let spec: Vec<Complex64> = net
        .buses
        .iter()
        .map(|b| Complex64::new(b.p_gen, b.q_gen) - net.bus_load(b.id))
        .collect();
    let theta_idx: Vec<usize> = (0..n).filter(|&k| net.buses[k].kind != BusKind::Slack).collect();
    let mag_idx: Vec<usize> = (0..n).filter(|&k| net.buses[k].kind == BusKind::Pq).collect();
    let mut mag: Vec<f64> = net.buses.iter().map(|b| if b.kind == BusKind::Pq { 1.0 } else { b.v_setpoint }).collect();
    let mut ang: Vec<f64> = net
        .buses
        .iter()
        .map(|b| if b.kind == BusKind::Slack { b.angle_deg.to_radians() } else { 0.0 })
        .collect();
    let m = theta_idx.len() + mag_idx.len();

    let residual = |mag: &[f64], ang: &[f64]| -> DVector<f64> {
        let v: Vec<Complex64> = (0..n).map(|k| Complex64::from_polar(mag[k], ang[k])).collect();
        let s: Vec<Complex64> = (0..n)
            .map(|i| v[i] * (0..n).map(|j| y[(i, j)] * v[j]).sum::<Complex64>().conj())
            .collect();
        let mut f = DVector::zeros(m);
        for (r, &k) in theta_idx.iter().enumerate() {
            f[r] = s[k].re - spec[k].re;
        }
        for (r, &k) in mag_idx.iter().enumerate() {
            f[theta_idx.len() + r] = s[k].im - spec[k].im;
        }
        f
    };

    let mut f = residual(&mag, &ang);
    for _ in 0..50 {
        if f.amax() < 1e-13 {
            break;
        }
        let mut jac = DMatrix::zeros(m, m);
        let h = 1e-7;
        for c in 0..m {
            let (mut mg, mut an) = (mag.clone(), ang.clone());
            if c < theta_idx.len() {
                an[theta_idx[c]] += h;
            } else {
                mg[mag_idx[c - theta_idx.len()]] += h;
            }
            jac.set_column(c, &((residual(&mg, &an) - &f) / h));
        }
        let dx = jac.lu().solve(&(-&f)).expect("regular Jacobian");
        for (r, &k) in theta_idx.iter().enumerate() {
            ang[k] += dx[r];
        }
        for (r, &k) in mag_idx.iter().enumerate() {
            mag[k] += dx[theta_idx.len() + r];
        }
        f = residual(&mag, &ang);
    }
    ((0..n).map(|k| Complex64::from_polar(mag[k], ang[k])).collect(), f.amax())
}

fn network(r: &mut Report) {
    let started = Instant::now();
    let case = ieee14();
    let net = &case.network;
    let y = build_ybus(net).unwrap();
    let naive = naive_ybus(net);
    let ybus_err = (y.matrix() - &naive).iter().map(|e| e.norm()).fold(0.0, f64::max);

    let pf = solve_power_flow(net, &PowerFlowOptions::default()).unwrap();
    let (v_oracle, oracle_mismatch) = oracle_power_flow(net, &naive);
    let pf_err = pf.voltages.iter().zip(&v_oracle).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    // The solver's own answer, checked against the naive Y-bus.
    let n = pf.voltages.len();
    let own_mismatch = (0..n)
        .map(|i| {
            let bus = &net.buses[i];
            let spec = Complex64::new(bus.p_gen, bus.q_gen) - net.bus_load(bus.id);
            let s = pf.voltages[i] * (0..n).map(|j| naive[(i, j)] * pf.voltages[j]).sum::<Complex64>().conj();
            match bus.kind {
                BusKind::Slack => 0.0,
                BusKind::Pv => (s.re - spec.re).abs(),
                BusKind::Pq => (s - spec).norm(),
            }
        })
        .fold(0.0, f64::max);
    let elapsed = started.elapsed();

    let archive = parse_cdf(&std::fs::read_to_string(data("ieee14cdf.txt")).unwrap()).unwrap();
    let (mut worst, mut worst_bus) = (0.0, 0);
    for bus in &archive.case.network.buses {
        // The archive's solved magnitude is stored as the bus voltage.
        let d = (pf.voltage(bus.id).unwrap().norm() - bus.v_setpoint).abs();
        if d > worst {
            (worst, worst_bus) = (d, bus.id);
        }
    }

    r.check(
        "3a",
        ybus_err < YBUS_TOL && elapsed < NETWORK_BUDGET,
        format!("Y-bus vs naive assembly: max entry error {ybus_err:.1e} (tol {YBUS_TOL:e})"),
    );
    r.check(
        "3b",
        pf_err < PF_ORACLE_TOL && own_mismatch < PF_ORACLE_TOL && elapsed < NETWORK_BUDGET,
        format!(
            "power flow vs independent Newton: max |ΔV| {pf_err:.1e}, mismatch on naive Y-bus {own_mismatch:.1e} \
             (oracle's own {oracle_mismatch:.1e}; tol {PF_ORACLE_TOL:e}); {:.3} s (budget {:?})",
            elapsed.as_secs_f64(),
            NETWORK_BUDGET
        ),
    );
    r.check(
        "3c",
        worst < PF_ARCHIVE_TOL,
        format!("power flow vs archive solution: max |V| error {worst:.2e} at bus {worst_bus} (tol {PF_ARCHIVE_TOL:e})"),
    );
}

// ---- 4: equilibrium -----------------------------------------------------

fn equilibrium(r: &mut Report) {
    let mut case = ieee14();
    case.events.clear();
    let started = Instant::now();
    let out = run_scenario(&case, &config(DT, FLAT_SECONDS)).unwrap();
    let elapsed = started.elapsed();
    let (mut worst, mut at) = (0.0, "every channel".to_string());
    for (name, ch) in out.series.channels() {
        if !["vmag_", "omega_", "delta_"].iter().any(|p| name.starts_with(p)) {
            continue;
        }
        let d = ch.iter().map(|v| (v - ch[0]).abs()).fold(0.0, f64::max);
        if d > worst {
            (worst, at) = (d, name.to_string());
        }
    }
    r.check(
        "4",
        worst < FLAT_TOL && elapsed < FLAT_BUDGET,
        format!(
            "eventless {FLAT_SECONDS} s: max drift {worst:.1e} on {at} (tol {FLAT_TOL:e}); {:.2} s (budget {:?})",
            elapsed.as_secs_f64(),
            FLAT_BUDGET
        ),
    );
}

// ---- 5-8: fault scenario ------------------------------------------------

fn machine_buses(case: &Case) -> Vec<u32> {
    case.machines.iter().map(|m| m.bus).collect()
}

fn fault_scenario(r: &mut Report, circuit: &TimeSeries, reference: &TimeSeries, elapsed: Duration, case: &Case) {
    let buses = machine_buses(case);
    let t = circuit.time();
    let k_on = circuit.index_at(FAULT_ON).unwrap();
    let k_off = circuit.index_at(FAULT_OFF).unwrap();
    let last = t.len() - 1;

    // a. The sample at exactly t = 1 s is the left limit (switch still open),
    //    so "during" is (1, 2].
    let mut worst_margin = f64::INFINITY;
    for &b in &buses {
        let v = circuit.channel(&format!("vmag_bus{b}")).unwrap();
        let pre = v[k_on];
        let highest = v[k_on + 1..=k_off].iter().copied().fold(f64::MIN, f64::max);
        worst_margin = worst_margin.min(pre - highest);
    }
    r.check(
        "5a",
        worst_margin > 0.0,
        format!("every machine |V| below pre-fault during the fault: smallest drop {worst_margin:.4} pu"),
    );

    // b. Speed at clearing above speed at inception, for every machine.
    let mut smallest_rise = f64::INFINITY;
    for &b in &buses {
        let w = circuit.channel(&format!("omega_bus{b}")).unwrap();
        smallest_rise = smallest_rise.min(w[k_off] - w[k_on]);
    }
    r.check(
        "5b",
        smallest_rise > 0.0,
        format!("every machine speed rises over the fault: smallest ω(2 s) − ω(1 s) = {smallest_rise:.2e} pu"),
    );

    // c. Settled at the horizon.
    let k_back = circuit.index_at(T_STOP - 0.01).unwrap();
    let (mut w_dev, mut v_dev, mut dvdt) = (0.0_f64, 0.0_f64, 0.0_f64);
    for &b in &buses {
        let w = circuit.channel(&format!("omega_bus{b}")).unwrap();
        let v = circuit.channel(&format!("vmag_bus{b}")).unwrap();
        w_dev = w_dev.max((w[last] - 1.0).abs());
        v_dev = v_dev.max((v[last] - v[k_on]).abs());
        dvdt = dvdt.max(((v[last] - v[k_back]) / (t[last] - t[k_back])).abs());
    }
    r.check(
        "5c",
        w_dev < SETTLED_OMEGA && v_dev < SETTLED_VMAG && dvdt < SETTLED_DVDT,
        format!(
            "settled at {T_STOP} s: max |ω−1| {w_dev:.1e} (tol {SETTLED_OMEGA:e}), max ||V|−pre| {v_dev:.1e} \
             (tol {SETTLED_VMAG:e}), max |d|V|/dt| {dvdt:.1e} pu/s (tol {SETTLED_DVDT:e})"
        ),
    );

    // d. Circuit vs reference.
    let tol = Tolerances::new()
        .with("vmag_", VMAG_TOL)
        .with("omega_", OMEGA_TOL)
        .with("delta_", DELTA_TOL);
    let rep = compare_series(circuit, reference, &tol).unwrap();
    let worst = |p: &str| {
        rep.channels
            .iter()
            .filter(|c| c.name.starts_with(p))
            .map(|c| c.max_abs)
            .fold(0.0, f64::max)
    };
    let pass = rep.channels.iter().filter(|c| c.tolerance.is_some()).all(|c| c.pass);
    r.check(
        "5d",
        pass,
        format!(
            "circuit vs reference DAE: max dev |V| {:.1e} (tol {VMAG_TOL:e}), ω {:.1e} (tol {OMEGA_TOL:e}), \
             δ {:.1e} rad (tol {DELTA_TOL})",
            worst("vmag_"),
            worst("omega_"),
            worst("delta_")
        ),
    );

    r.check(
        "6",
        elapsed < RUN_BUDGET,
        format!(
            "{T_STOP} s at dt {DT} s in {:.2} s wall clock (budget {:?}; stretch {:?}: {})",
            elapsed.as_secs_f64(),
            RUN_BUDGET,
            RUN_STRETCH,
            if elapsed < RUN_STRETCH { "met" } else { "missed" }
        ),
    );
}

fn convergence(r: &mut Report, coarse: &CompareReport, fine: &CompareReport) {
    let mut grew = Vec::new();
    let mut ratio = f64::INFINITY;
    for c in &coarse.channels {
        let f = fine.channel(&c.name).unwrap();
        if f.max_abs > c.max_abs {
            grew.push(format!("{} {:.2e} > {:.2e}", c.name, f.max_abs, c.max_abs));
        } else if c.max_abs > 0.0 {
            ratio = ratio.min(c.max_abs / f.max_abs.max(f64::MIN_POSITIVE));
        }
    }
    r.check(
        "7",
        grew.is_empty(),
        if grew.is_empty() {
            format!(
                "halving dt shrinks the circuit-vs-reference deviation on all {} channels (smallest ratio {ratio:.2})",
                coarse.channels.len()
            )
        } else {
            format!("deviation grew at dt/2: {}", grew.join("; "))
        },
    );
}

fn determinism(r: &mut Report, case: &Case, first: &TimeSeries) {
    let second = run_scenario(case, &config(DT, T_STOP)).unwrap().series;
    let bytes = |s: &TimeSeries| {
        let mut b = Vec::new();
        write_csv_to(s, &mut b).unwrap();
        b
    };
    let (a, b) = (bytes(first), bytes(&second));
    r.check(
        "8",
        a == b,
        format!("two runs of the fault scenario give identical CSVs ({} bytes each)", a.len()),
    );
}

fn main() {
    // `cargo test -- --list` and filters are not meaningful for a single run.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut r = Report::default();
    block_analytics(&mut r);
    operators(&mut r);
    network(&mut r);
    equilibrium(&mut r);

    let case = ieee14();
    let started = Instant::now();
    let circuit = run_scenario(&case, &config(DT, T_STOP)).unwrap().series;
    let elapsed = started.elapsed();
    let reference = run_reference_dae(&case, &config(DT, T_STOP)).unwrap();
    fault_scenario(&mut r, &circuit, &reference, elapsed, &case);

    let all = Tolerances::new();
    let coarse = compare_series(&circuit, &reference, &all).unwrap();
    let half = config(DT / 2.0, T_STOP);
    let fine = compare_series(
        &run_scenario(&case, &half).unwrap().series,
        &run_reference_dae(&case, &half).unwrap(),
        &all,
    )
    .unwrap();
    convergence(&mut r, &coarse, &fine);
    determinism(&mut r, &case, &circuit);

    let unexpected: Vec<&Line> = r
        .lines
        .iter()
        .filter(|l| !l.pass && !KNOWN_FAILURES.contains(&l.id))
        .collect();
    let fixed: Vec<&Line> = r
        .lines
        .iter()
        .filter(|l| l.pass && KNOWN_FAILURES.contains(&l.id))
        .collect();
    let failed = r.lines.iter().filter(|l| !l.pass).count();
    println!(
        "{} criteria: {} pass, {failed} fail ({} known)",
        r.lines.len(),
        r.lines.len() - failed,
        failed - unexpected.len()
    );
    for l in &unexpected {
        eprintln!("unexpected failure {}: {}", l.id, l.what);
    }
    for l in &fixed {
        eprintln!("{} now passes; remove it from KNOWN_FAILURES: {}", l.id, l.what);
    }
    if !unexpected.is_empty() || !fixed.is_empty() {
        std::process::exit(1);
    }
}
