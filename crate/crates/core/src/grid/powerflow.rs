use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{build_ybus, BusKind, GridError, Network, YBus};

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowOptions {
    /// Start from the buses' stored magnitudes and angles instead of 1∠0.
    pub use_seed: bool,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self {
            use_seed: false,
            tolerance: 1e-10,
            max_iterations: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub ids: Vec<u32>,
    pub voltages: Vec<Complex64>,
    /// Net injection `V·(YV)*` at every bus.
    pub injections: Vec<Complex64>,
    pub iterations: usize,
    /// Largest |ΔP|, |ΔQ| over the specified quantities at exit.
    pub max_mismatch: f64,
}

impl PowerFlowSolution {
    pub fn index(&self, id: u32) -> Option<usize> {
        self.ids.iter().position(|&b| b == id)
    }

    pub fn voltage(&self, id: u32) -> Option<Complex64> {
        self.index(id).map(|k| self.voltages[k])
    }

    /// Generation at a bus: net injection plus local demand.
    pub fn generation(&self, network: &Network, id: u32) -> Option<Complex64> {
        self.index(id).map(|k| self.injections[k] + network.bus_load(id))
    }
}

/// Full Newton on current-injection residuals in real/imaginary form.
///
/// Unknowns are `(Vr, Vi)` at every non-slack bus plus the reactive injection
/// at every PV bus; PV buses add the equation `Vr² + Vi² = V_set²`.
pub fn solve_power_flow(network: &Network, options: &PowerFlowOptions) -> Result<PowerFlowSolution, GridError> {
    network.validate()?;
    let ybus = build_ybus(network)?;
    let n = network.buses.len();
    let mut v: Vec<Complex64> = network
        .buses
        .iter()
        .map(|b| {
            let mag = match b.kind {
                BusKind::Slack | BusKind::Pv => b.v_setpoint,
                BusKind::Pq if options.use_seed => b.v_setpoint,
                BusKind::Pq => 1.0,
            };
            let ang = if b.kind == BusKind::Slack || options.use_seed {
                b.angle_deg.to_radians()
            } else {
                0.0
            };
            Complex64::from_polar(mag, ang)
        })
        .collect();
    let spec: Vec<Complex64> = network
        .buses
        .iter()
        .map(|b| Complex64::new(b.p_gen, b.q_gen) - network.bus_load(b.id))
        .collect();
    let mut q: Vec<f64> = spec.iter().map(|s| s.im).collect();

    // Unknown layout.
    let mut vpos = vec![usize::MAX; n];
    let mut qpos = vec![usize::MAX; n];
    let mut m = 0;
    for (k, b) in network.buses.iter().enumerate() {
        if b.kind != BusKind::Slack {
            vpos[k] = m;
            m += 2;
        }
    }
    for (k, b) in network.buses.iter().enumerate() {
        if b.kind == BusKind::Pv {
            qpos[k] = m;
            m += 1;
        }
    }

    let mismatch = |v: &[Complex64], q: &[f64]| -> (f64, usize) {
        let s = injections(&ybus, v);
        let mut worst = (0.0, 0);
        for (k, b) in network.buses.iter().enumerate() {
            let e = match b.kind {
                BusKind::Slack => 0.0,
                BusKind::Pv => (s[k].re - spec[k].re)
                    .abs()
                    .max((s[k].im - q[k]).abs())
                    .max((v[k].norm_sqr() - b.v_setpoint * b.v_setpoint).abs()),
                BusKind::Pq => (s[k] - spec[k]).re.abs().max((s[k] - spec[k]).im.abs()),
            };
            if e > worst.0 {
                worst = (e, k);
            }
        }
        worst
    };

    let y = ybus.matrix();
    for iteration in 0..=options.max_iterations {
        let (err, worst) = mismatch(&v, &q);
        if err < options.tolerance {
            let injections = injections(&ybus, &v);
            return Ok(PowerFlowSolution {
                ids: ybus.ids().to_vec(),
                voltages: v,
                injections,
                iterations: iteration,
                max_mismatch: err,
            });
        }
        if iteration == options.max_iterations {
            return Err(GridError::Divergence {
                iterations: iteration,
                mismatch: err,
                bus: network.buses[worst].id,
            });
        }
        let yv = ybus.currents(&v);
        let mut jac = DMatrix::<f64>::zeros(m, m);
        let mut f = DVector::<f64>::zeros(m);
        for (k, b) in network.buses.iter().enumerate() {
            if b.kind == BusKind::Slack {
                continue;
            }
            let (p, qk) = (spec[k].re, q[k]);
            let (vr, vi) = (v[k].re, v[k].im);
            let mag2 = vr * vr + vi * vi;
            let ir = (p * vr + qk * vi) / mag2;
            let ii = (p * vi - qk * vr) / mag2;
            let row = vpos[k];
            f[row] = ir - yv[k].re;
            f[row + 1] = ii - yv[k].im;
            let m2 = mag2 * mag2;
            jac[(row, row)] += (p * mag2 - (p * vr + qk * vi) * 2.0 * vr) / m2;
            jac[(row, row + 1)] += (qk * mag2 - (p * vr + qk * vi) * 2.0 * vi) / m2;
            jac[(row + 1, row)] += (-qk * mag2 - (p * vi - qk * vr) * 2.0 * vr) / m2;
            jac[(row + 1, row + 1)] += (p * mag2 - (p * vi - qk * vr) * 2.0 * vi) / m2;
            if b.kind == BusKind::Pv {
                let c = qpos[k];
                jac[(row, c)] = vi / mag2;
                jac[(row + 1, c)] = -vr / mag2;
                f[c] = mag2 - b.v_setpoint * b.v_setpoint;
                jac[(c, row)] = 2.0 * vr;
                jac[(c, row + 1)] = 2.0 * vi;
            }
            for j in 0..n {
                if vpos[j] == usize::MAX {
                    continue;
                }
                let (g, bb) = (y[(k, j)].re, y[(k, j)].im);
                let col = vpos[j];
                jac[(row, col)] -= g;
                jac[(row, col + 1)] += bb;
                jac[(row + 1, col)] -= bb;
                jac[(row + 1, col + 1)] -= g;
            }
        }
        let delta = jac.lu().solve(&(-f)).ok_or(GridError::SingularJacobian(iteration))?;
        for k in 0..n {
            if vpos[k] != usize::MAX {
                v[k] += Complex64::new(delta[vpos[k]], delta[vpos[k] + 1]);
            }
            if qpos[k] != usize::MAX {
                q[k] += delta[qpos[k]];
            }
        }
    }
    unreachable!("loop returns on its last iteration")
}

fn injections(ybus: &YBus, v: &[Complex64]) -> Vec<Complex64> {
    ybus.currents(v).iter().zip(v).map(|(i, v)| v * i.conj()).collect()
}
