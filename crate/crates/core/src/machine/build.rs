use super::equations::{saturation_term, to_machine, to_network, Genrou, STATE_NAMES};
use super::{
    ExciterInit, ExciterParams, GovernorF, GovernorInit, GovernorParams, MachineError, MachineInit, MachineParams,
};
use crate::blocks::{
    make_function, make_high_pass, make_integrator, make_lead_lag, make_limited_lag, make_limiter, make_low_pass,
    make_operator, Operator,
};
use crate::grid::BusNodes;
use crate::netlist::{Device, DeviceId, Expr, Netlist, NodeId};

/// Nodes of a compiled machine.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineBlock {
    pub name: String,
    /// Integrator outputs in `STATE_NAMES` order.
    pub states: [NodeId; 6],
    pub ed2: NodeId,
    pub eq2: NodeId,
    pub i_re: NodeId,
    pub i_im: NodeId,
    pub id: NodeId,
    pub iq: NodeId,
    pub te: NodeId,
}

impl MachineBlock {
    pub fn delta(&self) -> NodeId {
        self.states[0]
    }

    pub fn omega(&self) -> NodeId {
        self.states[1]
    }
}

/// Norton equivalent at the terminal: two dependent sources driving the
/// network-frame current `(E'' − V)/(R_s + jX'')` and two current sources
/// injecting it into the bus. Returns the current nodes.
pub fn norton_injection(
    nl: &mut Netlist,
    name: &str,
    model: &Genrou,
    ed2: &Expr,
    eq2: &Expr,
    delta: &Expr,
    bus: BusNodes,
) -> Result<(NodeId, NodeId, Vec<DeviceId>), MachineError> {
    let (sn, cs) = (delta.clone().sin(), delta.clone().cos());
    let (er, ei) = to_network(ed2.clone(), eq2.clone(), sn, cs);
    let (ir, ii) = model.norton_current(er, ei, bus.vr(), bus.vi());
    let ir = make_function(nl, &format!("{name}.ir"), &ir)?;
    let ii = make_function(nl, &format!("{name}.ii"), &ii)?;
    let mut devices = vec![ir.devices[0], ii.devices[0]];
    devices.push(nl.add_device(Device::bcurrent(&format!("{name}.inj_r"), NodeId::GROUND, bus.re, ir.out()))?);
    devices.push(nl.add_device(Device::bcurrent(&format!("{name}.inj_i"), NodeId::GROUND, bus.im, ii.out()))?);
    Ok((ir.output, ii.output, devices))
}

/// Six integrators for the machine states, the subtransient EMF and stator
/// algebra as dependent sources, and the Norton injection at `bus`.
/// `omega_node`, when given, is an already allocated node that becomes the
/// speed state, so controllers built earlier can read it.
#[allow(clippy::too_many_arguments)]
pub fn build_machine_subcircuit(
    nl: &mut Netlist,
    name: &str,
    params: &MachineParams,
    init: &MachineInit,
    bus: BusNodes,
    efd: &Expr,
    pm: &Expr,
    omega_node: Option<NodeId>,
    omega_base: f64,
) -> Result<MachineBlock, MachineError> {
    params.validate()?;
    let model = Genrou::new(params);
    let x0 = init.state.to_array();
    let mut states = [NodeId::GROUND; 6];
    for (k, s) in states.iter_mut().enumerate() {
        *s = match (k, omega_node) {
            (1, Some(n)) => n,
            _ => nl.new_node(None),
        };
    }
    let v = |k: usize| Expr::v(states[k]);

    let (ed2, eq2) = model.subtransient_emf(v(2), v(3), v(4), v(5));
    let ed2 = make_function(nl, &format!("{name}.ed2"), &ed2)?.output;
    let eq2 = make_function(nl, &format!("{name}.eq2"), &eq2)?.output;
    let (i_re, i_im, _) = norton_injection(nl, name, &model, &Expr::v(ed2), &Expr::v(eq2), &v(0), bus)?;

    let (sn, cs) = (v(0).sin(), v(0).cos());
    let (id, iq) = to_machine(Expr::v(i_re), Expr::v(i_im), sn, cs);
    let id = make_function(nl, &format!("{name}.id"), &id)?.output;
    let iq = make_function(nl, &format!("{name}.iq"), &iq)?.output;
    let te = model.torque(Expr::v(ed2), Expr::v(eq2), Expr::v(id), Expr::v(iq));
    let te = make_function(nl, &format!("{name}.te"), &te)?.output;

    let rates = model.rates(
        [v(0), v(1), v(2), v(3), v(4), v(5)],
        Expr::v(ed2),
        Expr::v(eq2),
        Expr::v(id),
        Expr::v(iq),
        Expr::v(te),
        efd.clone(),
        pm.clone(),
        omega_base,
    );
    for (k, (integrand, tau)) in rates.into_iter().enumerate() {
        make_integrator(nl, &format!("{name}.{}", STATE_NAMES[k]), tau, &integrand, x0[k], Some(states[k]))?;
    }

    let te0 = init.pm;
    for (node, value) in [
        (ed2, init.ed2),
        (eq2, init.eq2),
        (i_re, init.current.re),
        (i_im, init.current.im),
        (id, init.id),
        (iq, init.iq),
        (te, te0),
    ] {
        nl.set_nodeset(node, value);
    }
    Ok(MachineBlock {
        name: name.to_string(),
        states,
        ed2,
        eq2,
        i_re,
        i_im,
        id,
        iq,
        te,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExciterBlock {
    pub vt: NodeId,
    pub vm: NodeId,
    pub vf: NodeId,
    pub error: NodeId,
    pub vr: NodeId,
    pub efd: NodeId,
}

/// IEEE type 1: sensing lag, summing junction, limited amplifier, exciter
/// integrator with `K_E` and saturation feedback, and rate feedback.
pub fn build_exciter_subcircuit(
    nl: &mut Netlist,
    name: &str,
    params: &ExciterParams,
    init: &ExciterInit,
    bus: BusNodes,
) -> Result<ExciterBlock, MachineError> {
    params.validate()?;
    let vt = (bus.vr() * bus.vr() + bus.vi() * bus.vi()).sqrt();
    let vt = make_function(nl, &format!("{name}.vt"), &vt)?.output;
    nl.set_nodeset(vt, init.vt);
    let vm = if params.tr > 0.0 {
        make_low_pass(nl, &format!("{name}.sense"), &Expr::v(vt), params.tr, 1.0)?.output
    } else {
        vt
    };
    let efd = nl.new_node(None);
    let vf = make_high_pass(nl, &format!("{name}.rate"), &Expr::v(efd), params.tf, params.kf / params.tf)?.output;
    let error = make_operator(
        nl,
        &format!("{name}.sum"),
        &Operator::Adder(vec![1.0, -1.0, -1.0]),
        &[Expr::constant(init.v_ref), Expr::v(vm), Expr::v(vf)],
    )?
    .output;
    let vr = make_limited_lag(
        nl,
        &format!("{name}.amp"),
        &Expr::v(error),
        params.ta,
        params.ka,
        params.vr_min,
        params.vr_max,
        params.limiter,
        init.vr,
    )?
    .output;
    let mut integrand = Expr::v(vr) - Expr::v(efd) * params.ke;
    if params.saturation.is_some_and(|s| s.b != 0.0) {
        let se = saturation_term(params.saturation.as_ref(), Expr::v(efd));
        let se = make_function(nl, &format!("{name}.se"), &se)?.output;
        integrand = integrand - Expr::v(se);
    }
    make_integrator(nl, &format!("{name}.field"), params.te, &integrand, init.efd, Some(efd))?;
    Ok(ExciterBlock {
        vt,
        vm,
        vf,
        error,
        vr,
        efd,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GovernorBlock {
    pub dw: NodeId,
    pub pgv: NodeId,
    pub pm: NodeId,
}

/// BPA GG: speed error `Δω = ω_s − ω` (ω_s = 1), lead-lag with gain `K`,
/// reference adder, `[P_min, P_max]` limiter, two lags and the `F`/`T5`
/// stage.
pub fn build_governor_subcircuit(
    nl: &mut Netlist,
    name: &str,
    params: &GovernorParams,
    init: &GovernorInit,
    omega: &Expr,
) -> Result<GovernorBlock, MachineError> {
    params.validate()?;
    let dw = make_operator(
        nl,
        &format!("{name}.dw"),
        &Operator::Adder(vec![1.0, -1.0]),
        &[Expr::constant(1.0), omega.clone()],
    )?
    .output;
    let ll1 = make_lead_lag(nl, &format!("{name}.ll1"), &Expr::v(dw), params.t2, params.t1)?.output;
    let raw = make_operator(
        nl,
        &format!("{name}.ref"),
        &Operator::Adder(vec![1.0, params.k]),
        &[Expr::constant(init.p_ref), Expr::v(ll1)],
    )?
    .output;
    let pgv = make_limiter(nl, &format!("{name}.lim"), &Expr::v(raw), params.p_min, params.p_max)?.output;
    let lp3 = make_low_pass(nl, &format!("{name}.lp3"), &Expr::v(pgv), params.t3, 1.0)?.output;
    let lp4 = make_low_pass(nl, &format!("{name}.lp4"), &Expr::v(lp3), params.t4, 1.0)?.output;
    let pm = match params.f_mode {
        GovernorF::ReheatLead => {
            make_lead_lag(nl, &format!("{name}.ll2"), &Expr::v(lp4), params.f * params.t5, params.t5)?.output
        }
        GovernorF::FilteredGain => {
            let lag = make_low_pass(nl, &format!("{name}.lp5"), &Expr::v(lp4), params.t5, 1.0)?.output;
            make_operator(
                nl,
                &format!("{name}.out"),
                &Operator::Adder(vec![params.f, 1.0]),
                &[Expr::v(lag), Expr::constant((1.0 - params.f) * init.p_ref)],
            )?
            .output
        }
    };
    Ok(GovernorBlock { dw, pgv, pm })
}
