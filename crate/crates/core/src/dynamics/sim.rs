//! Time-domain simulation of the machine/motor DAE.
//!
//! Differential states are advanced with the implicit trapezoidal rule; at
//! every step the corrector is iterated jointly with the reduced network
//! solution until both converge.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::dense::{cabs, ComplexLu};
use super::machine::{self, MachineSetpoints, MachineState};
use super::motor;
use super::network::{ReducedNetwork, Reduction};
use super::uvls::{RelayMode, UvlsRelays, UvlsSettings};
use crate::error::{Error, Result};
use crate::grid::{build_ybus, BusId, LoadSpec, MachineSpec, MotorSpec, PowerFlowCase, PowerFlowSolution};

pub const DEFAULT_DT: f64 = 1.0 / 240.0;

/// Constant-power load converts to constant impedance below this voltage.
const PQ_BREAK: f64 = 0.7;
/// Constant-current load converts to constant impedance below this voltage.
const IQ_BREAK: f64 = 0.5;
const MAX_CORRECTOR_ITERS: usize = 60;
const TOL_X: f64 = 1e-7;
const TOL_V: f64 = 1e-7;
/// Refactor when a motor admittance drifts this far relative to its diagonal.
const REFACTOR_RATIO: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    ApplyFault { bus: BusId },
    ClearFault,
    Shed { bus: BusId, fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
}

impl Event {
    pub fn new(t: f64, kind: EventKind) -> Self {
        Event { t, kind }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventSource {
    External,
    Uvls,
    Simulator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub t: f64,
    pub kind: EventKind,
    pub source: EventSource,
    /// MW removed by a shed event.
    pub mw: f64,
}

#[derive(Debug, Clone)]
pub struct MachineModel {
    pub spec: MachineSpec,
    pub setpoints: MachineSetpoints,
    pub pos: usize,
}

#[derive(Debug, Clone)]
pub struct MotorModel {
    pub spec: MotorSpec,
    /// Motor rating in system per-unit.
    pub rating: f64,
    pub slip0: f64,
    /// Index of the slip in the state vector.
    pub state: usize,
}

#[derive(Debug, Clone)]
pub struct LoadModel {
    pub bus: BusId,
    pub pos: usize,
    pub initial_mw: f64,
    pub v0: f64,
    pub p_static: f64,
    pub q_static: f64,
    pub zip: [f64; 3],
    pub motor: Option<MotorModel>,
}

impl LoadModel {
    fn z_admittance(&self, rem: f64) -> Complex64 {
        Complex64::new(self.p_static, -self.q_static) * (rem * self.zip[0] / (self.v0 * self.v0))
    }

    fn motor_admittance(&self, rem: f64, slip: f64) -> Complex64 {
        match &self.motor {
            Some(m) => motor::admittance(&m.spec, slip) * (m.rating * rem),
            None => Complex64::new(0.0, 0.0),
        }
    }

    /// Current drawn by the constant-current and constant-power parts.
    fn nonlinear_current(&self, rem: f64, v: Complex64) -> Complex64 {
        let s0 = Complex64::new(self.p_static, self.q_static) * rem;
        let vm = cabs(v);
        let mut i = Complex64::new(0.0, 0.0);
        if self.zip[1] != 0.0 {
            let k = s0.conj() * (self.zip[1] / self.v0);
            i += k * v / vm.max(IQ_BREAK);
        }
        if self.zip[2] != 0.0 {
            let sp = s0 * self.zip[2];
            if vm >= PQ_BREAK {
                i += (sp / v).conj();
            } else {
                i += sp.conj() * v / (PQ_BREAK * PQ_BREAK);
            }
        }
        i
    }
}

/// Immutable per-case dynamic model, shareable across simulation instances.
#[derive(Debug)]
pub struct DynamicModel {
    pub case_id: String,
    pub base_mva: f64,
    pub bus_ids: Vec<BusId>,
    pub bus_index: HashMap<BusId, usize>,
    pub machines: Vec<MachineModel>,
    pub loads: Vec<LoadModel>,
    pub n_states: usize,
    ybus: DMatrix<Complex64>,
    network: ReducedNetwork,
    /// One lazily built reduction per faulted bus, plus the unfaulted one last.
    reductions: Vec<OnceLock<Arc<Reduction>>>,
    gen_diag: Vec<Complex64>,
}

impl DynamicModel {
    pub fn load_index(&self, bus: BusId) -> Option<usize> {
        self.loads.iter().position(|l| l.bus == bus)
    }

    fn reduction(&self, fault: Option<usize>) -> Arc<Reduction> {
        let slot = fault.unwrap_or(self.network.n_bus);
        self.reductions[slot]
            .get_or_init(|| Arc::new(self.network.reduce(&self.ybus, fault)))
            .clone()
    }

    pub fn n_retained(&self) -> usize {
        self.network.retained.len()
    }

    pub fn total_initial_mw(&self) -> f64 {
        self.loads.iter().map(|l| l.initial_mw).sum()
    }
}

#[derive(Debug, Clone)]
struct Factor {
    lu: Option<ComplexLu>,
    motor_y: Vec<Complex64>,
    diag_mag: Vec<f64>,
}

/// Complete dynamic state of one simulation instance.
#[derive(Debug, Clone)]
pub struct DynState {
    pub t: f64,
    x: Vec<f64>,
    f: Vec<f64>,
    f_prev: Option<Vec<f64>>,
    /// Retained voltages one step back, for the predictor.
    v_prev: Option<Vec<Complex64>>,
    v_ret: Vec<Complex64>,
    /// Bus voltage phasors in case bus order.
    pub v: Vec<Complex64>,
    /// Served fraction of each load's initial demand.
    pub remaining: Vec<f64>,
    pub relays: Option<UvlsRelays>,
    pub event_log: Vec<LoggedEvent>,
    pub fault: Option<BusId>,
    pub collapsed: bool,
    pub mw_shed_external: f64,
    pub mw_shed_uvls: f64,
    reduction: Arc<Reduction>,
    factor: Option<Factor>,
}

impl DynState {
    pub fn machine_state(&self, k: usize) -> MachineState {
        MachineState::from_slice(&self.x[k * machine::N_STATES..(k + 1) * machine::N_STATES])
    }

    pub fn slip(&self, model: &DynamicModel, load: usize) -> Option<f64> {
        model.loads[load].motor.as_ref().map(|m| self.x[m.state])
    }

    pub fn states(&self) -> &[f64] {
        &self.x
    }

    pub fn derivatives(&self) -> &[f64] {
        &self.f
    }

    pub fn v_mag(&self, bus_idx: usize) -> f64 {
        self.v[bus_idx].norm()
    }

    pub fn mw_shed_total(&self) -> f64 {
        self.mw_shed_external + self.mw_shed_uvls
    }

    /// Largest machine right-hand-side magnitude at the current point.
    pub fn machine_rhs_norm(&self, model: &DynamicModel) -> f64 {
        self.f[..model.machines.len() * machine::N_STATES]
            .iter()
            .fold(0.0, |a, d| a.max(d.abs()))
    }

    pub fn arm_uvls(&mut self, settings: UvlsSettings, mode: RelayMode, protected: Vec<usize>) {
        self.relays = Some(UvlsRelays::new(settings, mode, protected));
    }
}

/// Builds the dynamic model and its equilibrium state from a converged
/// power flow.
pub fn init_dynamics(case: &PowerFlowCase, sol: &PowerFlowSolution) -> Result<(Arc<DynamicModel>, DynState)> {
    if !sol.converged {
        return Err(Error::PowerFlow {
            max_mismatch: sol.max_mismatch,
        });
    }
    let n = case.buses.len();
    let bus_index = case.bus_index();
    let v_pf: Vec<Complex64> = (0..n).map(|i| sol.voltage(i)).collect();

    let mut retained = Vec::new();
    for m in case.machines.iter().filter(|m| m.in_service) {
        retained.push(bus_index[&m.bus]);
    }
    for l in &case.loads {
        retained.push(bus_index[&l.bus]);
    }
    let network = ReducedNetwork::new(n, retained);
    let pos = |bus: BusId| network.retained_pos[bus_index[&bus]].expect("retained");

    let mut x = Vec::new();
    let mut machines = Vec::new();
    for (k, m) in case.machines.iter().enumerate() {
        if !m.in_service {
            continue;
        }
        let v = v_pf[bus_index[&m.bus]];
        let s = Complex64::new(sol.gen_p[k], sol.gen_q[k]);
        let (st, sp) = machine::initialize(m, v, s).map_err(|reason| Error::MachineInit { bus: m.bus, reason })?;
        let mut buf = [0.0; machine::N_STATES];
        st.write(&mut buf);
        x.extend_from_slice(&buf);
        machines.push(MachineModel {
            spec: m.clone(),
            setpoints: sp,
            pos: pos(m.bus),
        });
    }

    let mut loads = Vec::new();
    for l in &case.loads {
        loads.push(init_load(l, v_pf[bus_index[&l.bus]].norm(), pos(l.bus), &mut x)?);
    }

    let mut gen_diag = vec![Complex64::new(0.0, 0.0); network.retained.len()];
    for m in &machines {
        gen_diag[m.pos] += machine::norton_admittance(&m.spec);
    }

    let model = DynamicModel {
        case_id: case.case_id.clone(),
        base_mva: case.system_mva_base,
        bus_ids: case.buses.iter().map(|b| b.id).collect(),
        bus_index,
        n_states: x.len(),
        machines,
        loads,
        ybus: build_ybus(case),
        reductions: (0..=n).map(|_| OnceLock::new()).collect(),
        network,
        gen_diag,
    };
    let reduction = model.reduction(None);
    let v_ret = model.network.retained.iter().map(|&b| v_pf[b]).collect();
    let mut state = DynState {
        t: 0.0,
        f: vec![0.0; x.len()],
        x,
        f_prev: None,
        v_prev: None,
        v_ret,
        v: v_pf,
        remaining: vec![1.0; model.loads.len()],
        relays: None,
        event_log: Vec::new(),
        fault: None,
        collapsed: false,
        mw_shed_external: 0.0,
        mw_shed_uvls: 0.0,
        reduction,
        factor: None,
    };
    if !resolve_network(&model, &mut state) {
        return Err(Error::Other("initial network solution failed".into()));
    }
    Ok((Arc::new(model), state))
}

fn init_load(l: &LoadSpec, v0: f64, pos: usize, x: &mut Vec<f64>) -> Result<LoadModel> {
    let mut p_static = l.p0;
    let mut q_static = l.q0;
    let motor = match &l.motor {
        Some(spec) if l.motor_fraction > 0.0 => {
            let slip0 = motor::solve_operating_slip(spec, v0).map_err(|reason| Error::MotorInit { bus: l.bus, reason })?;
            let y = motor::admittance(spec, slip0);
            // S = |V|^2 conj(y) on the motor rating
            let s_unit = y.conj() * (v0 * v0);
            let p_motor = l.motor_fraction * l.p0;
            let rating = p_motor / s_unit.re;
            p_static -= p_motor;
            q_static -= s_unit.im * rating;
            let state = x.len();
            x.push(slip0);
            Some(MotorModel {
                spec: spec.clone(),
                rating,
                slip0,
                state,
            })
        }
        _ => None,
    };
    Ok(LoadModel {
        bus: l.bus,
        pos,
        initial_mw: l.initial_mw,
        v0,
        p_static,
        q_static,
        zip: l.zip,
        motor,
    })
}

fn slip_of(model: &DynamicModel, x: &[f64], load: usize) -> f64 {
    model.loads[load].motor.as_ref().map_or(0.0, |m| x[m.state])
}

fn factorize(model: &DynamicModel, st: &DynState, x: &[f64]) -> Factor {
    let mut a = st.reduction.y.clone();
    let mut motor_y = Vec::with_capacity(model.loads.len());
    for (k, g) in model.gen_diag.iter().enumerate() {
        a[(k, k)] += g;
    }
    for (k, l) in model.loads.iter().enumerate() {
        let rem = st.remaining[k];
        let ym = l.motor_admittance(rem, slip_of(model, x, k));
        a[(l.pos, l.pos)] += l.z_admittance(rem) + ym;
        motor_y.push(ym);
    }
    let diag_mag = (0..a.nrows()).map(|k| cabs(a[(k, k)])).collect();
    Factor {
        lu: ComplexLu::new(&a),
        motor_y,
        diag_mag,
    }
}

fn ensure_factor(model: &DynamicModel, st: &mut DynState, x: &[f64]) {
    let stale = match &st.factor {
        None => true,
        Some(f) => model.loads.iter().enumerate().any(|(k, l)| {
            l.motor.is_some() && {
                let ym = l.motor_admittance(st.remaining[k], slip_of(model, x, k));
                cabs(ym - f.motor_y[k]) > REFACTOR_RATIO * f.diag_mag[l.pos]
            }
        }),
    };
    if stale {
        st.factor = Some(factorize(model, st, x));
    }
}

/// One linear network solve with injections evaluated at `v`, written to `out`.
fn network_pass(
    model: &DynamicModel,
    st: &DynState,
    x: &[f64],
    v: &[Complex64],
    out: &mut [Complex64],
    scratch: &mut [Complex64],
) -> bool {
    let factor = st.factor.as_ref().expect("factorized");
    let Some(lu) = &factor.lu else {
        return false;
    };
    out.fill(Complex64::new(0.0, 0.0));
    for (k, m) in model.machines.iter().enumerate() {
        let ms = MachineState::from_slice(&x[k * machine::N_STATES..(k + 1) * machine::N_STATES]);
        out[m.pos] += machine::injected_current(&m.spec, &ms, v[m.pos]);
    }
    for (k, l) in model.loads.iter().enumerate() {
        let rem = st.remaining[k];
        let vb = v[l.pos];
        out[l.pos] -= l.nonlinear_current(rem, vb);
        if l.motor.is_some() {
            let ym = l.motor_admittance(rem, slip_of(model, x, k));
            out[l.pos] += (factor.motor_y[k] - ym) * vb;
        }
    }
    lu.solve_in_place(out, scratch);
    out.iter().all(|c| c.re.is_finite() && c.im.is_finite())
}

/// Right-hand side at (`x`, `v`). The corrector uses unlimited rates and
/// clamps the states afterwards; stored rates are limited so that a state
/// resting on a limit does not drift into it on the next step.
fn eval_derivatives(model: &DynamicModel, x: &[f64], v: &[Complex64], out: &mut [f64], limited: bool) {
    for (k, m) in model.machines.iter().enumerate() {
        let r = k * machine::N_STATES..(k + 1) * machine::N_STATES;
        let ms = MachineState::from_slice(&x[r.clone()]);
        machine::derivatives(&m.spec, &m.setpoints, &ms, v[m.pos], &mut out[r.clone()]);
        if limited {
            machine::limit_rates(&m.spec, &x[r.clone()], &mut out[r]);
        }
    }
    for l in &model.loads {
        if let Some(mm) = &l.motor {
            let s = x[mm.state];
            out[mm.state] = if limited {
                motor::slip_derivative(&mm.spec, s, cabs(v[l.pos]))
            } else {
                motor::slip_rate(&mm.spec, s, cabs(v[l.pos]))
            };
        }
    }
}

fn clamp_states(model: &DynamicModel, x: &mut [f64]) {
    for (k, m) in model.machines.iter().enumerate() {
        machine::clamp_limits(&m.spec, &mut x[k * machine::N_STATES..(k + 1) * machine::N_STATES]);
    }
    for l in &model.loads {
        if let Some(mm) = &l.motor {
            x[mm.state] = x[mm.state].min(1.0);
        }
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (p, q)| m.max((p - q).abs()))
}

fn max_cdiff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (p, q)| m.max(cabs(p - q)))
}

fn mark_collapsed(st: &mut DynState) {
    st.collapsed = true;
    for v in st.v_ret.iter_mut().chain(st.v.iter_mut()) {
        *v = Complex64::new(0.0, 0.0);
    }
}

/// Solves the algebraic network for the current differential states.
fn resolve_network(model: &DynamicModel, st: &mut DynState) -> bool {
    if st.collapsed {
        return false;
    }
    let x = st.x.clone();
    st.factor = Some(factorize(model, st, &x));
    let mut v = st.v_ret.clone();
    let mut v_new = v.clone();
    let mut scratch = v.clone();
    for _ in 0..200 {
        if !network_pass(model, st, &x, &v, &mut v_new, &mut scratch) {
            break;
        }
        let dv = max_cdiff(&v_new, &v);
        std::mem::swap(&mut v, &mut v_new);
        if dv < TOL_V * 0.1 {
            st.v_ret = v;
            let mut f = vec![0.0; x.len()];
            eval_derivatives(model, &x, &st.v_ret, &mut f, true);
            st.f = f;
            st.f_prev = None;
            st.v_prev = None;
            expand(model, st);
            return true;
        }
    }
    mark_collapsed(st);
    false
}

fn expand(model: &DynamicModel, st: &mut DynState) {
    let red = st.reduction.clone();
    model.network.expand(&red, &st.v_ret, &mut st.v);
}

/// One trapezoidal step of length `h`.

fn step(model: &DynamicModel, st: &mut DynState, h: f64) -> bool {
    let n = st.x.len();
    let x0 = st.x.clone();
    let f0 = st.f.clone();
    let mut x: Vec<f64> = match &st.f_prev {
        Some(fp) => (0..n).map(|i| x0[i] + h * (1.5 * f0[i] - 0.5 * fp[i])).collect(),
        None => (0..n).map(|i| x0[i] + h * f0[i]).collect(),
    };
    clamp_states(model, &mut x);
    ensure_factor(model, st, &x);

    let mut v: Vec<Complex64> = match &st.v_prev {
        Some(vp) => st.v_ret.iter().zip(vp).map(|(a, b)| 2.0 * a - b).collect(),
        None => st.v_ret.clone(),
    };
    let mut v_new = v.clone();
    let mut scratch = v.clone();
    let mut f = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    for _ in 0..MAX_CORRECTOR_ITERS {
        if !network_pass(model, st, &x, &v, &mut v_new, &mut scratch) {
            return false;
        }
        eval_derivatives(model, &x, &v_new, &mut f, false);
        for i in 0..n {
            x_new[i] = x0[i] + 0.5 * h * (f0[i] + f[i]);
        }
        clamp_states(model, &mut x_new);
        let dx = max_diff(&x_new, &x);
        let dv = max_cdiff(&v_new, &v);
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut v, &mut v_new);
        if dx < TOL_X && dv < TOL_V {
            eval_derivatives(model, &x, &v, &mut f, true);
            st.x = x;
            st.v_prev = Some(std::mem::replace(&mut st.v_ret, v));
            st.f_prev = Some(f0);
            st.f = f;
            expand(model, st);
            return true;
        }
        ensure_factor(model, st, &x);
    }
    false
}

/// Removes `fraction` of the load's initial demand; returns the MW removed.
pub fn shed_load(model: &DynamicModel, st: &mut DynState, bus: BusId, fraction: f64) -> Result<f64> {
    let k = model
        .load_index(bus)
        .ok_or_else(|| Error::Other(format!("bus {bus} has no load")))?;
    Ok(shed_index(model, st, k, fraction))
}

fn shed_index(model: &DynamicModel, st: &mut DynState, k: usize, fraction: f64) -> f64 {
    let before = st.remaining[k];
    let after = (before - fraction.max(0.0)).max(0.0);
    st.remaining[k] = after;
    (before - after) * model.loads[k].initial_mw
}

fn apply_event(model: &DynamicModel, st: &mut DynState, kind: &EventKind, source: EventSource) -> Result<bool> {
    let mut mw = 0.0;
    match kind {
        EventKind::ApplyFault { bus } => {
            let idx = *model
                .bus_index
                .get(bus)
                .ok_or_else(|| Error::Other(format!("unknown fault bus {bus}")))?;
            st.fault = Some(*bus);
            st.reduction = model.reduction(Some(idx));
        }
        EventKind::ClearFault => {
            st.fault = None;
            st.reduction = model.reduction(None);
        }
        EventKind::Shed { bus, fraction } => {
            mw = shed_load(model, st, *bus, *fraction)?;
            match source {
                EventSource::Uvls => st.mw_shed_uvls += mw,
                _ => st.mw_shed_external += mw,
            }
            if mw == 0.0 {
                st.event_log.push(LoggedEvent {
                    t: st.t,
                    kind: kind.clone(),
                    source,
                    mw,
                });
                return Ok(false);
            }
        }
    }
    st.event_log.push(LoggedEvent {
        t: st.t,
        kind: kind.clone(),
        source,
        mw,
    });
    Ok(true)
}

fn uvls_scan(model: &DynamicModel, st: &mut DynState) -> bool {
    let Some(relays) = st.relays.as_mut() else {
        return false;
    };
    let v_ret = &st.v_ret;
    let loads = &model.loads;
    let commands = relays.scan(st.t, |k| cabs(v_ret[loads[k].pos]));
    let mut changed = false;
    for c in commands {
        let kind = EventKind::Shed {
            bus: model.loads[c.load].bus,
            fraction: c.fraction,
        };
        changed |= apply_event(model, st, &kind, EventSource::Uvls).unwrap_or(false);
    }
    changed
}

/// Advances `st` by `duration` seconds in steps of `dt`, applying `events`
/// at the nearest step boundary. `on_step` observes the state after every
/// step.
pub fn simulate_interval_with(
    model: &DynamicModel,
    st: &mut DynState,
    dt: f64,
    duration: f64,
    events: &[Event],
    mut on_step: impl FnMut(&DynState),
) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::Other("time step must be positive".into()));
    }
    let n_steps = (duration / dt).round();
    if (n_steps * dt - duration).abs() > 1e-9 * duration.max(1.0) || n_steps < 0.0 {
        return Err(Error::Other(format!("dt {dt} does not divide duration {duration}")));
    }
    let n_steps = n_steps as usize;
    let t0 = st.t;
    let mut pending: Vec<(usize, &Event)> = Vec::with_capacity(events.len());
    for ev in events {
        let k = ((ev.t - t0) / dt).round();
        if k < 0.0 || k as usize > n_steps {
            return Err(Error::Other(format!("event at t={} outside interval", ev.t)));
        }
        pending.push((k as usize, ev));
    }
    pending.sort_by_key(|(k, _)| *k);
    let mut next = 0;

    for k in 0..=n_steps {
        if k > 0 {
            st.t = t0 + k as f64 * dt;
            if !st.collapsed && !step(model, st, dt) {
                mark_collapsed(st);
            }
        }
        let mut dirty = false;
        while next < pending.len() && pending[next].0 == k {
            dirty |= apply_event(model, st, &pending[next].1.kind, EventSource::External)?;
            next += 1;
        }
        if dirty && !st.collapsed {
            resolve_network(model, st);
        }
        if k > 0 && !st.collapsed && uvls_scan(model, st) {
            resolve_network(model, st);
        }
        if k > 0 {
            on_step(st);
        }
    }
    st.t = t0 + duration;
    Ok(())
}

pub fn simulate_interval(model: &DynamicModel, st: &mut DynState, dt: f64, duration: f64, events: &[Event]) -> Result<()> {
    simulate_interval_with(model, st, dt, duration, events, |_| {})
}
