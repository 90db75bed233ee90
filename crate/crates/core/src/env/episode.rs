use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use super::reward::{compute_reward, RewardBreakdown, Termination};
use super::{EnvConfig, EnvSpec, Scenario};
use crate::dynamics::{init_dynamics, simulate_interval, simulate_interval_with, DynState, DynamicModel, Event, EventKind, RelayMode};
use crate::error::{Error, Result};
use crate::grid::{solve_power_flow, BusId, PowerFlowCase, PowerFlowSolution, DEFAULT_MAX_ITER, DEFAULT_TOL};

/// A case with its solved operating point and equilibrium dynamic state.
#[derive(Debug)]
pub struct PreparedCase {
    pub case: PowerFlowCase,
    pub solution: PowerFlowSolution,
    pub model: Arc<DynamicModel>,
    pub initial: DynState,
    /// Load indices carrying UVLS relays.
    pub protected: Vec<usize>,
}

#[derive(Debug)]
struct CaseSlot {
    case: PowerFlowCase,
    prepared: OnceLock<std::result::Result<Arc<PreparedCase>, String>>,
    /// State at fault inception, per relay configuration.
    pre_fault: [OnceLock<Arc<DynState>>; 3],
}

type ClearKey = (String, BusId, usize, usize);

/// Read-only case collection shared by all environment instances.
#[derive(Debug)]
pub struct CaseLibrary {
    cfg: EnvConfig,
    protected_buses: Vec<BusId>,
    slots: BTreeMap<String, CaseSlot>,
    cleared: Mutex<HashMap<ClearKey, Arc<DynState>>>,
}

fn relay_slot(relay: Option<RelayMode>) -> usize {
    match relay {
        None => 0,
        Some(RelayMode::Primary) => 1,
        Some(RelayMode::Backup) => 2,
    }
}

impl CaseLibrary {
    /// `protected_buses` carry UVLS relays in every case.
    pub fn new(cases: Vec<PowerFlowCase>, cfg: EnvConfig, protected_buses: Vec<BusId>) -> Result<Self> {
        cfg.validate()?;
        let mut slots = BTreeMap::new();
        for case in cases {
            let id = case.case_id.clone();
            let slot = CaseSlot {
                case,
                prepared: OnceLock::new(),
                pre_fault: Default::default(),
            };
            if slots.insert(id.clone(), slot).is_some() {
                return Err(Error::Dataset(format!("duplicate case id {id}")));
            }
        }
        Ok(CaseLibrary {
            cfg,
            protected_buses,
            slots,
            cleared: Mutex::new(HashMap::new()),
        })
    }

    /// Relays on the controllable buses of `base`.
    pub fn from_base(base: &PowerFlowCase, cases: Vec<PowerFlowCase>, cfg: EnvConfig) -> Result<Self> {
        let protected = base.controllable_load_buses(cfg.motor_mw_threshold);
        Self::new(cases, cfg, protected)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn case_ids(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn case(&self, case_id: &str) -> Option<&PowerFlowCase> {
        self.slots.get(case_id).map(|s| &s.case)
    }

    fn slot(&self, case_id: &str) -> Result<&CaseSlot> {
        self.slots
            .get(case_id)
            .ok_or_else(|| Error::Dataset(format!("unknown case id {case_id}")))
    }

    pub fn prepared(&self, case_id: &str) -> Result<Arc<PreparedCase>> {
        let slot = self.slot(case_id)?;
        slot.prepared
            .get_or_init(|| self.prepare(&slot.case).map(Arc::new).map_err(|e| e.to_string()))
            .clone()
            .map_err(|reason| Error::Scenario {
                scenario: case_id.to_string(),
                reason,
            })
    }

    fn prepare(&self, case: &PowerFlowCase) -> Result<PreparedCase> {
        let solution = solve_power_flow(case, DEFAULT_TOL, DEFAULT_MAX_ITER);
        if !solution.converged {
            return Err(Error::PowerFlow {
                max_mismatch: solution.max_mismatch,
            });
        }
        let (model, initial) = init_dynamics(case, &solution)?;
        let protected = self
            .protected_buses
            .iter()
            .filter_map(|b| model.load_index(*b))
            .collect();
        Ok(PreparedCase {
            case: case.clone(),
            solution,
            model,
            initial,
            protected,
        })
    }

    fn fresh_state(&self, prep: &PreparedCase, relay: Option<RelayMode>) -> DynState {
        let mut st = prep.initial.clone();
        if let Some(mode) = relay {
            st.arm_uvls(self.cfg.uvls.clone(), mode, prep.protected.clone());
        }
        st
    }

    fn pre_fault_state(&self, prep: &PreparedCase, relay: Option<RelayMode>) -> Result<Arc<DynState>> {
        let slot = self.slot(&prep.case.case_id)?;
        let cell = &slot.pre_fault[relay_slot(relay)];
        if let Some(s) = cell.get() {
            return Ok(s.clone());
        }
        let mut st = self.fresh_state(prep, relay);
        simulate_interval(&prep.model, &mut st, self.cfg.dt_sim, self.cfg.fault_start, &[])?;
        Ok(cell.get_or_init(|| Arc::new(st)).clone())
    }

    fn timeline(&self, scenario: &Scenario) -> Timeline {
        let dt = self.cfg.dt_sim;
        let spc = self.cfg.steps_per_control();
        let n_fault = (self.cfg.fault_start / dt).round() as usize;
        let n_clear = n_fault + (scenario.fault_duration / dt).round().max(1.0) as usize;
        Timeline {
            n_fault,
            n_clear,
            n_first: n_clear.div_ceil(spc) * spc,
            n_end: (self.cfg.episode_len / dt).round() as usize,
            spc,
        }
    }

    fn fault_events(&self, scenario: &Scenario, tl: &Timeline) -> Vec<Event> {
        let dt = self.cfg.dt_sim;
        vec![
            Event::new(tl.n_fault as f64 * dt, EventKind::ApplyFault { bus: scenario.fault_bus }),
            Event::new(tl.n_clear as f64 * dt, EventKind::ClearFault),
        ]
    }

    /// State at the first control instant after clearing.
    pub fn cleared_state(&self, scenario: &Scenario, relay: Option<RelayMode>, cache: bool) -> Result<(Arc<PreparedCase>, DynState)> {
        let prep = self.prepared(&scenario.case_id)?;
        if !prep.model.bus_index.contains_key(&scenario.fault_bus) {
            return Err(Error::Scenario {
                scenario: scenario.scenario_id.clone(),
                reason: format!("unknown fault bus {}", scenario.fault_bus),
            });
        }
        let tl = self.timeline(scenario);
        let key = (scenario.case_id.clone(), scenario.fault_bus, tl.n_clear, relay_slot(relay));
        if cache {
            if let Some(s) = self.cleared.lock().expect("cache lock").get(&key) {
                return Ok((prep, (**s).clone()));
            }
        }
        let mut st = (*self.pre_fault_state(&prep, relay)?).clone();
        let dt = self.cfg.dt_sim;
        let events = self.fault_events(scenario, &tl);
        simulate_interval(&prep.model, &mut st, dt, (tl.n_first - tl.n_fault) as f64 * dt, &events)?;
        if cache {
            self.cleared.lock().expect("cache lock").insert(key, Arc::new(st.clone()));
        }
        Ok((prep, st))
    }

    pub fn clear_cache(&self) {
        self.cleared.lock().expect("cache lock").clear();
    }
}

#[derive(Debug, Clone, Copy)]
struct Timeline {
    n_fault: usize,
    n_clear: usize,
    n_first: usize,
    n_end: usize,
    spc: usize,
}

/// Diagnostics reported with every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub t: f64,
    pub applied_action: Vec<f64>,
    pub mw_shed_policy: f64,
    pub mw_shed_uvls: f64,
    pub invalid_count: usize,
    pub min_monitored_v: f64,
    pub collapsed: bool,
}

/// Outcome of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub scenario_id: String,
    pub total_reward: f64,
    pub breakdown: RewardBreakdown,
    pub mw_shed_policy: f64,
    pub mw_shed_uvls: f64,
    pub min_terminal_voltage: f64,
    pub steps: usize,
    /// Control steps in which the policy shed anything.
    pub shed_commands: usize,
    pub failed: bool,
    pub error: Option<String>,
}

impl TaskResult {
    /// Placeholder for a scenario that could not be simulated.
    pub fn errored(scenario_id: &str, r_fail: f64, err: &Error) -> Self {
        TaskResult {
            scenario_id: scenario_id.to_string(),
            total_reward: -r_fail,
            breakdown: RewardBreakdown {
                terminal_penalty: -r_fail,
                ..Default::default()
            },
            mw_shed_policy: 0.0,
            mw_shed_uvls: 0.0,
            min_terminal_voltage: 0.0,
            steps: 0,
            shed_commands: 0,
            failed: true,
            error: Some(err.to_string()),
        }
    }

    pub fn mw_shed_total(&self) -> f64 {
        self.mw_shed_policy + self.mw_shed_uvls
    }
}

/// Per-control-instant record for trace export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub voltages: Vec<f64>,
    pub cumulative_mw_shed: f64,
}

#[derive(Debug)]
struct Episode {
    case: Arc<PreparedCase>,
    state: DynState,
    tl: Timeline,
    n_now: usize,
    ctrl_loads: Vec<usize>,
    mon_idx: Vec<usize>,
    total_mw: f64,
    shed_accounted: f64,
    obs: Vec<f64>,
    done: bool,
}

impl Episode {
    fn voltages(&self) -> Vec<f64> {
        self.mon_idx.iter().map(|&i| self.state.v_mag(i)).collect()
    }

    fn observation(&self) -> Vec<f64> {
        let mut obs = self.voltages();
        obs.extend(self.ctrl_loads.iter().map(|&k| self.state.remaining[k]));
        obs
    }

    fn shed_at_controllable(&self) -> f64 {
        let loads = &self.case.model.loads;
        self.ctrl_loads
            .iter()
            .map(|&k| loads[k].initial_mw * (1.0 - self.state.remaining[k]))
            .sum()
    }
}

/// Gym-style environment instance; one per rollout worker.
#[derive(Debug)]
pub struct GridEnv {
    lib: Arc<CaseLibrary>,
    spec: Arc<EnvSpec>,
    relay: Option<RelayMode>,
    ep: Option<Episode>,
}

impl GridEnv {
    /// `relay` selects the UVLS configuration active during episodes:
    /// backup for hybrid control, primary for the rule-based baseline,
    /// none for uncontrolled screening.
    pub fn new(lib: Arc<CaseLibrary>, spec: Arc<EnvSpec>, relay: Option<RelayMode>) -> Self {
        GridEnv {
            lib,
            spec,
            relay,
            ep: None,
        }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn library(&self) -> &Arc<CaseLibrary> {
        &self.lib
    }

    pub fn state(&self) -> Option<&DynState> {
        self.ep.as_ref().map(|e| &e.state)
    }

    fn begin(&self, scenario: &Scenario, prep: Arc<PreparedCase>, state: DynState) -> Result<Episode> {
        let tl = self.lib.timeline(scenario);
        let model = &prep.model;
        let mut ctrl_loads = Vec::with_capacity(self.spec.act_dim);
        for b in &self.spec.controllable_buses {
            ctrl_loads.push(model.load_index(*b).ok_or_else(|| Error::Scenario {
                scenario: scenario.scenario_id.clone(),
                reason: format!("controllable bus {b} has no load in case {}", scenario.case_id),
            })?);
        }
        let mut mon_idx = Vec::with_capacity(self.spec.monitored_buses.len());
        for b in &self.spec.monitored_buses {
            mon_idx.push(*model.bus_index.get(b).ok_or_else(|| Error::Scenario {
                scenario: scenario.scenario_id.clone(),
                reason: format!("monitored bus {b} missing from case {}", scenario.case_id),
            })?);
        }
        let total_mw = ctrl_loads.iter().map(|&k| model.loads[k].initial_mw).sum();
        let mut ep = Episode {
            case: prep.clone(),
            state,
            tl,
            n_now: tl.n_first,
            ctrl_loads,
            mon_idx,
            total_mw,
            shed_accounted: 0.0,
            obs: Vec::new(),
            done: false,
        };
        ep.obs = ep.observation();
        Ok(ep)
    }

    /// Starts an episode; returns the first observation after clearing.
    pub fn reset(&mut self, scenario: &Scenario) -> Result<Vec<f64>> {
        scenario.validate()?;
        self.reset_unchecked(scenario)
    }

    /// `reset` without the fault-duration range check; stability screening
    /// probes durations outside the sampled range.
    pub fn reset_unchecked(&mut self, scenario: &Scenario) -> Result<Vec<f64>> {
        self.ep = None;
        let (prep, state) = self.lib.cleared_state(scenario, self.relay, true)?;
        let ep = self.begin(scenario, prep, state)?;
        let obs = ep.obs.clone();
        self.ep = Some(ep);
        Ok(obs)
    }

    /// Like `reset`, but simulates from t = 0 and records every control
    /// instant up to the first observation.
    pub fn reset_traced(&mut self, scenario: &Scenario, rows: &mut Vec<TraceRow>) -> Result<Vec<f64>> {
        self.ep = None;
        scenario.validate()?;
        let prep = self.lib.prepared(&scenario.case_id)?;
        let state = self.lib.fresh_state(&prep, self.relay);
        let mut ep = self.begin(scenario, prep.clone(), state)?;
        let tl = ep.tl;
        let cfg = self.lib.config();
        let dt = cfg.dt_sim;
        let mon_idx = ep.mon_idx.clone();
        let row = |st: &DynState, t: f64| TraceRow {
            t,
            voltages: mon_idx.iter().map(|&i| st.v_mag(i)).collect(),
            cumulative_mw_shed: st.mw_shed_total(),
        };
        rows.push(row(&ep.state, 0.0));
        let mut n = 0;
        let events = self.lib.fault_events(scenario, &tl);
        simulate_interval_with(&prep.model, &mut ep.state, dt, tl.n_first as f64 * dt, &events, |st| {
            n += 1;
            if n % tl.spc == 0 {
                rows.push(row(st, (n as f64) * dt));
            }
        })?;
        ep.obs = ep.observation();
        let obs = ep.obs.clone();
        self.ep = Some(ep);
        Ok(obs)
    }

    /// Applies one control action for `control_dt`.
    pub fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, RewardBreakdown, bool, StepInfo)> {
        let ep = self.ep.as_mut().ok_or(Error::NotReset)?;
        if ep.done {
            return Err(Error::EpisodeDone);
        }
        let cfg = self.lib.config();
        let dt = cfg.dt_sim;
        let (applied, invalid) = self.spec.mask_action(&ep.obs, action)?;
        let t_now = ep.n_now as f64 * dt;
        let events: Vec<Event> = applied
            .iter()
            .zip(&self.spec.controllable_buses)
            .filter(|(a, _)| **a > 0.0)
            .map(|(a, b)| Event::new(t_now, EventKind::Shed { bus: *b, fraction: *a }))
            .collect();
        let policy_before = ep.state.mw_shed_external;
        simulate_interval(&ep.case.model, &mut ep.state, dt, (ep.tl.spc as f64) * dt, &events)?;
        ep.n_now += ep.tl.spc;

        let mw_policy = ep.state.mw_shed_external - policy_before;
        let shed_now = ep.shed_at_controllable();
        let shed_step = shed_now - ep.shed_accounted;
        ep.shed_accounted = shed_now;
        let voltages = ep.voltages();
        let collapsed = ep.state.collapsed;
        ep.done = collapsed || ep.n_now >= ep.tl.n_end;
        let termination = if !ep.done {
            Termination::Running
        } else if collapsed || voltages.iter().any(|v| *v < cfg.envelope.final_v) {
            Termination::Failed
        } else {
            Termination::Healthy
        };
        let tau = (ep.n_now - ep.tl.n_clear) as f64 * dt;
        let mut reward = compute_reward(
            &cfg.reward,
            &cfg.envelope,
            &voltages,
            tau,
            shed_step,
            ep.total_mw,
            invalid,
            termination,
        );
        if collapsed {
            // a collapsed system stays at zero voltage for the rest of the episode
            let zeros = vec![0.0; voltages.len()];
            let mut n = ep.n_now + ep.tl.spc;
            while n <= ep.tl.n_end {
                let tau = (n - ep.tl.n_clear) as f64 * dt;
                reward.voltage_penalty -= cfg.reward.c1 * cfg.envelope.shortfall(tau, &zeros);
                n += ep.tl.spc;
            }
        }
        ep.obs = ep.observation();
        let info = StepInfo {
            t: ep.n_now as f64 * dt,
            applied_action: applied,
            mw_shed_policy: mw_policy,
            mw_shed_uvls: (shed_step - mw_policy).max(0.0),
            invalid_count: invalid,
            min_monitored_v: voltages.iter().cloned().fold(f64::INFINITY, f64::min),
            collapsed,
        };
        Ok((ep.obs.clone(), reward, ep.done, info))
    }

    /// Runs a full episode under `policy`, passing every observation the
    /// policy acts on to `on_obs`.
    pub fn rollout_observed(
        &mut self,
        scenario: &Scenario,
        mut policy: impl FnMut(&[f64]) -> Vec<f64>,
        mut on_obs: impl FnMut(&[f64]),
    ) -> Result<TaskResult> {
        let obs = self.reset(scenario)?;
        self.run_episode(scenario, obs, &mut policy, &mut on_obs, None)
    }

    /// Episode with no policy action; accepts any fault duration.
    pub fn zero_action_rollout(&mut self, scenario: &Scenario) -> Result<TaskResult> {
        let obs = self.reset_unchecked(scenario)?;
        let act_dim = self.spec.act_dim;
        self.run_episode(scenario, obs, &mut |_| vec![0.0; act_dim], &mut |_| {}, None)
    }

    /// Zero-action episode flagging each monitored bus that falls below the
    /// envelope at any control instant after clearing or ends below the
    /// final level. A collapse flags every bus.
    pub fn envelope_violations(&mut self, scenario: &Scenario) -> Result<Vec<bool>> {
        self.reset_unchecked(scenario)?;
        let lib = self.lib.clone();
        let cfg = lib.config();
        let n_mon = self.spec.monitored_buses.len();
        let act = vec![0.0; self.spec.act_dim];
        let mut flags = vec![false; n_mon];
        loop {
            let (obs, _, done, info) = self.step(&act)?;
            let ep = self.ep.as_ref().expect("episode active");
            let tau = (ep.n_now - ep.tl.n_clear) as f64 * cfg.dt_sim;
            let floor = if done { cfg.envelope.final_v.max(cfg.envelope.v_min(tau)) } else { cfg.envelope.v_min(tau) };
            for (f, v) in flags.iter_mut().zip(&obs[..n_mon]) {
                *f |= *v < floor || info.collapsed;
            }
            if done {
                return Ok(flags);
            }
        }
    }

    pub fn rollout(&mut self, scenario: &Scenario, policy: impl FnMut(&[f64]) -> Vec<f64>) -> Result<TaskResult> {
        self.rollout_observed(scenario, policy, |_| {})
    }

    /// Full episode with a per-control-instant trace from t = 0.
    pub fn rollout_traced(
        &mut self,
        scenario: &Scenario,
        mut policy: impl FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<(TaskResult, Vec<TraceRow>)> {
        let mut rows = Vec::new();
        let obs = self.reset_traced(scenario, &mut rows)?;
        let res = self.run_episode(scenario, obs, &mut policy, &mut |_| {}, Some(&mut rows))?;
        Ok((res, rows))
    }

    fn run_episode(
        &mut self,
        scenario: &Scenario,
        mut obs: Vec<f64>,
        policy: &mut dyn FnMut(&[f64]) -> Vec<f64>,
        on_obs: &mut dyn FnMut(&[f64]),
        mut rows: Option<&mut Vec<TraceRow>>,
    ) -> Result<TaskResult> {
        let mut total = RewardBreakdown::default();
        let (mut mw_policy, mut mw_uvls) = (0.0, 0.0);
        let (mut steps, mut shed_commands) = (0, 0);
        let failed;
        loop {
            on_obs(&obs);
            let action = policy(&obs);
            let (next, r, done, info) = self.step(&action)?;
            total.accumulate(&r);
            mw_policy += info.mw_shed_policy;
            mw_uvls += info.mw_shed_uvls;
            steps += 1;
            if info.applied_action.iter().any(|a| *a > 0.0) {
                shed_commands += 1;
            }
            if let Some(rows) = rows.as_deref_mut() {
                let st = self.state().expect("episode active");
                let n_mon = self.spec.monitored_buses.len();
                rows.push(TraceRow {
                    t: info.t,
                    voltages: next[..n_mon].to_vec(),
                    cumulative_mw_shed: st.mw_shed_total(),
                });
            }
            obs = next;
            if done {
                failed = r.terminal_penalty < 0.0;
                break;
            }
        }
        let n_mon = self.spec.monitored_buses.len();
        Ok(TaskResult {
            scenario_id: scenario.scenario_id.clone(),
            total_reward: total.total(),
            breakdown: total,
            mw_shed_policy: mw_policy,
            mw_shed_uvls: mw_uvls,
            min_terminal_voltage: obs[..n_mon].iter().cloned().fold(f64::INFINITY, f64::min),
            steps,
            shed_commands,
            failed,
            error: None,
        })
    }
}
