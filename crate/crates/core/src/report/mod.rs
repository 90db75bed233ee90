//! Baseline runs, policy-versus-baseline comparison and trace export.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::RelayMode;
use crate::env::{CaseLibrary, EnvSpec, GridEnv, RewardBreakdown, Scenario, TaskResult, TraceRow};
use crate::error::{Error, Result};
use crate::pars::Policy;
use crate::pool::WorkerPool;
use crate::scenario::recovers;

/// Zero-action episodes with relays at primary settings, ordered by
/// scenario id. A scenario that cannot be simulated is recorded with the
/// failure penalty.
pub fn run_baseline(lib: &Arc<CaseLibrary>, spec: &Arc<EnvSpec>, scenarios: &[Scenario], pool: &WorkerPool) -> Vec<TaskResult> {
    let mut sorted: Vec<&Scenario> = scenarios.iter().collect();
    sorted.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
    let r_fail = lib.config().reward.r_fail;
    pool.map(&sorted, |s| {
        let mut env = GridEnv::new(lib.clone(), spec.clone(), Some(RelayMode::Primary));
        s.validate()
            .and_then(|_| env.zero_action_rollout(s))
            .unwrap_or_else(|e| TaskResult::errored(&s.scenario_id, r_fail, &e))
    })
}

/// No control and no relays; true when the envelope holds throughout and
/// at the end.
pub fn classify_no_shed(lib: &Arc<CaseLibrary>, scenarios: &[Scenario], pool: &WorkerPool) -> Result<Vec<(String, bool)>> {
    pool.map(scenarios, |s| {
        recovers(lib, &s.case_id, s.fault_bus, s.fault_duration).map(|ok| (s.scenario_id.clone(), ok))
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scenario_id: String,
    pub reward_policy: f64,
    pub reward_baseline: f64,
    pub reward_diff: f64,
    pub mw_shed_policy: f64,
    pub mw_shed_baseline: f64,
    pub requires_shedding: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub n_scenarios: usize,
    pub n_requires_shedding: usize,
    /// Fraction of shedding-required scenarios with reward_diff > 0.
    pub win_fraction: f64,
    /// Mean of (shed_baseline - shed_policy) / shed_baseline over
    /// shedding-required scenarios where the baseline sheds.
    pub mean_shed_reduction: Option<f64>,
    /// Fraction of no-shed scenarios where the policy run sheds nothing.
    pub no_shed_compliance: Option<f64>,
}

impl Aggregates {
    pub fn from_rows(rows: &[ComparisonRow]) -> Self {
        let req: Vec<&ComparisonRow> = rows.iter().filter(|r| r.requires_shedding).collect();
        let wins = req.iter().filter(|r| r.reward_diff > 0.0).count();
        let reductions: Vec<f64> = req
            .iter()
            .filter(|r| r.mw_shed_baseline > 0.0)
            .map(|r| (r.mw_shed_baseline - r.mw_shed_policy) / r.mw_shed_baseline)
            .collect();
        let no_shed: Vec<&ComparisonRow> = rows.iter().filter(|r| !r.requires_shedding).collect();
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        Aggregates {
            n_scenarios: rows.len(),
            n_requires_shedding: req.len(),
            win_fraction: if req.is_empty() { 0.0 } else { wins as f64 / req.len() as f64 },
            mean_shed_reduction: mean(&reductions),
            no_shed_compliance: (!no_shed.is_empty())
                .then(|| no_shed.iter().filter(|r| r.mw_shed_policy == 0.0).count() as f64 / no_shed.len() as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub aggregates: Aggregates,
}

/// Joins on scenario id. Both result lists and the labels must cover the
/// same scenarios.
pub fn compare(policy: &[TaskResult], baseline: &[TaskResult], labels: &BTreeMap<String, bool>) -> Result<ComparisonReport> {
    let by_id = |rs: &[TaskResult]| -> BTreeMap<String, TaskResult> {
        rs.iter().map(|r| (r.scenario_id.clone(), r.clone())).collect()
    };
    let (p, b) = (by_id(policy), by_id(baseline));
    let ids = |m: &BTreeMap<String, TaskResult>| m.keys().cloned().collect::<BTreeSet<_>>();
    let (pi, bi) = (ids(&p), ids(&b));
    let li: BTreeSet<String> = labels.keys().cloned().collect();
    if pi != bi || pi != li {
        let mut msg = Vec::new();
        let mut diff = |name: &str, a: &BTreeSet<String>, others: [&BTreeSet<String>; 2]| {
            let missing: Vec<&String> = others.iter().flat_map(|o| o.difference(a)).collect::<BTreeSet<_>>().into_iter().collect();
            if !missing.is_empty() {
                msg.push(format!(
                    "missing from {name}: {}",
                    missing.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
                ));
            }
        };
        diff("policy results", &pi, [&bi, &li]);
        diff("baseline results", &bi, [&pi, &li]);
        diff("labels", &li, [&pi, &bi]);
        return Err(Error::Mismatch(msg.join("; ")));
    }
    let rows: Vec<ComparisonRow> = pi
        .iter()
        .map(|id| {
            let (rp, rb) = (&p[id], &b[id]);
            ComparisonRow {
                scenario_id: id.clone(),
                reward_policy: rp.total_reward,
                reward_baseline: rb.total_reward,
                reward_diff: rp.total_reward - rb.total_reward,
                mw_shed_policy: rp.mw_shed_total(),
                mw_shed_baseline: rb.mw_shed_total(),
                requires_shedding: labels[id],
            }
        })
        .collect();
    Ok(ComparisonReport {
        aggregates: Aggregates::from_rows(&rows),
        rows,
    })
}

/// Metadata stored next to the aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub config_hash: String,
    pub dataset: String,
    pub checkpoint: Option<String>,
}

impl ComparisonReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<ComparisonRow>> {
        let mut r = csv::Reader::from_path(path.as_ref())?;
        r.deserialize().map(|row| row.map_err(Error::from)).collect()
    }

    pub fn write_json(&self, path: impl AsRef<Path>, meta: &ReportMeta) -> Result<()> {
        let path = path.as_ref();
        let doc = serde_json::json!({ "aggregates": self.aggregates, "meta": meta });
        let text = serde_json::to_string_pretty(&doc)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Counts of reward_diff in `bins` equal-width bins spanning the
    /// observed range; the counts sum to the number of rows.
    pub fn histogram(&self, bins: usize) -> Vec<(f64, f64, usize)> {
        if self.rows.is_empty() || bins == 0 {
            return Vec::new();
        }
        let lo = self.rows.iter().map(|r| r.reward_diff).fold(f64::INFINITY, f64::min);
        let hi = self.rows.iter().map(|r| r.reward_diff).fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let mut counts = vec![0; bins];
        for r in &self.rows {
            let k = (((r.reward_diff - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        (0..bins)
            .map(|k| (lo + k as f64 * width, lo + (k + 1) as f64 * width, counts[k]))
            .collect()
    }
}

/// Flat CSV form of a [`TaskResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ResultRow {
    scenario_id: String,
    total_reward: f64,
    voltage_penalty: f64,
    shed_penalty: f64,
    invalid_penalty: f64,
    terminal_penalty: f64,
    mw_shed_policy: f64,
    mw_shed_uvls: f64,
    min_terminal_voltage: f64,
    steps: usize,
    shed_commands: usize,
    failed: bool,
    error: Option<String>,
}

pub fn write_results(path: impl AsRef<Path>, results: &[TaskResult]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in results {
        w.serialize(ResultRow {
            scenario_id: r.scenario_id.clone(),
            total_reward: r.total_reward,
            voltage_penalty: r.breakdown.voltage_penalty,
            shed_penalty: r.breakdown.shed_penalty,
            invalid_penalty: r.breakdown.invalid_penalty,
            terminal_penalty: r.breakdown.terminal_penalty,
            mw_shed_policy: r.mw_shed_policy,
            mw_shed_uvls: r.mw_shed_uvls,
            min_terminal_voltage: r.min_terminal_voltage,
            steps: r.steps,
            shed_commands: r.shed_commands,
            failed: r.failed,
            error: r.error.clone(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<TaskResult>> {
    let mut rd = csv::Reader::from_path(path.as_ref())?;
    rd.deserialize()
        .map(|row| {
            let r: ResultRow = row?;
            Ok(TaskResult {
                scenario_id: r.scenario_id,
                total_reward: r.total_reward,
                breakdown: RewardBreakdown {
                    voltage_penalty: r.voltage_penalty,
                    shed_penalty: r.shed_penalty,
                    invalid_penalty: r.invalid_penalty,
                    terminal_penalty: r.terminal_penalty,
                },
                mw_shed_policy: r.mw_shed_policy,
                mw_shed_uvls: r.mw_shed_uvls,
                min_terminal_voltage: r.min_terminal_voltage,
                steps: r.steps,
                shed_commands: r.shed_commands,
                failed: r.failed,
                error: r.error,
            })
        })
        .collect()
}

/// Controller whose trajectory is exported.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    NoControl,
    /// Zero action with relays at primary settings.
    Uvls,
    /// Policy actions with relays as backup.
    Policy(&'a Policy),
}

impl Controller<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Controller::NoControl => "no_control",
            Controller::Uvls => "uvls",
            Controller::Policy(_) => "policy",
        }
    }
}

/// Trace of one episode from t = 0 at every control instant.
pub fn trace(lib: &Arc<CaseLibrary>, spec: &Arc<EnvSpec>, scenario: &Scenario, ctrl: Controller) -> Result<(TaskResult, Vec<TraceRow>)> {
    let act_dim = spec.act_dim;
    match ctrl {
        Controller::NoControl => GridEnv::new(lib.clone(), spec.clone(), None).rollout_traced(scenario, |_| vec![0.0; act_dim]),
        Controller::Uvls => {
            GridEnv::new(lib.clone(), spec.clone(), Some(RelayMode::Primary)).rollout_traced(scenario, |_| vec![0.0; act_dim])
        }
        Controller::Policy(p) => {
            if p.obs_dim != spec.obs_dim || p.act_dim != act_dim {
                return Err(Error::Dimension {
                    expected: spec.obs_dim,
                    got: p.obs_dim,
                });
            }
            GridEnv::new(lib.clone(), spec.clone(), Some(RelayMode::Backup))
                .rollout_traced(scenario, |o| p.act(o).unwrap_or_else(|_| vec![0.0; act_dim]))
        }
    }
}

pub fn write_trace(path: impl AsRef<Path>, spec: &EnvSpec, rows: &[TraceRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend(spec.monitored_buses.iter().map(|b| format!("v_{b}")));
    header.push("cumulative_mw_shed".into());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![format!("{:.4}", r.t)];
        rec.extend(r.voltages.iter().map(|v| format!("{v:.6}")));
        rec.push(format!("{:.6}", r.cumulative_mw_shed));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One trace file per controller in `dir`, named after the scenario and
/// controller.
pub fn export_traces(
    lib: &Arc<CaseLibrary>,
    spec: &Arc<EnvSpec>,
    scenario: &Scenario,
    controllers: &[Controller],
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = scenario.scenario_id.replace(['/', '.'], "_");
    controllers
        .iter()
        .map(|c| {
            let (_, rows) = trace(lib, spec, scenario, *c)?;
            let path = dir.join(format!("{stem}__{}.csv", c.name()));
            write_trace(&path, spec, &rows)?;
            Ok(path)
        })
        .collect()
}
