//! Zone-wise training with difficult-task mining, then coordinated training
//! of the assembled full-system policy.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::RelayMode;
use crate::env::{CaseLibrary, EnvSpec, GridEnv, Scenario, TaskResult};
use crate::error::{Error, Result};
use crate::grid::PowerFlowCase;
use crate::pars::{evaluate, mean_reward, train, CurvePoint, GridRollout, ParsConfig, Policy, TaskSampler, UniformSampler};
use crate::pool::WorkerPool;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub stage3_iters: usize,
    /// Tasks scoring below this after stage 1 are mined as difficult.
    pub difficulty_threshold: f64,
    pub n_difficult_per_batch: usize,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            stage1_iters: 30,
            stage2_iters: 20,
            stage3_iters: 20,
            difficulty_threshold: -1000.0,
            n_difficult_per_batch: 5,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self, pars: &ParsConfig) -> Result<()> {
        if self.n_difficult_per_batch > pars.minibatch {
            return Err(Error::Config {
                key: "curriculum.n_difficult_per_batch".into(),
                reason: format!("exceeds the minibatch size {}", pars.minibatch),
            });
        }
        if !self.difficulty_threshold.is_finite() {
            return Err(Error::Config {
                key: "curriculum.difficulty_threshold".into(),
                reason: "must be finite".into(),
            });
        }
        Ok(())
    }
}

/// Control subproblem of one zone.
#[derive(Debug, Clone)]
pub struct ZoneTask {
    pub zone_id: u32,
    pub spec: Arc<EnvSpec>,
    pub scenarios: Vec<Scenario>,
}

/// Zones whose monitored buses leave the envelope in the no-control,
/// no-relay rollout of each scenario, keyed by scenario id.
pub fn violated_zones(
    lib: &Arc<CaseLibrary>,
    case: &PowerFlowCase,
    scenarios: &[Scenario],
    pool: &WorkerPool,
) -> Result<BTreeMap<String, Vec<u32>>> {
    let spec = Arc::new(EnvSpec::full(case, lib.config())?);
    let flags = pool.map(scenarios, |s| GridEnv::new(lib.clone(), spec.clone(), None).envelope_violations(s));
    let mut out = BTreeMap::new();
    for (s, f) in scenarios.iter().zip(flags) {
        let f = f?;
        let zones: BTreeSet<u32> = spec
            .monitored_buses
            .iter()
            .zip(&f)
            .filter(|(_, v)| **v)
            .filter_map(|(b, _)| case.zone_of(*b))
            .collect();
        out.insert(s.scenario_id.clone(), zones.into_iter().collect());
    }
    Ok(out)
}

/// One task per zone of `case`; a scenario joins every zone it violates,
/// so boundary faults appear in several zones.
pub fn zone_tasks(
    lib: &Arc<CaseLibrary>,
    case: &PowerFlowCase,
    scenarios: &[Scenario],
    zones_by_scenario: &BTreeMap<String, Vec<u32>>,
) -> Result<Vec<ZoneTask>> {
    case.zones
        .iter()
        .map(|z| {
            let spec = Arc::new(EnvSpec::for_zones(case, &[z.zone_id], lib.config())?);
            let scenarios = scenarios
                .iter()
                .filter(|s| zones_by_scenario.get(&s.scenario_id).is_some_and(|v| v.contains(&z.zone_id)))
                .cloned()
                .collect();
            Ok(ZoneTask {
                zone_id: z.zone_id,
                spec,
                scenarios,
            })
        })
        .collect()
}

/// Scenarios touching two or more zones.
pub fn boundary_scenarios(scenarios: &[Scenario], zones_by_scenario: &BTreeMap<String, Vec<u32>>) -> Vec<Scenario> {
    scenarios
        .iter()
        .filter(|s| zones_by_scenario.get(&s.scenario_id).is_some_and(|z| z.len() >= 2))
        .cloned()
        .collect()
}

pub fn mine_difficult(results: &[TaskResult], threshold: f64) -> BTreeSet<String> {
    results
        .iter()
        .filter(|r| r.total_reward < threshold)
        .map(|r| r.scenario_id.clone())
        .collect()
}

/// Minibatches of `n_difficult` mined tasks (or all of them when fewer
/// exist) topped up uniformly from the remaining tasks.
#[derive(Debug, Clone)]
pub struct CurriculumSampler {
    difficult: Vec<Scenario>,
    regular: Vec<Scenario>,
    size: usize,
    n_difficult: usize,
}

impl CurriculumSampler {
    pub fn new(tasks: &[Scenario], mined: &BTreeSet<String>, size: usize, n_difficult: usize) -> Self {
        let (difficult, regular) = tasks.iter().cloned().partition(|s| mined.contains(&s.scenario_id));
        CurriculumSampler {
            difficult,
            regular,
            size,
            n_difficult,
        }
    }
}

impl TaskSampler<Scenario> for CurriculumSampler {
    fn sample(&mut self, rng: &mut ChaCha8Rng) -> Vec<Scenario> {
        let nd = self.n_difficult.min(self.difficult.len()).min(self.size);
        let nr = (self.size - nd).min(self.regular.len());
        let mut pick = |pool: &[Scenario], n: usize| {
            let mut idx = sample(rng, pool.len(), n).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|k| pool[k].clone()).collect::<Vec<_>>()
        };
        let mut out = pick(&self.difficult, nd);
        out.extend(pick(&self.regular, nr));
        out
    }
}

/// Stage transcripts of one zone.
#[derive(Debug, Clone)]
pub struct ZoneOutcome {
    pub zone_id: u32,
    pub spec: Arc<EnvSpec>,
    pub policy: Policy,
    pub stage1_curve: Vec<CurvePoint>,
    pub stage2_curve: Vec<CurvePoint>,
    pub mined: BTreeSet<String>,
}

/// Stage 1 (uniform sampling), full evaluation and mining, then stage 2
/// (mined tasks mixed into every minibatch). Returns the best evaluated
/// checkpoint across both stages.
pub fn train_zone(
    zone: &ZoneTask,
    lib: &Arc<CaseLibrary>,
    pars: &ParsConfig,
    cfg: &CurriculumConfig,
    pool: &WorkerPool,
    rng: &mut ChaCha8Rng,
) -> Result<ZoneOutcome> {
    if zone.scenarios.is_empty() {
        return Err(Error::Dataset(format!("zone {} has no training scenarios", zone.zone_id)));
    }
    let env = GridRollout::new(lib.clone(), zone.spec.clone(), Some(RelayMode::Backup));
    let init = pars.new_policy(zone.spec.obs_dim, zone.spec.act_dim);

    let mut uniform = UniformSampler {
        tasks: zone.scenarios.clone(),
        size: pars.minibatch,
    };
    let s1 = train(init, pars, cfg.stage1_iters, &mut uniform, &env, &zone.scenarios, pool, rng);
    let results = evaluate(&s1.best, &zone.scenarios, &env, pool);
    let s1_mean = results.iter().map(|r| r.total_reward).sum::<f64>() / results.len() as f64;
    let mined = mine_difficult(&results, cfg.difficulty_threshold);
    log::info!(
        "zone {}: stage 1 mean {s1_mean:.2}, {} difficult of {}",
        zone.zone_id,
        mined.len(),
        results.len()
    );

    let mut sampler = CurriculumSampler::new(&zone.scenarios, &mined, pars.minibatch, cfg.n_difficult_per_batch);
    let s2 = train(s1.best.clone(), pars, cfg.stage2_iters, &mut sampler, &env, &zone.scenarios, pool, rng);
    let policy = match s2.best_eval {
        Some(e) if e > s1_mean => s2.best,
        _ if cfg.stage2_iters > 0 && s2.best_eval.is_none() => s2.last,
        _ => s1.best,
    };
    Ok(ZoneOutcome {
        zone_id: zone.zone_id,
        spec: zone.spec.clone(),
        policy,
        stage1_curve: s1.curve,
        stage2_curve: s2.curve,
        mined,
    })
}

fn shape_error(reason: String) -> Error {
    Error::Other(format!("zone/full layout mismatch: {reason}"))
}

/// Full-system policy with each zone policy on its own rows and feature
/// columns, latent contexts concatenated in zone order and zero coupling
/// between zones. Observation statistics are placed by feature position.
pub fn assemble_blocks(zones: &[(&EnvSpec, &Policy)], full: &EnvSpec) -> Result<Policy> {
    let z_dim: usize = zones.iter().map(|(_, p)| p.z_dim()).sum();
    let mut out = Policy::new(full.obs_dim, full.act_dim, z_dim);
    // the full context goes in first: weight indexing depends on its length
    out.z = zones.iter().flat_map(|(_, p)| p.z.iter().copied()).collect();
    if let Some((_, p)) = zones.first() {
        out.eps = p.eps;
    }
    let n_mon = full.monitored_buses.len();
    let mut row_owner = vec![false; full.act_dim];
    let mut z_off = 0;
    for (spec, p) in zones {
        if p.obs_dim != spec.obs_dim || p.act_dim != spec.act_dim {
            return Err(shape_error(format!("policy for zones {:?} does not match its spec", spec.zones)));
        }
        if p.eps != out.eps {
            return Err(shape_error("zone policies use different normalization floors".into()));
        }
        let mut cols = Vec::with_capacity(p.in_dim());
        for b in &spec.monitored_buses {
            let k = full.monitored_buses.iter().position(|m| m == b);
            cols.push(k.ok_or_else(|| shape_error(format!("monitored bus {b} not in full layout")))?);
        }
        let mut rows = Vec::with_capacity(p.act_dim);
        for b in &spec.controllable_buses {
            let k = full.controllable_buses.iter().position(|m| m == b);
            let k = k.ok_or_else(|| shape_error(format!("controllable bus {b} not in full layout")))?;
            if row_owner[k] {
                return Err(shape_error(format!("controllable bus {b} claimed by two zones")));
            }
            row_owner[k] = true;
            rows.push(k);
            cols.push(n_mon + k);
        }
        for (zk, &fk) in cols.iter().enumerate() {
            out.stats.merge_feature(fk, &p.stats, zk);
        }
        cols.extend((0..p.z_dim()).map(|j| full.obs_dim + z_off + j));
        z_off += p.z_dim();
        for (r, &fr) in rows.iter().enumerate() {
            for (c, &fc) in cols.iter().enumerate() {
                out.set_weight(fr, fc, p.weight(r, c));
            }
        }
    }
    if let Some(k) = row_owner.iter().position(|o| !o) {
        return Err(shape_error(format!(
            "controllable bus {} belongs to no zone",
            full.controllable_buses[k]
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct CoordinatedOutcome {
    pub assembled: Policy,
    pub policy: Policy,
    pub curve: Vec<CurvePoint>,
    pub assembled_eval: Option<f64>,
    pub best_eval: Option<f64>,
}

/// Stage 3: PARS over the full layout starting from the block assembly.
/// The assembly itself competes in checkpoint selection, so the result
/// never evaluates below it on the training scenarios.
#[allow(clippy::too_many_arguments)]
pub fn coordinated_train(
    zones: &[ZoneOutcome],
    full: &Arc<EnvSpec>,
    lib: &Arc<CaseLibrary>,
    scenarios: &[Scenario],
    pars: &ParsConfig,
    cfg: &CurriculumConfig,
    pool: &WorkerPool,
    rng: &mut ChaCha8Rng,
) -> Result<CoordinatedOutcome> {
    let parts: Vec<(&EnvSpec, &Policy)> = zones.iter().map(|z| (z.spec.as_ref(), &z.policy)).collect();
    let assembled = assemble_blocks(&parts, full)?;
    if cfg.stage3_iters == 0 || scenarios.is_empty() {
        return Ok(CoordinatedOutcome {
            policy: assembled.clone(),
            assembled,
            curve: Vec::new(),
            assembled_eval: None,
            best_eval: None,
        });
    }
    let env = GridRollout::new(lib.clone(), full.clone(), Some(RelayMode::Backup));
    let assembled_eval = mean_reward(&assembled, scenarios, &env, pool);
    let mut sampler = UniformSampler {
        tasks: scenarios.to_vec(),
        size: pars.minibatch,
    };
    let s3 = train(assembled.clone(), pars, cfg.stage3_iters, &mut sampler, &env, scenarios, pool, rng);
    let (policy, best_eval) = match s3.best_eval {
        Some(e) if e > assembled_eval => (s3.best, e),
        _ => (assembled.clone(), assembled_eval),
    };
    Ok(CoordinatedOutcome {
        assembled,
        policy,
        curve: s3.curve,
        assembled_eval: Some(assembled_eval),
        best_eval: Some(best_eval),
    })
}

/// Everything produced by the three stages.
#[derive(Debug, Clone)]
pub struct CurriculumOutcome {
    pub zones_by_scenario: BTreeMap<String, Vec<u32>>,
    pub zones: Vec<ZoneOutcome>,
    pub coordinated: CoordinatedOutcome,
    pub full_spec: Arc<EnvSpec>,
}

/// Runs the three stages on `scenarios` (the training set). Zones are
/// trained in zone order from one random stream.
pub fn run_curriculum(
    lib: &Arc<CaseLibrary>,
    base: &PowerFlowCase,
    scenarios: &[Scenario],
    pars: &ParsConfig,
    cfg: &CurriculumConfig,
    pool: &WorkerPool,
    rng: &mut ChaCha8Rng,
) -> Result<CurriculumOutcome> {
    pars.validate()?;
    cfg.validate(pars)?;
    let zones_by_scenario = violated_zones(lib, base, scenarios, pool)?;
    let tasks = zone_tasks(lib, base, scenarios, &zones_by_scenario)?;
    let mut zones = Vec::with_capacity(tasks.len());
    for t in &tasks {
        zones.push(train_zone(t, lib, pars, cfg, pool, rng)?);
    }
    let full_spec = Arc::new(EnvSpec::full(base, lib.config())?);
    let coordinated = coordinated_train(&zones, &full_spec, lib, scenarios, pars, cfg, pool, rng)?;
    Ok(CurriculumOutcome {
        zones_by_scenario,
        zones,
        coordinated,
        full_spec,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::RewardBreakdown;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn result(id: &str, r: f64) -> TaskResult {
        TaskResult {
            scenario_id: id.into(),
            total_reward: r,
            breakdown: RewardBreakdown::default(),
            mw_shed_policy: 0.0,
            mw_shed_uvls: 0.0,
            min_terminal_voltage: 1.0,
            steps: 1,
            shed_commands: 0,
            failed: false,
            error: None,
        }
    }

    #[test]
    fn mining_hand_cases() {
        let rs = vec![result("a", -10.0), result("b", -500.0), result("c", -2000.0)];
        assert_eq!(mine_difficult(&rs, -1000.0), BTreeSet::from(["c".to_string()]));
        assert!(mine_difficult(&rs, -1e9).is_empty());
        assert_eq!(mine_difficult(&rs, 0.0).len(), 3);
    }

    fn scenarios(n: usize) -> Vec<Scenario> {
        (0..n).map(|k| Scenario::new(&format!("c{k:02}"), 22, 0.1)).collect()
    }

    proptest! {
        #[test]
        fn mining_is_a_filter(rewards in proptest::collection::vec(-3000.0f64..0.0, 0..40), thr in -3000.0f64..0.0) {
            let rs: Vec<TaskResult> = rewards.iter().enumerate().map(|(k, r)| result(&format!("s{k}"), *r)).collect();
            let brute: BTreeSet<String> = rs.iter().filter(|r| r.total_reward < thr).map(|r| r.scenario_id.clone()).collect();
            prop_assert_eq!(mine_difficult(&rs, thr), brute);
        }

        #[test]
        fn stage2_batches_hold_quota(n in 1usize..40, n_mined in 0usize..40, size in 1usize..25, quota in 0usize..25, seed in 0u64..1000) {
            let quota = quota.min(size);
            let tasks = scenarios(n);
            let mined: BTreeSet<String> = tasks.iter().take(n_mined).map(|s| s.scenario_id.clone()).collect();
            let mut sampler = CurriculumSampler::new(&tasks, &mined, size, quota);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let batch = sampler.sample(&mut rng);
            let got = batch.iter().filter(|s| mined.contains(&s.scenario_id)).count();
            prop_assert_eq!(got, quota.min(mined.len()));
            let distinct: BTreeSet<&str> = batch.iter().map(|s| s.scenario_id.as_str()).collect();
            prop_assert_eq!(distinct.len(), batch.len());
            prop_assert_eq!(batch.len(), got + (size - got).min(n - mined.len()));
        }
    }

    #[test]
    fn no_mined_tasks_means_uniform() {
        let tasks = scenarios(12);
        let mut a = CurriculumSampler::new(&tasks, &BTreeSet::new(), 5, 3);
        let mut b = UniformSampler { tasks, size: 5 };
        let (mut r1, mut r2) = (ChaCha8Rng::seed_from_u64(3), ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a.sample(&mut r1), b.sample(&mut r2));
    }

    #[test]
    fn quota_must_fit_minibatch() {
        let pars = ParsConfig {
            minibatch: 4,
            ..ParsConfig::default()
        };
        let cfg = CurriculumConfig {
            n_difficult_per_batch: 5,
            ..CurriculumConfig::default()
        };
        assert!(cfg.validate(&pars).is_err());
    }
}
