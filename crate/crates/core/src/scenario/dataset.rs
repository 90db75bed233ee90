//! Contingency selection and train/test dataset assembly.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cct::{compute_cct, recovers, CctResult, CctSearch, CYCLE};
use crate::env::{CaseLibrary, Scenario, MAX_FAULT_DURATION, MIN_FAULT_DURATION};
use crate::error::{Error, Result};
use crate::grid::{BusId, PowerFlowCase};
use crate::pool::WorkerPool;

/// A selected fault location with its sampled duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contingency {
    pub bus: BusId,
    pub zone: Option<u32>,
    pub cct: CctResult,
    /// Seconds.
    pub duration: f64,
}

/// Transmission-class buses of `case` (at or above `kv_min`).
pub fn candidate_buses(case: &PowerFlowCase, kv_min: f64) -> Vec<BusId> {
    case.buses.iter().filter(|b| b.voltage_kv >= kv_min).map(|b| b.id).collect()
}

/// Fault duration drawn uniformly over whole cycles in the sampled range.
pub fn sample_duration<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let lo = (MIN_FAULT_DURATION / CYCLE).round() as u32;
    let hi = (MAX_FAULT_DURATION / CYCLE).round() as u32;
    rng.gen_range(lo..=hi) as f64 * CYCLE
}

/// Orders candidates so that any prefix spreads across (zone, CCT quantile)
/// strata: zones take turns, and within a zone the CCT quantile bins take
/// turns, with a random pick inside each bin.
pub fn stratified_order<R: Rng + ?Sized>(
    candidates: &[(BusId, Option<u32>, f64)],
    n_quantiles: usize,
    rng: &mut R,
) -> Vec<BusId> {
    let mut by_zone: BTreeMap<Option<u32>, Vec<(BusId, f64)>> = BTreeMap::new();
    for &(b, z, cct) in candidates {
        by_zone.entry(z).or_default().push((b, cct));
    }
    let mut queues: Vec<Vec<BusId>> = Vec::new();
    for (_, mut members) in by_zone {
        members.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let q = n_quantiles.clamp(1, members.len());
        let mut bins: Vec<Vec<BusId>> = vec![Vec::new(); q];
        let len = members.len();
        for (i, (b, _)) in members.into_iter().enumerate() {
            bins[i * q / len].push(b);
        }
        for bin in &mut bins {
            bin.shuffle(rng);
        }
        let mut queue = Vec::with_capacity(len);
        let mut k = 0;
        while queue.len() < len {
            for bin in &mut bins {
                if k < bin.len() {
                    queue.push(bin[k]);
                }
            }
            k += 1;
        }
        queues.push(queue);
    }
    queues.shuffle(rng);
    let total: usize = queues.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(total);
    let mut k = 0;
    while out.len() < total {
        for q in &queues {
            if k < q.len() {
                out.push(q[k]);
            }
        }
        k += 1;
    }
    out
}

/// Screens `candidates` by CCT on `case_id`, selects `n_fault_buses` of them
/// across (zone, CCT quantile) strata and draws a duration for each.
pub fn rank_and_sample_contingencies(
    lib: &Arc<CaseLibrary>,
    case_id: &str,
    candidates: &[BusId],
    n_fault_buses: usize,
    search: &CctSearch,
    pool: &WorkerPool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Contingency>> {
    let case = lib
        .case(case_id)
        .ok_or_else(|| Error::Dataset(format!("unknown case id {case_id}")))?;
    if n_fault_buses > candidates.len() {
        return Err(Error::Dataset(format!(
            "asked for {n_fault_buses} fault buses from {} candidates",
            candidates.len()
        )));
    }
    let ccts = pool
        .map(candidates, |b| compute_cct(lib, case_id, *b, search))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let keyed: Vec<(BusId, Option<u32>, f64)> = ccts.iter().map(|c| (c.bus, case.zone_of(c.bus), c.cct)).collect();
    let order = stratified_order(&keyed, 2, rng);
    let chosen: Vec<BusId> = order.into_iter().take(n_fault_buses).collect();
    let mut out: Vec<Contingency> = chosen
        .iter()
        .map(|b| {
            let cct = *ccts.iter().find(|c| c.bus == *b).expect("screened");
            Contingency {
                bus: *b,
                zone: case.zone_of(*b),
                cct,
                duration: 0.0,
            }
        })
        .collect();
    for c in &mut out {
        c.duration = sample_duration(rng);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScenario {
    #[serde(flatten)]
    pub scenario: Scenario,
    pub requires_shedding: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDataset {
    pub role: Role,
    pub scenarios: Vec<LabeledScenario>,
    pub seed: u64,
    pub config_hash: String,
}

impl ScenarioDataset {
    pub fn fault_buses(&self) -> BTreeSet<BusId> {
        self.scenarios.iter().map(|s| s.scenario.fault_bus).collect()
    }

    pub fn case_ids(&self) -> BTreeSet<String> {
        self.scenarios.iter().map(|s| s.scenario.case_id.clone()).collect()
    }

    pub fn scenarios(&self) -> Vec<Scenario> {
        self.scenarios.iter().map(|s| s.scenario.clone()).collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        for s in &self.scenarios {
            w.serialize(CsvRow::from(s))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>, role: Role) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != CSV_HEADER {
            return Err(Error::Dataset(format!("{}: unexpected header {header:?}", path.display())));
        }
        let mut scenarios = Vec::new();
        for row in r.deserialize::<CsvRow>() {
            let row = row?;
            scenarios.push(LabeledScenario {
                scenario: Scenario {
                    scenario_id: row.scenario_id,
                    case_id: row.case_id,
                    fault_bus: row.fault_bus,
                    fault_duration: row.fault_duration_s,
                },
                requires_shedding: row.requires_shedding,
            });
        }
        Ok(ScenarioDataset {
            role,
            scenarios,
            seed: 0,
            config_hash: String::new(),
        })
    }
}

pub const CSV_HEADER: [&str; 5] = ["scenario_id", "case_id", "fault_bus", "fault_duration_s", "requires_shedding"];

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    scenario_id: String,
    case_id: String,
    fault_bus: BusId,
    fault_duration_s: f64,
    requires_shedding: bool,
}

impl From<&LabeledScenario> for CsvRow {
    fn from(s: &LabeledScenario) -> Self {
        CsvRow {
            scenario_id: s.scenario.scenario_id.clone(),
            case_id: s.scenario.case_id.clone(),
            fault_bus: s.scenario.fault_bus,
            fault_duration_s: s.scenario.fault_duration,
            requires_shedding: s.requires_shedding,
        }
    }
}

/// Every case paired with every (bus, duration), sorted by scenario id.
pub fn cross_product(case_ids: &[String], pairs: &[(BusId, f64)]) -> Vec<Scenario> {
    let mut out: Vec<Scenario> = case_ids
        .iter()
        .flat_map(|c| pairs.iter().map(move |&(b, d)| Scenario::new(c, b, d)))
        .collect();
    out.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
    out
}

/// Splits `items` after a seeded shuffle; the first part gets
/// `round(fraction * len)` items, clamped so both parts are non-empty.
pub fn split_disjoint<T: Clone>(items: &[T], fraction: f64, rng: &mut ChaCha8Rng) -> Result<(Vec<T>, Vec<T>)> {
    if items.len() < 2 {
        return Err(Error::Dataset(format!("cannot split {} items into two disjoint sets", items.len())));
    }
    let mut v = items.to_vec();
    v.shuffle(rng);
    let k = ((fraction * v.len() as f64).round() as usize).clamp(1, v.len() - 1);
    let test = v.split_off(k);
    Ok((v, test))
}

/// Splits contingencies zone by zone so that every zone with at least two
/// fault buses has faults on both sides. Zones holding a single bus go to
/// whichever side is further below its target share.
pub fn split_by_zone(contingencies: &[Contingency], fraction: f64, rng: &mut ChaCha8Rng) -> Result<(Vec<Contingency>, Vec<Contingency>)> {
    let mut by_zone: BTreeMap<Option<u32>, Vec<Contingency>> = BTreeMap::new();
    for c in contingencies {
        by_zone.entry(c.zone).or_default().push(c.clone());
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (_, mut group) in by_zone {
        group.shuffle(rng);
        let n = group.len();
        let k = if n >= 2 {
            ((fraction * n as f64).round() as usize).clamp(1, n - 1)
        } else {
            let placed = (train.len() + test.len() + 1) as f64;
            usize::from((train.len() as f64) < fraction * placed)
        };
        test.extend(group.split_off(k));
        train.extend(group);
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Dataset(format!(
            "cannot split {} contingencies into two disjoint sets",
            contingencies.len()
        )));
    }
    Ok((train, test))
}

/// Labels each scenario by a no-control, no-relay rollout: shedding is
/// required unless the envelope holds throughout and at the end.
pub fn label_requires_shedding(lib: &Arc<CaseLibrary>, scenarios: &[Scenario], pool: &WorkerPool) -> Result<Vec<LabeledScenario>> {
    pool.map(scenarios, |s| {
        let ok = recovers(lib, &s.case_id, s.fault_bus, s.fault_duration)?;
        Ok(LabeledScenario {
            scenario: s.clone(),
            requires_shedding: !ok,
        })
    })
    .into_iter()
    .collect()
}

/// Builds disjoint train/test datasets: case ids are split by
/// `train_fraction`, fault buses likewise within each zone, and each role
/// takes the cross product of its cases with its contingencies.
pub fn build_datasets(
    lib: &Arc<CaseLibrary>,
    contingencies: &[Contingency],
    train_fraction: f64,
    seed: u64,
    config_hash: &str,
    pool: &WorkerPool,
) -> Result<(ScenarioDataset, ScenarioDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config {
            key: "datasets.train_fraction".into(),
            reason: "must be strictly between 0 and 1".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let case_ids: Vec<String> = lib.case_ids().map(str::to_string).collect();
    let (train_cases, test_cases) = split_disjoint(&case_ids, train_fraction, &mut rng)?;
    let (train_cont, test_cont) = split_by_zone(contingencies, train_fraction, &mut rng)?;
    let pairs = |cs: &[Contingency]| -> Vec<(BusId, f64)> {
        let mut p: Vec<(BusId, f64)> = cs.iter().map(|c| (c.bus, c.duration)).collect();
        p.sort_by_key(|x| x.0);
        p
    };
    let (train_pairs, test_pairs) = (pairs(&train_cont), pairs(&test_cont));
    let make = |role, cases: &[String], pairs: &[(BusId, f64)]| -> Result<ScenarioDataset> {
        let scenarios = label_requires_shedding(lib, &cross_product(cases, pairs), pool)?;
        Ok(ScenarioDataset {
            role,
            scenarios,
            seed,
            config_hash: config_hash.to_string(),
        })
    };
    Ok((make(Role::Train, &train_cases, &train_pairs)?, make(Role::Test, &test_cases, &test_pairs)?))
}
