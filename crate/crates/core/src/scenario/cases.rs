//! Operating-point sampling: load level, commitment and dispatch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lhs::{lhs, scale, stratum_sample};
use crate::dynamics::init_dynamics;
use crate::error::{Error, Result};
use crate::grid::scaling::{MAX_LOAD_SCALE, MIN_LOAD_SCALE};
use crate::grid::{scale_case, solve_power_flow, CaseScaling, PowerFlowCase, DEFAULT_MAX_ITER, DEFAULT_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub n_cases: usize,
    /// System load scale range, relative to the base case.
    pub load_range: [f64; 2],
    /// Relative spread of each zone's scale around the system scale.
    pub zone_spread: f64,
    /// Machine ids in commitment priority; empty keeps case order.
    pub merit_order: Vec<u32>,
    /// Commit until capacity reaches this multiple of the load.
    pub capacity_margin: f64,
    /// Half-width of the dispatch jitter around the proportional share.
    pub dispatch_jitter: f64,
    /// Redraws within a stratum before it is reported unfillable.
    pub max_retries: usize,
    /// Set by the caller; not part of the serialized configuration.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            n_cases: 50,
            load_range: [0.7, 1.05],
            zone_spread: 0.05,
            merit_order: Vec::new(),
            capacity_margin: 1.15,
            dispatch_jitter: 0.1,
            max_retries: 8,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| {
            Err(Error::Config {
                key: format!("sampling.{key}"),
                reason: reason.into(),
            })
        };
        if self.n_cases == 0 {
            return bad("n_cases", "must be at least 1");
        }
        let [lo, hi] = self.load_range;
        if !(MIN_LOAD_SCALE..=MAX_LOAD_SCALE).contains(&lo) || !(MIN_LOAD_SCALE..=MAX_LOAD_SCALE).contains(&hi) || lo > hi {
            return bad("load_range", "must be an ordered pair inside [0.4, 1.2]");
        }
        if !(0.0..1.0).contains(&self.zone_spread) {
            return bad("zone_spread", "must be in [0, 1)");
        }
        if !(self.capacity_margin >= 1.0) {
            return bad("capacity_margin", "must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dispatch_jitter) {
            return bad("dispatch_jitter", "must be in [0, 1)");
        }
        Ok(())
    }
}

/// One sampled operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledCase {
    pub case: PowerFlowCase,
    pub stratum: usize,
    pub load_scale: f64,
    pub scaling: CaseScaling,
}

/// Commits machines in merit order until capacity covers `margin * load`.
/// The slack machine is always committed.
pub fn commit_machines(base: &PowerFlowCase, merit_order: &[u32], load: f64, margin: f64) -> Result<Vec<bool>> {
    let order: Vec<usize> = if merit_order.is_empty() {
        (0..base.machines.len()).collect()
    } else {
        merit_order
            .iter()
            .map(|id| {
                base.machines
                    .iter()
                    .position(|m| m.id == *id)
                    .ok_or_else(|| Error::Config {
                        key: "sampling.merit_order".into(),
                        reason: format!("unknown machine id {id}"),
                    })
            })
            .collect::<Result<_>>()?
    };
    let slack = base.slack_bus().id;
    let mut on = vec![false; base.machines.len()];
    let mut capacity = 0.0;
    for (k, m) in base.machines.iter().enumerate() {
        if m.bus == slack && m.in_service {
            on[k] = true;
            capacity += m.p_max;
        }
    }
    for k in order {
        if capacity >= margin * load {
            break;
        }
        if !on[k] && base.machines[k].in_service {
            on[k] = true;
            capacity += base.machines[k].p_max;
        }
    }
    if capacity < load {
        return Err(Error::Infeasible(format!(
            "available capacity {capacity:.3} pu below load {load:.3} pu"
        )));
    }
    Ok(on)
}

/// Proportional dispatch with multiplicative jitter `1 + jitter * (2u - 1)`.
pub fn dispatch_fractions(base: &PowerFlowCase, on: &[bool], load: f64, jitter: f64, u: &[f64]) -> Vec<f64> {
    let capacity: f64 = base.machines.iter().zip(on).filter(|(_, o)| **o).map(|(m, _)| m.p_max).sum();
    let share = if capacity > 0.0 { load / capacity } else { 0.0 };
    base.machines
        .iter()
        .zip(on)
        .zip(u)
        .map(|((m, &o), &u)| {
            if !o || m.p_max <= 0.0 {
                return 0.0;
            }
            let lo = m.p_min / m.p_max;
            (share * (1.0 + jitter * (2.0 * u - 1.0))).clamp(lo, 1.0)
        })
        .collect()
}

fn materialize(
    base: &PowerFlowCase,
    cfg: &SamplingConfig,
    case_id: &str,
    level: f64,
    zone_u: &[f64],
    dispatch_u: &[f64],
) -> Result<(PowerFlowCase, CaseScaling)> {
    let clamp = |s: f64| s.clamp(MIN_LOAD_SCALE, MAX_LOAD_SCALE);
    let zone_load_scale: Vec<f64> = zone_u
        .iter()
        .map(|u| clamp(level * (1.0 + cfg.zone_spread * (2.0 * u - 1.0))))
        .collect();
    let mut load = 0.0;
    for l in &base.loads {
        let f = match base.zones.iter().position(|z| z.member_buses.contains(&l.bus)) {
            Some(k) => zone_load_scale[k],
            None => level,
        };
        load += l.p0 * f;
    }
    let commitment = commit_machines(base, &cfg.merit_order, load, cfg.capacity_margin)?;
    let dispatch = dispatch_fractions(base, &commitment, load, cfg.dispatch_jitter, dispatch_u);
    let scaling = CaseScaling {
        zone_load_scale,
        other_load_scale: clamp(level),
        commitment,
        dispatch,
    };
    let case = scale_case(base, &scaling, case_id)?;
    let sol = solve_power_flow(&case, DEFAULT_TOL, DEFAULT_MAX_ITER);
    if !sol.converged {
        return Err(Error::PowerFlow {
            max_mismatch: sol.max_mismatch,
        });
    }
    init_dynamics(&case, &sol)?;
    Ok((case, scaling))
}

/// Hierarchical Latin hypercube over operating points.
///
/// Level 1 stratifies the system load scale (plus per-zone deviations),
/// level 2 commits machines for that load, level 3 stratifies the dispatch
/// jitter. A sample whose power flow or dynamic initialization fails is
/// redrawn inside the same stratum.
pub fn hierarchical_lhs(base: &PowerFlowCase, cfg: &SamplingConfig) -> Result<Vec<SampledCase>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_cases;
    let nz = base.zones.len();
    let nm = base.machines.len();
    let level_pts = lhs(n, 1 + nz, &mut rng);
    let dispatch_pts = lhs(n, nm, &mut rng);
    let [lo, hi] = cfg.load_range;

    // strata are visited in index order so the output order is fixed
    let mut by_stratum: Vec<(usize, usize)> = level_pts
        .iter()
        .enumerate()
        .map(|(i, p)| (super::lhs::stratum_of(p[0], n), i))
        .collect();
    by_stratum.sort_unstable();

    let mut out = Vec::with_capacity(n);
    for (stratum, i) in by_stratum {
        let case_id = format!("{}-c{:03}", base.case_id, stratum);
        let mut u_level = level_pts[i][0];
        let mut zone_u = level_pts[i][1..].to_vec();
        let mut dispatch_u = dispatch_pts[i].clone();
        let mut last_err = None;
        for attempt in 0..=cfg.max_retries {
            if attempt > 0 {
                u_level = stratum_sample(stratum, n, &mut rng);
                zone_u = (0..nz).map(|_| rng.gen()).collect();
                dispatch_u = (0..nm).map(|_| rng.gen()).collect();
            }
            let level = scale(u_level, lo, hi);
            match materialize(base, cfg, &case_id, level, &zone_u, &dispatch_u) {
                Ok((case, scaling)) => {
                    out.push(SampledCase {
                        case,
                        stratum,
                        load_scale: level,
                        scaling,
                    });
                    last_err = None;
                    break;
                }
                Err(e) => last_err = Some(e),
            }
        }
        if let Some(e) = last_err {
            return Err(Error::Dataset(format!(
                "load stratum {stratum} unfillable after {} draws: {e}",
                cfg.max_retries + 1
            )));
        }
    }
    Ok(out)
}
