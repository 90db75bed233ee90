//! Critical clearing time screening.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{CaseLibrary, EnvSpec, GridEnv, Scenario};
use crate::error::{Error, Result};
use crate::grid::BusId;

pub const CYCLE: f64 = 1.0 / 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CctFlag {
    InRange,
    /// Unstable even at the shortest duration searched.
    BelowRange,
    /// Stable at the longest duration searched.
    AboveRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CctResult {
    pub bus: BusId,
    /// Seconds.
    pub cct: f64,
    pub flag: CctFlag,
}

/// Duration bracket searched by [`compute_cct`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CctSearch {
    pub min_duration: f64,
    pub max_duration: f64,
    pub resolution: f64,
}

impl Default for CctSearch {
    fn default() -> Self {
        CctSearch {
            min_duration: 2.0 * CYCLE,
            max_duration: 30.0 * CYCLE,
            resolution: CYCLE,
        }
    }
}

impl CctSearch {
    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0 && self.min_duration > 0.0 && self.max_duration > self.min_duration) {
            return Err(Error::Config {
                key: "cct".into(),
                reason: "need 0 < min_duration < max_duration and a positive resolution".into(),
            });
        }
        Ok(())
    }

    fn grid_len(&self) -> usize {
        ((self.max_duration - self.min_duration) / self.resolution + 1e-9).floor() as usize
    }

    fn duration(&self, k: usize) -> f64 {
        self.min_duration + k as f64 * self.resolution
    }
}

/// Whether a fault of `duration` at `bus` recovers within the envelope
/// with no control and no relays.
pub fn recovers(lib: &Arc<CaseLibrary>, case_id: &str, bus: BusId, duration: f64) -> Result<bool> {
    let case = lib
        .case(case_id)
        .ok_or_else(|| Error::Dataset(format!("unknown case id {case_id}")))?;
    let spec = Arc::new(EnvSpec::full(case, lib.config())?);
    let mut env = GridEnv::new(lib.clone(), spec, None);
    let r = env.zero_action_rollout(&Scenario::new(case_id, bus, duration))?;
    if let Some(e) = r.error {
        return Err(Error::Scenario {
            scenario: r.scenario_id,
            reason: e,
        });
    }
    Ok(r.total_reward == 0.0 && !r.failed)
}

/// Binary search for the longest clearing time that still recovers.
pub fn compute_cct(lib: &Arc<CaseLibrary>, case_id: &str, bus: BusId, search: &CctSearch) -> Result<CctResult> {
    search.validate()?;
    let n = search.grid_len();
    let stable = |k: usize| recovers(lib, case_id, bus, search.duration(k));
    if !stable(0)? {
        return Ok(CctResult {
            bus,
            cct: 0.0,
            flag: CctFlag::BelowRange,
        });
    }
    if stable(n)? {
        return Ok(CctResult {
            bus,
            cct: search.duration(n),
            flag: CctFlag::AboveRange,
        });
    }
    let (mut lo, mut hi) = (0, n);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if stable(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(CctResult {
        bus,
        cct: search.duration(lo),
        flag: CctFlag::InRange,
    })
}
