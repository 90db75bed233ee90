use serde::{Deserialize, Serialize};

use super::case::PowerFlowCase;
use crate::error::{Error, Result};

pub const MIN_LOAD_SCALE: f64 = 0.4;
pub const MAX_LOAD_SCALE: f64 = 1.2;

/// Operating-point change applied by [`scale_case`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseScaling {
    /// One factor per entry of `case.zones`.
    pub zone_load_scale: Vec<f64>,
    /// Factor for loads outside every zone.
    pub other_load_scale: f64,
    /// Commitment per machine, case order.
    pub commitment: Vec<bool>,
    /// Dispatch as a fraction of `p_max`, per machine.
    pub dispatch: Vec<f64>,
}

impl CaseScaling {
    /// The scaling that reproduces `case` unchanged.
    pub fn identity(case: &PowerFlowCase) -> Self {
        CaseScaling {
            zone_load_scale: vec![1.0; case.zones.len()],
            other_load_scale: 1.0,
            commitment: case.machines.iter().map(|m| m.in_service).collect(),
            dispatch: case
                .machines
                .iter()
                .map(|m| if m.p_max > 0.0 { m.p_gen / m.p_max } else { 0.0 })
                .collect(),
        }
    }
}

/// Scales loads per zone, applies commitment and redispatches machines at
/// `dispatch * p_max`. The slack machine absorbs whatever imbalance remains.
pub fn scale_case(case: &PowerFlowCase, scaling: &CaseScaling, case_id: &str) -> Result<PowerFlowCase> {
    if scaling.zone_load_scale.len() != case.zones.len() {
        return Err(Error::Dimension {
            expected: case.zones.len(),
            got: scaling.zone_load_scale.len(),
        });
    }
    let nm = case.machines.len();
    if scaling.commitment.len() != nm || scaling.dispatch.len() != nm {
        return Err(Error::Dimension {
            expected: nm,
            got: scaling.commitment.len().min(scaling.dispatch.len()),
        });
    }
    for s in scaling
        .zone_load_scale
        .iter()
        .chain(std::iter::once(&scaling.other_load_scale))
    {
        if !(MIN_LOAD_SCALE..=MAX_LOAD_SCALE).contains(s) {
            return Err(Error::Infeasible(format!(
                "load scale {s} outside [{MIN_LOAD_SCALE}, {MAX_LOAD_SCALE}]"
            )));
        }
    }

    let mut out = case.clone();
    out.case_id = case_id.to_string();
    for load in &mut out.loads {
        let factor = match case.zones.iter().position(|z| z.member_buses.contains(&load.bus)) {
            Some(k) => scaling.zone_load_scale[k],
            None => scaling.other_load_scale,
        };
        if factor != 1.0 {
            load.p0 *= factor;
            load.q0 *= factor;
            load.initial_mw = load.p0 * case.system_mva_base;
        }
    }

    let slack = case.slack_bus().id;
    let mut capacity = 0.0;
    let mut slack_committed = false;
    for (k, m) in out.machines.iter_mut().enumerate() {
        let on = scaling.commitment[k];
        let current = if m.p_max > 0.0 { m.p_gen / m.p_max } else { 0.0 };
        // keep the stored value when the fraction is unchanged so identity scaling is exact
        if on && !(m.in_service && scaling.dispatch[k] == current) {
            m.p_gen = scaling.dispatch[k] * m.p_max;
        }
        if !on {
            m.p_gen = 0.0;
        }
        m.in_service = on;
        if on {
            if m.p_gen < m.p_min - 1e-12 || m.p_gen > m.p_max + 1e-12 {
                return Err(Error::Infeasible(format!(
                    "machine {} dispatch {:.4} outside [{}, {}]",
                    m.id, m.p_gen, m.p_min, m.p_max
                )));
            }
            capacity += m.p_max;
            slack_committed |= m.bus == slack;
        }
    }
    if !slack_committed {
        return Err(Error::Infeasible("no committed machine at the slack bus".into()));
    }
    let load = out.total_load_p();
    if capacity < load {
        return Err(Error::Infeasible(format!(
            "committed capacity {capacity:.3} pu below load {load:.3} pu"
        )));
    }
    Ok(out)
}
