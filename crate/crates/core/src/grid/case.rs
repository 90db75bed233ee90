//! Static network description and the JSON case format.
//!
//! Every quantity is per-unit on `base_mva` except `voltage_kv`, time
//! constants (seconds) and `initial_mw`.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type BusId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    #[serde(rename = "PV")]
    Pv,
    #[serde(rename = "PQ")]
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
    pub voltage_kv: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_set: Option<f64>,
    #[serde(default)]
    pub shunt_g: f64,
    #[serde(default)]
    pub shunt_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: BusId,
    pub to: BusId,
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b_charging: f64,
    #[serde(default = "unit_tap")]
    pub tap: f64,
    #[serde(default = "in_service")]
    pub status: bool,
}

fn unit_tap() -> f64 {
    1.0
}

fn in_service() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExciterSpec {
    pub ka: f64,
    pub ta: f64,
    pub efd_min: f64,
    pub efd_max: f64,
}

/// Synchronous machine: power-flow data plus two-axis dynamic parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineSpec {
    pub id: u32,
    pub bus: BusId,
    #[serde(default = "in_service")]
    pub in_service: bool,
    pub p_gen: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub h: f64,
    pub d: f64,
    pub xd: f64,
    pub xq: f64,
    pub xd_p: f64,
    pub xq_p: f64,
    pub td0_p: f64,
    pub tq0_p: f64,
    pub exciter: ExciterSpec,
}

/// Induction motor equivalent circuit, per-unit on the motor's own rating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotorSpec {
    pub rs: f64,
    pub xs: f64,
    pub xm: f64,
    pub rr: f64,
    pub xr: f64,
    pub h_m: f64,
    /// Mechanical torque at synchronous speed; load torque is
    /// `load_torque * (1 - slip)^torque_exponent`.
    pub load_torque: f64,
    pub torque_exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub bus: BusId,
    pub p0: f64,
    pub q0: f64,
    #[serde(default)]
    pub motor_fraction: f64,
    /// Constant impedance / current / power weights of the static part.
    pub zip: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motor: Option<MotorSpec>,
    pub initial_mw: f64,
}

impl LoadSpec {
    pub fn motor_mw(&self, base_mva: f64) -> f64 {
        if self.motor.is_some() {
            self.motor_fraction * self.p0 * base_mva
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub zone_id: u32,
    pub name: String,
    pub member_buses: BTreeSet<BusId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowCase {
    pub case_id: String,
    #[serde(rename = "base_mva")]
    pub system_mva_base: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub machines: Vec<MachineSpec>,
    pub loads: Vec<LoadSpec>,
    pub zones: Vec<Zone>,
}

/// Minimum motor MW for a load bus to be treated as controllable.
pub const DEFAULT_MOTOR_MW_THRESHOLD: f64 = 50.0;

impl PowerFlowCase {
    pub fn from_json(text: &str) -> Result<Self> {
        let case: PowerFlowCase = serde_json::from_str(text)?;
        case.validate()?;
        Ok(case)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case serializes")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn bus_index(&self) -> HashMap<BusId, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn bus(&self, id: BusId) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    pub fn slack_bus(&self) -> &Bus {
        self.buses
            .iter()
            .find(|b| b.kind == BusKind::Slack)
            .expect("validated case has a slack bus")
    }

    pub fn zone_of(&self, bus: BusId) -> Option<u32> {
        self.zones
            .iter()
            .find(|z| z.member_buses.contains(&bus))
            .map(|z| z.zone_id)
    }

    pub fn total_load_p(&self) -> f64 {
        self.loads.iter().map(|l| l.p0).sum()
    }

    /// Load buses carrying at least `threshold_mw` of motor load, in case order.
    pub fn controllable_load_buses(&self, threshold_mw: f64) -> Vec<BusId> {
        self.loads
            .iter()
            .filter(|l| l.motor_mw(self.system_mva_base) >= threshold_mw)
            .map(|l| l.bus)
            .collect()
    }

    /// Checks every structural invariant; reports the first violation.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        if !(self.system_mva_base > 0.0) {
            return fail("base_mva must be positive".into());
        }
        let mut seen = BTreeSet::new();
        for b in &self.buses {
            if !seen.insert(b.id) {
                return fail(format!("duplicate bus {}", b.id));
            }
            if !(b.voltage_kv > 0.0) {
                return fail(format!("bus {}: voltage_kv must be positive", b.id));
            }
            match (b.kind, b.v_set) {
                (BusKind::Pq, _) => {}
                (_, None) => return fail(format!("bus {}: v_set required for slack/PV", b.id)),
                (_, Some(v)) if !(0.9..=1.1).contains(&v) => {
                    return fail(format!("bus {}: v_set {} outside [0.9, 1.1]", b.id, v))
                }
                _ => {}
            }
        }
        let slacks = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slacks != 1 {
            return fail(format!("expected exactly one slack bus, found {slacks}"));
        }
        let known = |id: BusId| seen.contains(&id);
        for br in &self.branches {
            for id in [br.from, br.to] {
                if !known(id) {
                    return fail(format!("unknown bus {id}"));
                }
            }
            if br.x == 0.0 {
                return fail(format!("branch {}-{}: zero reactance", br.from, br.to));
            }
            if !(br.tap > 0.0) {
                return fail(format!("branch {}-{}: tap must be positive", br.from, br.to));
            }
        }
        for m in &self.machines {
            if !known(m.bus) {
                return fail(format!("unknown bus {}", m.bus));
            }
            if !(m.h > 0.0) {
                return fail(format!("machine {}: inertia must be positive", m.id));
            }
            if !(m.xd >= m.xd_p && m.xd_p > 0.0 && m.xq >= m.xq_p && m.xq_p > 0.0) {
                return fail(format!("machine {}: reactances must satisfy x >= x' > 0", m.id));
            }
            if !(m.td0_p > 0.0 && m.tq0_p > 0.0 && m.exciter.ta > 0.0) {
                return fail(format!("machine {}: time constants must be positive", m.id));
            }
        }
        let mut load_buses = BTreeSet::new();
        for l in &self.loads {
            if !known(l.bus) {
                return fail(format!("unknown bus {}", l.bus));
            }
            if !load_buses.insert(l.bus) {
                return fail(format!("bus {}: more than one load", l.bus));
            }
            if !(0.0..=1.0).contains(&l.motor_fraction) {
                return fail(format!("load {}: motor_fraction outside [0, 1]", l.bus));
            }
            if l.motor_fraction > 0.0 && l.motor.is_none() {
                return fail(format!("load {}: motor_fraction > 0 without motor data", l.bus));
            }
            let zsum: f64 = l.zip.iter().sum();
            if (zsum - 1.0).abs() > 1e-9 || l.zip.iter().any(|w| *w < 0.0) {
                return fail(format!("load {}: zip weights must be non-negative and sum to 1", l.bus));
            }
            let mw = l.p0 * self.system_mva_base;
            if (l.initial_mw - mw).abs() > 1e-9 * mw.abs().max(1.0) {
                return fail(format!("load {}: initial_mw != p0 * base_mva", l.bus));
            }
            if let Some(m) = &l.motor {
                if !(m.h_m > 0.0 && m.rr > 0.0 && m.xm > 0.0 && m.torque_exponent >= 0.0) {
                    return fail(format!("load {}: invalid motor parameters", l.bus));
                }
            }
        }
        let mut zoned = BTreeSet::new();
        for z in &self.zones {
            for b in &z.member_buses {
                if !known(*b) {
                    return fail(format!("unknown bus {b}"));
                }
                if !zoned.insert(*b) {
                    return fail(format!("bus {b} belongs to more than one zone"));
                }
            }
        }
        for bus in self.controllable_load_buses(DEFAULT_MOTOR_MW_THRESHOLD) {
            if !zoned.contains(&bus) {
                return fail(format!("controllable load bus {bus} is not in any zone"));
            }
        }
        if !self.is_connected() {
            return fail("network graph is disconnected".into());
        }
        Ok(())
    }

    fn is_connected(&self) -> bool {
        if self.buses.is_empty() {
            return false;
        }
        let idx = self.bus_index();
        let mut adj = vec![Vec::new(); self.buses.len()];
        for br in self.branches.iter().filter(|b| b.status) {
            let (f, t) = (idx[&br.from], idx[&br.to]);
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut seen = vec![false; self.buses.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.iter().all(|s| *s)
    }

    /// Hop distances from `from` over in-service branches.
    pub fn hop_distances(&self, from: BusId) -> HashMap<BusId, usize> {
        let idx = self.bus_index();
        let mut adj = vec![Vec::new(); self.buses.len()];
        for br in self.branches.iter().filter(|b| b.status) {
            let (f, t) = (idx[&br.from], idx[&br.to]);
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut dist = HashMap::new();
        let Some(&start) = idx.get(&from) else {
            return dist;
        };
        let mut queue = VecDeque::from([(start, 0usize)]);
        let mut seen = vec![false; self.buses.len()];
        seen[start] = true;
        while let Some((u, d)) = queue.pop_front() {
            dist.insert(self.buses[u].id, d);
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back((v, d + 1));
                }
            }
        }
        dist
    }
}

/// Reads and validates a JSON case file.
pub fn load_case(path: impl AsRef<Path>) -> Result<PowerFlowCase> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PowerFlowCase::from_json(&text)
}
