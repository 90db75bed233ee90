//! Episodic load-shedding control environment over the dynamic simulator.

mod episode;
mod reward;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{UvlsSettings, DEFAULT_DT};
use crate::error::{Error, Result};
use crate::grid::{BusId, PowerFlowCase, DEFAULT_MOTOR_MW_THRESHOLD};

pub use episode::{CaseLibrary, GridEnv, PreparedCase, StepInfo, TaskResult, TraceRow};
pub use reward::{compute_reward, Envelope, EnvelopeWindow, RewardBreakdown, RewardConfig, Termination};

/// One episode definition: an operating point plus a fault.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub scenario_id: String,
    pub case_id: String,
    pub fault_bus: BusId,
    #[serde(rename = "fault_duration_s")]
    pub fault_duration: f64,
}

pub const MIN_FAULT_DURATION: f64 = 3.0 / 60.0;
pub const MAX_FAULT_DURATION: f64 = 25.0 / 60.0;

impl Scenario {
    pub fn new(case_id: &str, fault_bus: BusId, fault_duration: f64) -> Self {
        Scenario {
            scenario_id: format!("{case_id}/b{fault_bus}/d{:.4}", fault_duration),
            case_id: case_id.to_string(),
            fault_bus,
            fault_duration,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(MIN_FAULT_DURATION - 1e-9..=MAX_FAULT_DURATION + 1e-9).contains(&self.fault_duration) {
            return Err(Error::Scenario {
                scenario: self.scenario_id.clone(),
                reason: format!("fault duration {} s outside [3, 25] cycles", self.fault_duration),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub fault_start: f64,
    pub episode_len: f64,
    pub control_dt: f64,
    pub dt_sim: f64,
    pub act_high: f64,
    pub v_mask: f64,
    /// Buses at or above this voltage class are monitored.
    pub monitored_kv_min: f64,
    pub motor_mw_threshold: f64,
    pub reward: RewardConfig,
    pub envelope: Envelope,
    pub uvls: UvlsSettings,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            fault_start: 1.0,
            episode_len: 10.0,
            control_dt: 0.1,
            dt_sim: DEFAULT_DT,
            act_high: 0.2,
            v_mask: 0.95,
            monitored_kv_min: 115.0,
            motor_mw_threshold: DEFAULT_MOTOR_MW_THRESHOLD,
            reward: RewardConfig::default(),
            envelope: Envelope::default(),
            uvls: UvlsSettings::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| {
            Err(Error::Config {
                key: format!("env.{key}"),
                reason: reason.into(),
            })
        };
        let ratio = |a: f64, b: f64| {
            let n = (a / b).round();
            n >= 1.0 && (n * b - a).abs() < 1e-9
        };
        if !(self.dt_sim > 0.0) {
            return bad("dt_sim", "must be positive");
        }
        if !ratio(self.control_dt, self.dt_sim) {
            return bad("control_dt", "must be a positive multiple of dt_sim");
        }
        if !ratio(self.fault_start, self.control_dt) {
            return bad("fault_start", "must lie on the control grid");
        }
        if !ratio(self.episode_len, self.control_dt) || self.episode_len <= self.fault_start + MAX_FAULT_DURATION {
            return bad("episode_len", "must lie on the control grid after the longest fault");
        }
        if !(self.act_high > 0.0 && self.act_high <= 1.0) {
            return bad("act_high", "must be in (0, 1]");
        }
        if let Err(e) = self.uvls.validate() {
            return bad("uvls", &e);
        }
        self.envelope.validate().or_else(|e| bad("envelope", &e))?;
        self.reward.validate().or_else(|e| bad("reward", &e))
    }

    pub fn steps_per_control(&self) -> usize {
        (self.control_dt / self.dt_sim).round() as usize
    }
}

/// Observation/action layout of an environment, derived from a case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub case_id: String,
    /// Zones included; all zones when the spec covers the full system.
    pub zones: Vec<u32>,
    pub monitored_buses: Vec<BusId>,
    pub controllable_buses: Vec<BusId>,
    /// For each controllable bus, the index of its nearest monitored bus.
    pub mask_source: Vec<usize>,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub act_low: f64,
    pub act_high: f64,
    pub v_mask: f64,
    pub control_dt: f64,
    pub episode_len: f64,
    pub fault_start: f64,
}

impl EnvSpec {
    /// Spec over every zone of `case`.
    pub fn full(case: &PowerFlowCase, cfg: &EnvConfig) -> Result<Self> {
        let zones: Vec<u32> = case.zones.iter().map(|z| z.zone_id).collect();
        Self::for_zones(case, &zones, cfg)
    }

    pub fn for_zones(case: &PowerFlowCase, zones: &[u32], cfg: &EnvConfig) -> Result<Self> {
        for z in zones {
            if !case.zones.iter().any(|c| c.zone_id == *z) {
                return Err(Error::Other(format!("case has no zone {z}")));
            }
        }
        let in_zones = |bus: BusId| case.zone_of(bus).is_some_and(|z| zones.contains(&z));
        let monitored_buses: Vec<BusId> = case
            .buses
            .iter()
            .filter(|b| b.voltage_kv >= cfg.monitored_kv_min && in_zones(b.id))
            .map(|b| b.id)
            .collect();
        let controllable_buses: Vec<BusId> = case
            .controllable_load_buses(cfg.motor_mw_threshold)
            .into_iter()
            .filter(|b| in_zones(*b))
            .collect();
        if monitored_buses.is_empty() || controllable_buses.is_empty() {
            return Err(Error::Other(format!(
                "zones {zones:?} have no monitored or no controllable buses"
            )));
        }
        let mut mask_source = Vec::with_capacity(controllable_buses.len());
        for &c in &controllable_buses {
            let dist = case.hop_distances(c);
            let best = monitored_buses
                .iter()
                .enumerate()
                .min_by_key(|(k, m)| (dist.get(m).copied().unwrap_or(usize::MAX), *k))
                .map(|(k, _)| k)
                .expect("non-empty");
            mask_source.push(best);
        }
        Ok(EnvSpec {
            case_id: case.case_id.clone(),
            zones: zones.to_vec(),
            obs_dim: monitored_buses.len() + controllable_buses.len(),
            act_dim: controllable_buses.len(),
            monitored_buses,
            controllable_buses,
            mask_source,
            act_low: 0.0,
            act_high: cfg.act_high,
            v_mask: cfg.v_mask,
            control_dt: cfg.control_dt,
            episode_len: cfg.episode_len,
            fault_start: cfg.fault_start,
        })
    }

    /// Digest of the layout; guards checkpoints against dimension drift.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("spec serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Clips to the action bounds and zeroes components whose associated
    /// monitored voltage is healthy. Returns the masked action and the
    /// number of components zeroed by the mask.
    pub fn mask_action(&self, obs: &[f64], raw: &[f64]) -> Result<(Vec<f64>, usize)> {
        if raw.len() != self.act_dim {
            return Err(Error::Dimension {
                expected: self.act_dim,
                got: raw.len(),
            });
        }
        if obs.len() != self.obs_dim {
            return Err(Error::Dimension {
                expected: self.obs_dim,
                got: obs.len(),
            });
        }
        let mut invalid = 0;
        let out = raw
            .iter()
            .zip(&self.mask_source)
            .map(|(&a, &m)| {
                let a = if a.is_nan() { 0.0 } else { a.clamp(self.act_low, self.act_high) };
                if obs[m] >= self.v_mask {
                    if a > 0.0 {
                        invalid += 1;
                    }
                    0.0
                } else {
                    a
                }
            })
            .collect();
        Ok((out, invalid))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_spec() -> EnvSpec {
        EnvSpec {
            case_id: "toy".into(),
            zones: vec![1],
            monitored_buses: vec![10, 20],
            controllable_buses: vec![11, 21],
            mask_source: vec![0, 1],
            obs_dim: 4,
            act_dim: 2,
            act_low: 0.0,
            act_high: 0.2,
            v_mask: 0.95,
            control_dt: 0.1,
            episode_len: 10.0,
            fault_start: 1.0,
        }
    }

    #[test]
    fn mask_hand_example() {
        let spec = toy_spec();
        let (a, invalid) = spec.mask_action(&[0.80, 0.99, 1.0, 1.0], &[0.1, 0.1]).unwrap();
        assert_eq!(a, vec![0.1, 0.0]);
        assert_eq!(invalid, 1);
    }

    #[test]
    fn mask_clips_and_saturates() {
        let spec = toy_spec();
        let (a, _) = spec.mask_action(&[0.6, 0.7, 1.0, 1.0], &[0.3, -0.5]).unwrap();
        assert_eq!(a, vec![0.2, 0.0]);
        let (a, invalid) = spec.mask_action(&[0.96, 1.01, 1.0, 1.0], &[0.3, 0.05]).unwrap();
        assert_eq!(a, vec![0.0, 0.0]);
        assert_eq!(invalid, 2);
    }

    #[test]
    fn mask_rejects_wrong_length() {
        let spec = toy_spec();
        assert!(matches!(
            spec.mask_action(&[0.6, 0.7, 1.0, 1.0], &[0.1]),
            Err(Error::Dimension { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn large_system_dimension_bookkeeping() {
        assert_eq!(468 + 258, 726);
    }

    #[test]
    fn default_config_is_valid() {
        EnvConfig::default().validate().unwrap();
    }
}
