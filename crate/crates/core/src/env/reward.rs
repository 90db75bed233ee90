//! Voltage-recovery envelope and per-step reward.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeWindow {
    /// Window end, seconds after fault clearing.
    pub until: f64,
    pub v_min: f64,
}

/// Minimum voltage required as a function of time since clearing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Envelope {
    pub windows: Vec<EnvelopeWindow>,
    pub final_v: f64,
}

impl Default for Envelope {
    fn default() -> Self {
        let w = |until, v_min| EnvelopeWindow { until, v_min };
        Envelope {
            windows: vec![w(0.33, 0.7), w(0.5, 0.8), w(1.5, 0.9)],
            final_v: 0.95,
        }
    }
}

impl Envelope {
    pub fn v_min(&self, tau: f64) -> f64 {
        self.windows
            .iter()
            .find(|w| tau < w.until - 1e-9)
            .map_or(self.final_v, |w| w.v_min)
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut last = 0.0;
        for w in &self.windows {
            if w.until <= last {
                return Err("window ends must increase".into());
            }
            last = w.until;
        }
        if !(self.final_v > 0.0 && self.final_v <= 1.1) {
            return Err("final voltage out of range".into());
        }
        Ok(())
    }

    /// Sum of shortfalls below the envelope at `tau`.
    pub fn shortfall(&self, tau: f64, voltages: &[f64]) -> f64 {
        let env = self.v_min(tau);
        voltages.iter().map(|v| (env - v).max(0.0)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Per pu shortfall per monitored bus per step.
    pub c1: f64,
    /// Per unit fraction of controllable load shed.
    pub c2: f64,
    /// Per invalid action component.
    pub c3: f64,
    pub r_fail: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            c1: 5.0,
            c2: 100.0,
            c3: 1.0,
            r_fail: 1000.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        if [self.c1, self.c2, self.c3, self.r_fail].iter().any(|c| !(*c >= 0.0)) {
            return Err("coefficients must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub voltage_penalty: f64,
    pub shed_penalty: f64,
    pub invalid_penalty: f64,
    pub terminal_penalty: f64,
}

impl RewardBreakdown {
    pub fn total(&self) -> f64 {
        self.voltage_penalty + self.shed_penalty + self.invalid_penalty + self.terminal_penalty
    }

    pub fn accumulate(&mut self, other: &RewardBreakdown) {
        self.voltage_penalty += other.voltage_penalty;
        self.shed_penalty += other.shed_penalty;
        self.invalid_penalty += other.invalid_penalty;
        self.terminal_penalty += other.terminal_penalty;
    }
}

/// Episode status after a control step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Running,
    /// Episode ended with every monitored voltage at or above the final level.
    Healthy,
    /// Episode ended below the final level or in collapse.
    Failed,
}

/// Reward of one control step.
///
/// `voltages` are the monitored magnitudes at the control instant, `tau`
/// the time since fault clearing, `shed_mw` the load removed during the
/// step (policy and relays) and `total_mw` the initial controllable load.
pub fn compute_reward(
    cfg: &RewardConfig,
    envelope: &Envelope,
    voltages: &[f64],
    tau: f64,
    shed_mw: f64,
    total_mw: f64,
    invalid: usize,
    termination: Termination,
) -> RewardBreakdown {
    let shed_fraction = if total_mw > 0.0 { shed_mw / total_mw } else { 0.0 };
    RewardBreakdown {
        voltage_penalty: -cfg.c1 * envelope.shortfall(tau, voltages),
        shed_penalty: -cfg.c2 * shed_fraction,
        invalid_penalty: -cfg.c3 * invalid as f64,
        terminal_penalty: if termination == Termination::Failed { -cfg.r_fail } else { 0.0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reward(voltages: &[f64], tau: f64, shed: f64, invalid: usize, term: Termination) -> RewardBreakdown {
        compute_reward(&RewardConfig::default(), &Envelope::default(), voltages, tau, shed, 1000.0, invalid, term)
    }

    #[test]
    fn envelope_windows() {
        let e = Envelope::default();
        assert_eq!(e.v_min(0.0), 0.7);
        assert_eq!(e.v_min(0.32), 0.7);
        assert_eq!(e.v_min(0.33), 0.8);
        assert_eq!(e.v_min(0.49), 0.8);
        assert_eq!(e.v_min(0.5), 0.9);
        assert_eq!(e.v_min(1.5), 0.95);
        assert_eq!(e.v_min(8.0), 0.95);
    }

    #[test]
    fn healthy_step_is_zero() {
        let r = reward(&[1.0, 0.99], 2.0, 0.0, 0, Termination::Healthy);
        assert_eq!(r.total(), 0.0);
    }

    #[test]
    fn single_violation_hand_value() {
        let r = reward(&[0.65, 1.0], 0.1, 0.0, 0, Termination::Running);
        assert!((r.voltage_penalty + 0.25).abs() < 1e-12);
        assert_eq!(r.total(), r.voltage_penalty);
    }

    #[test]
    fn shed_and_failure_terms() {
        let r = reward(&[1.0], 2.0, 200.0, 0, Termination::Running);
        assert!((r.shed_penalty + 20.0).abs() < 1e-12);
        let r = reward(&[1.0], 2.0, 0.0, 3, Termination::Failed);
        assert_eq!(r.invalid_penalty, -3.0);
        assert_eq!(r.terminal_penalty, -1000.0);
    }

    #[test]
    fn deeper_violation_never_helps() {
        let mut last = 0.0;
        for k in 0..50 {
            let v = 1.0 - 0.02 * k as f64;
            let r = reward(&[v, 0.97], 0.6, 10.0, 1, Termination::Running).total();
            assert!(r <= last);
            last = r;
        }
    }
}
