//! Definite-time under-voltage load shedding relays.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UvlsStage {
    pub v_threshold: f64,
    pub delay: f64,
    pub shed_fraction_of_initial: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UvlsSettings {
    pub stages: Vec<UvlsStage>,
    pub rearm: bool,
    /// Firings allowed per stage when `rearm` is set.
    pub max_firings: u32,
    pub rearm_delay: f64,
    /// Extra delay when the relays act as backup to another controller.
    pub backup_delay_offset: f64,
}

impl Default for UvlsSettings {
    fn default() -> Self {
        UvlsSettings {
            stages: vec![UvlsStage {
                v_threshold: 0.90,
                delay: 0.33,
                shed_fraction_of_initial: 0.20,
            }],
            rearm: true,
            max_firings: 3,
            rearm_delay: 0.33,
            backup_delay_offset: 1.0,
        }
    }
}

impl UvlsSettings {
    pub fn validate(&self) -> Result<(), String> {
        for (k, s) in self.stages.iter().enumerate() {
            if s.v_threshold > 1.0 {
                return Err(format!("stage {k}: threshold above 1.0 pu"));
            }
            if !(s.delay > 0.0) {
                return Err(format!("stage {k}: delay must be positive"));
            }
            if !(0.0..=1.0).contains(&s.shed_fraction_of_initial) {
                return Err(format!("stage {k}: shed fraction outside [0, 1]"));
            }
        }
        if self.rearm && !(self.rearm_delay > 0.0) {
            return Err("rearm delay must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelayMode {
    /// Primary settings, e.g. the rule-based baseline.
    Primary,
    /// Conservative backup: every delay extended by `backup_delay_offset`.
    Backup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StageTimer {
    below_since: Option<f64>,
    firings: u32,
}

/// Relay state for a set of protected loads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UvlsRelays {
    pub settings: UvlsSettings,
    pub mode: RelayMode,
    /// Indices into the simulator's load list.
    pub protected: Vec<usize>,
    timers: Vec<Vec<StageTimer>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShedCommand {
    pub load: usize,
    pub fraction: f64,
}

impl UvlsRelays {
    pub fn new(settings: UvlsSettings, mode: RelayMode, protected: Vec<usize>) -> Self {
        let timers = protected
            .iter()
            .map(|_| {
                settings
                    .stages
                    .iter()
                    .map(|_| StageTimer {
                        below_since: None,
                        firings: 0,
                    })
                    .collect()
            })
            .collect();
        UvlsRelays {
            settings,
            mode,
            protected,
            timers,
        }
    }

    fn offset(&self) -> f64 {
        match self.mode {
            RelayMode::Primary => 0.0,
            RelayMode::Backup => self.settings.backup_delay_offset,
        }
    }

    /// Seconds each stage timer has accumulated, per protected load.
    pub fn timer_values(&self, t: f64) -> Vec<Vec<f64>> {
        self.timers
            .iter()
            .map(|stages| {
                stages
                    .iter()
                    .map(|s| s.below_since.map_or(0.0, |t0| t - t0))
                    .collect()
            })
            .collect()
    }

    /// One relay scan at time `t`; `voltage(load)` returns the local
    /// voltage magnitude of a protected load.
    pub fn scan(&mut self, t: f64, voltage: impl Fn(usize) -> f64) -> Vec<ShedCommand> {
        let offset = self.offset();
        let max_firings = if self.settings.rearm {
            self.settings.max_firings.max(1)
        } else {
            1
        };
        let mut out = Vec::new();
        for (p, &load) in self.protected.iter().enumerate() {
            let v = voltage(load);
            for (k, stage) in self.settings.stages.iter().enumerate() {
                let timer = &mut self.timers[p][k];
                if timer.firings >= max_firings {
                    continue;
                }
                if v >= stage.v_threshold {
                    timer.below_since = None;
                    continue;
                }
                let since = *timer.below_since.get_or_insert(t);
                let delay = if timer.firings == 0 {
                    stage.delay
                } else {
                    self.settings.rearm_delay
                } + offset;
                if t - since >= delay - 1e-9 {
                    timer.firings += 1;
                    timer.below_since = Some(t);
                    out.push(ShedCommand {
                        load,
                        fraction: stage.shed_fraction_of_initial,
                    });
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DT: f64 = 1.0 / 240.0;

    fn run(mode: RelayMode, v_of_t: impl Fn(f64) -> f64, t_end: f64) -> Vec<(f64, ShedCommand)> {
        let mut relays = UvlsRelays::new(UvlsSettings::default(), mode, vec![0]);
        let mut fired = Vec::new();
        let n = (t_end / DT).round() as usize;
        for k in 0..=n {
            let t = k as f64 * DT;
            for c in relays.scan(t, |_| v_of_t(t)) {
                fired.push((t, c));
            }
        }
        fired
    }

    #[test]
    fn healthy_voltage_never_trips() {
        assert!(run(RelayMode::Primary, |_| 0.9, 10.0).is_empty());
        assert!(run(RelayMode::Primary, |t| 0.95 + 0.05 * t.sin(), 10.0).is_empty());
    }

    #[test]
    fn first_trip_after_delay() {
        let fired = run(RelayMode::Primary, |t| if t >= 1.2 - 1e-12 { 0.85 } else { 1.0 }, 1.9);
        assert!(!fired.is_empty());
        let (t, c) = fired[0];
        assert!((t - 1.53).abs() <= DT, "fired at {t}");
        assert_eq!(c.fraction, 0.2);
    }

    #[test]
    fn backup_offset_delays_trip() {
        let fired = run(RelayMode::Backup, |t| if t >= 1.2 - 1e-12 { 0.85 } else { 1.0 }, 3.0);
        assert!((fired[0].0 - 2.53).abs() <= DT, "fired at {}", fired[0].0);
    }

    #[test]
    fn rearm_limits_firings() {
        let fired = run(RelayMode::Primary, |t| if t >= 1.0 { 0.5 } else { 1.0 }, 10.0);
        assert_eq!(fired.len(), 3);
        assert!((fired[1].0 - fired[0].0 - 0.33).abs() <= DT);
    }

    #[test]
    fn recovery_resets_timer() {
        // dips of 0.2 s separated by recovery never accumulate to 0.33 s
        let fired = run(RelayMode::Primary, |t| if (t % 0.5) < 0.2 { 0.8 } else { 1.0 }, 10.0);
        assert!(fired.is_empty());
    }
}
