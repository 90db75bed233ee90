//! Linear policy over normalized observations and a latent context.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::RunningStats;
use crate::error::{Error, Result};

pub const DEFAULT_OBS_EPS: f64 = 1e-2;

/// `a = W [ (obs - mean) / sqrt(var + eps) ; z ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub act_dim: usize,
    pub obs_dim: usize,
    /// Row-major `act_dim x (obs_dim + z.len())`.
    pub w: Vec<f64>,
    pub stats: RunningStats,
    pub z: Vec<f64>,
    pub eps: f64,
    pub version: u64,
}

impl Policy {
    /// Zero weights, identity statistics, latent context of ones.
    pub fn new(obs_dim: usize, act_dim: usize, z_dim: usize) -> Self {
        Policy {
            act_dim,
            obs_dim,
            w: vec![0.0; act_dim * (obs_dim + z_dim)],
            stats: RunningStats::new(obs_dim),
            z: vec![1.0; z_dim],
            eps: DEFAULT_OBS_EPS,
            version: 0,
        }
    }

    pub fn z_dim(&self) -> usize {
        self.z.len()
    }

    pub fn in_dim(&self) -> usize {
        self.obs_dim + self.z.len()
    }

    /// Number of searched parameters: weights then latent context.
    pub fn n_params(&self) -> usize {
        self.w.len() + self.z.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.w.clone();
        p.extend_from_slice(&self.z);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let nw = self.w.len();
        self.w.copy_from_slice(&p[..nw]);
        self.z.copy_from_slice(&p[nw..]);
    }

    pub fn with_params(&self, p: &[f64]) -> Policy {
        let mut out = self.clone();
        out.set_params(p);
        out
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.w[row * self.in_dim() + col]
    }

    pub fn set_weight(&mut self, row: usize, col: usize, v: f64) {
        let d = self.in_dim();
        self.w[row * d + col] = v;
    }

    /// Normalized input vector (observation features then latent context).
    pub fn features(&self, obs: &[f64]) -> Result<Vec<f64>> {
        if obs.len() != self.obs_dim {
            return Err(Error::Dimension {
                expected: self.obs_dim,
                got: obs.len(),
            });
        }
        let var = self.stats.variance();
        let mut x: Vec<f64> = obs
            .iter()
            .zip(&self.stats.mean)
            .zip(&var)
            .map(|((o, m), v)| (o - m) / (v + self.eps).sqrt())
            .collect();
        x.extend_from_slice(&self.z);
        Ok(x)
    }

    /// Raw action; clipping and masking belong to the environment.
    pub fn act(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let x = self.features(obs)?;
        let d = self.in_dim();
        Ok((0..self.act_dim)
            .map(|r| self.w[r * d..(r + 1) * d].iter().zip(&x).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::Other(format!("invalid policy: {reason}")));
        if self.w.len() != self.act_dim * self.in_dim() {
            return bad(format!("weight length {} for {}x{}", self.w.len(), self.act_dim, self.in_dim()));
        }
        if self.stats.dim() != self.obs_dim || self.stats.m2.len() != self.obs_dim || self.stats.count.len() != self.obs_dim {
            return bad("statistics dimension".into());
        }
        if self.w.iter().chain(&self.z).chain(&self.stats.mean).any(|v| !v.is_finite()) {
            return bad("non-finite entry".into());
        }
        if self.stats.m2.iter().any(|v| !(*v >= 0.0)) || !(self.eps >= 0.0) {
            return bad("negative variance".into());
        }
        Ok(())
    }
}

/// Policy plus the hashes that tie it to an environment layout and a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub policy: Policy,
    pub spec_hash: String,
    pub config_hash: String,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        ck.policy.validate()?;
        Ok(ck)
    }

    /// Rejects a checkpoint trained for a different layout.
    pub fn check_spec(&self, spec_hash: &str) -> Result<()> {
        if self.spec_hash != spec_hash {
            return Err(Error::Config {
                key: "checkpoint".into(),
                reason: "environment layout differs from the one the policy was trained on".into(),
            });
        }
        Ok(())
    }
}
