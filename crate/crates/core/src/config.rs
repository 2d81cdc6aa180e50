//! Run configuration in TOML. Every section and key is optional; missing
//! values take the documented defaults and unknown keys are rejected.
//!
//! ```toml
//! seeds = [0, 1, 2, 3, 4]
//! episodes = 30
//! noise = true
//! baseline = false
//! out_dir = "runs/latest"
//!
//! [hankel]
//! order = 20
//! ridge = 1e-6
//!
//! [td3]
//! policy_delay = 4
//! ```
//!
//! The other sections are `[tank]`, `[pid.level]`, `[pid.flow]`,
//! `[episode]`, `[excitation]` and `[q]`, mirroring the fields of
//! [`TankParams`], [`PidConfig`], [`EpisodeSchedule`], [`ExcitationConfig`]
//! and [`QParameterConfig`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{EpisodeSchedule, ExcitationConfig, PidConfig, TankParams};
use crate::error::{Error, Result};
use crate::rl::Td3Config;
use crate::stablenet::QParameterConfig;

/// Internal-model construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HankelConfig {
    /// Window length `L`.
    pub order: usize,
    /// Tikhonov weight of the window solve.
    pub ridge: f64,
}

impl Default for HankelConfig {
    fn default() -> Self {
        Self {
            order: 20,
            ridge: crate::behavior::DEFAULT_RIDGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    /// Training episodes per seed.
    pub episodes: usize,
    /// Measurement noise in training and evaluation. Collection is noisy only
    /// when `excitation.noise` is also set.
    pub noise: bool,
    /// Train the unconstrained feedforward actor instead of the Q parameter.
    pub baseline: bool,
    /// Episodes between parameter checkpoints; the final policy is always
    /// checkpointed.
    pub checkpoint_every: usize,
    /// States sampled per checkpoint for the decrease certificate.
    pub certificate_samples: usize,
    /// Seed of the excitation sequence and of its measurement noise, if any.
    pub collect_seed: u64,
    pub out_dir: PathBuf,
    /// Excitation record; defaults to `trajectory.csv` inside `out_dir`.
    pub trajectory: Option<PathBuf>,
    pub tank: TankParams,
    pub pid: PidConfig,
    pub episode: EpisodeSchedule,
    pub excitation: ExcitationConfig,
    pub hankel: HankelConfig,
    pub td3: Td3Config,
    pub q: QParameterConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3, 4],
            episodes: 30,
            noise: true,
            baseline: false,
            checkpoint_every: 10,
            certificate_samples: 1000,
            collect_seed: 12345,
            out_dir: PathBuf::from("runs/latest"),
            trajectory: None,
            tank: TankParams::default(),
            pid: PidConfig::default(),
            episode: EpisodeSchedule::default(),
            excitation: ExcitationConfig::default(),
            hankel: HankelConfig::default(),
            td3: Td3Config::default(),
            q: QParameterConfig::default(),
        }
    }
}

pub const SNAPSHOT_FILE: &str = "config.snapshot";

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Fully resolved configuration, defaults included.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(SNAPSHOT_FILE);
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn trajectory_path(&self) -> PathBuf {
        self.trajectory
            .clone()
            .unwrap_or_else(|| self.out_dir.join("trajectory.csv"))
    }

    pub fn validate(&self) -> Result<()> {
        self.tank.validate()?;
        self.episode.validate(&self.tank)?;
        self.td3.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.hankel.order == 0 {
            return Err(Error::Config("hankel.order must be at least 1".into()));
        }
        if !(self.hankel.ridge >= 0.0 && self.hankel.ridge.is_finite()) {
            return Err(Error::Config(format!(
                "hankel.ridge must be nonnegative, got {}",
                self.hankel.ridge
            )));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be at least 1".into()));
        }
        let q = &self.q;
        if q.state_dim == 0 || q.hidden == 0 || !(q.beta > 0.0 && q.beta < 1.0) || !(q.eps > 0.0) {
            return Err(Error::Config(
                "q needs positive state_dim, hidden and eps, and beta in (0, 1)".into(),
            ));
        }
        let level_ok = |l: f64| l >= 0.0 && l <= self.tank.level_max;
        if !level_ok(self.excitation.level) {
            return Err(Error::Config(format!(
                "excitation.level {} outside [0, {}]",
                self.excitation.level, self.tank.level_max
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn snapshot_reloads_identically() {
        let cfg = RunConfig::from_toml(
            "seeds = [3, 9]\nepisodes = 4\nnoise = false\n[td3]\ngamma = 0.9\n[pid.level]\nkp = 20.0\nki = 0.3\n",
        )
        .unwrap();
        assert_eq!(cfg.seeds, vec![3, 9]);
        assert_eq!(cfg.pid.level.kp, 20.0);
        assert_eq!(cfg.pid.flow, PidConfig::default().flow);
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["episodez = 3", "[td3]\nlr = 0.1", "[tank]\nradius = 1.0"] {
            assert!(matches!(RunConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            "seeds = []",
            "seeds = [1, 1]",
            "[hankel]\norder = 0",
            "[q]\nbeta = 1.0",
            "[td3]\ngamma = 2.0",
            "[tank]\ndt = -1.0",
        ] {
            assert!(RunConfig::from_toml(text).is_err(), "{text}");
        }
    }
}
