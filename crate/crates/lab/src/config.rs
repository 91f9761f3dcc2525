//! Sectioned TOML configuration with every default set to the reference
//! training configuration.

use std::path::{Path, PathBuf};

use punctlab_core::agents::{AgentKind, AgentSpec};
use punctlab_core::sim::SimConfig;
use punctlab_core::trainer::{ProbeTransition, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub episodes: usize,
    pub steps_per_episode: usize,
    /// Extra parameter snapshots every this many episodes; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            episodes: 30,
            steps_per_episode: 3000,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub reps: usize,
    pub out_dir: PathBuf,
    /// Worker threads for independent repetitions; 0 uses every core.
    pub parallel: usize,
    pub probe_reps: usize,
    pub probe_cap: usize,
    pub probe_transition: ProbeTransition,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            reps: 3,
            out_dir: PathBuf::from("runs"),
            parallel: 0,
            probe_reps: 10,
            probe_cap: 10_000,
            probe_transition: ProbeTransition::Terminal,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    pub sim: SimConfig,
    pub agent: AgentSpec,
    pub train: TrainSection,
    pub run: RunSection,
}

impl LabConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: LabConfig = toml::from_str(text).map_err(|e| LabError::Config {
            path: origin.to_path_buf(),
            message: e.to_string().trim_end().to_string(),
        })?;
        cfg.validate(origin)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Loads `path`, or the defaults when no path is given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    fn validate(&self, origin: &Path) -> Result<()> {
        let wrap = |e: punctlab_core::Error| LabError::Config {
            path: origin.to_path_buf(),
            message: e.to_string(),
        };
        self.train_config(self.agent.kind, self.run.seed)
            .validate()
            .map_err(wrap)?;
        if self.run.reps == 0 {
            return Err(LabError::Config {
                path: origin.to_path_buf(),
                message: "run.reps must be at least 1".into(),
            });
        }
        Ok(())
    }

    pub fn train_config(&self, kind: AgentKind, seed: u64) -> TrainConfig {
        TrainConfig {
            episodes: self.train.episodes,
            steps_per_episode: self.train.steps_per_episode,
            seed,
            agent: AgentSpec {
                kind,
                ..self.agent.clone()
            },
            sim: self.sim.clone(),
            checkpoint_every: self.train.checkpoint_every,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = LabConfig::parse("", Path::new("x.toml")).unwrap();
        assert_eq!(cfg, LabConfig::default());
        assert_eq!(cfg.train.episodes, 30);
        assert_eq!(cfg.train.steps_per_episode, 3000);
        assert_eq!(cfg.run.probe_cap, 10_000);
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let err = LabConfig::parse("[sim]\np_occupy = 0.5\nbogus = 1\n", Path::new("c.toml"))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("bogus"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn invalid_value_is_rejected() {
        let err = LabConfig::parse("[sim]\np_request = 1.5\n", Path::new("c.toml")).unwrap_err();
        assert!(err.to_string().contains("probabilities"));
    }

    #[test]
    fn enum_fields_parse_from_snake_case() {
        let text = "[agent]\nkind = \"vb\"\nloss_noise = \"selection\"\nme_sign = \"as_written\"\n[run]\nprobe_transition = \"bootstrapped\"\n";
        let cfg = LabConfig::parse(text, Path::new("e.toml")).unwrap();
        assert_eq!(cfg.agent.kind, AgentKind::Vb);
        assert_eq!(
            cfg.agent.loss_noise,
            punctlab_core::agents::LossNoise::Selection
        );
        assert_eq!(cfg.run.probe_transition, ProbeTransition::Bootstrapped);
    }

    #[test]
    fn toml_echo_round_trips() {
        let mut cfg = LabConfig::default();
        cfg.agent.kind = AgentKind::Me;
        cfg.run.seed = 42;
        cfg.sim.p_critical = 0.25;
        let back = LabConfig::parse(&cfg.to_toml(), Path::new("m.toml")).unwrap();
        assert_eq!(back, cfg);
    }
}
