//! Run configuration: a versioned TOML schema bundling every tunable of
//! the simulator, reward shaping, controllers, driver models and trainer,
//! with a full-scale preset and a reduced desk-scale preset.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::PidConfig;
use crate::error::{Error, Result};
use crate::learner::stage::{Stage, StageConfig};
use crate::learner::td3::Td3Config;
use crate::models::{NilssonParams, StackelbergParams};
use crate::rewards::RewardConfig;
use crate::sim::EpisodeConfig;
use crate::world::{DynamicsConfig, MapSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Reduced scale for laptop-class runs.
    Desk,
    /// Full-scale parameterization.
    Full,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected desk|full)"
            ))),
        }
    }
}

/// Scalar run knobs that are not part of a component's own config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSection {
    /// Training or simulation rounds (episodes).
    pub rounds: u64,
    pub bv_count: u32,
    /// Episode speed limit, m/s.
    pub v_max: f64,
    /// Round length cap, steps.
    pub max_steps: u64,
    /// Gradient updates per round.
    pub iters_per_round: u64,
    pub buffer_max: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema: u32,
    pub sim: SimSection,
    pub map: MapSpec,
    pub dynamics: DynamicsConfig,
    pub control: PidConfig,
    pub rewards: RewardConfig,
    pub nilsson: NilssonParams,
    pub stackelberg: StackelbergParams,
    pub td3: Td3Config,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let sim = match preset {
            Preset::Full => SimSection {
                rounds: 90_000,
                bv_count: 15,
                v_max: 120.0 / 3.6,
                max_steps: 600,
                iters_per_round: 2,
                buffer_max: 40_000,
                seed: 7,
            },
            Preset::Desk => SimSection {
                rounds: 2_000,
                bv_count: 6,
                v_max: 120.0 / 3.6,
                max_steps: 300,
                iters_per_round: 2,
                buffer_max: 40_000,
                seed: 7,
            },
        };
        let map = match preset {
            Preset::Full => MapSpec::default_map(),
            Preset::Desk => MapSpec::desk_map(),
        };
        RunConfig {
            schema: SCHEMA_VERSION,
            sim,
            map,
            dynamics: DynamicsConfig::default(),
            control: PidConfig::default(),
            rewards: RewardConfig::default(),
            nilsson: NilssonParams::default(),
            stackelberg: StackelbergParams::default(),
            td3: Td3Config::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported config schema {} (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        self.map.validate()?;
        if self.sim.rounds == 0 {
            return Err(Error::Config("sim.rounds must be positive".into()));
        }
        if self.sim.bv_count == 0 {
            return Err(Error::Config("sim.bv_count must be positive".into()));
        }
        if self.sim.v_max <= 0.0 {
            return Err(Error::Config("sim.v_max must be positive".into()));
        }
        if self.sim.max_steps == 0 {
            return Err(Error::Config("sim.max_steps must be positive".into()));
        }
        if self.sim.buffer_max < self.td3.batch_size {
            return Err(Error::Config(
                "sim.buffer_max smaller than td3.batch_size".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization")
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            dynamics: self.dynamics.clone(),
            pid: self.control,
            rewards: self.rewards,
            nilsson: self.nilsson.clone(),
            stackelberg: self.stackelberg.clone(),
            max_steps: self.sim.max_steps,
            gamma: self.td3.gamma,
        }
    }

    pub fn stage_config(&self, stage: Stage) -> StageConfig {
        StageConfig {
            stage,
            rounds: self.sim.rounds,
            bv_count: self.sim.bv_count,
            map: self.map.clone(),
            v_max: self.sim.v_max,
            episode: self.episode_config(),
            td3: self.td3.clone(),
            iters_per_round: self.sim.iters_per_round,
            buffer_max: self.sim.buffer_max,
            seed: self.sim.seed,
        }
    }
}
