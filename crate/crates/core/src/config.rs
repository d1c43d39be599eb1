//! Run configuration files.
//!
//! ```toml
//! line = "lines/ylbs_approx.toml"   # relative to this file
//! params = "dkz32.params"
//! seed = 7
//! output_dir = "runs/desk"
//!
//! [env]
//! dt_s = 1.0
//!
//! [reward]
//! lambda1 = 0.13
//!
//! [guard]
//! beta = 0.95
//!
//! [agent]
//! algo = "stod"
//! preset = "desk"
//! episodes = 300          # any preset field may be overridden
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{Algo, AgentConfig, Preset};
use crate::dynamics::{ParamsError, TrainParams};
use crate::env::{EnvConfig, EnvError, RewardWeights, TrainEnv};
use crate::guard::GuardConfig;
use crate::line::{LineError, LineProfile};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid run config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Line(#[from] LineError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRunConfig {
    line: PathBuf,
    params: Option<PathBuf>,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    #[serde(default)]
    env: EnvConfig,
    #[serde(default)]
    reward: RewardWeights,
    #[serde(default)]
    guard: GuardConfig,
    #[serde(default)]
    agent: toml::Table,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub line: PathBuf,
    /// `None` selects the built-in DKZ32 parameters.
    pub params: Option<PathBuf>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub env: EnvConfig,
    pub reward: RewardWeights,
    pub guard: GuardConfig,
    pub agent: AgentConfig,
}

/// A preset with `overrides` applied on top; `algo` and `preset` keys in
/// `overrides` select the base.
pub fn agent_config(
    algo: Algo,
    preset: Preset,
    overrides: &toml::Table,
) -> Result<AgentConfig, ConfigError> {
    let pick = |key: &str| overrides.get(key).and_then(|v| v.as_str()).map(str::to_string);
    let algo = match pick("algo") {
        Some(a) => a.parse().map_err(ConfigError::Invalid)?,
        None => algo,
    };
    let preset = match pick("preset") {
        Some(p) => p.parse().map_err(ConfigError::Invalid)?,
        None => preset,
    };
    let mut table = AgentConfig::preset(algo, preset).to_table();
    for (k, v) in overrides {
        if !table.contains_key(k) && k != "clip_norm" {
            return Err(ConfigError::Invalid(format!("unknown agent field {k:?}")));
        }
        table.insert(k.clone(), v.clone());
    }
    let cfg: AgentConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Invalid(e.message().to_string()))?;
    cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(cfg)
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml_str(&text, base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    /// Parses a config whose relative paths are resolved against `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let raw: RawRunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::new(),
            message: e.message().to_string(),
        })?;
        raw.env.validate()?;
        raw.reward.validate()?;
        raw.guard
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        Ok(Self {
            line: resolve(raw.line),
            params: raw.params.map(resolve),
            seed: raw.seed,
            output_dir: raw.output_dir.map(resolve),
            env: raw.env,
            reward: raw.reward,
            guard: raw.guard,
            agent: agent_config(Algo::Stod, Preset::Desk, &raw.agent)?,
        })
    }

    pub fn load_line(&self) -> Result<LineProfile, ConfigError> {
        Ok(LineProfile::load(&self.line)?)
    }

    pub fn load_params(&self) -> Result<TrainParams, ConfigError> {
        Ok(match &self.params {
            Some(p) => TrainParams::load(p)?,
            None => TrainParams::dkz32(),
        })
    }

    pub fn build_env(&self, line: LineProfile) -> Result<TrainEnv, ConfigError> {
        Ok(TrainEnv::new(line, self.load_params()?, self.env, self.reward, self.guard)?)
    }

    /// Full echo for logs and checkpoint headers.
    pub fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("run config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_resolve_against_the_file() {
        let cfg = RunConfig::from_toml_str(
            "line = \"lines/a.toml\"\nparams = \"/abs/p.params\"\n[agent]\nalgo = \"ston\"\nepisodes = 5\n",
            Path::new("/data"),
        )
        .unwrap();
        assert_eq!(cfg.line, PathBuf::from("/data/lines/a.toml"));
        assert_eq!(cfg.params, Some(PathBuf::from("/abs/p.params")));
        assert_eq!(cfg.agent.algo, Algo::Ston);
        assert_eq!(cfg.agent.episodes, 5);
        assert_eq!(cfg.agent.hidden, vec![64, 64]);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(RunConfig::from_toml_str("line = \"x\"\nfoo = 1\n", Path::new(".")).is_err());
        assert!(RunConfig::from_toml_str("line = \"x\"\n[agent]\nfoo = 1\n", Path::new(".")).is_err());
        assert!(RunConfig::from_toml_str("line = \"x\"\n[env]\ndt = 1\n", Path::new(".")).is_err());
    }

    #[test]
    fn paper_preset_override() {
        let mut o = toml::Table::new();
        o.insert("preset".into(), "paper".into());
        let cfg = agent_config(Algo::Stod, Preset::Desk, &o).unwrap();
        assert_eq!(cfg.hidden, vec![400, 300, 200, 100, 32]);
        assert_eq!(cfg.critic_lr, 5e-5);
        assert_eq!(cfg.batch_size, 256);
    }

    #[test]
    fn echo_round_trips_the_agent_section() {
        let cfg = RunConfig::from_toml_str("line = \"l.toml\"\n", Path::new("/d")).unwrap();
        let echo = cfg.to_table();
        let agent: AgentConfig = echo["agent"].clone().try_into().unwrap();
        assert_eq!(agent, cfg.agent);
    }
}
