use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::Method;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::nn::RmsPropConfig;

fn default_true() -> bool {
    true
}

/// One training run, read from a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    #[serde(default = "default_true")]
    pub shared: bool,
    #[serde(default)]
    pub seed: u64,
    pub episodes: usize,
    #[serde(default = "TrainConfig::default_batch")]
    pub batch: usize,
    #[serde(default = "TrainConfig::default_gamma")]
    pub gamma: f64,
    #[serde(default = "TrainConfig::default_epsilon")]
    pub epsilon: f64,
    /// Target network sync period, in episodes.
    #[serde(default = "TrainConfig::default_target_reset")]
    pub target_reset: usize,
    #[serde(default = "TrainConfig::default_sigma")]
    pub sigma: f64,
    #[serde(default = "TrainConfig::default_embed")]
    pub embed: usize,
    #[serde(default = "TrainConfig::default_bits")]
    pub message_bits: usize,
    /// Greedy evaluation period, in episodes (0 disables periodic evaluation).
    #[serde(default = "TrainConfig::default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "TrainConfig::default_eval_episodes")]
    pub eval_episodes: usize,
    /// Gradient clipping by global norm (0 disables).
    #[serde(default)]
    pub clip_norm: f64,
    #[serde(default)]
    pub optimizer: RmsPropConfig,
    pub env: EnvConfig,
}

impl TrainConfig {
    fn default_batch() -> usize {
        32
    }
    fn default_gamma() -> f64 {
        1.0
    }
    fn default_epsilon() -> f64 {
        0.05
    }
    fn default_target_reset() -> usize {
        100
    }
    fn default_sigma() -> f64 {
        2.0
    }
    fn default_embed() -> usize {
        32
    }
    fn default_bits() -> usize {
        1
    }
    fn default_eval_every() -> usize {
        100
    }
    fn default_eval_episodes() -> usize {
        500
    }

    /// A config with every default filled in.
    pub fn new(method: Method, env: EnvConfig, episodes: usize) -> Self {
        TrainConfig {
            method,
            shared: true,
            seed: 0,
            episodes,
            batch: Self::default_batch(),
            gamma: Self::default_gamma(),
            epsilon: Self::default_epsilon(),
            target_reset: Self::default_target_reset(),
            sigma: Self::default_sigma(),
            embed: Self::default_embed(),
            message_bits: Self::default_bits(),
            eval_every: Self::default_eval_every(),
            eval_episodes: Self::default_eval_episodes(),
            clip_norm: 0.0,
            optimizer: RmsPropConfig::default(),
            env,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 1]");
        }
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if self.target_reset == 0 {
            return bad("target_reset must be at least 1");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be finite and non-negative");
        }
        if self.embed == 0 {
            return bad("embed must be positive");
        }
        if self.method != Method::NoComm && self.message_bits == 0 {
            return bad("message_bits must be positive for communicating methods");
        }
        if !(self.optimizer.lr > 0.0 && (0.0..1.0).contains(&self.optimizer.decay) && self.optimizer.eps > 0.0) {
            return bad("optimizer needs lr > 0, decay in [0, 1) and eps > 0");
        }
        if !(self.clip_norm >= 0.0) {
            return bad("clip_norm must be non-negative");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Short label such as `dial-ps` or `rial-ns`.
    pub fn label(&self) -> String {
        let base = self.method.name();
        match (self.method, self.shared) {
            (Method::NoComm, _) => base.to_string(),
            (_, true) => format!("{base}-ps"),
            (_, false) => format!("{base}-ns"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_file_with_defaults() {
        let cfg = TrainConfig::from_toml(
            r#"
method = "dial"
episodes = 100
[env]
name = "switch"
n = 3
"#,
        )
        .unwrap();
        assert_eq!(cfg.batch, 32);
        assert_eq!(cfg.gamma, 1.0);
        assert_eq!(cfg.epsilon, 0.05);
        assert_eq!(cfg.target_reset, 100);
        assert_eq!(cfg.optimizer, RmsPropConfig::default());
        assert_eq!(cfg.env, EnvConfig::switch(3));
        assert_eq!(cfg.label(), "dial-ps");
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = TrainConfig::new(Method::Rial, EnvConfig::switch(4), 50);
        cfg.shared = false;
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_invalid_values() {
        assert!(TrainConfig::from_toml("method = \"dial\"\nepisodes = 1\ngamma = 2.0\n[env]\nname = \"switch\"\nn = 3\n").is_err());
        assert!(TrainConfig::from_toml("method = \"dial\"\nepisodes = 1\nbatch = 0\n[env]\nname = \"switch\"\nn = 3\n").is_err());
        assert!(TrainConfig::from_toml("method = \"dial\"\nepisodes = 1\nbogus = 1\n[env]\nname = \"switch\"\nn = 3\n").is_err());
    }
}
