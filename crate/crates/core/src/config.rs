//! Execution settings shared by every run: endpoint defaults, credentials,
//! retry policy, concurrency and warm-up.
//!
//! Layers, lowest precedence first: built-in defaults, config file,
//! environment (`KAPPABENCH_*`), command-line flags.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gateway::RetryPolicy;

pub const ENV_ENDPOINT: &str = "KAPPABENCH_ENDPOINT";
pub const ENV_API_KEY: &str = "KAPPABENCH_API_KEY";
pub const ENV_CONCURRENCY: &str = "KAPPABENCH_CONCURRENCY";
pub const ENV_RETRIES: &str = "KAPPABENCH_RETRIES";
pub const ENV_TIMEOUT_S: &str = "KAPPABENCH_TIMEOUT_S";
pub const ENV_CONFIG: &str = "KAPPABENCH_CONFIG";

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalConfig {
    /// Used by configs that do not name their own endpoint.
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub retry: RetryPolicy,
    /// Concurrent in-flight requests; 1 keeps per-case timing sequential.
    pub concurrency: usize,
    /// Untimed requests per config before measurement starts.
    pub warmup: usize,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            api_key: None,
            retry: RetryPolicy::default(),
            concurrency: 1,
            warmup: 0,
        }
    }
}

/// One layer of settings; unset fields fall through to the layer below.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub concurrency: Option<usize>,
    pub warmup: Option<usize>,
    pub max_retries: Option<u32>,
    pub initial_backoff_ms: Option<u64>,
    pub backoff_multiplier: Option<f64>,
    pub timeout_s: Option<f64>,
}

impl ConfigLayer {
    pub fn from_file(path: &Path) -> Result<ConfigLayer, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Reads the `KAPPABENCH_*` variables through `get`.
    pub fn from_env_with(get: impl Fn(&str) -> Option<String>) -> Result<ConfigLayer, String> {
        fn num<T: std::str::FromStr>(name: &str, v: Option<String>) -> Result<Option<T>, String> {
            v.filter(|s| !s.trim().is_empty())
                .map(|s| s.trim().parse::<T>().map_err(|_| format!("{name}={s:?} is not a valid number")))
                .transpose()
        }
        Ok(ConfigLayer {
            endpoint: get(ENV_ENDPOINT).filter(|s| !s.is_empty()),
            api_key: get(ENV_API_KEY).filter(|s| !s.is_empty()),
            concurrency: num(ENV_CONCURRENCY, get(ENV_CONCURRENCY))?,
            max_retries: num(ENV_RETRIES, get(ENV_RETRIES))?,
            timeout_s: num(ENV_TIMEOUT_S, get(ENV_TIMEOUT_S))?,
            ..ConfigLayer::default()
        })
    }

    pub fn from_env() -> Result<ConfigLayer, String> {
        Self::from_env_with(|k| std::env::var(k).ok())
    }
}

impl GlobalConfig {
    pub fn apply(mut self, layer: &ConfigLayer) -> Self {
        if let Some(v) = &layer.endpoint {
            self.endpoint = Some(v.clone());
        }
        if let Some(v) = &layer.api_key {
            self.api_key = Some(v.clone());
        }
        if let Some(v) = layer.concurrency {
            self.concurrency = v;
        }
        if let Some(v) = layer.warmup {
            self.warmup = v;
        }
        if let Some(v) = layer.max_retries {
            self.retry.max_retries = v;
        }
        if let Some(v) = layer.initial_backoff_ms {
            self.retry.initial_backoff_ms = v;
        }
        if let Some(v) = layer.backoff_multiplier {
            self.retry.backoff_multiplier = v;
        }
        if let Some(v) = layer.timeout_s {
            self.retry.timeout_s = v;
        }
        self
    }

    /// Folds layers in ascending precedence.
    pub fn layered<'a>(layers: impl IntoIterator<Item = &'a ConfigLayer>) -> Result<GlobalConfig, String> {
        let config = layers.into_iter().fold(GlobalConfig::default(), |c, l| c.apply(l));
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.concurrency == 0 {
            return Err("concurrency must be at least 1".into());
        }
        if !(self.retry.timeout_s.is_finite() && self.retry.timeout_s > 0.0) {
            return Err(format!("timeout {} must be positive", self.retry.timeout_s));
        }
        if !(self.retry.backoff_multiplier.is_finite() && self.retry.backoff_multiplier >= 1.0) {
            return Err("backoff_multiplier must be >= 1".into());
        }
        Ok(())
    }

    /// Printable view with the API key redacted.
    pub fn effective(&self) -> EffectiveConfig {
        EffectiveConfig {
            endpoint: self.endpoint.clone(),
            api_key: if self.api_key.is_some() { "set" } else { "unset" }.to_string(),
            retry: self.retry,
            concurrency: self.concurrency,
            warmup: self.warmup,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveConfig {
    pub endpoint: Option<String>,
    pub api_key: String,
    pub retry: RetryPolicy,
    pub concurrency: usize,
    pub warmup: usize,
}
