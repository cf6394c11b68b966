use std::path::Path;

use autostpp::baselines::McStppConfig;
use autostpp::stpp::{ModelConfig, DEFAULT_WINDOW};
use autostpp::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::read_json;
use crate::fail::{CliError, CliResult};

pub const ENV_PREFIX: &str = "AUTOSTPP_";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Autostpp,
    Mc,
}

/// Contents of the `train --config` file. Every key is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    pub n_terms: usize,
    pub hidden: Vec<usize>,
    /// History window; `null` keeps every past event.
    pub window: Option<usize>,
    pub time_scale: f64,
    /// Compensator samples per box for the Monte Carlo baseline.
    pub n_samples: usize,
    pub lr: f64,
    /// When set, train once per rate and keep the best validation score.
    pub lr_grid: Option<Vec<f64>>,
    pub epochs: usize,
    pub batch_events: usize,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// Number of equal windows the sequence is cut into.
    pub windows: usize,
    /// Train/validation/test window counts.
    pub split: [usize; 3],
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        RunConfig {
            model: ModelKind::Autostpp,
            n_terms: 2,
            hidden: vec![32, 32],
            window: Some(DEFAULT_WINDOW),
            time_scale: 10.0,
            n_samples: 1000,
            lr: train.lr,
            lr_grid: None,
            epochs: train.epochs,
            batch_events: train.batch_events,
            clip_norm: train.clip_norm,
            seed: 0,
            windows: 50,
            split: [40, 5, 5],
        }
    }
}

impl RunConfig {
    /// Defaults, then the file (if any), then `AUTOSTPP_<KEY>` variables
    /// from `env`.
    pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> CliResult<Self> {
        let mut map = match serde_json::to_value(RunConfig::default()).expect("config serializes") {
            Value::Object(m) => m,
            _ => unreachable!("config is an object"),
        };
        if let Some(path) = path {
            match read_json::<Value>(path)? {
                Value::Object(file) => {
                    for (k, v) in file {
                        if !map.contains_key(&k) {
                            return Err(CliError::data(format!("{}: unknown config key {k:?}", path.display())));
                        }
                        map.insert(k, v);
                    }
                }
                _ => return Err(CliError::data(format!("{}: config must be a JSON object", path.display()))),
            }
        }
        apply_env(&mut map, env);
        serde_json::from_value(Value::Object(map)).map_err(|e| CliError::data(format!("invalid config: {e}")))
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            batch_events: self.batch_events,
            seed: self.seed,
            clip_norm: self.clip_norm,
            ..TrainConfig::default()
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            n_terms: self.n_terms,
            hidden: self.hidden.clone(),
            window: self.window,
            time_scale: self.time_scale,
            ..ModelConfig::default()
        }
    }

    pub fn mc(&self) -> McStppConfig {
        McStppConfig {
            hidden: self.hidden.clone(),
            window: self.window,
            n_samples: self.n_samples,
            time_scale: self.time_scale,
            ..McStppConfig::default()
        }
    }
}

/// Overrides keys already present in `map`. Values are read as JSON when
/// they parse, as plain strings otherwise; unrelated variables are ignored.
fn apply_env(map: &mut Map<String, Value>, env: impl IntoIterator<Item = (String, String)>) {
    for (name, raw) in env {
        let Some(key) = name.strip_prefix(ENV_PREFIX) else { continue };
        let key = key.to_ascii_lowercase();
        if let Some(slot) = map.get_mut(&key) {
            *slot = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
        }
    }
}
