use std::path::Path;

use ppln_core::analysis::PMethod;
use ppln_core::{MissionConfig, SceneConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CONFIG_SCHEMA: &str = "ppln_config/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsConfig {
    pub alpha: f64,
    pub method: PMethod,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            method: PMethod::Auto,
        }
    }
}

/// Every tunable of the pipeline; omitted fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub schema: String,
    pub scene: SceneConfig,
    pub mission: MissionConfig,
    pub stats: StatsConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            schema: CONFIG_SCHEMA.to_string(),
            scene: SceneConfig::default(),
            mission: MissionConfig::default(),
            stats: StatsConfig::default(),
        }
    }
}

impl AppConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let config: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))?;
        if config.schema != CONFIG_SCHEMA {
            return Err(CliError::Domain(format!(
                "{}: unsupported config schema {:?}",
                path.display(),
                config.schema
            )));
        }
        config
            .mission
            .validate()
            .map_err(|e| CliError::Domain(e.to_string()))?;
        Ok(config)
    }
}
