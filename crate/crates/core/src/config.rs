//! Application configuration: sampling ranges, CCM source, pipeline flags.
//!
//! Files are TOML. Omitted keys fall back to the defaults, unknown keys are
//! rejected, and every loaded configuration carries a hash that is stamped
//! into sidecars, manifests and reports.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::color::CcmSet;
use crate::error::{Error, Result};
use crate::noise::ParamRanges;
use crate::pipeline::PipelineOptions;

/// Environment variable naming the default configuration file.
pub const CONFIG_ENV: &str = "LOWLIGHT_CONFIG";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CcmSource {
    /// TOML file with `[[ccm]]` entries; relative paths resolve against the
    /// configuration file. `None` selects the bundled matrices.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

/// Noise settings of the inverse-gamma baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub photon_scale: f64,
    pub gaussian_std: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            photon_scale: 1000.0,
            gaussian_std: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub log_level: String,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig {
            log_level: "info".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    pub ranges: ParamRanges,
    pub ccm: CcmSource,
    pub pipeline: PipelineOptions,
    pub baseline: BaselineConfig,
    pub io: IoConfig,
    #[serde(skip)]
    ccms: CcmSet,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            ranges: ParamRanges::default(),
            ccm: CcmSource::default(),
            pipeline: PipelineOptions::default(),
            baseline: BaselineConfig::default(),
            io: IoConfig::default(),
            ccms: CcmSet::builtin(),
        }
    }
}

impl AppConfig {
    /// Parses configuration text. Relative CCM paths resolve against `base`.
    pub fn from_toml(text: &str, base: Option<&Path>) -> Result<AppConfig> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut merged = toml::Table::try_from(AppConfig::default())
            .map_err(|e| Error::Config(format!("serializing defaults: {e}")))?;
        merge(&mut merged, user);
        let mut config: AppConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        if let Some(path) = &config.ccm.path {
            let full = match base {
                Some(dir) if path.is_relative() => dir.join(path),
                _ => path.clone(),
            };
            let text = std::fs::read_to_string(&full).map_err(|e| Error::io(&full, e))?;
            config.ccms = CcmSet::from_toml(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", full.display())))?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.ranges.validate()?;
        let b = &self.baseline;
        if !(b.photon_scale > 0.0 && b.photon_scale.is_finite()) {
            return Err(Error::Config(format!(
                "baseline.photon_scale must be positive, got {}",
                b.photon_scale
            )));
        }
        if !(b.gaussian_std >= 0.0 && b.gaussian_std.is_finite()) {
            return Err(Error::Config(format!(
                "baseline.gaussian_std must be non-negative, got {}",
                b.gaussian_std
            )));
        }
        Ok(())
    }

    pub fn ccms(&self) -> &CcmSet {
        &self.ccms
    }

    pub fn set_ccms(&mut self, ccms: CcmSet) {
        self.ccms = ccms;
    }

    /// SHA-256 over the effective settings and the resolved CCM matrices.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        let mut settings = self.clone();
        settings.ccm.path = None;
        settings.io = IoConfig::default();
        h.update(serde_json::to_vec(&settings).expect("config serializes"));
        for entry in self.ccms.entries() {
            h.update(entry.name.as_bytes());
            for v in entry.matrix.0.iter().flatten() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

fn merge(base: &mut toml::Table, user: toml::Table) {
    for (key, value) in user {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<AppConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    AppConfig::from_toml(&text, path.parent())
        .map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
}
