//! Layered configuration: a named profile, then the JSON config file, then
//! command-line flags.

use std::path::Path;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use spirit_core::harness::PipelineConfig;
use spirit_core::synthetic::{SitePreset, SynthSiteConfig};
use spirit_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Desk-scale settings sized for the synthetic benchmark.
    #[default]
    Benchmark,
    /// Full-size architecture and optimizer constants.
    Full,
}

impl Profile {
    pub fn pipeline(self) -> PipelineConfig {
        match self {
            Profile::Benchmark => PipelineConfig::benchmark(),
            Profile::Full => PipelineConfig::default(),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    profile: Option<Profile>,
    pipeline: Option<Value>,
    synth: Option<Value>,
}

/// The parsed config file, kept as JSON so sections can be layered over
/// defaults that depend on flags.
#[derive(Debug, Default)]
pub struct Layers {
    file: ConfigFile,
}

impl Layers {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let file = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(Self { file })
    }

    pub fn profile(&self, flag: Option<Profile>) -> Profile {
        flag.or(self.file.profile).unwrap_or_default()
    }

    pub fn pipeline(&self, profile: Profile) -> Result<PipelineConfig> {
        let cfg: PipelineConfig = layer(&profile.pipeline(), self.file.pipeline.as_ref(), "pipeline")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn synth(&self, preset: SitePreset, seed: u64, days: usize) -> Result<SynthSiteConfig> {
        layer(&preset.config(seed, days), self.file.synth.as_ref(), "synth")
    }
}

fn layer<T: Serialize + for<'de> Deserialize<'de>>(base: &T, over: Option<&Value>, section: &str) -> Result<T> {
    let mut value = serde_json::to_value(base)?;
    if let Some(over) = over {
        merge(&mut value, over);
    }
    serde_json::from_value(value).map_err(|e| Error::Config(format!("config section '{section}': {e}")))
}

/// Recursive object merge; anything that is not an object on both sides is
/// replaced outright. Unknown keys survive the merge and are rejected when
/// the result is deserialized.
fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// What a command ran with, echoed next to its outputs.
#[derive(Debug, Serialize)]
pub struct Effective<'a> {
    pub profile: Profile,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<&'a PipelineConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<&'a SynthSiteConfig>,
}
