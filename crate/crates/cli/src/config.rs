//! TOML configuration.
//!
//! ```toml
//! seed = 7
//!
//! [synth]
//! split = [0.6, 0.2, 0.2]
//!
//! [[synth.groups]]
//! preset = 2          # start from the class-2 generator preset
//! class = 2           # keep only samples that classify as class 2
//! count = 30
//! [synth.groups.params]
//! noise_sigma = 4.0   # any SynthParams field
//!
//! [pipeline]
//! fusion = "attention"
//! levels = 4
//! ```
//!
//! Unknown keys anywhere are errors.

use std::path::Path;

use anyhow::{bail, Context, Result};
use crystalseg::metrics::GrainClass;
use crystalseg::pipeline::PipelineConfig;
use crystalseg::synth::SynthParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Master seed; `--seed` overrides it.
    pub seed: u64,
    pub synth: SynthConfig,
    pub pipeline: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    /// Generator attempts allowed per requested sample of a class-filtered
    /// group.
    pub attempts_per_sample: usize,
    pub groups: Vec<SynthGroup>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            split: [0.6, 0.2, 0.2],
            attempts_per_sample: 20,
            groups: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthGroup {
    pub count: usize,
    /// Keep only samples of this class.
    #[serde(default)]
    pub class: Option<GrainClass>,
    /// Generator preset the parameters start from.
    #[serde(default)]
    pub preset: Option<GrainClass>,
    /// Field overrides on top of the preset.
    #[serde(default)]
    pub params: toml::Table,
}

impl SynthGroup {
    /// Preset merged with the overrides. The `seed` field is ignored; sample
    /// seeds derive from the master seed.
    pub fn resolve(&self) -> Result<SynthParams> {
        let base = self.preset.map(SynthParams::preset).unwrap_or_default();
        let mut table = toml::Table::try_from(&base).context("serializing preset")?;
        for (k, v) in &self.params {
            table.insert(k.clone(), v.clone());
        }
        let params: SynthParams = table.try_into().context("invalid [synth.groups.params]")?;
        params.validate()?;
        Ok(params)
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let config: Config = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Config::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        let sum: f64 = self.synth.split.iter().sum();
        if self.synth.split.iter().any(|&f| !(f >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            bail!(
                "synth.split {:?} must be non-negative and sum to 1",
                self.synth.split
            );
        }
        if self.synth.attempts_per_sample == 0 {
            bail!("synth.attempts_per_sample must be positive");
        }
        for (g, group) in self.synth.groups.iter().enumerate() {
            group
                .resolve()
                .with_context(|| format!("synth group {g}"))?;
        }
        Ok(())
    }
}
