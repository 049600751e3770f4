//! Tool configuration: TOML file values overridden by command-line flags.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use patimt_core::eval::EvalOptions;
use patimt_core::filters::FilterParams;
use patimt_core::instruct::{BoxDialect, InstanceFormat};
use patimt_core::merge::MergeParams;
use patimt_core::predparse::ParseStrictness;
use patimt_core::refine::RefineParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineSection {
    pub coverage_tau: f64,
}

impl Default for RefineSection {
    fn default() -> Self {
        Self {
            coverage_tau: RefineParams::default().coverage_tau,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslatorSection {
    /// `dict:PATH` or `http://...`.
    pub spec: Option<String>,
    /// Set when the service cannot take concurrent requests.
    pub serial: bool,
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolConfig {
    pub seed: u64,
    pub jobs: Option<usize>,
    pub dialect: BoxDialect,
    pub format: InstanceFormat,
    pub strictness: Option<ParseStrictness>,
    pub merge: MergeParams,
    pub refine: RefineSection,
    pub filter: FilterParams,
    pub eval: EvalOptions,
    pub translator: TranslatorSection,
}

impl Default for ToolConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: None,
            dialect: BoxDialect::Absolute,
            format: InstanceFormat::PlainText,
            strictness: None,
            merge: MergeParams::default(),
            refine: RefineSection::default(),
            filter: FilterParams::default(),
            eval: EvalOptions::default(),
            translator: TranslatorSection::default(),
        }
    }
}

impl ToolConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn refine_params(&self) -> RefineParams {
        RefineParams {
            coverage_tau: self.refine.coverage_tau,
            merge: self.merge.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.merge.validate()?;
        self.filter.validate()?;
        self.refine_params().validate()?;
        Ok(())
    }
}
