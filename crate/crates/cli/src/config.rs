use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use tabext_core::dataset::SplitSpec;
use tabext_core::features::AlignmentTolerance;
use tabext_core::neuralnet::NetworkConfig;
use tabext_core::pipeline::SplitLevel;
use tabext_core::synthgen::LayoutSpec;

use crate::CliError;

pub const CONFIG_ENV: &str = "TABEXT_CONFIG";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub layout: LayoutSpec,
}

/// File-level settings; any command-line flag overrides the matching field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus_dir: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub tolerance: AlignmentTolerance,
    pub threshold: Option<f64>,
    pub split: SplitSpec,
    pub split_level: SplitLevel,
    pub network: NetworkConfig,
    pub synth: SynthConfig,
    pub port: Option<u16>,
    pub static_dir: Option<PathBuf>,
    pub export_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    /// `--config` if given, else `$TABEXT_CONFIG`, else defaults.
    pub fn resolve(flag: Option<&Path>) -> Result<Self, CliError> {
        match flag {
            Some(p) => Self::from_file(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::from_file(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }
}

pub fn parse_tolerance(s: &str) -> Result<AlignmentTolerance, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(AlignmentTolerance::Auto);
    }
    s.parse::<u32>()
        .map(AlignmentTolerance::Fixed)
        .map_err(|_| format!("expected \"auto\" or a pixel count, got {s:?}"))
}
