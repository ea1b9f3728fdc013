//! The `train` run configuration: a TOML file with sections, then flag
//! overrides, then validation. The resolved form is echoed to
//! `config.resolved` in the output directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tailgame::trainer::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSection {
    pub players: usize,
    pub overlap: f64,
    /// Precomputed partition file; `players`/`overlap` are ignored when set.
    pub file: Option<PathBuf>,
}

impl Default for PartitionSection {
    fn default() -> Self {
        PartitionSection { players: 3, overlap: 0.2, file: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Write `checkpoint.NNNN.json` every this many sweeps; 0 disables.
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub partition: PartitionSection,
    pub train: TrainConfig,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = crate::read_text(path)?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Usage(format!("cannot serialise config: {e}")))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate()?;
        if self.data.train.is_none() {
            return Err(CliError::Usage("no training data (--data or [data] train)".into()));
        }
        if self.partition.file.is_none() && self.partition.players == 0 {
            return Err(CliError::Usage("players must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tailgame::trainer::StepRule;

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = toml::from_str(
            "[data]\ntrain = \"a.svm\"\n[partition]\nplayers = 4\n[train]\nsweeps = 7\n[train.curiosity]\nalpha = 0.1\n",
        )
        .unwrap();
        assert_eq!(c.partition.players, 4);
        assert_eq!(c.partition.overlap, 0.2);
        assert_eq!(c.train.sweeps, 7);
        assert_eq!(c.train.curiosity.alpha, 0.1);
        assert_eq!(c.train.curiosity.beta_max, 0.3);
        assert_eq!(c.train.step_rule, StepRule::armijo());
    }

    #[test]
    fn resolved_form_round_trips() {
        let mut c = RunConfig::default();
        c.data.train = Some("x.svm".into());
        c.train.step_rule = StepRule::adam();
        c.train.grad_clip = 0.0;
        let back: RunConfig = toml::from_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(toml::from_str::<RunConfig>("[train]\nsweps = 3\n").is_err());
        assert!(toml::from_str::<RunConfig>("[train]\nsweeps = \"many\"\n").is_err());
    }
}
