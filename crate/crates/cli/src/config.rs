//! Run configuration: one strict-schema JSON document describing the task,
//! the architecture, the trainer, and the output location. Unknown keys are
//! rejected everywhere.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use selrep_core::data::PartialTaskSpec;
use selrep_core::net::ArchConfig;
use selrep_core::train::TrainConfig;

use crate::{json_err, io_err, CliError, Result};

/// Synthetic-generator task: a [`PartialTaskSpec`] plus the generator seed.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTaskConfig {
    pub spec: PartialTaskSpec,
    #[serde(default)]
    pub data_seed: u64,
}

/// Directory-per-class image folders for source and target domains.
///
/// `target_classes` must be a subset of `source_classes`; target labels are
/// reported in the source class space.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FolderTaskConfig {
    pub source_root: PathBuf,
    pub target_root: PathBuf,
    pub source_classes: Vec<String>,
    pub target_classes: Vec<String>,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
}

fn default_image_size() -> usize {
    32
}

/// Exactly one task kind per run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    Synthetic(SyntheticTaskConfig),
    Folders(FolderTaskConfig),
}

impl TaskConfig {
    pub fn name(&self) -> String {
        match self {
            TaskConfig::Synthetic(t) => format!(
                "synthetic-{}v{}",
                t.spec.source_classes.len(),
                t.spec.target_classes.len()
            ),
            TaskConfig::Folders(t) => format!(
                "folders-{}v{}",
                t.source_classes.len(),
                t.target_classes.len()
            ),
        }
    }
}

/// Top-level run description.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskConfig,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub output_dir: PathBuf,
    /// Skip training; evaluate `checkpoint` on the task's target split.
    #[serde(default)]
    pub eval_only: bool,
    /// Checkpoint to evaluate (required when `eval_only`).
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Write a checkpoint every N epochs (one is always written at exit).
    #[serde(default = "default_checkpoint_period")]
    pub checkpoint_period: usize,
}

fn default_checkpoint_period() -> usize {
    1
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(json_err(path))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.task {
            TaskConfig::Synthetic(t) => t.spec.validate()?,
            TaskConfig::Folders(t) => {
                if t.source_classes.is_empty() || t.target_classes.is_empty() {
                    return Err(CliError::Config("class lists must be non-empty".into()));
                }
                for c in &t.target_classes {
                    if !t.source_classes.contains(c) {
                        return Err(CliError::Config(format!(
                            "target class `{c}` is not a source class"
                        )));
                    }
                }
                if t.image_size < 8 {
                    return Err(CliError::Config("image_size must be at least 8".into()));
                }
            }
        }
        self.arch.validate()?;
        self.train.validate()?;
        if self.checkpoint_period == 0 {
            return Err(CliError::Config("checkpoint_period must be at least 1".into()));
        }
        if self.eval_only && self.checkpoint.is_none() {
            return Err(CliError::Config(
                "eval_only runs need a `checkpoint` path".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_synthetic_config() {
        let text = r#"{
            "task": {"synthetic": {"spec": {
                "source_classes": ["a", "b", "c"],
                "target_classes": ["a"],
                "n_source": 30,
                "n_target": 10
            }}},
            "output_dir": "runs/demo"
        }"#;
        let cfg: RunConfig = serde_json::from_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.task.name(), "synthetic-3v1");
        assert_eq!(cfg.checkpoint_period, 1);
        assert!(!cfg.eval_only);
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = r#"{
            "task": {"synthetic": {"spec": {
                "source_classes": ["a", "b"],
                "target_classes": ["a"],
                "n_source": 10,
                "n_target": 10
            }}},
            "output_dir": "runs/demo",
            "learning_rate_typo": 3.0
        }"#;
        assert!(serde_json::from_str::<RunConfig>(text).is_err());
        let nested_typo = r#"{
            "task": {"synthetic": {"spec": {
                "source_classes": ["a", "b"],
                "target_classes": ["a"],
                "n_source": 10,
                "n_target": 10
            }}},
            "train": {"epocs": 3},
            "output_dir": "runs/demo"
        }"#;
        assert!(serde_json::from_str::<RunConfig>(nested_typo).is_err());
    }

    #[test]
    fn eval_only_requires_checkpoint() {
        let text = r#"{
            "task": {"synthetic": {"spec": {
                "source_classes": ["a", "b"],
                "target_classes": ["a"],
                "n_source": 10,
                "n_target": 10
            }}},
            "output_dir": "runs/demo",
            "eval_only": true
        }"#;
        let cfg: RunConfig = serde_json::from_str(text).unwrap();
        assert!(cfg.validate().is_err());
    }
}
