use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seqformer::ModelConfig;
use crate::viewcodec::Task;

/// One entry of the task mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSource {
    pub task: Task,
    #[serde(default = "one")]
    pub weight: f64,
    pub dataset: PathBuf,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub tasks: Vec<TaskSource>,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::betas")]
    pub betas: [f64; 2],
    #[serde(default = "defaults::eps")]
    pub eps: f64,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub warmup_steps: usize,
    /// Learning rate at the end of the cosine decay, relative to the peak.
    #[serde(default = "defaults::final_lr_fraction")]
    pub final_lr_fraction: f64,
    #[serde(default = "defaults::grad_clip")]
    pub grad_clip: f64,
    pub steps: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Probability of replacing a training prompt with the null prompt.
    #[serde(default = "defaults::null_prompt_prob")]
    pub null_prompt_prob: f64,
    /// Probability that a view of a multi-view sample is left clean (t = 1)
    /// instead of noised; at least one view always stays noisy.
    #[serde(default = "defaults::clean_view_prob")]
    pub clean_view_prob: f64,
    /// Write a checkpoint every this many steps; 0 writes only the last.
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Checkpoint directory; nothing is written when absent.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Use only the first this many records of each dataset.
    #[serde(default)]
    pub max_records: Option<usize>,
}

mod defaults {
    pub fn learning_rate() -> f64 {
        5e-4
    }
    pub fn betas() -> [f64; 2] {
        [0.9, 0.95]
    }
    pub fn eps() -> f64 {
        1e-8
    }
    pub fn weight_decay() -> f64 {
        0.01
    }
    pub fn final_lr_fraction() -> f64 {
        0.1
    }
    pub fn grad_clip() -> f64 {
        1.0
    }
    pub fn null_prompt_prob() -> f64 {
        0.1
    }
    pub fn clean_view_prob() -> f64 {
        0.8
    }
}

impl TrainConfig {
    /// Equal-weight mixture over `tasks` with the default optimizer settings.
    pub fn new(model: ModelConfig, tasks: Vec<(Task, PathBuf)>, steps: usize, batch_size: usize) -> Self {
        Self {
            model,
            tasks: tasks
                .into_iter()
                .map(|(task, dataset)| TaskSource { task, weight: 1.0, dataset })
                .collect(),
            learning_rate: defaults::learning_rate(),
            betas: defaults::betas(),
            eps: defaults::eps(),
            weight_decay: defaults::weight_decay(),
            warmup_steps: 0,
            final_lr_fraction: defaults::final_lr_fraction(),
            grad_clip: defaults::grad_clip(),
            steps,
            batch_size,
            seed: 0,
            null_prompt_prob: defaults::null_prompt_prob(),
            clean_view_prob: defaults::clean_view_prob(),
            checkpoint_every: 0,
            out_dir: None,
            max_records: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.tasks.is_empty() {
            return Err(Error::invalid("training needs at least one task"));
        }
        if self.tasks.iter().any(|t| !(t.weight >= 0.0 && t.weight.is_finite())) {
            return Err(Error::invalid("mixture weights must be finite and non-negative"));
        }
        if !(self.tasks.iter().map(|t| t.weight).sum::<f64>() > 0.0) {
            return Err(Error::invalid("mixture weights must not all be zero"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) || self.betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::invalid("invalid optimizer settings"));
        }
        if !(0.0..=1.0).contains(&self.null_prompt_prob) {
            return Err(Error::invalid("null_prompt_prob must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.clean_view_prob) {
            return Err(Error::invalid("clean_view_prob must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Mixture weights normalized to sum to one.
    pub fn mixture(&self) -> Vec<f64> {
        let total: f64 = self.tasks.iter().map(|t| t.weight).sum();
        self.tasks.iter().map(|t| t.weight / total).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = serde_json::from_str(&text)
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        crate::seqformer::hex(&Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}
