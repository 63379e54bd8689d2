//! Pipeline configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::denoiser::DenoiserConfig;
use crate::error::{Error, Result};
use crate::phantom::{DegradationConfig, MIN_PHANTOM_SIZE};
use crate::rng::derive_path;
use crate::train::TrainConfig;

/// Optimiser settings for one training phase. Schedule length, stride and
/// seeds come from the enclosing [`PipelineConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    pub train_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub eval_every: usize,
    pub denoiser: DenoiserConfig,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        PhaseConfig {
            train_steps: t.train_steps,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            eval_every: t.eval_every,
            denoiser: t.denoiser,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub image_size: usize,
    #[serde(rename = "T")]
    pub steps: usize,
    pub stride: usize,
    pub n_paired: usize,
    pub n_unpaired: usize,
    pub n_test: usize,
    pub degradation: DegradationConfig,
    pub teacher: PhaseConfig,
    pub student: PhaseConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            image_size: 32,
            steps: 50,
            stride: 1,
            n_paired: 100,
            n_unpaired: 300,
            n_test: 50,
            degradation: DegradationConfig::default(),
            teacher: PhaseConfig::default(),
            student: PhaseConfig::default(),
            seed: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Teacher,
    Student,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < MIN_PHANTOM_SIZE {
            return Err(Error::config("image_size", format!("must be >= {MIN_PHANTOM_SIZE}")));
        }
        if self.steps < 2 {
            return Err(Error::config("T", "T must be >= 2"));
        }
        if self.stride == 0 || !self.steps.is_multiple_of(self.stride) {
            return Err(Error::config("stride", "stride must divide T"));
        }
        self.degradation.validate()?;
        for phase in [Phase::Teacher, Phase::Student] {
            let prefix = match phase {
                Phase::Teacher => "teacher",
                Phase::Student => "student",
            };
            self.train_config(phase).validate().map_err(|e| match e {
                Error::Config { field, reason } => Error::config(format!("{prefix}.{field}"), reason),
                other => other,
            })?;
        }
        if self.teacher.denoiser != self.student.denoiser {
            return Err(Error::config(
                "student.denoiser",
                "must match teacher.denoiser (the student starts from teacher weights)",
            ));
        }
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out_dir.join("data")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.data_dir().join("manifest.json")
    }

    /// Full training configuration for one phase, with a seed derived from
    /// the pipeline seed.
    pub fn train_config(&self, phase: Phase) -> TrainConfig {
        let (section, stream) = match phase {
            Phase::Teacher => (&self.teacher, 1),
            Phase::Student => (&self.student, 2),
        };
        TrainConfig {
            train_steps: section.train_steps,
            batch_size: section.batch_size,
            learning_rate: section.learning_rate,
            seed: derive_path(self.seed, &[stream]),
            steps: self.steps,
            stride: self.stride,
            eval_every: section.eval_every,
            denoiser: section.denoiser,
            manifest: Some(PathBuf::from("data/manifest.json")),
        }
    }
}

/// Parses and validates a JSON config. Missing keys take their defaults;
/// unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::ConfigParse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_config(&text)
}
