use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datamodel::{BinEdges, SynthSpec, WORKING_SIZE};
use crate::error::{Error, Result};
use crate::eval::EvalSettings;
use crate::student::StudentConfig;
use crate::teacher::TeacherConfig;
use crate::trainloop::{DistillSettings, OptimConfig, StudentTrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Dataset root: `manifest.jsonl`, `images/`, `masks/`, `bags/`.
    pub data_dir: PathBuf,
    /// Teacher bank file.
    pub bank: PathBuf,
    /// Checkpoints, run sets and reports.
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data_dir: PathBuf::from("data"),
            bank: PathBuf::from("runs/teacher/bank.bin"),
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl PathsConfig {
    pub fn manifest(&self) -> PathBuf {
        self.data_dir.join("manifest.jsonl")
    }

    pub fn bags(&self) -> PathBuf {
        self.data_dir.join("bags")
    }

    pub fn teacher_checkpoint(&self) -> PathBuf {
        self.out_dir.join("teacher").join("teacher.ckpt")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            lambdas: vec![0.0, 0.5, 1.0, 2.0, 8.0],
        }
    }
}

/// Everything a command needs. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub folds: usize,
    /// Folds to train; all when empty.
    pub eval_folds: Vec<usize>,
    /// Seed of the patient split, shared by every run seed.
    pub split_seed: u64,
    /// Square working resolution for the student.
    pub image_size: usize,
    pub bin_edges: Vec<f64>,
    /// Fraction of bags held out to report teacher validation accuracy.
    pub teacher_val_fraction: f64,
    /// Train (seed, fold) runs concurrently.
    pub parallel: bool,
    pub paths: PathsConfig,
    pub synth: SynthSpec,
    pub teacher: TeacherConfig,
    pub student: StudentConfig,
    pub optim: OptimConfig,
    pub distill: DistillSettings,
    pub eval: EvalSettings,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: vec![0],
            folds: 5,
            eval_folds: Vec::new(),
            split_seed: 0,
            image_size: WORKING_SIZE,
            bin_edges: BinEdges::default().as_slice().to_vec(),
            teacher_val_fraction: 0.2,
            parallel: false,
            paths: PathsConfig::default(),
            synth: SynthSpec::default(),
            teacher: TeacherConfig::default(),
            student: StudentConfig::default(),
            optim: OptimConfig::default(),
            distill: DistillSettings::default(),
            eval: EvalSettings::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn bin_edges(&self) -> Result<BinEdges> {
        BinEdges::new(self.bin_edges.clone()).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn train_config(&self) -> StudentTrainConfig {
        StudentTrainConfig {
            student: self.student.clone(),
            optim: self.optim,
        }
    }

    /// Range checks that must pass before any compute starts.
    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be at least 2, got {}", self.folds)));
        }
        if let Some(f) = self.eval_folds.iter().find(|&&f| f >= self.folds) {
            return Err(Error::Config(format!("eval fold {f} out of range for {} folds", self.folds)));
        }
        if self.image_size == 0 || self.image_size % self.student.patch.max(1) != 0 {
            return Err(Error::Config(format!(
                "image_size {} must be a positive multiple of student.patch {}",
                self.image_size, self.student.patch
            )));
        }
        if !(0.0..1.0).contains(&self.teacher_val_fraction) {
            return Err(Error::Config(format!(
                "teacher_val_fraction {} outside [0, 1)",
                self.teacher_val_fraction
            )));
        }
        if self.teacher.projection_dim != self.student.projection_dim {
            return Err(Error::Config(format!(
                "teacher.projection_dim {} and student.projection_dim {} differ",
                self.teacher.projection_dim, self.student.projection_dim
            )));
        }
        if let Some(l) = self.sweep.lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::Config(format!("sweep lambda {l} must be >= 0")));
        }
        self.bin_edges()?;
        self.synth.validate().map_err(cfg)?;
        self.teacher.optim.validate().map_err(cfg)?;
        self.student.validate().map_err(cfg)?;
        self.optim.validate().map_err(cfg)?;
        self.distill.validate().map_err(cfg)?;
        self.eval.validate().map_err(cfg)?;
        Ok(())
    }
}
