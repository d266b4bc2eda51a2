use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::{split_digest, train_student, DistillSettings, FoldData, RunManifest, RunStatus, StudentTrainConfig};
use crate::datamodel::{FoldSplit, ImagingCore, TeacherBank};
use crate::distill::LossMode;
use crate::error::{Error, Result};
use crate::eval::{core_score, CoreScore, EntropyAccumulator, EvalReport, EvalSettings, RunTag};
use crate::student::StudentModel;

/// One (loss mode, lambda) setting of an experiment grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridPoint {
    pub loss_mode: LossMode,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvPlan {
    /// Folds to train; all folds of the split when empty.
    pub folds: Vec<usize>,
    pub seeds: Vec<u64>,
    pub grid: Vec<GridPoint>,
    /// Train runs concurrently. Results keep plan order either way.
    pub parallel: bool,
}

impl CvPlan {
    pub fn runs(&self, split: &FoldSplit) -> Vec<(u64, usize, GridPoint)> {
        let folds: Vec<usize> = if self.folds.is_empty() {
            (0..split.fold_count).collect()
        } else {
            self.folds.clone()
        };
        let mut out = Vec::new();
        for &seed in &self.seeds {
            for &fold in &folds {
                for &g in &self.grid {
                    out.push((seed, fold, g));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub report: Option<EvalReport>,
}

/// Heatmap scores and pooled entropy of a trained student on `cores`.
pub fn evaluate_student(
    model: &StudentModel,
    cores: &[&ImagingCore],
    tag: RunTag,
    settings: &EvalSettings,
) -> Result<(EvalReport, Vec<CoreScore>)> {
    let mut acc = EntropyAccumulator::default();
    let mut scores = Vec::with_capacity(cores.len());
    for c in cores {
        let h = model.heatmap(c.image.view())?;
        acc.add(&h, c.needle_mask.view())?;
        scores.push(CoreScore {
            core_id: c.core_id.clone(),
            score: core_score(&h, c.needle_mask.view())?,
            grade: c.grade,
        });
    }
    Ok((EvalReport::from_scores(&scores, acc, tag, settings)?, scores))
}

/// Unit-norm bag embeddings, one row per core.
pub fn student_embeddings(model: &StudentModel, cores: &[&ImagingCore]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((cores.len(), model.config.projection_dim));
    for (i, c) in cores.iter().enumerate() {
        out.row_mut(i).assign(&model.embed(c.image.view(), c.needle_mask.view())?);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn one_run(
    cores: &[ImagingCore],
    split: &FoldSplit,
    bank: &TeacherBank,
    base: &DistillSettings,
    config: &StudentTrainConfig,
    settings: &EvalSettings,
    checkpoint_dir: Option<&Path>,
    (seed, fold, g): (u64, usize, GridPoint),
) -> RunOutcome {
    let distill = DistillSettings {
        loss_mode: g.loss_mode,
        lambda: g.lambda,
        ..*base
    };
    let attempt = || -> Result<RunOutcome> {
        let data = FoldData::new(cores, split, fold)?;
        let trained = train_student(&data, bank, &distill, config, seed, checkpoint_dir)?;
        let tag = RunTag {
            fold,
            seed,
            loss_mode: g.loss_mode,
            lambda: g.lambda,
        };
        let (report, _) = evaluate_student(&trained.model, &data.val, tag, settings)?;
        Ok(RunOutcome {
            manifest: trained.manifest,
            report: Some(report),
        })
    };
    attempt().unwrap_or_else(|e| {
        log::error!("seed {seed} fold {fold} {} lambda {}: {e}", g.loss_mode, g.lambda);
        let (train, val) = split.train_val(fold);
        RunOutcome {
            manifest: RunManifest {
                seed,
                fold,
                lambda: g.lambda,
                loss_mode: g.loss_mode,
                status: RunStatus::Failed { message: e.to_string() },
                train_patients: train.into_iter().collect(),
                val_patients: val.into_iter().collect(),
                split_digest: split_digest(split),
                batch_order_digest: String::new(),
                bank_checksum: String::new(),
                frozen_checksum_before: String::new(),
                frozen_checksum_after: String::new(),
                best_epoch: None,
                best_val_balanced_accuracy: None,
                history: Vec::new(),
                checkpoint: None,
            },
            report: None,
        }
    })
}

/// Trains and evaluates every (seed, fold, grid point). A failing run is
/// recorded in its manifest and the rest continue.
#[allow(clippy::too_many_arguments)]
pub fn run_cv(
    cores: &[ImagingCore],
    split: &FoldSplit,
    bank: &TeacherBank,
    plan: &CvPlan,
    base: &DistillSettings,
    config: &StudentTrainConfig,
    settings: &EvalSettings,
    checkpoint_dir: Option<&Path>,
) -> Result<Vec<RunOutcome>> {
    if plan.seeds.is_empty() || plan.grid.is_empty() {
        return Err(Error::Config("experiment needs at least one seed and one grid point".into()));
    }
    let patients = cores.iter().map(|c| c.patient_id.clone()).collect();
    split.check_partition(&patients)?;
    let runs = plan.runs(split);
    let go = |r: &(u64, usize, GridPoint)| one_run(cores, split, bank, base, config, settings, checkpoint_dir, *r);
    let out: Vec<RunOutcome> = if plan.parallel {
        runs.par_iter().map(go).collect()
    } else {
        runs.iter().map(go).collect()
    };
    Ok(out)
}
