//! End-to-end synthetic benchmark: generate data, train the teacher, export
//! the bank, then train and evaluate students over a lambda grid on one
//! held-out fold.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datamodel::{stratified_patient_kfold, synth_generate, BinEdges, IsupGrade, SynthData, SynthSpec, TeacherBank};
use crate::distill::LossMode;
use crate::error::{Error, Result};
use crate::eval::{centroid_grade_auroc, EvalReport, EvalSettings, RunTag};
use crate::nn::ParamSet;
use crate::student::{StudentConfig, Upsample};
use crate::teacher::{export_bank, train_teacher, TeacherConfig, TeacherModel};
use crate::trainloop::{
    evaluate_student, student_embeddings, train_student, DistillSettings, FoldData, OptimConfig, RunManifest,
    StudentTrainConfig,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub synth: SynthSpec,
    pub teacher: TeacherConfig,
    pub student: StudentTrainConfig,
    pub distill: DistillSettings,
    pub folds: usize,
    /// Held-out folds to train; every fold when empty.
    pub eval_folds: Vec<usize>,
    pub lambdas: Vec<f64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let projection = 32;
        BenchConfig {
            synth: SynthSpec {
                texture_gain: 1.0,
                ..SynthSpec::default()
            },
            teacher: TeacherConfig {
                projection_dim: projection,
                attention_dim: 16,
                hidden: 32,
                optim: OptimConfig {
                    lr: 1e-3,
                    max_epochs: 30,
                    ..OptimConfig::default()
                },
                class_weighting: false,
            },
            student: StudentTrainConfig {
                student: StudentConfig {
                    patch: 8,
                    embed_dim: 48,
                    mixer_hidden: 48,
                    adapter_dim: 8,
                    decoder_hidden: 16,
                    projection_dim: projection,
                    attention_dim: 16,
                    upsample: Upsample::Bilinear,
                    backbone_seed: 0x00c0_ffee,
                },
                optim: OptimConfig {
                    lr: 3e-3,
                    max_epochs: 30,
                    ..OptimConfig::default()
                },
            },
            distill: DistillSettings::default(),
            folds: 5,
            eval_folds: Vec::new(),
            lambdas: vec![0.0, 0.5, 1.0, 2.0, 8.0],
        }
    }
}

/// Data, frozen teacher, its checksum at export time and the bank for one seed.
pub struct BenchData {
    pub data: SynthData,
    pub teacher: TeacherModel,
    pub bank: TeacherBank,
    pub teacher_checksum: String,
}

pub fn prepare(config: &BenchConfig, seed: u64) -> Result<BenchData> {
    let mut data = synth_generate(&config.synth, seed)?;
    data.preprocess()?;
    let (teacher, _) = train_teacher(&data.bags, &config.teacher, seed)?;
    let bank = export_bank(&data.bags, &teacher.pool, &BinEdges::default())?;
    Ok(BenchData {
        data,
        teacher_checksum: teacher.checksum(),
        teacher,
        bank,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub seed: u64,
    pub lambda: f64,
    pub report: EvalReport,
    /// Held-out embeddings scored against training-set grade centroids.
    pub embedding_grade_auroc: BTreeMap<IsupGrade, f64>,
    pub manifest: RunManifest,
}

impl BenchRun {
    pub fn mean_embedding_auroc(&self) -> f64 {
        let v = &self.embedding_grade_auroc;
        v.values().sum::<f64>() / v.len().max(1) as f64
    }
}

/// Trains one student per (lambda, held-out fold) on the prepared data.
pub fn run_lambdas(config: &BenchConfig, prepared: &BenchData, seed: u64, lambdas: &[f64]) -> Result<Vec<BenchRun>> {
    let split = stratified_patient_kfold(&prepared.data.cores, config.folds, seed)?;
    let folds: Vec<usize> = if config.eval_folds.is_empty() {
        (0..config.folds).collect()
    } else {
        config.eval_folds.clone()
    };
    let settings = EvalSettings::default();
    let mut out = Vec::with_capacity(lambdas.len() * folds.len());
    for &lambda in lambdas {
        if !(lambda >= 0.0) {
            return Err(Error::Config(format!("lambda {lambda}")));
        }
        let distill = DistillSettings {
            lambda,
            loss_mode: if lambda == 0.0 { LossMode::None } else { config.distill.loss_mode },
            ..config.distill
        };
        for &fold in &folds {
            let data = FoldData::new(&prepared.data.cores, &split, fold)?;
            let train_grades: Vec<IsupGrade> = data.train.iter().map(|c| c.grade).collect();
            let val_grades: Vec<IsupGrade> = data.val.iter().map(|c| c.grade).collect();
            let trained = train_student(&data, &prepared.bank, &distill, &config.student, seed, None)?;
            let tag = RunTag {
                fold,
                seed,
                loss_mode: distill.loss_mode,
                lambda,
            };
            let (report, _) = evaluate_student(&trained.model, &data.val, tag, &settings)?;
            let tr = student_embeddings(&trained.model, &data.train)?;
            let va = student_embeddings(&trained.model, &data.val)?;
            let embedding_grade_auroc = centroid_grade_auroc(tr.view(), &train_grades, va.view(), &val_grades)?;
            out.push(BenchRun {
                seed,
                lambda,
                report,
                embedding_grade_auroc,
                manifest: trained.manifest,
            });
        }
    }
    Ok(out)
}

/// Fold means for one (seed, lambda).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSummary {
    pub seed: u64,
    pub lambda: f64,
    pub folds: usize,
    pub auroc: f64,
    pub sens60_cspca: f64,
    pub mean_entropy: f64,
    pub embedding_auroc: f64,
}

/// Groups runs by (seed, lambda) in first-seen order and averages over folds.
pub fn summarize_runs(runs: &[BenchRun]) -> Vec<LambdaSummary> {
    let mut keys: Vec<(u64, f64)> = Vec::new();
    for r in runs {
        if !keys.contains(&(r.seed, r.lambda)) {
            keys.push((r.seed, r.lambda));
        }
    }
    keys.into_iter()
        .map(|(seed, lambda)| {
            let g: Vec<&BenchRun> = runs.iter().filter(|r| r.seed == seed && r.lambda == lambda).collect();
            let n = g.len() as f64;
            LambdaSummary {
                seed,
                lambda,
                folds: g.len(),
                auroc: g.iter().map(|r| r.report.auroc).sum::<f64>() / n,
                sens60_cspca: g.iter().map(|r| r.report.sens_at_spec.cspca_at_60()).sum::<f64>() / n,
                mean_entropy: g.iter().map(|r| r.report.mean_entropy).sum::<f64>() / n,
                embedding_auroc: g.iter().map(|r| r.mean_embedding_auroc()).sum::<f64>() / n,
            }
        })
        .collect()
}
