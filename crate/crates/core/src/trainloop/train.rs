use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::optim::{optimizer_step, AdamWState, OptimConfig};
use crate::datamodel::{assign_bin, FoldSplit, ImagingCore, TeacherBank};
use crate::distill::{clip_loss_grad, sample_triplet, triplet_loss_grad, LossMode, Temperature, DEFAULT_K_CANDIDATES};
use crate::error::{Error, Result};
use crate::eval::{balanced_accuracy, core_score};
use crate::nn::ParamSet;
use crate::rng::SeedTree;
use crate::student::{seg_loss_logits, StudentConfig, StudentModel, StudentParams};

/// How the distillation term is formed and weighted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillSettings {
    pub loss_mode: LossMode,
    pub lambda: f64,
    pub margin: f64,
    pub temperature: f64,
    pub k_candidates: usize,
}

impl Default for DistillSettings {
    fn default() -> Self {
        DistillSettings {
            loss_mode: LossMode::Triplet,
            lambda: 1.0,
            margin: 1.0,
            temperature: 0.07,
            k_candidates: DEFAULT_K_CANDIDATES,
        }
    }
}

impl DistillSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be a finite value >= 0, got {}", self.lambda)));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin must be >= 0, got {}", self.margin)));
        }
        Temperature::new(self.temperature).map_err(|e| Error::Config(e.to_string()))?;
        if self.k_candidates == 0 {
            return Err(Error::Config("k_candidates must be at least 1".into()));
        }
        Ok(())
    }

    fn active(&self) -> bool {
        self.loss_mode != LossMode::None && self.lambda > 0.0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudentTrainConfig {
    pub student: StudentConfig,
    pub optim: OptimConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub seg_loss: f64,
    pub distill_loss: f64,
    pub val_balanced_accuracy: f64,
    pub skipped_anchors: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Failed { message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub fold: usize,
    pub lambda: f64,
    pub loss_mode: LossMode,
    pub status: RunStatus,
    pub train_patients: Vec<String>,
    pub val_patients: Vec<String>,
    /// SHA-256 of the patient-to-fold assignment.
    pub split_digest: String,
    /// SHA-256 of every epoch's core order.
    pub batch_order_digest: String,
    pub bank_checksum: String,
    pub frozen_checksum_before: String,
    pub frozen_checksum_after: String,
    pub best_epoch: Option<usize>,
    pub best_val_balanced_accuracy: Option<f64>,
    pub history: Vec<EpochRecord>,
    pub checkpoint: Option<PathBuf>,
}

impl RunManifest {
    /// Train and validation patient sets must not intersect.
    pub fn check_leakage(&self) -> Result<()> {
        let train: BTreeSet<&String> = self.train_patients.iter().collect();
        match self.val_patients.iter().find(|p| train.contains(p)) {
            Some(p) => Err(Error::InvalidInput(format!(
                "patient {p} is in both train and validation of seed {} fold {}",
                self.seed, self.fold
            ))),
            None => Ok(()),
        }
    }

    /// The best-checkpoint score equals the maximum over the epoch history.
    pub fn check_selection(&self) -> Result<()> {
        let max = self
            .history
            .iter()
            .map(|e| e.val_balanced_accuracy)
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
        if max == self.best_val_balanced_accuracy {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "best balanced accuracy {:?} differs from history max {max:?}",
                self.best_val_balanced_accuracy
            )))
        }
    }

    pub fn checkpoint_name(seed: u64, fold: usize, mode: LossMode, lambda: f64) -> String {
        format!("student_s{seed}_f{fold}_{mode}_l{lambda}.ckpt")
    }
}

/// Same seed and fold across settings: identical split and batch order.
pub fn check_seed_pairing(a: &RunManifest, b: &RunManifest) -> Result<()> {
    if a.seed != b.seed || a.fold != b.fold {
        return Err(Error::InvalidInput(format!(
            "runs (seed {}, fold {}) and (seed {}, fold {}) are not a pair",
            a.seed, a.fold, b.seed, b.fold
        )));
    }
    if a.split_digest != b.split_digest || a.batch_order_digest != b.batch_order_digest {
        return Err(Error::InvalidInput(format!(
            "seed {} fold {}: paired runs saw different splits or batch orders",
            a.seed, a.fold
        )));
    }
    Ok(())
}

pub fn split_digest(split: &FoldSplit) -> String {
    let mut h = Sha256::new();
    h.update((split.fold_count as u64).to_le_bytes());
    for (p, f) in &split.assignment {
        h.update(p.as_bytes());
        h.update([0]);
        h.update((*f as u64).to_le_bytes());
    }
    hex(h.finalize().as_slice())
}

pub fn bank_checksum(bank: &TeacherBank) -> String {
    let mut h = Sha256::new();
    for e in bank.entries() {
        h.update(e.sample_id.as_bytes());
        h.update([0, e.grade.value()]);
        h.update((e.bin as u64).to_le_bytes());
    }
    for v in bank.embeddings().iter() {
        h.update(v.to_le_bytes());
    }
    hex(h.finalize().as_slice())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Cores of one fold, split by patient.
#[derive(Clone, Debug)]
pub struct FoldData<'a> {
    pub fold: usize,
    pub split: &'a FoldSplit,
    pub train: Vec<&'a ImagingCore>,
    pub val: Vec<&'a ImagingCore>,
}

impl<'a> FoldData<'a> {
    pub fn new(cores: &'a [ImagingCore], split: &'a FoldSplit, fold: usize) -> Result<Self> {
        if fold >= split.fold_count {
            return Err(Error::InvalidInput(format!("fold {fold} of {}", split.fold_count)));
        }
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for c in cores {
            match split.fold_of(&c.patient_id) {
                Some(f) if f == fold => val.push(c),
                Some(_) => train.push(c),
                None => return Err(Error::InvalidInput(format!("patient {} missing from split", c.patient_id))),
            }
        }
        if train.is_empty() || val.is_empty() {
            return Err(Error::Empty(format!("fold {fold} has an empty train or validation side")));
        }
        Ok(FoldData { fold, split, train, val })
    }

    fn patients(side: &[&ImagingCore]) -> Vec<String> {
        side.iter()
            .map(|c| c.patient_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

/// Mean-in-mask probability for each core.
pub fn core_scores(model: &StudentModel, cores: &[&ImagingCore]) -> Result<Vec<f64>> {
    cores
        .iter()
        .map(|c| {
            let h = model.heatmap(c.image.view())?;
            core_score(&h, c.needle_mask.view())
        })
        .collect()
}

/// Balanced accuracy of cancer-versus-benign at threshold 0.5.
pub fn validation_balanced_accuracy(model: &StudentModel, cores: &[&ImagingCore]) -> Result<f64> {
    let scores = core_scores(model, cores)?;
    let labels: Vec<bool> = cores.iter().map(|c| c.grade.is_cancer()).collect();
    balanced_accuracy(&scores, &labels, 0.5)
}

pub struct TrainedStudent {
    /// Weights from the epoch with the best validation balanced accuracy.
    pub model: StudentModel,
    pub manifest: RunManifest,
}

struct StepStats {
    seg: f64,
    distill: f64,
    skipped: usize,
}

/// Seed streams for one (seed, fold); independent of lambda and loss mode.
pub fn run_seeds(seed: u64, fold: usize) -> SeedTree {
    SeedTree::new(seed).child(format!("fold{fold}"))
}

pub fn train_student(
    data: &FoldData<'_>,
    bank: &TeacherBank,
    distill: &DistillSettings,
    config: &StudentTrainConfig,
    seed: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainedStudent> {
    distill.validate()?;
    config.optim.validate()?;
    config.student.validate()?;
    if bank.is_empty() {
        return Err(Error::Empty("teacher bank".into()));
    }
    if bank.dim() != config.student.projection_dim {
        return Err(Error::Shape(format!(
            "student embedding width {} does not match bank width {}",
            config.student.projection_dim,
            bank.dim()
        )));
    }
    let seeds = run_seeds(seed, data.fold);
    let mut model = StudentModel::new(config.student.clone(), seeds.child("init"))?;
    let mut state = AdamWState::new(&model.params);
    let mut order_rng = seeds.child("order").rng();
    let mut triplet_rng = seeds.child("triplet").rng();
    let bank_sum = bank_checksum(bank);

    let n = data.train.len();
    let mut orders = Vec::with_capacity(config.optim.max_epochs);
    let mut order: Vec<usize> = (0..n).collect();
    let mut digest = Sha256::new();
    for _ in 0..config.optim.max_epochs {
        order.shuffle(&mut order_rng);
        for &i in &order {
            digest.update(data.train[i].core_id.as_bytes());
            digest.update([0]);
        }
        orders.push(order.clone());
    }

    let mut manifest = RunManifest {
        seed,
        fold: data.fold,
        lambda: distill.lambda,
        loss_mode: distill.loss_mode,
        status: RunStatus::Completed,
        train_patients: FoldData::patients(&data.train),
        val_patients: FoldData::patients(&data.val),
        split_digest: split_digest(data.split),
        batch_order_digest: hex(digest.finalize().as_slice()),
        bank_checksum: bank_sum.clone(),
        frozen_checksum_before: model.params.frozen_checksum(),
        frozen_checksum_after: String::new(),
        best_epoch: None,
        best_val_balanced_accuracy: None,
        history: Vec::new(),
        checkpoint: None,
    };
    manifest.check_leakage()?;

    let mut best = model.params.clone();
    for (epoch, order) in orders.iter().enumerate() {
        let (mut seg_total, mut dist_total, mut loss_total, mut skipped) = (0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(config.optim.batch_size) {
            let cores: Vec<&ImagingCore> = batch.iter().map(|&i| data.train[i]).collect();
            let mut grads = model.params.zeros_like();
            let s = batch_step(&model, &cores, bank, distill, &mut triplet_rng, &mut grads)?;
            let loss = s.seg + distill.lambda * s.distill;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("batch loss {loss}"),
                });
            }
            optimizer_step(&mut model.params, &grads, &mut state, &config.optim).map_err(|e| Error::Diverged {
                epoch,
                detail: e.to_string(),
            })?;
            let w = cores.len() as f64;
            seg_total += s.seg * w;
            dist_total += s.distill * w;
            loss_total += loss * w;
            skipped += s.skipped;
        }
        let bacc = validation_balanced_accuracy(&model, &data.val)?;
        if skipped > 0 {
            log::info!("seed {seed} fold {} epoch {epoch}: {skipped} anchors had no bank grade", data.fold);
        }
        manifest.history.push(EpochRecord {
            epoch,
            loss: loss_total / n as f64,
            seg_loss: seg_total / n as f64,
            distill_loss: dist_total / n as f64,
            val_balanced_accuracy: bacc,
            skipped_anchors: skipped,
        });
        log::debug!(
            "seed {seed} fold {} {} lambda {} epoch {epoch}: loss {:.4} val bacc {bacc:.3}",
            data.fold,
            distill.loss_mode,
            distill.lambda,
            loss_total / n as f64
        );
        if manifest.best_val_balanced_accuracy.is_none_or(|b| bacc > b) {
            manifest.best_val_balanced_accuracy = Some(bacc);
            manifest.best_epoch = Some(epoch);
            best = model.params.clone();
        }
    }
    model.params = best;
    manifest.frozen_checksum_after = model.params.frozen_checksum();
    if manifest.frozen_checksum_after != manifest.frozen_checksum_before {
        return Err(Error::InvalidInput("frozen backbone weights changed during training".into()));
    }
    if bank_checksum(bank) != bank_sum {
        return Err(Error::InvalidInput("teacher bank changed during training".into()));
    }
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RunManifest::checkpoint_name(seed, data.fold, distill.loss_mode, distill.lambda));
        model.save(&path)?;
        manifest.checkpoint = Some(path);
    }
    Ok(TrainedStudent { model, manifest })
}

/// Forward, loss and backward for one batch; gradients of
/// `mean seg + lambda * distill` land in `grads`.
fn batch_step(
    model: &StudentModel,
    cores: &[&ImagingCore],
    bank: &TeacherBank,
    distill: &DistillSettings,
    rng: &mut impl rand::Rng,
    grads: &mut StudentParams,
) -> Result<StepStats> {
    let b = cores.len() as f64;
    let mut traces = Vec::with_capacity(cores.len());
    let mut dsegs = Vec::with_capacity(cores.len());
    let mut seg = 0.0;
    for c in cores {
        let t = model.forward(c.image.view(), c.needle_mask.view())?;
        let (l, mut d) = seg_loss_logits(&t.pixel_logits, c.grade, c.involvement)?;
        d.iter_mut().for_each(|v| *v /= b);
        seg += l / b;
        dsegs.push(d);
        traces.push(t);
    }

    let mut demb: Vec<Option<Array1<f64>>> = vec![None; cores.len()];
    let mut dist = 0.0;
    let mut skipped = 0;
    if distill.active() {
        let edges = bank.bin_edges();
        let mut draws = Vec::with_capacity(cores.len());
        for (c, t) in cores.iter().zip(&traces) {
            let bin = assign_bin(c.involvement, edges).0;
            match sample_triplet(c.grade, bin, bank, t.embedding.view(), rng, distill.k_candidates) {
                Ok(d) => draws.push(Some(d)),
                Err(Error::GradeAbsent { .. }) => {
                    skipped += 1;
                    draws.push(None);
                }
                Err(e) => return Err(e),
            }
        }
        let valid: Vec<usize> = (0..cores.len()).filter(|&i| draws[i].is_some()).collect();
        let row = |i: usize| bank.embedding(i).mapv(f64::from);
        if !valid.is_empty() {
            match distill.loss_mode {
                LossMode::Triplet => {
                    let v = valid.len() as f64;
                    for &i in &valid {
                        let d = draws[i].as_ref().expect("valid");
                        let g = triplet_loss_grad(
                            traces[i].embedding.view(),
                            row(d.positive).view(),
                            row(d.negative).view(),
                            distill.margin,
                        );
                        dist += g.loss / v;
                        demb[i] = Some(g.anchor * (distill.lambda / v));
                    }
                }
                LossMode::Clip => {
                    let dim = bank.dim();
                    let mut us = Array2::zeros((valid.len(), dim));
                    let mut hist = Array2::zeros((valid.len(), dim));
                    for (r, &i) in valid.iter().enumerate() {
                        us.row_mut(r).assign(&traces[i].embedding);
                        hist.row_mut(r).assign(&row(draws[i].as_ref().expect("valid").positive));
                    }
                    let tau = Temperature::new(distill.temperature)?;
                    let (l, dus, _) = clip_loss_grad(us.view(), hist.view(), tau)?;
                    dist = l;
                    for (r, &i) in valid.iter().enumerate() {
                        demb[i] = Some(dus.row(r).to_owned() * distill.lambda);
                    }
                }
                LossMode::None => unreachable!("inactive"),
            }
        }
    }
    for ((t, d), de) in traces.iter().zip(&dsegs).zip(&demb) {
        model.backward(t, d, de.as_ref().map(|v| v.view()), grads);
    }
    Ok(StepStats {
        seg,
        distill: dist,
        skipped,
    })
}
