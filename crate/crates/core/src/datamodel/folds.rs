use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::types::{ImagingCore, IsupGrade};
use crate::error::{Error, Result};
use crate::rng::SeedTree;

/// Patient-level assignment of folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_count: usize,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldSplit {
    pub fn fold_of(&self, patient_id: &str) -> Option<usize> {
        self.assignment.get(patient_id).copied()
    }

    pub fn patients_in(&self, fold: usize) -> BTreeSet<String> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(p, _)| p.clone())
            .collect()
    }

    /// `(train, validation)` patient sets for one held-out fold.
    pub fn train_val(&self, fold: usize) -> (BTreeSet<String>, BTreeSet<String>) {
        let (val, train): (Vec<_>, Vec<_>) =
            self.assignment.iter().partition(|(_, &f)| f == fold);
        (
            train.into_iter().map(|(p, _)| p.clone()).collect(),
            val.into_iter().map(|(p, _)| p.clone()).collect(),
        )
    }

    /// Folds cover every patient once and no patient is in two folds.
    pub fn check_partition(&self, patients: &BTreeSet<String>) -> Result<()> {
        let folds: Vec<BTreeSet<String>> = (0..self.fold_count).map(|f| self.patients_in(f)).collect();
        for i in 0..folds.len() {
            for j in i + 1..folds.len() {
                if let Some(p) = folds[i].intersection(&folds[j]).next() {
                    return Err(Error::InvalidInput(format!("patient {p} in folds {i} and {j}")));
                }
            }
        }
        let union: BTreeSet<String> = folds.into_iter().flatten().collect();
        if &union != patients {
            return Err(Error::InvalidInput("folds do not cover the patient set".into()));
        }
        Ok(())
    }
}

/// Label-stratified k-fold split at the patient level.
///
/// A patient's stratum is the maximum grade over their cores. Within each
/// stratum patients are shuffled and dealt round-robin; the dealing
/// position carries over between strata so fold sizes stay balanced too.
pub fn stratified_patient_kfold(cores: &[ImagingCore], k: usize, seed: u64) -> Result<FoldSplit> {
    stratified_patient_kfold_labels(
        cores.iter().map(|c| (c.patient_id.as_str(), c.grade)),
        k,
        seed,
    )
}

pub fn stratified_patient_kfold_labels<'a>(
    labels: impl IntoIterator<Item = (&'a str, IsupGrade)>,
    k: usize,
    seed: u64,
) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("k = {k}, need at least 2 folds")));
    }
    let mut max_grade: BTreeMap<String, IsupGrade> = BTreeMap::new();
    for (patient, grade) in labels {
        let g = max_grade.entry(patient.to_string()).or_insert(grade);
        *g = (*g).max(grade);
    }
    if max_grade.len() < k {
        return Err(Error::InvalidInput(format!(
            "{} patients cannot fill {k} folds",
            max_grade.len()
        )));
    }
    let mut strata: BTreeMap<IsupGrade, Vec<String>> = BTreeMap::new();
    for (p, g) in max_grade {
        strata.entry(g).or_default().push(p);
    }
    let mut rng = SeedTree::new(seed).child("folds").rng();
    let mut assignment = BTreeMap::new();
    let mut next = 0usize;
    // rarest (highest) grades first
    for (_, mut patients) in strata.into_iter().rev() {
        patients.shuffle(&mut rng);
        for p in patients {
            assignment.insert(p, next % k);
            next += 1;
        }
    }
    Ok(FoldSplit {
        fold_count: k,
        assignment,
    })
}
