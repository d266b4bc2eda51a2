use ndarray::ArrayView1;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{IsupGrade, TeacherBank};
use crate::error::{Error, Result};

pub const DEFAULT_K_CANDIDATES: usize = 16;

/// Bank rows picked for one anchor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TripletDraw {
    pub positive: usize,
    pub negative: usize,
    pub negative_grade: IsupGrade,
    /// The `(grade, bin)` cell was empty and the positive came from the grade.
    pub positive_fallback: bool,
}

/// Audit record of one sampling decision, written as a JSON line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub anchor_id: String,
    pub positive_id: String,
    pub negative_id: String,
    pub grades: [IsupGrade; 3],
}

impl SampleRecord {
    pub fn new(anchor_id: &str, anchor_grade: IsupGrade, draw: &TripletDraw, bank: &TeacherBank) -> Self {
        let e = bank.entries();
        SampleRecord {
            anchor_id: anchor_id.to_string(),
            positive_id: e[draw.positive].sample_id.clone(),
            negative_id: e[draw.negative].sample_id.clone(),
            grades: [anchor_grade, e[draw.positive].grade, draw.negative_grade],
        }
    }
}

/// Nearest grade present in the bank other than `anchor`; ties go up.
pub fn negative_grade(anchor: IsupGrade, bank: &TeacherBank) -> Option<IsupGrade> {
    bank.grades()
        .into_iter()
        .filter(|&g| g != anchor)
        .min_by_key(|&g| {
            let d = (i16::from(g.value()) - i16::from(anchor.value())).unsigned_abs();
            // smaller distance first, then the higher grade
            (d, std::cmp::Reverse(g))
        })
}

/// Grade- and bin-matched positive plus an adjacent-grade hard negative.
///
/// The positive is uniform over the anchor's `(grade, bin)` cell, or over the
/// whole grade when that cell is empty. The negative grade is the nearest
/// grade present in the bank (ties toward the higher grade); `k_candidates`
/// distinct entries of that grade are drawn uniformly (all of them when the
/// grade is smaller) and the one closest to `anchor_embedding` is returned.
pub fn sample_triplet(
    anchor_grade: IsupGrade,
    anchor_bin: usize,
    bank: &TeacherBank,
    anchor_embedding: ArrayView1<f64>,
    rng: &mut impl Rng,
    k_candidates: usize,
) -> Result<TripletDraw> {
    if anchor_embedding.len() != bank.dim() {
        return Err(Error::Shape(format!(
            "anchor has dimension {} but bank has {}",
            anchor_embedding.len(),
            bank.dim()
        )));
    }
    let cell = bank.cell(anchor_grade, anchor_bin);
    let (pool, positive_fallback) = if cell.is_empty() {
        (bank.grade_entries(anchor_grade), true)
    } else {
        (cell.to_vec(), false)
    };
    if pool.is_empty() {
        return Err(Error::GradeAbsent {
            grade: anchor_grade.value(),
        });
    }
    let positive = pool[rng.random_range(0..pool.len())];

    let neg_grade = negative_grade(anchor_grade, bank).ok_or_else(|| {
        Error::InvalidInput(format!("bank holds no grade other than {anchor_grade}"))
    })?;
    let candidates = bank.grade_entries(neg_grade);
    let chosen: Vec<usize> = if k_candidates >= candidates.len() {
        candidates
    } else {
        rand::seq::index::sample(rng, candidates.len(), k_candidates.max(1))
            .into_iter()
            .map(|i| candidates[i])
            .collect()
    };
    let dist2 = |i: usize| -> f64 {
        bank.embedding(i)
            .iter()
            .zip(anchor_embedding.iter())
            .map(|(&b, &a)| (a - f64::from(b)).powi(2))
            .sum()
    };
    let mut negative = chosen[0];
    let mut best = dist2(negative);
    for &c in &chosen[1..] {
        let d = dist2(c);
        if d < best {
            best = d;
            negative = c;
        }
    }
    Ok(TripletDraw {
        positive,
        negative,
        negative_grade: neg_grade,
        positive_fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{BinEdges, TeacherBankEntry};
    use crate::rng::SeedTree;
    use ndarray::{Array1, Array2};

    fn g(v: u8) -> IsupGrade {
        IsupGrade::new(v).unwrap()
    }

    /// Bank with the given grades, 3 entries each spread over bins 1..=3
    /// (bin 0 for benign), random unit embeddings in 4-D.
    pub(crate) fn bank_with(grades: &[u8], per_grade: usize, seed: u64) -> TeacherBank {
        let mut rng = SeedTree::new(seed).rng();
        let mut entries = Vec::new();
        let mut rows = Vec::new();
        for &gr in grades {
            for i in 0..per_grade {
                entries.push(TeacherBankEntry {
                    sample_id: format!("g{gr}-{i}"),
                    grade: g(gr),
                    bin: if gr == 0 { 0 } else { 1 + i % 3 },
                });
                let v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                rows.extend(v.iter().map(|x| (x / n) as f32));
            }
        }
        TeacherBank::new(
            BinEdges::default(),
            entries,
            Array2::from_shape_vec((rows.len() / 4, 4), rows).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn negative_grade_rule() {
        let bank = bank_with(&[0, 2, 3, 4, 5], 3, 0);
        assert_eq!(negative_grade(g(5), &bank), Some(g(4)));
        assert_eq!(negative_grade(g(0), &bank), Some(g(2)));
        assert_eq!(negative_grade(g(3), &bank), Some(g(4)));
        assert_eq!(negative_grade(g(2), &bank), Some(g(3)));
        let only = bank_with(&[2], 3, 0);
        assert_eq!(negative_grade(g(2), &only), None);
    }

    #[test]
    fn positives_match_cell_or_grade() {
        let bank = bank_with(&[0, 2, 3, 4, 5], 6, 1);
        let mut rng = SeedTree::new(2).rng();
        let a = Array1::from(vec![1.0, 0.0, 0.0, 0.0]);
        for _ in 0..200 {
            let d = sample_triplet(g(3), 2, &bank, a.view(), &mut rng, 16).unwrap();
            let e = &bank.entries()[d.positive];
            assert_eq!((e.grade, e.bin), (g(3), 2));
            assert!(!d.positive_fallback);
            assert_eq!(bank.entries()[d.negative].grade, g(4));
        }
        // benign anchors never have a cancer bin; bin 2 is empty for grade 0
        let d = sample_triplet(g(0), 2, &bank, a.view(), &mut rng, 16).unwrap();
        assert!(d.positive_fallback);
        assert_eq!(bank.entries()[d.positive].grade, g(0));
    }

    #[test]
    fn absent_grade_rejected() {
        let bank = bank_with(&[0, 2], 3, 1);
        let a = Array1::from(vec![1.0, 0.0, 0.0, 0.0]);
        let err = sample_triplet(g(4), 1, &bank, a.view(), &mut SeedTree::new(0).rng(), 16).unwrap_err();
        assert!(matches!(err, Error::GradeAbsent { grade: 4 }));
    }

    #[test]
    fn full_candidate_set_finds_global_nearest() {
        let bank = bank_with(&[0, 2, 3, 4, 5], 10, 3);
        let mut rng = SeedTree::new(4).rng();
        for t in 0..50 {
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = Array1::from(v);
            let d = sample_triplet(g(2), 1 + t % 3, &bank, a.view(), &mut rng, 10).unwrap();
            let exhaustive = bank
                .grade_entries(g(3))
                .into_iter()
                .map(|i| {
                    let e = bank.embedding(i);
                    (0..4).map(|k| (a[k] - f64::from(e[k])).powi(2)).sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            let got: f64 = (0..4).map(|k| (a[k] - f64::from(bank.embedding(d.negative)[k])).powi(2)).sum();
            assert_eq!(got, exhaustive);
        }
    }
}
