use std::collections::BTreeMap;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::datamodel::IsupGrade;
use crate::error::{Error, Result};
use crate::student::Heatmap;

pub const ENTROPY_CLAMP: f64 = 1e-7;
pub const SPEC_TARGETS: [f64; 3] = [0.4, 0.6, 0.8];

/// Which grades count as the positive class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositiveRule {
    pub min_grade: u8,
}

impl PositiveRule {
    pub const PCA: PositiveRule = PositiveRule { min_grade: 2 };
    /// Grade above 2.
    pub const CSPCA: PositiveRule = PositiveRule { min_grade: 3 };
    pub const ANY_CANCER: PositiveRule = PositiveRule { min_grade: 1 };

    pub fn is_positive(self, grade: IsupGrade) -> bool {
        grade.value() >= self.min_grade
    }

    pub fn labels(self, grades: &[IsupGrade]) -> Vec<bool> {
        grades.iter().map(|&g| self.is_positive(g)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoreScore {
    pub core_id: String,
    pub score: f64,
    pub grade: IsupGrade,
}

fn masked_values<'a>(heatmap: &'a Heatmap, mask: ArrayView2<'a, bool>) -> Result<impl Iterator<Item = f64> + 'a> {
    if heatmap.shape() != mask.dim() {
        return Err(Error::Shape(format!("heatmap {:?} vs mask {:?}", heatmap.shape(), mask.dim())));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::Empty("needle mask".into()));
    }
    Ok(heatmap.probs.iter().zip(mask).filter(|(_, &m)| m).map(|(&p, _)| p))
}

/// Mean heatmap probability over the needle mask.
pub fn core_score(heatmap: &Heatmap, needle_mask: ArrayView2<bool>) -> Result<f64> {
    let (sum, n) = masked_values(heatmap, needle_mask)?.fold((0.0, 0usize), |(s, n), p| (s + p, n + 1));
    Ok(sum / n as f64)
}

/// Binary entropy in nats with `p` clamped away from 0 and 1.
pub fn binary_entropy(p: f64) -> f64 {
    let p = p.clamp(ENTROPY_CLAMP, 1.0 - ENTROPY_CLAMP);
    -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
}

/// Running pixel-pooled entropy.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EntropyAccumulator {
    pub sum: f64,
    pub pixels: usize,
}

impl EntropyAccumulator {
    pub fn add(&mut self, heatmap: &Heatmap, needle_mask: ArrayView2<bool>) -> Result<()> {
        for p in masked_values(heatmap, needle_mask)? {
            self.sum += binary_entropy(p);
            self.pixels += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: EntropyAccumulator) {
        self.sum += other.sum;
        self.pixels += other.pixels;
    }

    pub fn mean(&self) -> Result<f64> {
        if self.pixels == 0 {
            return Err(Error::Empty("entropy over zero pixels".into()));
        }
        Ok(self.sum / self.pixels as f64)
    }
}

/// Mean entropy pooled over every mask pixel of every core.
pub fn mean_entropy<'a>(items: impl IntoIterator<Item = (&'a Heatmap, ArrayView2<'a, bool>)>) -> Result<f64> {
    let mut acc = EntropyAccumulator::default();
    for (h, m) in items {
        acc.add(h, m)?;
    }
    acc.mean()
}

fn check_binary(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidInput(format!("need both classes, got {pos} positive and {neg} negative")));
    }
    Ok((pos, neg))
}

/// `2 * (wins + ties/2)` over positive-negative pairs, as an integer.
pub fn mann_whitney_doubled(scores: &[f64], labels: &[bool]) -> Result<(u128, usize, usize)> {
    let (pos, neg) = check_binary(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut neg_below = 0u128;
    let mut acc = 0u128;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group = &order[i..j];
        let gp = group.iter().filter(|&&k| labels[k]).count() as u128;
        let gn = group.len() as u128 - gp;
        acc += gp * (2 * neg_below + gn);
        neg_below += gn;
        i = j;
    }
    Ok((acc, pos, neg))
}

/// Area under the ROC curve as the Mann-Whitney pair statistic.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (u2, pos, neg) = mann_whitney_doubled(scores, labels)?;
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

/// Largest sensitivity over thresholds `t` (positive iff `score >= t`)
/// whose specificity is at least `spec_target`.
pub fn sens_at_spec(scores: &[f64], labels: &[bool], spec_target: f64) -> Result<f64> {
    let (pos, neg) = check_binary(scores, labels)?;
    if !(0.0..=1.0).contains(&spec_target) {
        return Err(Error::InvalidInput(format!("specificity target {spec_target} outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let need = spec_target * neg as f64 - 1e-9;
    // threshold above every score: nothing called positive
    let mut best = 0usize;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        if (neg - fp) as f64 >= need {
            best = best.max(tp);
        }
        i = j;
    }
    Ok(best as f64 / pos as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// One point per distinct score (descending), after a leading (inf, 0, 0).
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = check_binary(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut pts = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        pts.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(pts)
}

/// One-vs-benign AUROC for each cancer grade present alongside benign cores.
pub fn per_grade_auroc(scores: &[CoreScore]) -> BTreeMap<IsupGrade, f64> {
    let benign: Vec<f64> = scores.iter().filter(|c| !c.grade.is_cancer()).map(|c| c.score).collect();
    let mut out = BTreeMap::new();
    for g in IsupGrade::all().filter(|g| g.is_cancer()) {
        let cases: Vec<f64> = scores.iter().filter(|c| c.grade == g).map(|c| c.score).collect();
        if cases.is_empty() {
            continue;
        }
        if benign.is_empty() {
            log::info!("per-grade AUROC: no benign cores, grade {g} omitted");
            continue;
        }
        let s: Vec<f64> = cases.iter().chain(&benign).copied().collect();
        let l: Vec<bool> = (0..s.len()).map(|i| i < cases.len()).collect();
        out.insert(g, auroc(&s, &l).expect("both classes present"));
    }
    out
}

/// Balanced accuracy of `score >= threshold` against `labels`.
pub fn balanced_accuracy(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    let (pos, neg) = check_binary(scores, labels)?;
    let (mut tp, mut tn) = (0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            _ => {}
        }
    }
    Ok(0.5 * (tp as f64 / pos as f64 + tn as f64 / neg as f64))
}


/// Per-grade one-vs-benign AUROC of embeddings scored by distance to class
/// centroids: `score = |z - c_benign| - |z - c_grade|`, with centroids taken
/// from the reference set.
pub fn centroid_grade_auroc(
    reference: ArrayView2<f64>,
    reference_grades: &[IsupGrade],
    test: ArrayView2<f64>,
    test_grades: &[IsupGrade],
) -> Result<BTreeMap<IsupGrade, f64>> {
    if reference.nrows() != reference_grades.len() || test.nrows() != test_grades.len() {
        return Err(Error::Shape("embedding rows and grade labels differ in length".into()));
    }
    if reference.ncols() != test.ncols() {
        return Err(Error::Shape(format!("embedding widths {} and {}", reference.ncols(), test.ncols())));
    }
    let centroid = |g: IsupGrade| {
        let rows: Vec<usize> = (0..reference_grades.len()).filter(|&i| reference_grades[i] == g).collect();
        if rows.is_empty() {
            None
        } else {
            Some(reference.select(ndarray::Axis(0), &rows).mean_axis(ndarray::Axis(0)).expect("non-empty"))
        }
    };
    let dist = |z: ndarray::ArrayView1<f64>, c: &ndarray::Array1<f64>| {
        z.iter().zip(c.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };
    let Some(c0) = centroid(IsupGrade::BENIGN) else {
        return Err(Error::InvalidInput("no benign reference embeddings".into()));
    };
    let mut out = BTreeMap::new();
    for g in IsupGrade::all().filter(|g| g.is_cancer()) {
        let Some(cg) = centroid(g) else { continue };
        let (mut s, mut l) = (Vec::new(), Vec::new());
        for (i, &tg) in test_grades.iter().enumerate() {
            if tg == g || tg == IsupGrade::BENIGN {
                let z = test.row(i);
                s.push(dist(z, &c0) - dist(z, &cg));
                l.push(tg == g);
            }
        }
        if l.iter().any(|&x| x) && l.iter().any(|&x| !x) {
            out.insert(g, auroc(&s, &l)?);
        }
    }
    Ok(out)
}
