//! Deterministic two-modality synthetic data.
//!
//! Imaging cores carry a band-shaped needle mask inside an elliptical
//! prostate mask. A contiguous stretch of the needle, with length equal to
//! the involvement fraction, gets an intensity offset of
//! `texture_gain * grade`; Gaussian speckle of std `noise_sigma` covers the
//! whole image. Teacher bags mix instances from a per-grade Gaussian
//! cluster with benign-cluster instances in proportion to involvement.
//! Cluster centers are pairwise `separation` apart.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::types::{EmbeddingBag, ImagingCore, Involvement, IsupGrade};
use crate::error::{Error, Result};
use crate::rng::SeedTree;

/// Core counts by grade from the micro-ultrasound cohort (benign .. ISUP 5).
pub const MICRO_US_GRADE_COUNTS: [usize; 6] = [5727, 0, 480, 195, 134, 71];
/// PANDA training-split slide counts by grade.
pub const PANDA_TRAIN_GRADE_COUNTS: [usize; 6] = [2083, 1919, 967, 896, 900, 882];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    /// Imaging cores per grade, benign first.
    pub cores_per_grade: [usize; 6],
    /// Teacher bags per grade, benign first.
    pub bags_per_grade: [usize; 6],
    pub cores_per_patient: usize,
    pub image_size: usize,
    /// Needle band width in pixels.
    pub needle_width: f64,
    /// Distance between teacher cluster centers.
    pub separation: f64,
    /// Image speckle std.
    pub noise_sigma: f64,
    /// Intensity offset per grade inside the involved part of the needle.
    pub texture_gain: f64,
    pub teacher_dim: usize,
    pub teacher_noise: f64,
    pub bag_size_min: usize,
    pub bag_size_max: usize,
    /// Lower end of the uniform involvement draw for cancer samples.
    pub involvement_min: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            cores_per_grade: [120, 0, 45, 45, 45, 45],
            bags_per_grade: [40, 40, 40, 40, 40, 40],
            cores_per_patient: 5,
            image_size: 64,
            needle_width: 6.0,
            separation: 6.0,
            noise_sigma: 1.0,
            texture_gain: 0.5,
            teacher_dim: 16,
            teacher_noise: 1.0,
            bag_size_min: 8,
            bag_size_max: 16,
            involvement_min: 0.1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.cores_per_grade.iter().sum::<usize>() == 0 && self.bags_per_grade.iter().sum::<usize>() == 0 {
            return Err(Error::InvalidInput("synth spec requests zero samples for every grade".into()));
        }
        if self.image_size < 8 {
            return Err(Error::InvalidInput(format!("image_size {} below 8", self.image_size)));
        }
        if !(self.separation >= 0.0 && self.noise_sigma >= 0.0 && self.teacher_noise >= 0.0) {
            return Err(Error::InvalidInput("separation and noise levels must be nonnegative".into()));
        }
        if !(self.needle_width >= 1.0) {
            return Err(Error::InvalidInput("needle_width must be at least 1 pixel".into()));
        }
        if self.teacher_dim < IsupGrade::COUNT {
            return Err(Error::InvalidInput(format!(
                "teacher_dim {} cannot host {} orthogonal cluster centers",
                self.teacher_dim,
                IsupGrade::COUNT
            )));
        }
        if self.bag_size_min == 0 || self.bag_size_min > self.bag_size_max {
            return Err(Error::InvalidInput("bag size range is empty".into()));
        }
        if !(self.involvement_min > 0.0 && self.involvement_min <= 1.0) {
            return Err(Error::InvalidInput("involvement_min must be in (0, 1]".into()));
        }
        if self.cores_per_patient == 0 {
            return Err(Error::InvalidInput("cores_per_patient must be positive".into()));
        }
        Ok(())
    }

    /// Replace the core counts with the micro-ultrasound grade mix scaled to `total`.
    pub fn with_micro_us_proportions(mut self, total: usize) -> Self {
        self.cores_per_grade = rescale_counts(&MICRO_US_GRADE_COUNTS, total);
        self
    }

    /// Replace the bag counts with the PANDA training mix scaled to `total`.
    pub fn with_panda_proportions(mut self, total: usize) -> Self {
        self.bags_per_grade = rescale_counts(&PANDA_TRAIN_GRADE_COUNTS, total);
        self
    }

    pub fn core_count(&self) -> usize {
        self.cores_per_grade.iter().sum()
    }

    /// Teacher cluster centers, one row per grade.
    pub fn teacher_centers(&self) -> Array2<f64> {
        let scale = self.separation / std::f64::consts::SQRT_2;
        let mut c = Array2::zeros((IsupGrade::COUNT, self.teacher_dim));
        for g in 0..IsupGrade::COUNT {
            c[[g, g]] = scale;
        }
        c
    }
}

/// Largest-remainder rescaling of `counts` to sum to `total`.
pub fn rescale_counts(counts: &[usize; 6], total: usize) -> [usize; 6] {
    let sum: usize = counts.iter().sum();
    let mut out = [0usize; 6];
    if sum == 0 {
        return out;
    }
    let exact: Vec<f64> = counts.iter().map(|&c| c as f64 * total as f64 / sum as f64).collect();
    for (o, e) in out.iter_mut().zip(&exact) {
        *o = e.floor() as usize;
    }
    let mut rest = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..6).filter(|&i| counts[i] > 0).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for i in order.into_iter().cycle() {
        if rest == 0 {
            break;
        }
        out[i] += 1;
        rest -= 1;
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub cores: Vec<ImagingCore>,
    pub bags: Vec<EmbeddingBag>,
}

impl SynthData {
    /// Min-max scales every raw image in place (size unchanged) and checks
    /// each core.
    pub fn preprocess(&mut self) -> Result<()> {
        for c in &mut self.cores {
            c.image = super::preprocess::preprocess_image_to(c.image.view(), c.image.nrows())?;
            c.validate()?;
        }
        Ok(())
    }
}

pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<SynthData> {
    spec.validate()?;
    let root = SeedTree::new(seed).child("synth");

    let mut labels: Vec<(IsupGrade, Involvement)> = Vec::new();
    let mut label_rng = root.child("core-labels").rng();
    for (g, &n) in spec.cores_per_grade.iter().enumerate() {
        let grade = IsupGrade::new(g as u8)?;
        for _ in 0..n {
            labels.push((grade, draw_involvement(grade, spec.involvement_min, &mut label_rng)?));
        }
    }
    // patients get a random mix of cores
    let mut order: Vec<usize> = (0..labels.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut root.child("patients").rng());

    let mut cores = Vec::with_capacity(labels.len());
    for (slot, &i) in order.iter().enumerate() {
        let (grade, involvement) = labels[i];
        let core_seed = root.child("core").child(slot);
        cores.push(synth_core(
            spec,
            grade,
            involvement,
            format!("P{:04}", slot / spec.cores_per_patient),
            format!("C{slot:05}"),
            core_seed,
        )?);
    }

    let centers = spec.teacher_centers();
    let mut bags = Vec::new();
    let mut bag_idx = 0usize;
    for (g, &n) in spec.bags_per_grade.iter().enumerate() {
        let grade = IsupGrade::new(g as u8)?;
        for _ in 0..n {
            bags.push(synth_bag(spec, &centers, grade, format!("B{bag_idx:05}"), root.child("bag").child(bag_idx))?);
            bag_idx += 1;
        }
    }
    Ok(SynthData { cores, bags })
}

fn draw_involvement(grade: IsupGrade, min: f64, rng: &mut impl Rng) -> Result<Involvement> {
    if grade.is_cancer() {
        Involvement::new(rng.random_range(min..=1.0))
    } else {
        Ok(Involvement::NONE)
    }
}

fn synth_core(
    spec: &SynthSpec,
    grade: IsupGrade,
    involvement: Involvement,
    patient_id: String,
    core_id: String,
    seed: SeedTree,
) -> Result<ImagingCore> {
    let mut rng = seed.rng();
    let s = spec.image_size as f64;
    let cy = s * (0.5 + rng.random_range(-0.04..0.04));
    let cx = s * (0.5 + rng.random_range(-0.04..0.04));
    let ay = s * rng.random_range(0.34..0.42);
    let ax = s * rng.random_range(0.40..0.47);
    let prostate = Array2::from_shape_fn((spec.image_size, spec.image_size), |(y, x)| {
        let dy = (y as f64 + 0.5 - cy) / ay;
        let dx = (x as f64 + 0.5 - cx) / ax;
        dy * dy + dx * dx <= 1.0
    });

    // needle: a segment through a point near the gland center
    let theta: f64 = rng.random_range(0.15..0.75);
    let (dir_y, dir_x) = (theta.sin(), theta.cos());
    let py = cy + rng.random_range(-0.05..0.05) * s;
    let px = cx + rng.random_range(-0.05..0.05) * s;
    let half_len = 0.32 * s;
    let half_w = spec.needle_width / 2.0;
    let mut needle = Array2::from_elem(prostate.dim(), false);
    let mut along: Vec<(f64, usize, usize)> = Vec::new();
    for ((y, x), inside) in prostate.indexed_iter() {
        if !inside {
            continue;
        }
        let ry = y as f64 + 0.5 - py;
        let rx = x as f64 + 0.5 - px;
        let t = ry * dir_y + rx * dir_x;
        let perp = (-ry * dir_x + rx * dir_y).abs();
        if perp <= half_w && t.abs() <= half_len {
            needle[[y, x]] = true;
            along.push((t, y, x));
        }
    }
    if along.is_empty() {
        return Err(Error::Empty(format!("needle mask of synthetic core {core_id}")));
    }
    along.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let normal = Normal::new(0.0, spec.noise_sigma.max(0.0)).expect("finite sigma");
    let mut image = Array2::from_shape_fn(prostate.dim(), |_| {
        if spec.noise_sigma > 0.0 {
            normal.sample(&mut rng)
        } else {
            0.0
        }
    });
    if grade.is_cancer() {
        let n = along.len();
        let k = ((involvement.fraction() * n as f64).round() as usize).clamp(1, n);
        let start = rng.random_range(0..=n - k);
        let offset = spec.texture_gain * f64::from(grade.value());
        for &(_, y, x) in &along[start..start + k] {
            image[[y, x]] += offset;
        }
    }

    Ok(ImagingCore {
        image,
        needle_mask: needle,
        prostate_mask: prostate,
        grade,
        involvement,
        patient_id,
        core_id,
    })
}

fn synth_bag(
    spec: &SynthSpec,
    centers: &Array2<f64>,
    grade: IsupGrade,
    sample_id: String,
    seed: SeedTree,
) -> Result<EmbeddingBag> {
    let mut rng = seed.rng();
    let involvement = draw_involvement(grade, spec.involvement_min, &mut rng)?;
    let n = rng.random_range(spec.bag_size_min..=spec.bag_size_max);
    let n_cancer = if grade.is_cancer() {
        ((involvement.fraction() * n as f64).round() as usize).clamp(1, n)
    } else {
        0
    };
    let normal = Normal::new(0.0, spec.teacher_noise).expect("finite noise");
    let mut instances = Array2::zeros((n, spec.teacher_dim));
    for (i, mut row) in instances.rows_mut().into_iter().enumerate() {
        let center = if i < n_cancer { centers.row(grade.index()) } else { centers.row(0) };
        let noise = Array1::from_shape_fn(spec.teacher_dim, |_| normal.sample(&mut rng));
        row.assign(&(&center + &noise));
    }
    EmbeddingBag::new(sample_id, instances, grade, involvement)
}
