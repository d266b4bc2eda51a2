use std::collections::BTreeMap;
use std::fmt;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ISUP grade group, 0 = benign, 5 = most aggressive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct IsupGrade(u8);

impl IsupGrade {
    pub const BENIGN: IsupGrade = IsupGrade(0);
    pub const COUNT: usize = 6;

    pub fn new(value: u8) -> Result<Self> {
        if value <= 5 {
            Ok(IsupGrade(value))
        } else {
            Err(Error::InvalidInput(format!("ISUP grade {value} outside 0..=5")))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_cancer(self) -> bool {
        self.0 > 0
    }

    pub fn all() -> impl Iterator<Item = IsupGrade> {
        (0..=5).map(IsupGrade)
    }
}

impl TryFrom<u8> for IsupGrade {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        IsupGrade::new(v)
    }
}

impl From<IsupGrade> for u8 {
    fn from(g: IsupGrade) -> u8 {
        g.0
    }
}

impl fmt::Display for IsupGrade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Fraction of a core occupied by cancer.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Involvement(f64);

impl Involvement {
    pub const NONE: Involvement = Involvement(0.0);

    pub fn new(fraction: f64) -> Result<Self> {
        if fraction.is_finite() && (0.0..=1.0).contains(&fraction) {
            Ok(Involvement(fraction))
        } else {
            Err(Error::InvalidInput(format!(
                "involvement {fraction} outside [0, 1]"
            )))
        }
    }

    pub fn fraction(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Involvement {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Involvement::new(v)
    }
}

impl From<Involvement> for f64 {
    fn from(i: Involvement) -> f64 {
        i.0
    }
}

/// `involvement == 0` exactly when the grade is benign.
pub fn check_label_consistency(grade: IsupGrade, involvement: Involvement) -> Result<()> {
    if grade.is_cancer() == (involvement.fraction() > 0.0) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "grade {grade} inconsistent with involvement {}",
            involvement.fraction()
        )))
    }
}

/// Involvement-bin edges.
///
/// Bin 0 is the single point `{0}`; bin `i >= 1` is `(edges[i-1], edges[i]]`.
/// `edges` starts at 0, ends at 1 and is strictly ascending, so the bins
/// partition `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BinEdges(Vec<f64>);

impl BinEdges {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        let ok = edges.len() >= 2
            && edges[0] == 0.0
            && *edges.last().unwrap() == 1.0
            && edges.windows(2).all(|w| w[0] < w[1]);
        if ok {
            Ok(BinEdges(edges))
        } else {
            Err(Error::InvalidInput(format!(
                "bin edges {edges:?} must ascend strictly from 0 to 1"
            )))
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Number of bins including the benign bin.
    pub fn bin_count(&self) -> usize {
        self.0.len()
    }
}

impl Default for BinEdges {
    fn default() -> Self {
        BinEdges(vec![0.0, 0.4, 0.8, 1.0])
    }
}

impl TryFrom<Vec<f64>> for BinEdges {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        BinEdges::new(v)
    }
}

impl From<BinEdges> for Vec<f64> {
    fn from(b: BinEdges) -> Vec<f64> {
        b.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InvolvementBin(pub usize);

pub fn assign_bin(involvement: Involvement, edges: &BinEdges) -> InvolvementBin {
    let f = involvement.fraction();
    if f == 0.0 {
        return InvolvementBin(0);
    }
    let e = edges.as_slice();
    // first upper edge with f <= edge; f <= 1 == last edge so this always hits
    let i = e[1..].iter().position(|&hi| f <= hi).unwrap_or(e.len() - 2);
    InvolvementBin(i + 1)
}

/// One teacher-side sample: a bag of patch embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBag {
    pub instances: Array2<f64>,
    pub grade: IsupGrade,
    pub involvement: Involvement,
    pub sample_id: String,
}

impl EmbeddingBag {
    pub fn new(
        sample_id: impl Into<String>,
        instances: Array2<f64>,
        grade: IsupGrade,
        involvement: Involvement,
    ) -> Result<Self> {
        let sample_id = sample_id.into();
        if instances.nrows() == 0 || instances.ncols() == 0 {
            return Err(Error::Empty(format!("embedding bag {sample_id}")));
        }
        if instances.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding bag {sample_id}")));
        }
        check_label_consistency(grade, involvement)?;
        Ok(EmbeddingBag {
            instances,
            grade,
            involvement,
            sample_id,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.instances.ncols()
    }
}

/// One student-side sample: an image with its biopsy annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagingCore {
    pub image: Array2<f64>,
    pub needle_mask: Array2<bool>,
    pub prostate_mask: Array2<bool>,
    pub grade: IsupGrade,
    pub involvement: Involvement,
    pub patient_id: String,
    pub core_id: String,
}

impl ImagingCore {
    /// Checks shapes and mask containment. Image size is not pinned here;
    /// callers that need the 1024 x 1024 working resolution run
    /// [`crate::datamodel::preprocess_image`] first.
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image.dim();
        if h != w {
            return Err(Error::Shape(format!("core {}: image {h}x{w} is not square", self.core_id)));
        }
        if self.needle_mask.dim() != (h, w) || self.prostate_mask.dim() != (h, w) {
            return Err(Error::Shape(format!("core {}: mask shape differs from image", self.core_id)));
        }
        if !self.needle_mask.iter().any(|&m| m) {
            return Err(Error::Empty(format!("needle mask of core {}", self.core_id)));
        }
        if self
            .needle_mask
            .iter()
            .zip(self.prostate_mask.iter())
            .any(|(&n, &p)| n && !p)
        {
            return Err(Error::InvalidInput(format!(
                "core {}: needle mask leaves the prostate mask",
                self.core_id
            )));
        }
        if self.image.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidInput(format!("core {}: image outside [0, 1]", self.core_id)));
        }
        check_label_consistency(self.grade, self.involvement)
    }

    pub fn size(&self) -> usize {
        self.image.nrows()
    }
}

/// Label and provenance of one bank row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeacherBankEntry {
    pub sample_id: String,
    pub grade: IsupGrade,
    pub bin: usize,
}

/// Frozen pool of pooled, unit-norm teacher embeddings indexed by
/// `(grade, involvement bin)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherBank {
    d: usize,
    bin_edges: BinEdges,
    entries: Vec<TeacherBankEntry>,
    embeddings: Array2<f32>,
    index: BTreeMap<(IsupGrade, usize), Vec<usize>>,
}

impl TeacherBank {
    pub fn new(
        bin_edges: BinEdges,
        entries: Vec<TeacherBankEntry>,
        embeddings: Array2<f32>,
    ) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("teacher bank".into()));
        }
        if embeddings.nrows() != entries.len() {
            return Err(Error::Shape(format!(
                "{} bank entries but {} embedding rows",
                entries.len(),
                embeddings.nrows()
            )));
        }
        for (i, row) in embeddings.rows().into_iter().enumerate() {
            let norm = row.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
            if !(norm - 1.0).abs().le(&1e-6) {
                return Err(Error::InvalidInput(format!(
                    "bank entry {i} has norm {norm}, expected 1"
                )));
            }
        }
        let mut index: BTreeMap<(IsupGrade, usize), Vec<usize>> = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            if e.bin >= bin_edges.bin_count() {
                return Err(Error::InvalidInput(format!("bank entry {i} has bin {} out of range", e.bin)));
            }
            index.entry((e.grade, e.bin)).or_default().push(i);
        }
        Ok(TeacherBank {
            d: embeddings.ncols(),
            bin_edges,
            entries,
            embeddings,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn bin_edges(&self) -> &BinEdges {
        &self.bin_edges
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[TeacherBankEntry] {
        &self.entries
    }

    pub fn embeddings(&self) -> &Array2<f32> {
        &self.embeddings
    }

    pub fn embedding(&self, i: usize) -> ArrayView1<'_, f32> {
        self.embeddings.row(i)
    }

    pub fn index(&self) -> &BTreeMap<(IsupGrade, usize), Vec<usize>> {
        &self.index
    }

    pub fn cell(&self, grade: IsupGrade, bin: usize) -> &[usize] {
        self.index.get(&(grade, bin)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// All entries of one grade, in ascending entry order.
    pub fn grade_entries(&self, grade: IsupGrade) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .index
            .range((grade, 0)..=(grade, usize::MAX))
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    pub fn grades(&self) -> Vec<IsupGrade> {
        let mut g: Vec<IsupGrade> = self.index.keys().map(|(g, _)| *g).collect();
        g.dedup();
        g
    }

    pub fn has_grade(&self, grade: IsupGrade) -> bool {
        self.index.range((grade, 0)..=(grade, usize::MAX)).next().is_some()
    }
}
