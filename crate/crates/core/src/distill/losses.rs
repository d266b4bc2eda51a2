use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::datamodel::IsupGrade;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Margin(f64);

impl Margin {
    pub fn new(m: f64) -> Result<Self> {
        if m >= 0.0 && m.is_finite() {
            Ok(Margin(m))
        } else {
            Err(Error::InvalidInput(format!("margin {m} must be nonnegative")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Margin {
    fn default() -> Self {
        Margin(1.0)
    }
}

impl TryFrom<f64> for Margin {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Margin::new(v)
    }
}

impl From<Margin> for f64 {
    fn from(m: Margin) -> f64 {
        m.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau.is_finite() {
            Ok(Temperature(tau))
        } else {
            Err(Error::InvalidInput(format!("temperature {tau} must be positive")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature(0.07)
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Temperature::new(v)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> f64 {
        t.0
    }
}

/// Which distillation term joins the segmentation loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Triplet,
    Clip,
    None,
}

impl std::str::FromStr for LossMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "triplet" => Ok(LossMode::Triplet),
            "clip" => Ok(LossMode::Clip),
            "none" => Ok(LossMode::None),
            other => Err(Error::InvalidInput(format!("unknown loss mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossMode::Triplet => "triplet",
            LossMode::Clip => "clip",
            LossMode::None => "none",
        })
    }
}

/// Unit-norm anchor, same-grade positive, other-grade negative.
#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    pub anchor: Array1<f64>,
    pub positive: Array1<f64>,
    pub negative: Array1<f64>,
    pub anchor_grade: IsupGrade,
    pub positive_grade: IsupGrade,
    pub negative_grade: IsupGrade,
}

impl Triplet {
    pub fn new(
        anchor: Array1<f64>,
        positive: Array1<f64>,
        negative: Array1<f64>,
        grades: [IsupGrade; 3],
    ) -> Result<Self> {
        for (name, v) in [("anchor", &anchor), ("positive", &positive), ("negative", &negative)] {
            let n = v.dot(v).sqrt();
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidInput(format!("{name} norm {n}, expected 1")));
            }
        }
        if anchor.len() != positive.len() || anchor.len() != negative.len() {
            return Err(Error::Shape("triplet vectors differ in length".into()));
        }
        if grades[1] != grades[0] || grades[2] == grades[0] {
            return Err(Error::InvalidInput(format!("triplet grades {grades:?} violate the pairing rule")));
        }
        Ok(Triplet {
            anchor,
            positive,
            negative,
            anchor_grade: grades[0],
            positive_grade: grades[1],
            negative_grade: grades[2],
        })
    }
}

pub fn triplet_loss(t: &Triplet, margin: Margin) -> f64 {
    triplet_loss_vec(t.anchor.view(), t.positive.view(), t.negative.view(), margin.value())
}

/// `max(|a - p| - |a - n| + m, 0)`.
pub fn triplet_loss_vec(a: ArrayView1<f64>, p: ArrayView1<f64>, n: ArrayView1<f64>, margin: f64) -> f64 {
    let dp = (&a - &p).mapv(|v| v * v).sum().sqrt();
    let dn = (&a - &n).mapv(|v| v * v).sum().sqrt();
    (dp - dn + margin).max(0.0)
}

pub struct TripletGrad {
    pub loss: f64,
    pub anchor: Array1<f64>,
    pub positive: Array1<f64>,
    pub negative: Array1<f64>,
}

/// Loss and gradients; zero gradient on the flat side and at the hinge.
pub fn triplet_loss_grad(a: ArrayView1<f64>, p: ArrayView1<f64>, n: ArrayView1<f64>, margin: f64) -> TripletGrad {
    let diff_p = &a - &p;
    let diff_n = &a - &n;
    let dp = diff_p.dot(&diff_p).sqrt();
    let dn = diff_n.dot(&diff_n).sqrt();
    let raw = dp - dn + margin;
    let zeros = || Array1::zeros(a.len());
    if raw <= 0.0 {
        return TripletGrad {
            loss: 0.0,
            anchor: zeros(),
            positive: zeros(),
            negative: zeros(),
        };
    }
    let up = if dp > 0.0 { diff_p / dp } else { zeros() };
    let un = if dn > 0.0 { diff_n / dn } else { zeros() };
    TripletGrad {
        loss: raw,
        anchor: &up - &un,
        positive: -&up,
        negative: un,
    }
}

fn check_batches(us: &ArrayView2<f64>, hist: &ArrayView2<f64>) -> Result<()> {
    if us.dim() != hist.dim() {
        return Err(Error::Shape(format!(
            "micro-US batch {:?} vs histopathology batch {:?}",
            us.dim(),
            hist.dim()
        )));
    }
    if us.nrows() == 0 {
        return Err(Error::Empty("contrastive batch".into()));
    }
    Ok(())
}

fn log_softmax_rows(l: &Array2<f64>) -> Array2<f64> {
    let mut out = l.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Symmetric InfoNCE: mean of the row-wise and column-wise cross-entropies
/// of `us hist^T / tau` against the diagonal.
pub fn clip_loss(us: ArrayView2<f64>, hist: ArrayView2<f64>, tau: Temperature) -> Result<f64> {
    Ok(clip_loss_grad(us, hist, tau)?.0)
}

pub fn clip_loss_grad(
    us: ArrayView2<f64>,
    hist: ArrayView2<f64>,
    tau: Temperature,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    check_batches(&us, &hist)?;
    let b = us.nrows();
    let t = tau.value();
    let logits = us.dot(&hist.t()) / t;
    let lr = log_softmax_rows(&logits);
    let lc = log_softmax_rows(&logits.t().to_owned());
    let row_ce: f64 = -(0..b).map(|i| lr[[i, i]]).sum::<f64>() / b as f64;
    let col_ce: f64 = -(0..b).map(|j| lc[[j, j]]).sum::<f64>() / b as f64;
    let loss = 0.5 * (row_ce + col_ce);

    let mut d = lr.mapv(f64::exp) + lc.mapv(f64::exp).t();
    for i in 0..b {
        d[[i, i]] -= 2.0;
    }
    d *= 0.5 / b as f64;
    let dus = d.dot(&hist) / t;
    let dhist = d.t().dot(&us) / t;
    Ok((loss, dus, dhist))
}

pub fn combine_losses(l_seg: f64, l_distill: f64, lambda: f64) -> f64 {
    debug_assert!(lambda >= 0.0);
    l_seg + lambda * l_distill
}
