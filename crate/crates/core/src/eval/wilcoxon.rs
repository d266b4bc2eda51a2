use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_EXACT_N: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Nonzero differences kept.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// `min(w_plus, w_minus)`.
    pub w: f64,
    pub p_two_sided: f64,
}

/// Average ranks of `|d|`, doubled so ties stay integral.
pub fn doubled_ranks(abs: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0u64; abs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && abs[order[j]] == abs[order[i]] {
            j += 1;
        }
        // ranks i+1..=j averaged, times two
        let doubled = (i + 1 + j) as u64;
        for &k in &order[i..j] {
            ranks[k] = doubled;
        }
        i = j;
    }
    ranks
}

/// Exact two-sided signed-rank test on paired differences.
///
/// The null distribution of the positive rank sum is counted exactly over
/// all sign patterns with a subset-sum table on doubled ranks.
pub fn wilcoxon_signed_rank_exact(differences: &[f64]) -> Result<WilcoxonResult> {
    if let Some(d) = differences.iter().find(|d| !d.is_finite()) {
        return Err(Error::NonFinite(format!("difference {d}")));
    }
    let kept: Vec<f64> = differences.iter().copied().filter(|&d| d != 0.0).collect();
    if kept.is_empty() {
        log::warn!("all paired differences are zero; reporting p = 1");
        return Ok(WilcoxonResult {
            n: 0,
            w_plus: 0.0,
            w_minus: 0.0,
            w: 0.0,
            p_two_sided: 1.0,
        });
    }
    if kept.len() > MAX_EXACT_N {
        return Err(Error::InvalidInput(format!(
            "{} nonzero differences; exact test limited to {MAX_EXACT_N}",
            kept.len()
        )));
    }
    let abs: Vec<f64> = kept.iter().map(|d| d.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let total: u64 = ranks.iter().sum();
    let plus2: u64 = ranks.iter().zip(&kept).filter(|(_, &d)| d > 0.0).map(|(r, _)| r).sum();
    let minus2 = total - plus2;
    let w2 = plus2.min(minus2);

    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in &ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            counts[s + r] += counts[s];
        }
        reach += r;
    }
    let tail: u64 = counts[..=w2 as usize].iter().sum();
    let p = (2.0 * tail as f64 / (1u64 << kept.len()) as f64).min(1.0);
    Ok(WilcoxonResult {
        n: kept.len(),
        w_plus: plus2 as f64 / 2.0,
        w_minus: minus2 as f64 / 2.0,
        w: w2 as f64 / 2.0,
        p_two_sided: p,
    })
}
