//! Attention-based multiple-instance pooling.
//!
//! ```text
//! h_t = W_proj x_t
//! a_t = w . tanh(V h_t)
//! alpha = softmax(a)
//! z = sum_t alpha_t h_t
//! ```

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{init_matrix, tmut1, tmut2, tref1, tref2, ParamSet, TensorMut, TensorRef};
use crate::error::{Error, Result};

pub const DEFAULT_PROJECTION_DIM: usize = 1024;
pub const DEFAULT_ATTENTION_DIM: usize = 768;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolDims {
    pub input: usize,
    pub projection: usize,
    pub attention: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionPoolParams {
    /// `P x D_in`
    pub proj: Array2<f64>,
    /// `A x P`
    pub attn_hidden: Array2<f64>,
    /// `A`
    pub attn_out: Array1<f64>,
    pub trainable: bool,
}

impl AttentionPoolParams {
    pub fn init(dims: PoolDims, rng: &mut impl Rng) -> Self {
        AttentionPoolParams {
            proj: init_matrix(dims.projection, dims.input, 1.0, rng),
            attn_hidden: init_matrix(dims.attention, dims.projection, 1.0, rng),
            attn_out: init_matrix(1, dims.attention, 1.0, rng).row(0).to_owned(),
            trainable: true,
        }
    }

    pub fn dims(&self) -> PoolDims {
        PoolDims {
            input: self.proj.ncols(),
            projection: self.proj.nrows(),
            attention: self.attn_hidden.nrows(),
        }
    }
}

impl ParamSet for AttentionPoolParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        vec![
            tref2("pool.proj", &self.proj, self.trainable),
            tref2("pool.attn_hidden", &self.attn_hidden, self.trainable),
            tref1("pool.attn_out", &self.attn_out, self.trainable),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let t = self.trainable;
        vec![
            tmut2("pool.proj", &mut self.proj, t),
            tmut2("pool.attn_hidden", &mut self.attn_hidden, t),
            tmut1("pool.attn_out", &mut self.attn_out, t),
        ]
    }
}

/// Intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct PoolCache {
    pub projected: Array2<f64>,
    pub attn_act: Array2<f64>,
    pub alpha: Array1<f64>,
    pub z: Array1<f64>,
}

pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let e = logits.mapv(|v| (v - max).exp());
    let s = e.sum();
    e / s
}

pub fn abmil_forward(bag: ArrayView2<f64>, params: &AttentionPoolParams) -> Result<PoolCache> {
    if bag.nrows() == 0 {
        return Err(Error::Empty("bag".into()));
    }
    if bag.ncols() != params.proj.ncols() {
        return Err(Error::Shape(format!(
            "bag width {} but projection expects {}",
            bag.ncols(),
            params.proj.ncols()
        )));
    }
    let projected = bag.dot(&params.proj.t());
    let attn_act = projected.dot(&params.attn_hidden.t()).mapv(f64::tanh);
    let scores = attn_act.dot(&params.attn_out);
    let alpha = softmax(scores.view());
    let z = alpha.dot(&projected);
    Ok(PoolCache {
        projected,
        attn_act,
        alpha,
        z,
    })
}

/// Pooled embedding and attention weights.
pub fn abmil_pool(bag: ArrayView2<f64>, params: &AttentionPoolParams) -> Result<(Array1<f64>, Array1<f64>)> {
    let c = abmil_forward(bag, params)?;
    Ok((c.z, c.alpha))
}

/// Accumulates parameter gradients into `grads` and returns `dL/dbag`.
pub fn abmil_backward(
    bag: ArrayView2<f64>,
    params: &AttentionPoolParams,
    cache: &PoolCache,
    dz: ArrayView1<f64>,
    grads: &mut AttentionPoolParams,
) -> Array2<f64> {
    let h = &cache.projected;
    let s = &cache.attn_act;
    let alpha = &cache.alpha;
    let gh = h.dot(&dz);
    let gz = cache.z.dot(&dz);
    let dscore: Array1<f64> = alpha * &(gh - gz);
    grads.attn_out += &s.t().dot(&dscore);
    let mut du = s.mapv(|v| 1.0 - v * v);
    for (mut row, &ds) in du.axis_iter_mut(Axis(0)).zip(dscore.iter()) {
        row.zip_mut_with(&params.attn_out, |d, &w| *d *= w * ds);
    }
    grads.attn_hidden += &du.t().dot(h);
    let mut dh = du.dot(&params.attn_hidden);
    for (mut row, &a) in dh.axis_iter_mut(Axis(0)).zip(alpha.iter()) {
        row.scaled_add(a, &dz);
    }
    grads.proj += &dh.t().dot(&bag);
    dh.dot(&params.proj)
}
