//! Shared numerical building blocks with hand-written backward passes.

pub mod archive;
pub mod gradcheck;
pub mod interp;
mod params;
mod pool;

pub use params::{checksum_tensors, init_matrix, init_vector, ParamSet, TensorMut, TensorRef};
pub(crate) use params::{tmut1, tmut2, tref1, tref2};
pub use pool::{
    abmil_backward, abmil_forward, abmil_pool, softmax, AttentionPoolParams, PoolCache, PoolDims,
    DEFAULT_ATTENTION_DIM, DEFAULT_PROJECTION_DIM,
};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn l2_norm(v: ndarray::ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}
