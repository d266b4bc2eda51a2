//! Reference patch encoder.
//!
//! ```text
//! e = [x, x, x] W_pe^T + b_pe                   frozen patch embedding
//! repeat twice:
//!     h = e + tanh(e W1^T + b1) W2^T             frozen channel-mixing block
//!     e = h + tanh(h D^T) U^T                    trainable bottleneck adapter
//! ```
//!
//! The adapter up-projection `U` starts at zero, so an untrained adapter is
//! the identity.

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::nn::{init_matrix, tmut1, tmut2, tref1, tref2, TensorMut, TensorRef};

pub const MIX_LAYERS: usize = 2;
pub const CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct MixBlock {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adapter {
    pub down: Array2<f64>,
    pub up: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub patch_embed: Array2<f64>,
    pub patch_bias: Array1<f64>,
    pub mix: Vec<MixBlock>,
    pub adapters: Vec<Adapter>,
}

impl EncoderParams {
    /// Backbone weights come from `backbone_rng`, adapter weights from `adapter_rng`.
    pub fn init(
        patch: usize,
        embed: usize,
        mixer_hidden: usize,
        adapter_dim: usize,
        backbone_rng: &mut impl Rng,
        adapter_rng: &mut impl Rng,
    ) -> Self {
        let input = CHANNELS * patch * patch;
        let patch_embed = init_matrix(embed, input, 1.0, backbone_rng);
        let patch_bias = Array1::zeros(embed);
        let mix = (0..MIX_LAYERS)
            .map(|_| MixBlock {
                w1: init_matrix(mixer_hidden, embed, 1.0, backbone_rng),
                b1: Array1::zeros(mixer_hidden),
                w2: init_matrix(embed, mixer_hidden, 0.5, backbone_rng),
            })
            .collect();
        let adapters = (0..MIX_LAYERS)
            .map(|_| Adapter {
                down: init_matrix(adapter_dim, embed, 1.0, adapter_rng),
                up: Array2::zeros((embed, adapter_dim)),
            })
            .collect();
        EncoderParams {
            patch_embed,
            patch_bias,
            mix,
            adapters,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.patch_embed.nrows()
    }

    pub(crate) fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut v = vec![
            tref2("enc.patch_embed", &self.patch_embed, false),
            tref1("enc.patch_bias", &self.patch_bias, false),
        ];
        for (l, m) in self.mix.iter().enumerate() {
            v.push(tref2(&format!("enc.mix{l}.w1"), &m.w1, false));
            v.push(tref1(&format!("enc.mix{l}.b1"), &m.b1, false));
            v.push(tref2(&format!("enc.mix{l}.w2"), &m.w2, false));
        }
        for (l, a) in self.adapters.iter().enumerate() {
            v.push(tref2(&format!("enc.adapter{l}.down"), &a.down, true));
            v.push(tref2(&format!("enc.adapter{l}.up"), &a.up, true));
        }
        v
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut v = vec![
            tmut2("enc.patch_embed", &mut self.patch_embed, false),
            tmut1("enc.patch_bias", &mut self.patch_bias, false),
        ];
        for (l, m) in self.mix.iter_mut().enumerate() {
            v.push(tmut2(&format!("enc.mix{l}.w1"), &mut m.w1, false));
            v.push(tmut1(&format!("enc.mix{l}.b1"), &mut m.b1, false));
            v.push(tmut2(&format!("enc.mix{l}.w2"), &mut m.w2, false));
        }
        for (l, a) in self.adapters.iter_mut().enumerate() {
            v.push(tmut2(&format!("enc.adapter{l}.down"), &mut a.down, true));
            v.push(tmut2(&format!("enc.adapter{l}.up"), &mut a.up, true));
        }
        v
    }
}

/// Per-layer activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct EncoderCache {
    mix_act: Vec<Array2<f64>>,
    hidden: Vec<Array2<f64>>,
    adapter_act: Vec<Array2<f64>>,
}

/// Frozen patch embedding of raw patch pixels (channel replication included).
pub fn embed_patches(pixels: ArrayView2<f64>, params: &EncoderParams) -> Array2<f64> {
    let x = concatenate(Axis(1), &[pixels, pixels, pixels]).expect("same row count");
    x.dot(&params.patch_embed.t()) + &params.patch_bias
}

pub fn encoder_forward(pixels: ArrayView2<f64>, params: &EncoderParams) -> (Array2<f64>, EncoderCache) {
    let mut e = embed_patches(pixels, params);
    let mut cache = EncoderCache {
        mix_act: Vec::with_capacity(MIX_LAYERS),
        hidden: Vec::with_capacity(MIX_LAYERS),
        adapter_act: Vec::with_capacity(MIX_LAYERS),
    };
    for (m, a) in params.mix.iter().zip(&params.adapters) {
        let act = (e.dot(&m.w1.t()) + &m.b1).mapv(f64::tanh);
        let h = &e + &act.dot(&m.w2.t());
        let q = h.dot(&a.down.t()).mapv(f64::tanh);
        e = &h + &q.dot(&a.up.t());
        cache.mix_act.push(act);
        cache.hidden.push(h);
        cache.adapter_act.push(q);
    }
    (e, cache)
}

/// Accumulates adapter gradients. Backbone tensors are frozen and receive none.
pub fn encoder_backward(
    params: &EncoderParams,
    cache: &EncoderCache,
    d_features: Array2<f64>,
    grads: &mut EncoderParams,
) {
    let mut de = d_features;
    for l in (0..params.mix.len()).rev() {
        let (m, a) = (&params.mix[l], &params.adapters[l]);
        let q = &cache.adapter_act[l];
        let h = &cache.hidden[l];
        grads.adapters[l].up += &de.t().dot(q);
        let dq = de.dot(&a.up) * q.mapv(|v| 1.0 - v * v);
        grads.adapters[l].down += &dq.t().dot(h);
        let dh = de + dq.dot(&a.down);
        let act = &cache.mix_act[l];
        let dpre = dh.dot(&m.w2) * act.mapv(|v| 1.0 - v * v);
        de = dh + dpre.dot(&m.w1);
    }
}
