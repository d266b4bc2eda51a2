use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tokens::TokenGrid;
use crate::error::{Error, Result};
use crate::nn::interp::Resampler;
use crate::nn::{init_matrix, sigmoid, tmut1, tmut2, tref1, tref2, TensorMut, TensorRef};

/// Probabilities are kept this far from 0 and 1.
pub const PROB_FLOOR: f64 = 1e-15;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Upsample {
    #[default]
    Bilinear,
    Nearest,
}

impl Upsample {
    pub fn resampler(self, grid: (usize, usize), image: (usize, usize)) -> Resampler {
        match self {
            Upsample::Bilinear => Resampler::bilinear(grid, image),
            Upsample::Nearest => Resampler::nearest(grid, image),
        }
    }
}

/// Per-token head: `logit = w2 . tanh(W1 e + b1) + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: Array1<f64>,
}

impl DecoderParams {
    pub fn init(embed: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        DecoderParams {
            w1: init_matrix(hidden, embed, 1.0, rng),
            b1: Array1::zeros(hidden),
            w2: init_matrix(1, hidden, 1.0, rng).row(0).to_owned(),
            b2: Array1::zeros(1),
        }
    }

    pub(crate) fn tensors(&self) -> Vec<TensorRef<'_>> {
        vec![
            tref2("dec.w1", &self.w1, true),
            tref1("dec.b1", &self.b1, true),
            tref1("dec.w2", &self.w2, true),
            tref1("dec.b2", &self.b2, true),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        vec![
            tmut2("dec.w1", &mut self.w1, true),
            tmut1("dec.b1", &mut self.b1, true),
            tmut1("dec.w2", &mut self.w2, true),
            tmut1("dec.b2", &mut self.b2, true),
        ]
    }
}

pub(crate) struct DecoderCache {
    pub act: Array2<f64>,
}

pub(crate) fn token_logits(features: ArrayView2<f64>, params: &DecoderParams) -> (Array1<f64>, DecoderCache) {
    let act = (features.dot(&params.w1.t()) + &params.b1).mapv(f64::tanh);
    let logits = act.dot(&params.w2) + params.b2[0];
    (logits, DecoderCache { act })
}

/// Returns `dL/dfeatures`.
pub(crate) fn decoder_backward(
    features: ArrayView2<f64>,
    params: &DecoderParams,
    cache: &DecoderCache,
    dlogits: &Array1<f64>,
    grads: &mut DecoderParams,
) -> Array2<f64> {
    grads.w2 += &cache.act.t().dot(dlogits);
    grads.b2[0] += dlogits.sum();
    let mut dpre = cache.act.mapv(|v| 1.0 - v * v);
    for (mut row, &d) in dpre.rows_mut().into_iter().zip(dlogits.iter()) {
        row.zip_mut_with(&params.w2, |x, &w| *x *= w * d);
    }
    grads.w1 += &dpre.t().dot(&features);
    grads.b1 += &dpre.sum_axis(ndarray::Axis(0));
    dpre.dot(&params.w1)
}

/// Per-pixel cancer probability.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub probs: Array2<f64>,
}

impl Heatmap {
    pub fn from_logits(logits: &Array2<f64>) -> Self {
        Heatmap {
            probs: logits.mapv(|u| sigmoid(u).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.probs.dim()
    }
}

/// Upsamples a token-logit grid to image resolution and applies the logistic map.
pub fn logits_to_heatmap(grid_logits: ArrayView2<f64>, image: (usize, usize), upsample: Upsample) -> Heatmap {
    let r = upsample.resampler(grid_logits.dim(), image);
    Heatmap::from_logits(&r.apply(grid_logits))
}

/// Decoder head over encoded tokens, upsampled to the image.
pub fn decode(grid: &TokenGrid, params: &DecoderParams, upsample: Upsample) -> Result<Heatmap> {
    if grid.tokens.ncols() != params.w1.ncols() {
        return Err(Error::Shape(format!(
            "token width {} but decoder expects {}",
            grid.tokens.ncols(),
            params.w1.ncols()
        )));
    }
    let (logits, _) = token_logits(grid.tokens.view(), params);
    let g = logits.into_shape_with_order((grid.rows, grid.cols)).expect("grid size");
    Ok(logits_to_heatmap(g.view(), grid.image_shape(), upsample))
}
