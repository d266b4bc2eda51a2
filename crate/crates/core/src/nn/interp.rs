//! Separable bilinear resampling with half-pixel centers.
//!
//! Output pixel `y` samples the source at `(y + 0.5) * in / out - 0.5`,
//! clamped to `[0, in - 1]`. Resampling to the same size is the identity.

use ndarray::{Array2, ArrayView2};

/// Per-axis sampling taps: output `i` reads `lo[i]` with weight `1 - frac[i]`
/// and `hi[i]` with weight `frac[i]`.
#[derive(Clone, Debug)]
pub struct AxisTaps {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f64>,
}

impl AxisTaps {
    pub fn bilinear(input: usize, output: usize) -> Self {
        let scale = input as f64 / output as f64;
        let max = (input - 1) as f64;
        let mut lo = Vec::with_capacity(output);
        let mut hi = Vec::with_capacity(output);
        let mut frac = Vec::with_capacity(output);
        for i in 0..output {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let l = src.floor() as usize;
            let h = (l + 1).min(input - 1);
            lo.push(l);
            hi.push(h);
            frac.push(src - l as f64);
        }
        AxisTaps { lo, hi, frac }
    }

    /// Each output reads the source cell it falls into.
    pub fn nearest(input: usize, output: usize) -> Self {
        let mut lo = Vec::with_capacity(output);
        for i in 0..output {
            lo.push(((i * input) / output).min(input - 1));
        }
        AxisTaps {
            hi: lo.clone(),
            frac: vec![0.0; output],
            lo,
        }
    }

    pub fn len(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.is_empty()
    }
}

/// A 2-D resampling plan; `apply` is linear so `apply_transpose` is its adjoint.
#[derive(Clone, Debug)]
pub struct Resampler {
    pub rows: AxisTaps,
    pub cols: AxisTaps,
    in_shape: (usize, usize),
}

impl Resampler {
    pub fn bilinear(in_shape: (usize, usize), out_shape: (usize, usize)) -> Self {
        Resampler {
            rows: AxisTaps::bilinear(in_shape.0, out_shape.0),
            cols: AxisTaps::bilinear(in_shape.1, out_shape.1),
            in_shape,
        }
    }

    pub fn nearest(in_shape: (usize, usize), out_shape: (usize, usize)) -> Self {
        Resampler {
            rows: AxisTaps::nearest(in_shape.0, out_shape.0),
            cols: AxisTaps::nearest(in_shape.1, out_shape.1),
            in_shape,
        }
    }

    pub fn out_shape(&self) -> (usize, usize) {
        (self.rows.len(), self.cols.len())
    }

    /// Value at one output pixel.
    #[inline]
    pub fn sample(&self, src: &ArrayView2<f64>, y: usize, x: usize) -> f64 {
        let (r0, r1, fy) = (self.rows.lo[y], self.rows.hi[y], self.rows.frac[y]);
        let (c0, c1, fx) = (self.cols.lo[x], self.cols.hi[x], self.cols.frac[x]);
        let top = src[[r0, c0]] * (1.0 - fx) + src[[r0, c1]] * fx;
        let bot = src[[r1, c0]] * (1.0 - fx) + src[[r1, c1]] * fx;
        top * (1.0 - fy) + bot * fy
    }

    /// Adjoint of [`Resampler::sample`] for one output pixel.
    #[inline]
    pub fn scatter(&self, grad: f64, y: usize, x: usize, dst: &mut Array2<f64>) {
        let (r0, r1, fy) = (self.rows.lo[y], self.rows.hi[y], self.rows.frac[y]);
        let (c0, c1, fx) = (self.cols.lo[x], self.cols.hi[x], self.cols.frac[x]);
        dst[[r0, c0]] += grad * (1.0 - fy) * (1.0 - fx);
        dst[[r0, c1]] += grad * (1.0 - fy) * fx;
        dst[[r1, c0]] += grad * fy * (1.0 - fx);
        dst[[r1, c1]] += grad * fy * fx;
    }

    pub fn apply(&self, src: ArrayView2<f64>) -> Array2<f64> {
        debug_assert_eq!(src.dim(), self.in_shape);
        let (oh, ow) = self.out_shape();
        // columns first, then rows
        let mut tmp = Array2::<f64>::zeros((self.in_shape.0, ow));
        for r in 0..self.in_shape.0 {
            for x in 0..ow {
                let (c0, c1, fx) = (self.cols.lo[x], self.cols.hi[x], self.cols.frac[x]);
                tmp[[r, x]] = src[[r, c0]] * (1.0 - fx) + src[[r, c1]] * fx;
            }
        }
        let mut out = Array2::<f64>::zeros((oh, ow));
        for y in 0..oh {
            let (r0, r1, fy) = (self.rows.lo[y], self.rows.hi[y], self.rows.frac[y]);
            for x in 0..ow {
                out[[y, x]] = tmp[[r0, x]] * (1.0 - fy) + tmp[[r1, x]] * fy;
            }
        }
        out
    }

    /// Scatter a gradient on the output back onto the source grid.
    pub fn apply_transpose(&self, grad_out: ArrayView2<f64>) -> Array2<f64> {
        let (oh, ow) = self.out_shape();
        debug_assert_eq!(grad_out.dim(), (oh, ow));
        let mut tmp = Array2::<f64>::zeros((self.in_shape.0, ow));
        for y in 0..oh {
            let (r0, r1, fy) = (self.rows.lo[y], self.rows.hi[y], self.rows.frac[y]);
            for x in 0..ow {
                let g = grad_out[[y, x]];
                if g != 0.0 {
                    tmp[[r0, x]] += g * (1.0 - fy);
                    tmp[[r1, x]] += g * fy;
                }
            }
        }
        let mut src = Array2::<f64>::zeros(self.in_shape);
        for r in 0..self.in_shape.0 {
            for x in 0..ow {
                let g = tmp[[r, x]];
                if g != 0.0 {
                    let (c0, c1, fx) = (self.cols.lo[x], self.cols.hi[x], self.cols.frac[x]);
                    src[[r, c0]] += g * (1.0 - fx);
                    src[[r, c1]] += g * fx;
                }
            }
        }
        src
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn same_size_is_identity() {
        let a = array![[0.1, 0.7, 0.3], [0.9, 0.2, 0.5]];
        let r = Resampler::bilinear((2, 3), (2, 3));
        assert_eq!(r.apply(a.view()), a);
    }

    #[test]
    fn transpose_is_adjoint() {
        let a = array![[0.1, 0.7], [0.9, 0.2]];
        let g = Array2::from_shape_fn((5, 7), |(i, j)| (i * 7 + j) as f64 * 0.01 - 0.1);
        let r = Resampler::bilinear((2, 2), (5, 7));
        let lhs: f64 = (&r.apply(a.view()) * &g).sum();
        let rhs: f64 = (&r.apply_transpose(g.view()) * &a).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn sample_matches_apply() {
        let a = array![[0.0, 1.0, 4.0], [2.0, 3.0, -1.0], [5.0, 0.5, 2.5]];
        let r = Resampler::bilinear((3, 3), (8, 5));
        let full = r.apply(a.view());
        for y in 0..8 {
            for x in 0..5 {
                assert!((full[[y, x]] - r.sample(&a.view(), y, x)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nearest_repeats_cells() {
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        let out = Resampler::nearest((2, 2), (4, 4)).apply(a.view());
        assert_eq!(out[[0, 0]], 1.0);
        assert_eq!(out[[1, 1]], 1.0);
        assert_eq!(out[[2, 1]], 3.0);
        assert_eq!(out[[3, 3]], 4.0);
    }
}
