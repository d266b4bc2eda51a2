use ndarray::{Array2, ArrayView2};

use super::types::ImagingCore;
use crate::error::{Error, Result};
use crate::nn::interp::Resampler;

/// Working resolution of the imaging pipeline.
pub const WORKING_SIZE: usize = 1024;

/// Bilinear resize to `WORKING_SIZE` followed by per-image min-max scaling.
pub fn preprocess_image(raw: ArrayView2<f64>) -> Result<Array2<f64>> {
    preprocess_image_to(raw, WORKING_SIZE)
}

/// As [`preprocess_image`] with an explicit square output size.
///
/// Constant images map to all zeros. The 3-channel replication expected by
/// the encoder happens inside the encoder and is not stored.
pub fn preprocess_image_to(raw: ArrayView2<f64>, size: usize) -> Result<Array2<f64>> {
    let (h, w) = raw.dim();
    if h < 2 || w < 2 {
        return Err(Error::Shape(format!("image {h}x{w} is smaller than 2x2")));
    }
    if size == 0 {
        return Err(Error::InvalidInput("output size must be positive".into()));
    }
    if let Some(pos) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "raw image pixel ({}, {})",
            pos / w,
            pos % w
        )));
    }
    let resized = Resampler::bilinear((h, w), (size, size)).apply(raw);
    Ok(min_max_normalize(resized))
}

pub fn min_max_normalize(mut img: Array2<f64>) -> Array2<f64> {
    let (lo, hi) = img
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if range > 0.0 {
        img.mapv_inplace(|v| ((v - lo) / range).clamp(0.0, 1.0));
    } else {
        img.fill(0.0);
    }
    img
}

/// Resizes masks by nearest sampling so that containment survives.
pub fn resize_mask(mask: ArrayView2<bool>, size: usize) -> Array2<bool> {
    let r = Resampler::nearest(mask.dim(), (size, size));
    Array2::from_shape_fn((size, size), |(y, x)| mask[[r.rows.lo[y], r.cols.lo[x]]])
}

/// Preprocessed copy of a core at `size x size`, validated.
pub fn preprocess_core(core: &ImagingCore, size: usize) -> Result<ImagingCore> {
    let same = core.image.nrows() == size;
    let out = ImagingCore {
        image: preprocess_image_to(core.image.view(), size)?,
        needle_mask: if same { core.needle_mask.clone() } else { resize_mask(core.needle_mask.view(), size) },
        prostate_mask: if same { core.prostate_mask.clone() } else { resize_mask(core.prostate_mask.view(), size) },
        grade: core.grade,
        involvement: core.involvement,
        patient_id: core.patient_id.clone(),
        core_id: core.core_id.clone(),
    };
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn bilinear_oracle(src: &Array2<f64>, out: usize, y: usize, x: usize) -> f64 {
        // direct point evaluation, half-pixel centers
        let n = src.nrows() as f64;
        let sy = ((y as f64 + 0.5) * n / out as f64 - 0.5).clamp(0.0, n - 1.0);
        let sx = ((x as f64 + 0.5) * n / out as f64 - 0.5).clamp(0.0, n - 1.0);
        let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(src.nrows() - 1), (x0 + 1).min(src.ncols() - 1));
        let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
        src[[y0, x0]] * (1.0 - fy) * (1.0 - fx)
            + src[[y0, x1]] * (1.0 - fy) * fx
            + src[[y1, x0]] * fy * (1.0 - fx)
            + src[[y1, x1]] * fy * fx
    }

    #[test]
    fn ramp_spans_unit_range() {
        let raw = Array2::from_shape_fn((512, 512), |(i, j)| (i + j) as f64);
        let out = preprocess_image(raw.view()).unwrap();
        assert_eq!(out.dim(), (1024, 1024));
        let min = out.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(min, 0.0);
        assert_eq!(max, 1.0);
    }

    #[test]
    fn constant_maps_to_zero() {
        let raw = Array2::from_elem((40, 30), 7.0);
        let out = preprocess_image(raw.view()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_by_two_matches_oracle() {
        let raw = array![[0.0, 1.0], [2.0, 3.0]];
        let resized = Resampler::bilinear((2, 2), (1024, 1024)).apply(raw.view());
        for &(y, x) in &[(0, 0), (0, 1023), (1023, 0), (1023, 1023), (511, 512), (300, 700)] {
            assert!((resized[[y, x]] - bilinear_oracle(&raw, 1024, y, x)).abs() < 1e-12);
        }
        assert_eq!(resized[[0, 0]], 0.0);
        assert_eq!(resized[[0, 1023]], 1.0);
        assert_eq!(resized[[1023, 0]], 2.0);
        assert_eq!(resized[[1023, 1023]], 3.0);
        let out = preprocess_image(raw.view()).unwrap();
        assert!((out[[1023, 1023]] - 1.0).abs() < 1e-12);
        assert!((out[[1023, 0]] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn idempotent_on_normalized_input() {
        let mut img = Array2::from_shape_fn((1024, 1024), |(i, j)| ((i * 31 + j * 17) % 101) as f64 / 100.0);
        img[[0, 0]] = 0.0;
        img[[5, 5]] = 1.0;
        let out = preprocess_image(img.view()).unwrap();
        let err = (&out - &img).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err <= 1e-6);
    }

    #[test]
    fn mask_resize_keeps_cells() {
        let m = array![[true, false], [false, true]];
        let big = resize_mask(m.view(), 4);
        assert_eq!(big.iter().filter(|&&v| v).count(), 8);
        assert!(big[[1, 1]] && big[[2, 2]] && !big[[1, 2]]);
        assert_eq!(resize_mask(big.view(), 2), m);
    }

    #[test]
    fn rejects_non_finite_and_tiny() {
        let mut raw = Array2::<f64>::zeros((4, 4));
        raw[[2, 3]] = f64::INFINITY;
        assert!(matches!(preprocess_image(raw.view()), Err(Error::NonFinite(_))));
        assert!(preprocess_image(Array2::<f64>::zeros((1, 5)).view()).is_err());
    }
}
