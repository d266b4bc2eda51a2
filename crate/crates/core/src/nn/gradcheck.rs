//! Central finite-difference checks against hand-written gradients.

use super::ParamSet;

pub const DEFAULT_STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central difference of `f` at `x` along every coordinate.
pub fn numeric_grad_vec(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

/// Compares `analytic` with central differences of `f` over every trainable
/// coordinate of `params`.
pub fn check_params<P: ParamSet + Clone>(
    params: &P,
    analytic: &P,
    step: f64,
    floor: f64,
    f: impl Fn(&P) -> f64,
) -> GradReport {
    let mut report = GradReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: String::new(),
    };
    let names: Vec<(String, usize, bool)> = params
        .tensors()
        .iter()
        .map(|t| (t.name.clone(), t.data.len(), t.trainable))
        .collect();
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.data.to_vec()).collect();
    let mut probe = params.clone();
    for (ti, (name, len, trainable)) in names.iter().enumerate() {
        if !trainable {
            continue;
        }
        for j in 0..*len {
            let orig = probe.tensors_mut()[ti].data[j];
            probe.tensors_mut()[ti].data[j] = orig + step;
            let up = f(&probe);
            probe.tensors_mut()[ti].data[j] = orig - step;
            let down = f(&probe);
            probe.tensors_mut()[ti].data[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(grads[ti][j], numeric, floor);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = format!("{name}[{j}]: analytic {} numeric {numeric}", grads[ti][j]);
            }
        }
    }
    report
}
