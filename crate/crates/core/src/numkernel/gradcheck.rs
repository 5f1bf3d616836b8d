use crate::error::{DseError, Result};

use super::{Parameterized, SeededRng};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Coordinates sampled per parameter tensor; smaller tensors are checked
    /// exhaustively.
    pub samples_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            samples_per_tensor: 64,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub coordinates_checked: usize,
    /// Every checked coordinate, in check order.
    pub coordinates: Vec<CoordinateCheck>,
}

#[derive(Debug, Clone)]
pub struct CoordinateCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

impl GradCheckReport {
    /// Number of checked coordinates whose error exceeds `tol`.
    pub fn count_above(&self, tol: f64) -> usize {
        self.coordinates.iter().filter(|c| c.rel_error > tol).count()
    }
}

/// Error of an analytic derivative against its finite-difference estimate:
/// relative to the estimate, or absolute when the estimate is below `1e-8`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = numeric.abs();
    let diff = (analytic - numeric).abs();
    if denom < 1e-8 {
        diff
    } else {
        diff / denom
    }
}

/// Compares the gradients already stored in `model`'s parameters against
/// central differences of `loss_fn`.
///
/// Each perturbed coordinate is restored to its exact original bits, so the
/// model is unchanged on return.
pub fn finite_diff_check<M, F>(
    model: &mut M,
    mut loss_fn: F,
    h: f64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    M: Parameterized,
    F: FnMut(&M) -> f64,
{
    if h.is_nan() || h <= 0.0 {
        return Err(DseError::Config(format!(
            "finite difference step must be > 0, got {h}"
        )));
    }
    let base = loss_fn(model);
    if !base.is_finite() {
        return Err(DseError::NonFinite(format!("loss at the check point is {base}")));
    }

    let mut rng = SeededRng::new(opts.seed);
    let plan: Vec<(String, Vec<usize>)> = model
        .parameters()
        .into_iter()
        .map(|(name, p)| {
            let len = p.value.len();
            let coords = if len <= opts.samples_per_tensor {
                (0..len).collect()
            } else {
                rng.sample_indices(len, opts.samples_per_tensor)
            };
            (name, coords)
        })
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        coordinates_checked: 0,
        coordinates: Vec::new(),
    };

    for (tensor_idx, (name, coords)) in plan.iter().enumerate() {
        for &c in coords {
            let (original, analytic) = {
                let ps = model.parameters_mut();
                let p = &ps[tensor_idx].1;
                (p.value.data()[c], p.grad.data()[c])
            };
            set_coord(model, tensor_idx, c, original + h);
            let plus = loss_fn(model);
            set_coord(model, tensor_idx, c, original - h);
            let minus = loss_fn(model);
            set_coord(model, tensor_idx, c, original);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(DseError::NonFinite(format!(
                    "loss became non-finite perturbing {name}[{c}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic, numeric);
            report.coordinates_checked += 1;
            report.coordinates.push(CoordinateCheck {
                name: name.clone(),
                index: c,
                analytic,
                numeric,
                rel_error: err,
            });
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), c));
                report.analytic_at_worst = analytic;
                report.numeric_at_worst = numeric;
            }
        }
    }
    Ok(report)
}

fn set_coord<M: Parameterized>(model: &mut M, tensor_idx: usize, coord: usize, value: f64) {
    let mut ps = model.parameters_mut();
    ps[tensor_idx].1.value.data_mut()[coord] = value;
}
