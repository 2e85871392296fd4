//! Finite-difference checks of hand-written gradients.

use crate::rng::Rng;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;

/// Denominator floor so that two vanishing gradients compare as equal.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-8;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// `(f(x + h) - f(x - h)) / 2h` given the two evaluations.
pub fn central_difference(f_plus: f64, f_minus: f64, h: f64) -> f64 {
    (f_plus - f_minus) / (2.0 * h)
}

/// Result of evaluating the loss with one coordinate perturbed. `pattern` is
/// whatever identifies the piecewise-linear region (e.g. all ReLU masks);
/// a perturbation that changes it straddles a kink and is not comparable.
#[derive(Debug, Clone)]
pub struct Probe<P> {
    pub loss: f64,
    pub pattern: P,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_relative_error: f64,
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        if other.max_relative_error > self.max_relative_error || self.worst.is_none() {
            if other.worst.is_some() {
                self.max_relative_error = other.max_relative_error;
                self.worst = other.worst;
            }
        }
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_relative_error < tolerance
    }
}

/// Up to `count` distinct indices below `len`, sorted.
pub fn sample_indices(len: usize, count: usize, rng: &mut Rng) -> Vec<usize> {
    let mut all: Vec<usize> = (0..len).collect();
    if count < len {
        rng.shuffle(&mut all);
        all.truncate(count);
        all.sort_unstable();
    }
    all
}

/// Compare `analytic[i]` with a central difference for each index in
/// `indices`. `eval(i, delta)` must evaluate the loss with coordinate `i`
/// offset by `delta` and leave the parameters unchanged afterwards.
pub fn check_coordinates<P: PartialEq>(
    name: &str,
    analytic: &[f64],
    indices: &[usize],
    step: f64,
    base_pattern: &P,
    mut eval: impl FnMut(usize, f64) -> Probe<P>,
) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    for &i in indices {
        let plus = eval(i, step);
        let minus = eval(i, -step);
        if plus.pattern != *base_pattern || minus.pattern != *base_pattern {
            report.skipped += 1;
            continue;
        }
        let numeric = central_difference(plus.loss, minus.loss, step);
        let err = relative_error(analytic[i], numeric);
        report.checked += 1;
        if report.worst.is_none() || err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst = Some((name.to_string(), i, analytic[i], numeric));
        }
    }
    report
}
