//! Central finite-difference checking of the analytic loss gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::evidential::Activation;
use crate::grid::{DenseGrid, LabelGrid};
use crate::losses::{lovasz_error_orders, LossKind, ScheduleState};

pub const FD_STEP: f64 = 1e-5;

/// Gradient magnitudes below this are compared in absolute terms. A double
/// loss near 1 differenced at [`FD_STEP`] carries about 1e-11 of round-off,
/// so smaller components cannot show a meaningful relative error.
pub const RELATIVE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub loss: LossKind,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// Coordinates skipped because the step crosses a sorting tie or a ReLU kink.
    pub skipped: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn perturbed(x: &DenseGrid, i: usize, delta: f64) -> DenseGrid {
    let (h, w, c) = x.shape();
    let mut data = x.data().to_vec();
    data[i] += delta;
    DenseGrid::new(h, w, c, data).expect("finite perturbation")
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every entry.
pub fn finite_difference(f: impl Fn(&DenseGrid) -> f64, x: &DenseGrid, step: f64) -> DenseGrid {
    let (h, w, c) = x.shape();
    let data = (0..x.data().len())
        .map(|i| (f(&perturbed(x, i, step)) - f(&perturbed(x, i, -step))) / (2.0 * step))
        .collect();
    DenseGrid::new(h, w, c, data).expect("finite differences of a finite loss")
}

pub fn check_gradient(
    kind: LossKind,
    logits: &DenseGrid,
    labels: &LabelGrid,
    state: &ScheduleState,
    act: Activation,
    step: f64,
) -> GradCheckReport {
    let eval = |x: &DenseGrid| kind.evaluate(x, labels, state, act).expect("valid loss input");
    let analytic = eval(logits).gradient;
    let base_orders = kind.has_sorting().then(|| lovasz_error_orders(logits, labels, act).unwrap());

    let mut report = GradCheckReport { loss: kind, max_rel_error: 0.0, max_abs_error: 0.0, checked: 0, skipped: 0 };
    for i in 0..logits.data().len() {
        let up = perturbed(logits, i, step);
        let down = perturbed(logits, i, -step);
        let kink = act == Activation::Relu && logits.data()[i].abs() <= step;
        let tie = base_orders.as_ref().is_some_and(|orders| {
            lovasz_error_orders(&up, labels, act).unwrap() != *orders
                || lovasz_error_orders(&down, labels, act).unwrap() != *orders
        });
        if kink || tie {
            report.skipped += 1;
            continue;
        }
        let numeric = (eval(&up).value - eval(&down).value) / (2.0 * step);
        let a = analytic.data()[i];
        report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
        report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric));
        report.checked += 1;
    }
    report
}

/// Seeded random logits in `[-3, 3)` and uniformly random labels.
pub fn random_problem(seed: u64, height: usize, width: usize, classes: usize) -> (DenseGrid, LabelGrid) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = DenseGrid::from_fn(height, width, classes, |_, _, _| rng.random_range(-3.0..3.0))
        .expect("finite random logits");
    let labels = (0..height * width).map(|_| rng.random_range(0..classes as u32)).collect();
    (logits, LabelGrid::new(height, width, labels).expect("matching size"))
}
