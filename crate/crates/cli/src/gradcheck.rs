use evpan_core::evidential::Activation;
use evpan_core::gradcheck::{check_gradient, random_problem, GradCheckReport, FD_STEP};
use evpan_core::losses::{LossKind, ScheduleState};

use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub loss: LossKind,
    pub seed: u64,
    pub shape: (usize, usize, usize),
    pub tol: Option<f64>,
    pub activation: Activation,
    pub iteration: u64,
    pub iters_per_epoch: u64,
}

/// Relative tolerance when `--tol` is not given.
pub fn default_tolerance(loss: LossKind) -> f64 {
    if loss.has_sorting() {
        1e-4
    } else {
        1e-5
    }
}

pub fn parse_shape(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = s.split('x').collect();
    let [h, w, c] = parts[..] else {
        return Err(format!("shape '{s}' is not HxWxC"));
    };
    let num = |p: &str| p.parse::<usize>().map_err(|_| format!("shape '{s}' is not HxWxC"));
    let shape = (num(h)?, num(w)?, num(c)?);
    if shape.0 == 0 || shape.1 == 0 || shape.2 < 2 {
        return Err(format!("shape '{s}' needs H, W >= 1 and C >= 2"));
    }
    Ok(shape)
}

pub struct GradcheckOutcome {
    pub report: GradCheckReport,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn gradcheck(opts: &GradcheckOptions) -> Result<GradcheckOutcome, CliError> {
    if opts.iters_per_epoch == 0 {
        return Err(CliError::Validation("--iters-per-epoch must be at least 1".into()));
    }
    let tolerance = opts.tol.unwrap_or_else(|| default_tolerance(opts.loss));
    let (h, w, c) = opts.shape;
    let (logits, labels) = random_problem(opts.seed, h, w, c);
    let state = ScheduleState::new(opts.iteration, opts.iters_per_epoch);
    let report = check_gradient(opts.loss, &logits, &labels, &state, opts.activation, FD_STEP);
    let passed = report.checked > 0 && report.max_rel_error < tolerance;
    Ok(GradcheckOutcome { report, tolerance, passed })
}

pub fn format_table(opts: &GradcheckOptions, o: &GradcheckOutcome) -> String {
    let (h, w, c) = opts.shape;
    format!(
        "{:<8} {:<8} {:>6} {:>8} {:>8} {:>12} {:>12} {:>10}  {}\n{:<8} {:<8} {:>6} {:>8} {:>8} {:>12.3e} {:>12.3e} {:>10.1e}  {}\n",
        "loss", "shape", "seed", "checked", "skipped", "max_rel_err", "max_abs_err", "tol", "result",
        o.report.loss.name(),
        format!("{h}x{w}x{c}"),
        opts.seed,
        o.report.checked,
        o.report.skipped,
        o.report.max_rel_error,
        o.report.max_abs_error,
        o.tolerance,
        if o.passed { "PASS" } else { "FAIL" },
    )
}
