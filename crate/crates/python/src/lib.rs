//! Python bindings. Grids cross the boundary as flat row-major lists plus
//! explicit shapes; reports come back as JSON strings.

use evpan_core::evidential::{probabilities_and_uncertainty, Activation};
use evpan_core::fusion::{fuse as fuse_core, FusionConfig, InstancePrediction};
use evpan_core::gradcheck::{check_gradient, random_problem, FD_STEP};
use evpan_core::losses::{lambda_schedule as schedule, LossKind, ScheduleState};
use evpan_core::metrics::{self, EvalAccumulator, EvalConfig};
use evpan_core::synth::{self as synth_core, PredictorMode, SceneConfig};
use evpan_core::{BBox, ClassSplit, DenseGrid, LabelGrid, PanopticGrid};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

type Shape = (usize, usize, usize);

/// `((x0, y0, x1, y1), class_id, class_prob, mask_logits, mask_size)`.
type InstanceTuple = ((usize, usize, usize, usize), u32, f64, Vec<f64>, usize);

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn dense(data: Vec<f64>, (h, w, c): Shape) -> PyResult<DenseGrid> {
    DenseGrid::new(h, w, c, data).map_err(value_err)
}

fn activation(name: &str) -> PyResult<Activation> {
    name.parse().map_err(value_err)
}

/// Class probabilities and per-pixel uncertainty `C / S` from logits.
#[pyfunction]
#[pyo3(signature = (logits, shape, activation = "softplus"))]
fn dirichlet(logits: Vec<f64>, shape: Shape, activation: &str) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let act = self::activation(activation)?;
    let (p, u) = probabilities_and_uncertainty(&dense(logits, shape)?, act).map_err(value_err)?;
    Ok((p.into_data(), u.into_data()))
}

/// Value and gradient of a loss named `log`, `digamma`, `mse`, `kl`, `lovasz` or `total`.
#[pyfunction]
#[pyo3(signature = (name, logits, labels, shape, activation = "softplus", iteration = 0, iters_per_epoch = 1))]
fn loss(
    name: &str,
    logits: Vec<f64>,
    labels: Vec<u32>,
    shape: Shape,
    activation: &str,
    iteration: u64,
    iters_per_epoch: u64,
) -> PyResult<(f64, Vec<f64>)> {
    let kind: LossKind = name.parse().map_err(value_err)?;
    let labels = LabelGrid::new(shape.0, shape.1, labels).map_err(value_err)?;
    if iters_per_epoch == 0 {
        return Err(value_err("iters_per_epoch must be at least 1"));
    }
    let state = ScheduleState::new(iteration, iters_per_epoch);
    let r = kind.evaluate(&dense(logits, shape)?, &labels, &state, self::activation(activation)?).map_err(value_err)?;
    Ok((r.value, r.gradient.into_data()))
}

#[pyfunction]
#[pyo3(signature = (iteration, iters_per_epoch, lambda_max = 0.06))]
fn lambda_schedule(iteration: u64, iters_per_epoch: u64, lambda_max: f64) -> PyResult<f64> {
    if iters_per_epoch == 0 || lambda_max.is_nan() || lambda_max < 0.0 {
        return Err(value_err("iters_per_epoch must be >= 1 and lambda_max >= 0"));
    }
    Ok(schedule(&ScheduleState::new(iteration, iters_per_epoch).with_lambda_max(lambda_max)))
}

/// Largest relative error between analytic and finite-difference gradients.
#[pyfunction]
#[pyo3(signature = (name, seed, shape, activation = "softplus"))]
fn gradcheck(name: &str, seed: u64, shape: Shape, activation: &str) -> PyResult<f64> {
    let kind: LossKind = name.parse().map_err(value_err)?;
    if shape.0 == 0 || shape.1 == 0 || shape.2 < 2 {
        return Err(value_err("shape needs H, W >= 1 and C >= 2"));
    }
    let (logits, labels) = random_problem(seed, shape.0, shape.1, shape.2);
    let r = check_gradient(kind, &logits, &labels, &ScheduleState::new(30, 1), self::activation(activation)?, FD_STEP);
    Ok(r.max_rel_error)
}

#[pyfunction]
fn upq(pq: f64, pece: f64) -> f64 {
    metrics::upq(pq, pece)
}

#[pyfunction]
#[pyo3(signature = (confidence, correct, bins = 10))]
fn uece(confidence: Vec<f64>, correct: Vec<bool>, bins: usize) -> PyResult<f64> {
    let n = confidence.len();
    metrics::uece(&dense(confidence, (1, n, 1))?, &correct, bins).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (probs, labels, shape, bins = 10))]
fn ece(probs: Vec<f64>, labels: Vec<u32>, shape: Shape, bins: usize) -> PyResult<f64> {
    let labels = LabelGrid::new(shape.0, shape.1, labels).map_err(value_err)?;
    metrics::ece_maxprob(&dense(probs, shape)?, &labels, bins).map_err(value_err)
}

/// `(pred_id, gt_id, iou)` for every matched segment pair.
#[pyfunction]
fn match_segments(pred: Vec<u32>, gt: Vec<u32>, height: usize, width: usize, num_classes: usize) -> PyResult<Vec<(u32, u32, f64)>> {
    let pred = PanopticGrid::new(height, width, pred).map_err(value_err)?;
    let gt = PanopticGrid::new(height, width, gt).map_err(value_err)?;
    let (m, _) = metrics::match_segments(&pred, &gt, num_classes).map_err(value_err)?;
    Ok(m.into_iter().map(|m| (m.pred_id, m.gt_id, m.iou)).collect())
}

/// Mergeable dataset evaluation state.
#[pyclass(name = "EvalAccumulator")]
struct PyEvalAccumulator {
    inner: EvalAccumulator,
}

#[pymethods]
impl PyEvalAccumulator {
    #[new]
    #[pyo3(signature = (stuff, thing, bins = 10))]
    fn new(stuff: Vec<u32>, thing: Vec<u32>, bins: usize) -> PyResult<Self> {
        let split = ClassSplit::new(stuff, thing).map_err(value_err)?;
        Ok(Self { inner: EvalAccumulator::new(EvalConfig::new(split, bins).map_err(value_err)?) })
    }

    /// Adds one image; `probs` (H×W×C) enables the max-probability ECE.
    #[pyo3(signature = (pred, gt, uncertainty, height, width, probs = None))]
    fn add_image(
        &mut self,
        pred: Vec<u32>,
        gt: Vec<u32>,
        uncertainty: Vec<f64>,
        height: usize,
        width: usize,
        probs: Option<Vec<f64>>,
    ) -> PyResult<()> {
        let pred = PanopticGrid::new(height, width, pred).map_err(value_err)?;
        let gt = PanopticGrid::new(height, width, gt).map_err(value_err)?;
        let unc = dense(uncertainty, (height, width, 1))?;
        let classes = self.inner.config().split.num_classes;
        let probs = probs.map(|p| dense(p, (height, width, classes))).transpose()?;
        self.inner.add_image(&pred, &gt, &unc, probs.as_ref()).map_err(value_err)?;
        Ok(())
    }

    fn merge(&self, other: &Self) -> PyResult<Self> {
        Ok(Self { inner: metrics::merge_accumulators(&self.inner, &other.inner).map_err(value_err)? })
    }

    /// The metric report as a JSON string.
    fn report_json(&self) -> String {
        serde_json::to_string(&self.inner.report()).expect("report serializes")
    }

    #[getter]
    fn images(&self) -> u64 {
        self.inner.images()
    }
}

/// Ground-truth panoptic ids and semantic logits (`H×W×C`) of a seeded scene.
#[pyfunction]
#[pyo3(signature = (height = 64, width = 64, n_stuff = 3, n_thing = 2, n_instances = 4, noise_level = 0.0, target_confidence = 0.9, seed = 0, calibrated = false))]
#[allow(clippy::too_many_arguments)]
fn synth_scene(
    height: usize,
    width: usize,
    n_stuff: usize,
    n_thing: usize,
    n_instances: usize,
    noise_level: f64,
    target_confidence: f64,
    seed: u64,
    calibrated: bool,
) -> PyResult<(Vec<u32>, Vec<f64>)> {
    let mode = if calibrated { PredictorMode::Calibrated } else { PredictorMode::Fixed };
    let cfg = SceneConfig { height, width, n_stuff, n_thing, n_instances, noise_level, target_confidence, seed, mode };
    let (gt, _) = synth_core::generate_scene(&cfg).map_err(value_err)?;
    let (logits, _) = synth_core::synthesize_predictions(&gt, &cfg).map_err(value_err)?;
    Ok((gt.data().to_vec(), logits.into_data()))
}

/// Probabilistic fusion. Each instance carries a square
/// `mask_size × mask_size` list of mask logits. Returns panoptic ids and
/// the fused uncertainty.
#[pyfunction]
fn fuse(
    logits: Vec<f64>,
    shape: Shape,
    instances: Vec<InstanceTuple>,
    stuff: Vec<u32>,
    thing: Vec<u32>,
) -> PyResult<(Vec<u32>, Vec<f64>)> {
    let split = ClassSplit::new(stuff, thing).map_err(value_err)?;
    let preds = instances
        .into_iter()
        .map(|((x0, y0, x1, y1), class_id, class_prob, mask, m)| {
            Ok(InstancePrediction {
                bbox: BBox::new(x0, y0, x1, y1, shape.0, shape.1).map_err(value_err)?,
                class_id,
                class_prob,
                mask_logits: dense(mask, (m, m, 1))?,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let r = fuse_core(&dense(logits, shape)?, &preds, &FusionConfig::new(split)).map_err(value_err)?;
    Ok((r.panoptic.data().to_vec(), r.uncertainty.into_data()))
}

#[pymodule]
fn evpan(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("OFFSET", evpan_core::OFFSET)?;
    m.add("VOID", evpan_core::VOID)?;
    m.add_class::<PyEvalAccumulator>()?;
    m.add_function(wrap_pyfunction!(dirichlet, m)?)?;
    m.add_function(wrap_pyfunction!(loss, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(upq, m)?)?;
    m.add_function(wrap_pyfunction!(uece, m)?)?;
    m.add_function(wrap_pyfunction!(ece, m)?)?;
    m.add_function(wrap_pyfunction!(match_segments, m)?)?;
    m.add_function(wrap_pyfunction!(synth_scene, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    Ok(())
}
