//! Evidential training losses as value + gradient kernels over logits.
//!
//! Every loss maps logits through the evidence activation to Dirichlet
//! parameters `alpha = act(l) + 1` and returns the gradient w.r.t. the raw
//! logits. Pixel-wise losses are averaged over non-VOID pixels, so magnitudes
//! do not depend on resolution. VOID pixels get zero gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidential::Activation;
use crate::grid::{DenseGrid, LabelGrid, VOID};
use crate::special::{digamma, ln_gamma, trigamma};

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub gradient: DenseGrid,
}

impl LossResult {
    /// `self + weight * other`, values and gradients alike.
    pub fn add_scaled(mut self, other: &LossResult, weight: f64) -> Result<Self> {
        self.gradient.same_shape(&other.gradient)?;
        self.value += weight * other.value;
        let data = self
            .gradient
            .data()
            .iter()
            .zip(other.gradient.data())
            .map(|(a, b)| a + weight * b)
            .collect();
        let (h, w, c) = self.gradient.shape();
        self.gradient = DenseGrid::new(h, w, c, data)?;
        Ok(self)
    }
}

fn check_inputs(logits: &DenseGrid, labels: &LabelGrid) -> Result<usize> {
    let c = logits.channels();
    if c < 2 {
        return Err(Error::TooFewClasses(c));
    }
    if (logits.height(), logits.width()) != (labels.height(), labels.width()) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", logits.height(), logits.width()),
            actual: format!("{}x{}", labels.height(), labels.width()),
        });
    }
    labels.validate(c)?;
    match labels.non_void() {
        0 => Err(Error::AllVoid),
        n => Ok(n),
    }
}

/// Runs a per-pixel kernel `(alpha, gt, dL/dalpha) -> value` over every
/// non-VOID pixel and chains the alpha-gradient through the activation.
fn pixelwise<K>(logits: &DenseGrid, labels: &LabelGrid, act: Activation, kernel: K) -> Result<LossResult>
where
    K: Fn(&[f64], usize, &mut [f64]) -> f64,
{
    let n = check_inputs(logits, labels)? as f64;
    let c = logits.channels();
    let mut grad = vec![0.0; logits.data().len()];
    let mut alpha = vec![0.0; c];
    let mut d_alpha = vec![0.0; c];
    let mut total = 0.0;
    for (i, (px, &y)) in logits.pixel_iter().zip(labels.data()).enumerate() {
        if y == VOID {
            continue;
        }
        for (a, &l) in alpha.iter_mut().zip(px) {
            *a = act.apply(l) + 1.0;
        }
        d_alpha.fill(0.0);
        total += kernel(&alpha, y as usize, &mut d_alpha);
        for k in 0..c {
            grad[i * c + k] = d_alpha[k] * act.derivative(px[k]) / n;
        }
    }
    Ok(LossResult {
        value: total / n,
        gradient: DenseGrid::new(logits.height(), logits.width(), c, grad)?,
    })
}

fn log_kernel(alpha: &[f64], gt: usize, d: &mut [f64]) -> f64 {
    let s: f64 = alpha.iter().sum();
    for (k, dk) in d.iter_mut().enumerate() {
        *dk = 1.0 / s - if k == gt { 1.0 / alpha[gt] } else { 0.0 };
    }
    (s / alpha[gt]).ln()
}

fn digamma_kernel(alpha: &[f64], gt: usize, d: &mut [f64]) -> f64 {
    let s: f64 = alpha.iter().sum();
    let ts = trigamma(s);
    for (k, dk) in d.iter_mut().enumerate() {
        *dk = ts - if k == gt { trigamma(alpha[gt]) } else { 0.0 };
    }
    digamma(s) - digamma(alpha[gt])
}

fn mse_kernel(alpha: &[f64], gt: usize, d: &mut [f64]) -> f64 {
    let s: f64 = alpha.iter().sum();
    let mut value = 0.0;
    let mut var_sum = 0.0;
    // dL/dp at fixed S
    let mut g_dot_p = 0.0;
    for (k, dk) in d.iter_mut().enumerate() {
        let p = alpha[k] / s;
        let y = if k == gt { 1.0 } else { 0.0 };
        let var = p * (1.0 - p);
        value += (y - p).powi(2) + var / (s + 1.0);
        var_sum += var;
        *dk = -2.0 * (y - p) + (1.0 - 2.0 * p) / (s + 1.0);
        g_dot_p += *dk * p;
    }
    let d_s = -var_sum / (s + 1.0).powi(2);
    for dk in d.iter_mut() {
        *dk = (*dk - g_dot_p) / s + d_s;
    }
    value
}

/// `KL(Dir(α̃) || Dir(1))` with the ground-truth entry of α̃ reset to 1.
fn kl_kernel(alpha: &[f64], gt: usize, d: &mut [f64]) -> f64 {
    let c = alpha.len() as f64;
    let tilde = |k: usize| if k == gt { 1.0 } else { alpha[k] };
    let s: f64 = (0..alpha.len()).map(tilde).sum();
    let psi_s = digamma(s);
    let tri_s = trigamma(s);
    let mut value = ln_gamma(s) - ln_gamma(c);
    for (k, dk) in d.iter_mut().enumerate() {
        if k == gt {
            *dk = 0.0;
            continue;
        }
        let a = alpha[k];
        value += (a - 1.0) * (digamma(a) - psi_s) - ln_gamma(a);
        *dk = (a - 1.0) * trigamma(a) - (s - c) * tri_s;
    }
    value.max(0.0)
}

/// Type-II maximum likelihood loss `ln(S / alpha_gt)`.
pub fn evidential_log_loss(logits: &DenseGrid, labels: &LabelGrid, act: Activation) -> Result<LossResult> {
    pixelwise(logits, labels, act, log_kernel)
}

/// Bayes-risk variant `psi(S) - psi(alpha_gt)`.
pub fn evidential_digamma_loss(logits: &DenseGrid, labels: &LabelGrid, act: Activation) -> Result<LossResult> {
    pixelwise(logits, labels, act, digamma_kernel)
}

/// Squared error against the one-hot target plus the Dirichlet variance term.
pub fn evidential_mse_loss(logits: &DenseGrid, labels: &LabelGrid, act: Activation) -> Result<LossResult> {
    pixelwise(logits, labels, act, mse_kernel)
}

/// KL divergence from the uniform Dirichlet after removing ground-truth
/// evidence. Penalises evidence on wrong classes only.
pub fn kl_regularizer(logits: &DenseGrid, labels: &LabelGrid, act: Activation) -> Result<LossResult> {
    pixelwise(logits, labels, act, kl_kernel)
}

/// Number of epochs over which the KL weight ramps up.
pub const KL_RAMP_EPOCHS: u64 = 60;
pub const DEFAULT_LAMBDA_MAX: f64 = 0.06;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    /// Current training iteration.
    pub iteration: u64,
    pub iters_per_epoch: u64,
    pub lambda_max: f64,
}

impl ScheduleState {
    pub fn new(iteration: u64, iters_per_epoch: u64) -> Self {
        Self { iteration, iters_per_epoch, lambda_max: DEFAULT_LAMBDA_MAX }
    }

    pub fn with_lambda_max(mut self, lambda_max: f64) -> Self {
        self.lambda_max = lambda_max;
        self
    }
}

/// `lambda_max * min(1, t / (60 I))`.
pub fn lambda_schedule(state: &ScheduleState) -> f64 {
    assert!(state.iters_per_epoch >= 1 && state.lambda_max >= 0.0);
    let ramp = KL_RAMP_EPOCHS * state.iters_per_epoch;
    if state.iteration >= ramp {
        state.lambda_max
    } else {
        state.lambda_max * (state.iteration as f64 / ramp as f64)
    }
}

/// Which classes enter the average of the Lovász evidential loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ClassAveraging {
    /// Average over all C classes.
    #[default]
    AllClasses,
    /// Average only over classes present in the ground truth.
    PresentOnly,
}

/// Gradient of the Lovász extension of the Jaccard loss for a foreground
/// indicator already sorted by decreasing error.
pub fn lovasz_jaccard_weights(fg_sorted: &[bool]) -> Vec<f64> {
    let gts = fg_sorted.iter().filter(|&&f| f).count() as f64;
    let mut weights = Vec::with_capacity(fg_sorted.len());
    let (mut cum_fg, mut cum_bg) = (0.0, 0.0);
    let mut prev = 0.0;
    for &fg in fg_sorted {
        if fg {
            cum_fg += 1.0;
        } else {
            cum_bg += 1.0;
        }
        let jaccard = 1.0 - (gts - cum_fg) / (gts + cum_bg);
        weights.push(jaccard - prev);
        prev = jaccard;
    }
    weights
}

struct LovaszPixels {
    /// Flat pixel index of each non-VOID pixel.
    index: Vec<usize>,
    gt: Vec<usize>,
    /// Row-major `n × C` probabilities.
    probs: Vec<f64>,
    strength: Vec<f64>,
}

fn lovasz_pixels(logits: &DenseGrid, labels: &LabelGrid, act: Activation) -> Result<LovaszPixels> {
    let n = check_inputs(logits, labels)?;
    let c = logits.channels();
    let mut out = LovaszPixels {
        index: Vec::with_capacity(n),
        gt: Vec::with_capacity(n),
        probs: Vec::with_capacity(n * c),
        strength: Vec::with_capacity(n),
    };
    for (i, (px, &y)) in logits.pixel_iter().zip(labels.data()).enumerate() {
        if y == VOID {
            continue;
        }
        let start = out.probs.len();
        out.probs.extend(px.iter().map(|&l| act.apply(l) + 1.0));
        let s: f64 = out.probs[start..].iter().sum();
        out.probs[start..].iter_mut().for_each(|a| *a /= s);
        out.index.push(i);
        out.gt.push(y as usize);
        out.strength.push(s);
    }
    Ok(out)
}

fn class_errors(px: &LovaszPixels, c: usize, classes: usize) -> (Vec<f64>, Vec<bool>) {
    let fg: Vec<bool> = px.gt.iter().map(|&g| g == c).collect();
    let errors = fg
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let p = px.probs[i * classes + c];
            if f {
                1.0 - p
            } else {
                p
            }
        })
        .collect();
    (errors, fg)
}

/// Stable descending order of the errors.
fn descending_order(errors: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..errors.len()).collect();
    order.sort_by(|&a, &b| errors[b].total_cmp(&errors[a]));
    order
}

/// Per-class sort orders (positions into the non-VOID pixel list) used by the
/// Lovász loss. Gradient checks use these to detect sorting ties.
pub fn lovasz_error_orders(logits: &DenseGrid, labels: &LabelGrid, act: Activation) -> Result<Vec<Vec<usize>>> {
    let px = lovasz_pixels(logits, labels, act)?;
    let classes = logits.channels();
    Ok((0..classes).map(|c| descending_order(&class_errors(&px, c, classes).0)).collect())
}

pub fn lovasz_evidential_loss(logits: &DenseGrid, labels: &LabelGrid, act: Activation) -> Result<LossResult> {
    lovasz_evidential_loss_with(logits, labels, act, ClassAveraging::AllClasses)
}

/// Lovász extension of the per-class Jaccard loss evaluated on the evidential
/// error vectors `1 - p_gt` (foreground) and `p` (background), averaged over
/// classes.
pub fn lovasz_evidential_loss_with(
    logits: &DenseGrid,
    labels: &LabelGrid,
    act: Activation,
    averaging: ClassAveraging,
) -> Result<LossResult> {
    let px = lovasz_pixels(logits, labels, act)?;
    let classes = logits.channels();
    let n = px.index.len();

    let included: Vec<usize> = (0..classes)
        .filter(|&c| averaging == ClassAveraging::AllClasses || px.gt.contains(&c))
        .collect();
    let scale = 1.0 / included.len() as f64;

    // dL/dp, n × C
    let mut d_probs = vec![0.0; n * classes];
    let mut value = 0.0;
    for &c in &included {
        let (errors, fg) = class_errors(&px, c, classes);
        let order = descending_order(&errors);
        let fg_sorted: Vec<bool> = order.iter().map(|&i| fg[i]).collect();
        let weights = lovasz_jaccard_weights(&fg_sorted);
        for (&i, &w) in order.iter().zip(&weights) {
            value += scale * errors[i] * w;
            let de_dp = if fg[i] { -1.0 } else { 1.0 };
            d_probs[i * classes + c] += scale * w * de_dp;
        }
    }

    let mut grad = vec![0.0; logits.data().len()];
    for (j, &pix) in px.index.iter().enumerate() {
        let p = &px.probs[j * classes..(j + 1) * classes];
        let g = &d_probs[j * classes..(j + 1) * classes];
        let g_dot_p: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
        let raw = logits.pixel(pix);
        for k in 0..classes {
            let d_alpha = (g[k] - g_dot_p) / px.strength[j];
            grad[pix * classes + k] = d_alpha * act.derivative(raw[k]);
        }
    }
    Ok(LossResult {
        value: value.max(0.0),
        gradient: DenseGrid::new(logits.height(), logits.width(), classes, grad)?,
    })
}

/// Log loss plus the annealed KL term.
pub fn semantic_loss(
    logits: &DenseGrid,
    labels: &LabelGrid,
    state: &ScheduleState,
    act: Activation,
) -> Result<LossResult> {
    let lambda = lambda_schedule(state);
    let log = evidential_log_loss(logits, labels, act)?;
    let kl = kl_regularizer(logits, labels, act)?;
    log.add_scaled(&kl, lambda)
}

/// Mask-head loss: the semantic loss applied to a `28×28×K` mask grid.
pub fn mask_loss(mask_logits: &DenseGrid, mask_labels: &LabelGrid, state: &ScheduleState) -> Result<LossResult> {
    semantic_loss(mask_logits, mask_labels, state, Activation::Softplus)
}

/// Classification-head loss on a single logit vector with KL weight `lambda_i`.
pub fn classification_loss(class_logits: &[f64], gt_class: usize, lambda_i: f64) -> Result<LossResult> {
    let k = class_logits.len();
    if gt_class >= k {
        return Err(Error::LabelOutOfRange { label: gt_class as u32, classes: k });
    }
    let logits = DenseGrid::new(1, 1, k, class_logits.to_vec())?;
    let labels = LabelGrid::new(1, 1, vec![gt_class as u32])?;
    let log = evidential_log_loss(&logits, &labels, Activation::Softplus)?;
    let kl = kl_regularizer(&logits, &labels, Activation::Softplus)?;
    log.add_scaled(&kl, lambda_i)
}

/// Semantic-side training objective: semantic loss plus Lovász evidential loss.
pub fn total_semantic_objective(
    logits: &DenseGrid,
    labels: &LabelGrid,
    state: &ScheduleState,
    act: Activation,
) -> Result<LossResult> {
    let sem = semantic_loss(logits, labels, state, act)?;
    let le = lovasz_evidential_loss(logits, labels, act)?;
    sem.add_scaled(&le, 1.0)
}

/// Loss selector used by the gradient checker and the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Log,
    Digamma,
    Mse,
    Kl,
    Lovasz,
    Total,
}

impl LossKind {
    pub const ALL: [LossKind; 6] =
        [LossKind::Log, LossKind::Digamma, LossKind::Mse, LossKind::Kl, LossKind::Lovasz, LossKind::Total];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Log => "log",
            LossKind::Digamma => "digamma",
            LossKind::Mse => "mse",
            LossKind::Kl => "kl",
            LossKind::Lovasz => "lovasz",
            LossKind::Total => "total",
        }
    }

    /// Whether the loss is piecewise smooth because of sorting.
    pub fn has_sorting(self) -> bool {
        matches!(self, LossKind::Lovasz | LossKind::Total)
    }

    pub fn evaluate(
        self,
        logits: &DenseGrid,
        labels: &LabelGrid,
        state: &ScheduleState,
        act: Activation,
    ) -> Result<LossResult> {
        match self {
            LossKind::Log => evidential_log_loss(logits, labels, act),
            LossKind::Digamma => evidential_digamma_loss(logits, labels, act),
            LossKind::Mse => evidential_mse_loss(logits, labels, act),
            LossKind::Kl => kl_regularizer(logits, labels, act),
            LossKind::Lovasz => lovasz_evidential_loss(logits, labels, act),
            LossKind::Total => total_semantic_objective(logits, labels, state, act),
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown loss '{s}'")))
    }
}
