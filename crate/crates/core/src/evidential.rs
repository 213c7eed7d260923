//! Evidence activations, the Dirichlet transform `p = α / S`, `u = C / S`,
//! and the two baseline confidence estimators (normalised entropy and
//! temperature scaling).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DenseGrid, LabelGrid, VOID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Softplus,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => softplus(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative w.r.t. the logit. ReLU uses 0 at the kink.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => sigmoid(x),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softplus" => Ok(Self::Softplus),
            "relu" => Ok(Self::Relu),
            other => Err(Error::InvalidParameter(format!("unknown activation '{other}'"))),
        }
    }
}

/// `ln(1 + e^x)` without overflow for large `x`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`: `ln(e^y - 1)`.
#[inline]
pub fn softplus_inverse(y: f64) -> f64 {
    assert!(y > 0.0, "softplus_inverse requires y > 0");
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn evidence(logits: &DenseGrid, activation: Activation) -> DenseGrid {
    logits.map(|x| activation.apply(x)).expect("activations of finite logits are finite")
}

/// Dirichlet parameters per pixel: `alpha = evidence + 1` and the strength
/// `S = Σ_c alpha_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletField {
    alpha: DenseGrid,
    strength: DenseGrid,
}

impl DirichletField {
    pub fn from_alpha(alpha: DenseGrid) -> Result<Self> {
        if alpha.channels() < 2 {
            return Err(Error::TooFewClasses(alpha.channels()));
        }
        if let Some(i) = alpha.data().iter().position(|&a| a < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha[{i}] < 1")));
        }
        let strength = alpha.pixel_iter().map(|px| px.iter().sum()).collect();
        let strength = DenseGrid::new(alpha.height(), alpha.width(), 1, strength)?;
        Ok(Self { alpha, strength })
    }

    pub fn alpha(&self) -> &DenseGrid {
        &self.alpha
    }

    pub fn strength(&self) -> &DenseGrid {
        &self.strength
    }

    pub fn classes(&self) -> usize {
        self.alpha.channels()
    }
}

pub fn dirichlet_from_logits(logits: &DenseGrid, activation: Activation) -> Result<DirichletField> {
    if logits.channels() < 2 {
        return Err(Error::TooFewClasses(logits.channels()));
    }
    let alpha = logits.map(|x| activation.apply(x) + 1.0)?;
    DirichletField::from_alpha(alpha)
}

/// Expected class probabilities `p_c = alpha_c / S`.
pub fn class_probabilities(field: &DirichletField) -> DenseGrid {
    let c = field.classes();
    let data = field
        .alpha
        .pixel_iter()
        .zip(field.strength.data())
        .flat_map(|(px, &s)| px.iter().map(move |&a| a / s))
        .collect();
    DenseGrid::new(field.alpha.height(), field.alpha.width(), c, data).expect("shape preserved")
}

/// Predictive uncertainty `u = C / S` as an `H×W×1` grid.
pub fn predictive_uncertainty(field: &DirichletField) -> DenseGrid {
    let c = field.classes() as f64;
    field.strength.map(|s| c / s).expect("strength >= C > 0")
}

/// Convenience: probabilities and uncertainty straight from logits.
pub fn probabilities_and_uncertainty(
    logits: &DenseGrid,
    activation: Activation,
) -> Result<(DenseGrid, DenseGrid)> {
    let field = dirichlet_from_logits(logits, activation)?;
    Ok((class_probabilities(&field), predictive_uncertainty(&field)))
}

/// Normalised entropy `-Σ p ln p / ln C` per pixel, in `[0, 1]`.
pub fn normalized_entropy(probs: &DenseGrid) -> Result<DenseGrid> {
    let c = probs.channels();
    if c < 2 {
        return Err(Error::TooFewClasses(c));
    }
    if let Some(&p) = probs.data().iter().find(|&&p| p < 0.0) {
        return Err(Error::NegativeProbability(p));
    }
    let norm = (c as f64).ln();
    let data = probs
        .pixel_iter()
        .map(|px| {
            let h: f64 = px.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
            (h / norm).clamp(0.0, 1.0)
        })
        .collect();
    DenseGrid::new(probs.height(), probs.width(), 1, data)
}

/// Baseline confidence `1 - normalised entropy`.
pub fn entropy_confidence(probs: &DenseGrid) -> Result<DenseGrid> {
    normalized_entropy(probs)?.map(|u| 1.0 - u)
}

/// Positive logit scaling factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(t: f64) -> Result<Self> {
        if t > 0.0 && t.is_finite() {
            Ok(Self(t))
        } else {
            Err(Error::InvalidTemperature(t))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn temperature_scale(logits: &DenseGrid, t: Temperature) -> DenseGrid {
    logits.map(|x| x / t.0).expect("division by a positive finite T")
}

/// Row-wise softmax.
pub fn softmax(logits: &DenseGrid) -> DenseGrid {
    let data = logits
        .pixel_iter()
        .flat_map(|px| {
            let m = px.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = px.iter().map(|&v| (v - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            exps.into_iter().map(move |e| e / z)
        })
        .collect();
    DenseGrid::new(logits.height(), logits.width(), logits.channels(), data).expect("shape preserved")
}

/// Search bracket for [`fit_temperature`], in temperature units.
pub const TEMPERATURE_BRACKET: (f64, f64) = (0.05, 20.0);
/// Final bracket width on `ln T`.
pub const TEMPERATURE_TOL: f64 = 1e-4;

/// Summed softmax cross-entropy of `logits / t` over non-VOID pixels, with the
/// number of pixels that contributed.
pub fn scaled_nll(logits: &DenseGrid, labels: &LabelGrid, t: f64) -> (f64, usize) {
    let mut total = 0.0;
    let mut n = 0;
    for (px, &y) in logits.pixel_iter().zip(labels.data()) {
        if y == VOID {
            continue;
        }
        let m = px.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / t;
        let lse = m + px.iter().map(|&v| (v / t - m).exp()).sum::<f64>().ln();
        total += lse - px[y as usize] / t;
        n += 1;
    }
    (total, n)
}

/// Fits the temperature minimising mean cross-entropy of `softmax(logits / T)`
/// over all non-VOID pixels by golden-section search on `ln T`.
pub fn fit_temperature(logits: &[DenseGrid], labels: &[LabelGrid]) -> Result<Temperature> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(Error::InvalidParameter(format!(
            "{} logit grids vs {} label grids",
            logits.len(),
            labels.len()
        )));
    }
    for (l, y) in logits.iter().zip(labels) {
        if (l.height(), l.width()) != (y.height(), y.width()) {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", l.height(), l.width()),
                actual: format!("{}x{}", y.height(), y.width()),
            });
        }
        y.validate(l.channels())?;
    }
    if labels.iter().all(|y| y.non_void() == 0) {
        return Err(Error::AllVoid);
    }
    let objective = |log_t: f64| -> f64 {
        let t = log_t.exp();
        logits.iter().zip(labels).map(|(l, y)| scaled_nll(l, y, t).0).sum()
    };

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (TEMPERATURE_BRACKET.0.ln(), TEMPERATURE_BRACKET.1.ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    while b - a > TEMPERATURE_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d);
        }
    }
    Temperature::new((0.5 * (a + b)).exp())
}
