//! Log-gamma, digamma and trigamma for positive real arguments.
//!
//! Each function shifts the argument above [`SHIFT`] with the recurrence and
//! then evaluates the asymptotic series; at that point the truncation error is
//! below 1e-15.

const SHIFT: f64 = 12.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// `c[0] + c[1] z + c[2] z^2 + ...`
fn horner(z: f64, coeffs: &[f64]) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * z + c)
}

pub fn ln_gamma(x: f64) -> f64 {
    assert!(x > 0.0, "ln_gamma requires x > 0, got {x}");
    let mut x = x;
    let mut log_prod = 0.0;
    let mut prod = 1.0;
    while x < SHIFT {
        prod *= x;
        x += 1.0;
    }
    if prod != 1.0 {
        log_prod = prod.ln();
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv * horner(inv2, &[1.0 / 12.0, -1.0 / 360.0, 1.0 / 1260.0, -1.0 / 1680.0, 1.0 / 1188.0, -691.0 / 360_360.0]);
    (x - 0.5) * x.ln() - x + HALF_LN_2PI + series - log_prod
}

pub fn digamma(x: f64) -> f64 {
    assert!(x > 0.0, "digamma requires x > 0, got {x}");
    let mut x = x;
    let mut acc = 0.0;
    while x < SHIFT {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    let series = inv2 * horner(inv2, &[1.0 / 12.0, -1.0 / 120.0, 1.0 / 252.0, -1.0 / 240.0, 1.0 / 132.0, -691.0 / 32760.0]);
    acc + x.ln() - 0.5 / x - series
}

pub fn trigamma(x: f64) -> f64 {
    assert!(x > 0.0, "trigamma requires x > 0, got {x}");
    let mut x = x;
    let mut acc = 0.0;
    while x < SHIFT {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv + 0.5 * inv2 + inv * inv2 * horner(inv2, &[1.0 / 6.0, -1.0 / 30.0, 1.0 / 42.0, -1.0 / 30.0, 5.0 / 66.0, -691.0 / 2730.0]);
    acc + series
}

#[cfg(test)]
mod tests {
    use super::*;

    const EULER: f64 = 0.577_215_664_901_532_9;

    #[test]
    fn known_values() {
        assert!((digamma(1.0) + EULER).abs() < 1e-14);
        assert!((digamma(2.0) - digamma(1.0) - 1.0).abs() < 1e-14);
        assert!((trigamma(1.0) - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-13);
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(3.0) - 2f64.ln()).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
    }

    #[test]
    fn agrees_with_statrs() {
        for i in 1..400 {
            let x = 0.05 * i as f64 + 0.01 * (i % 7) as f64;
            let lg = statrs::function::gamma::ln_gamma(x);
            assert!((ln_gamma(x) - lg).abs() < 1e-12 * lg.abs().max(1.0), "ln_gamma({x})");
            let dg = statrs::function::gamma::digamma(x);
            assert!((digamma(x) - dg).abs() < 1e-12 * dg.abs().max(1.0), "digamma({x})");
        }
    }

    #[test]
    fn trigamma_is_derivative_of_digamma() {
        for &x in &[0.3f64, 1.0, 1.7, 4.2, 9.9, 10.0, 33.0, 1e4] {
            let h = 1e-5 * x.max(1.0);
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert!((trigamma(x) - fd).abs() < 1e-7 * trigamma(x).max(1.0), "x = {x}");
        }
    }

    #[test]
    fn large_arguments() {
        let x = 1e9;
        assert!((digamma(x) - (x.ln() - 0.5 / x)).abs() < 1e-12);
        assert!((trigamma(x) - 1.0 / x).abs() < 1e-15);
    }
}
