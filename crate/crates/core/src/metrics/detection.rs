use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Width of the summation window, in standard deviations of the wider
/// Poisson law, on each side of its mean.
const WINDOW_SIGMAS: f64 = 12.0;
const WINDOW_PAD: f64 = 30.0;

fn poisson_pmf(mean: f64, k: usize) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let k = k as f64;
    (k * mean.ln() - mean - ln_gamma(k + 1.0)).exp()
}

/// First-order Marcum Q function `Q_1(a, b)`.
///
/// Uses `Q_1(a, b) = P[Y <= X]` for independent `X ~ Poisson(a^2/2)` and
/// `Y ~ Poisson(b^2/2)`, summed over a window that holds all but a
/// negligible part of both laws. Whichever of `Q_1` and `1 - Q_1` is smaller
/// is accumulated directly so both tails keep their relative accuracy.
pub fn marcum_q1(a: f64, b: f64) -> f64 {
    assert!(a >= 0.0 && b >= 0.0, "marcum_q1 needs nonnegative arguments");
    let x = 0.5 * a * a;
    let y = 0.5 * b * b;
    let spread = WINDOW_SIGMAS * x.max(y).sqrt() + WINDOW_PAD;
    let lo = (x.min(y) - spread).max(0.0).floor() as usize;
    let hi = (x.max(y) + spread).ceil() as usize;

    let px: Vec<f64> = (lo..=hi).map(|k| poisson_pmf(x, k)).collect();
    let py: Vec<f64> = (lo..=hi).map(|k| poisson_pmf(y, k)).collect();

    // lower[i] = P[Y <= lo + i], upper[i] = P[Y > lo + i] within the window
    let n = py.len();
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut acc = 0.0;
    for i in 0..n {
        acc += py[i];
        lower[i] = acc;
    }
    acc = 0.0;
    for i in (0..n).rev() {
        upper[i] = acc;
        acc += py[i];
    }

    let q: f64 = px.iter().zip(&lower).map(|(p, f)| p * f).sum();
    let qc: f64 = px.iter().zip(&upper).map(|(p, s)| p * s).sum();
    if q <= qc {
        q.clamp(0.0, 1.0)
    } else {
        (1.0 - qc).clamp(0.0, 1.0)
    }
}

/// Detection probability of a square-law detector at the given SCNR and
/// false-alarm probability: `Q_1(sqrt(2 scnr), sqrt(-2 ln p_fa))`.
pub fn detection_probability(scnr: f64, p_fa: f64) -> Result<f64> {
    if !(p_fa > 0.0 && p_fa < 1.0) {
        return Err(Error::domain(format!("false-alarm probability {p_fa} is outside (0, 1)")));
    }
    if !(scnr >= 0.0) || !scnr.is_finite() {
        return Err(Error::domain(format!("SCNR {scnr} must be finite and nonnegative")));
    }
    Ok(marcum_q1((2.0 * scnr).sqrt(), (-2.0 * p_fa.ln()).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// `I_0(z) e^{-z}` from `(1/pi) int_0^pi exp(z (cos t - 1)) dt`.
    fn scaled_i0(z: f64) -> f64 {
        let n = 2000;
        let h = std::f64::consts::PI / n as f64;
        let f = |t: f64| (z * (t.cos() - 1.0)).exp();
        let mut s = f(0.0) + f(std::f64::consts::PI);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        s * h / 3.0 / std::f64::consts::PI
    }

    /// `int_b^inf x exp(-(x^2 + a^2)/2) I_0(a x) dx` by Simpson's rule.
    fn q1_quadrature(a: f64, b: f64) -> f64 {
        let top = b.max(a) + 40.0;
        let n = 8000;
        let h = (top - b) / n as f64;
        let f = |x: f64| x * (-(x - a) * (x - a) / 2.0).exp() * scaled_i0(a * x);
        let mut s = f(b) + f(top);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(b + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn reference_detection_values() {
        let s = 10f64.powf(1.5);
        let p6 = detection_probability(s, 1e-6).unwrap();
        assert!((p6 - 0.99722539).abs() < 1e-6, "{p6}");
        let p4 = detection_probability(s, 1e-4).unwrap();
        assert!(p4 >= 0.9999, "{p4}");
    }

    #[test]
    fn zero_scnr_gives_false_alarm_rate() {
        for pfa in [1e-8, 1e-4, 0.1, 0.5, 0.9] {
            let p = detection_probability(0.0, pfa).unwrap();
            assert!((p - pfa).abs() <= 1e-12 * pfa.max(1e-300) + 1e-15, "{pfa} -> {p}");
        }
    }

    #[test]
    fn matches_quadrature() {
        for &(a, b) in &[(0.5, 1.0), (1.0, 3.0), (3.0, 1.0), (5.0, 5.26), (7.9, 5.26), (2.0, 6.0), (10.0, 4.0)] {
            let q = marcum_q1(a, b);
            let o = q1_quadrature(a, b);
            assert!((q - o).abs() <= 1e-8 * o.max(1e-6), "Q1({a},{b}) = {q}, quadrature {o}");
        }
    }

    #[test]
    fn small_tail_keeps_relative_accuracy() {
        let q = marcum_q1(1.0, 9.0);
        let o = q1_quadrature(1.0, 9.0);
        assert!(((q - o) / o).abs() < 1e-6, "{q} vs {o}");
    }

    #[test]
    fn bad_false_alarm_rejected() {
        assert!(detection_probability(1.0, 0.0).is_err());
        assert!(detection_probability(1.0, 1.0).is_err());
        assert!(detection_probability(-1.0, 0.1).is_err());
    }

    proptest! {
        #[test]
        fn monotone_in_scnr_and_pfa(s in 0.0f64..200.0, ds in 0.0f64..20.0, lp in -12.0f64..-0.1, dl in 0.0f64..3.0) {
            let pfa = 10f64.powf(lp);
            let pfa2 = 10f64.powf((lp + dl).min(-0.01));
            let base = detection_probability(s, pfa).unwrap();
            prop_assert!(detection_probability(s + ds, pfa).unwrap() >= base - 1e-12);
            prop_assert!(detection_probability(s, pfa2).unwrap() >= base - 1e-12);
            prop_assert!((0.0..=1.0).contains(&base));
        }
    }
}
