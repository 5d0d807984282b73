//! Test signals: 1-periodic functions with numerically estimated
//! Lipschitz constant and squared derivative norm.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::trig::trig_value;

/// Grid resolution for the numeric derivative estimates.
const DERIV_GRID: usize = 100_000;

/// How a signal is evaluated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum SignalKind {
    /// t*sin(2*pi*t) + t^2*(1-t)*cos(4*pi*t) on [0,1).
    S1,
    /// Partial sum of sum_{j>=1} sin(2*pi*j*t)/(1+j^3).
    S2 { truncation: usize },
    /// Finite combination sum_j coeffs[j-1]*Trg_j(t).
    CustomCoeffs { coeffs: Vec<f64> },
    /// Identically zero.
    Zero,
}

/// An evaluable 1-periodic signal with analytic metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignalModel {
    pub kind: SignalKind,
    pub label: String,
    /// max |S'(t)| over a fine grid (central differences).
    pub lipschitz: f64,
    /// mean of S'(t)^2 over the same grid.
    pub deriv_norm_sq: f64,
}

impl SignalModel {
    /// Evaluate the signal, extended 1-periodically to all of R.
    pub fn eval(&self, t: f64) -> f64 {
        let u = t.rem_euclid(1.0);
        match &self.kind {
            SignalKind::S1 => {
                u * (2.0 * std::f64::consts::PI * u).sin()
                    + u * u * (1.0 - u) * (4.0 * std::f64::consts::PI * u).cos()
            }
            SignalKind::S2 { truncation } => {
                let mut acc = 0.0;
                for j in 1..=*truncation {
                    let jf = j as f64;
                    acc += (2.0 * std::f64::consts::PI * jf * u).sin() / (1.0 + jf * jf * jf);
                }
                acc
            }
            SignalKind::CustomCoeffs { coeffs } => coeffs
                .iter()
                .enumerate()
                .map(|(i, c)| c * trig_value(i + 1, u).unwrap())
                .sum(),
            SignalKind::Zero => 0.0,
        }
    }

    fn with_metadata(kind: SignalKind, label: &str) -> Self {
        let mut s = SignalModel {
            kind,
            label: label.to_string(),
            lipschitz: 0.0,
            deriv_norm_sq: 0.0,
        };
        let (lip, dsq) = estimate_derivatives(&s);
        s.lipschitz = lip;
        s.deriv_norm_sq = dsq;
        s
    }
}

/// Central-difference estimates of max|S'| and mean S'^2 on a periodic grid.
fn estimate_derivatives(s: &SignalModel) -> (f64, f64) {
    let m = DERIV_GRID;
    let h = 1.0 / m as f64;
    let vals: Vec<f64> = (0..m).map(|i| s.eval(i as f64 * h)).collect();
    let mut max_abs = 0.0f64;
    let mut sum_sq = 0.0f64;
    for i in 0..m {
        let prev = vals[(i + m - 1) % m];
        let next = vals[(i + 1) % m];
        let d = (next - prev) / (2.0 * h);
        max_abs = max_abs.max(d.abs());
        sum_sq += d * d;
    }
    (max_abs, sum_sq / m as f64)
}

/// The paper's first test signal S1.
pub fn signal_s1() -> SignalModel {
    SignalModel::with_metadata(SignalKind::S1, "s1")
}

/// The paper's second test signal S2, truncated after `truncation` terms.
///
/// The dropped tail is bounded by sum_{j>J} 1/(1+j^3) <= 1/(2 J^2); the
/// default J = 1000 keeps it below 5e-7.
pub fn signal_s2(truncation: usize) -> SignalModel {
    assert!(truncation >= 1, "truncation must be >= 1");
    SignalModel::with_metadata(SignalKind::S2 { truncation }, "s2")
}

/// A signal given by a finite trigonometric coefficient list.
pub fn signal_custom(coeffs: Vec<f64>) -> SignalModel {
    SignalModel::with_metadata(SignalKind::CustomCoeffs { coeffs }, "custom-coeffs")
}

/// The zero signal (useful for pure-noise runs).
pub fn signal_zero() -> SignalModel {
    SignalModel {
        kind: SignalKind::Zero,
        label: "zero".to_string(),
        lipschitz: 0.0,
        deriv_norm_sq: 0.0,
    }
}

/// Resolve a signal by config name: "s1", "s2", "zero", "custom-coeffs".
pub fn signal_by_name(name: &str, truncation: Option<usize>, coeffs: Option<Vec<f64>>) -> Result<SignalModel> {
    match name {
        "s1" => Ok(signal_s1()),
        "s2" => Ok(signal_s2(truncation.unwrap_or(1000))),
        "zero" => Ok(signal_zero()),
        "custom-coeffs" => {
            let c = coeffs.ok_or_else(|| CoreError::invalid("custom-coeffs needs a coefficient list"))?;
            Ok(signal_custom(c))
        }
        other => Err(CoreError::invalid(format!("unknown signal '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    #[test]
    fn s1_vanishes_at_zero() {
        assert_eq!(signal_s1().eval(0.0), 0.0);
    }

    #[test]
    fn s2_vanishes_at_zero() {
        assert_eq!(signal_s2(1000).eval(0.0), 0.0);
    }

    // Integral-comparison oracle: sum_{j>J} 1/(1+j^3) <= int_J^inf x^-3 dx = 1/(2J^2).
    #[test]
    fn s2_truncation_tail_bound() {
        let coarse = signal_s2(1000);
        let fine = signal_s2(4000);
        let bound = 1.0 / (2.0 * 1000.0f64 * 1000.0);
        let mut max_err = 0.0f64;
        for i in 0..500 {
            let t = i as f64 / 500.0;
            max_err = max_err.max((fine.eval(t) - coarse.eval(t)).abs());
        }
        assert!(max_err <= bound, "tail {max_err} exceeds {bound}");
    }

    // Partial sums converge monotonically in the sup-norm bound 1/(2J^2).
    #[test]
    fn s2_sup_error_bound_decreases() {
        let reference = signal_s2(8000);
        let mut prev = f64::INFINITY;
        for j in [50usize, 100, 400, 1000] {
            let s = signal_s2(j);
            let sup: f64 = (0..400)
                .map(|i| {
                    let t = i as f64 / 400.0;
                    (reference.eval(t) - s.eval(t)).abs()
                })
                .fold(0.0, f64::max);
            assert!(sup <= 1.0 / (2.0 * (j * j) as f64));
            assert!(sup <= prev);
            prev = sup;
        }
    }

    #[test]
    fn periodicity_on_random_points() {
        let signals = [signal_s1(), signal_s2(200), signal_custom(vec![0.3, -1.2, 0.7])];
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(42);
        for s in &signals {
            for _ in 0..1000 {
                let t: f64 = rng.random::<f64>() * 3.0 - 1.0;
                assert!(
                    (s.eval(t + 1.0) - s.eval(t)).abs() <= 1e-12,
                    "{} not periodic at {t}",
                    s.label
                );
            }
        }
    }

    #[test]
    fn lipschitz_bound_holds_on_sampled_pairs() {
        let s = signal_s1();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let t: f64 = rng.random();
            let u: f64 = rng.random();
            let lhs = (s.eval(t) - s.eval(u)).abs();
            // small slack: L itself is a grid estimate
            assert!(lhs <= (s.lipschitz + 1e-3) * (t - u).abs() + 1e-12);
        }
    }

    #[test]
    fn custom_coeffs_is_exact_trig_combination() {
        let s = signal_custom(vec![1.0, 0.0, 2.0]);
        let t = 0.37;
        let want = 1.0 + 2.0 * trig_value(3, t).unwrap();
        assert!((s.eval(t) - want).abs() < 1e-15);
    }
}
