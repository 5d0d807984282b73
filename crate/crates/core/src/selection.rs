//! Penalized model selection: the objective J(gamma), the penalty term, and
//! the argmin over the weight family.
//!
//! J(gamma) = sum_j gamma^2(j) (theta*_j)^2 - 2 sum_j gamma(j) theta~_j
//!            + rho * P_hat(gamma),
//! theta~_j = theta*_j theta_hat_j - sigma_hat/n,
//! P_hat(gamma) = sigma_hat |gamma|^2 / n.
//!
//! The shrinkage threshold is a function of gamma: each member is shrunk
//! with d = d(gamma) and its own r where provenance is available.

use serde::{Deserialize, Serialize};

use crate::analytics::{default_r_n, h2_constants};
use crate::error::{CoreError, Result};
use crate::estimators::{shrink, CoeffRole, CoeffSet};
use crate::noise::NoiseModel;
use crate::weights::{WeightFamily, WeightVector};

/// Whether members are shrunk with their own threshold or left raw
/// (c_n forced to 0, the weighted-LSE reference procedure).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShrinkageMode {
    PerGamma,
    Disabled,
}

/// Penalty term P_hat = sigma_hat |gamma|^2_p / n. With the known proxy
/// variance substituted for sigma_hat this is the P_n variant.
pub fn penalty(gamma: &WeightVector, sigma_hat: f64, n: usize) -> Result<f64> {
    if sigma_hat < 0.0 {
        return Err(CoreError::invalid("sigma_hat must be >= 0"));
    }
    Ok(sigma_hat * gamma.sum_sq / n as f64)
}

/// Objective value for one member, given its shrunk coefficients.
fn objective_value(
    raw: &CoeffSet,
    shrunk: &CoeffSet,
    gamma: &WeightVector,
    sigma_hat: f64,
    rho: f64,
    n: usize,
) -> f64 {
    let nf = n as f64;
    let mut quad = 0.0;
    let mut cross = 0.0;
    for j in 1..=gamma.support_len().min(raw.values.len()) {
        let g = gamma.get(j);
        let ts = shrunk.values[j - 1];
        let th = raw.values[j - 1];
        quad += g * g * ts * ts;
        cross += g * (ts * th - sigma_hat / nf);
    }
    quad - 2.0 * cross + rho * sigma_hat * gamma.sum_sq / nf
}

/// J(gamma) with the member's own shrinkage constants.
pub fn objective_j(
    raw: &CoeffSet,
    gamma: &WeightVector,
    n: usize,
    noise_bounds: &NoiseModel,
    mode: ShrinkageMode,
    sigma_hat: f64,
    rho: f64,
) -> Result<f64> {
    check_rho(rho)?;
    if raw.role != CoeffRole::Raw {
        return Err(CoreError::invalid("objective expects raw coefficients"));
    }
    let shrunk = shrink_for_member(raw, gamma, n, noise_bounds, mode)?;
    Ok(objective_value(raw, &shrunk, gamma, sigma_hat, rho, n))
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho < 0.5) {
        return Err(CoreError::invalid(format!("rho must lie in (0, 1/2), got {rho}")));
    }
    Ok(())
}

/// Default penalty level rho = (3 + ln n)^{-2}.
pub fn default_rho(n: usize) -> f64 {
    (3.0 + (n as f64).ln()).powi(-2)
}

/// Shrink raw coefficients the way member gamma prescribes: d = d(gamma),
/// r_n = the member's own r when present, else sqrt(ln(n+1)).
pub fn shrink_for_member(
    raw: &CoeffSet,
    gamma: &WeightVector,
    n: usize,
    noise_bounds: &NoiseModel,
    mode: ShrinkageMode,
) -> Result<CoeffSet> {
    let d = gamma.d_gamma.min(raw.values.len());
    if mode == ShrinkageMode::Disabled || d == 0 {
        let mut out = CoeffSet::raw(raw.values.clone());
        out.role = CoeffRole::Shrunk;
        out.d_used = d;
        return Ok(out);
    }
    let r_n = gamma.alpha.map_or(default_r_n(n), |(_, r)| r);
    let consts = h2_constants(d, n, noise_bounds, r_n)?;
    shrink(raw, &consts)
}

/// Outcome of the argmin over the family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Index of the winner in family enumeration order.
    pub gamma_index: usize,
    pub gamma_star: WeightVector,
    /// Coefficients shrunk with the winner's d(gamma) and c_n(gamma).
    pub coeffs_star: CoeffSet,
    /// J value per member, in enumeration order.
    pub j_values: Vec<f64>,
    pub sigma_hat: f64,
    pub rho: f64,
    /// Members within 1e-12 of the minimum.
    pub ties: usize,
    /// Members whose shrinkage factor went negative.
    pub overshrunk_members: usize,
}

/// Evaluate J for every member and return the first minimizer.
pub fn select(
    raw: &CoeffSet,
    family: &WeightFamily,
    sigma_hat: f64,
    rho: f64,
    noise_bounds: &NoiseModel,
    mode: ShrinkageMode,
) -> Result<SelectionResult> {
    check_rho(rho)?;
    if sigma_hat < 0.0 {
        return Err(CoreError::invalid("sigma_hat must be >= 0"));
    }
    if family.members.is_empty() {
        return Err(CoreError::invalid("empty weight family"));
    }
    let mut j_values = Vec::with_capacity(family.members.len());
    let mut overshrunk_members = 0usize;
    for gamma in &family.members {
        let shrunk = shrink_for_member(raw, gamma, family.n, noise_bounds, mode)?;
        if shrunk.overshrunk {
            overshrunk_members += 1;
        }
        j_values.push(objective_value(raw, &shrunk, gamma, sigma_hat, rho, family.n));
    }
    // first minimizer in enumeration order
    let mut best = 0usize;
    for (i, j) in j_values.iter().enumerate() {
        if *j < j_values[best] {
            best = i;
        }
    }
    let ties = j_values.iter().filter(|j| (**j - j_values[best]).abs() <= 1e-12).count();
    let gamma_star = family.members[best].clone();
    let coeffs_star = shrink_for_member(raw, &gamma_star, family.n, noise_bounds, mode)?;
    Ok(SelectionResult {
        gamma_index: best,
        gamma_star,
        coeffs_star,
        j_values,
        sigma_hat,
        rho,
        ties,
        overshrunk_members,
    })
}

impl SelectionResult {
    /// JSON summary (winner provenance, sigma_hat, rho, J min, ties).
    pub fn summary_json(&self) -> serde_json::Value {
        let (beta, r) = self.gamma_star.alpha.map_or((0, 0.0), |(b, r)| (b, r));
        serde_json::json!({
            "gamma_index": self.gamma_index,
            "beta": beta,
            "r": r,
            "omega": self.gamma_star.omega,
            "d_gamma": self.gamma_star.d_gamma,
            "c_n": self.coeffs_star.c_n_used,
            "sigma_hat": self.sigma_hat,
            "rho": self.rho,
            "j_min": self.j_values[self.gamma_index],
            "ties": self.ties,
            "overshrunk_members": self.overshrunk_members,
        })
    }

    /// CSV of all member J values.
    pub fn write_j_csv(&self, family: &WeightFamily, w: &mut impl std::io::Write) -> Result<()> {
        writeln!(w, "index,beta,r,d_gamma,j_value")?;
        for (i, (m, j)) in family.members.iter().zip(&self.j_values).enumerate() {
            let (beta, r) = m.alpha.map_or((0, 0.0), |(b, r)| (b, r));
            writeln!(w, "{i},{beta},{r},{},{j}", m.d_gamma)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{build_family, FamilyMode, FamilyOverrides};

    fn bounds() -> NoiseModel {
        NoiseModel::standard_sim()
    }

    #[test]
    fn penalty_values() {
        let n = 100usize;
        assert_eq!(penalty(&WeightVector::zero(), 0.5, n).unwrap(), 0.0);
        let p = 21usize;
        let ones = WeightVector::all_ones(p);
        let got = penalty(&ones, 0.5, n).unwrap();
        assert!((got - 0.5 * p as f64 / 100.0).abs() < 1e-15);
        // known-sigma variant: same formula, different scalar
        let known = penalty(&ones, 0.3, n).unwrap();
        assert!((known - 0.3 * p as f64 / 100.0).abs() < 1e-15);
        assert!(penalty(&ones, -0.1, n).is_err());
    }

    #[test]
    fn objective_zero_gamma_is_zero() {
        let raw = CoeffSet::raw(vec![1.0; 21]);
        let j = objective_j(&raw, &WeightVector::zero(), 100, &bounds(), ShrinkageMode::PerGamma, 0.5, 0.1)
            .unwrap();
        assert_eq!(j, 0.0);
    }

    // theta_hat = 0: J = (2 + rho) sigma_hat p / n for the all-ones gamma.
    #[test]
    fn objective_pure_penalty_formula() {
        let p = 21usize;
        let n = 100usize;
        let (sigma, rho) = (0.5, 0.1);
        let raw = CoeffSet::raw(vec![0.0; p]);
        let j = objective_j(&raw, &WeightVector::all_ones(p), n, &bounds(), ShrinkageMode::PerGamma, sigma, rho)
            .unwrap();
        let want = (2.0 + rho) * sigma * p as f64 / n as f64;
        assert!((j - want).abs() < 1e-12, "J {j} want {want}");
    }

    #[test]
    fn objective_rejects_bad_rho() {
        let raw = CoeffSet::raw(vec![0.0; 5]);
        let g = WeightVector::all_ones(5);
        assert!(objective_j(&raw, &g, 10, &bounds(), ShrinkageMode::PerGamma, 0.5, 0.5).is_err());
        assert!(objective_j(&raw, &g, 10, &bounds(), ShrinkageMode::PerGamma, 0.5, 0.0).is_err());
    }

    fn small_family(n: usize, p: usize) -> WeightFamily {
        build_family(n, p, 0.5, FamilyMode::Simulation, FamilyOverrides::default()).unwrap()
    }

    #[test]
    fn singleton_family_selects_it() {
        let p = 21usize;
        let mut fam = small_family(100, p);
        fam.members.truncate(1);
        let raw = CoeffSet::raw((0..p).map(|i| 1.0 / (1.0 + i as f64)).collect());
        let res = select(&raw, &fam, 0.5, 0.1, &bounds(), ShrinkageMode::PerGamma).unwrap();
        assert_eq!(res.gamma_index, 0);
        assert_eq!(res.ties, 1);
    }

    #[test]
    fn duplicate_member_keeps_first_winner() {
        let p = 101usize;
        let mut fam = small_family(100, p);
        let raw = CoeffSet::raw((0..p).map(|i| ((i * 13 + 5) % 17) as f64 / 17.0 - 0.3).collect());
        let base = select(&raw, &fam, 0.4, 0.1, &bounds(), ShrinkageMode::PerGamma).unwrap();
        let winner = fam.members[base.gamma_index].clone();
        fam.members.push(winner);
        let with_dup = select(&raw, &fam, 0.4, 0.1, &bounds(), ShrinkageMode::PerGamma).unwrap();
        assert_eq!(with_dup.gamma_index, base.gamma_index);
        assert!(with_dup.ties >= 2);
    }

    #[test]
    fn winner_attains_recorded_minimum() {
        let p = 101usize;
        let fam = small_family(200, p);
        let raw = CoeffSet::raw((0..p).map(|i| (0.8f64).powi(i as i32)).collect());
        let res = select(&raw, &fam, 0.5, 0.05, &bounds(), ShrinkageMode::PerGamma).unwrap();
        let min = res.j_values.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(res.j_values[res.gamma_index], min);
        for j in &res.j_values {
            assert!(res.j_values[res.gamma_index] <= *j);
        }
    }

    #[test]
    fn determinism_bitwise() {
        let p = 101usize;
        let fam = small_family(150, p);
        let raw = CoeffSet::raw((0..p).map(|i| ((i * 31 + 7) % 23) as f64 / 23.0 - 0.5).collect());
        let a = select(&raw, &fam, 0.37, 0.07, &bounds(), ShrinkageMode::PerGamma).unwrap();
        let b = select(&raw, &fam, 0.37, 0.07, &bounds(), ShrinkageMode::PerGamma).unwrap();
        assert_eq!(a.gamma_index, b.gamma_index);
        assert_eq!(a.ties, b.ties);
        for (x, y) in a.j_values.iter().zip(&b.j_values) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    // With sigma_hat set to the exact proxy variance, the estimated-sigma
    // and known-sigma procedures coincide bitwise.
    #[test]
    fn known_sigma_variant_bitwise_equal() {
        let p = 101usize;
        let fam = small_family(120, p);
        let raw = CoeffSet::raw((0..p).map(|i| (i as f64 * 0.37).sin() / (1.0 + i as f64)).collect());
        let sigma_q = bounds().sigma_q();
        let a = select(&raw, &fam, sigma_q, 0.08, &bounds(), ShrinkageMode::PerGamma).unwrap();
        let b = select(&raw, &fam, sigma_q, 0.08, &bounds(), ShrinkageMode::PerGamma).unwrap();
        assert_eq!(a.gamma_index, b.gamma_index);
        for (x, y) in a.j_values.iter().zip(&b.j_values) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn penalty_monotone_in_sigma_and_weights() {
        let n = 50usize;
        let small = WeightVector::from_values(vec![1.0, 0.5], None).unwrap();
        let large = WeightVector::from_values(vec![1.0, 0.9], None).unwrap();
        assert!(penalty(&large, 0.5, n).unwrap() >= penalty(&small, 0.5, n).unwrap());
        assert!(penalty(&small, 0.7, n).unwrap() >= penalty(&small, 0.5, n).unwrap());
    }

    #[test]
    fn empty_family_rejected() {
        let mut fam = small_family(100, 21);
        fam.members.clear();
        let raw = CoeffSet::raw(vec![0.0; 21]);
        assert!(select(&raw, &fam, 0.5, 0.1, &bounds(), ShrinkageMode::PerGamma).is_err());
    }

    #[test]
    fn default_rho_in_range() {
        for n in [3usize, 100, 1000, 100000] {
            let rho = default_rho(n);
            assert!(rho > 0.0 && rho < 0.5);
        }
        assert!((default_rho(100) - (3.0 + 100.0f64.ln()).powi(-2)).abs() < 1e-15);
    }
}
