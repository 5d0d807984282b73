//! Pinsker-type weight vectors and the finite family Gamma they form.
//!
//! For alpha = (beta, r) the weight sequence is
//!
//!   gamma_alpha(j) = 1                      for 1 <= j <= j*(alpha)
//!                  = 1 - (j/omega_alpha)^beta  for j*(alpha) < j <= omega_alpha
//!                  = 0                      beyond,
//!
//! with omega_alpha = ((beta+1)(2beta+1)/(pi^{2beta} beta) * r * v_n)^{1/(2beta+1)},
//! v_n = n/varsigma_star and j*(alpha) = omega_alpha/ln(n+1). The grid of
//! alphas is {1..k*} x {r_1..r_m}; the two parameterizations differ only in
//! the k* offset (theory: a free constant, simulation: 100).

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// One weight vector with its provenance and diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightVector {
    /// (beta, r) the vector was built from; None for hand-made vectors.
    pub alpha: Option<(usize, f64)>,
    /// Cutoff omega_alpha (0 for hand-made vectors without one).
    pub omega: f64,
    /// Length of the leading block of exact ones, d(gamma) = floor(j*(alpha)).
    pub d_gamma: usize,
    /// gamma(1..=support.len()); zero beyond.
    support: Vec<f64>,
    /// sum_j gamma(j).
    pub sum: f64,
    /// sum_j gamma(j)^2.
    pub sum_sq: f64,
}

impl WeightVector {
    /// gamma(j) for 1-based j.
    #[inline]
    pub fn get(&self, j: usize) -> f64 {
        if j >= 1 && j <= self.support.len() {
            self.support[j - 1]
        } else {
            0.0
        }
    }

    pub fn support_len(&self) -> usize {
        self.support.len()
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    /// Build from explicit values; entries must lie in [0,1].
    pub fn from_values(values: Vec<f64>, alpha: Option<(usize, f64)>) -> Result<Self> {
        if values.iter().any(|&g| !(0.0..=1.0).contains(&g)) {
            return Err(CoreError::invalid("weights must lie in [0,1]"));
        }
        let mut support = values;
        while support.last() == Some(&0.0) {
            support.pop();
        }
        let d_gamma = support.iter().take_while(|&&g| g == 1.0).count();
        let sum = support.iter().sum();
        let sum_sq = support.iter().map(|g| g * g).sum();
        Ok(WeightVector { alpha, omega: support.len() as f64, d_gamma, support, sum, sum_sq })
    }

    /// The all-ones vector of length p.
    pub fn all_ones(p: usize) -> Self {
        WeightVector::from_values(vec![1.0; p], None).unwrap()
    }

    pub fn zero() -> Self {
        WeightVector { alpha: None, omega: 0.0, d_gamma: 0, support: Vec::new(), sum: 0.0, sum_sq: 0.0 }
    }

    fn from_alpha(beta: usize, r: f64, n: usize, p: usize, varsigma_star: f64) -> Self {
        let v_n = n as f64 / varsigma_star;
        // log-space: pi^{2 beta} overflows f64 for beta around 135
        let bf = beta as f64;
        let ln_omega = (((bf + 1.0) * (2.0 * bf + 1.0) / bf).ln() - 2.0 * bf * std::f64::consts::PI.ln()
            + r.ln()
            + v_n.ln())
            / (2.0 * bf + 1.0);
        let omega = ln_omega.exp();
        if omega < 1.0 {
            let mut z = WeightVector::zero();
            z.alpha = Some((beta, r));
            return z;
        }
        let j_star = omega / ((n as f64) + 1.0).ln();
        let cutoff = (omega.floor() as usize).min(p);
        let d_gamma = (j_star.floor() as usize).min(cutoff);
        let mut support = Vec::with_capacity(cutoff);
        for j in 1..=cutoff {
            let jf = j as f64;
            let g = if jf <= j_star {
                1.0
            } else {
                (1.0 - (jf / omega).powf(bf)).clamp(0.0, 1.0)
            };
            support.push(g);
        }
        while support.last() == Some(&0.0) {
            support.pop();
        }
        let sum = support.iter().sum();
        let sum_sq = support.iter().map(|g| g * g).sum();
        let d_gamma = d_gamma.min(support.len());
        WeightVector { alpha: Some((beta, r)), omega, d_gamma, support, sum, sum_sq }
    }
}

/// Which parameterization of the alpha-grid to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyMode {
    /// epsilon = 1/ln(n+1), m = [1/eps^2], k* = k0 + sqrt(ln(n+1)), k0 = 0.
    Theory,
    /// The simulation block: k* = 100 + sqrt(ln(n+1)), r_i = i/ln(n+1),
    /// m = [ln^2(n+1)].
    Simulation,
}

/// Optional overrides of the family parameters.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct FamilyOverrides {
    pub k_star0: Option<f64>,
    pub epsilon: Option<f64>,
    pub m: Option<usize>,
}

/// The finite family Gamma with its diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightFamily {
    /// Deduplicated members in (beta ascending, r ascending) first-occurrence order.
    pub members: Vec<WeightVector>,
    /// nu = #(A_n) = k* m, counted before deduplication.
    pub nu: usize,
    /// nu* = max over members of sum_j gamma(j).
    pub nu_star: f64,
    pub k_star: usize,
    pub m: usize,
    pub epsilon: f64,
    pub varsigma_star: f64,
    pub n: usize,
    pub p: usize,
}

/// Build the weight family on the (beta, r) grid.
///
/// Vectors whose omega_alpha < 1 degenerate to the zero vector and are kept
/// (deduplicated); omega is capped at p since the grid carries only p
/// coefficients.
pub fn build_family(
    n: usize,
    p: usize,
    varsigma_star: f64,
    mode: FamilyMode,
    overrides: FamilyOverrides,
) -> Result<WeightFamily> {
    if n < 3 || p < 3 {
        return Err(CoreError::invalid("need n >= 3 and p >= 3"));
    }
    if varsigma_star <= 0.0 {
        return Err(CoreError::invalid("varsigma_star must be positive"));
    }
    let ln_n1 = ((n as f64) + 1.0).ln();
    let epsilon = overrides.epsilon.unwrap_or(1.0 / ln_n1);
    if !(0.0 < epsilon && epsilon <= 1.0) {
        return Err(CoreError::invalid("epsilon must lie in (0, 1]"));
    }
    let k0 = overrides.k_star0.unwrap_or(match mode {
        FamilyMode::Theory => 0.0,
        FamilyMode::Simulation => 100.0,
    });
    let k_star = ((k0 + ln_n1.sqrt()).floor() as usize).max(1);
    let m = overrides.m.unwrap_or((1.0 / (epsilon * epsilon)).floor() as usize).max(1);

    let mut members: Vec<WeightVector> = Vec::new();
    for beta in 1..=k_star {
        for i in 1..=m {
            let r = i as f64 * epsilon;
            let w = WeightVector::from_alpha(beta, r, n, p, varsigma_star);
            let duplicate = members.iter().any(|existing| existing.support() == w.support());
            if !duplicate {
                members.push(w);
            }
        }
    }
    let nu_star = members.iter().map(|w| w.sum).fold(0.0, f64::max);
    Ok(WeightFamily {
        members,
        nu: k_star * m,
        nu_star,
        k_star,
        m,
        epsilon,
        varsigma_star,
        n,
        p,
    })
}

impl WeightFamily {
    /// CSV dump (member index, beta, r, omega, d_gamma, sum gamma) for audit.
    pub fn write_csv(&self, w: &mut impl std::io::Write) -> Result<()> {
        writeln!(w, "index,beta,r,omega,d_gamma,weight_sum")?;
        for (i, m) in self.members.iter().enumerate() {
            let (beta, r) = m.alpha.map_or((0, 0.0), |(b, r)| (b, r));
            writeln!(w, "{i},{beta},{r},{},{},{}", m.omega, m.d_gamma, m.sum)?;
        }
        Ok(())
    }
}
