//! Coefficient estimation from increments, shrinkage, proxy-variance
//! estimation, weighted reconstruction, and dictionary projection.
//!
//! The raw estimator is theta_hat_j = (1/n) sum_{l=1}^{N} Trg_j(t_l) dy_l.
//! Since Trg_j is p-periodic on the lattice, increments are first folded
//! over periods into a length-p vector and the basis table does the rest in
//! O(p) per coefficient; a full set costs O(N + p^2) instead of O(N p).

use serde::{Deserialize, Serialize};

use crate::analytics::H2Constants;
use crate::error::{CoreError, Result};
use crate::grid::GridSpec;
use crate::noise::ObservationPath;
use crate::trig::GridBasisTable;
use crate::weights::WeightVector;

/// Which estimator a coefficient vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoeffRole {
    Raw,
    Shrunk,
    TrueProjected,
}

/// A length-p vector of basis coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoeffSet {
    pub values: Vec<f64>,
    pub role: CoeffRole,
    /// Shrinkage dimension (0 for raw).
    pub d_used: usize,
    pub c_n_used: f64,
    /// Set when |theta_hat|_d = 0 met a positive c_n and shrinkage was skipped.
    pub degenerate: bool,
    /// Set when c_n exceeded |theta_hat|_d, i.e. the factor went negative.
    pub overshrunk: bool,
}

impl CoeffSet {
    pub fn raw(values: Vec<f64>) -> Self {
        CoeffSet { values, role: CoeffRole::Raw, d_used: 0, c_n_used: 0.0, degenerate: false, overshrunk: false }
    }

    pub fn true_projected(values: Vec<f64>) -> Self {
        CoeffSet {
            values,
            role: CoeffRole::TrueProjected,
            d_used: 0,
            c_n_used: 0.0,
            degenerate: false,
            overshrunk: false,
        }
    }

    /// Euclidean norm of the first d entries.
    pub fn norm_d(&self, d: usize) -> f64 {
        self.values.iter().take(d).map(|x| x * x).sum::<f64>().sqrt()
    }

    /// CSV dump (j, value, role).
    pub fn write_csv(&self, w: &mut impl std::io::Write) -> Result<()> {
        let role = match self.role {
            CoeffRole::Raw => "raw",
            CoeffRole::Shrunk => "shrunk",
            CoeffRole::TrueProjected => "true_projected",
        };
        writeln!(w, "j,value,role")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{v},{role}", i + 1)?;
        }
        Ok(())
    }
}

/// Fold increments over periods: c[k-1] = sum_m dy_{k + m p}.
pub fn fold_increments(increments: &[f64], grid: &GridSpec) -> Result<Vec<f64>> {
    if increments.len() != grid.len {
        return Err(CoreError::LengthMismatch { expected: grid.len, got: increments.len() });
    }
    let mut folded = vec![0.0f64; grid.p];
    for (i, dy) in increments.iter().enumerate() {
        folded[i % grid.p] += dy;
    }
    Ok(folded)
}

/// All p raw coefficients from folded increments, using a shared table.
pub fn coeffs_from_folded(table: &GridBasisTable, folded: &[f64], n: usize) -> CoeffSet {
    CoeffSet::raw(table.transform(folded, n as f64, table.p))
}

/// Raw coefficient estimators theta_hat_j, j = 1..=p, from one path.
pub fn fourier_coeffs(path: &ObservationPath) -> Result<CoeffSet> {
    let table = GridBasisTable::new(path.grid.p)?;
    let folded = fold_increments(&path.increments, &path.grid)?;
    Ok(coeffs_from_folded(&table, &folded, path.grid.n))
}

/// True grid-projected coefficients theta_j = (S, Trg_j)_p of a signal.
pub fn true_grid_coeffs(signal: &crate::signal::SignalModel, table: &GridBasisTable) -> CoeffSet {
    let p = table.p;
    let folded: Vec<f64> = (1..=p).map(|k| signal.eval(k as f64 / p as f64) / p as f64).collect();
    CoeffSet::true_projected(table.transform(&folded, 1.0, p))
}

/// Shrink the leading d coordinates: theta*_j = (1 - c_n/|theta_hat|_d) theta_hat_j
/// for j <= d, untouched beyond. No positive-part clipping; an overshrunk
/// factor is flagged, and a zero norm with positive c_n returns the input
/// unchanged with the degenerate flag set.
pub fn shrink(raw: &CoeffSet, consts: &H2Constants) -> Result<CoeffSet> {
    if raw.role != CoeffRole::Raw {
        return Err(CoreError::invalid("shrink expects a raw coefficient set"));
    }
    let d = consts.d;
    if d > raw.values.len() {
        return Err(CoreError::invalid(format!(
            "shrinkage dimension d={d} exceeds coefficient count {}",
            raw.values.len()
        )));
    }
    let mut out = raw.values.clone();
    let mut degenerate = false;
    let mut overshrunk = false;
    if consts.c_n > 0.0 {
        let norm = raw.norm_d(d);
        if norm == 0.0 {
            degenerate = true;
        } else {
            let factor = 1.0 - consts.c_n / norm;
            overshrunk = factor < 0.0;
            for v in out.iter_mut().take(d) {
                *v *= factor;
            }
        }
    }
    Ok(CoeffSet {
        values: out,
        role: CoeffRole::Shrunk,
        d_used: d,
        c_n_used: consts.c_n,
        degenerate,
        overshrunk,
    })
}

/// Proxy-variance estimator sigma_hat = (n/p) sum_{j=[sqrt n]+1}^{p} theta_hat_j^2.
///
/// The sum stops at p (grid orthonormality holds only that far); this equals
/// the stated min(n, p) truncation whenever p <= n. Requires p > sqrt(n).
pub fn proxy_variance_from_coeffs(values: &[f64], grid: &GridSpec) -> Result<f64> {
    let n = grid.n;
    let p = grid.p;
    let sqrt_n = (n as f64).sqrt().floor() as usize;
    if p as f64 <= (n as f64).sqrt() {
        return Err(CoreError::invalid(format!("proxy variance needs p > sqrt(n): p={p}, n={n}")));
    }
    if values.len() < p {
        return Err(CoreError::LengthMismatch { expected: p, got: values.len() });
    }
    let sum: f64 = values[sqrt_n..p].iter().map(|t| t * t).sum();
    Ok((n as f64 / p as f64) * sum.max(0.0))
}

pub fn proxy_variance(path: &ObservationPath) -> Result<f64> {
    let coeffs = fourier_coeffs(path)?;
    proxy_variance_from_coeffs(&coeffs.values, &path.grid)
}

/// A weighted series sum_j gamma(j) coeff_j psi_j(t).
///
/// psi_j is the step embedding, so the function is piecewise constant with
/// the cell values collected in `grid_values` (value on cell k, 1-indexed
/// period position k-1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconstructedSignal {
    pub coeffs: CoeffSet,
    pub weights: WeightVector,
    pub p: usize,
    grid_values: Vec<f64>,
}

/// Combine coefficients with weights.
pub fn reconstruct(coeffs: &CoeffSet, gamma: &WeightVector, table: &GridBasisTable) -> Result<ReconstructedSignal> {
    if coeffs.values.len() != table.p {
        return Err(CoreError::LengthMismatch { expected: table.p, got: coeffs.values.len() });
    }
    let terms: Vec<(usize, f64)> = (1..=gamma.support_len().min(table.p))
        .map(|j| (j, gamma.get(j) * coeffs.values[j - 1]))
        .collect();
    let grid_values = table.eval_series_on_period(&terms);
    Ok(ReconstructedSignal { coeffs: coeffs.clone(), weights: gamma.clone(), p: table.p, grid_values })
}

impl ReconstructedSignal {
    /// Value at the grid point t_l (= the cell value, psi being right-continuous).
    #[inline]
    pub fn value_at_gridpoint(&self, l: usize) -> f64 {
        self.grid_values[(l - 1) % self.p]
    }

    /// Pointwise evaluation for t in (0, n]: the value on the cell containing t.
    pub fn eval(&self, t: f64) -> f64 {
        let k = ((t * self.p as f64).ceil() as usize).max(1);
        self.value_at_gridpoint(k)
    }

    pub fn grid_values(&self) -> &[f64] {
        &self.grid_values
    }

    /// L2[0,1] norm squared: exact via psi-orthonormality.
    pub fn norm_sq(&self) -> f64 {
        (1..=self.weights.support_len().min(self.p))
            .map(|j| {
                let c = self.weights.get(j) * self.coeffs.values[j - 1];
                c * c
            })
            .sum()
    }

    /// CSV dump (t_l, value) over one period.
    pub fn write_csv(&self, w: &mut impl std::io::Write) -> Result<()> {
        writeln!(w, "t_l,value")?;
        for (i, v) in self.grid_values.iter().enumerate() {
            writeln!(w, "{},{v}", (i + 1) as f64 / self.p as f64)?;
        }
        Ok(())
    }
}

/// Values at the p grid points of one period.
pub fn evaluate_on_grid(sig: &ReconstructedSignal, grid: &GridSpec) -> Result<Vec<f64>> {
    if grid.p != sig.p {
        return Err(CoreError::LengthMismatch { expected: sig.p, got: grid.p });
    }
    Ok(sig.grid_values.clone())
}

/// Dictionary for the projection of a reconstructed signal.
pub enum Dictionary {
    /// The trigonometric basis itself: projections come straight from the
    /// coefficients, no quadrature.
    TrigBasis,
    /// Arbitrary orthonormal evaluables u_j.
    Evaluables(Vec<Box<dyn Fn(f64) -> f64 + Send + Sync>>),
}

/// Projection coefficients beta*_j = (u_j, S*)_{L2[0,1]} for j = 1..=q.
///
/// Evaluable dictionaries are integrated with 1e4-point midpoint quadrature
/// per function.
pub fn dictionary_projection(sig: &ReconstructedSignal, dictionary: &Dictionary, q: Option<usize>) -> Vec<f64> {
    match dictionary {
        Dictionary::TrigBasis => {
            let count = q.unwrap_or(sig.p).min(sig.p);
            (1..=count).map(|j| sig.weights.get(j) * sig.coeffs.values[j - 1]).collect()
        }
        Dictionary::Evaluables(fns) => {
            let count = q.unwrap_or(fns.len()).min(fns.len());
            const POINTS: usize = 10_000;
            let h = 1.0 / POINTS as f64;
            (0..count)
                .map(|i| {
                    let u = &fns[i];
                    let mut acc = 0.0;
                    for m in 0..POINTS {
                        let t = (m as f64 + 0.5) * h;
                        acc += u(t) * sig.eval(t);
                    }
                    acc * h
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::noise::{simulate_observations, NoiseModel, SeedRecord};
    use crate::signal::{signal_custom, signal_s1};
    use crate::trig::trig_value;

    fn noiseless() -> NoiseModel {
        let mut m = NoiseModel::standard_sim();
        m.rho1 = 0.0;
        m.rho2 = 0.0;
        m.rho_lower = 0.0;
        m
    }

    fn consts_with(d: usize, c_n: f64) -> H2Constants {
        H2Constants { d, d0: 7, a_check: 0.25, l_star: 1.0, kappa_star: 1.0, r_n: 1.0, c_n }
    }

    #[test]
    fn zero_increments_zero_coeffs() {
        let g = make_grid(2, 5).unwrap();
        let path = ObservationPath {
            grid: g,
            increments: vec![0.0; g.len],
            noise_increments: None,
            seed_record: SeedRecord::new(0, 0, "x"),
        };
        let c = fourier_coeffs(&path).unwrap();
        assert!(c.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn coefficients_linear_in_increments() {
        let g = make_grid(2, 21).unwrap();
        let mk = |vals: Vec<f64>| ObservationPath {
            grid: g,
            increments: vals,
            noise_increments: None,
            seed_record: SeedRecord::new(0, 0, "x"),
        };
        let x: Vec<f64> = (0..g.len).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.4).collect();
        let y: Vec<f64> = (0..g.len).map(|i| ((i * 5 + 1) % 13) as f64 / 13.0).collect();
        let (al, be) = (1.7, -0.6);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(a, b)| al * a + be * b).collect();
        let cx = fourier_coeffs(&mk(x)).unwrap();
        let cy = fourier_coeffs(&mk(y)).unwrap();
        let cc = fourier_coeffs(&mk(combo)).unwrap();
        for j in 0..g.p {
            let want = al * cx.values[j] + be * cy.values[j];
            assert!((cc.values[j] - want).abs() < 1e-12);
        }
    }

    // Noiseless basis-element signal: theta_hat_2 equals the quadrature of
    // (S, psi_2) and sits within phi* L / p of 1.
    #[test]
    fn noiseless_basis_element_bias() {
        let g = make_grid(2, 5).unwrap();
        let s = signal_custom(vec![0.0, 1.0]); // S = Trg_2
        let path = simulate_observations(&s, &noiseless(), &g, &SeedRecord::new(1, 0, "x"), false).unwrap();
        let c = fourier_coeffs(&path).unwrap();
        // oracle: (S, psi_2) by cell-aligned quadrature
        let mut want = 0.0;
        let pts = 20_000usize;
        for k in 1..=g.p {
            let lo = (k - 1) as f64 / g.p as f64;
            let h = (1.0 / g.p as f64) / pts as f64;
            let psi2 = trig_value(2, k as f64 / g.p as f64).unwrap();
            for m in 0..pts {
                want += s.eval(lo + (m as f64 + 0.5) * h) * psi2 * h;
            }
        }
        // dy carries the per-cell Simpson approximation: ~5e-6 at p = 5
        assert!((c.values[1] - want).abs() < 1e-5, "theta2 {} quad {want}", c.values[1]);
        let bound = crate::trig::PHI_STAR * s.lipschitz / g.p as f64;
        assert!((c.values[1] - 1.0).abs() <= bound);
    }

    // Refinement comparison oracle: coefficients stabilize as p grows.
    #[test]
    fn noiseless_coeffs_refine_with_p() {
        let s = signal_s1();
        let seed = SeedRecord::new(1, 0, "x");
        let coeff_at = |p: usize| {
            let g = make_grid(1, p).unwrap();
            let path = simulate_observations(&s, &noiseless(), &g, &seed, false).unwrap();
            fourier_coeffs(&path).unwrap().values
        };
        let c101 = coeff_at(101);
        let c301 = coeff_at(301);
        let c1001 = coeff_at(1001);
        let max_diff = |a: &[f64], b: &[f64]| {
            (0..101).map(|j| (a[j] - b[j]).abs()).fold(0.0f64, f64::max)
        };
        let d1 = max_diff(&c101, &c301);
        let d2 = max_diff(&c301, &c1001);
        assert!(d2 < d1, "refinement gaps {d1} -> {d2}");
        assert!(d1 < 0.05);
    }

    #[test]
    fn shrink_identity_when_cn_zero() {
        let raw = CoeffSet::raw(vec![1.0, -2.0, 3.0, 0.5, 0.0]);
        let out = shrink(&raw, &consts_with(3, 0.0)).unwrap();
        assert_eq!(out.values, raw.values);
        assert_eq!(out.role, CoeffRole::Shrunk);
    }

    #[test]
    fn shrink_direct_arithmetic() {
        let raw = CoeffSet::raw(vec![3.0, 4.0, 0.0, 7.0]);
        let out = shrink(&raw, &consts_with(2, 1.0)).unwrap();
        assert!((out.values[0] - 2.4).abs() < 1e-15);
        assert!((out.values[1] - 3.2).abs() < 1e-15);
        // coordinates beyond d are bit-identical
        assert_eq!(out.values[2].to_bits(), raw.values[2].to_bits());
        assert_eq!(out.values[3].to_bits(), raw.values[3].to_bits());
        assert!(!out.overshrunk && !out.degenerate);
    }

    #[test]
    fn shrink_norm_identity() {
        let raw = CoeffSet::raw(vec![0.6, -0.8, 0.3, 0.0]);
        for c_n in [0.2, 0.9999, 1.5] {
            let out = shrink(&raw, &consts_with(2, c_n)).unwrap();
            let want = (raw.norm_d(2) - c_n).abs();
            assert!((out.norm_d(2) - want).abs() < 1e-12);
            assert_eq!(out.overshrunk, c_n > raw.norm_d(2));
        }
    }

    #[test]
    fn shrink_degenerate_zero_norm() {
        let raw = CoeffSet::raw(vec![0.0, 0.0, 5.0]);
        let out = shrink(&raw, &consts_with(2, 0.7)).unwrap();
        assert_eq!(out.values, raw.values);
        assert!(out.degenerate);
    }

    #[test]
    fn proxy_variance_guards_and_zero() {
        let g = make_grid(100, 9).unwrap(); // p = 9 <= sqrt(100) = 10
        let path = ObservationPath {
            grid: g,
            increments: vec![0.0; g.len],
            noise_increments: None,
            seed_record: SeedRecord::new(0, 0, "x"),
        };
        assert!(proxy_variance(&path).is_err());
        let g = make_grid(4, 21).unwrap();
        let path = ObservationPath {
            grid: g,
            increments: vec![0.0; g.len],
            noise_increments: None,
            seed_record: SeedRecord::new(0, 0, "x"),
        };
        assert_eq!(proxy_variance(&path).unwrap(), 0.0);
    }

    // Adding c*Trg_1 moves only theta_hat_1, which the j > sqrt(n) sum skips.
    #[test]
    fn proxy_variance_ignores_constant_shift() {
        let g = make_grid(4, 21).unwrap();
        let s = signal_s1();
        let path = simulate_observations(&s, &NoiseModel::standard_sim(), &g, &SeedRecord::new(3, 1, "x"), false)
            .unwrap();
        let base = proxy_variance(&path).unwrap();
        let shift = 2.5 / g.p as f64; // adds 2.5*Trg_1 to the signal
        let shifted = ObservationPath {
            increments: path.increments.iter().map(|dy| dy + shift).collect(),
            ..path.clone()
        };
        let moved = proxy_variance(&shifted).unwrap();
        assert!((base - moved).abs() < 1e-12, "{base} vs {moved}");
    }

    // gamma = all ones on true grid-projected coefficients reproduces S at
    // the grid points (exact grid representation).
    #[test]
    fn reconstruct_reproduces_signal_on_grid() {
        let p = 21usize;
        let table = GridBasisTable::new(p).unwrap();
        let s = signal_s1();
        let truth = true_grid_coeffs(&s, &table);
        let coeffs = CoeffSet::raw(truth.values.clone());
        let sig = reconstruct(&coeffs, &WeightVector::all_ones(p), &table).unwrap();
        for l in 1..=p {
            let want = s.eval(l as f64 / p as f64);
            assert!(
                (sig.value_at_gridpoint(l) - want).abs() < 1e-10,
                "l={l}: {} vs {want}",
                sig.value_at_gridpoint(l)
            );
        }
    }

    #[test]
    fn reconstruct_zero_and_single_weight() {
        let p = 5usize;
        let table = GridBasisTable::new(p).unwrap();
        let coeffs = CoeffSet::raw(vec![2.0, -1.0, 0.5, 0.3, 0.1]);
        let zero = reconstruct(&coeffs, &WeightVector::zero(), &table).unwrap();
        assert!(zero.grid_values().iter().all(|&v| v == 0.0));
        let e1 = WeightVector::from_values(vec![1.0], None).unwrap();
        let first = reconstruct(&coeffs, &e1, &table).unwrap();
        assert!(first.grid_values().iter().all(|&v| (v - 2.0).abs() < 1e-15));
    }

    #[test]
    fn dictionary_projection_trig_vs_quadrature() {
        let p = 101usize;
        let table = GridBasisTable::new(p).unwrap();
        let s = signal_s1();
        let truth = true_grid_coeffs(&s, &table);
        let coeffs = CoeffSet::raw(truth.values.clone());
        let sig = reconstruct(&coeffs, &WeightVector::all_ones(p), &table).unwrap();
        let exact = dictionary_projection(&sig, &Dictionary::TrigBasis, Some(6));
        let fns: Vec<Box<dyn Fn(f64) -> f64 + Send + Sync>> = (1..=6usize)
            .map(|j| {
                let jj = j;
                Box::new(move |t: f64| trig_value(jj, t).unwrap()) as Box<dyn Fn(f64) -> f64 + Send + Sync>
            })
            .collect();
        let quad = dictionary_projection(&sig, &Dictionary::Evaluables(fns), None);
        for j in 0..6 {
            // psi-vs-Trg discretization: O(1/p)
            assert!(
                (exact[j] - quad[j]).abs() < 3.0 / p as f64,
                "j={} exact {} quad {}",
                j + 1,
                exact[j],
                quad[j]
            );
        }
    }

    #[test]
    fn dictionary_projection_zero_signal_and_bessel() {
        let p = 21usize;
        let table = GridBasisTable::new(p).unwrap();
        let zero = reconstruct(&CoeffSet::raw(vec![0.0; p]), &WeightVector::all_ones(p), &table).unwrap();
        assert!(dictionary_projection(&zero, &Dictionary::TrigBasis, None).iter().all(|&b| b == 0.0));

        let coeffs = CoeffSet::raw((0..p).map(|i| 1.0 / (1.0 + i as f64)).collect());
        let sig = reconstruct(&coeffs, &WeightVector::all_ones(p), &table).unwrap();
        let betas = dictionary_projection(&sig, &Dictionary::TrigBasis, None);
        let bessel: f64 = betas.iter().map(|b| b * b).sum();
        assert!(bessel <= sig.norm_sq() + 1e-8);
    }
}
