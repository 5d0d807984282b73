//! Analytic verification suite: grid orthonormality, the Dirichlet excess
//! bound, the exact noise law, covariance identities against Monte Carlo,
//! and the Gram-matrix bounds. Shared by the `verify` CLI subcommand and
//! the acceptance tests.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{gram_metrics, h2_constants, pinsker_constant, tau};
use crate::error::Result;
use crate::experiments::with_workers;
use crate::grid::make_grid;
use crate::noise::{simulate_noise_increments, NoiseModel, SeedRecord};
use crate::trig::{dirichlet_excess_all, GridBasisTable};
use crate::weights::{build_family, FamilyMode, FamilyOverrides};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub details: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
    pub all_passed: bool,
    pub runtime_secs: f64,
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    /// Dirichlet excess is checked for every d in 1..=d_max.
    pub d_max: usize,
    /// Shared t/v lattice resolution for the Dirichlet sweep.
    pub dirichlet_res: usize,
    /// Monte Carlo paths for the noise-law and covariance checks.
    pub mc_paths: usize,
    /// Gram dimensions; the grid is p = 2d+1, n = 2, a = -1.
    pub gram_dims: Vec<usize>,
    /// Basis sizes for the orthonormality check.
    pub basis_sizes: Vec<usize>,
    pub master_seed: u64,
    pub workers: Option<usize>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            d_max: 200,
            dirichlet_res: 4096,
            mc_paths: 100_000,
            gram_dims: vec![58, 100, 150],
            basis_sizes: vec![3, 5, 21, 101, 1001],
            master_seed: 0x5EED_2026,
            workers: None,
        }
    }
}

impl VerifyOptions {
    /// Reduced-cost variant for smoke tests.
    pub fn quick() -> Self {
        VerifyOptions {
            d_max: 30,
            dirichlet_res: 512,
            mc_paths: 20_000,
            gram_dims: vec![58],
            basis_sizes: vec![3, 5, 21, 101],
            ..Default::default()
        }
    }
}

/// Max deviation of (Trg_i, Trg_j)_p from the identity, all pairs i,j <= p.
pub fn orthonormality_deviation(p: usize) -> Result<f64> {
    let table = GridBasisTable::new(p)?;
    // B[l-1][j-1] = Trg_j(t_l); gram = B^T B / p via nalgebra
    let b = nalgebra::DMatrix::<f64>::from_fn(p, p, |l, j| table.value(j + 1, l + 1));
    let gram = b.transpose() * &b / p as f64;
    let mut worst = 0.0f64;
    for i in 0..p {
        for j in 0..p {
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - want).abs());
        }
    }
    Ok(worst)
}

fn check_basis(opts: &VerifyOptions) -> Result<CheckResult> {
    let mut worst_overall = 0.0f64;
    let mut per_p = serde_json::Map::new();
    for &p in &opts.basis_sizes {
        let dev = orthonormality_deviation(p)?;
        per_p.insert(format!("p{p}"), serde_json::json!(dev));
        worst_overall = worst_overall.max(dev);
    }
    Ok(CheckResult {
        name: "basis-orthonormality".into(),
        passed: worst_overall < 1e-10,
        details: serde_json::json!({"max_deviation": worst_overall, "per_p": per_p}),
    })
}

fn check_dirichlet(opts: &VerifyOptions) -> Result<CheckResult> {
    let excesses = dirichlet_excess_all(opts.d_max, opts.dirichlet_res)?;
    let (argmax, max) = excesses
        .iter()
        .enumerate()
        .fold((0usize, f64::NEG_INFINITY), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc });
    let d1_ok = (excesses[0] - 1.0).abs() < 1e-9;
    Ok(CheckResult {
        name: "dirichlet-excess".into(),
        passed: max <= 5.0 && d1_ok,
        details: serde_json::json!({
            "d_max": opts.d_max,
            "max_excess": max,
            "argmax_d": argmax + 1,
            "excess_d1": excesses[0],
        }),
    })
}

fn check_noise_law(opts: &VerifyOptions) -> Result<CheckResult> {
    let model = NoiseModel::standard_sim();
    let grid = make_grid(1, 21)?;
    let paths = opts.mc_paths;
    let seed = opts.master_seed;
    let xs: Result<Vec<f64>> = with_workers(opts.workers, || {
        (0..paths as u64)
            .into_par_iter()
            .map(|rep| {
                let dxi = simulate_noise_increments(&model, &grid, &SeedRecord::new(seed, rep, "verify-noise"))?;
                Ok(dxi.iter().sum::<f64>())
            })
            .collect()
    });
    let xs = xs?;
    let m = paths as f64;
    let mean = xs.iter().sum::<f64>() / m;
    let m2 = xs.iter().map(|x| x * x).sum::<f64>() / m;
    let m4 = xs.iter().map(|x| x.powi(4)).sum::<f64>() / m;
    let var = m2 - mean * mean;
    let want = model.sigma_q() * (1.0 - (-2.0f64).exp()) / 2.0;
    let se = ((m4 - m2 * m2) / m).sqrt();
    Ok(CheckResult {
        name: "noise-law-variance".into(),
        passed: (var - want).abs() <= 4.0 * se,
        details: serde_json::json!({
            "paths": paths, "sample_var": var, "closed_form": want, "mc_se": se,
            "deviation_in_se": (var - want).abs() / se,
        }),
    })
}

fn check_tau_mc(opts: &VerifyOptions) -> Result<CheckResult> {
    let grid = make_grid(2, 21)?;
    let table = GridBasisTable::new(grid.p)?;
    let pairs = [(1usize, 1usize), (2, 2), (2, 3), (4, 7)];
    let indices = [1usize, 2, 3, 4, 7];
    let paths = opts.mc_paths;
    let mut details = Vec::new();
    let mut passed = true;
    for a in [0.0f64, -1.0] {
        let mut model = NoiseModel::standard_sim();
        model.a = a;
        let seed = opts.master_seed ^ a.to_bits();
        let rows: Result<Vec<[f64; 5]>> = with_workers(opts.workers, || {
            (0..paths as u64)
                .into_par_iter()
                .map(|rep| {
                    let dxi =
                        simulate_noise_increments(&model, &grid, &SeedRecord::new(seed, rep, "verify-tau"))?;
                    let mut out = [0.0f64; 5];
                    for (slot, &j) in indices.iter().enumerate() {
                        out[slot] = dxi
                            .iter()
                            .enumerate()
                            .map(|(i, d)| table.value(j, i + 1) * d)
                            .sum::<f64>();
                    }
                    Ok(out)
                })
                .collect()
        });
        let rows = rows?;
        let m = paths as f64;
        for &(i, j) in &pairs {
            let si = indices.iter().position(|&x| x == i).unwrap();
            let sj = indices.iter().position(|&x| x == j).unwrap();
            let mean_i = rows.iter().map(|r| r[si]).sum::<f64>() / m;
            let mean_j = rows.iter().map(|r| r[sj]).sum::<f64>() / m;
            let cov = rows.iter().map(|r| (r[si] - mean_i) * (r[sj] - mean_j)).sum::<f64>() / m;
            let var_of_cov = rows
                .iter()
                .map(|r| {
                    let c = (r[si] - mean_i) * (r[sj] - mean_j) - cov;
                    c * c
                })
                .sum::<f64>()
                / m;
            let se = (var_of_cov / m).sqrt();
            let fi: Vec<f64> = (1..=grid.len).map(|l| table.value(i, l)).collect();
            let fj: Vec<f64> = (1..=grid.len).map(|l| table.value(j, l)).collect();
            let want = model.sigma_q() * tau(&fi, &fj, &grid, a, grid.n as f64)?;
            let ok = (cov - want).abs() <= 4.0 * se;
            passed &= ok;
            details.push(serde_json::json!({
                "a": a, "i": i, "j": j, "mc_cov": cov, "tau_identity": want,
                "mc_se": se, "ok": ok,
            }));
        }
    }
    Ok(CheckResult {
        name: "tau-vs-mc-covariance".into(),
        passed,
        details: serde_json::Value::Array(details),
    })
}

fn check_gram(opts: &VerifyOptions) -> Result<CheckResult> {
    let mut passed = true;
    let mut details = Vec::new();
    for &d in &opts.gram_dims {
        let grid = make_grid(2, 2 * d + 1)?;
        let met = gram_metrics(d, &grid, -1.0)?;
        let ok = met.trace > d as f64 / 2.0 && met.lambda_max <= 3.0 && met.lambda_min >= -1e-10;
        passed &= ok;
        details.push(serde_json::json!({
            "d": d, "p": grid.p, "trace": met.trace, "lambda_max": met.lambda_max,
            "lambda_min": met.lambda_min, "trace_bound": d as f64 / 2.0, "ok": ok,
        }));
    }
    Ok(CheckResult { name: "gram-bounds".into(), passed, details: serde_json::Value::Array(details) })
}

fn check_constants() -> Result<CheckResult> {
    let model = NoiseModel::standard_sim();
    let c = h2_constants(70, 100, &model, (101.0f64).ln().sqrt())?;
    let pinsker = pinsker_constant(1, 1.0)?;
    let ok = c.d0 == 58
        && (c.a_check - 0.158030).abs() < 1e-6
        && (c.l_star - 8.0).abs() < 1e-12
        && (c.c_n - 0.0268012).abs() < 1e-6
        && (pinsker - 0.4235654).abs() < 1e-6;
    Ok(CheckResult {
        name: "threshold-constants".into(),
        passed: ok,
        details: serde_json::json!({
            "d0": c.d0, "a_check": c.a_check, "l_star": c.l_star, "c_n": c.c_n,
            "pinsker_k1_r1": pinsker,
        }),
    })
}

/// Condition C1 spot check at n=2, p=21: the exact sum_j |E xi_j^2 - sigma_q|
/// next to its Monte Carlo estimate. Recorded, not asserted against a sharp
/// constant.
fn check_c1_spot(opts: &VerifyOptions) -> Result<CheckResult> {
    let grid = make_grid(2, 21)?;
    let model = NoiseModel::standard_sim();
    let exact = crate::analytics::c1_deviation_exact(&grid, &model)?;
    let table = GridBasisTable::new(grid.p)?;
    let paths = (opts.mc_paths / 10).max(1_000);
    let sums: Result<Vec<Vec<f64>>> = with_workers(opts.workers, || {
        (0..paths as u64)
            .into_par_iter()
            .map(|rep| {
                let dxi =
                    simulate_noise_increments(&model, &grid, &SeedRecord::new(opts.master_seed, rep, "verify-c1"))?;
                Ok((1..=grid.p)
                    .map(|j| {
                        let i: f64 = dxi.iter().enumerate().map(|(l, d)| table.value(j, l + 1) * d).sum();
                        i * i / grid.n as f64
                    })
                    .collect())
            })
            .collect()
    });
    let sums = sums?;
    let m = paths as f64;
    let sigma = model.sigma_q();
    let mut mc = 0.0;
    for j in 0..grid.p {
        let mean = sums.iter().map(|r| r[j]).sum::<f64>() / m;
        mc += (mean - sigma).abs();
    }
    Ok(CheckResult {
        name: "c1-spot-check".into(),
        passed: exact.is_finite() && exact >= 0.0,
        details: serde_json::json!({
            "exact_sum_abs_dev": exact,
            "mc_sum_abs_dev": mc,
            "ratio_to_varsigma": exact / model.varsigma_star,
        }),
    })
}

fn check_family_invariants() -> Result<CheckResult> {
    let mut passed = true;
    let mut details = Vec::new();
    for n in [100usize, 500] {
        let fam = build_family(n, 1001, 0.5, FamilyMode::Simulation, FamilyOverrides::default())?;
        let mut ok = fam.nu == fam.k_star * fam.m;
        for mem in &fam.members {
            for j in 1..=mem.support_len() {
                let g = mem.get(j);
                ok &= (0.0..=1.0).contains(&g);
                if j <= mem.d_gamma {
                    ok &= g == 1.0;
                }
            }
        }
        passed &= ok;
        details.push(serde_json::json!({
            "n": n, "nu": fam.nu, "nu_star": fam.nu_star, "members": fam.members.len(), "ok": ok,
        }));
    }
    Ok(CheckResult { name: "weight-family-invariants".into(), passed, details: serde_json::Value::Array(details) })
}

/// Run the full verification suite.
pub fn run_verification(opts: &VerifyOptions) -> Result<VerificationReport> {
    let start = std::time::Instant::now();
    let checks = vec![
        check_basis(opts)?,
        check_dirichlet(opts)?,
        check_noise_law(opts)?,
        check_tau_mc(opts)?,
        check_gram(opts)?,
        check_constants()?,
        check_c1_spot(opts)?,
        check_family_invariants()?,
    ];
    let all_passed = checks.iter().all(|c| c.passed);
    Ok(VerificationReport { checks, all_passed, runtime_secs: start.elapsed().as_secs_f64() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_verification_passes() {
        let report = run_verification(&VerifyOptions::quick()).unwrap();
        for c in &report.checks {
            assert!(c.passed, "check {} failed: {}", c.name, c.details);
        }
        assert!(report.all_passed);
    }
}
