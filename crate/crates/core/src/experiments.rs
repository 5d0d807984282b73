//! Monte Carlo harness: empirical risk, the Theorem-1 improvement check,
//! risk-table reproduction, the oracle-inequality sanity check, and the
//! condition audit.
//!
//! Replications are embarrassingly parallel. Every replication derives its
//! own RNG stream from (master_seed, replication, tag) and the reduction
//! walks results in replication order, so outputs are bit-identical for any
//! worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{d_zero, h2_constants, p_zero};
use crate::error::{CoreError, Result};
use crate::estimators::{coeffs_from_folded, proxy_variance_from_coeffs, true_grid_coeffs, CoeffSet};
use crate::grid::{make_grid, GridSpec};
use crate::noise::{fold_observations, signal_cell_integrals, NoiseModel, SeedRecord};
use crate::selection::{default_rho, select, shrink_for_member, ShrinkageMode};
use crate::signal::SignalModel;
use crate::trig::{GridBasisTable, PHI_STAR};
use crate::weights::{build_family, FamilyMode, FamilyOverrides, WeightFamily, WeightVector};

/// Which estimator the harness evaluates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum EstimatorSpec {
    /// gamma* from the penalized objective with per-member shrinkage.
    SelectedShrunk,
    /// gamma_hat from the same objective with shrinkage disabled.
    SelectedRaw,
    /// A fixed weight vector applied to raw coefficients.
    FixedRaw(WeightVector),
    /// A fixed weight vector applied to coefficients shrunk with its own d and r.
    FixedShrunk(WeightVector),
}

/// Everything a replication needs, shared read-only across workers.
pub struct ExperimentContext {
    pub signal: SignalModel,
    pub noise: NoiseModel,
    pub grid: GridSpec,
    pub family: WeightFamily,
    pub rho: f64,
    pub master_seed: u64,
    table: GridBasisTable,
    signal_cells: Vec<f64>,
    signal_at_grid: Vec<f64>,
}

impl ExperimentContext {
    pub fn new(
        signal: SignalModel,
        noise: NoiseModel,
        grid: GridSpec,
        family: WeightFamily,
        rho: f64,
        master_seed: u64,
    ) -> Result<Self> {
        noise.validate()?;
        let table = GridBasisTable::new(grid.p)?;
        let signal_cells = signal_cell_integrals(&signal, &grid);
        let signal_at_grid: Vec<f64> = (1..=grid.p).map(|l| signal.eval(l as f64 / grid.p as f64)).collect();
        Ok(ExperimentContext { signal, noise, grid, family, rho, master_seed, table, signal_cells, signal_at_grid })
    }

    /// Raw coefficients and proxy variance for one replication.
    fn replicate(&self, rep: u64) -> Result<(CoeffSet, f64)> {
        let seed = SeedRecord::new(self.master_seed, rep, "noise");
        let folded = fold_observations(&self.signal_cells, &self.noise, &self.grid, &seed)?;
        let coeffs = coeffs_from_folded(&self.table, &folded, self.grid.n);
        let sigma_hat = proxy_variance_from_coeffs(&coeffs.values, &self.grid)?;
        Ok((coeffs, sigma_hat))
    }

    /// Grid-averaged squared deviation (1/p) sum_l (Shat(t_l) - S(t_l))^2.
    fn risk_of(&self, gamma: &WeightVector, coeffs: &CoeffSet) -> f64 {
        let terms: Vec<(usize, f64)> = (1..=gamma.support_len().min(self.grid.p))
            .map(|j| (j, gamma.get(j) * coeffs.values[j - 1]))
            .collect();
        let values = self.table.eval_series_on_period(&terms);
        let p = self.grid.p as f64;
        values
            .iter()
            .zip(&self.signal_at_grid)
            .map(|(v, s)| (v - s) * (v - s))
            .sum::<f64>()
            / p
    }

    fn evaluate(&self, spec: &EstimatorSpec, coeffs: &CoeffSet, sigma_hat: f64) -> Result<f64> {
        match spec {
            EstimatorSpec::SelectedShrunk => {
                let sel = select(coeffs, &self.family, sigma_hat, self.rho, &self.noise, ShrinkageMode::PerGamma)?;
                Ok(self.risk_of(&sel.gamma_star, &sel.coeffs_star))
            }
            EstimatorSpec::SelectedRaw => {
                let sel = select(coeffs, &self.family, sigma_hat, self.rho, &self.noise, ShrinkageMode::Disabled)?;
                Ok(self.risk_of(&sel.gamma_star, &sel.coeffs_star))
            }
            EstimatorSpec::FixedRaw(gamma) => Ok(self.risk_of(gamma, coeffs)),
            EstimatorSpec::FixedShrunk(gamma) => {
                let shrunk = shrink_for_member(coeffs, gamma, self.grid.n, &self.noise, ShrinkageMode::PerGamma)?;
                Ok(self.risk_of(gamma, &shrunk))
            }
        }
    }
}

/// Run `f` on a rayon pool with the requested worker count (None = default).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match workers {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Empirical risk of one estimator over n_rep replications.
pub fn empirical_risk(
    ctx: &ExperimentContext,
    spec: &EstimatorSpec,
    n_rep: usize,
    workers: Option<usize>,
) -> Result<(f64, f64)> {
    if n_rep < 1 {
        return Err(CoreError::invalid("n_rep must be >= 1"));
    }
    let risks: Result<Vec<f64>> = with_workers(workers, || {
        (0..n_rep as u64)
            .into_par_iter()
            .map(|rep| {
                let (coeffs, sigma_hat) = ctx.replicate(rep)?;
                ctx.evaluate(spec, &coeffs, sigma_hat)
            })
            .collect()
    });
    Ok(mean_and_se(&risks?))
}

/// Per-replication risks of several estimators evaluated on shared paths.
pub fn paired_risks(
    ctx: &ExperimentContext,
    specs: &[EstimatorSpec],
    n_rep: usize,
    workers: Option<usize>,
) -> Result<Vec<Vec<f64>>> {
    let rows: Result<Vec<Vec<f64>>> = with_workers(workers, || {
        (0..n_rep as u64)
            .into_par_iter()
            .map(|rep| {
                let (coeffs, sigma_hat) = ctx.replicate(rep)?;
                specs.iter().map(|s| ctx.evaluate(s, &coeffs, sigma_hat)).collect()
            })
            .collect()
    });
    rows
}

/// Outcome of the Theorem-1 improvement experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImprovementReport {
    pub d: usize,
    pub n: usize,
    pub p: usize,
    pub c_n: f64,
    pub lipschitz: f64,
    pub p0: f64,
    /// MC estimate of E|theta* - theta|_d^2 - E|theta_hat - theta|_d^2.
    pub delta_hat: f64,
    pub stderr: f64,
    /// Theoretical upper bound -c_n^2 + 2 sqrt(d) phi* L c_n / p.
    pub bound: f64,
    pub n_rep: usize,
}

/// Estimate the risk difference between shrunk and raw coefficient blocks.
pub fn improvement_experiment(
    signal: &SignalModel,
    n: usize,
    p_requested: usize,
    d: usize,
    noise: &NoiseModel,
    n_rep: usize,
    master_seed: u64,
    r_n: f64,
    workers: Option<usize>,
) -> Result<ImprovementReport> {
    let grid = make_grid(n, p_requested)?;
    if d > grid.p {
        return Err(CoreError::invalid("d must be <= p"));
    }
    let consts = h2_constants(d, n, noise, r_n)?;
    let table = GridBasisTable::new(grid.p)?;
    let truth = true_grid_coeffs(signal, &table);
    let signal_cells = signal_cell_integrals(signal, &grid);
    let deltas: Result<Vec<f64>> = with_workers(workers, || {
        (0..n_rep as u64)
            .into_par_iter()
            .map(|rep| {
                let seed = SeedRecord::new(master_seed, rep, "noise");
                let folded = fold_observations(&signal_cells, noise, &grid, &seed)?;
                let raw = coeffs_from_folded(&table, &folded, grid.n);
                let shrunk = crate::estimators::shrink(&raw, &consts)?;
                let mut delta = 0.0;
                for j in 0..d {
                    let t = truth.values[j];
                    let e_star = shrunk.values[j] - t;
                    let e_raw = raw.values[j] - t;
                    delta += e_star * e_star - e_raw * e_raw;
                }
                Ok(delta)
            })
            .collect()
    });
    let (delta_hat, stderr) = mean_and_se(&deltas?);
    let lipschitz = signal.lipschitz;
    let pf = grid.p as f64;
    let bound = -consts.c_n * consts.c_n + 2.0 * (d as f64).sqrt() * PHI_STAR * lipschitz * consts.c_n / pf;
    let p0 = if consts.c_n > 0.0 { p_zero(&consts, lipschitz)? } else { f64::INFINITY };
    Ok(ImprovementReport {
        d,
        n,
        p: grid.p,
        c_n: consts.c_n,
        lipschitz,
        p0,
        delta_hat,
        stderr,
        bound,
        n_rep,
    })
}

/// One (signal, n, estimator) risk row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskRow {
    pub signal: String,
    pub n: usize,
    pub estimator: String,
    pub risk: f64,
    pub stderr: f64,
    pub n_rep: usize,
}

/// A paired comparison row: ratio = risk(numerator)/risk(denominator).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioRow {
    pub signal: String,
    pub n: usize,
    pub numerator: String,
    pub denominator: String,
    pub ratio: f64,
    /// Mean of the per-replication paired differences numerator - denominator.
    pub diff_mean: f64,
    /// SE of that mean (paired design, shared seeds).
    pub diff_se: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskReport {
    pub mode: String,
    pub rows: Vec<RiskRow>,
    pub ratios: Vec<RatioRow>,
    pub master_seed: u64,
    pub n_rep: usize,
    pub p_requested: usize,
    pub runtime_secs: f64,
    pub config: serde_json::Value,
}

impl RiskReport {
    /// Flat CSV: signal, n, estimator, risk, stderr, ratio (ratio repeated on
    /// the numerator row, empty elsewhere).
    pub fn write_csv(&self, w: &mut impl std::io::Write) -> Result<()> {
        writeln!(w, "signal,n,estimator,risk,stderr,ratio")?;
        for row in &self.rows {
            let ratio = self
                .ratios
                .iter()
                .find(|r| r.signal == row.signal && r.n == row.n && r.numerator == row.estimator)
                .map(|r| r.ratio.to_string())
                .unwrap_or_default();
            writeln!(w, "{},{},{},{},{},{ratio}", row.signal, row.n, row.estimator, row.risk, row.stderr)?;
        }
        Ok(())
    }
}

/// Which table of the reference experiment to reproduce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableMode {
    /// Improved selection vs raw selection, each with its own winner.
    Table1,
    /// Both estimators at the raw-selected gamma_hat.
    Table2,
}

/// Configuration of a table experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableConfig {
    pub signals: Vec<String>,
    pub n_list: Vec<usize>,
    pub p: usize,
    pub n_rep: usize,
    pub master_seed: u64,
    pub noise: NoiseModel,
    pub family_mode: FamilyMode,
    #[serde(default)]
    pub overrides: FamilyOverrides,
}

impl TableConfig {
    /// Desk-scale defaults: p = 1001, 300 replications, n in {100, 200, 500}.
    pub fn desk(master_seed: u64) -> Self {
        TableConfig {
            signals: vec!["s1".into(), "s2".into()],
            n_list: vec![100, 200, 500],
            p: 1001,
            n_rep: 300,
            master_seed,
            noise: NoiseModel::standard_sim(),
            family_mode: FamilyMode::Simulation,
            overrides: FamilyOverrides::default(),
        }
    }

    /// The reference scale: p = 10001, 1000 replications, n up to 1000.
    pub fn paper(master_seed: u64) -> Self {
        TableConfig {
            signals: vec!["s1".into(), "s2".into()],
            n_list: vec![100, 200, 500, 1000],
            p: 10001,
            n_rep: 1000,
            master_seed,
            noise: NoiseModel::standard_sim(),
            family_mode: FamilyMode::Simulation,
            overrides: FamilyOverrides::default(),
        }
    }
}

fn resolve_signal(name: &str) -> Result<SignalModel> {
    crate::signal::signal_by_name(name, None, None)
}

/// Reproduce a risk table. Table 1 pairs the improved selection against the
/// raw selection; Table 2 evaluates shrunk and raw coefficients at the same
/// raw-selected gamma_hat. Shared seeds pair the designs.
pub fn table_experiment(config: &TableConfig, mode: TableMode, workers: Option<usize>) -> Result<RiskReport> {
    let start = std::time::Instant::now();
    let mut rows = Vec::new();
    let mut ratios = Vec::new();
    for signal_name in &config.signals {
        let signal = resolve_signal(signal_name)?;
        for &n in &config.n_list {
            let grid = make_grid(n, config.p)?;
            let family = build_family(n, grid.p, config.noise.varsigma_star, config.family_mode, config.overrides)?;
            let rho = default_rho(n);
            let ctx = ExperimentContext::new(signal.clone(), config.noise, grid, family, rho, config.master_seed)?;
            let (spec_a, spec_b, name_a, name_b) = match mode {
                TableMode::Table1 => (
                    EstimatorSpec::SelectedShrunk,
                    EstimatorSpec::SelectedRaw,
                    "S*_gamma*".to_string(),
                    "Shat_gammahat".to_string(),
                ),
                TableMode::Table2 => (
                    EstimatorSpec::SelectedShrunk, // placeholder, replaced below
                    EstimatorSpec::SelectedRaw,
                    "S*_gammahat".to_string(),
                    "Shat_gammahat".to_string(),
                ),
            };
            let pairs: Result<Vec<(f64, f64)>> = with_workers(workers, || {
                (0..config.n_rep as u64)
                    .into_par_iter()
                    .map(|rep| {
                        let (coeffs, sigma_hat) = ctx.replicate(rep)?;
                        match mode {
                            TableMode::Table1 => {
                                let a = ctx.evaluate(&spec_a, &coeffs, sigma_hat)?;
                                let b = ctx.evaluate(&spec_b, &coeffs, sigma_hat)?;
                                Ok((a, b))
                            }
                            TableMode::Table2 => {
                                // gamma_hat from the raw criterion, then both
                                // estimators at that same member
                                let sel = select(
                                    &coeffs,
                                    &ctx.family,
                                    sigma_hat,
                                    ctx.rho,
                                    &ctx.noise,
                                    ShrinkageMode::Disabled,
                                )?;
                                let raw_risk = ctx.risk_of(&sel.gamma_star, &sel.coeffs_star);
                                let shrunk = shrink_for_member(
                                    &coeffs,
                                    &sel.gamma_star,
                                    ctx.grid.n,
                                    &ctx.noise,
                                    ShrinkageMode::PerGamma,
                                )?;
                                let shrunk_risk = ctx.risk_of(&sel.gamma_star, &shrunk);
                                Ok((shrunk_risk, raw_risk))
                            }
                        }
                    })
                    .collect()
            });
            let pairs = pairs?;
            let a: Vec<f64> = pairs.iter().map(|(x, _)| *x).collect();
            let b: Vec<f64> = pairs.iter().map(|(_, y)| *y).collect();
            let (risk_a, se_a) = mean_and_se(&a);
            let (risk_b, se_b) = mean_and_se(&b);
            let diffs: Vec<f64> = b.iter().zip(&a).map(|(x, y)| x - y).collect();
            let (diff_mean, diff_se) = mean_and_se(&diffs);
            rows.push(RiskRow {
                signal: signal_name.clone(),
                n,
                estimator: name_a.clone(),
                risk: risk_a,
                stderr: se_a,
                n_rep: config.n_rep,
            });
            rows.push(RiskRow {
                signal: signal_name.clone(),
                n,
                estimator: name_b.clone(),
                risk: risk_b,
                stderr: se_b,
                n_rep: config.n_rep,
            });
            ratios.push(RatioRow {
                signal: signal_name.clone(),
                n,
                numerator: name_b.clone(),
                denominator: name_a.clone(),
                ratio: risk_b / risk_a,
                diff_mean,
                diff_se,
            });
        }
    }
    Ok(RiskReport {
        mode: match mode {
            TableMode::Table1 => "table1".into(),
            TableMode::Table2 => "table2".into(),
        },
        rows,
        ratios,
        master_seed: config.master_seed,
        n_rep: config.n_rep,
        p_requested: config.p,
        runtime_secs: start.elapsed().as_secs_f64(),
        config: serde_json::to_value(config)?,
    })
}

/// Oracle-inequality sanity report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleReport {
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    pub n_rep: usize,
    pub risk_selected: f64,
    pub min_member_risk: f64,
    pub best_member_index: usize,
    pub subsampled_members: usize,
    /// (1 + 5 rho)/(1 - rho).
    pub bound_factor: f64,
    pub ratio: f64,
    /// Remainder constant fitted at the auxiliary scale n/2.
    pub fitted_c: f64,
    pub slack: f64,
    pub diff_se: f64,
    pub passed: bool,
}

/// Check R(S*) <= (1+5 rho)/(1-rho) * min over a subsampled family of
/// R(S*_gamma) + slack. The remainder constant is fitted out-of-sample at
/// n/2 and the slack adds 3 joint standard errors of the paired difference.
#[allow(clippy::too_many_arguments)]
pub fn oracle_check(
    signal: &SignalModel,
    n: usize,
    p_requested: usize,
    noise: &NoiseModel,
    family_mode: FamilyMode,
    n_rep: usize,
    master_seed: u64,
    workers: Option<usize>,
) -> Result<OracleReport> {
    let (aux_ratio_excess, _, _) = oracle_run(
        signal,
        n / 2,
        p_requested,
        noise,
        family_mode,
        n_rep,
        master_seed,
        "oracle-aux",
        workers,
    )?;
    let fitted_c = aux_ratio_excess.max(0.0) * (n / 2) as f64;
    let (excess, mut report, diff_se) = oracle_run(
        signal,
        n,
        p_requested,
        noise,
        family_mode,
        n_rep,
        master_seed,
        "noise",
        workers,
    )?;
    report.fitted_c = fitted_c;
    report.slack = fitted_c / n as f64 + 3.0 * diff_se;
    report.passed = excess <= report.slack;
    Ok(report)
}

/// One oracle-comparison run; returns the excess over the oracle bound,
/// the report skeleton, and the joint SE of the paired difference.
#[allow(clippy::too_many_arguments)]
fn oracle_run(
    signal: &SignalModel,
    n: usize,
    p_requested: usize,
    noise: &NoiseModel,
    family_mode: FamilyMode,
    n_rep: usize,
    master_seed: u64,
    stream_tag: &str,
    workers: Option<usize>,
) -> Result<(f64, OracleReport, f64)> {
    let grid = make_grid(n, p_requested)?;
    let family = build_family(n, grid.p, noise.varsigma_star, family_mode, FamilyOverrides::default())?;
    let rho = default_rho(n);
    let ctx = ExperimentContext::new(signal.clone(), *noise, grid, family, rho, master_seed)?;
    // deterministic subsample: every k-th member, at most 50
    let total = ctx.family.members.len();
    let step = total.div_ceil(50).max(1);
    let member_idx: Vec<usize> = (0..total).step_by(step).collect();
    // distinct stream: replications draw from (master, rep, tag)
    let tag = stream_tag.to_string();
    let rows: Result<Vec<(f64, Vec<f64>)>> = with_workers(workers, || {
        (0..n_rep as u64)
            .into_par_iter()
            .map(|rep| {
                let seed = SeedRecord::new(ctx.master_seed, rep, &tag);
                let folded = fold_observations(&ctx.signal_cells, &ctx.noise, &ctx.grid, &seed)?;
                let coeffs = coeffs_from_folded(&ctx.table, &folded, ctx.grid.n);
                let sigma_hat = proxy_variance_from_coeffs(&coeffs.values, &ctx.grid)?;
                let sel_risk = ctx.evaluate(&EstimatorSpec::SelectedShrunk, &coeffs, sigma_hat)?;
                let member_risks: Result<Vec<f64>> = member_idx
                    .iter()
                    .map(|&i| {
                        let gamma = ctx.family.members[i].clone();
                        ctx.evaluate(&EstimatorSpec::FixedShrunk(gamma), &coeffs, sigma_hat)
                    })
                    .collect();
                Ok((sel_risk, member_risks?))
            })
            .collect()
    });
    let rows = rows?;
    let sel: Vec<f64> = rows.iter().map(|(s, _)| *s).collect();
    let (risk_selected, _) = mean_and_se(&sel);
    let mut best_mean = f64::INFINITY;
    let mut best_pos = 0usize;
    for (pos, _) in member_idx.iter().enumerate() {
        let risks: Vec<f64> = rows.iter().map(|(_, m)| m[pos]).collect();
        let (mean, _) = mean_and_se(&risks);
        if mean < best_mean {
            best_mean = mean;
            best_pos = pos;
        }
    }
    let diffs: Vec<f64> = rows.iter().map(|(s, m)| s - m[best_pos]).collect();
    let (_, diff_se) = mean_and_se(&diffs);
    let bound_factor = (1.0 + 5.0 * rho) / (1.0 - rho);
    let excess = risk_selected - bound_factor * best_mean;
    let p = ctx.grid.p;
    let report = OracleReport {
        n,
        p,
        rho,
        n_rep,
        risk_selected,
        min_member_risk: best_mean,
        best_member_index: member_idx[best_pos],
        subsampled_members: member_idx.len(),
        bound_factor,
        ratio: risk_selected / best_mean,
        fitted_c: 0.0,
        slack: 0.0,
        diff_se,
        passed: false,
    };
    Ok((excess, report, diff_se))
}

/// Condition audit: the constants the theory asks to be subpolynomial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionAudit {
    pub n: usize,
    pub p: usize,
    pub kappa_star: f64,
    pub nu: usize,
    pub nu_star: f64,
    /// c*_n = n * max over members of c_n(gamma)^2.
    pub c_star_n: f64,
    pub d0: usize,
    /// Members whose d(gamma) clears the max(7, d0) gate.
    pub members_with_active_shrinkage: usize,
    pub family_size: usize,
    /// p / n^{5/6}; condition D wants this to grow.
    pub p_vs_n56: f64,
    pub condition_d_satisfied: bool,
}

pub fn condition_audit(
    n: usize,
    p_requested: usize,
    noise: &NoiseModel,
    family_mode: FamilyMode,
    overrides: FamilyOverrides,
) -> Result<ConditionAudit> {
    let grid = make_grid(n, p_requested)?;
    let family = build_family(n, grid.p, noise.varsigma_star, family_mode, overrides)?;
    let d0 = d_zero(noise.a_max)?;
    let mut c_star = 0.0f64;
    let mut active = 0usize;
    for m in &family.members {
        if m.d_gamma == 0 {
            continue;
        }
        let r_n = m.alpha.map_or(crate::analytics::default_r_n(n), |(_, r)| r);
        let consts = h2_constants(m.d_gamma, n, noise, r_n)?;
        if consts.c_n > 0.0 {
            active += 1;
        }
        c_star = c_star.max(n as f64 * consts.c_n * consts.c_n);
    }
    let p_vs_n56 = grid.p as f64 / (n as f64).powf(5.0 / 6.0);
    Ok(ConditionAudit {
        n,
        p: grid.p,
        kappa_star: 2.0 * noise.varsigma_star,
        nu: family.nu,
        nu_star: family.nu_star,
        c_star_n: c_star,
        d0,
        members_with_active_shrinkage: active,
        family_size: family.members.len(),
        p_vs_n56,
        condition_d_satisfied: p_vs_n56 > 1.0,
    })
}

/// Mean |sigma_hat - sigma_q| at p = n across an n-ladder (consistency trend).
pub fn sigma_consistency(
    signal: &SignalModel,
    noise: &NoiseModel,
    n_list: &[usize],
    n_rep: usize,
    master_seed: u64,
    workers: Option<usize>,
) -> Result<Vec<(usize, f64)>> {
    let sigma_q = noise.sigma_q();
    let mut out = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let grid = make_grid(n, n.max(3))?;
        let table = GridBasisTable::new(grid.p)?;
        let cells = signal_cell_integrals(signal, &grid);
        let errs: Result<Vec<f64>> = with_workers(workers, || {
            (0..n_rep as u64)
                .into_par_iter()
                .map(|rep| {
                    let seed = SeedRecord::new(master_seed, rep, "sigma");
                    let folded = fold_observations(&cells, noise, &grid, &seed)?;
                    let coeffs = coeffs_from_folded(&table, &folded, grid.n);
                    let sigma_hat = proxy_variance_from_coeffs(&coeffs.values, &grid)?;
                    Ok((sigma_hat - sigma_q).abs())
                })
                .collect()
        });
        let (mean, _) = mean_and_se(&errs?);
        out.push((n, mean));
    }
    Ok(out)
}

/// Per-figure CSV (t, S(t), Shat(t), Sstar(t)) over one period for a single
/// replication, mirroring the reference figures.
pub fn figure_csv(
    ctx: &ExperimentContext,
    rep: u64,
    w: &mut impl std::io::Write,
) -> Result<()> {
    let (coeffs, sigma_hat) = ctx.replicate(rep)?;
    let raw_sel = select(&coeffs, &ctx.family, sigma_hat, ctx.rho, &ctx.noise, ShrinkageMode::Disabled)?;
    let shrunk_sel = select(&coeffs, &ctx.family, sigma_hat, ctx.rho, &ctx.noise, ShrinkageMode::PerGamma)?;
    let raw_terms: Vec<(usize, f64)> = (1..=raw_sel.gamma_star.support_len())
        .map(|j| (j, raw_sel.gamma_star.get(j) * raw_sel.coeffs_star.values[j - 1]))
        .collect();
    let star_terms: Vec<(usize, f64)> = (1..=shrunk_sel.gamma_star.support_len())
        .map(|j| (j, shrunk_sel.gamma_star.get(j) * shrunk_sel.coeffs_star.values[j - 1]))
        .collect();
    let raw_vals = ctx.table.eval_series_on_period(&raw_terms);
    let star_vals = ctx.table.eval_series_on_period(&star_terms);
    writeln!(w, "t,s,shat,sstar")?;
    for l in 1..=ctx.grid.p {
        writeln!(
            w,
            "{},{},{},{}",
            l as f64 / ctx.grid.p as f64,
            ctx.signal_at_grid[l - 1],
            raw_vals[l - 1],
            star_vals[l - 1]
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{signal_s1, signal_zero};

    fn desk_ctx(n: usize, p: usize, seed: u64) -> ExperimentContext {
        let grid = make_grid(n, p).unwrap();
        let noise = NoiseModel::standard_sim();
        let family =
            build_family(n, grid.p, noise.varsigma_star, FamilyMode::Simulation, FamilyOverrides::default())
                .unwrap();
        ExperimentContext::new(signal_s1(), noise, grid, family, default_rho(n), seed).unwrap()
    }

    #[test]
    fn zero_estimator_risk_is_signal_norm() {
        let ctx = desk_ctx(10, 101, 3);
        let (risk, _) = empirical_risk(&ctx, &EstimatorSpec::FixedRaw(WeightVector::zero()), 3, Some(1)).unwrap();
        let want: f64 = ctx.signal_at_grid.iter().map(|s| s * s).sum::<f64>() / ctx.grid.p as f64;
        assert!((risk - want).abs() < 1e-12);
        // grid average of S^2 approximates ||S1||^2 = 0.18836 (1e6-point quadrature)
        assert!((want - 0.18836).abs() < 0.01);
    }

    // Noiseless all-ones raw estimator: risk is pure squared bias, at the
    // (phi* L / p)^2 level.
    #[test]
    fn noiseless_bias_risk_is_small() {
        let grid = make_grid(4, 101).unwrap();
        let mut noise = NoiseModel::standard_sim();
        noise.rho1 = 0.0;
        noise.rho2 = 0.0;
        noise.rho_lower = 0.0;
        let family =
            build_family(4, grid.p, noise.varsigma_star, FamilyMode::Simulation, FamilyOverrides::default())
                .unwrap();
        let ctx = ExperimentContext::new(signal_s1(), noise, grid, family, 0.01, 5).unwrap();
        let ones = WeightVector::all_ones(grid.p);
        let (risk, se) = empirical_risk(&ctx, &EstimatorSpec::FixedRaw(ones), 2, Some(1)).unwrap();
        assert_eq!(se, 0.0); // deterministic without noise
        let level = (PHI_STAR * ctx.signal.lipschitz / grid.p as f64).powi(2);
        assert!(risk <= level, "risk {risk} vs bias level {level}");
    }

    #[test]
    fn risks_reproducible_and_worker_invariant() {
        let ctx = desk_ctx(20, 101, 11);
        let spec = EstimatorSpec::SelectedShrunk;
        let (r1, s1) = empirical_risk(&ctx, &spec, 6, Some(1)).unwrap();
        let (r2, s2) = empirical_risk(&ctx, &spec, 6, Some(4)).unwrap();
        let (r3, _) = empirical_risk(&ctx, &spec, 6, None).unwrap();
        assert_eq!(r1.to_bits(), r2.to_bits());
        assert_eq!(s1.to_bits(), s2.to_bits());
        assert_eq!(r1.to_bits(), r3.to_bits());
    }

    #[test]
    fn improvement_zero_when_gate_closed() {
        // d below the gate: c_n = 0, so delta is exactly zero
        let rep = improvement_experiment(
            &signal_s1(),
            20,
            101,
            10,
            &NoiseModel::standard_sim(),
            4,
            9,
            crate::analytics::default_r_n(20),
            Some(1),
        )
        .unwrap();
        assert_eq!(rep.c_n, 0.0);
        assert_eq!(rep.delta_hat, 0.0);
        assert_eq!(rep.bound, 0.0);
    }

    // Active shrinkage at d = 70 >= d0 = 58: the improvement is negative and
    // beats the theoretical bound. Small-rep smoke version of the full check.
    #[test]
    fn improvement_negative_with_active_shrinkage() {
        let signal = signal_s1();
        let noise = NoiseModel::standard_sim();
        let n = 100usize;
        let d = 70usize;
        let r_n = crate::analytics::default_r_n(n);
        let consts = h2_constants(d, n, &noise, r_n).unwrap();
        assert!(consts.c_n > 0.0);
        let p0 = p_zero(&consts, signal.lipschitz).unwrap();
        let mut p_req = (1.1 * p0).ceil() as usize;
        if p_req % 2 == 0 {
            p_req += 1;
        }
        let rep = improvement_experiment(&signal, n, p_req, d, &noise, 60, 13, r_n, None).unwrap();
        assert!(rep.bound < 0.0, "bound {}", rep.bound);
        assert!(rep.delta_hat < 0.0, "delta {}", rep.delta_hat);
        assert!(rep.delta_hat <= rep.bound + 3.0 * rep.stderr);
    }

    #[test]
    fn table2_ratio_one_when_shrinkage_inactive() {
        // at desk scale every member has d(gamma) <= 2 < d0, so S* == Shat
        let config = TableConfig {
            signals: vec!["s1".into()],
            n_list: vec![20],
            p: 101,
            n_rep: 4,
            master_seed: 21,
            noise: NoiseModel::standard_sim(),
            family_mode: FamilyMode::Simulation,
            overrides: FamilyOverrides::default(),
        };
        let report = table_experiment(&config, TableMode::Table2, Some(1)).unwrap();
        assert_eq!(report.ratios.len(), 1);
        let ratio = &report.ratios[0];
        assert!((ratio.ratio - 1.0).abs() < 1e-12);
        assert!(ratio.diff_mean.abs() < 1e-15);
    }

    #[test]
    fn table_report_csv_has_rows() {
        let config = TableConfig {
            signals: vec!["s1".into()],
            n_list: vec![20],
            p: 101,
            n_rep: 3,
            master_seed: 2,
            noise: NoiseModel::standard_sim(),
            family_mode: FamilyMode::Simulation,
            overrides: FamilyOverrides::default(),
        };
        let report = table_experiment(&config, TableMode::Table1, Some(1)).unwrap();
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 3); // header + 2 estimator rows
        assert!(text.starts_with("signal,n,estimator,risk,stderr,ratio\n"));
    }

    #[test]
    fn oracle_singleton_family_ratio_one() {
        let grid = make_grid(20, 101).unwrap();
        let noise = NoiseModel::standard_sim();
        let mut family =
            build_family(20, grid.p, noise.varsigma_star, FamilyMode::Simulation, FamilyOverrides::default())
                .unwrap();
        // keep one nontrivial member
        let keep = family.members.iter().position(|m| m.support_len() > 0).unwrap();
        family.members = vec![family.members[keep].clone()];
        let ctx = ExperimentContext::new(signal_s1(), noise, grid, family, default_rho(20), 31).unwrap();
        let rows = paired_risks(
            &ctx,
            &[
                EstimatorSpec::SelectedShrunk,
                EstimatorSpec::FixedShrunk(ctx.family.members[0].clone()),
            ],
            4,
            Some(1),
        )
        .unwrap();
        for r in rows {
            assert!((r[0] - r[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn oracle_bound_factor_value() {
        // rho = 0.1 -> (1+5 rho)/(1-rho) = 1.6667
        let f: f64 = (1.0 + 5.0 * 0.1) / (1.0 - 0.1);
        assert!((f - 1.6667).abs() < 1e-4);
    }

    #[test]
    fn condition_audit_fields() {
        let noise = NoiseModel::standard_sim();
        let audit =
            condition_audit(1000, 10001, &noise, FamilyMode::Simulation, FamilyOverrides::default()).unwrap();
        assert!((audit.kappa_star - 1.0).abs() < 1e-15);
        assert!((audit.p_vs_n56 - 31.6).abs() < 0.1);
        assert!(audit.condition_d_satisfied);
        assert_eq!(audit.d0, 58);
        // desk scale: no member clears the gate, so c*_n = 0
        assert_eq!(audit.members_with_active_shrinkage, 0);
        assert_eq!(audit.c_star_n, 0.0);
    }

    #[test]
    fn sigma_consistency_smoke() {
        let out = sigma_consistency(
            &signal_zero(),
            &NoiseModel::standard_sim(),
            &[25, 100],
            40,
            17,
            None,
        )
        .unwrap();
        assert_eq!(out.len(), 2);
        assert!(out[1].1 < out[0].1, "errors {:?}", out);
    }

    #[test]
    fn figure_csv_shape() {
        let ctx = desk_ctx(20, 101, 23);
        let mut buf = Vec::new();
        figure_csv(&ctx, 0, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 101);
        assert!(text.starts_with("t,s,shat,sstar\n"));
    }
}
