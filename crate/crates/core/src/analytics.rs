//! Closed-form covariance identities for the OU-Levy noise and the
//! constants entering the shrinkage threshold.
//!
//! For piecewise-constant f, g on the grid the kernel integrals
//!
//!   eps_check_t(f) = a int_0^t e^{a(t-s)} f(s) (1 + e^{2as})/2 ds
//!   tau_t(f,g)     = int_0^t ( f g + eps_check(f) g + f eps_check(g) ) ds
//!
//! are computed cell by cell from exact exponential antiderivatives, giving
//! machine-precision references; quadrature appears only in test oracles.
//! E I_t(f) I_t(g) = sigma_q tau_t(f,g), and the Gaussian Gram matrix G1 has
//! entries tau_n(psi_i, psi_j)/n.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::GridSpec;
use crate::noise::NoiseModel;
use crate::trig::{GridBasisTable, PHI_STAR};

/// (e^{a x} - 1)/a with the a -> 0 limit x.
#[inline]
fn em1_over(a: f64, x: f64) -> f64 {
    if a == 0.0 {
        x
    } else {
        (a * x).exp_m1() / a
    }
}

fn check_cell_values(f: &[f64], grid: &GridSpec) -> Result<()> {
    if f.len() != grid.len {
        return Err(CoreError::LengthMismatch { expected: grid.len, got: f.len() });
    }
    Ok(())
}

fn check_args(a: f64, t: f64, grid: &GridSpec) -> Result<()> {
    if a > 0.0 {
        return Err(CoreError::invalid(format!("a must be <= 0, got {a}")));
    }
    if !(0.0..=grid.n as f64 + 1e-12).contains(&t) {
        return Err(CoreError::invalid(format!("t must lie in [0, {}], got {t}", grid.n)));
    }
    Ok(())
}

/// Advance the boundary value of eps_check over one full cell with value fk.
#[inline]
fn eps_step(e_prev: f64, fk: f64, a: f64, dt: f64, t_prev: f64) -> f64 {
    let grow = (a * dt).exp();
    grow * e_prev
        + 0.5 * fk * (a * em1_over(a, dt) + (2.0 * a * (t_prev + dt)).exp() - (a * (t_prev + dt + t_prev)).exp())
}

/// Integral of eps_check(f) over (t_prev, t_prev + delta) inside a cell with
/// value fk, given the boundary value e_prev at t_prev.
#[inline]
fn eps_cell_integral(e_prev: f64, fk: f64, a: f64, delta: f64, t_prev: f64) -> f64 {
    let e1 = em1_over(a, delta);
    let t1 = e_prev * e1;
    let t2 = 0.5 * fk * (e1 - delta);
    let w = (2.0 * a * t_prev).exp();
    let t3 = 0.5 * fk * w * em1_over(2.0 * a, delta);
    let t4 = -0.5 * fk * w * e1;
    t1 + t2 + t3 + t4
}

/// eps_check_t(f) for a piecewise-constant f given by its N cell values.
pub fn eps_check(f: &[f64], grid: &GridSpec, a: f64, t: f64) -> Result<f64> {
    check_cell_values(f, grid)?;
    check_args(a, t, grid)?;
    if a == 0.0 || t == 0.0 {
        return Ok(0.0);
    }
    let dt = grid.dt();
    let k = ((t * grid.p as f64).ceil() as usize).clamp(1, grid.len);
    let mut e = 0.0f64;
    for (idx, fk) in f.iter().enumerate().take(k - 1) {
        e = eps_step(e, *fk, a, dt, grid.time(idx));
    }
    // partial final cell
    let t_prev = grid.time(k - 1);
    let delta = t - t_prev;
    let grow = (a * delta).exp();
    Ok(grow * e
        + 0.5 * f[k - 1] * (a * em1_over(a, delta) + (2.0 * a * t).exp() - (a * (t + t_prev)).exp()))
}

/// tau_t(f, g) for piecewise-constant f, g; E I_t(f) I_t(g) = sigma_q tau_t(f,g).
pub fn tau(f: &[f64], g: &[f64], grid: &GridSpec, a: f64, t: f64) -> Result<f64> {
    check_cell_values(f, grid)?;
    check_cell_values(g, grid)?;
    check_args(a, t, grid)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    let dt = grid.dt();
    let k = ((t * grid.p as f64).ceil() as usize).clamp(1, grid.len);
    let mut ef = 0.0f64;
    let mut eg = 0.0f64;
    let mut acc = 0.0f64;
    for idx in 0..k - 1 {
        let t_prev = grid.time(idx);
        acc += f[idx] * g[idx] * dt;
        if a != 0.0 {
            acc += g[idx] * eps_cell_integral(ef, f[idx], a, dt, t_prev);
            acc += f[idx] * eps_cell_integral(eg, g[idx], a, dt, t_prev);
            ef = eps_step(ef, f[idx], a, dt, t_prev);
            eg = eps_step(eg, g[idx], a, dt, t_prev);
        }
    }
    let t_prev = grid.time(k - 1);
    let delta = t - t_prev;
    acc += f[k - 1] * g[k - 1] * delta;
    if a != 0.0 {
        acc += g[k - 1] * eps_cell_integral(ef, f[k - 1], a, delta, t_prev);
        acc += f[k - 1] * eps_cell_integral(eg, g[k - 1], a, delta, t_prev);
    }
    Ok(acc)
}

/// Gaussian Gram matrix: G1[i][j] = tau_n(psi_i, psi_j)/n (unit diffusion).
pub fn gram_gaussian(d: usize, grid: &GridSpec, a: f64) -> Result<DMatrix<f64>> {
    if d < 1 || d > grid.p {
        return Err(CoreError::invalid(format!("need 1 <= d <= p = {}, got {d}", grid.p)));
    }
    if a > 0.0 {
        return Err(CoreError::invalid("a must be <= 0"));
    }
    let table = GridBasisTable::new(grid.p)?;
    let nn = grid.len;
    let dt = grid.dt();
    // cell values and per-cell integrals of eps_check(psi_j)
    let mut values = vec![vec![0.0f64; nn]; d];
    let mut cell_int = vec![vec![0.0f64; nn]; d];
    for j in 1..=d {
        let vals = &mut values[j - 1];
        for (idx, v) in vals.iter_mut().enumerate() {
            *v = table.value(j, idx + 1);
        }
        if a != 0.0 {
            let mut e = 0.0f64;
            for idx in 0..nn {
                let t_prev = grid.time(idx);
                cell_int[j - 1][idx] = eps_cell_integral(e, vals[idx], a, dt, t_prev);
                e = eps_step(e, vals[idx], a, dt, t_prev);
            }
        }
    }
    let nf = grid.n as f64;
    let mut m = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let mut acc = 0.0;
            for idx in 0..nn {
                acc += values[i][idx] * values[j][idx] * dt
                    + values[j][idx] * cell_int[i][idx]
                    + values[i][idx] * cell_int[j][idx];
            }
            m[(i, j)] = acc / nf;
            m[(j, i)] = m[(i, j)];
        }
    }
    Ok(m)
}

/// Trace/extreme-eigenvalue summary of a Gram matrix.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GramMetrics {
    pub d: usize,
    pub trace: f64,
    pub lambda_max: f64,
    pub lambda_min: f64,
}

pub fn gram_metrics(d: usize, grid: &GridSpec, a: f64) -> Result<GramMetrics> {
    let m = gram_gaussian(d, grid, a)?;
    let trace = m.trace();
    let eig = m.symmetric_eigenvalues();
    let lambda_max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lambda_min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(GramMetrics { d, trace, lambda_max, lambda_min })
}

/// Constants of the shrinkage threshold for a given block dimension d.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct H2Constants {
    pub d: usize,
    /// Smallest d >= 7 with 5 + ln d <= a_check * d.
    pub d0: usize,
    /// a_check = (1 - e^{-a_max})/(4 a_max).
    pub a_check: f64,
    /// rho_lower (d-6)/2 when the d >= max(7, d0) gate is open, else 0.
    pub l_star: f64,
    /// kappa_star = 2 varsigma_star.
    pub kappa_star: f64,
    pub r_n: f64,
    /// Shrinkage threshold c_n = l_star / (n (r_n + sqrt(d kappa_star / n))).
    pub c_n: f64,
}

/// a_check with the a_max -> 0 limit 1/4.
fn a_check_of(a_max: f64) -> f64 {
    if a_max < 1e-8 {
        0.25 * (1.0 - a_max / 2.0)
    } else {
        (-(-a_max).exp_m1()) / (4.0 * a_max)
    }
}

/// Smallest d >= 7 satisfying 5 + ln d <= a_check * d.
pub fn d_zero(a_max: f64) -> Result<usize> {
    if a_max <= 0.0 {
        return Err(CoreError::invalid("a_max must be positive"));
    }
    let ac = a_check_of(a_max);
    let mut d = 7usize;
    loop {
        if 5.0 + (d as f64).ln() <= ac * d as f64 {
            return Ok(d);
        }
        d += 1;
        if d > 100_000_000 {
            return Err(CoreError::Undefined(format!("d0 exceeds 1e8 for a_max={a_max}")));
        }
    }
}

/// Populate the threshold constants; shrinkage is disabled (l_star = 0,
/// hence c_n = 0) when d < max(7, d0).
pub fn h2_constants(d: usize, n: usize, model: &NoiseModel, r_n: f64) -> Result<H2Constants> {
    if d < 1 || n < 1 {
        return Err(CoreError::invalid("need d >= 1 and n >= 1"));
    }
    if r_n <= 0.0 {
        return Err(CoreError::invalid("r_n must be positive"));
    }
    let d0 = d_zero(model.a_max)?;
    let a_check = a_check_of(model.a_max);
    let kappa_star = 2.0 * model.varsigma_star;
    let l_star = if d >= 7.max(d0) {
        model.rho_lower * (d as f64 - 6.0) / 2.0
    } else {
        0.0
    };
    let nf = n as f64;
    let c_n = if l_star > 0.0 {
        l_star / (nf * (r_n + (d as f64 * kappa_star / nf).sqrt()))
    } else {
        0.0
    };
    Ok(H2Constants { d, d0, a_check, l_star, kappa_star, r_n, c_n })
}

/// Default norm-bound parameter r_n = sqrt(ln(n+1)); subpolynomial in n and
/// keeps c_n > 0.
pub fn default_r_n(n: usize) -> f64 {
    ((n as f64) + 1.0).ln().sqrt()
}

/// Critical frequency p0 = 2 sqrt(d) phi_star L / c_n; undefined at c_n = 0.
pub fn p_zero(consts: &H2Constants, lipschitz: f64) -> Result<f64> {
    if consts.c_n <= 0.0 {
        return Err(CoreError::Undefined("p0 requires c_n > 0".into()));
    }
    Ok(2.0 * (consts.d as f64).sqrt() * PHI_STAR * lipschitz / consts.c_n)
}

/// Pinsker constant l_k(r) = ((2k+1) r)^{1/(2k+1)} (k/(pi (k+1)))^{2k/(2k+1)}.
pub fn pinsker_constant(k: usize, r: f64) -> Result<f64> {
    if k < 1 || r <= 0.0 {
        return Err(CoreError::invalid("need k >= 1 and r > 0"));
    }
    let kf = k as f64;
    let e = 1.0 / (2.0 * kf + 1.0);
    Ok(((2.0 * kf + 1.0) * r).powf(e) * (kf / (std::f64::consts::PI * (kf + 1.0))).powf(2.0 * kf * e))
}

/// Exact value of sum_{j<=p} |E xi_j^2 - sigma_q| for the model, via tau.
pub fn c1_deviation_exact(grid: &GridSpec, model: &NoiseModel) -> Result<f64> {
    let table = GridBasisTable::new(grid.p)?;
    let nf = grid.n as f64;
    let sigma = model.sigma_q();
    let mut acc = 0.0;
    let mut cells = vec![0.0f64; grid.len];
    for j in 1..=grid.p {
        for (idx, c) in cells.iter_mut().enumerate() {
            *c = table.value(j, idx + 1);
        }
        let t = tau(&cells, &cells, grid, model.a, grid.n as f64)?;
        acc += (sigma * t / nf - sigma).abs();
    }
    Ok(acc)
}
