//! Trigonometric basis Trg_j, its grid inner products, the piecewise-constant
//! embedding psi_j, and the Dirichlet-kernel excess bound.
//!
//! Trg_1 = 1, Trg_j = sqrt(2)*cos(2*pi*[j/2]*t) for even j and
//! sqrt(2)*sin(2*pi*[j/2]*t) for odd j >= 3. On the one-period grid
//! {l/p : l = 1..p} with odd p the family (Trg_j)_{j<=p} is orthonormal for
//! the inner product (f,g)_p = (1/p) sum_l f(t_l) g(t_l).

use crate::error::{CoreError, Result};
use crate::grid::GridSpec;

pub const PHI_STAR: f64 = std::f64::consts::SQRT_2;
const TAU: f64 = 2.0 * std::f64::consts::PI;

/// Basis on the one-period grid of an odd size p.
#[derive(Debug, Clone, Copy)]
pub struct BasisSpec {
    pub p: usize,
    /// Uniform bound on |Trg_j|: sqrt(2).
    pub phi_star: f64,
}

impl BasisSpec {
    pub fn new(p: usize) -> Result<Self> {
        if p < 3 || p % 2 == 0 {
            return Err(CoreError::invalid(format!("basis size must be odd >= 3, got {p}")));
        }
        Ok(BasisSpec { p, phi_star: PHI_STAR })
    }
}

/// Evaluate Trg_j at t. Rejects j = 0.
pub fn trig_value(j: usize, t: f64) -> Result<f64> {
    if j == 0 {
        return Err(CoreError::invalid("basis index j must be >= 1"));
    }
    if j == 1 {
        return Ok(1.0);
    }
    let freq = (j / 2) as f64;
    let arg = TAU * freq * t;
    Ok(if j % 2 == 0 {
        PHI_STAR * arg.cos()
    } else {
        PHI_STAR * arg.sin()
    })
}

/// Grid inner product (Trg_i, Trg_j)_p = (1/p) sum_{l=1}^p Trg_i(t_l) Trg_j(t_l).
pub fn grid_inner_product(i: usize, j: usize, grid: &GridSpec) -> Result<f64> {
    let p = grid.p;
    if i < 1 || i > p || j < 1 || j > p {
        return Err(CoreError::invalid(format!(
            "indices must lie in 1..={p}, got ({i},{j})"
        )));
    }
    let mut acc = 0.0;
    for l in 1..=p {
        let t = l as f64 / p as f64;
        acc += trig_value(i, t)? * trig_value(j, t)?;
    }
    Ok(acc / p as f64)
}

/// psi_j(t): the step function taking the value Trg_j(t_k) on each grid cell
/// (t_{k-1}, t_k]. Defined for 0 < t <= n.
pub fn psi_eval(j: usize, t: f64, grid: &GridSpec) -> Result<f64> {
    if j < 1 || j > grid.p {
        return Err(CoreError::invalid(format!(
            "psi index must lie in 1..={}, got {j}",
            grid.p
        )));
    }
    if !(t > 0.0 && t <= grid.n as f64) {
        return Err(CoreError::invalid(format!(
            "psi argument must lie in (0, {}], got {t}",
            grid.n
        )));
    }
    // Cell lookup by index arithmetic; the boundary t = t_k belongs to cell k.
    let k = (t * grid.p as f64).ceil() as usize;
    let k = k.clamp(1, grid.len);
    trig_value(j, grid.period_time(k))
}

/// Numeric excess of the Dirichlet-type bound:
/// int_0^1 max_t |Phi_d(t,v)| dv - ln d with
/// Phi_d(t,v) = sum_{j=1}^d Trg_j(t) Trg_j(t-v), max over a t-grid of
/// `t_res` points and rectangle-rule integral over a v-grid of `v_res` points.
pub fn dirichlet_excess(d: usize, t_res: usize, v_res: usize) -> Result<f64> {
    validate_dirichlet(d, t_res, v_res)?;
    let mut integral = 0.0;
    for k in 0..v_res {
        let v = k as f64 / v_res as f64;
        let mut max_abs = 0.0f64;
        for i in 0..t_res {
            let t = i as f64 / t_res as f64;
            let mut phi = 0.0;
            for j in 1..=d {
                phi += trig_value(j, t).unwrap() * trig_value(j, t - v).unwrap();
            }
            max_abs = max_abs.max(phi.abs());
        }
        integral += max_abs;
    }
    Ok(integral / v_res as f64 - (d as f64).ln())
}

/// Excess for every d in 1..=d_max in one sweep over a shared t/v lattice.
///
/// Requires t_res == v_res so that t - v falls back onto the lattice; the
/// kernel layers are accumulated incrementally in d, which turns the naive
/// O(d_max^2 res^2) cost into O(d_max res^2).
pub fn dirichlet_excess_all(d_max: usize, res: usize) -> Result<Vec<f64>> {
    validate_dirichlet(d_max, res, res)?;
    use rayon::prelude::*;

    // basis matrix on the lattice: m[j-1][i] = Trg_j(i/res)
    let basis: Vec<Vec<f64>> = (1..=d_max)
        .map(|j| {
            (0..res)
                .map(|i| trig_value(j, i as f64 / res as f64).unwrap())
                .collect()
        })
        .collect();

    let chunk = 64usize;
    let starts: Vec<usize> = (0..res).step_by(chunk).collect();
    let partials: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|&k0| {
            let mut sums = vec![0.0f64; d_max];
            let mut phi = vec![0.0f64; res];
            for k in k0..(k0 + chunk).min(res) {
                phi.iter_mut().for_each(|x| *x = 0.0);
                for (jm1, row) in basis.iter().enumerate() {
                    let mut max_abs = 0.0f64;
                    for i in 0..res {
                        let shifted = row[(i + res - k) % res];
                        phi[i] += row[i] * shifted;
                        max_abs = max_abs.max(phi[i].abs());
                    }
                    sums[jm1] += max_abs;
                }
            }
            sums
        })
        .collect();

    let mut sums = vec![0.0f64; d_max];
    for part in &partials {
        for (acc, x) in sums.iter_mut().zip(part) {
            *acc += x;
        }
    }
    Ok(sums
        .iter()
        .enumerate()
        .map(|(jm1, s)| s / res as f64 - ((jm1 + 1) as f64).ln())
        .collect())
}

fn validate_dirichlet(d: usize, t_res: usize, v_res: usize) -> Result<()> {
    if d < 1 {
        return Err(CoreError::invalid("d must be >= 1"));
    }
    if t_res < 512 || v_res < 512 {
        return Err(CoreError::invalid("quadrature resolutions must be >= 512"));
    }
    Ok(())
}

/// Exact-on-the-lattice evaluation of the basis at the one-period grid
/// points, via tables of cos/sin(2*pi*m/p). Trg_j(t_l) only depends on
/// (freq*l) mod p, so a length-p table serves every (j, l) pair.
#[derive(Debug, Clone)]
pub struct GridBasisTable {
    pub p: usize,
    cos_tab: Vec<f64>,
    sin_tab: Vec<f64>,
}

impl GridBasisTable {
    pub fn new(p: usize) -> Result<Self> {
        BasisSpec::new(p)?;
        let mut cos_tab = Vec::with_capacity(p);
        let mut sin_tab = Vec::with_capacity(p);
        for m in 0..p {
            let (s, c) = (TAU * m as f64 / p as f64).sin_cos();
            cos_tab.push(c);
            sin_tab.push(s);
        }
        Ok(GridBasisTable { p, cos_tab, sin_tab })
    }

    /// Trg_j at the grid point t_l (any l >= 0, periodic fold built in).
    #[inline]
    pub fn value(&self, j: usize, l: usize) -> f64 {
        if j == 1 {
            return 1.0;
        }
        let idx = ((j / 2) * (l % self.p)) % self.p;
        if j % 2 == 0 {
            PHI_STAR * self.cos_tab[idx]
        } else {
            PHI_STAR * self.sin_tab[idx]
        }
    }

    /// Compute (1/divisor) * sum_{k=1}^p Trg_j(t_k) * c[k-1] for j = 1..=j_max.
    ///
    /// With c holding per-cell sums of increments folded over periods and
    /// divisor = n this is exactly the coefficient estimator; with
    /// c[k-1] = S(t_k)/p and divisor = 1 it is the true grid projection.
    pub fn transform(&self, c: &[f64], divisor: f64, j_max: usize) -> Vec<f64> {
        assert_eq!(c.len(), self.p, "folded vector must have length p");
        let j_max = j_max.min(self.p);
        let mut out = vec![0.0f64; j_max];
        if j_max == 0 {
            return out;
        }
        out[0] = c.iter().sum::<f64>() / divisor;
        let max_freq = j_max / 2;
        for f in 1..=max_freq {
            let mut cos_acc = 0.0;
            let mut sin_acc = 0.0;
            let mut m = 0usize;
            for ck in c.iter() {
                m += f;
                if m >= self.p {
                    m -= self.p;
                }
                cos_acc += self.cos_tab[m] * ck;
                sin_acc += self.sin_tab[m] * ck;
            }
            if 2 * f <= j_max {
                out[2 * f - 1] = PHI_STAR * cos_acc / divisor;
            }
            if 2 * f + 1 <= j_max {
                out[2 * f] = PHI_STAR * sin_acc / divisor;
            }
        }
        out
    }

    /// Values at the p grid points of sum over terms (j, c_j) of c_j Trg_j.
    pub fn eval_series_on_period(&self, terms: &[(usize, f64)]) -> Vec<f64> {
        let mut out = vec![0.0f64; self.p];
        for &(j, cj) in terms {
            if cj == 0.0 {
                continue;
            }
            if j == 1 {
                out.iter_mut().for_each(|x| *x += cj);
                continue;
            }
            let f = j / 2;
            let amp = PHI_STAR * cj;
            let tab = if j % 2 == 0 { &self.cos_tab } else { &self.sin_tab };
            let mut m = 0usize;
            for x in out.iter_mut() {
                m += f;
                if m >= self.p {
                    m -= self.p;
                }
                *x += amp * tab[m];
            }
        }
        out
    }
}
