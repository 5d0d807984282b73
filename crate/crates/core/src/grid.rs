//! Observation grid: n periods observed at p points per period, t_l = l/p.
//!
//! The trigonometric basis is orthonormal on the one-period grid only for
//! odd p, so an even requested p is reduced to p - 1 at construction. The
//! raw requested value is retained for reporting.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// The observation lattice t_l = l/p, l = 0..N with N = n*p.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Number of observation periods.
    pub n: usize,
    /// Effective observations per period (always odd).
    pub p: usize,
    /// The requested p before odd-normalization.
    pub p_requested: usize,
    /// Total number of increments, N = n*p.
    pub len: usize,
}

impl GridSpec {
    /// Time of the l-th lattice point, l in 0..=N.
    ///
    /// Computed as a fresh division per index; no running sum, so there is
    /// no drift over N ~ 1e7 points.
    #[inline]
    pub fn time(&self, l: usize) -> f64 {
        l as f64 / self.p as f64
    }

    /// Cell width 1/p.
    #[inline]
    pub fn dt(&self) -> f64 {
        1.0 / self.p as f64
    }

    /// One-period time of the l-th point folded into [0, 1): ((l-1) mod p + 1)/p.
    #[inline]
    pub fn period_time(&self, l: usize) -> f64 {
        (((l - 1) % self.p) + 1) as f64 / self.p as f64
    }
}

/// Build the observation grid; even p_requested is reduced to p_requested - 1.
pub fn make_grid(n: usize, p_requested: usize) -> Result<GridSpec> {
    if n < 1 {
        return Err(CoreError::invalid(format!("n must be >= 1, got {n}")));
    }
    if p_requested < 2 {
        return Err(CoreError::invalid(format!(
            "p_requested must be >= 2, got {p_requested}"
        )));
    }
    let p = if p_requested % 2 == 0 {
        log::warn!("even p={p_requested} reduced to {}", p_requested - 1);
        p_requested - 1
    } else {
        p_requested
    };
    Ok(GridSpec {
        n,
        p,
        p_requested,
        len: n * p,
    })
}
