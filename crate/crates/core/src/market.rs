//! Monte Carlo asset path generation: geometric Brownian motion and a
//! lognormal stochastic-volatility model (vol-of-vol `nu`, price/vol
//! correlation `rho`, unit beta) with correlated Brownian increments.
//!
//! Path `i` of a batch draws from substream `i` of the batch seed, so the
//! same `(params, grid, seed)` always produces the same path matrix and
//! growing `n_paths` appends paths without disturbing existing ones.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{standard_normal, substream};
use crate::{Error, Result};

/// Positivity floor applied in-step by the explicit Euler scheme of the
/// stochastic-volatility simulator; guards against sign flips in extreme
/// vol-of-vol regimes.
pub const EULER_FLOOR: f64 = 1e-8;

/// Uniform time discretization of `[0, maturity]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    maturity: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(maturity: f64, n_steps: usize) -> Result<Self> {
        if !(maturity > 0.0) || !maturity.is_finite() {
            return Err(Error::param(format!(
                "maturity must be positive, got {maturity}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::param("time grid needs at least one step"));
        }
        Ok(TimeGrid { maturity, n_steps })
    }

    pub fn maturity(&self) -> f64 {
        self.maturity
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.maturity / self.n_steps as f64
    }

    /// Time of grid point `i`; exactly `maturity` at `i == n_steps`.
    pub fn time_at(&self, i: usize) -> f64 {
        (i as f64 / self.n_steps as f64) * self.maturity
    }
}

/// Geometric Brownian motion parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub s0: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl GbmParams {
    pub fn new(s0: f64, mu: f64, sigma: f64) -> Result<Self> {
        if !(s0 > 0.0) || !s0.is_finite() {
            return Err(Error::param(format!("s0 must be positive, got {s0}")));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::param(format!(
                "sigma must be non-negative, got {sigma}"
            )));
        }
        if !mu.is_finite() {
            return Err(Error::param("mu must be finite"));
        }
        Ok(GbmParams { s0, mu, sigma })
    }
}

/// Stochastic-volatility model parameters: lognormal vol-of-vol `nu`,
/// price/vol correlation `rho`, drift `mu` on the asset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvParams {
    pub s0: f64,
    pub mu: f64,
    pub sigma0: f64,
    pub nu: f64,
    pub rho: f64,
}

impl SvParams {
    pub fn new(s0: f64, mu: f64, sigma0: f64, nu: f64, rho: f64) -> Result<Self> {
        if !(s0 > 0.0) || !s0.is_finite() {
            return Err(Error::param(format!("s0 must be positive, got {s0}")));
        }
        if !(sigma0 > 0.0) || !sigma0.is_finite() {
            return Err(Error::param(format!(
                "sigma0 must be positive, got {sigma0}"
            )));
        }
        if !(nu >= 0.0) || !nu.is_finite() {
            return Err(Error::param(format!("nu must be non-negative, got {nu}")));
        }
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::param(format!("rho must lie in [-1, 1], got {rho}")));
        }
        if !mu.is_finite() {
            return Err(Error::param("mu must be finite"));
        }
        Ok(SvParams { s0, mu, sigma0, nu, rho })
    }

    /// Same model with the asset drift replaced (used for risk-neutral
    /// pricing simulations).
    pub fn with_drift(&self, mu: f64) -> SvParams {
        SvParams { mu, ..*self }
    }
}

/// A batch of simulated trajectories on a shared time grid. Prices (and
/// vols, when produced by the stochastic-volatility model) are stored
/// row-major, one row of `n_steps + 1` values per path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    grid: TimeGrid,
    n_paths: usize,
    prices: Vec<f64>,
    vols: Option<Vec<f64>>,
    seed: u64,
}

impl PathSet {
    /// Assemble a path set from raw matrices. Only shapes are validated;
    /// the simulators are responsible for the positivity invariant, and
    /// [`floor_paths`] exists to restore it on externally built sets.
    pub fn from_parts(
        grid: TimeGrid,
        n_paths: usize,
        prices: Vec<f64>,
        vols: Option<Vec<f64>>,
        seed: u64,
    ) -> Result<Self> {
        let row = grid.n_steps() + 1;
        if prices.len() != n_paths * row {
            return Err(Error::param(format!(
                "price matrix has {} entries, expected {}",
                prices.len(),
                n_paths * row
            )));
        }
        if let Some(v) = &vols {
            if v.len() != n_paths * row {
                return Err(Error::param(format!(
                    "vol matrix has {} entries, expected {}",
                    v.len(),
                    n_paths * row
                )));
            }
        }
        Ok(PathSet { grid, n_paths, prices, vols, seed })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn has_vols(&self) -> bool {
        self.vols.is_some()
    }

    /// Price row of path `i` (length `n_steps + 1`).
    pub fn path(&self, i: usize) -> &[f64] {
        let row = self.grid.n_steps() + 1;
        &self.prices[i * row..(i + 1) * row]
    }

    /// Volatility row of path `i`, if this set carries vols.
    pub fn vol_path(&self, i: usize) -> Option<&[f64]> {
        let row = self.grid.n_steps() + 1;
        self.vols.as_ref().map(|v| &v[i * row..(i + 1) * row])
    }

    pub fn price(&self, path: usize, step: usize) -> f64 {
        self.prices[path * (self.grid.n_steps() + 1) + step]
    }

    /// Terminal prices across all paths.
    pub fn terminal_prices(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_paths).map(move |i| self.price(i, self.grid.n_steps()))
    }

    pub fn raw_prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn raw_vols(&self) -> Option<&[f64]> {
        self.vols.as_deref()
    }
}

/// Fill one GBM path into `out` (length `n_steps + 1`), consuming one
/// normal per step from `rng`.
pub(crate) fn fill_gbm_path(
    params: &GbmParams,
    grid: &TimeGrid,
    rng: &mut impl rand::RngCore,
    out: &mut [f64],
) {
    let dt = grid.dt();
    let drift = (params.mu - 0.5 * params.sigma * params.sigma) * dt;
    let vol_step = params.sigma * dt.sqrt();
    out[0] = params.s0;
    let mut s = params.s0;
    for slot in out.iter_mut().skip(1) {
        let z = standard_normal(rng);
        s *= (drift + vol_step * z).exp();
        *slot = s;
    }
}

/// Fill one stochastic-volatility path, consuming two normals per step.
/// Explicit Euler with the in-step positivity floor [`EULER_FLOOR`].
pub(crate) fn fill_sv_path(
    params: &SvParams,
    grid: &TimeGrid,
    rng: &mut impl rand::RngCore,
    prices: &mut [f64],
    vols: &mut [f64],
) {
    let dt = grid.dt();
    let sq_dt = dt.sqrt();
    let orth = (1.0 - params.rho * params.rho).sqrt();
    prices[0] = params.s0;
    vols[0] = params.sigma0;
    let mut s = params.s0;
    let mut v = params.sigma0;
    for i in 1..prices.len() {
        let z1 = standard_normal(rng);
        let z2 = standard_normal(rng);
        let dw = sq_dt * z1;
        let db = sq_dt * (params.rho * z1 + orth * z2);
        v = (v * (1.0 + params.nu * db)).max(EULER_FLOOR);
        s = (s * (1.0 + params.mu * dt + v * dw)).max(EULER_FLOOR);
        prices[i] = s;
        vols[i] = v;
    }
}

/// Simulate `n_paths` GBM trajectories. Deterministic in
/// `(params, grid, n_paths, seed)`.
pub fn simulate_gbm(
    params: &GbmParams,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathSet> {
    if n_paths == 0 {
        return Err(Error::param("n_paths must be at least 1"));
    }
    let row = grid.n_steps() + 1;
    let mut prices = vec![0.0; n_paths * row];
    prices
        .par_chunks_mut(row)
        .enumerate()
        .for_each(|(i, chunk)| {
            let mut rng = substream(seed, i as u64);
            fill_gbm_path(params, grid, &mut rng, chunk);
        });
    PathSet::from_parts(*grid, n_paths, prices, None, seed)
}

/// Simulate `n_paths` stochastic-volatility trajectories (prices and vols).
pub fn simulate_sv(
    params: &SvParams,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathSet> {
    if n_paths == 0 {
        return Err(Error::param("n_paths must be at least 1"));
    }
    let row = grid.n_steps() + 1;
    let mut prices = vec![0.0; n_paths * row];
    let mut vols = vec![0.0; n_paths * row];
    prices
        .par_chunks_mut(row)
        .zip(vols.par_chunks_mut(row))
        .enumerate()
        .for_each(|(i, (p, v))| {
            let mut rng = substream(seed, i as u64);
            fill_sv_path(params, grid, &mut rng, p, v);
        });
    PathSet::from_parts(*grid, n_paths, prices, Some(vols), seed)
}

/// Clamp all prices and vols below `eps` up to `eps`. Returns the floored
/// set and the number of entries that were raised.
pub fn floor_paths(paths: &PathSet, eps: f64) -> Result<(PathSet, usize)> {
    if !(eps > 0.0) {
        return Err(Error::param(format!("eps must be positive, got {eps}")));
    }
    let mut out = paths.clone();
    let mut clamped = 0usize;
    for x in out.prices.iter_mut() {
        if *x < eps {
            *x = eps;
            clamped += 1;
        }
    }
    if let Some(v) = out.vols.as_mut() {
        for x in v.iter_mut() {
            if *x < eps {
                *x = eps;
                clamped += 1;
            }
        }
    }
    Ok((out, clamped))
}
