//! Recombining binomial tree for American puts: backward induction, an
//! indexed early-exercise boundary, and interpolated price / hedge-ratio
//! queries at arbitrary `(s, t)`.
//!
//! The tree is the equal-probability parameterization with risk-neutral
//! drift: up and down factors `exp((r - sigma^2/2) dt +/- sigma sqrt(dt))`
//! and probability 1/2, discounted at `exp(-r dt)`. Node log-prices at a
//! step are equally spaced, which makes interpolation in `(ln s, t)` a
//! regular bilinear lookup.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::market::TimeGrid;
use crate::math::isotonic_non_decreasing;
use crate::{Error, Result};

/// Per-step critical exercise price. `None` at a step means continuation
/// dominated at every node (no early exercise is optimal there).
#[derive(Debug, Clone, PartialEq)]
pub struct ExerciseBoundary {
    times: Vec<f64>,
    levels: Vec<Option<f64>>,
}

impl ExerciseBoundary {
    pub(crate) fn new(times: Vec<f64>, levels: Vec<Option<f64>>) -> Self {
        debug_assert_eq!(times.len(), levels.len());
        ExerciseBoundary { times, levels }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn levels(&self) -> &[Option<f64>] {
        &self.levels
    }

    /// Critical price at time `t`, linearly interpolated between the two
    /// bracketing steps. Returns `None` (no exercise) when either bracket
    /// has no exercise region or `t` is outside the boundary's time range.
    pub fn level_at(&self, t: f64) -> Option<f64> {
        let t_max = *self.times.last()?;
        if t < 0.0 || t > t_max {
            return None;
        }
        if t == t_max || self.times.len() == 1 {
            return *self.levels.last()?;
        }
        let dt = self.times[1] - self.times[0];
        let pos = t / dt;
        let i0 = (pos.floor() as usize).min(self.times.len() - 2);
        let w = (pos - i0 as f64).clamp(0.0, 1.0);
        match (self.levels[i0], self.levels[i0 + 1]) {
            (Some(a), Some(b)) => Some(a + w * (b - a)),
            (Some(a), None) if w == 0.0 => Some(a),
            (None, Some(b)) if w == 1.0 => Some(b),
            _ => None,
        }
    }
}

/// Binomial model of an American put: asset/option trees plus the indexed
/// exercise boundary. Immutable once built; queries are thread-safe.
#[derive(Debug)]
pub struct AmericanPutTree {
    s0: f64,
    k: f64,
    r: f64,
    sigma: f64,
    maturity: f64,
    n_steps: usize,
    dt: f64,
    ln_s0: f64,
    ln_d: f64,
    /// `ln u - ln d = 2 sigma sqrt(dt)`: log-price spacing between
    /// adjacent nodes of a step.
    spacing: f64,
    /// `values[i][j]` = option value at step `i` after `j` up moves.
    values: Vec<Vec<f64>>,
    boundary: ExerciseBoundary,
    clamped_queries: AtomicUsize,
}

/// Build the tree by backward induction. `n_tree_steps` is the number of
/// time steps (Exhibit-scale boundaries use 5000); the grid supplies the
/// maturity.
pub fn build_american_put(
    s0: f64,
    k: f64,
    r: f64,
    sigma: f64,
    grid: &TimeGrid,
    n_tree_steps: usize,
) -> Result<AmericanPutTree> {
    if n_tree_steps == 0 {
        return Err(Error::param("binomial tree needs at least one step"));
    }
    if !(s0 > 0.0) || !(k > 0.0) || !(sigma > 0.0) {
        return Err(Error::param(format!(
            "tree requires s0, k, sigma > 0 (got {s0}, {k}, {sigma})"
        )));
    }
    let maturity = grid.maturity();
    let dt = maturity / n_tree_steps as f64;
    let sq_dt = dt.sqrt();
    let ln_u = (r - 0.5 * sigma * sigma) * dt + sigma * sq_dt;
    let ln_d = (r - 0.5 * sigma * sigma) * dt - sigma * sq_dt;
    let spacing = ln_u - ln_d;
    let ln_s0 = s0.ln();
    let disc = (-r * dt).exp();

    let level = |i: usize, j: usize| -> f64 { (ln_s0 + i as f64 * ln_d + j as f64 * spacing).exp() };

    let mut values: Vec<Vec<f64>> = Vec::with_capacity(n_tree_steps + 1);
    for i in 0..=n_tree_steps {
        values.push(vec![0.0; i + 1]);
    }
    for j in 0..=n_tree_steps {
        values[n_tree_steps][j] = (k - level(n_tree_steps, j)).max(0.0);
    }

    let mut raw_levels: Vec<Option<f64>> = vec![None; n_tree_steps + 1];
    raw_levels[n_tree_steps] = Some(k);

    for i in (0..n_tree_steps).rev() {
        // Deepest run of exercising nodes, counted from the bottom.
        let mut exercise_top: Option<usize> = None;
        let mut contiguous = true;
        for j in 0..=i {
            let s = level(i, j);
            let cont = disc * 0.5 * (values[i + 1][j + 1] + values[i + 1][j]);
            let intr = (k - s).max(0.0);
            let exercised = intr > 0.0 && intr >= cont;
            values[i][j] = intr.max(cont);
            if exercised && contiguous {
                exercise_top = Some(j);
            } else {
                contiguous = false;
            }
        }
        raw_levels[i] = exercise_top.map(|j| {
            let b = if j < i {
                0.5 * (level(i, j) + level(i, j + 1))
            } else {
                level(i, i)
            };
            b.min(k)
        });
    }

    // Repair grid jitter: the true critical price is non-decreasing in t.
    let idx: Vec<usize> = (0..raw_levels.len()).filter(|&i| raw_levels[i].is_some()).collect();
    let mut vals: Vec<f64> = idx.iter().map(|&i| raw_levels[i].unwrap()).collect();
    isotonic_non_decreasing(&mut vals);
    for (&i, &v) in idx.iter().zip(vals.iter()) {
        raw_levels[i] = Some(v);
    }

    let times: Vec<f64> = (0..=n_tree_steps)
        .map(|i| (i as f64 / n_tree_steps as f64) * maturity)
        .collect();
    let boundary = ExerciseBoundary::new(times, raw_levels);

    Ok(AmericanPutTree {
        s0,
        k,
        r,
        sigma,
        maturity,
        n_steps: n_tree_steps,
        dt,
        ln_s0,
        ln_d,
        spacing,
        values,
        boundary,
        clamped_queries: AtomicUsize::new(0),
    })
}

impl AmericanPutTree {
    pub fn strike(&self) -> f64 {
        self.k
    }

    pub fn spot(&self) -> f64 {
        self.s0
    }

    pub fn rate(&self) -> f64 {
        self.r
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn maturity(&self) -> f64 {
        self.maturity
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Option value at the root node `(s0, t = 0)`.
    pub fn price(&self) -> f64 {
        self.values[0][0]
    }

    /// Number of queries so far that fell outside the tree's price range
    /// and were clamped to the edge nodes.
    pub fn clamped_queries(&self) -> usize {
        self.clamped_queries.load(Ordering::Relaxed)
    }

    pub fn boundary(&self) -> &ExerciseBoundary {
        &self.boundary
    }

    fn asset_level(&self, i: usize, j: usize) -> f64 {
        (self.ln_s0 + i as f64 * self.ln_d + j as f64 * self.spacing).exp()
    }

    // Fractional node index of ln(s) within step i, clamped to [0, i].
    fn node_coord(&self, i: usize, ln_s: f64) -> f64 {
        let xi = (ln_s - (self.ln_s0 + i as f64 * self.ln_d)) / self.spacing;
        if xi < 0.0 || xi > i as f64 {
            self.clamped_queries.fetch_add(1, Ordering::Relaxed);
        }
        xi.clamp(0.0, i as f64)
    }

    fn value_in_step(&self, i: usize, ln_s: f64) -> f64 {
        if i == 0 {
            return self.values[0][0];
        }
        let xi = self.node_coord(i, ln_s);
        let j0 = (xi.floor() as usize).min(i - 1);
        let w = xi - j0 as f64;
        (1.0 - w) * self.values[i][j0] + w * self.values[i][j0 + 1]
    }

    // Hedge ratio at node (i, j), from the step-(i+1) children per the
    // one-step replication argument; negative = short the underlying.
    fn node_hedge(&self, i: usize, j: usize) -> f64 {
        let su = self.asset_level(i + 1, j + 1);
        let sd = self.asset_level(i + 1, j);
        (self.values[i + 1][j + 1] - self.values[i + 1][j]) / (su - sd)
    }

    fn hedge_in_step(&self, i: usize, ln_s: f64) -> f64 {
        if i == 0 {
            return self.node_hedge(0, 0);
        }
        let xi = self.node_coord(i, ln_s);
        let j0 = (xi.floor() as usize).min(i - 1);
        let w = xi - j0 as f64;
        (1.0 - w) * self.node_hedge(i, j0) + w * self.node_hedge(i, j0 + 1)
    }

    /// Option price at `(s, t)` by bilinear interpolation in `(ln s, t)`.
    /// Exactly the payoff at `t == maturity`; errors for `t` beyond it.
    pub fn price_at(&self, s: f64, t: f64) -> Result<f64> {
        if t > self.maturity {
            return Err(Error::domain(format!(
                "query time {t} beyond maturity {}",
                self.maturity
            )));
        }
        if !(s > 0.0) {
            return Err(Error::domain(format!("query price must be positive, got {s}")));
        }
        if t == self.maturity {
            return Ok((self.k - s).max(0.0));
        }
        let pos = (t / self.dt).max(0.0);
        let i0 = (pos.floor() as usize).min(self.n_steps - 1);
        let theta = (pos - i0 as f64).clamp(0.0, 1.0);
        let ln_s = s.ln();
        let v0 = self.value_in_step(i0, ln_s);
        let v1 = self.value_in_step(i0 + 1, ln_s);
        Ok((1.0 - theta) * v0 + theta * v1)
    }

    /// Held hedge position at `(s, t)` in [-1, 0] (negative = short),
    /// interpolated from the one-step replication ratios of the bracketing
    /// steps. Defined for `t < maturity`.
    pub fn hedge_at(&self, s: f64, t: f64) -> Result<f64> {
        if t >= self.maturity {
            return Err(Error::domain(format!(
                "hedge query time {t} not before maturity {}",
                self.maturity
            )));
        }
        if !(s > 0.0) {
            return Err(Error::domain(format!("query price must be positive, got {s}")));
        }
        let pos = (t / self.dt).max(0.0);
        // Hedge ratios exist for steps 0..n_steps-1.
        let i0 = (pos.floor() as usize).min(self.n_steps - 1);
        let i1 = (i0 + 1).min(self.n_steps - 1);
        let theta = if i1 > i0 { (pos - i0 as f64).clamp(0.0, 1.0) } else { 0.0 };
        let ln_s = s.ln();
        let h0 = self.hedge_in_step(i0, ln_s);
        let h1 = if i1 > i0 { self.hedge_in_step(i1, ln_s) } else { h0 };
        Ok((1.0 - theta) * h0 + theta * h1)
    }

    /// Raw node values, exposed for diagnostics and tests.
    pub fn node_values(&self, step: usize) -> &[f64] {
        &self.values[step]
    }

    /// Asset level at node `(step, j)`.
    pub fn node_level(&self, step: usize, j: usize) -> f64 {
        self.asset_level(step, j)
    }
}
