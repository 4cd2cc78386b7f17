//! Out-of-sample strategy evaluation: run a hedging strategy over test
//! paths with counterparty early exercise, track a money-market account
//! with linear transaction costs, and summarize the final P&L distribution.
//!
//! Accounting per path: the hedger sells the put for `C_0`, takes the
//! initial position for free (`B_0 = C_0 - S_0 A_0`), and at every later
//! grid point first accrues interest, then either settles (if the
//! counterparty exercises on observing the new price, or at maturity) or
//! rebalances at cost `lambda |dA| S`. Settlement carries no liquidation
//! cost: `PnL = B e^{r dt} + S A_prev - (K - S)^+`.

use std::sync::Arc;

use rayon::prelude::*;

use crate::binomial::{AmericanPutTree, ExerciseBoundary};
use crate::black_scholes::{put_delta, BsInputs};
use crate::chebyshev::ChebSurface;
use crate::ddpg::{policy_action, Mlp};
use crate::market::{PathSet, SvParams, TimeGrid, EULER_FLOOR};
use crate::math::{mean, sample_std};
use crate::{Error, Result};

/// Where the Black-Scholes benchmark takes its per-step volatility.
#[derive(Debug, Clone, Copy)]
pub enum VolSource {
    /// A constant volatility (the GBM experiments).
    Fixed(f64),
    /// The path's own volatility state (stochastic-volatility experiments,
    /// or a filtered series on empirical paths).
    FromPath,
}

/// A hedging policy mapping `(S, sigma_t, tau, previous position)` to the
/// next held position in [-1, 0].
#[derive(Clone)]
pub enum Strategy {
    /// Trained agent, acting deterministically.
    Drl { actor: Arc<Mlp>, strike: f64 },
    /// Black-Scholes put Delta.
    BsDelta { strike: f64, rate: f64, vol: VolSource },
    /// Interpolated one-step replication ratio from a binomial tree.
    Binomial { tree: Arc<AmericanPutTree> },
}

impl Strategy {
    pub fn label(&self) -> &'static str {
        match self {
            Strategy::Drl { .. } => "drl",
            Strategy::BsDelta { .. } => "bs_delta",
            Strategy::Binomial { .. } => "binomial",
        }
    }

    /// Position to hold over the next step.
    pub fn position(&self, s: f64, path_vol: Option<f64>, tau: f64, prev: f64) -> Result<f64> {
        let raw = match self {
            Strategy::Drl { actor, strike } => {
                policy_action(actor, &[s / strike, tau, prev])?
            }
            Strategy::BsDelta { strike, rate, vol } => {
                let sigma = match vol {
                    VolSource::Fixed(x) => *x,
                    VolSource::FromPath => path_vol.ok_or_else(|| {
                        Error::config("BS Delta strategy needs a path volatility")
                    })?,
                };
                put_delta(&BsInputs::new(s, *strike, *rate, sigma, tau)?)
            }
            Strategy::Binomial { tree } => {
                let t = tree.maturity() - tau;
                tree.hedge_at(s, t)?
            }
        };
        Ok(raw.clamp(-1.0, 0.0))
    }
}

/// Counterparty exercise rule.
#[derive(Clone)]
pub enum ExercisePolicy {
    /// Never exercise early (hold to maturity).
    None,
    /// Binomial-tree critical-price boundary (vol-independent).
    Boundary(ExerciseBoundary),
    /// Chebyshev boundary, looked up at the path's `(t, sigma_t)`.
    Chebyshev(Arc<ChebSurface>),
}

impl ExercisePolicy {
    fn level(&self, t: f64, vol: Option<f64>) -> Option<f64> {
        match self {
            ExercisePolicy::None => None,
            ExercisePolicy::Boundary(b) => b.level_at(t),
            ExercisePolicy::Chebyshev(surface) => {
                surface.boundary_at(t, vol.unwrap_or(surface.vol_nodes()[0]))
            }
        }
    }
}

/// True iff the counterparty exercises at `(s, t)`: the price sits at or
/// below the critical level (inclusive).
pub fn exercise_check(s: f64, t: f64, policy: &ExercisePolicy, vol: Option<f64>) -> bool {
    match policy.level(t, vol) {
        Some(b) => s <= b,
        None => false,
    }
}

/// Outcome of a single path. `exercise_step` is the grid index at which
/// intrinsic value was claimed (maturity included); `None` means the option
/// expired worthless.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathOutcome {
    pub pnl: f64,
    pub exercise_step: Option<usize>,
}

/// Run one path. `prices` has `grid.n_steps() + 1` points; `vols` likewise
/// when present. `c0` is the premium received at t = 0.
pub fn run_path(
    strategy: &Strategy,
    prices: &[f64],
    vols: Option<&[f64]>,
    grid: &TimeGrid,
    c0: f64,
    policy: &ExercisePolicy,
    strike: f64,
    rate: f64,
    lambda: f64,
) -> Result<PathOutcome> {
    let n = grid.n_steps();
    if prices.len() != n + 1 {
        return Err(Error::param(format!(
            "path has {} points, grid expects {}",
            prices.len(),
            n + 1
        )));
    }
    if let Some(v) = vols {
        if v.len() != n + 1 {
            return Err(Error::param("volatility series length mismatch"));
        }
    }
    if lambda < 0.0 {
        return Err(Error::param(format!("lambda must be non-negative, got {lambda}")));
    }
    let maturity = grid.maturity();
    let growth = (rate * grid.dt()).exp();

    let vol_at = |step: usize| vols.map(|v| v[step]);
    let mut prev = strategy.position(prices[0], vol_at(0), maturity, 0.0)?;
    // No transaction cost on the opening trade.
    let mut bank = c0 - prices[0] * prev;

    for step in 1..=n {
        let s = prices[step];
        let t = grid.time_at(step);
        let vol = vol_at(step);
        bank *= growth;
        let early = step < n
            && strike - s > 0.0
            && exercise_check(s, t, policy, vol);
        if early || step == n {
            let payoff = (strike - s).max(0.0);
            let pnl = bank + s * prev - payoff;
            let exercise_step = if payoff > 0.0 { Some(step) } else { None };
            return Ok(PathOutcome { pnl, exercise_step });
        }
        let a = strategy.position(s, vol, maturity - t, prev)?;
        let trade = a - prev;
        bank -= trade * s + lambda * trade.abs() * s;
        prev = a;
    }
    unreachable!("the maturity step always settles");
}

/// Per-path final P&L plus summary statistics for one strategy and cost
/// rate.
#[derive(Debug, Clone)]
pub struct HedgeReport {
    pub strategy: String,
    pub lambda: f64,
    pub pnls: Vec<f64>,
    pub exercise_steps: Vec<Option<usize>>,
    pub mean: f64,
    pub std: f64,
}

impl HedgeReport {
    fn from_outcomes(strategy: &Strategy, lambda: f64, outcomes: Vec<PathOutcome>) -> Self {
        let pnls: Vec<f64> = outcomes.iter().map(|o| o.pnl).collect();
        let exercise_steps = outcomes.iter().map(|o| o.exercise_step).collect();
        let mean = mean(&pnls);
        let std = sample_std(&pnls);
        HedgeReport {
            strategy: strategy.label().to_string(),
            lambda,
            pnls,
            exercise_steps,
            mean,
            std,
        }
    }
}

/// Evaluate a strategy across a whole path batch.
pub fn evaluate(
    strategy: &Strategy,
    paths: &PathSet,
    c0: f64,
    policy: &ExercisePolicy,
    strike: f64,
    rate: f64,
    lambda: f64,
) -> Result<HedgeReport> {
    if paths.n_paths() == 0 {
        return Err(Error::param("need at least one path"));
    }
    let outcomes: Result<Vec<PathOutcome>> = (0..paths.n_paths())
        .into_par_iter()
        .map(|i| {
            run_path(
                strategy,
                paths.path(i),
                paths.vol_path(i),
                paths.grid(),
                c0,
                policy,
                strike,
                rate,
                lambda,
            )
        })
        .collect();
    Ok(HedgeReport::from_outcomes(strategy, lambda, outcomes?))
}

/// Deterministic volatility filter for an observed price series: invert the
/// price equation for the Brownian increment using the previous filtered
/// vol, keep its correlated share, and drop the orthogonal component.
pub fn filter_vol_path(prices: &[f64], params: &SvParams, dt: f64) -> Vec<f64> {
    let sq_dt = dt.sqrt();
    let mut vols = Vec::with_capacity(prices.len());
    let mut v = params.sigma0;
    vols.push(v);
    for w in prices.windows(2) {
        let rel = w[1] / w[0] - 1.0;
        // S_t = S_{t-1}(1 + mu dt + sigma_t dW): predictable-form inversion.
        let dw = ((rel - params.mu * dt) / v).clamp(-10.0 * sq_dt, 10.0 * sq_dt);
        v = (v * (1.0 + params.nu * params.rho * dw)).max(EULER_FLOOR);
        vols.push(v);
    }
    vols
}

/// Evaluate one strategy on an observed daily close series: filters the
/// volatility state from the calibrated model and runs the standard
/// accounting over the single realized path.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_empirical(
    strategy: &Strategy,
    closes: &[f64],
    grid: &TimeGrid,
    params: &SvParams,
    c0: f64,
    policy: &ExercisePolicy,
    strike: f64,
    rate: f64,
    lambda: f64,
) -> Result<PathOutcome> {
    if closes.len() != grid.n_steps() + 1 {
        return Err(Error::data(format!(
            "price series has {} rows but the grid expects {}",
            closes.len(),
            grid.n_steps() + 1
        )));
    }
    let vols = filter_vol_path(closes, params, grid.dt());
    run_path(strategy, closes, Some(&vols), grid, c0, policy, strike, rate, lambda)
}
