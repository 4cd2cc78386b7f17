//! Per-option stochastic-volatility calibration: fit `(rho, nu)` so the
//! model's Monte Carlo European put price matches the observed mid, then
//! average the fitted pairs per symbol.
//!
//! The pricing simulation reuses one fixed seed for every objective
//! evaluation (common random numbers), so the objective surface is
//! deterministic within a search and the optimizer sees no Monte Carlo
//! noise. Quotes are European-style, hence no exercise boundary enters
//! here.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::market::{simulate_sv, SvParams, TimeGrid};
use crate::solver::{nelder_mead_bounded, NmOptions};
use crate::{Error, Result};

/// One listed put quote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionQuote {
    pub symbol: String,
    pub quote_date: NaiveDate,
    /// Close of the underlying on the quote date.
    pub close: f64,
    pub maturity: NaiveDate,
    pub strike: f64,
    /// Mid of the bid/ask spread.
    pub mid: f64,
    /// Listed implied volatility (annualized).
    pub iv: f64,
}

impl OptionQuote {
    pub fn validate(&self) -> Result<()> {
        if !(self.close > 0.0) {
            return Err(Error::data(format!("close must be positive, got {}", self.close)));
        }
        if !(self.strike > 0.0) {
            return Err(Error::data(format!("strike must be positive, got {}", self.strike)));
        }
        if !(self.mid > 0.0) {
            return Err(Error::data(format!("mid must be positive, got {}", self.mid)));
        }
        if !(self.iv > 0.0) {
            return Err(Error::data(format!("iv must be positive, got {}", self.iv)));
        }
        if self.maturity <= self.quote_date {
            return Err(Error::data(format!(
                "maturity {} not after quote date {}",
                self.maturity, self.quote_date
            )));
        }
        Ok(())
    }
}

/// Calibration configuration; defaults follow the experiment setup
/// (5% rate, 10000 paths, leverage-effect initial guess).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationSetup {
    pub rate: f64,
    pub n_paths: usize,
    pub rho_bounds: (f64, f64),
    pub nu_bounds: (f64, f64),
    pub initial: (f64, f64),
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for CalibrationSetup {
    fn default() -> Self {
        CalibrationSetup {
            rate: 0.05,
            n_paths: 10_000,
            rho_bounds: (-0.95, 0.95),
            nu_bounds: (0.001, 2.0),
            initial: (-0.4, 0.1),
            max_iters: 200,
            seed: 2024,
        }
    }
}

/// Fitted parameters for one option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionCalibration {
    pub symbol: String,
    pub maturity: NaiveDate,
    pub strike: f64,
    pub rho: f64,
    pub nu: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Per-symbol averaged parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolParams {
    pub symbol: String,
    pub rho: f64,
    pub nu: f64,
    pub n_options: usize,
}

/// Discounted mean European put payoff under the stochastic-volatility
/// model: `e^{-rT} E[(K - S_T)^+]` over `n_paths` seeded paths. The caller
/// supplies risk-neutral dynamics (`params.mu == rate`) for pricing.
pub fn model_price(
    params: &SvParams,
    strike: f64,
    rate: f64,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<f64> {
    if strike < 0.0 {
        return Err(Error::param(format!("strike must be non-negative, got {strike}")));
    }
    let paths = simulate_sv(params, grid, n_paths, seed)?;
    let sum: f64 = paths.terminal_prices().map(|s| (strike - s).max(0.0)).sum();
    Ok((-rate * grid.maturity()).exp() * sum / n_paths as f64)
}

/// Fit `(rho, nu)` for one quote by minimizing the squared gap between the
/// model price and the observed mid. The initial volatility is pinned to
/// the quote's implied volatility; common random numbers hold across the
/// whole search. Hitting the iteration cap returns the best point found
/// with `converged == false`.
pub fn calibrate_option(
    quote: &OptionQuote,
    grid: &TimeGrid,
    setup: &CalibrationSetup,
) -> Result<OptionCalibration> {
    quote.validate()?;
    let seed = setup.seed;
    let n_paths = setup.n_paths;
    let rate = setup.rate;
    let (s0, sigma0, strike, mid) = (quote.close, quote.iv, quote.strike, quote.mid);

    let mut fail: Option<Error> = None;
    let mut objective = |x: &[f64]| -> f64 {
        let params = match SvParams::new(s0, rate, sigma0, x[1], x[0]) {
            Ok(p) => p,
            Err(e) => {
                fail = Some(e);
                return f64::INFINITY;
            }
        };
        match model_price(&params, strike, rate, grid, n_paths, seed) {
            Ok(p) => {
                let gap = p - mid;
                gap * gap
            }
            Err(e) => {
                fail = Some(e);
                f64::INFINITY
            }
        }
    };

    let result = nelder_mead_bounded(
        &mut objective,
        &[setup.initial.0, setup.initial.1],
        &[setup.rho_bounds.0, setup.nu_bounds.0],
        &[setup.rho_bounds.1, setup.nu_bounds.1],
        &NmOptions { max_iters: setup.max_iters, ..NmOptions::default() },
    )?;
    if let Some(e) = fail {
        return Err(e);
    }
    Ok(OptionCalibration {
        symbol: quote.symbol.clone(),
        maturity: quote.maturity,
        strike: quote.strike,
        rho: result.x[0],
        nu: result.x[1],
        objective: result.fx,
        iterations: result.iterations,
        converged: result.converged,
    })
}

/// Arithmetic mean of the fitted `(rho, nu)` pairs for one symbol.
pub fn symbol_params(symbol: &str, results: &[OptionCalibration]) -> Result<SymbolParams> {
    let own: Vec<&OptionCalibration> =
        results.iter().filter(|r| r.symbol == symbol).collect();
    if own.is_empty() {
        return Err(Error::param(format!("no calibration results for symbol {symbol}")));
    }
    let n = own.len() as f64;
    Ok(SymbolParams {
        symbol: symbol.to_string(),
        rho: own.iter().map(|r| r.rho).sum::<f64>() / n,
        nu: own.iter().map(|r| r.nu).sum::<f64>() / n,
        n_options: own.len(),
    })
}
