//! Pricing, hedging, and reinforcement-learning toolkit for American put options.
//!
//! The crate provides:
//! - seeded Monte Carlo simulators for geometric Brownian motion and a
//!   lognormal stochastic-volatility model ([`market`]),
//! - a closed-form Black-Scholes European put benchmark ([`black_scholes`]),
//! - an American put binomial tree with interpolated price/hedge queries and
//!   an indexed early-exercise boundary ([`binomial`]),
//! - a dynamic Chebyshev American put pricer for the stochastic-volatility
//!   model ([`chebyshev`]),
//! - a from-scratch DDPG agent (actor/critic MLPs, replay buffer, SGD
//!   updates) and its training loop ([`ddpg`]),
//! - the episodic hedging environment that drives training ([`env`]),
//! - out-of-sample evaluation with counterparty early exercise and
//!   money-market P&L accounting ([`evaluate`]),
//! - per-option stochastic-volatility calibration ([`calibrate`]),
//! - CSV ingestion and report writers ([`data`]).
//!
//! Everything that consumes randomness is driven by explicit integer seeds
//! and counter-stable substreams, so identical inputs reproduce identical
//! outputs bit for bit.

pub mod binomial;
pub mod black_scholes;
pub mod calibrate;
pub mod chebyshev;
pub mod data;
pub mod ddpg;
pub mod env;
mod error;
pub mod evaluate;
pub mod market;
pub mod math;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
