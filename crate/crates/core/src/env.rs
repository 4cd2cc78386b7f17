//! Episodic hedging MDP: state construction, transitions along a simulated
//! path, and the absolute-hedge-error reward with a quadratic transaction
//! penalty.
//!
//! The state is `(S_t / K, T - t, previous action)`; an action is the held
//! position in [-1, 0]. A step advances one grid point and pays
//! `-|A (S_t - S_{t-1}) - (C_t - C_{t-1})| - kappa (A - A_prev)^2 S_t`,
//! where `C` comes from the configured pricer. Episodes always run the full
//! grid: counterparty exercise is deliberately ignored during training so
//! the agent also experiences prices beyond the expected boundary.

use std::sync::Arc;

use crate::binomial::AmericanPutTree;
use crate::chebyshev::ChebSurface;
use crate::market::{self, GbmParams, SvParams, TimeGrid};
use crate::rng::substream;
use crate::{Error, Result};

/// Pricer backing the reward's option-value queries.
#[derive(Clone)]
pub enum PricerHandle {
    Binomial(Arc<AmericanPutTree>),
    Chebyshev(Arc<ChebSurface>),
}

impl PricerHandle {
    /// Option price at `(s, t)`; `vol` is required by the Chebyshev surface
    /// and ignored by the tree.
    pub fn price(&self, s: f64, vol: Option<f64>, t: f64) -> Result<f64> {
        match self {
            PricerHandle::Binomial(tree) => tree.price_at(s, t),
            PricerHandle::Chebyshev(surface) => {
                let v = vol.ok_or_else(|| {
                    Error::config("chebyshev pricer needs a volatility state")
                })?;
                surface.price_query(s, v, t)
            }
        }
    }

    pub fn strike(&self) -> f64 {
        match self {
            PricerHandle::Binomial(tree) => tree.strike(),
            PricerHandle::Chebyshev(surface) => surface.strike(),
        }
    }

    pub fn maturity(&self) -> f64 {
        match self {
            PricerHandle::Binomial(tree) => tree.maturity(),
            PricerHandle::Chebyshev(surface) => surface.grid().maturity(),
        }
    }
}

/// Path model driving episode generation.
#[derive(Debug, Clone, Copy)]
pub enum PathModel {
    Gbm(GbmParams),
    Sv(SvParams),
}

/// Environment configuration. Episode `e` draws substream `e` of
/// `path_seed`, so a run is fully determined by its config.
#[derive(Clone)]
pub struct EnvConfig {
    pub strike: f64,
    pub grid: TimeGrid,
    pub kappa: f64,
    pub pricer: PricerHandle,
    pub model: PathModel,
    pub path_seed: u64,
}

/// Observation handed to the agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    /// Price normalized by the strike.
    pub price_ratio: f64,
    /// Time to maturity in years.
    pub tau: f64,
    /// Previously held position in [-1, 0].
    pub prev_action: f64,
}

impl EnvState {
    pub fn as_array(&self) -> [f64; 3] {
        [self.price_ratio, self.tau, self.prev_action]
    }
}

/// One transcript row: everything needed to replay the reward offline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranscriptRow {
    pub t: f64,
    pub s: f64,
    pub vol: Option<f64>,
    pub c: f64,
    pub action: f64,
    pub reward: f64,
}

pub struct HedgingEnv {
    cfg: EnvConfig,
    prices: Vec<f64>,
    vols: Option<Vec<f64>>,
    step_idx: usize,
    prev_action: f64,
    prev_option_price: f64,
    active: bool,
    clamp_warnings: usize,
    transcript: Option<Vec<TranscriptRow>>,
}

impl HedgingEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        if !(cfg.strike > 0.0) {
            return Err(Error::config(format!(
                "strike must be positive, got {}",
                cfg.strike
            )));
        }
        if cfg.kappa < 0.0 {
            return Err(Error::config(format!(
                "kappa must be non-negative, got {}",
                cfg.kappa
            )));
        }
        if (cfg.pricer.strike() - cfg.strike).abs() > 1e-9 {
            return Err(Error::config(format!(
                "pricer strike {} does not match option strike {}",
                cfg.pricer.strike(),
                cfg.strike
            )));
        }
        if cfg.pricer.maturity() + 1e-12 < cfg.grid.maturity() {
            return Err(Error::config(format!(
                "pricer maturity {} shorter than episode maturity {}",
                cfg.pricer.maturity(),
                cfg.grid.maturity()
            )));
        }
        Ok(HedgingEnv {
            cfg,
            prices: Vec::new(),
            vols: None,
            step_idx: 0,
            prev_action: 0.0,
            prev_option_price: 0.0,
            active: false,
            clamp_warnings: 0,
            transcript: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn n_steps(&self) -> usize {
        self.cfg.grid.n_steps()
    }

    /// Record per-step transcript rows from the next reset onward.
    pub fn enable_transcript(&mut self) {
        self.transcript = Some(Vec::new());
    }

    pub fn transcript(&self) -> Option<&[TranscriptRow]> {
        self.transcript.as_deref()
    }

    /// Actions pushed back into [-1, 0] so far.
    pub fn clamp_warnings(&self) -> usize {
        self.clamp_warnings
    }

    /// Start episode `episode`: draws the path from substream `episode` of
    /// the configured seed, resets the holding to zero, and returns the
    /// initial observation.
    pub fn reset(&mut self, episode: u64) -> Result<EnvState> {
        let grid = self.cfg.grid;
        let mut rng = substream(self.cfg.path_seed, episode);
        match &self.cfg.model {
            PathModel::Gbm(p) => {
                let mut prices = vec![0.0; grid.n_steps() + 1];
                market::fill_gbm_path(p, &grid, &mut rng, &mut prices);
                self.prices = prices;
                self.vols = None;
            }
            PathModel::Sv(p) => {
                let mut prices = vec![0.0; grid.n_steps() + 1];
                let mut vols = vec![0.0; grid.n_steps() + 1];
                market::fill_sv_path(p, &grid, &mut rng, &mut prices, &mut vols);
                self.prices = prices;
                self.vols = Some(vols);
            }
        }
        self.step_idx = 0;
        self.prev_action = 0.0;
        self.active = true;
        let s0 = self.prices[0];
        let v0 = self.vols.as_ref().map(|v| v[0]);
        self.prev_option_price = self.cfg.pricer.price(s0, v0, 0.0)?;
        if let Some(log) = self.transcript.as_mut() {
            log.clear();
            log.push(TranscriptRow {
                t: 0.0,
                s: s0,
                vol: v0,
                c: self.prev_option_price,
                action: 0.0,
                reward: 0.0,
            });
        }
        Ok(self.observation())
    }

    fn observation(&self) -> EnvState {
        EnvState {
            price_ratio: self.prices[self.step_idx] / self.cfg.strike,
            tau: self.cfg.grid.maturity() - self.cfg.grid.time_at(self.step_idx),
            prev_action: self.prev_action,
        }
    }

    /// Advance one grid step holding `action` over it. Returns the next
    /// observation, the reward, and whether the episode just ended.
    pub fn step(&mut self, action: f64) -> Result<(EnvState, f64, bool)> {
        if !self.active {
            return Err(Error::domain("episode already finished; call reset"));
        }
        let a = if (-1.0..=0.0).contains(&action) {
            action
        } else {
            self.clamp_warnings += 1;
            action.clamp(-1.0, 0.0)
        };
        let grid = self.cfg.grid;
        let i = self.step_idx;
        let s_prev = self.prices[i];
        let s_new = self.prices[i + 1];
        let t_new = grid.time_at(i + 1);
        let vol_new = self.vols.as_ref().map(|v| v[i + 1]);
        let c_new = self.cfg.pricer.price(s_new, vol_new, t_new)?;

        let hedge_error = a * (s_new - s_prev) - (c_new - self.prev_option_price);
        let trade = a - self.prev_action;
        let reward = -hedge_error.abs() - self.cfg.kappa * trade * trade * s_new;

        self.prev_action = a;
        self.prev_option_price = c_new;
        self.step_idx = i + 1;
        let done = self.step_idx == grid.n_steps();
        if done {
            self.active = false;
        }
        if let Some(log) = self.transcript.as_mut() {
            log.push(TranscriptRow { t: t_new, s: s_new, vol: vol_new, c: c_new, action: a, reward });
        }
        Ok((self.observation(), reward, done))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binomial::build_american_put;
    use approx::assert_abs_diff_eq;

    fn gbm_env(kappa: f64, strike: f64, sigma_path: f64, mu: f64) -> HedgingEnv {
        let grid = TimeGrid::new(1.0, 25).unwrap();
        let tree = build_american_put(100.0, strike, 0.05, 0.2, &grid, 500).unwrap();
        let cfg = EnvConfig {
            strike,
            grid,
            kappa,
            pricer: PricerHandle::Binomial(Arc::new(tree)),
            model: PathModel::Gbm(GbmParams::new(100.0, mu, sigma_path).unwrap()),
            path_seed: 77,
        };
        HedgingEnv::new(cfg).unwrap()
    }

    #[test]
    fn reset_gives_normalized_initial_state() {
        let mut env = gbm_env(0.005, 100.0, 0.2, 0.05);
        let s = env.reset(0).unwrap();
        assert_eq!(s.price_ratio, 1.0);
        assert_eq!(s.tau, 1.0);
        assert_eq!(s.prev_action, 0.0);
    }

    #[test]
    fn same_episode_seed_replays_identically() {
        let mut env = gbm_env(0.005, 100.0, 0.2, 0.05);
        env.reset(3).unwrap();
        let mut first = Vec::new();
        loop {
            let (st, r, done) = env.step(-0.4).unwrap();
            first.push((st, r));
            if done {
                break;
            }
        }
        env.reset(3).unwrap();
        for want in &first {
            let (st, r, _) = env.step(-0.4).unwrap();
            assert_eq!((st, r), *want);
        }
    }

    #[test]
    fn quadratic_penalty_is_isolated_by_flat_worthless_option() {
        // sigma = 0 and mu = 0 freeze the path at 100; a vanishing strike
        // zeroes the option, so the reward reduces to the trade penalty.
        let mut env = gbm_env(0.005, 1e-9, 0.0, 0.0);
        env.reset(0).unwrap();
        let (_, r, _) = env.step(-1.0).unwrap();
        assert_abs_diff_eq!(r, -0.5, epsilon = 1e-12);
        // No trade, no hedge error: zero reward.
        let (_, r2, _) = env.step(-1.0).unwrap();
        assert_abs_diff_eq!(r2, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn kappa_zero_and_replicating_position_gives_zero_total_reward() {
        let mut env = gbm_env(0.0, 1e-9, 0.0, 0.0);
        env.reset(0).unwrap();
        let mut total = 0.0;
        loop {
            let (_, r, done) = env.step(0.0).unwrap();
            total += r;
            if done {
                break;
            }
        }
        assert_eq!(total, 0.0);
    }

    #[test]
    fn episode_runs_exactly_the_configured_steps() {
        let mut env = gbm_env(0.005, 100.0, 0.2, 0.05);
        env.reset(1).unwrap();
        let mut steps = 0;
        loop {
            let (_, _, done) = env.step(-0.3).unwrap();
            steps += 1;
            if done {
                break;
            }
        }
        assert_eq!(steps, 25);
        assert!(env.step(-0.3).is_err());
    }

    #[test]
    fn rewards_are_never_positive() {
        let mut env = gbm_env(0.005, 100.0, 0.2, 0.05);
        for ep in 0..20 {
            env.reset(ep).unwrap();
            let mut a: f64 = -0.1;
            loop {
                a = (a - 0.03).max(-1.0);
                let (_, r, done) = env.step(a).unwrap();
                assert!(r <= 1e-15, "positive reward {r}");
                if done {
                    break;
                }
            }
        }
    }

    #[test]
    fn out_of_bounds_actions_clamp_with_warning() {
        let mut env = gbm_env(0.005, 100.0, 0.2, 0.05);
        env.reset(0).unwrap();
        assert_eq!(env.clamp_warnings(), 0);
        env.step(-1.3).unwrap();
        env.step(0.2).unwrap();
        assert_eq!(env.clamp_warnings(), 2);
    }

    #[test]
    fn transcript_replays_reward_formula_exactly() {
        let mut env = gbm_env(0.005, 100.0, 0.2, 0.05);
        env.enable_transcript();
        env.reset(5).unwrap();
        let mut a: f64 = 0.0;
        loop {
            a = (a - 0.07).max(-1.0);
            let (_, _, done) = env.step(a).unwrap();
            if done {
                break;
            }
        }
        // Independent replay of the reward from the logged quantities.
        let rows = env.transcript().unwrap();
        assert_eq!(rows.len(), 26);
        for w in rows.windows(2) {
            let (prev, cur) = (&w[0], &w[1]);
            let want = -(cur.action * (cur.s - prev.s) - (cur.c - prev.c)).abs()
                - 0.005 * (cur.action - prev.action).powi(2) * cur.s;
            assert!((cur.reward - want).abs() < 1e-10);
        }
    }

    #[test]
    fn config_validation_catches_mismatches() {
        let grid = TimeGrid::new(1.0, 25).unwrap();
        let tree = build_american_put(100.0, 100.0, 0.05, 0.2, &grid, 100).unwrap();
        let cfg = EnvConfig {
            strike: 90.0,
            grid,
            kappa: 0.005,
            pricer: PricerHandle::Binomial(Arc::new(tree)),
            model: PathModel::Gbm(GbmParams::new(100.0, 0.05, 0.2).unwrap()),
            path_seed: 1,
        };
        assert!(HedgingEnv::new(cfg).is_err());
    }
}
