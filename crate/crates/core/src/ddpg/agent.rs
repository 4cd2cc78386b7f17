//! DDPG agent assembly: hyperparameters, action selection, critic and actor
//! SGD updates, target tracking, the training loop, and checkpoint files.
//!
//! The critic regresses onto `y = r + gamma (1 - done) Q'(s', pi'(s'))` with
//! one plain SGD step per environment step; the actor ascends the critic's
//! action-value by chaining the critic's input gradient through the action.
//! Exploration is Gaussian action noise with a linearly decaying standard
//! deviation. Every random source is a fixed substream of the run seed, so
//! a full training run is reproducible bit for bit.

use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::mlp::{soft_update, Mlp, OutputActivation};
use super::replay::{ReplayBuffer, Transition};
use crate::env::HedgingEnv;
use crate::rng::{standard_normal, substream};
use crate::{Error, Result};

/// Training hyperparameters. The learning rates, episode budget, episode
/// length, and quadratic cost multiplier are the published configuration;
/// the remaining knobs are conventional small-scale DDPG choices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentHyperparams {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub batch_size: usize,
    /// Target-network soft-update rate.
    pub tau: f64,
    pub noise_std_initial: f64,
    pub noise_std_final: f64,
    /// Fraction of the episode budget over which the noise decays linearly.
    pub noise_decay_fraction: f64,
    pub episodes: usize,
    pub steps_per_episode: usize,
    /// Quadratic transaction penalty multiplier used in training rewards.
    pub kappa: f64,
    pub buffer_capacity: usize,
    /// Stored transitions required before updates begin.
    pub warmup_transitions: usize,
    pub hidden: usize,
}

impl Default for AgentHyperparams {
    fn default() -> Self {
        AgentHyperparams {
            actor_lr: 5e-6,
            critic_lr: 5e-4,
            gamma: 1.0,
            batch_size: 64,
            tau: 0.005,
            noise_std_initial: 0.2,
            noise_std_final: 0.02,
            noise_decay_fraction: 0.8,
            episodes: 5000,
            steps_per_episode: 25,
            kappa: 0.005,
            buffer_capacity: 100_000,
            warmup_transitions: 1000,
            hidden: 64,
        }
    }
}

impl AgentHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.actor_lr > 0.0 && self.actor_lr < self.critic_lr) {
            return Err(Error::param(format!(
                "need 0 < actor_lr < critic_lr, got {} and {}",
                self.actor_lr, self.critic_lr
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::param(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if self.kappa < 0.0 {
            return Err(Error::param(format!("kappa must be non-negative, got {}", self.kappa)));
        }
        if self.batch_size == 0 || self.episodes == 0 || self.steps_per_episode == 0 {
            return Err(Error::param("batch size, episodes, and steps must be positive"));
        }
        if !(0.0..=1.0).contains(&self.noise_decay_fraction) {
            return Err(Error::param("noise decay fraction must lie in [0, 1]"));
        }
        if self.hidden == 0 {
            return Err(Error::param("hidden width must be positive"));
        }
        Ok(())
    }

    /// Exploration noise std for an episode index: linear decay from the
    /// initial to the final level over the first `noise_decay_fraction` of
    /// the budget, constant afterwards.
    pub fn noise_std(&self, episode: usize) -> f64 {
        let horizon = (self.episodes as f64 * self.noise_decay_fraction).max(1.0);
        if episode as f64 >= horizon {
            return self.noise_std_final;
        }
        let w = episode as f64 / horizon;
        self.noise_std_initial + w * (self.noise_std_final - self.noise_std_initial)
    }
}

/// Deterministic policy action: minus the sigmoid head, in [-1, 0].
pub fn policy_action(actor: &Mlp, state: &[f64; 3]) -> Result<f64> {
    Ok(-actor.forward(state)?[0])
}

/// Exploration action: policy plus Gaussian noise, clamped into [-1, 0].
/// With `noise_std == 0` no randomness is consumed and the call is
/// deterministic.
pub fn act(actor: &Mlp, state: &[f64; 3], noise_std: f64, rng: &mut impl RngCore) -> Result<f64> {
    let mut a = policy_action(actor, state)?;
    if noise_std > 0.0 {
        a += noise_std * standard_normal(rng);
    }
    Ok(a.clamp(-1.0, 0.0))
}

fn critic_input(state: &[f64; 3], action: f64) -> [f64; 4] {
    [state[0], state[1], state[2], action]
}

/// One critic regression step on `batch`. Returns the mean squared error
/// against the bootstrapped targets, measured before the parameter update.
pub fn critic_update(
    critic: &mut Mlp,
    critic_target: &Mlp,
    actor_target: &Mlp,
    batch: &[Transition],
    hp: &AgentHyperparams,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::param("empty batch"));
    }
    let mut scratch = critic.scratch();
    let mut grads = critic.gradients();
    grads.zero();
    let mut loss = 0.0;
    let inv = 1.0 / batch.len() as f64;
    for tr in batch {
        let y = if tr.terminal {
            tr.reward
        } else {
            let next_action = policy_action(actor_target, &tr.next_state)?;
            let q_next =
                critic_target.forward(&critic_input(&tr.next_state, next_action))?[0];
            tr.reward + hp.gamma * q_next
        };
        let input = critic_input(&tr.state, tr.action);
        let q = critic.forward_cached(&input, &mut scratch)?[0];
        let err = q - y;
        loss += err * err;
        critic.backward(&input, &scratch, &[2.0 * err * inv], &mut grads)?;
    }
    critic.sgd_step(&grads, hp.critic_lr);
    Ok(loss * inv)
}

/// One actor ascent step on `mean_s Q(s, pi(s))`, chaining the critic's
/// action-input gradient through the policy head. Returns the mean Q before
/// the update.
pub fn actor_update(
    actor: &mut Mlp,
    critic: &Mlp,
    states: &[[f64; 3]],
    hp: &AgentHyperparams,
) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::param("empty batch"));
    }
    let mut actor_scratch = actor.scratch();
    let mut actor_grads = actor.gradients();
    let mut critic_scratch = critic.scratch();
    let mut critic_grads = critic.gradients();
    actor_grads.zero();
    let mut mean_q = 0.0;
    let inv = 1.0 / states.len() as f64;
    for s in states {
        let head = actor.forward_cached(s, &mut actor_scratch)?[0];
        let action = -head;
        let input = critic_input(s, action);
        let q = critic.forward_cached(&input, &mut critic_scratch)?[0];
        mean_q += q;
        critic_grads.zero();
        critic.backward(&input, &critic_scratch, &[1.0], &mut critic_grads)?;
        let dq_da = critic_grads.d_input[3];
        // action = -head, so dQ/d(head) = -dQ/da.
        actor.backward(s, &actor_scratch, &[-dq_da * inv], &mut actor_grads)?;
    }
    // Gradient ascent.
    actor.sgd_step(&actor_grads, -hp.actor_lr);
    Ok(mean_q * inv)
}

/// Immutable result of a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedAgent {
    pub actor: Mlp,
    pub critic: Mlp,
    pub hp: AgentHyperparams,
    pub seed: u64,
}

/// Per-episode training diagnostics.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpisodeStat {
    pub episode: usize,
    pub total_reward: f64,
    pub mean_critic_loss: f64,
    pub noise_std: f64,
}

/// Run the full DDPG loop against `env`. Random sources are substreams of
/// `seed`: 0/1 initialize the actor/critic, 2 drives exploration noise, 3
/// drives replay sampling; episode paths come from the environment's own
/// seed. One critic and one actor update per environment step once the
/// warmup is stored.
pub fn train(
    env: &mut HedgingEnv,
    hp: &AgentHyperparams,
    seed: u64,
) -> Result<(TrainedAgent, Vec<EpisodeStat>)> {
    hp.validate()?;
    if env.n_steps() != hp.steps_per_episode {
        return Err(Error::config(format!(
            "environment grid has {} steps but hyperparameters expect {}",
            env.n_steps(),
            hp.steps_per_episode
        )));
    }
    let h = hp.hidden;
    let mut actor = Mlp::new(&[3, h, h, 1], OutputActivation::Sigmoid, &mut substream(seed, 0))?;
    let mut critic = Mlp::new(&[4, h, h, 1], OutputActivation::Linear, &mut substream(seed, 1))?;
    let mut actor_target = actor.clone();
    let mut critic_target = critic.clone();
    let mut noise_rng = substream(seed, 2);
    let mut buffer = ReplayBuffer::new(hp.buffer_capacity, seed, 3)?;

    let mut stats = Vec::with_capacity(hp.episodes);
    let mut batch: Vec<Transition> = Vec::with_capacity(hp.batch_size);
    let mut states: Vec<[f64; 3]> = Vec::with_capacity(hp.batch_size);

    for episode in 0..hp.episodes {
        let noise = hp.noise_std(episode);
        let mut state = env.reset(episode as u64)?.as_array();
        let mut total_reward = 0.0;
        let mut loss_sum = 0.0;
        let mut n_updates = 0usize;
        loop {
            let action = act(&actor, &state, noise, &mut noise_rng)?;
            let (next, reward, done) = env.step(action)?;
            let next_state = next.as_array();
            total_reward += reward;
            buffer.push(Transition { state, action, reward, next_state, terminal: done });

            if buffer.len() >= hp.warmup_transitions.max(hp.batch_size) {
                batch.clear();
                states.clear();
                for idx in buffer.sample_indices(hp.batch_size) {
                    let tr = *buffer.get(idx);
                    states.push(tr.state);
                    batch.push(tr);
                }
                loss_sum += critic_update(&mut critic, &critic_target, &actor_target, &batch, hp)?;
                actor_update(&mut actor, &critic, &states, hp)?;
                soft_update(&mut critic_target, &critic, hp.tau)?;
                soft_update(&mut actor_target, &actor, hp.tau)?;
                n_updates += 1;
            }
            state = next_state;
            if done {
                break;
            }
        }
        stats.push(EpisodeStat {
            episode,
            total_reward,
            mean_critic_loss: if n_updates > 0 { loss_sum / n_updates as f64 } else { 0.0 },
            noise_std: noise,
        });
    }

    Ok((TrainedAgent { actor, critic, hp: *hp, seed }, stats))
}

/// Versioned agent checkpoint: layer sizes and parameters travel inside the
/// serialized networks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub agent: TrainedAgent,
}

const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn new(agent: TrainedAgent) -> Self {
        Checkpoint { version: CHECKPOINT_VERSION, agent }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let file = std::fs::File::open(path)?;
        let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::data(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binomial::build_american_put;
    use crate::env::{EnvConfig, PathModel, PricerHandle};
    use crate::market::{GbmParams, TimeGrid};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn hp() -> AgentHyperparams {
        AgentHyperparams::default()
    }

    #[test]
    fn zero_actor_acts_at_minus_half() {
        let actor = Mlp::zeros(&[3, 8, 8, 1], OutputActivation::Sigmoid).unwrap();
        let mut rng = substream(0, 0);
        let a = act(&actor, &[1.0, 0.5, 0.0], 0.0, &mut rng).unwrap();
        assert_eq!(a, -0.5);
        // Deterministic under zero noise.
        assert_eq!(a, act(&actor, &[1.0, 0.5, 0.0], 0.0, &mut rng).unwrap());
    }

    #[test]
    fn noisy_actions_stay_in_bounds_and_hit_both_edges() {
        let actor = Mlp::zeros(&[3, 8, 8, 1], OutputActivation::Sigmoid).unwrap();
        let mut rng = substream(1, 0);
        let mut lo = 0.0_f64;
        let mut hi = -1.0_f64;
        for _ in 0..200 {
            let a = act(&actor, &[1.0, 0.5, 0.0], 5.0, &mut rng).unwrap();
            assert!((-1.0..=0.0).contains(&a));
            lo = lo.min(a);
            hi = hi.max(a);
        }
        assert_eq!(lo, -1.0);
        assert_eq!(hi, 0.0);
    }

    fn terminal_transition(reward: f64) -> Transition {
        Transition {
            state: [1.0, 0.5, -0.2],
            action: -0.4,
            reward,
            next_state: [1.0, 0.46, -0.4],
            terminal: true,
        }
    }

    #[test]
    fn critic_loss_on_zero_network_is_squared_target() {
        // Q = 0 everywhere, terminal target y = r = 1: loss 1.0 before the
        // update, and gamma cannot matter on terminal transitions.
        let mut critic = Mlp::zeros(&[4, 8, 8, 1], OutputActivation::Linear).unwrap();
        let critic_t = critic.clone();
        let actor_t = Mlp::zeros(&[3, 8, 8, 1], OutputActivation::Sigmoid).unwrap();
        let batch = [terminal_transition(1.0)];
        let loss = critic_update(&mut critic, &critic_t, &actor_t, &batch, &hp()).unwrap();
        assert_abs_diff_eq!(loss, 1.0, epsilon = 1e-12);

        let mut critic2 = Mlp::zeros(&[4, 8, 8, 1], OutputActivation::Linear).unwrap();
        let mut cfg = hp();
        cfg.gamma = 0.0;
        let loss2 =
            critic_update(&mut critic2, &critic_t, &actor_t, &batch, &cfg).unwrap();
        assert_eq!(loss, loss2);
    }

    #[test]
    fn critic_step_descends_on_a_frozen_batch() {
        let mut rng = substream(2, 0);
        let mut critic = Mlp::new(&[4, 16, 16, 1], OutputActivation::Linear, &mut rng).unwrap();
        let critic_t = critic.clone();
        let actor_t = Mlp::new(&[3, 16, 16, 1], OutputActivation::Sigmoid, &mut rng).unwrap();
        let batch: Vec<Transition> = (0..32)
            .map(|i| Transition {
                state: [1.0 + 0.01 * i as f64, 0.5, -0.3],
                action: -0.5 + 0.01 * i as f64,
                reward: -0.5,
                next_state: [1.0, 0.46, -0.5],
                terminal: i % 5 == 0,
            })
            .collect();
        let mut cfg = hp();
        cfg.critic_lr /= 10.0;
        let before = critic_update(&mut critic, &critic_t, &actor_t, &batch, &cfg).unwrap();
        let after = critic_update(&mut critic, &critic_t, &actor_t, &batch, &cfg).unwrap();
        assert!(after < before, "loss did not fall: {before} -> {after}");
    }

    #[test]
    fn constant_critic_leaves_actor_unchanged() {
        let mut rng = substream(3, 0);
        let mut actor = Mlp::new(&[3, 8, 8, 1], OutputActivation::Sigmoid, &mut rng).unwrap();
        let frozen = actor.clone();
        let critic = Mlp::zeros(&[4, 8, 8, 1], OutputActivation::Linear).unwrap();
        let states = [[1.0, 0.5, -0.2], [0.9, 0.3, -0.6]];
        actor_update(&mut actor, &critic, &states, &hp()).unwrap();
        assert_eq!(actor, frozen);
    }

    #[test]
    fn linear_in_action_critic_pushes_actions_toward_zero() {
        // Critic Q(s, a) = a: ascending Q must raise the (negative) action.
        let mut critic = Mlp::zeros(&[4, 1], OutputActivation::Linear).unwrap();
        critic.weights_mut(0)[3] = 1.0;
        let mut rng = substream(4, 0);
        let mut actor = Mlp::new(&[3, 8, 8, 1], OutputActivation::Sigmoid, &mut rng).unwrap();
        let states = [[1.0, 0.5, -0.2], [0.9, 0.3, -0.6], [1.1, 0.9, 0.0]];
        let mut cfg = hp();
        cfg.actor_lr = 1e-2;
        let q_before = actor_update(&mut actor, &critic, &states, &cfg).unwrap();
        let q_after = actor_update(&mut actor, &critic, &states, &cfg).unwrap();
        assert!(
            q_after > q_before,
            "mean action did not move toward 0: {q_before} -> {q_after}"
        );
    }

    #[test]
    fn ascent_improves_mean_q_on_frozen_critic() {
        let mut rng = substream(5, 0);
        let critic = Mlp::new(&[4, 16, 16, 1], OutputActivation::Linear, &mut rng).unwrap();
        let mut actor = Mlp::new(&[3, 16, 16, 1], OutputActivation::Sigmoid, &mut rng).unwrap();
        let states: Vec<[f64; 3]> = (0..16)
            .map(|i| [0.9 + 0.02 * i as f64, 0.1 + 0.05 * i as f64, -0.5])
            .collect();
        let mut cfg = hp();
        cfg.actor_lr = 1e-4;
        let before = actor_update(&mut actor, &critic, &states, &cfg).unwrap();
        let after = actor_update(&mut actor, &critic, &states, &cfg).unwrap();
        assert!(after >= before - 1e-12, "mean Q fell: {before} -> {after}");
    }

    #[test]
    fn noise_schedule_decays_linearly_then_flattens() {
        let cfg = hp();
        assert_eq!(cfg.noise_std(0), 0.2);
        let mid = cfg.noise_std(2000);
        assert_abs_diff_eq!(mid, 0.2 + 0.5 * (0.02 - 0.2), epsilon = 1e-12);
        assert_eq!(cfg.noise_std(4000), 0.02);
        assert_eq!(cfg.noise_std(4999), 0.02);
    }

    fn tiny_env(seed: u64) -> HedgingEnv {
        let grid = TimeGrid::new(1.0, 25).unwrap();
        let tree = build_american_put(100.0, 100.0, 0.05, 0.2, &grid, 200).unwrap();
        HedgingEnv::new(EnvConfig {
            strike: 100.0,
            grid,
            kappa: 0.005,
            pricer: PricerHandle::Binomial(Arc::new(tree)),
            model: PathModel::Gbm(GbmParams::new(100.0, 0.05, 0.2).unwrap()),
            path_seed: seed,
        })
        .unwrap()
    }

    fn tiny_hp() -> AgentHyperparams {
        AgentHyperparams {
            episodes: 12,
            warmup_transitions: 64,
            buffer_capacity: 4096,
            ..AgentHyperparams::default()
        }
    }

    #[test]
    fn training_is_bit_reproducible() {
        let (a, stats_a) = train(&mut tiny_env(9), &tiny_hp(), 123).unwrap();
        let (b, stats_b) = train(&mut tiny_env(9), &tiny_hp(), 123).unwrap();
        assert_eq!(a.actor, b.actor);
        assert_eq!(a.critic, b.critic);
        assert_eq!(stats_a.len(), stats_b.len());
        for (x, y) in stats_a.iter().zip(&stats_b) {
            assert_eq!(x.total_reward, y.total_reward);
            assert_eq!(x.mean_critic_loss, y.mean_critic_loss);
        }
        // A different seed trains different weights.
        let (c, _) = train(&mut tiny_env(9), &tiny_hp(), 124).unwrap();
        assert_ne!(a.actor, c.actor);
    }

    #[test]
    fn checkpoint_round_trip_preserves_parameters() {
        let (agent, _) = train(&mut tiny_env(2), &tiny_hp(), 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent.json");
        Checkpoint::new(agent.clone()).save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.agent.actor, agent.actor);
        assert_eq!(back.agent.critic, agent.critic);
        assert_eq!(back.agent.seed, 7);
    }

    #[test]
    fn hyperparameter_validation() {
        let mut bad = hp();
        bad.actor_lr = 1e-3;
        bad.critic_lr = 1e-4;
        assert!(bad.validate().is_err());
        let mut bad2 = hp();
        bad2.gamma = 1.5;
        assert!(bad2.validate().is_err());
        assert!(hp().validate().is_ok());

        let mut mismatched = tiny_hp();
        mismatched.steps_per_episode = 10;
        assert!(train(&mut tiny_env(1), &mismatched, 1).is_err());
    }
}
