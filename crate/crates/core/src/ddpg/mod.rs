//! Deep deterministic policy gradient, from scratch: two-hidden-layer MLPs
//! for the actor and critic, a uniform replay buffer, critic regression to
//! the bootstrapped target, actor ascent on the critic, and Gaussian
//! exploration noise with plain SGD throughout.

mod agent;
mod mlp;
mod replay;

pub use agent::{
    act, actor_update, critic_update, policy_action, train, AgentHyperparams, Checkpoint,
    EpisodeStat, TrainedAgent,
};
pub use mlp::{soft_update, Gradients, Mlp, OutputActivation, Scratch};
pub use replay::{ReplayBuffer, Transition};
