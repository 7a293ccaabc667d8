//! Multi-headed recurrent soft actor-critic.
//!
//! Head `h1` allocates over two interfaces (11 actions at granularity 10),
//! head `h2` over three (66 actions). The actor and both critics each own a
//! recurrent trunk of the same shape; both heads of a network share its
//! trunk.

mod agent;
mod allocator;
mod buffer;
pub mod checkpoint;
mod loss;
mod nn;
mod optim;

pub use agent::{argmax, sample_index, SacAgent, SacConfig, UpdateStats};
pub use allocator::{CurvePoint, MhrsacPolicy};
pub use buffer::ReplayBuffer;
pub use loss::{
    actor_loss_grad, combined_q, critic_loss_grad, critic_targets, log_softmax, stack_windows, temperature_grad,
    ActorStep, Batch, CriticOp,
};
pub use nn::{polyak_update, Cache, Net, NetShape, Params};
pub use optim::{Optimizer, OptimizerKind};
