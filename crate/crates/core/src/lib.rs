//! Zero-shot coordination laboratory: a cooperative rearrangement gridworld,
//! a small recurrent actor-critic with hand-written gradients, PPO, a
//! trajectory discriminator for behavior diversity, population baselines,
//! holdout partners and evaluation metrics.

pub mod approximator;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod diversity;
mod error;
pub mod evalkit;
pub mod holdout;
pub mod pipeline;
pub mod population;
pub mod ppo;
pub mod seeds;
pub mod world;

pub use error::{Error, Result};
