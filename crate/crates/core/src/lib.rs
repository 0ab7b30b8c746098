//! Desk-scale RLHF for conversational recommendation: a simulated user, implicit
//! feedback signals, a learned reward, a policy trained by imitation and PPO, and
//! the metrics used to compare them.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod dialogue;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod optim;
pub mod parallel;
pub mod policy;
pub mod ppo;
pub mod recommender;
pub mod registry;
pub mod reward;
pub mod rng;
pub mod run;
pub mod signals;
pub mod user_sim;
pub mod world;

pub use error::{Error, Result};
