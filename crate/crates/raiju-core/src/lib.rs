//! Core library for the raiju simulation lab.
//!
//! The crate models desk-scale post-exploitation scenarios: a fixed 99-slot
//! action catalog, an episodic environment covering privilege escalation,
//! hashdump gathering, and SMB lateral movement, from-scratch A2C/PPO agents
//! over a dense tanh network, CSV trace recording/replay, and an evaluation
//! harness for the six battery metrics.

pub mod catalog;
pub mod checkpoint;
pub mod env;
pub mod eval;
pub mod gradcheck;
pub mod loss;
pub mod nn;
pub mod observation;
pub mod optim;
pub mod rl;
pub mod scenario;
pub mod trace;

pub use catalog::{ActionCatalog, ActionGroup, ActionSpec, Platform, ACTION_COUNT};
pub use env::{EnvError, Environment, Goal, RewardScheme, SimEnv, StepInfo, StepOutcome};
pub use observation::{Observation, OBS_LEN};
pub use rl::{
    derive_seed, discounted_returns, Agent, Algorithm, GreedyAgent, PolicyAlgorithm, RandomAgent,
    Rollout, SamplingAgent, TrainLog, TrainResult, TrainerConfig, Transition,
};
pub use scenario::{HostSpec, Scenario, ScenarioError};
