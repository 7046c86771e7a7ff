//! Seeded experiment sweeps, rate fitting and the multi-reward experiment.

pub mod config;
pub mod multi_reward;
pub mod rate;
pub mod sweep;

pub use config::{Algorithm, BehaviorSpec, ConstantsMode, InstanceSpec, SweepConfig};
pub use multi_reward::{multi_reward_experiment, random_reward_tables, MultiRewardResult};
pub use rate::{fit_rate, median, RateFit};
pub use sweep::{run_sweep, trial_seed, AlgorithmRate, SweepResult, SweepRow};
