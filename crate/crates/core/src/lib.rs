//! Pessimistic offline reinforcement learning for tabular finite-horizon MDPs.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the
//! `*64` aliases below fix the scalar to `f64`, which is what the CLI and
//! the experiment harness use.

pub mod bounds;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod io;
pub mod mdp;
pub mod ope;
pub mod planners;
pub mod sampling;
pub mod scalar;
pub mod zoo;

pub use error::{Error, MdpError, Result};
pub use mdp::{
    conditional_variance, extended_value_difference, occupancy_measure, optimal_planning,
    policy_evaluation, return_variance, validate_mdp, EvdDecomposition, Mdp, Occupancy, Policy,
    RewardNoise, ValueSolution, VarianceTable,
};
pub use scalar::Real;

pub type Mdp64 = Mdp<f64>;
pub type Mdp32 = Mdp<f32>;
pub type Policy64 = Policy<f64>;
pub type Policy32 = Policy<f32>;
pub type ValueSolution64 = ValueSolution<f64>;
pub type Occupancy64 = Occupancy<f64>;
