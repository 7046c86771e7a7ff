use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{fit_empirical_model, iota};
use crate::mdp::{optimal_planning, policy_evaluation};
use crate::sampling::{count, rollout};
use crate::{Mdp64, Policy64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiRewardResult {
    pub gaps: Vec<f64>,
    pub max_gap: f64,
    /// `ln(H S A K / delta)`, the log factor of a bound uniform over the tasks.
    pub iota: f64,
}

/// One exploration dataset from `mu` (rewards unused), then exact planning on
/// the empirical transitions once per reward table. Gaps are measured on the
/// true MDP carrying that table.
pub fn multi_reward_experiment(
    m: &Mdp64,
    mu: &Policy64,
    rewards: &[Array3<f64>],
    n: usize,
    seed: u64,
    delta: f64,
) -> Result<MultiRewardResult> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param(format!("delta {delta} outside (0, 1)")));
    }
    if rewards.is_empty() {
        return Err(Error::param("at least one reward table is required"));
    }
    let shape = m.shape();
    for (k, r) in rewards.iter().enumerate() {
        if r.dim() != shape {
            return Err(Error::shape(format!("reward table {k} is {:?}, MDP is {:?}", r.dim(), shape)));
        }
        if let Some(x) = r.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::param(format!("reward table {k} has entry {x} outside [0, 1]")));
        }
    }
    let data = rollout(m, mu, n, seed)?;
    let base = fit_empirical_model(&count(&data));
    let mut gaps = Vec::with_capacity(rewards.len());
    for r in rewards {
        let (_, pi) = optimal_planning(&base.to_mdp(Some(r))?);
        let mk = m.with_rewards(r.clone())?;
        let (star, _) = optimal_planning(&mk);
        gaps.push(star.value - policy_evaluation(&mk, &pi)?.value);
    }
    let max_gap = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (hn, sn, an) = shape;
    Ok(MultiRewardResult {
        gaps,
        max_gap,
        iota: iota(hn, sn, an * rewards.len(), delta),
    })
}

/// `k` reward tables with entries uniform on `[0, 1]`.
pub fn random_reward_tables(shape: (usize, usize, usize), k: usize, seed: u64) -> Vec<Array3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k).map(|_| Array3::from_shape_simple_fn(shape, || rng.random::<f64>())).collect()
}
