//! Instance generators: minimax hard instances, the local alternative `P'`,
//! and the structured families (deterministic, partially deterministic,
//! fast mixing, contextual bandit, random Dirichlet).

use ndarray::{Array1, Array3, Array4, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{occupancy_measure, optimal_planning, Mdp, Policy, RewardNoise};
use crate::sampling::CountTable;
use crate::scalar::{mean_var, Real};

/// Which of the first two actions carries the larger success probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimalArm {
    A1,
    A2,
}

/// Three-state instance `s1` (index 0), `s+` (index 1, reward 1, absorbing)
/// and `s-` (index 2, reward 0, absorbing). At step `shift` action `a` moves
/// `s1` to `s+` with its success probability and to `s-` otherwise; before
/// that step `s1` is absorbing with zero reward.
#[derive(Debug, Clone, PartialEq)]
pub struct HardInstanceParams<T> {
    pub num_actions: usize,
    pub horizon: usize,
    pub p_star: T,
    pub p: T,
    pub which_optimal: OptimalArm,
    /// 1-based decision step of the branching transition.
    pub shift: usize,
    /// Behavior action probabilities at `s1`; uniform elsewhere.
    pub mu_weights: Vec<T>,
}

impl<T: Real> HardInstanceParams<T> {
    /// `p* = p_star`, every other arm `p`, uniform behavior, branching at step 1.
    pub fn new(num_actions: usize, horizon: usize, p_star: T, p: T) -> Self {
        HardInstanceParams {
            num_actions,
            horizon,
            p_star,
            p,
            which_optimal: OptimalArm::A1,
            shift: 1,
            mu_weights: vec![T::one() / T::from_count(num_actions as u64); num_actions],
        }
    }

    /// Success probabilities `1/2 +- kappa / (2 sqrt n)`, so the arm gap
    /// shrinks at the statistical resolution of `n` episodes.
    pub fn local(num_actions: usize, horizon: usize, n: usize, kappa: T) -> Self {
        let half = T::lit(0.5);
        let eps = kappa / (T::lit(2.0) * T::from_count(n as u64).sqrt());
        HardInstanceParams::new(num_actions, horizon, half + eps, half - eps)
    }

    /// Success probability of each action.
    pub fn arm_probabilities(&self) -> Vec<T> {
        let mut probs = vec![self.p; self.num_actions];
        match self.which_optimal {
            OptimalArm::A1 => probs[0] = self.p_star,
            OptimalArm::A2 => probs[1] = self.p_star,
        }
        probs
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = (T::lit(0.25), T::lit(0.75));
        if self.num_actions < 2 {
            return Err(Error::param("hard instance needs at least 2 actions"));
        }
        if self.horizon < 2 {
            return Err(Error::param("hard instance needs H >= 2"));
        }
        if self.shift < 1 || self.shift >= self.horizon {
            return Err(Error::param(format!("shift {} outside 1..{}", self.shift, self.horizon)));
        }
        for (name, v) in [("p_star", self.p_star), ("p", self.p)] {
            if !(v >= lo && v <= hi) {
                return Err(Error::param(format!("{name} = {v} outside [1/4, 3/4]")));
            }
        }
        if self.p_star <= self.p {
            return Err(Error::param(format!("p_star = {} must exceed p = {}", self.p_star, self.p)));
        }
        if self.mu_weights.len() != self.num_actions {
            return Err(Error::shape(format!(
                "{} behavior weights for {} actions",
                self.mu_weights.len(),
                self.num_actions
            )));
        }
        if !(self.mu_weights[0] > T::zero() && self.mu_weights[1] > T::zero()) {
            return Err(Error::param("behavior must play both a1 and a2 with positive probability"));
        }
        Ok(())
    }
}

pub fn hard_minimax_instance<T: Real>(params: &HardInstanceParams<T>) -> Result<(Mdp<T>, Policy<T>)> {
    params.validate()?;
    let (hn, an) = (params.horizon, params.num_actions);
    let t = params.shift - 1;
    let arms = params.arm_probabilities();
    let mut p = Array4::zeros((hn, 3, an, 3));
    let mut r = Array3::zeros((hn, 3, an));
    for h in 0..hn {
        for a in 0..an {
            if h == t {
                p[[h, 0, a, 1]] = arms[a];
                p[[h, 0, a, 2]] = T::one() - arms[a];
            } else {
                p[[h, 0, a, 0]] = T::one();
            }
            p[[h, 1, a, 1]] = T::one();
            p[[h, 2, a, 2]] = T::one();
            r[[h, 1, a]] = T::one();
        }
    }
    let m = Mdp::new(p, r, RewardNoise::Deterministic, Array1::from(vec![T::one(), T::zero(), T::zero()]))?;
    let mut probs = Array3::from_elem((hn, 3, an), T::one() / T::from_count(an as u64));
    for h in 0..hn {
        for a in 0..an {
            probs[[h, 0, a]] = params.mu_weights[a];
        }
    }
    Ok((m, Policy::new(probs)?))
}

/// Two-branch instance for the assumption-free setting.
///
/// From `s0` every action reaches the goal branch `sG` with probability `q`
/// and the noisy branch `sN` otherwise. In `sG` (absorbing) only the highest
/// action index pays reward 1, and the behavior policy never plays it. In
/// `sN` the next step is a hard decision: action `a` leads to the rewarding
/// absorbing state `s+` with probability `p_star` for `a = 1` and `p`
/// otherwise, else to `s-`.
/// States: `s0 = 0`, `sG = 1`, `sN = 2`, `s+ = 3`, `s- = 4`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlindBranchParams<T> {
    pub num_actions: usize,
    pub horizon: usize,
    pub q: T,
    pub p_star: T,
    pub p: T,
}

impl<T: Real> BlindBranchParams<T> {
    /// Noisy-branch arms at `1/2 +- kappa / (2 sqrt n)`.
    pub fn local(num_actions: usize, horizon: usize, q: T, n: usize, kappa: T) -> Self {
        let local = HardInstanceParams::local(num_actions, horizon, n, kappa);
        BlindBranchParams {
            num_actions,
            horizon,
            q,
            p_star: local.p_star,
            p: local.p,
        }
    }
}

pub fn blind_branch_instance<T: Real>(params: &BlindBranchParams<T>) -> Result<(Mdp<T>, Policy<T>)> {
    let (hn, an) = (params.horizon, params.num_actions);
    if an < 2 || hn < 3 {
        return Err(Error::param("blind-branch instance needs A >= 2 and H >= 3"));
    }
    if !(params.q > T::zero() && params.q < T::one()) {
        return Err(Error::param(format!("q = {} outside (0, 1)", params.q)));
    }
    for v in [params.p_star, params.p] {
        if !(v >= T::zero() && v <= T::one()) {
            return Err(Error::param(format!("success probability {v} outside [0, 1]")));
        }
    }
    let (s0, sg, sn, plus, minus) = (0, 1, 2, 3, 4);
    let blind = an - 1;
    let mut p = Array4::zeros((hn, 5, an, 5));
    let mut r = Array3::zeros((hn, 5, an));
    for h in 0..hn {
        for a in 0..an {
            if h == 0 {
                p[[h, s0, a, sg]] = params.q;
                p[[h, s0, a, sn]] = T::one() - params.q;
            } else {
                p[[h, s0, a, s0]] = T::one();
            }
            if h == 1 {
                let success = if a == 1 { params.p_star } else { params.p };
                p[[h, sn, a, plus]] = success;
                p[[h, sn, a, minus]] = T::one() - success;
            } else {
                p[[h, sn, a, sn]] = T::one();
            }
            p[[h, sg, a, sg]] = T::one();
            p[[h, plus, a, plus]] = T::one();
            p[[h, minus, a, minus]] = T::one();
            r[[h, plus, a]] = T::one();
        }
        r[[h, sg, blind]] = T::one();
    }
    let mut initial = Array1::zeros(5);
    initial[s0] = T::one();
    let m = Mdp::new(p, r, RewardNoise::Deterministic, initial)?;
    let mut probs = Array3::from_elem((hn, 5, an), T::one() / T::from_count(an as u64));
    let seen = T::one() / T::from_count((an - 1) as u64);
    for h in 0..hn {
        for a in 0..an {
            probs[[h, sg, a]] = if a == blind { T::zero() } else { seen };
        }
    }
    Ok((m, Policy::new(probs)?))
}

/// Visit counts entering the denominator of the local perturbation.
#[derive(Debug, Clone, PartialEq)]
pub enum CountsSource<T> {
    /// `n_sa = n d^mu_h(s, a)`.
    Expected { n: usize, occupancy: Array3<T> },
    /// Counts of an actual dataset.
    Dataset(CountTable<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalInstanceParams<T> {
    pub zeta: T,
    pub counts: CountsSource<T>,
}

impl<T: Real> LocalInstanceParams<T> {
    /// Expected counts of `n` episodes of `mu`, with `zeta = H / dbar_m`.
    pub fn expected(m: &Mdp<T>, mu: &Policy<T>, n: usize) -> Result<Self> {
        let occ = occupancy_measure(m, mu)?;
        let dbar = occ.d.iter().copied().filter(|&d| d > T::zero()).fold(T::infinity(), T::min);
        Ok(LocalInstanceParams {
            zeta: T::from_count(m.horizon() as u64) / dbar,
            counts: CountsSource::Expected { n, occupancy: occ.d },
        })
    }

    fn count(&self, h: usize, s: usize, a: usize) -> T {
        match &self.counts {
            CountsSource::Expected { n, occupancy } => T::from_count(*n as u64) * occupancy[[h, s, a]],
            CountsSource::Dataset(c) => T::from_count(c.n_sa[[h, s, a]]),
        }
    }

    fn shape(&self) -> (usize, usize, usize) {
        match &self.counts {
            CountsSource::Expected { occupancy, .. } => occupancy.dim(),
            CountsSource::Dataset(c) => c.shape(),
        }
    }
}

/// The local alternative `P'_h(s'|s,a) = P_h(s'|s,a) (1 + (V*(s') - E V*) /
/// (8 sqrt(zeta n_sa Var V*)))`, left unperturbed where the variance or the
/// count is zero. Rewards and the initial distribution are unchanged.
pub fn local_alternative<T: Real>(m: &Mdp<T>, params: &LocalInstanceParams<T>) -> Result<Mdp<T>> {
    if !(params.zeta > T::zero()) || !params.zeta.is_finite() {
        return Err(Error::param(format!("zeta = {} must be positive and finite", params.zeta)));
    }
    if params.shape() != m.shape() {
        return Err(Error::shape(format!("counts are {:?}, MDP is {:?}", params.shape(), m.shape())));
    }
    let (star, _) = optimal_planning(m);
    let (hn, sn, an) = m.shape();
    let mut p = m.transitions().clone();
    for h in 0..hn {
        let next = star.next_values(h);
        for s in 0..sn {
            for a in 0..an {
                let row = m.transition_row(h, s, a);
                let (mean, var) = mean_var(row.iter().copied(), next.iter().copied());
                let n = params.count(h, s, a);
                if var <= T::zero() || n <= T::zero() {
                    continue;
                }
                let denom = T::lit(8.0) * (params.zeta * n * var).sqrt();
                for s2 in 0..sn {
                    let q = row[s2] * (T::one() + (next[s2] - mean) / denom);
                    if q < T::zero() {
                        return Err(Error::NonnegativityViolation {
                            step: h + 1,
                            state: s,
                            action: a,
                            next_state: s2,
                            value: q.as_f64(),
                        });
                    }
                    p[[h, s, a, s2]] = q;
                }
            }
        }
    }
    m.with_transitions(p)
}

/// Smallest episode count for which [`local_alternative`] with expected
/// counts of `mu` keeps every entry nonnegative.
pub fn local_alternative_threshold<T: Real>(m: &Mdp<T>, mu: &Policy<T>) -> Result<T> {
    let params = LocalInstanceParams::expected(m, mu, 1)?;
    let CountsSource::Expected { occupancy, .. } = &params.counts else {
        unreachable!()
    };
    let (star, _) = optimal_planning(m);
    let (hn, sn, an) = m.shape();
    let mut threshold = T::zero();
    for h in 0..hn {
        let next = star.next_values(h);
        for s in 0..sn {
            for a in 0..an {
                let d = occupancy[[h, s, a]];
                let row = m.transition_row(h, s, a);
                let (mean, var) = mean_var(row.iter().copied(), next.iter().copied());
                if var <= T::zero() || d <= T::zero() {
                    continue;
                }
                for s2 in 0..sn {
                    if row[s2] > T::zero() && next[s2] < mean {
                        let gap = mean - next[s2];
                        threshold = threshold.max(gap * gap / (T::lit(64.0) * params.zeta * d * var));
                    }
                }
            }
        }
    }
    Ok(threshold)
}

/// Squared Hellinger distance `1 - sum sqrt(p q)`, clamped to `[0, 1]`.
pub fn hellinger_sq<T: Real>(p: ArrayView1<'_, T>, q: ArrayView1<'_, T>) -> Result<T> {
    if p.len() != q.len() {
        return Err(Error::shape(format!("distributions of length {} and {}", p.len(), q.len())));
    }
    let bc: T = p.iter().zip(q.iter()).map(|(&a, &b)| (a * b).sqrt()).sum();
    Ok((T::one() - bc).max(T::zero()).min(T::one()))
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn dirichlet<T: Real>(rng: &mut ChaCha8Rng, len: usize, alpha: f64) -> Array1<T> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive Dirichlet concentration");
    let mut w: Vec<f64> = (0..len).map(|_| gamma.sample(rng)).collect();
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        w = vec![1.0; len];
    }
    let total: f64 = w.iter().sum();
    let mut out = Array1::from_iter(w.iter().map(|&x| T::lit(x / total)));
    crate::sampling::renormalize_vec(&mut out);
    out
}

fn uniform_reward<T: Real>(rng: &mut ChaCha8Rng) -> T {
    T::lit(rng.random::<f64>())
}

fn check_dims(sn: usize, an: usize, hn: usize) -> Result<()> {
    if sn == 0 || an == 0 || hn == 0 {
        return Err(Error::param("S, A and H must be positive"));
    }
    Ok(())
}

fn point_mass<T: Real>(sn: usize, s: usize) -> Array1<T> {
    let mut d = Array1::zeros(sn);
    d[s] = T::one();
    d
}

/// Random deterministic next states and uniform deterministic rewards,
/// started from state 0.
pub fn deterministic_system<T: Real>(sn: usize, an: usize, hn: usize, seed: u64) -> Result<Mdp<T>> {
    check_dims(sn, an, hn)?;
    let mut rng = rng(seed);
    let mut p = Array4::zeros((hn, sn, an, sn));
    let mut r = Array3::zeros((hn, sn, an));
    for h in 0..hn {
        for s in 0..sn {
            for a in 0..an {
                p[[h, s, a, rng.random_range(0..sn)]] = T::one();
                r[[h, s, a]] = uniform_reward(&mut rng);
            }
        }
    }
    Mdp::new(p, r, RewardNoise::Deterministic, point_mass(sn, 0))
}

/// Deterministic system except at `num_stochastic` randomly chosen steps among
/// the first `H - 1`, whose rows are Dirichlet(1). The last step is excluded
/// because nothing follows it.
pub fn partially_deterministic<T: Real>(sn: usize, an: usize, hn: usize, num_stochastic: usize, seed: u64) -> Result<Mdp<T>> {
    check_dims(sn, an, hn)?;
    if num_stochastic > hn - 1 {
        return Err(Error::param(format!(
            "{num_stochastic} stochastic steps requested but only {} steps precede the last",
            hn - 1
        )));
    }
    let mut rng = rng(seed);
    let steps = rand::seq::index::sample(&mut rng, hn - 1, num_stochastic).into_vec();
    let mut p = Array4::zeros((hn, sn, an, sn));
    let mut r = Array3::zeros((hn, sn, an));
    for h in 0..hn {
        let stochastic = steps.contains(&h);
        for s in 0..sn {
            for a in 0..an {
                if stochastic {
                    p.slice_mut(ndarray::s![h, s, a, ..]).assign(&dirichlet::<T>(&mut rng, sn, 1.0));
                } else {
                    p[[h, s, a, rng.random_range(0..sn)]] = T::one();
                }
                r[[h, s, a]] = uniform_reward(&mut rng);
            }
        }
    }
    Mdp::new(p, r, RewardNoise::Deterministic, dirichlet(&mut rng, sn, 1.0))
}

/// `P_h(.|s, a) = nu_h` for a random `nu_h` per step.
pub fn fast_mixing<T: Real>(sn: usize, an: usize, hn: usize, seed: u64) -> Result<Mdp<T>> {
    check_dims(sn, an, hn)?;
    let mut rng = rng(seed);
    let initial = dirichlet(&mut rng, sn, 1.0);
    let mut p = Array4::zeros((hn, sn, an, sn));
    let mut r = Array3::zeros((hn, sn, an));
    for h in 0..hn {
        let nu = dirichlet::<T>(&mut rng, sn, 1.0);
        for s in 0..sn {
            for a in 0..an {
                p.slice_mut(ndarray::s![h, s, a, ..]).assign(&nu);
                r[[h, s, a]] = uniform_reward(&mut rng);
            }
        }
    }
    Mdp::new(p, r, RewardNoise::Deterministic, initial)
}

/// `H = 1`, random contexts, Bernoulli rewards with uniform means.
pub fn contextual_bandit<T: Real>(sn: usize, an: usize, seed: u64) -> Result<Mdp<T>> {
    check_dims(sn, an, 1)?;
    let mut rng = rng(seed);
    let initial = dirichlet(&mut rng, sn, 1.0);
    let p = Array4::from_elem((1, sn, an, sn), T::one() / T::from_count(sn as u64));
    let r = Array3::from_shape_simple_fn((1, sn, an), || uniform_reward(&mut rng));
    Mdp::new(p, r, RewardNoise::Bernoulli, initial)
}

/// Dirichlet(`alpha`) transition rows and initial distribution, uniform
/// deterministic rewards. Draws are made step by step, so a longer horizon
/// with the same seed extends a shorter one.
pub fn random_mdp<T: Real>(sn: usize, an: usize, hn: usize, seed: u64, alpha: f64) -> Result<Mdp<T>> {
    check_dims(sn, an, hn)?;
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::param(format!("Dirichlet concentration {alpha} must be positive")));
    }
    let mut rng = rng(seed);
    let initial = dirichlet(&mut rng, sn, alpha);
    let mut p = Array4::zeros((hn, sn, an, sn));
    let mut r = Array3::zeros((hn, sn, an));
    for h in 0..hn {
        for s in 0..sn {
            for a in 0..an {
                p.slice_mut(ndarray::s![h, s, a, ..]).assign(&dirichlet::<T>(&mut rng, sn, alpha));
                r[[h, s, a]] = uniform_reward(&mut rng);
            }
        }
    }
    Mdp::new(p, r, RewardNoise::Deterministic, initial)
}

/// Every transition row at step `h` is a point mass.
pub fn is_deterministic_step<T: Real>(m: &Mdp<T>, h: usize) -> bool {
    let (_, sn, an) = m.shape();
    (0..sn).all(|s| (0..an).all(|a| m.transition_row(h, s, a).iter().any(|&p| p == T::one())))
}

/// Every transition row at step `h` is the same distribution.
pub fn is_state_action_independent_step<T: Real>(m: &Mdp<T>, h: usize) -> bool {
    let first = m.transition_row(h, 0, 0);
    let (_, sn, an) = m.shape();
    (0..sn).all(|s| (0..an).all(|a| m.transition_row(h, s, a) == first))
}
