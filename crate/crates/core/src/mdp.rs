//! Finite-horizon tabular MDPs and their exact dynamic-programming machinery.
//!
//! Steps are 0-based in the API: `h = 0` is the first decision step and the
//! value tables carry an explicit all-zero row at index `H`.

use ndarray::{Array1, Array2, Array3, Array4, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, MdpError, Result};
use crate::scalar::{argmax_lowest, mean_var, Real};

/// How realized rewards are drawn around the mean reward table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardNoise {
    /// The realized reward equals the mean.
    Deterministic,
    /// The realized reward is 1 with probability equal to the mean, else 0.
    Bernoulli,
}

impl RewardNoise {
    /// Variance of the realized reward with the given mean.
    pub fn variance<T: Real>(self, mean: T) -> T {
        match self {
            RewardNoise::Deterministic => T::zero(),
            RewardNoise::Bernoulli => mean * (T::one() - mean),
        }
    }

    /// Largest reward that can be realized with the given mean.
    pub fn max_realized<T: Real>(self, mean: T) -> T {
        match self {
            RewardNoise::Deterministic => mean,
            RewardNoise::Bernoulli if mean > T::zero() => T::one(),
            RewardNoise::Bernoulli => T::zero(),
        }
    }
}

/// Time-inhomogeneous tabular MDP with horizon `H`, `S` states and `A` actions.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp<T> {
    transitions: Array4<T>,
    rewards: Array3<T>,
    reward_noise: RewardNoise,
    initial: Array1<T>,
}

impl<T: Real> Mdp<T> {
    /// Builds an MDP from `P[h, s, a, s']`, `r[h, s, a]` and `d1[s]`,
    /// validating every invariant.
    pub fn new(
        transitions: Array4<T>,
        rewards: Array3<T>,
        reward_noise: RewardNoise,
        initial: Array1<T>,
    ) -> Result<Self> {
        let (h, s, a, s2) = transitions.dim();
        if rewards.dim() != (h, s, a) || s2 != s || initial.len() != s {
            return Err(Error::shape(format!(
                "P is {:?}, r is {:?}, d1 has {} entries",
                transitions.dim(),
                rewards.dim(),
                initial.len()
            )));
        }
        let m = Mdp {
            transitions,
            rewards,
            reward_noise,
            initial,
        };
        validate_mdp(&m)?;
        Ok(m)
    }

    pub fn horizon(&self) -> usize {
        self.rewards.dim().0
    }

    pub fn num_states(&self) -> usize {
        self.rewards.dim().1
    }

    pub fn num_actions(&self) -> usize {
        self.rewards.dim().2
    }

    /// `(H, S, A)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        self.rewards.dim()
    }

    pub fn transitions(&self) -> &Array4<T> {
        &self.transitions
    }

    pub fn transition_row(&self, h: usize, s: usize, a: usize) -> ArrayView1<'_, T> {
        self.transitions.slice(ndarray::s![h, s, a, ..])
    }

    pub fn rewards(&self) -> &Array3<T> {
        &self.rewards
    }

    pub fn reward(&self, h: usize, s: usize, a: usize) -> T {
        self.rewards[[h, s, a]]
    }

    pub fn reward_noise(&self) -> RewardNoise {
        self.reward_noise
    }

    pub fn initial(&self) -> &Array1<T> {
        &self.initial
    }

    /// Same dynamics with a different mean-reward table.
    pub fn with_rewards(&self, rewards: Array3<T>) -> Result<Self> {
        Mdp::new(
            self.transitions.clone(),
            rewards,
            self.reward_noise,
            self.initial.clone(),
        )
    }

    pub fn with_reward_noise(mut self, noise: RewardNoise) -> Self {
        self.reward_noise = noise;
        self
    }

    /// Same rewards with a different transition kernel.
    pub fn with_transitions(&self, transitions: Array4<T>) -> Result<Self> {
        Mdp::new(
            transitions,
            self.rewards.clone(),
            self.reward_noise,
            self.initial.clone(),
        )
    }

    /// Same MDP started from a different initial distribution.
    pub fn with_initial(&self, initial: Array1<T>) -> Result<Self> {
        Mdp::new(
            self.transitions.clone(),
            self.rewards.clone(),
            self.reward_noise,
            initial,
        )
    }

    /// `(P_h V)(s, a)`.
    pub fn expected_next(&self, h: usize, s: usize, a: usize, next_value: ArrayView1<'_, T>) -> T {
        self.transition_row(h, s, a).dot(&next_value)
    }
}

/// Checks every [`Mdp`] invariant, reporting the first violation found in
/// `(h, s, a)` order.
pub fn validate_mdp<T: Real>(m: &Mdp<T>) -> Result<(), MdpError> {
    let (hn, sn, an) = m.shape();
    if hn == 0 || sn == 0 || an == 0 {
        return Err(MdpError::EmptyDimension);
    }
    let tol = T::INPUT_TOL;
    for h in 0..hn {
        for s in 0..sn {
            for a in 0..an {
                let row = m.transition_row(h, s, a);
                let mut sum = T::zero();
                for (next, &p) in row.iter().enumerate() {
                    if p < T::zero() || !p.is_finite() {
                        return Err(MdpError::NegativeMass {
                            step: h + 1,
                            state: s,
                            action: a,
                            next_state: next,
                            value: p.as_f64(),
                        });
                    }
                    sum = sum + p;
                }
                if (sum - T::one()).abs() > tol {
                    return Err(MdpError::RowSum {
                        step: h + 1,
                        state: s,
                        action: a,
                        sum: sum.as_f64(),
                    });
                }
                let r = m.reward(h, s, a);
                if !(r >= T::zero() && r <= T::one()) {
                    return Err(MdpError::RewardOutOfRange {
                        step: h + 1,
                        state: s,
                        action: a,
                        value: r.as_f64(),
                    });
                }
            }
        }
    }
    let mut sum = T::zero();
    for (s, &p) in m.initial.iter().enumerate() {
        if p < T::zero() || !p.is_finite() {
            return Err(MdpError::NegativeInitial {
                state: s,
                value: p.as_f64(),
            });
        }
        sum = sum + p;
    }
    if (sum - T::one()).abs() > tol {
        return Err(MdpError::InitialSum { sum: sum.as_f64() });
    }
    Ok(())
}

/// Per-step stochastic policy, `probs[h, s, a] = pi_h(a | s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyDocument<T>", into = "PolicyDocument<T>")]
#[serde(bound = "T: Real")]
pub struct Policy<T: Real> {
    probs: Array3<T>,
}

impl<T: Real> Policy<T> {
    pub fn new(probs: Array3<T>) -> Result<Self> {
        let (hn, sn, an) = probs.dim();
        if hn == 0 || sn == 0 || an == 0 {
            return Err(MdpError::EmptyDimension.into());
        }
        for h in 0..hn {
            for s in 0..sn {
                let row = probs.slice(ndarray::s![h, s, ..]);
                let sum: T = row.iter().copied().sum();
                let min = row.iter().copied().fold(T::infinity(), T::min);
                if min < T::zero() || (sum - T::one()).abs() > T::INPUT_TOL || !sum.is_finite() {
                    return Err(MdpError::PolicyRow {
                        step: h + 1,
                        state: s,
                        sum: sum.as_f64(),
                        min: min.as_f64(),
                    }
                    .into());
                }
            }
        }
        Ok(Policy { probs })
    }

    pub fn uniform(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        let p = T::one() / T::from_count(num_actions as u64);
        Policy {
            probs: Array3::from_elem((horizon, num_states, num_actions), p),
        }
    }

    /// Deterministic policy from an `[H, S]` table of action indices.
    pub fn deterministic(actions: &Array2<usize>, num_actions: usize) -> Result<Self> {
        let (hn, sn) = actions.dim();
        let mut probs = Array3::zeros((hn, sn, num_actions));
        for ((h, s), &a) in actions.indexed_iter() {
            if a >= num_actions {
                return Err(Error::shape(format!(
                    "action {a} at (h={h}, s={s}) but only {num_actions} actions"
                )));
            }
            probs[[h, s, a]] = T::one();
        }
        Policy::new(probs)
    }

    /// `(1 - eps) * base + eps * uniform`.
    pub fn epsilon_mix(base: &Policy<T>, eps: T) -> Result<Self> {
        if !(eps >= T::zero() && eps <= T::one()) {
            return Err(Error::param(format!("epsilon {eps} outside [0, 1]")));
        }
        let (hn, sn, an) = base.shape();
        let uniform = T::one() / T::from_count(an as u64);
        let probs = base
            .probs
            .mapv(|p| (T::one() - eps) * p + eps * uniform);
        let _ = (hn, sn);
        Policy::new(probs)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.probs.dim()
    }

    pub fn probs(&self) -> &Array3<T> {
        &self.probs
    }

    pub fn prob(&self, h: usize, s: usize, a: usize) -> T {
        self.probs[[h, s, a]]
    }

    pub fn row(&self, h: usize, s: usize) -> ArrayView1<'_, T> {
        self.probs.slice(ndarray::s![h, s, ..])
    }

    /// The action taken with probability one, if the row is a point mass.
    pub fn action(&self, h: usize, s: usize) -> Option<usize> {
        self.row(h, s).iter().position(|&p| p == T::one())
    }

    pub fn is_deterministic(&self) -> bool {
        let (hn, sn, _) = self.shape();
        (0..hn).all(|h| (0..sn).all(|s| self.action(h, s).is_some()))
    }

    pub(crate) fn check_against(&self, m: &Mdp<T>) -> Result<()> {
        if self.shape() != m.shape() {
            return Err(Error::shape(format!(
                "policy is {:?} but MDP is {:?}",
                self.shape(),
                m.shape()
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct PolicyDocument<T> {
    #[serde(rename = "H")]
    horizon: usize,
    #[serde(rename = "S")]
    num_states: usize,
    #[serde(rename = "A")]
    num_actions: usize,
    probs: Vec<Vec<Vec<T>>>,
}

impl<T: Real> From<Policy<T>> for PolicyDocument<T> {
    fn from(p: Policy<T>) -> Self {
        let (horizon, num_states, num_actions) = p.shape();
        PolicyDocument {
            horizon,
            num_states,
            num_actions,
            probs: nest3(&p.probs),
        }
    }
}

impl<T: Real> TryFrom<PolicyDocument<T>> for Policy<T> {
    type Error = Error;

    fn try_from(doc: PolicyDocument<T>) -> Result<Self> {
        let probs = flat3(&doc.probs, (doc.horizon, doc.num_states, doc.num_actions), "probs")?;
        Policy::new(probs)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub(crate) struct MdpDocument<T> {
    #[serde(rename = "H")]
    horizon: usize,
    #[serde(rename = "S")]
    num_states: usize,
    #[serde(rename = "A")]
    num_actions: usize,
    #[serde(rename = "P")]
    transitions: Vec<Vec<Vec<Vec<T>>>>,
    r: Vec<Vec<Vec<T>>>,
    reward_noise: RewardNoise,
    d1: Vec<T>,
}

impl<T: Real> From<&Mdp<T>> for MdpDocument<T> {
    fn from(m: &Mdp<T>) -> Self {
        let (horizon, num_states, num_actions) = m.shape();
        let transitions = (0..horizon)
            .map(|h| {
                (0..num_states)
                    .map(|s| {
                        (0..num_actions)
                            .map(|a| m.transition_row(h, s, a).to_vec())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        MdpDocument {
            horizon,
            num_states,
            num_actions,
            transitions,
            r: nest3(&m.rewards),
            reward_noise: m.reward_noise,
            d1: m.initial.to_vec(),
        }
    }
}

impl<T: Real> TryFrom<MdpDocument<T>> for Mdp<T> {
    type Error = Error;

    fn try_from(doc: MdpDocument<T>) -> Result<Self> {
        let (hn, sn, an) = (doc.horizon, doc.num_states, doc.num_actions);
        let mut transitions = Array4::zeros((hn, sn, an, sn));
        if doc.transitions.len() != hn {
            return Err(Error::shape(format!("P has {} steps, expected {hn}", doc.transitions.len())));
        }
        for (h, per_state) in doc.transitions.iter().enumerate() {
            if per_state.len() != sn {
                return Err(Error::shape(format!("P[{h}] has {} states, expected {sn}", per_state.len())));
            }
            for (s, per_action) in per_state.iter().enumerate() {
                if per_action.len() != an {
                    return Err(Error::shape(format!("P[{h}][{s}] has {} actions, expected {an}", per_action.len())));
                }
                for (a, row) in per_action.iter().enumerate() {
                    if row.len() != sn {
                        return Err(Error::shape(format!("P[{h}][{s}][{a}] has {} entries, expected {sn}", row.len())));
                    }
                    for (s2, &p) in row.iter().enumerate() {
                        transitions[[h, s, a, s2]] = p;
                    }
                }
            }
        }
        let rewards = flat3(&doc.r, (hn, sn, an), "r")?;
        if doc.d1.len() != sn {
            return Err(Error::shape(format!("d1 has {} entries, expected {sn}", doc.d1.len())));
        }
        Mdp::new(transitions, rewards, doc.reward_noise, Array1::from(doc.d1))
    }
}

impl<T: Real> Serialize for Mdp<T> {
    fn serialize<Ser: serde::Serializer>(&self, serializer: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        MdpDocument::from(self).serialize(serializer)
    }
}

impl<'de, T: Real> Deserialize<'de> for Mdp<T> {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let doc = MdpDocument::<T>::deserialize(deserializer)?;
        Mdp::try_from(doc).map_err(serde::de::Error::custom)
    }
}

pub(crate) fn nest3<T: Real>(t: &Array3<T>) -> Vec<Vec<Vec<T>>> {
    t.outer_iter()
        .map(|m| m.outer_iter().map(|row| row.to_vec()).collect())
        .collect()
}

pub(crate) fn flat3<T: Real>(
    nested: &[Vec<Vec<T>>],
    dim: (usize, usize, usize),
    name: &str,
) -> Result<Array3<T>> {
    let mut out = Array3::zeros(dim);
    if nested.len() != dim.0 {
        return Err(Error::shape(format!("{name} has {} steps, expected {}", nested.len(), dim.0)));
    }
    for (h, m) in nested.iter().enumerate() {
        if m.len() != dim.1 {
            return Err(Error::shape(format!("{name}[{h}] has {} rows, expected {}", m.len(), dim.1)));
        }
        for (s, row) in m.iter().enumerate() {
            if row.len() != dim.2 {
                return Err(Error::shape(format!("{name}[{h}][{s}] has {} entries, expected {}", row.len(), dim.2)));
            }
            for (a, &x) in row.iter().enumerate() {
                out[[h, s, a]] = x;
            }
        }
    }
    Ok(out)
}

/// State values `V[h, s]` for `h = 0..=H` (row `H` is zero), action values
/// `Q[h, s, a]`, and the scalar value `<d1, V_0>`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSolution<T> {
    pub values: Array2<T>,
    pub q: Array3<T>,
    pub value: T,
}

impl<T: Real> ValueSolution<T> {
    pub fn next_values(&self, h: usize) -> ArrayView1<'_, T> {
        self.values.row(h + 1)
    }
}

/// Exact evaluation of `pi` by backward recursion.
pub fn policy_evaluation<T: Real>(m: &Mdp<T>, pi: &Policy<T>) -> Result<ValueSolution<T>> {
    pi.check_against(m)?;
    let (hn, sn, an) = m.shape();
    let mut values = Array2::zeros((hn + 1, sn));
    let mut q = Array3::zeros((hn, sn, an));
    for h in (0..hn).rev() {
        for s in 0..sn {
            let mut v = T::zero();
            for a in 0..an {
                let qa = m.reward(h, s, a) + m.expected_next(h, s, a, values.row(h + 1));
                q[[h, s, a]] = qa;
                v = v + pi.prob(h, s, a) * qa;
            }
            values[[h, s]] = v;
        }
    }
    let value = m.initial().dot(&values.row(0));
    Ok(ValueSolution { values, q, value })
}

/// Optimal values and the deterministic greedy optimal policy; ties go to
/// the lowest action index.
pub fn optimal_planning<T: Real>(m: &Mdp<T>) -> (ValueSolution<T>, Policy<T>) {
    let (hn, sn, an) = m.shape();
    let mut values = Array2::zeros((hn + 1, sn));
    let mut q = Array3::zeros((hn, sn, an));
    let mut actions = Array2::zeros((hn, sn));
    for h in (0..hn).rev() {
        for s in 0..sn {
            for a in 0..an {
                q[[h, s, a]] = m.reward(h, s, a) + m.expected_next(h, s, a, values.row(h + 1));
            }
            let (best, v) = argmax_lowest((0..an).map(|a| q[[h, s, a]]));
            actions[[h, s]] = best;
            values[[h, s]] = v;
        }
    }
    let value = m.initial().dot(&values.row(0));
    let policy = Policy::deterministic(&actions, an).expect("greedy actions are in range");
    (ValueSolution { values, q, value }, policy)
}

/// State-action occupancy `d[h, s, a]` plus the state distribution at the
/// terminal step `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupancy<T> {
    pub d: Array3<T>,
    pub terminal: Array1<T>,
}

impl<T: Real> Occupancy<T> {
    pub fn get(&self, h: usize, s: usize, a: usize) -> T {
        self.d[[h, s, a]]
    }

    /// Marginal state distribution at step `h` (`h = H` gives the terminal one).
    pub fn state_dist(&self, h: usize) -> Array1<T> {
        if h == self.d.dim().0 {
            self.terminal.clone()
        } else {
            self.d.index_axis(Axis(0), h).sum_axis(Axis(1))
        }
    }

    /// `sum_{h, s, a} d[h, s, a] * table[h, s, a]`.
    pub fn integrate(&self, table: &Array3<T>) -> T {
        self.d.iter().zip(table.iter()).map(|(&d, &x)| d * x).sum()
    }
}

/// Forward recursion for the occupancy of `pi` started from `d1`.
pub fn occupancy_measure<T: Real>(m: &Mdp<T>, pi: &Policy<T>) -> Result<Occupancy<T>> {
    pi.check_against(m)?;
    Ok(occupancy_from(m, pi, m.initial().view()))
}

pub(crate) fn occupancy_from<T: Real>(m: &Mdp<T>, pi: &Policy<T>, start: ArrayView1<'_, T>) -> Occupancy<T> {
    let (hn, sn, an) = m.shape();
    let mut d = Array3::zeros((hn, sn, an));
    let mut state = start.to_owned();
    for h in 0..hn {
        let mut next = Array1::zeros(sn);
        for s in 0..sn {
            if state[s] == T::zero() {
                continue;
            }
            for a in 0..an {
                let mass = state[s] * pi.prob(h, s, a);
                d[[h, s, a]] = mass;
                if mass == T::zero() {
                    continue;
                }
                next.scaled_add(mass, &m.transition_row(h, s, a));
            }
        }
        state = next;
    }
    Occupancy { d, terminal: state }
}

/// Conditional variances `[h, s, a]`, typically of `r_h + V*_{h+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceTable<T> {
    pub var: Array3<T>,
}

impl<T: Real> VarianceTable<T> {
    /// Variance of `r_h + values[h + 1]` for every step.
    pub fn for_values(m: &Mdp<T>, values: &Array2<T>) -> Result<Self> {
        let (hn, sn, an) = m.shape();
        let mut var = Array3::zeros((hn, sn, an));
        for h in 0..hn {
            let slice = conditional_variance(m, values.row(h + 1), h)?;
            var.index_axis_mut(Axis(0), h).assign(&slice);
        }
        let _ = (sn, an);
        Ok(VarianceTable { var })
    }

    /// Per-step maximum conditional variance (the environmental norm when
    /// the table was built from `V*`).
    pub fn env_norm(&self) -> Vec<T> {
        self.var
            .outer_iter()
            .map(|m| m.iter().copied().fold(T::zero(), T::max))
            .collect()
    }
}

/// `Var_{s' ~ P_h(.|s,a)}[next_value(s')] + Var[r_h(s,a)]` for every `(s, a)`.
pub fn conditional_variance<T: Real>(m: &Mdp<T>, next_value: ArrayView1<'_, T>, h: usize) -> Result<Array2<T>> {
    let (hn, sn, an) = m.shape();
    if h >= hn {
        return Err(Error::shape(format!("step {h} outside horizon {hn}")));
    }
    if next_value.len() != sn {
        return Err(Error::shape(format!("value vector has {} entries, expected {sn}", next_value.len())));
    }
    let upper = T::from_count(hn as u64);
    for (i, &v) in next_value.iter().enumerate() {
        if !(v >= -T::INPUT_TOL && v <= upper + T::INPUT_TOL) {
            return Err(Error::ValueOutOfRange {
                index: i,
                value: v.as_f64(),
                upper: upper.as_f64(),
            });
        }
    }
    let mut out = Array2::zeros((sn, an));
    for s in 0..sn {
        for a in 0..an {
            let row = m.transition_row(h, s, a);
            let (_, var) = mean_var(row.iter().copied(), next_value.iter().copied());
            out[[s, a]] = var + m.reward_noise().variance(m.reward(h, s, a));
        }
    }
    Ok(out)
}

/// Variance of the total realized return `sum_h r_h` under `pi`, by the
/// law-of-total-variance decomposition over steps (plus the spread of `V_0`
/// over the initial distribution).
pub fn return_variance<T: Real>(m: &Mdp<T>, pi: &Policy<T>) -> Result<T> {
    let sol = policy_evaluation(m, pi)?;
    let occ = occupancy_measure(m, pi)?;
    let (hn, sn, an) = m.shape();
    let (_, mut total) = mean_var(m.initial().iter().copied(), sol.values.row(0).iter().copied());
    for h in 0..hn {
        let cond = conditional_variance(m, sol.values.row(h + 1), h)?;
        for s in 0..sn {
            let ds: T = (0..an).map(|a| occ.get(h, s, a)).sum();
            if ds == T::zero() {
                continue;
            }
            for a in 0..an {
                total = total + occ.get(h, s, a) * cond[[s, a]];
            }
            let (_, spread) = mean_var(pi.row(h, s).iter().copied(), (0..an).map(|a| sol.q[[h, s, a]]));
            total = total + ds * spread;
        }
    }
    Ok(total.max(T::zero()))
}

/// Both sides of the extended value-difference identity, per start state.
///
/// `lhs[s] = V_hat_0(s) - V^{pi'}_0(s)` with `V_hat_h = <Q_hat_h, pi_h>`;
/// `policy_terms[h, s]` and `bellman_terms[h, s]` are the step-`h`
/// expectations under `pi'` started from `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvdDecomposition<T> {
    pub lhs: Array1<T>,
    pub policy_terms: Array2<T>,
    pub bellman_terms: Array2<T>,
}

impl<T: Real> EvdDecomposition<T> {
    pub fn rhs(&self) -> Array1<T> {
        self.policy_terms.sum_axis(Axis(0)) + self.bellman_terms.sum_axis(Axis(0))
    }
}

pub fn extended_value_difference<T: Real>(
    m: &Mdp<T>,
    qhat: &Array3<T>,
    pi: &Policy<T>,
    pi_prime: &Policy<T>,
) -> Result<EvdDecomposition<T>> {
    pi.check_against(m)?;
    pi_prime.check_against(m)?;
    if qhat.dim() != m.shape() {
        return Err(Error::shape(format!("Q table is {:?}, expected {:?}", qhat.dim(), m.shape())));
    }
    let (hn, sn, an) = m.shape();
    let mut vhat = Array2::zeros((hn + 1, sn));
    for h in 0..hn {
        for s in 0..sn {
            vhat[[h, s]] = (0..an).map(|a| qhat[[h, s, a]] * pi.prob(h, s, a)).sum();
        }
    }
    // Per-(h, s, a) integrands, then integrate them under pi' from each start.
    let mut gap = Array2::zeros((hn, sn));
    let mut bellman = Array3::zeros((hn, sn, an));
    for h in 0..hn {
        for s in 0..sn {
            gap[[h, s]] = (0..an)
                .map(|a| qhat[[h, s, a]] * (pi.prob(h, s, a) - pi_prime.prob(h, s, a)))
                .sum();
            for a in 0..an {
                let target = m.reward(h, s, a) + m.expected_next(h, s, a, vhat.row(h + 1));
                bellman[[h, s, a]] = qhat[[h, s, a]] - target;
            }
        }
    }
    let truth = policy_evaluation(m, pi_prime)?;
    let mut lhs = Array1::zeros(sn);
    let mut policy_terms = Array2::zeros((hn, sn));
    let mut bellman_terms = Array2::zeros((hn, sn));
    for start in 0..sn {
        lhs[start] = vhat[[0, start]] - truth.values[[0, start]];
        let mut point = Array1::zeros(sn);
        point[start] = T::one();
        let occ = occupancy_from(m, pi_prime, point.view());
        for h in 0..hn {
            let mut pt = T::zero();
            let mut bt = T::zero();
            for s in 0..sn {
                let ds: T = (0..an).map(|a| occ.get(h, s, a)).sum();
                pt = pt + ds * gap[[h, s]];
                for a in 0..an {
                    bt = bt + occ.get(h, s, a) * bellman[[h, s, a]];
                }
            }
            policy_terms[[h, start]] = pt;
            bellman_terms[[h, start]] = bt;
        }
    }
    Ok(EvdDecomposition {
        lhs,
        policy_terms,
        bellman_terms,
    })
}
