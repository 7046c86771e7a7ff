//! Offline data generation and exact coverage diagnostics.

use ndarray::{Array1, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mdp::{occupancy_measure, Mdp, Occupancy, Policy, RewardNoise};
use crate::scalar::Real;

/// One logged transition `(s_h, a_h, r_h, s_{h+1})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step<T> {
    pub s: usize,
    pub a: usize,
    pub r: T,
    pub s_next: usize,
}

/// Shape and provenance of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetMeta {
    pub n: usize,
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub seed: u64,
}

/// `n` episodes of `H` steps each, stored episode-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    meta: DatasetMeta,
    steps: Vec<Step<T>>,
}

impl<T: Real> Dataset<T> {
    /// Builds a dataset from episode-major steps, checking every index and
    /// reward.
    pub fn new(meta: DatasetMeta, steps: Vec<Step<T>>) -> Result<Self> {
        if meta.n == 0 || meta.horizon == 0 || meta.num_states == 0 || meta.num_actions == 0 {
            return Err(Error::param("dataset dimensions must be positive"));
        }
        if steps.len() != meta.n * meta.horizon {
            return Err(Error::shape(format!(
                "{} steps for n={} episodes of length {}",
                steps.len(),
                meta.n,
                meta.horizon
            )));
        }
        for (i, st) in steps.iter().enumerate() {
            if st.s >= meta.num_states || st.s_next >= meta.num_states || st.a >= meta.num_actions {
                return Err(Error::shape(format!(
                    "episode {} step {}: index out of range ({}, {}, {})",
                    i / meta.horizon,
                    i % meta.horizon,
                    st.s,
                    st.a,
                    st.s_next
                )));
            }
            if !(st.r >= T::zero() && st.r <= T::one()) {
                return Err(Error::param(format!(
                    "episode {} step {}: reward {} outside [0, 1]",
                    i / meta.horizon,
                    i % meta.horizon,
                    st.r
                )));
            }
        }
        Ok(Dataset { meta, steps })
    }

    pub fn meta(&self) -> DatasetMeta {
        self.meta
    }

    pub fn len(&self) -> usize {
        self.meta.n
    }

    pub fn is_empty(&self) -> bool {
        self.meta.n == 0
    }

    pub fn steps(&self) -> &[Step<T>] {
        &self.steps
    }

    pub fn episode(&self, i: usize) -> &[Step<T>] {
        let h = self.meta.horizon;
        &self.steps[i * h..(i + 1) * h]
    }

    pub fn episodes(&self) -> impl Iterator<Item = &[Step<T>]> {
        self.steps.chunks(self.meta.horizon)
    }
}

/// Draws an index from a probability vector with a single `f64` uniform,
/// never returning an index of zero mass.
pub(crate) fn sample_index<T: Real, R: Rng>(rng: &mut R, probs: impl Iterator<Item = T>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        let p = p.as_f64();
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Generator for episode `episode` of a run seeded with `seed`.
pub(crate) fn episode_rng(seed: u64, episode: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode);
    rng
}

fn realize_reward<T: Real, R: Rng>(rng: &mut R, noise: RewardNoise, mean: T) -> T {
    match noise {
        RewardNoise::Deterministic => mean,
        RewardNoise::Bernoulli => {
            let u: f64 = rng.random();
            if u < mean.as_f64() {
                T::one()
            } else {
                T::zero()
            }
        }
    }
}

/// Rolls out `mu` for `n` independent episodes. Episode `i` draws from its
/// own generator stream, so the result does not depend on thread scheduling.
pub fn rollout<T: Real>(m: &Mdp<T>, mu: &Policy<T>, n: usize, seed: u64) -> Result<Dataset<T>> {
    mu.check_against(m)?;
    if n == 0 {
        return Err(Error::param("rollout needs n >= 1"));
    }
    let (hn, sn, an) = m.shape();
    let episodes: Vec<Vec<Step<T>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = episode_rng(seed, i as u64);
            let mut s = sample_index(&mut rng, m.initial().iter().copied());
            let mut out = Vec::with_capacity(hn);
            for h in 0..hn {
                let a = sample_index(&mut rng, mu.row(h, s).iter().copied());
                let r = realize_reward(&mut rng, m.reward_noise(), m.reward(h, s, a));
                let s_next = sample_index(&mut rng, m.transition_row(h, s, a).iter().copied());
                out.push(Step { s, a, r, s_next });
                s = s_next;
            }
            out
        })
        .collect();
    let meta = DatasetMeta {
        n,
        horizon: hn,
        num_states: sn,
        num_actions: an,
        seed,
    };
    Ok(Dataset {
        meta,
        steps: episodes.into_iter().flatten().collect(),
    })
}

/// Visitation tallies of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct CountTable<T> {
    pub n: usize,
    pub n_sa: Array3<u64>,
    pub n_sas: Array4<u64>,
    pub reward_sum: Array3<T>,
    /// Counts of the first state of each episode.
    pub initial: Array1<u64>,
}

impl<T: Real> CountTable<T> {
    pub fn shape(&self) -> (usize, usize, usize) {
        self.n_sa.dim()
    }
}

pub fn count<T: Real>(d: &Dataset<T>) -> CountTable<T> {
    let DatasetMeta {
        n,
        horizon: hn,
        num_states: sn,
        num_actions: an,
        ..
    } = d.meta;
    let mut n_sa = Array3::zeros((hn, sn, an));
    let mut n_sas = Array4::zeros((hn, sn, an, sn));
    let mut reward_sum = Array3::zeros((hn, sn, an));
    let mut initial = Array1::zeros(sn);
    for ep in d.episodes() {
        initial[ep[0].s] += 1;
        for (h, st) in ep.iter().enumerate() {
            n_sa[[h, st.s, st.a]] += 1;
            n_sas[[h, st.s, st.a, st.s_next]] += 1;
            reward_sum[[h, st.s, st.a]] = reward_sum[[h, st.s, st.a]] + st.r;
        }
    }
    CountTable {
        n,
        n_sa,
        n_sas,
        reward_sum,
        initial,
    }
}

/// Which of the three coverage assumptions hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssumptionFlags {
    /// Every reachable `(h, s, a)` has positive behavior occupancy.
    pub uniform_coverage: bool,
    /// The all-policy concentrability `C_mu` is finite.
    pub all_policy_concentrability: bool,
    /// Every cell visited by `pi*` has positive behavior occupancy.
    pub single_concentrability: bool,
}

/// Exact coverage coefficients of a behavior policy relative to `pi*`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport<T> {
    /// Minimum behavior occupancy over reachable cells.
    pub d_m: T,
    /// Minimum positive behavior occupancy.
    pub dbar_m: T,
    /// `trackable[h, s, a]` iff `d^mu_h(s, a) > 0`.
    pub trackable: Array3<bool>,
    pub c_star: T,
    /// `sup_pi max_{h,s,a} d^pi / d^mu`, computed exactly from per-step
    /// maximal reach probabilities.
    pub c_mu: T,
    pub tau_s: T,
    pub tau_a: T,
    pub flags: AssumptionFlags,
}

/// Forward reachability of `(h, s)` under a policy that may play any action.
pub fn reachable_states<T: Real>(m: &Mdp<T>) -> ndarray::Array2<bool> {
    let (hn, sn, an) = m.shape();
    let mut reach = ndarray::Array2::from_elem((hn, sn), false);
    for s in 0..sn {
        reach[[0, s]] = m.initial()[s] > T::zero();
    }
    for h in 0..hn.saturating_sub(1) {
        for s in 0..sn {
            if !reach[[h, s]] {
                continue;
            }
            for a in 0..an {
                for (s2, &p) in m.transition_row(h, s, a).iter().enumerate() {
                    if p > T::zero() {
                        reach[[h + 1, s2]] = true;
                    }
                }
            }
        }
    }
    reach
}

/// `maxreach[h, s] = max_pi P_pi(s_h = s)`, by one backward DP per target.
pub fn max_reach_probability<T: Real>(m: &Mdp<T>) -> ndarray::Array2<T> {
    let (hn, sn, an) = m.shape();
    let mut out = ndarray::Array2::zeros((hn, sn));
    for h in 0..hn {
        for target in 0..sn {
            let mut w = Array1::zeros(sn);
            w[target] = T::one();
            for t in (0..h).rev() {
                let mut prev = Array1::zeros(sn);
                for s in 0..sn {
                    prev[s] = (0..an)
                        .map(|a| m.expected_next(t, s, a, w.view()))
                        .fold(T::zero(), T::max);
                }
                w = prev;
            }
            out[[h, target]] = m.initial().dot(&w);
        }
    }
    out
}

/// `(tau_s, tau_a)`: the largest state-marginal ratio `d^pi_h(s) / d^mu_h(s)`
/// and the largest action ratio `pi_h(a|s) / mu_h(a|s)` over states `mu`
/// reaches; either is infinite when `pi` puts mass where `mu` has none.
pub fn weight_bounds<T: Real>(m: &Mdp<T>, mu: &Policy<T>, pi: &Policy<T>) -> Result<(T, T)> {
    let occ_mu = occupancy_measure(m, mu)?;
    let occ_pi = occupancy_measure(m, pi)?;
    Ok(weight_bounds_from(&occ_mu, &occ_pi, mu, pi))
}

fn weight_bounds_from<T: Real>(occ_mu: &Occupancy<T>, occ_pi: &Occupancy<T>, mu: &Policy<T>, pi: &Policy<T>) -> (T, T) {
    let (hn, sn, an) = mu.shape();
    let mut tau_s = T::zero();
    let mut tau_a = T::zero();
    for h in 0..hn {
        let dm = occ_mu.state_dist(h);
        let dp = occ_pi.state_dist(h);
        for s in 0..sn {
            if dm[s] > T::zero() {
                tau_s = tau_s.max(dp[s] / dm[s]);
                for a in 0..an {
                    let (p, q) = (pi.prob(h, s, a), mu.prob(h, s, a));
                    if p > T::zero() {
                        tau_a = tau_a.max(if q > T::zero() { p / q } else { T::infinity() });
                    }
                }
            } else if dp[s] > T::zero() {
                tau_s = T::infinity();
            }
        }
    }
    (tau_s, tau_a)
}

pub fn coverage_report<T: Real>(m: &Mdp<T>, mu: &Policy<T>, pi_star: &Policy<T>) -> Result<CoverageReport<T>> {
    let occ_mu = occupancy_measure(m, mu)?;
    let occ_star = occupancy_measure(m, pi_star)?;
    let (hn, sn, an) = m.shape();
    let reach = reachable_states(m);
    let maxreach = max_reach_probability(m);
    let mut d_m = T::infinity();
    let mut dbar_m = T::infinity();
    let mut c_star = T::zero();
    let mut c_mu = T::zero();
    let mut trackable = Array3::from_elem((hn, sn, an), false);
    for h in 0..hn {
        for s in 0..sn {
            for a in 0..an {
                let dmu = occ_mu.get(h, s, a);
                let dst = occ_star.get(h, s, a);
                if reach[[h, s]] {
                    d_m = d_m.min(dmu);
                }
                if dmu > T::zero() {
                    trackable[[h, s, a]] = true;
                    dbar_m = dbar_m.min(dmu);
                    c_star = c_star.max(dst / dmu);
                    c_mu = c_mu.max(maxreach[[h, s]] / dmu);
                } else {
                    if dst > T::zero() {
                        c_star = T::infinity();
                    }
                    if maxreach[[h, s]] > T::zero() {
                        c_mu = T::infinity();
                    }
                }
            }
        }
    }
    let (tau_s, tau_a) = weight_bounds_from(&occ_mu, &occ_star, mu, pi_star);
    let flags = AssumptionFlags {
        uniform_coverage: d_m > T::zero(),
        all_policy_concentrability: c_mu.is_finite(),
        single_concentrability: c_star.is_finite(),
    };
    Ok(CoverageReport {
        d_m,
        dbar_m,
        trackable,
        c_star,
        c_mu,
        tau_s,
        tau_a,
        flags,
    })
}

/// Lower bound on `C_mu` from `num_random` random stochastic policies plus
/// every single-cell deterministic deviation from `pi_star`. Used as an
/// independent check on [`CoverageReport::c_mu`].
pub fn sampled_c_mu<T: Real>(
    m: &Mdp<T>,
    mu: &Policy<T>,
    pi_star: &Policy<T>,
    num_random: usize,
    seed: u64,
) -> Result<T> {
    let occ_mu = occupancy_measure(m, mu)?;
    let (hn, sn, an) = m.shape();
    let ratio = |pi: &Policy<T>| -> Result<T> {
        let occ = occupancy_measure(m, pi)?;
        let mut best = T::zero();
        for ((h, s, a), &d) in occ.d.indexed_iter() {
            let dmu = occ_mu.get(h, s, a);
            if d > T::zero() {
                best = best.max(if dmu > T::zero() { d / dmu } else { T::infinity() });
            }
        }
        Ok(best)
    };
    let mut best = ratio(pi_star)?;
    for i in 0..num_random {
        let mut rng = episode_rng(seed, i as u64);
        let mut probs = Array3::zeros((hn, sn, an));
        for h in 0..hn {
            for s in 0..sn {
                let w: Vec<f64> = (0..an).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
                let total: f64 = w.iter().sum();
                for a in 0..an {
                    probs[[h, s, a]] = T::lit(w[a] / total);
                }
            }
        }
        renormalize(&mut probs);
        best = best.max(ratio(&Policy::new(probs)?)?);
    }
    for h in 0..hn {
        for s in 0..sn {
            for a in 0..an {
                let mut probs = pi_star.probs().clone();
                probs.slice_mut(ndarray::s![h, s, ..]).fill(T::zero());
                probs[[h, s, a]] = T::one();
                best = best.max(ratio(&Policy::new(probs)?)?);
            }
        }
    }
    Ok(best)
}

/// Pushes rounding error of each row onto its largest entry.
pub(crate) fn renormalize<T: Real>(probs: &mut Array3<T>) {
    for mut row in probs.lanes_mut(ndarray::Axis(2)) {
        let sum: T = row.iter().copied().sum();
        let (imax, _) = crate::scalar::argmax_lowest(row.iter().copied());
        row[imax] = row[imax] + (T::one() - sum);
    }
}

pub(crate) fn renormalize_vec<T: Real>(v: &mut Array1<T>) {
    let sum: T = v.iter().copied().sum();
    let (imax, _) = crate::scalar::argmax_lowest(v.iter().copied());
    v[imax] = v[imax] + (T::one() - sum);
}
