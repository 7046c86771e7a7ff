//! Plug-in model estimation and the concentration primitives the planners use.

use ndarray::{Array1, Array3, Array4, ArrayView1};

use crate::error::{Error, Result};
use crate::mdp::{Mdp, Occupancy, RewardNoise};
use crate::sampling::CountTable;
use crate::scalar::{mean_var, Real};

/// `iota = ln(H S A / delta)`.
pub fn iota<T: Real>(horizon: usize, num_states: usize, num_actions: usize, delta: T) -> T {
    (T::from_count((horizon * num_states * num_actions) as u64) / delta).ln()
}

/// Plug-in estimates `P_hat`, `r_hat` together with the counts they came from.
///
/// Unvisited cells carry a uniform transition row and zero reward.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalModel<T> {
    pub p_hat: Array4<T>,
    pub r_hat: Array3<T>,
    pub counts: CountTable<T>,
}

impl<T: Real> EmpiricalModel<T> {
    pub fn shape(&self) -> (usize, usize, usize) {
        self.r_hat.dim()
    }

    pub fn n_sa(&self, h: usize, s: usize, a: usize) -> u64 {
        self.counts.n_sa[[h, s, a]]
    }

    pub fn row(&self, h: usize, s: usize, a: usize) -> ArrayView1<'_, T> {
        self.p_hat.slice(ndarray::s![h, s, a, ..])
    }

    /// Empirical initial-state distribution.
    pub fn initial(&self) -> Array1<T> {
        let n = T::from_count(self.counts.n as u64);
        self.counts.initial.mapv(|c| T::from_count(c) / n)
    }

    /// The estimated model as an [`Mdp`], started from the empirical initial
    /// distribution. `rewards` replaces `r_hat` when given.
    pub fn to_mdp(&self, rewards: Option<&Array3<T>>) -> Result<Mdp<T>> {
        let r = match rewards {
            Some(r) => {
                if r.dim() != self.shape() {
                    return Err(Error::shape(format!("reward table is {:?}, model is {:?}", r.dim(), self.shape())));
                }
                r.clone()
            }
            None => self.r_hat.clone(),
        };
        let mut initial = self.initial();
        crate::sampling::renormalize_vec(&mut initial);
        Mdp::new(self.p_hat.clone(), r, RewardNoise::Deterministic, initial)
    }
}

pub fn fit_empirical_model<T: Real>(c: &CountTable<T>) -> EmpiricalModel<T> {
    let (hn, sn, an) = c.shape();
    let uniform = T::one() / T::from_count(sn as u64);
    let mut p_hat = Array4::zeros((hn, sn, an, sn));
    let mut r_hat = Array3::zeros((hn, sn, an));
    for h in 0..hn {
        for s in 0..sn {
            for a in 0..an {
                let n = c.n_sa[[h, s, a]];
                if n == 0 {
                    p_hat.slice_mut(ndarray::s![h, s, a, ..]).fill(uniform);
                    continue;
                }
                let nf = T::from_count(n);
                for s2 in 0..sn {
                    p_hat[[h, s, a, s2]] = T::from_count(c.n_sas[[h, s, a, s2]]) / nf;
                }
                r_hat[[h, s, a]] = (c.reward_sum[[h, s, a]] / nf).min(T::one()).max(T::zero());
            }
        }
    }
    EmpiricalModel {
        p_hat,
        r_hat,
        counts: c.clone(),
    }
}

/// `sum dist * f^2 - (sum dist * f)^2`, evaluated in centered form and
/// clamped at zero.
pub fn empirical_variance<T: Real>(dist: ArrayView1<'_, T>, f: ArrayView1<'_, T>) -> T {
    mean_var(dist.iter().copied(), f.iter().copied()).1
}

/// Empirical Bernstein radius
/// `sqrt(2 V log(2/delta) / n) + 7 xi log(2/delta) / (3 n)`.
pub fn empirical_bernstein_radius<T: Real>(sample_variance: T, range_bound: T, n: u64, delta: T) -> Result<T> {
    if n == 0 {
        return Err(Error::param("empirical Bernstein radius needs n >= 1"));
    }
    if !(range_bound > T::zero()) {
        return Err(Error::param(format!("range bound {range_bound} must be positive")));
    }
    if !(delta > T::zero() && delta < T::one()) {
        return Err(Error::param(format!("delta {delta} outside (0, 1)")));
    }
    let log_term = (T::lit(2.0) / delta).ln();
    let nf = T::from_count(n);
    let var = sample_variance.max(T::zero());
    Ok((T::lit(2.0) * var * log_term / nf).sqrt() + T::lit(7.0) * range_bound * log_term / (T::lit(3.0) * nf))
}

/// `mask[h, s, a]` iff `n_sa >= n d^mu / 2`; cells with `d^mu = 0` are
/// vacuously true.
pub fn chernoff_event_diagnostic<T: Real>(c: &CountTable<T>, occ_mu: &Occupancy<T>, n: usize) -> Result<Array3<bool>> {
    if occ_mu.d.dim() != c.shape() {
        return Err(Error::shape(format!("occupancy is {:?}, counts are {:?}", occ_mu.d.dim(), c.shape())));
    }
    let nf = T::from_count(n as u64);
    Ok(Array3::from_shape_fn(c.shape(), |(h, s, a)| {
        let d = occ_mu.get(h, s, a);
        d == T::zero() || T::from_count(c.n_sa[[h, s, a]]) >= nf * d / T::lit(2.0)
    }))
}
