//! Tabular marginalized importance sampling for off-policy evaluation.

use ndarray::{Array2, Array3, Array4};

use crate::error::Result;
use crate::mdp::{Mdp, Policy};
use crate::sampling::{count, weight_bounds, Dataset};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct OpeResult<T> {
    /// Estimate clamped to `[0, H]`.
    pub v_hat: T,
    pub v_hat_raw: T,
    /// `[H, S]` propagated target state marginals.
    pub d_hat_pi: Array2<T>,
    /// `[H, S]` empirical behavior state marginals.
    pub d_hat_mu: Array2<T>,
    /// `[H, S]` expected reward under the target policy.
    pub r_hat_pi: Array2<T>,
    /// `(tau_s, tau_a)` when the true model and behavior policy are known.
    pub weight_bounds: Option<(T, T)>,
}

impl<T: Real> OpeResult<T> {
    /// Attaches the exact marginal and action weight bounds of `pi` against
    /// `mu` on `m`.
    pub fn with_weight_bounds(mut self, m: &Mdp<T>, mu: &Policy<T>, pi: &Policy<T>) -> Result<Self> {
        self.weight_bounds = Some(weight_bounds(m, mu, pi)?);
        Ok(self)
    }
}

/// Propagates `d_hat^pi` through the empirical model (rows of unvisited
/// cells are zero, so mass leaks there) and sums `d_hat^pi r_hat^pi`.
pub fn tmis_estimate<T: Real>(d: &Dataset<T>, pi: &Policy<T>) -> Result<OpeResult<T>> {
    let meta = d.meta();
    let (hn, sn, an) = (meta.horizon, meta.num_states, meta.num_actions);
    if pi.shape() != (hn, sn, an) {
        return Err(crate::error::Error::shape(format!(
            "policy is {:?}, dataset is {:?}",
            pi.shape(),
            (hn, sn, an)
        )));
    }
    let c = count(d);
    let nf = T::from_count(meta.n as u64);
    let mut p_hat = Array4::zeros((hn, sn, an, sn));
    let mut r_hat = Array3::zeros((hn, sn, an));
    let mut d_hat_mu = Array2::zeros((hn, sn));
    for h in 0..hn {
        for s in 0..sn {
            let mut visits = 0u64;
            for a in 0..an {
                let n = c.n_sa[[h, s, a]];
                visits += n;
                if n == 0 {
                    continue;
                }
                let n = T::from_count(n);
                for s2 in 0..sn {
                    p_hat[[h, s, a, s2]] = T::from_count(c.n_sas[[h, s, a, s2]]) / n;
                }
                r_hat[[h, s, a]] = c.reward_sum[[h, s, a]] / n;
            }
            d_hat_mu[[h, s]] = T::from_count(visits) / nf;
        }
    }
    let mut d_hat_pi = Array2::zeros((hn, sn));
    let mut r_hat_pi = Array2::zeros((hn, sn));
    for s in 0..sn {
        d_hat_pi[[0, s]] = T::from_count(c.initial[s]) / nf;
    }
    let mut v = T::zero();
    for h in 0..hn {
        for s in 0..sn {
            let rp: T = (0..an).map(|a| pi.prob(h, s, a) * r_hat[[h, s, a]]).sum();
            r_hat_pi[[h, s]] = rp;
            v = v + d_hat_pi[[h, s]] * rp;
        }
        if h + 1 < hn {
            for s in 0..sn {
                let mass = d_hat_pi[[h, s]];
                if mass == T::zero() {
                    continue;
                }
                for a in 0..an {
                    let w = mass * pi.prob(h, s, a);
                    if w == T::zero() {
                        continue;
                    }
                    for s2 in 0..sn {
                        d_hat_pi[[h + 1, s2]] = d_hat_pi[[h + 1, s2]] + w * p_hat[[h, s, a, s2]];
                    }
                }
            }
        }
    }
    let upper = T::from_count(hn as u64);
    Ok(OpeResult {
        v_hat: v.max(T::zero()).min(upper),
        v_hat_raw: v,
        d_hat_pi,
        d_hat_mu,
        r_hat_pi,
        weight_bounds: None,
    })
}
