//! Pessimistic value iteration: the Hoeffding-style VPVI, the Bernstein-style
//! APVI, and APVI over the augmented model with an absorbing state.

use ndarray::{Array1, Array2, Array3, Array4};

use crate::error::{Error, Result};
use crate::estimation::{empirical_variance, iota, EmpiricalModel};
use crate::mdp::{occupancy_measure, Mdp, Policy};
use crate::scalar::{argmax_lowest, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerConfig<T> {
    pub delta: T,
    /// Penalty scale of VPVI.
    pub c_vpvi: T,
    /// Variance-term scale of APVI.
    pub c1: T,
    /// Range-term scale of APVI.
    pub c2: T,
    pub clip_enabled: bool,
}

impl<T: Real> Default for PlannerConfig<T> {
    fn default() -> Self {
        PlannerConfig {
            delta: T::lit(0.1),
            c_vpvi: T::lit(2.0),
            c1: T::lit(2.0),
            c2: T::lit(14.0),
            clip_enabled: true,
        }
    }
}

impl<T: Real> PlannerConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > T::zero() && self.delta < T::one()) {
            return Err(Error::param(format!("delta {} outside (0, 1)", self.delta)));
        }
        for (name, c) in [("c_vpvi", self.c_vpvi), ("c1", self.c1), ("c2", self.c2)] {
            if !(c > T::zero()) || !c.is_finite() {
                return Err(Error::param(format!("{name} = {c} must be positive")));
            }
        }
        Ok(())
    }
}

/// Result of a pessimistic planner.
///
/// `v_hat`, `q_hat`, `q_bar` and `bonus` are indexed over the planner's own
/// state space, which has one extra state (`absorbing_state`) for the
/// assumption-free variant; `policy` always covers the original states.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerOutput<T: Real> {
    pub policy: Policy<T>,
    /// `[H + 1, S']`, last row zero.
    pub v_hat: Array2<T>,
    /// Unpenalized `r_hat + P_hat V_hat_{h+1}`.
    pub q_hat: Array3<T>,
    pub q_bar: Array3<T>,
    pub bonus: Array3<T>,
    pub absorbing_state: Option<usize>,
    pub iota: T,
}

impl<T: Real> PlannerOutput<T> {
    /// `<d1, V_hat_0>` over the original states.
    pub fn pessimistic_value(&self, initial: &Array1<T>) -> T {
        initial.iter().enumerate().map(|(s, &p)| p * self.v_hat[[0, s]]).sum()
    }
}

#[derive(Clone, Copy)]
enum Penalty {
    Hoeffding,
    Bernstein,
}

struct Model<'a, T> {
    p: &'a Array4<T>,
    r: &'a Array3<T>,
    n: &'a Array3<u64>,
    /// Cells that get no penalty (absorbing rows of the augmented model).
    free: Option<&'a Array3<bool>>,
}

fn pessimistic_vi<T: Real>(
    model: Model<'_, T>,
    cfg: &PlannerConfig<T>,
    penalty: Penalty,
    iota: T,
    num_original_states: usize,
) -> Result<(Policy<T>, Array2<T>, Array3<T>, Array3<T>, Array3<T>)> {
    cfg.validate()?;
    let (hn, sn, an) = model.r.dim();
    let hf = T::from_count(hn as u64);
    let mut v_hat = Array2::zeros((hn + 1, sn));
    let mut q_hat = Array3::zeros((hn, sn, an));
    let mut q_bar = Array3::zeros((hn, sn, an));
    let mut bonus = Array3::zeros((hn, sn, an));
    let mut actions = Array2::zeros((hn, num_original_states));
    for h in (0..hn).rev() {
        let cap = T::from_count((hn - h) as u64);
        for s in 0..sn {
            for a in 0..an {
                let row = model.p.slice(ndarray::s![h, s, a, ..]);
                let next = v_hat.row(h + 1);
                let target = model.r[[h, s, a]] + row.dot(&next);
                let n = model.n[[h, s, a]];
                let gamma = if model.free.is_some_and(|f| f[[h, s, a]]) {
                    T::zero()
                } else {
                    match (penalty, n) {
                        (Penalty::Hoeffding, 0) => cfg.c_vpvi * hf * iota,
                        (Penalty::Hoeffding, n) => cfg.c_vpvi * hf * iota / T::from_count(n).sqrt(),
                        (Penalty::Bernstein, 0) => cfg.c1 * hf * iota.sqrt() + cfg.c2 * hf * iota,
                        (Penalty::Bernstein, n) => {
                            let nf = T::from_count(n);
                            // r_hat is constant given (s, a), so it does not move the variance
                            let var = empirical_variance(row, next);
                            cfg.c1 * (var * iota / nf).sqrt() + cfg.c2 * hf * iota / nf
                        }
                    }
                };
                let qp = target - gamma;
                q_hat[[h, s, a]] = target;
                bonus[[h, s, a]] = gamma;
                q_bar[[h, s, a]] = if cfg.clip_enabled { qp.min(cap).max(T::zero()) } else { qp };
            }
            let (best, v) = argmax_lowest((0..an).map(|a| q_bar[[h, s, a]]));
            v_hat[[h, s]] = v;
            if s < num_original_states {
                actions[[h, s]] = best;
            }
        }
    }
    let policy = Policy::deterministic(&actions, an)?;
    Ok((policy, v_hat, q_hat, q_bar, bonus))
}

fn plan<T: Real>(em: &EmpiricalModel<T>, cfg: &PlannerConfig<T>, penalty: Penalty) -> Result<PlannerOutput<T>> {
    let (hn, sn, an) = em.shape();
    let iota = iota(hn, sn, an, cfg.delta);
    let model = Model {
        p: &em.p_hat,
        r: &em.r_hat,
        n: &em.counts.n_sa,
        free: None,
    };
    let (policy, v_hat, q_hat, q_bar, bonus) = pessimistic_vi(model, cfg, penalty, iota, sn)?;
    Ok(PlannerOutput {
        policy,
        v_hat,
        q_hat,
        q_bar,
        bonus,
        absorbing_state: None,
        iota,
    })
}

/// Vanilla pessimistic value iteration with penalty `C H iota / sqrt(n_sa)`.
pub fn vpvi<T: Real>(em: &EmpiricalModel<T>, cfg: &PlannerConfig<T>) -> Result<PlannerOutput<T>> {
    plan(em, cfg, Penalty::Hoeffding)
}

/// Adaptive pessimistic value iteration with the empirical Bernstein penalty
/// `C1 sqrt(Var_hat(r_hat + V_hat_{h+1}) iota / n_sa) + C2 H iota / n_sa`.
pub fn apvi<T: Real>(em: &EmpiricalModel<T>, cfg: &PlannerConfig<T>) -> Result<PlannerOutput<T>> {
    plan(em, cfg, Penalty::Bernstein)
}

/// APVI on the empirical augmented model: unvisited cells move to an extra
/// absorbing state (index `S`) with zero reward and zero penalty.
pub fn af_apvi<T: Real>(em: &EmpiricalModel<T>, cfg: &PlannerConfig<T>) -> Result<PlannerOutput<T>> {
    let (hn, sn, an) = em.shape();
    let dagger = sn;
    let mut p = Array4::zeros((hn, sn + 1, an, sn + 1));
    let mut r = Array3::zeros((hn, sn + 1, an));
    let mut n = Array3::zeros((hn, sn + 1, an));
    let mut free = Array3::from_elem((hn, sn + 1, an), false);
    for h in 0..hn {
        for s in 0..sn {
            for a in 0..an {
                let count = em.n_sa(h, s, a);
                if count == 0 {
                    p[[h, s, a, dagger]] = T::one();
                    free[[h, s, a]] = true;
                } else {
                    p.slice_mut(ndarray::s![h, s, a, ..sn]).assign(&em.row(h, s, a));
                    r[[h, s, a]] = em.r_hat[[h, s, a]];
                    n[[h, s, a]] = count;
                }
            }
        }
        for a in 0..an {
            p[[h, dagger, a, dagger]] = T::one();
            free[[h, dagger, a]] = true;
        }
    }
    let iota = iota(hn, sn, an, cfg.delta);
    let model = Model {
        p: &p,
        r: &r,
        n: &n,
        free: Some(&free),
    };
    let (policy, v_hat, q_hat, q_bar, bonus) = pessimistic_vi(model, cfg, Penalty::Bernstein, iota, sn)?;
    Ok(PlannerOutput {
        policy,
        v_hat,
        q_hat,
        q_bar,
        bonus,
        absorbing_state: Some(dagger),
        iota,
    })
}

/// Ground-truth augmented MDP: cells outside `trackable` move to the extra
/// absorbing state `S` with zero reward.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedMdp<T> {
    pub mdp: Mdp<T>,
    pub absorbing_state: usize,
    pub trackable: Array3<bool>,
}

impl<T: Real> AugmentedMdp<T> {
    /// A policy over the original states extended with action 0 at the
    /// absorbing state.
    pub fn embed_policy(&self, pi: &Policy<T>) -> Result<Policy<T>> {
        let (hn, sn, an) = self.trackable.dim();
        if pi.shape() != (hn, sn, an) {
            return Err(Error::shape(format!("policy is {:?}, base MDP is {:?}", pi.shape(), (hn, sn, an))));
        }
        let mut probs = Array3::zeros((hn, sn + 1, an));
        probs.slice_mut(ndarray::s![.., ..sn, ..]).assign(pi.probs());
        for h in 0..hn {
            probs[[h, sn, 0]] = T::one();
        }
        Policy::new(probs)
    }

    /// Mass on the absorbing state at steps `0..=H` under `pi` (a policy over
    /// the original states).
    pub fn absorbing_mass(&self, pi: &Policy<T>) -> Result<Array1<T>> {
        let occ = occupancy_measure(&self.mdp, &self.embed_policy(pi)?)?;
        let hn = self.mdp.horizon();
        Ok(Array1::from_shape_fn(hn + 1, |h| occ.state_dist(h)[self.absorbing_state]))
    }

    /// Total absorbed mass over steps `1..=H`, the assumption-free gap term.
    pub fn absorbed_total(&self, pi: &Policy<T>) -> Result<T> {
        Ok(self.absorbing_mass(pi)?.iter().skip(1).copied().sum())
    }
}

pub fn augment_mdp<T: Real>(m: &Mdp<T>, trackable: &Array3<bool>) -> Result<AugmentedMdp<T>> {
    let (hn, sn, an) = m.shape();
    if trackable.dim() != (hn, sn, an) {
        return Err(Error::shape(format!("mask is {:?}, MDP is {:?}", trackable.dim(), m.shape())));
    }
    let dagger = sn;
    let mut p = Array4::zeros((hn, sn + 1, an, sn + 1));
    let mut r = Array3::zeros((hn, sn + 1, an));
    for h in 0..hn {
        for s in 0..sn {
            for a in 0..an {
                if trackable[[h, s, a]] {
                    p.slice_mut(ndarray::s![h, s, a, ..sn]).assign(&m.transition_row(h, s, a));
                    r[[h, s, a]] = m.reward(h, s, a);
                } else {
                    p[[h, s, a, dagger]] = T::one();
                }
            }
        }
        for a in 0..an {
            p[[h, dagger, a, dagger]] = T::one();
        }
    }
    let mut initial = Array1::zeros(sn + 1);
    initial.slice_mut(ndarray::s![..sn]).assign(m.initial());
    let mdp = Mdp::new(p, r, m.reward_noise(), initial)?;
    Ok(AugmentedMdp {
        mdp,
        absorbing_state: dagger,
        trackable: trackable.clone(),
    })
}
