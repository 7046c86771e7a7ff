//! Closed-form suboptimality bounds evaluated on concrete instances.

use ndarray::{Array1, Array3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimation::iota;
use crate::mdp::{occupancy_measure, optimal_planning, policy_evaluation, Mdp, Policy, VarianceTable};
use crate::planners::augment_mdp;
use crate::sampling::{coverage_report, AssumptionFlags, CoverageReport};
use crate::scalar::Real;

/// Multiplicative constants applied to the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundConstants<T> {
    /// Leading constant of the upper bounds.
    pub c_prime: T,
    /// Leading constant of the lower bound.
    pub lower_c: T,
    /// Constant in front of `H^3 iota / (n dbar_m)`.
    pub higher_order: T,
}

impl<T: Real> BoundConstants<T> {
    /// `C' = 16`, lower constant `1 / (2 sqrt 96)`, higher-order constant 1.
    pub fn paper() -> Self {
        BoundConstants {
            c_prime: T::lit(16.0),
            lower_c: T::lit(1.0 / (2.0 * 96f64.sqrt())),
            higher_order: T::one(),
        }
    }

    /// Every constant set to 1, for rate-only comparisons.
    pub fn unit() -> Self {
        BoundConstants {
            c_prime: T::one(),
            lower_c: T::one(),
            higher_order: T::one(),
        }
    }
}

/// Every bound of the instance at a fixed `(n, delta)`. Infinite entries
/// mean the bound is vacuous because its coverage coefficient is.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound = "T: Real")]
pub struct BoundBreakdown<T> {
    pub n: usize,
    pub delta: T,
    pub iota: T,
    /// `d*_h(s,a) sqrt(Var(r_h + V*_{h+1}) / (n d^mu_h(s,a)))` on covered
    /// cells, zero elsewhere.
    #[serde(skip)]
    pub per_cell: Array3<T>,
    /// Sum of `per_cell`.
    pub main_term: T,
    pub higher_order: T,
    /// `C' sqrt(iota) main_term + higher_order`.
    pub apvi_bound: T,
    pub vpvi_bound: T,
    pub uniform_bound: T,
    pub horizon_free_bound: T,
    pub concentrability_bound: T,
    pub env_norm_bound: T,
    pub af_gap: T,
    pub lower_bound_value: T,
    pub zeta: T,
    pub xi: T,
    #[serde(rename = "B")]
    pub b: T,
    pub q_star_per_h: Vec<T>,
    pub v_star: T,
    pub d_m: T,
    pub dbar_m: T,
    pub c_star: T,
    pub c_mu: T,
    pub uniform_coverage: bool,
    pub all_policy_concentrability: bool,
    pub single_concentrability: bool,
}

/// Largest realizable sum of rewards along any trajectory.
pub fn max_trajectory_reward<T: Real>(m: &Mdp<T>) -> T {
    let (hn, sn, an) = m.shape();
    let mut next = Array1::<T>::zeros(sn);
    for h in (0..hn).rev() {
        let mut cur = Array1::zeros(sn);
        for s in 0..sn {
            cur[s] = (0..an)
                .map(|a| {
                    let tail = m
                        .transition_row(h, s, a)
                        .iter()
                        .zip(next.iter())
                        .filter(|(&p, _)| p > T::zero())
                        .map(|(_, &v)| v)
                        .fold(T::zero(), T::max);
                    m.reward_noise().max_realized(m.reward(h, s, a)) + tail
                })
                .fold(T::zero(), T::max);
        }
        next = cur;
    }
    m.initial()
        .iter()
        .zip(next.iter())
        .filter(|(&p, _)| p > T::zero())
        .map(|(_, &v)| v)
        .fold(T::zero(), T::max)
}

fn ratio_or_inf<T: Real>(num: T, den: T) -> T {
    if den > T::zero() {
        num / den
    } else {
        T::infinity()
    }
}

pub fn intrinsic_bound<T: Real>(
    m: &Mdp<T>,
    mu: &Policy<T>,
    n: usize,
    delta: T,
    constants: &BoundConstants<T>,
) -> Result<BoundBreakdown<T>> {
    mu.check_against(m)?;
    if n == 0 {
        return Err(Error::param("bounds need n >= 1"));
    }
    if !(delta > T::zero() && delta < T::one()) {
        return Err(Error::param(format!("delta {delta} outside (0, 1)")));
    }
    let (hn, sn, an) = m.shape();
    let (star, pi_star) = optimal_planning(m);
    let occ_star = occupancy_measure(m, &pi_star)?;
    let occ_mu = occupancy_measure(m, mu)?;
    let var = VarianceTable::for_values(m, &star.values)?;
    let cov: CoverageReport<T> = coverage_report(m, mu, &pi_star)?;
    let iota = iota(hn, sn, an, delta);
    let nf = T::from_count(n as u64);
    let hf = T::from_count(hn as u64);
    let zeta = ratio_or_inf(hf, cov.dbar_m);

    let mut per_cell = Array3::zeros((hn, sn, an));
    let mut vpvi_sum = T::zero();
    let mut lower_sum = T::zero();
    let mut xi = T::zero();
    for h in 0..hn {
        for s in 0..sn {
            for a in 0..an {
                let dmu = occ_mu.get(h, s, a);
                if dmu == T::zero() {
                    continue;
                }
                let dst = occ_star.get(h, s, a);
                let v = var.var[[h, s, a]];
                per_cell[[h, s, a]] = dst * (v / (nf * dmu)).sqrt();
                vpvi_sum = vpvi_sum + dst * (iota / (nf * dmu)).sqrt();
                lower_sum = lower_sum + dst * (v / (zeta * dmu)).sqrt();
                if v > T::zero() {
                    let next = star.next_values(h);
                    let row = m.transition_row(h, s, a);
                    let mean = row.dot(&next);
                    let scale = (T::lit(2.0) * dmu * v).sqrt();
                    for (s2, &p) in row.iter().enumerate() {
                        xi = xi.max(p * (next[s2] - mean) / scale);
                    }
                }
            }
        }
    }
    let main_term: T = per_cell.iter().copied().sum();
    let higher_order = constants.higher_order * hf.powi(3) * iota / (nf * cov.dbar_m);
    let q_star_per_h = var.env_norm();
    let b = max_trajectory_reward(m);
    let uniform_bound = ratio_or_inf(hf.powi(3) * iota, nf * cov.d_m).sqrt();
    let horizon_free_bound = ratio_or_inf(hf * b * b * iota, nf * cov.d_m).sqrt();
    let concentrability_bound = (hf.powi(3) * T::from_count(sn as u64) * cov.c_star * iota / nf).sqrt();
    let env_norm_bound = q_star_per_h
        .iter()
        .map(|&q| (q * iota / (nf * cov.dbar_m)).sqrt())
        .sum();
    let aug = augment_mdp(m, &cov.trackable)?;
    let af_gap = aug.absorbed_total(&pi_star)?;
    let AssumptionFlags {
        uniform_coverage,
        all_policy_concentrability,
        single_concentrability,
    } = cov.flags;
    Ok(BoundBreakdown {
        n,
        delta,
        iota,
        per_cell,
        main_term,
        higher_order,
        apvi_bound: constants.c_prime * iota.sqrt() * main_term + higher_order,
        vpvi_bound: constants.c_prime * hf * vpvi_sum,
        uniform_bound,
        horizon_free_bound,
        concentrability_bound,
        env_norm_bound,
        af_gap,
        lower_bound_value: constants.lower_c * lower_sum,
        zeta,
        xi,
        b,
        q_star_per_h,
        v_star: star.value,
        d_m: cov.d_m,
        dbar_m: cov.dbar_m,
        c_star: cov.c_star,
        c_mu: cov.c_mu,
        uniform_coverage,
        all_policy_concentrability,
        single_concentrability,
    })
}

/// `C' H sum_h sum_{C_h} d* sqrt(iota / (n d^mu))`.
pub fn vpvi_bound<T: Real>(m: &Mdp<T>, mu: &Policy<T>, n: usize, delta: T, constants: &BoundConstants<T>) -> Result<T> {
    Ok(intrinsic_bound(m, mu, n, delta, constants)?.vpvi_bound)
}

/// Mass `pi*` loses to the absorbing state of the augmented MDP built from
/// the support of `mu`, summed over steps `2..=H+1`.
pub fn af_gap<T: Real>(m: &Mdp<T>, mu: &Policy<T>) -> Result<T> {
    let (_, pi_star) = optimal_planning(m);
    let occ_mu = occupancy_measure(m, mu)?;
    let trackable = occ_mu.d.mapv(|d| d > T::zero());
    augment_mdp(m, &trackable)?.absorbed_total(&pi_star)
}

/// `sqrt((1/n) sum_h sum_{s,a} (d^pi)^2 / d^mu Var(r_h + V^pi_{h+1}))`,
/// infinite when `pi` reaches a cell `mu` never does.
pub fn ope_error_bound<T: Real>(m: &Mdp<T>, mu: &Policy<T>, pi: &Policy<T>, n: usize) -> Result<T> {
    if n == 0 {
        return Err(Error::param("bounds need n >= 1"));
    }
    let sol = policy_evaluation(m, pi)?;
    let occ_pi = occupancy_measure(m, pi)?;
    let occ_mu = occupancy_measure(m, mu)?;
    let var = VarianceTable::for_values(m, &sol.values)?;
    let mut total = T::zero();
    for ((h, s, a), &dp) in occ_pi.d.indexed_iter() {
        if dp == T::zero() {
            continue;
        }
        let dm = occ_mu.get(h, s, a);
        if dm == T::zero() {
            return Ok(T::infinity());
        }
        total = total + dp * dp / dm * var.var[[h, s, a]];
    }
    Ok((total / T::from_count(n as u64)).sqrt())
}
