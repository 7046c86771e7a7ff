#![allow(dead_code)]

use ndarray::{Array2, Array3};
use offpess::{Mdp64, Policy, Policy64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fully stochastic policy with exponential(1) weights per row.
pub fn random_policy(shape: (usize, usize, usize), seed: u64) -> Policy64 {
    let mut rng = rng(seed);
    let mut probs = Array3::zeros(shape);
    for mut row in probs.lanes_mut(ndarray::Axis(2)) {
        let w: Vec<f64> = (0..shape.2).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let total: f64 = w.iter().sum();
        for (x, wi) in row.iter_mut().zip(w) {
            *x = wi / total;
        }
    }
    Policy::new(probs).unwrap()
}

pub fn random_deterministic_policy(shape: (usize, usize, usize), seed: u64) -> Policy64 {
    let mut rng = rng(seed);
    let actions = Array2::from_shape_simple_fn((shape.0, shape.1), || rng.random_range(0..shape.2));
    Policy::deterministic(&actions, shape.2).unwrap()
}

pub fn random_table(shape: (usize, usize, usize), scale: f64, seed: u64) -> Array3<f64> {
    let mut rng = rng(seed);
    Array3::from_shape_simple_fn(shape, || scale * rng.random::<f64>())
}

/// Monte Carlo mean and standard error of the return, plus per-(h, s)
/// visit frequencies, from `n` episodes simulated directly.
pub struct MonteCarlo {
    pub mean: f64,
    pub var: f64,
    /// Fourth central moment of the return.
    pub m4: f64,
    pub n: usize,
    pub state_freq: Array2<f64>,
}

impl MonteCarlo {
    pub fn mean_se(&self) -> f64 {
        (self.var / self.n as f64).sqrt()
    }

    pub fn var_se(&self) -> f64 {
        ((self.m4 - self.var * self.var) / self.n as f64).sqrt()
    }
}

pub fn monte_carlo(m: &Mdp64, pi: &Policy64, n: usize, seed: u64) -> MonteCarlo {
    let (hn, sn, an) = m.shape();
    let mut rng = rng(seed);
    let draw = |rng: &mut ChaCha8Rng, probs: &mut dyn Iterator<Item = f64>| -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, p) in probs.enumerate() {
            if p > 0.0 {
                last = i;
                acc += p;
                if u < acc {
                    return i;
                }
            }
        }
        last
    };
    let mut returns = Vec::with_capacity(n);
    let mut freq = Array2::zeros((hn, sn));
    for _ in 0..n {
        let mut s = draw(&mut rng, &mut m.initial().iter().copied());
        let mut ret = 0.0;
        for h in 0..hn {
            freq[[h, s]] += 1.0;
            let a = draw(&mut rng, &mut (0..an).map(|a| pi.prob(h, s, a)));
            let mean = m.reward(h, s, a);
            ret += match m.reward_noise() {
                offpess::RewardNoise::Deterministic => mean,
                offpess::RewardNoise::Bernoulli => f64::from(rng.random::<f64>() < mean),
            };
            s = draw(&mut rng, &mut m.transition_row(h, s, a).iter().copied());
        }
        returns.push(ret);
    }
    let nf = n as f64;
    let mean = returns.iter().sum::<f64>() / nf;
    let var = returns.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let m4 = returns.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / nf;
    MonteCarlo {
        mean,
        var,
        m4,
        n,
        state_freq: freq / nf,
    }
}

pub fn max_abs_diff<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Exact distribution of the total return by enumerating every trajectory,
/// returned as `(mean, variance)`.
pub fn enumerate_return(m: &Mdp64, pi: &Policy64) -> (f64, f64) {
    fn go(m: &Mdp64, pi: &Policy64, h: usize, s: usize, prob: f64, ret: f64, acc: &mut (f64, f64)) {
        let (hn, sn, an) = m.shape();
        if h == hn {
            acc.0 += prob * ret;
            acc.1 += prob * ret * ret;
            return;
        }
        for a in 0..an {
            let pa = prob * pi.prob(h, s, a);
            if pa == 0.0 {
                continue;
            }
            let mean = m.reward(h, s, a);
            let outcomes: Vec<(f64, f64)> = match m.reward_noise() {
                offpess::RewardNoise::Deterministic => vec![(mean, 1.0)],
                offpess::RewardNoise::Bernoulli => vec![(1.0, mean), (0.0, 1.0 - mean)],
            };
            for (r, pr) in outcomes {
                if pr == 0.0 {
                    continue;
                }
                for s2 in 0..sn {
                    let p = m.transition_row(h, s, a)[s2];
                    if p > 0.0 {
                        go(m, pi, h + 1, s2, pa * pr * p, ret + r, acc);
                    }
                }
            }
        }
    }
    let mut acc = (0.0, 0.0);
    for (s, &p) in m.initial().iter().enumerate() {
        if p > 0.0 {
            go(m, pi, 0, s, p, 0.0, &mut acc);
        }
    }
    (acc.0, acc.1 - acc.0 * acc.0)
}
