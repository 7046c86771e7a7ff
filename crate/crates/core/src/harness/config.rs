use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bounds::BoundConstants;
use crate::error::{Error, Result};
use crate::mdp::{optimal_planning, Policy};
use crate::zoo::{
    blind_branch_instance, contextual_bandit, deterministic_system, fast_mixing, hard_minimax_instance,
    partially_deterministic, random_mdp, BlindBranchParams, HardInstanceParams, OptimalArm,
};
use crate::{Mdp64, Policy64};

fn default_alpha() -> f64 {
    1.0
}

fn default_shift() -> usize {
    1
}

/// A named instance family with its parameters, or an MDP file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSpec {
    /// Three-state minimax instance. With `gap_scale` set the arm
    /// probabilities become `1/2 +- gap_scale / (2 sqrt n)` for each `n`.
    Hard {
        num_actions: usize,
        horizon: usize,
        #[serde(default)]
        p_star: Option<f64>,
        #[serde(default)]
        p: Option<f64>,
        #[serde(default)]
        gap_scale: Option<f64>,
        #[serde(default = "default_shift")]
        shift: usize,
        #[serde(default)]
        which_optimal: Option<OptimalArm>,
    },
    BlindBranch {
        num_actions: usize,
        horizon: usize,
        q: f64,
        #[serde(default)]
        p_star: Option<f64>,
        #[serde(default)]
        p: Option<f64>,
        #[serde(default)]
        gap_scale: Option<f64>,
    },
    DeterministicSystem {
        states: usize,
        actions: usize,
        horizon: usize,
        seed: u64,
    },
    PartiallyDeterministic {
        states: usize,
        actions: usize,
        horizon: usize,
        stochastic_steps: usize,
        seed: u64,
    },
    FastMixing {
        states: usize,
        actions: usize,
        horizon: usize,
        seed: u64,
    },
    ContextualBandit {
        states: usize,
        actions: usize,
        seed: u64,
    },
    Random {
        states: usize,
        actions: usize,
        horizon: usize,
        seed: u64,
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    File {
        path: PathBuf,
    },
}

fn arms(p_star: Option<f64>, p: Option<f64>, gap_scale: Option<f64>, n: usize) -> Result<(f64, f64)> {
    match (gap_scale, p_star, p) {
        (Some(k), None, None) => {
            let eps = k / (2.0 * (n as f64).sqrt());
            Ok((0.5 + eps, 0.5 - eps))
        }
        (None, Some(ps), Some(p)) => Ok((ps, p)),
        (None, None, None) => Ok((0.75, 0.25)),
        _ => Err(Error::Config("give either gap_scale or both p_star and p".into())),
    }
}

impl InstanceSpec {
    /// Whether the instance changes with the episode count.
    pub fn depends_on_n(&self) -> bool {
        matches!(
            self,
            InstanceSpec::Hard { gap_scale: Some(_), .. } | InstanceSpec::BlindBranch { gap_scale: Some(_), .. }
        )
    }

    /// The MDP at sample size `n`, with the family's own behavior policy
    /// when it has one.
    pub fn build(&self, n: usize) -> Result<(Mdp64, Option<Policy64>)> {
        Ok(match self {
            InstanceSpec::Hard {
                num_actions,
                horizon,
                p_star,
                p,
                gap_scale,
                shift,
                which_optimal,
            } => {
                let (ps, pp) = arms(*p_star, *p, *gap_scale, n)?;
                let params = HardInstanceParams {
                    shift: *shift,
                    which_optimal: which_optimal.unwrap_or(OptimalArm::A1),
                    ..HardInstanceParams::new(*num_actions, *horizon, ps, pp)
                };
                let (m, mu) = hard_minimax_instance(&params)?;
                (m, Some(mu))
            }
            InstanceSpec::BlindBranch {
                num_actions,
                horizon,
                q,
                p_star,
                p,
                gap_scale,
            } => {
                let (ps, pp) = arms(*p_star, *p, *gap_scale, n)?;
                let params = BlindBranchParams {
                    num_actions: *num_actions,
                    horizon: *horizon,
                    q: *q,
                    p_star: ps,
                    p: pp,
                };
                let (m, mu) = blind_branch_instance(&params)?;
                (m, Some(mu))
            }
            InstanceSpec::DeterministicSystem {
                states,
                actions,
                horizon,
                seed,
            } => (deterministic_system(*states, *actions, *horizon, *seed)?, None),
            InstanceSpec::PartiallyDeterministic {
                states,
                actions,
                horizon,
                stochastic_steps,
                seed,
            } => (
                partially_deterministic(*states, *actions, *horizon, *stochastic_steps, *seed)?,
                None,
            ),
            InstanceSpec::FastMixing {
                states,
                actions,
                horizon,
                seed,
            } => (fast_mixing(*states, *actions, *horizon, *seed)?, None),
            InstanceSpec::ContextualBandit { states, actions, seed } => {
                (contextual_bandit(*states, *actions, *seed)?, None)
            }
            InstanceSpec::Random {
                states,
                actions,
                horizon,
                seed,
                alpha,
            } => (random_mdp(*states, *actions, *horizon, *seed, *alpha)?, None),
            InstanceSpec::File { path } => (crate::io::load_mdp(path)?, None),
        })
    }
}

/// How the logging policy is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BehaviorSpec {
    Uniform,
    /// `(1 - epsilon) pi* + epsilon uniform`.
    EpsilonGreedy { epsilon: f64 },
    /// The behavior policy the instance family ships with (uniform if none).
    Instance,
    File { path: PathBuf },
}

impl BehaviorSpec {
    pub fn build(&self, m: &Mdp64, family_default: Option<Policy64>) -> Result<Policy64> {
        let (hn, sn, an) = m.shape();
        match self {
            BehaviorSpec::Uniform => Ok(Policy::uniform(hn, sn, an)),
            BehaviorSpec::EpsilonGreedy { epsilon } => {
                let (_, star) = optimal_planning(m);
                Policy::epsilon_mix(&star, *epsilon)
            }
            BehaviorSpec::Instance => Ok(family_default.unwrap_or_else(|| Policy::uniform(hn, sn, an))),
            BehaviorSpec::File { path } => {
                let pi = crate::io::load_policy::<f64>(path)?;
                if pi.shape() != m.shape() {
                    return Err(Error::shape(format!("behavior policy is {:?}, MDP is {:?}", pi.shape(), m.shape())));
                }
                Ok(pi)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Vpvi,
    Apvi,
    AfApvi,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Vpvi => "vpvi",
            Algorithm::Apvi => "apvi",
            Algorithm::AfApvi => "af_apvi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantsMode {
    Paper,
    Unit,
}

impl ConstantsMode {
    pub fn constants(self) -> BoundConstants<f64> {
        match self {
            ConstantsMode::Paper => BoundConstants::paper(),
            ConstantsMode::Unit => BoundConstants::unit(),
        }
    }
}

fn default_delta() -> f64 {
    0.1
}

fn default_constants() -> ConstantsMode {
    ConstantsMode::Paper
}

fn default_behavior() -> BehaviorSpec {
    BehaviorSpec::Uniform
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub instance: InstanceSpec,
    #[serde(default = "default_behavior")]
    pub behavior: BehaviorSpec,
    pub algorithms: Vec<Algorithm>,
    pub n_grid: Vec<usize>,
    pub num_seeds: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_constants")]
    pub constants: ConstantsMode,
    #[serde(default)]
    pub master_seed: u64,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub parallelism: usize,
    #[serde(default)]
    pub record_wall_time: bool,
    /// Output prefix; `<output>.json` and `<output>.csv` are written.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithms selected".into()));
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return Err(Error::Config("n_grid must be nonempty with positive entries".into()));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("n_grid must be strictly ascending".into()));
        }
        if self.num_seeds == 0 {
            return Err(Error::Config("num_seeds must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta {} outside (0, 1)", self.delta)));
        }
        if let BehaviorSpec::EpsilonGreedy { epsilon } = self.behavior {
            if !(0.0..=1.0).contains(&epsilon) {
                return Err(Error::Config(format!("epsilon {epsilon} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SweepConfig = toml::from_str(text).map_err(|e| {
            let location = match e.span() {
                Some(span) => {
                    let line = text[..span.start].matches('\n').count() + 1;
                    format!("line {line}")
                }
                None => "config".into(),
            };
            Error::Parse {
                location,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let InstanceSpec::File { path } = &mut cfg.instance {
            fix(path);
        }
        if let BehaviorSpec::File { path } = &mut cfg.behavior {
            fix(path);
        }
        if let Some(out) = &mut cfg.output {
            fix(out);
        }
        Ok(cfg)
    }
}
