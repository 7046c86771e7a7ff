use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Algorithm, SweepConfig};
use super::rate::{fit_rate, median, RateFit};
use crate::bounds::{intrinsic_bound, BoundBreakdown};
use crate::error::{Error, Result};
use crate::estimation::fit_empirical_model;
use crate::mdp::policy_evaluation;
use crate::planners::{af_apvi, apvi, vpvi, PlannerConfig};
use crate::sampling::{count, rollout};
use crate::{Mdp64, Policy64};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one trial, a stable hash of its coordinates, so adding or
/// removing algorithms leaves every other trial's data unchanged.
pub fn trial_seed(master_seed: u64, algorithm: Algorithm, n: usize, seed_index: usize) -> u64 {
    let code = match algorithm {
        Algorithm::Vpvi => 1,
        Algorithm::Apvi => 2,
        Algorithm::AfApvi => 3,
    };
    let mut h = splitmix64(master_seed);
    for x in [code, n as u64, seed_index as u64] {
        h = splitmix64(h ^ x);
    }
    h
}

mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// One `(algorithm, n, seed)` trial. Bound columns are `null` in JSON when
/// the corresponding coverage coefficient is infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub algorithm: Algorithm,
    pub n: usize,
    pub seed_index: usize,
    pub trial_seed: u64,
    pub v_star: f64,
    pub v_pihat: f64,
    pub gap: f64,
    pub v_hat_pessimistic: f64,
    pub main_term: f64,
    /// The algorithm's own upper bound: `vpvi_bound` for VPVI, the intrinsic
    /// bound for the APVI variants.
    #[serde(with = "finite_or_null")]
    pub bound_main: f64,
    #[serde(with = "finite_or_null")]
    pub uniform_bound: f64,
    #[serde(with = "finite_or_null")]
    pub horizon_free_bound: f64,
    #[serde(with = "finite_or_null")]
    pub concentrability_bound: f64,
    #[serde(with = "finite_or_null")]
    pub env_norm_bound: f64,
    pub af_gap: f64,
    pub wall_time_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmRate {
    pub algorithm: Algorithm,
    /// `(n, median gap)` for every grid point.
    pub median_gaps: Vec<(usize, f64)>,
    /// Fit over the positive medians; absent with fewer than three.
    pub fit: Option<RateFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// The sweep definition, with the execution-only `parallelism` and
    /// `output` fields cleared so results compare across machines.
    pub config: SweepConfig,
    pub rows: Vec<SweepRow>,
    pub rates: Vec<AlgorithmRate>,
}

impl SweepResult {
    /// Median gaps and fitted slopes recomputed from `rows`.
    pub fn fit_rates(rows: &[SweepRow]) -> Vec<AlgorithmRate> {
        let mut grouped: BTreeMap<Algorithm, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
        for r in rows {
            grouped.entry(r.algorithm).or_default().entry(r.n).or_default().push(r.gap);
        }
        grouped
            .into_iter()
            .map(|(algorithm, per_n)| {
                let median_gaps: Vec<(usize, f64)> = per_n
                    .into_iter()
                    .map(|(n, gaps)| (n, median(&gaps).unwrap_or(0.0)))
                    .collect();
                let points: Vec<(f64, f64)> = median_gaps.iter().map(|&(n, g)| (n as f64, g)).collect();
                let fit = match fit_rate(&points) {
                    Ok(f) => Some(f),
                    Err(e) => {
                        log::warn!("no rate fit for {}: {e}", algorithm.name());
                        None
                    }
                };
                AlgorithmRate {
                    algorithm,
                    median_gaps,
                    fit,
                }
            })
            .collect()
    }

    pub fn rate(&self, algorithm: Algorithm) -> Option<&AlgorithmRate> {
        self.rates.iter().find(|r| r.algorithm == algorithm)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = crate::io::to_json_string(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        crate::io::from_json_str(text)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Parse {
                location: "csv output".into(),
                message: e.to_string(),
            })?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes `<prefix>.json` and `<prefix>.csv`.
    pub fn save(&self, prefix: &Path) -> Result<()> {
        std::fs::write(prefix.with_extension("json"), self.to_json()?)?;
        std::fs::write(prefix.with_extension("csv"), self.to_csv()?)?;
        Ok(())
    }
}

struct Setting {
    m: Mdp64,
    mu: Policy64,
    bounds: BoundBreakdown<f64>,
}

fn settings(cfg: &SweepConfig) -> Result<Vec<Setting>> {
    let constants = cfg.constants.constants();
    let mut shared: Option<(Mdp64, Policy64)> = None;
    let mut out = Vec::with_capacity(cfg.n_grid.len());
    for &n in &cfg.n_grid {
        let (m, mu) = match (&shared, cfg.instance.depends_on_n()) {
            (Some(pair), false) => pair.clone(),
            _ => {
                let (m, family_mu) = cfg.instance.build(n)?;
                let mu = cfg.behavior.build(&m, family_mu)?;
                if !cfg.instance.depends_on_n() {
                    shared = Some((m.clone(), mu.clone()));
                }
                (m, mu)
            }
        };
        let bounds = intrinsic_bound(&m, &mu, n, cfg.delta, &constants)?;
        out.push(Setting { m, mu, bounds });
    }
    Ok(out)
}

fn run_trial(cfg: &SweepConfig, setting: &Setting, algorithm: Algorithm, n: usize, seed_index: usize) -> Result<SweepRow> {
    let start = Instant::now();
    let seed = trial_seed(cfg.master_seed, algorithm, n, seed_index);
    let data = rollout(&setting.m, &setting.mu, n, seed)?;
    let em = fit_empirical_model(&count(&data));
    let pcfg = PlannerConfig {
        delta: cfg.delta,
        ..PlannerConfig::default()
    };
    let out = match algorithm {
        Algorithm::Vpvi => vpvi(&em, &pcfg)?,
        Algorithm::Apvi => apvi(&em, &pcfg)?,
        Algorithm::AfApvi => af_apvi(&em, &pcfg)?,
    };
    let v_pihat = policy_evaluation(&setting.m, &out.policy)?.value;
    let b = &setting.bounds;
    let bound_main = match algorithm {
        Algorithm::Vpvi => b.vpvi_bound,
        Algorithm::Apvi | Algorithm::AfApvi => b.apvi_bound,
    };
    let wall = start.elapsed().as_secs_f64() * 1e3;
    Ok(SweepRow {
        algorithm,
        n,
        seed_index,
        trial_seed: seed,
        v_star: b.v_star,
        v_pihat,
        gap: b.v_star - v_pihat,
        v_hat_pessimistic: out.pessimistic_value(setting.m.initial()),
        main_term: b.main_term,
        bound_main,
        uniform_bound: b.uniform_bound,
        horizon_free_bound: b.horizon_free_bound,
        concentrability_bound: b.concentrability_bound,
        env_norm_bound: b.env_norm_bound,
        af_gap: b.af_gap,
        wall_time_ms: cfg.record_wall_time.then_some(wall),
    })
}

/// Runs every `(algorithm, n, seed)` trial of the sweep. Rows come back in
/// canonical `(algorithm, n, seed)` order whatever the parallelism.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let settings = settings(cfg)?;
    let mut jobs = Vec::new();
    for &alg in &cfg.algorithms {
        for (i, &n) in cfg.n_grid.iter().enumerate() {
            for seed_index in 0..cfg.num_seeds {
                jobs.push((alg, i, n, seed_index));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut rows: Vec<SweepRow> = pool.install(|| {
        jobs.par_iter()
            .map(|&(alg, i, n, seed_index)| run_trial(cfg, &settings[i], alg, n, seed_index))
            .collect::<Result<Vec<_>>>()
    })?;
    rows.sort_by_key(|r| (r.algorithm, r.n, r.seed_index));
    for r in &rows {
        if r.gap < -1e-10 {
            return Err(Error::param(format!(
                "{} at n={} seed {} beat the optimal value by {}",
                r.algorithm.name(),
                r.n,
                r.seed_index,
                -r.gap
            )));
        }
    }
    let rates = SweepResult::fit_rates(&rows);
    let mut recorded = cfg.clone();
    recorded.parallelism = 0;
    recorded.output = None;
    let result = SweepResult {
        config: recorded,
        rows,
        rates,
    };
    if let Some(prefix) = &cfg.output {
        result.save(prefix)?;
    }
    Ok(result)
}
