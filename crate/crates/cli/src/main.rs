use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use offpess::bounds::{intrinsic_bound, BoundConstants};
use offpess::estimation::fit_empirical_model;
use offpess::harness::{run_sweep, Algorithm, InstanceSpec, SweepConfig};
use offpess::io;
use offpess::ope::tmis_estimate;
use offpess::planners::{af_apvi, apvi, vpvi, PlannerConfig};
use offpess::sampling::{count, rollout, Dataset};
use offpess::zoo::{local_alternative, local_alternative_threshold, CountsSource, LocalInstanceParams};
use offpess::{optimal_planning, policy_evaluation, Error, Mdp64, Policy, Policy64, Result};
use serde_json::{json, Map, Value};

#[derive(Parser)]
#[command(name = "offpess", version, about = "Pessimistic offline RL on tabular MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Hard,
    BlindBranch,
    DeterministicSystem,
    PartiallyDeterministic,
    FastMixing,
    ContextualBandit,
    Random,
}

impl Family {
    fn tag(self) -> &'static str {
        match self {
            Family::Hard => "hard",
            Family::BlindBranch => "blind_branch",
            Family::DeterministicSystem => "deterministic_system",
            Family::PartiallyDeterministic => "partially_deterministic",
            Family::FastMixing => "fast_mixing",
            Family::ContextualBandit => "contextual_bandit",
            Family::Random => "random",
        }
    }

    fn randomized(self) -> bool {
        !matches!(self, Family::Hard | Family::BlindBranch)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Vpvi,
    Apvi,
    AfApvi,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConstantsArg {
    Paper,
    Unit,
}

#[derive(Subcommand)]
enum Command {
    /// Emit an instance-family MDP as JSON.
    Gen {
        #[arg(long, value_enum)]
        family: Family,
        #[arg(long)]
        states: Option<usize>,
        #[arg(long)]
        actions: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        p_star: Option<f64>,
        #[arg(long)]
        p: Option<f64>,
        /// Arm gap `kappa`, giving `p*, p = 1/2 +- kappa / (2 sqrt n)`.
        #[arg(long, requires = "n")]
        gap_scale: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        shift: Option<usize>,
        #[arg(long)]
        stochastic_steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the family's behavior policy (uniform if it has none).
        #[arg(long)]
        behavior_out: Option<PathBuf>,
    },
    /// Roll out a policy on an MDP; `.bin` outputs use the binary container.
    Sample {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a pessimistic planner on a dataset.
    Plan {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "apvi")]
        algorithm: AlgorithmArg,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 2.0)]
        c: f64,
        #[arg(long, default_value_t = 2.0)]
        c1: f64,
        #[arg(long, default_value_t = 14.0)]
        c2: f64,
        #[arg(long)]
        no_clip: bool,
        #[arg(long)]
        policy_out: Option<PathBuf>,
        /// True MDP, to report the learned policy's value and gap.
        #[arg(long)]
        mdp: Option<PathBuf>,
    },
    /// Bound breakdown for an MDP, behavior policy and episode count.
    Bound {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        behavior: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, value_enum, default_value = "paper")]
        constants: ConstantsArg,
        #[arg(long)]
        per_cell_csv: Option<PathBuf>,
    },
    /// Run a sweep from a TOML config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Master seed; replaces the one in the config.
        #[arg(long)]
        seed: u64,
        /// Output prefix; replaces the one in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Off-policy evaluation of a target policy from a dataset.
    Ope {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        /// True MDP and behavior policy, for weight bounds and the true value.
        #[arg(long, requires = "behavior")]
        mdp: Option<PathBuf>,
        #[arg(long, requires = "mdp")]
        behavior: Option<PathBuf>,
    },
    /// Build the local alternative transition kernel of an MDP.
    Perturb {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        behavior: PathBuf,
        #[arg(long)]
        n: usize,
        /// Use a dataset's counts instead of expected counts.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn print_json(v: &Value) -> Result<()> {
    emit(&(serde_json::to_string_pretty(v).expect("json value") + "\n"), None)
}

fn rows(a: &ndarray::Array2<f64>) -> Value {
    json!(a.outer_iter().map(|r| r.to_vec()).collect::<Vec<_>>())
}

fn shape_check(d: &Dataset<f64>, m: &Mdp64) -> Result<()> {
    let meta = d.meta();
    let ds = (meta.horizon, meta.num_states, meta.num_actions);
    if ds != m.shape() {
        return Err(Error::Shape(format!("dataset is {ds:?}, MDP is {:?}", m.shape())));
    }
    Ok(())
}

fn load_policy_for(path: &Path, m: &Mdp64) -> Result<Policy64> {
    let pi = io::load_policy::<f64>(path)?;
    if pi.shape() != m.shape() {
        return Err(Error::Shape(format!("policy is {:?}, MDP is {:?}", pi.shape(), m.shape())));
    }
    Ok(pi)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen {
            family,
            states,
            actions,
            horizon,
            seed,
            alpha,
            p_star,
            p,
            gap_scale,
            n,
            q,
            shift,
            stochastic_steps,
            out,
            behavior_out,
        } => {
            if family.randomized() && seed.is_none() {
                return Err(Error::InvalidParameter(format!("family {} needs --seed", family.tag())));
            }
            let mut doc = Map::new();
            doc.insert("family".into(), json!(family.tag()));
            let fields: [(&str, Option<Value>); 11] = [
                ("states", states.map(Value::from)),
                ("actions", actions.map(Value::from)),
                ("horizon", horizon.map(Value::from)),
                ("seed", seed.map(Value::from)),
                ("alpha", alpha.map(Value::from)),
                ("p_star", p_star.map(Value::from)),
                ("p", p.map(Value::from)),
                ("gap_scale", gap_scale.map(Value::from)),
                ("q", q.map(Value::from)),
                ("shift", shift.map(Value::from)),
                ("stochastic_steps", stochastic_steps.map(Value::from)),
            ];
            for (k, v) in fields {
                if let Some(v) = v {
                    doc.insert(k.into(), v);
                }
            }
            if !family.randomized() {
                if let Some(a) = doc.remove("actions") {
                    doc.insert("num_actions".into(), a);
                }
                doc.remove("seed");
            }
            let spec: InstanceSpec =
                serde_json::from_value(Value::Object(doc)).map_err(|e| Error::Config(format!("{}: {e}", family.tag())))?;
            let (m, mu) = spec.build(n.unwrap_or(1))?;
            emit(&(io::to_json_string(&m)? + "\n"), out.as_deref())?;
            if let Some(path) = behavior_out {
                let (hn, sn, an) = m.shape();
                io::save_policy(&path, &mu.unwrap_or_else(|| Policy::uniform(hn, sn, an)))?;
            }
            Ok(())
        }
        Command::Sample { mdp, policy, n, seed, out } => {
            let m = io::load_mdp::<f64>(&mdp)?;
            let pi = load_policy_for(&policy, &m)?;
            let d = rollout(&m, &pi, n, seed)?;
            match out {
                Some(p) if p.extension().is_some_and(|e| e == "bin") => io::save_dataset_binary(&p, &d),
                Some(p) => io::save_dataset_csv(&p, &d),
                None => io::write_dataset_csv(&d, std::io::stdout().lock()),
            }
        }
        Command::Plan {
            data,
            algorithm,
            delta,
            c,
            c1,
            c2,
            no_clip,
            policy_out,
            mdp,
        } => {
            let d = io::load_dataset::<f64>(&data)?;
            let em = fit_empirical_model(&count(&d));
            let cfg = PlannerConfig {
                delta,
                c_vpvi: c,
                c1,
                c2,
                clip_enabled: !no_clip,
            };
            let (alg, out) = match algorithm {
                AlgorithmArg::Vpvi => (Algorithm::Vpvi, vpvi(&em, &cfg)?),
                AlgorithmArg::Apvi => (Algorithm::Apvi, apvi(&em, &cfg)?),
                AlgorithmArg::AfApvi => (Algorithm::AfApvi, af_apvi(&em, &cfg)?),
            };
            if let Some(p) = policy_out {
                io::save_policy(&p, &out.policy)?;
            }
            let mut doc = json!({
                "algorithm": alg.name(),
                "n": d.meta().n,
                "iota": out.iota,
                "pessimistic_value": out.pessimistic_value(&em.initial()),
                "v_hat": rows(&out.v_hat),
                "absorbing_state": out.absorbing_state,
            });
            if let Some(p) = mdp {
                let m = io::load_mdp::<f64>(&p)?;
                shape_check(&d, &m)?;
                let v_star = optimal_planning(&m).0.value;
                let v_pi = policy_evaluation(&m, &out.policy)?.value;
                doc["v_star"] = json!(v_star);
                doc["v_pihat"] = json!(v_pi);
                doc["gap"] = json!(v_star - v_pi);
            }
            print_json(&doc)
        }
        Command::Bound {
            mdp,
            behavior,
            n,
            delta,
            constants,
            per_cell_csv,
        } => {
            let m = io::load_mdp::<f64>(&mdp)?;
            let mu = load_policy_for(&behavior, &m)?;
            let k = match constants {
                ConstantsArg::Paper => BoundConstants::paper(),
                ConstantsArg::Unit => BoundConstants::unit(),
            };
            let b = intrinsic_bound(&m, &mu, n, delta, &k)?;
            if let Some(p) = per_cell_csv {
                io::write_per_cell_csv(&b, std::fs::File::create(p)?)?;
            }
            print_json(&serde_json::to_value(&b).expect("bound breakdown serializes"))
        }
        Command::Sweep {
            config,
            seed,
            out,
            threads,
        } => {
            let mut cfg = SweepConfig::load(&config)?;
            cfg.master_seed = seed;
            if out.is_some() {
                cfg.output = out;
            }
            if let Some(t) = threads {
                cfg.parallelism = t;
            }
            let res = run_sweep(&cfg)?;
            print_json(&json!({
                "rows": res.rows.len(),
                "rates": res.rates,
                "output": cfg.output,
            }))
        }
        Command::Ope {
            data,
            policy,
            mdp,
            behavior,
        } => {
            let d = io::load_dataset::<f64>(&data)?;
            let pi = io::load_policy::<f64>(&policy)?;
            let mut res = tmis_estimate(&d, &pi)?;
            let mut doc = Map::new();
            if let (Some(mp), Some(bp)) = (mdp, behavior) {
                let m = io::load_mdp::<f64>(&mp)?;
                shape_check(&d, &m)?;
                let mu = load_policy_for(&bp, &m)?;
                res = res.with_weight_bounds(&m, &mu, &pi)?;
                doc.insert("true_value".into(), json!(policy_evaluation(&m, &pi)?.value));
            }
            doc.insert("v_hat".into(), json!(res.v_hat));
            doc.insert("v_hat_raw".into(), json!(res.v_hat_raw));
            if let Some((ts, ta)) = res.weight_bounds {
                doc.insert("tau_s".into(), json!(ts));
                doc.insert("tau_a".into(), json!(ta));
            }
            doc.insert("d_hat_pi".into(), rows(&res.d_hat_pi));
            print_json(&Value::Object(doc))
        }
        Command::Perturb {
            mdp,
            behavior,
            n,
            data,
            out,
        } => {
            let m = io::load_mdp::<f64>(&mdp)?;
            let mu = load_policy_for(&behavior, &m)?;
            let mut params = LocalInstanceParams::expected(&m, &mu, n)?;
            if let Some(p) = data {
                let d = io::load_dataset::<f64>(&p)?;
                shape_check(&d, &m)?;
                params.counts = CountsSource::Dataset(count(&d));
            }
            let threshold = local_alternative_threshold(&m, &mu)?;
            let alt = local_alternative(&m, &params)?;
            match out {
                Some(p) => {
                    io::save_mdp(&p, &alt)?;
                    print_json(&json!({ "n": n, "zeta": params.zeta, "threshold": threshold }))
                }
                None => emit(&(io::to_json_string(&alt)? + "\n"), None),
            }
        }
    }
}

fn error_document(kind: &str, message: &str) -> String {
    json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            eprintln!("{}", error_document("usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_document(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
