use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use privdist::analysis::{
    accuracy_bound, audit_sensitivity_with, calibrate_constants, compare_sensitivities, limit_matrix, q1_bound,
    rho_less_than, spectral_radius, trace_metrics, tune, AuditMode, BoundConstants, SensitivityEnvelope, AUDITED,
    DEFAULT_THETA,
};
use privdist::engine::Algorithm;
use privdist::harness::{read_config_map, run_experiment_with, run_trials, with_jobs, write_artifacts, write_file, ConfigMap, ExperimentConfig, Setup};
use privdist::privacy_eval::{collect_attacker_view, mnmi, AttackerVariant, Scenario, DEFAULT_NEIGHBORS};
use privdist::topology::{sigma_over_schedule, spectral_constants};
use privdist::{Error, Result};

#[derive(Parser)]
#[command(name = "privdist", version, about = "Differentially private distributed optimization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (`key = value` lines)
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set schedule.q1=0.9` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Override schedule.epsilon
    #[arg(long)]
    epsilon: Option<f64>,
    /// Override run.trials
    #[arg(long)]
    trials: Option<usize>,
    /// Override run.iterations
    #[arg(long)]
    iterations: Option<u64>,
    /// Override run.seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism)
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut map: ConfigMap = read_config_map(&self.config)?;
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(vec![format!("--set expects KEY=VALUE, got `{kv}`")]))?;
            map.set(k.trim(), v.trim());
        }
        if let Some(e) = self.epsilon {
            map.set("schedule.epsilon", e);
        }
        if let Some(t) = self.trials {
            map.set("run.trials", t);
        }
        if let Some(t) = self.iterations {
            map.set("run.iterations", t);
        }
        if let Some(s) = self.seed {
            map.set("run.seed", s);
        }
        let base = self.config.parent().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
        ExperimentConfig::from_map(&map, &base)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and write trace, curve and summary artifacts
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Override run.algorithm
        #[arg(long)]
        algorithm: Option<String>,
    },
    /// Sensitivity envelopes on an adjacent pair and the expected orderings between methods
    Audit {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Envelope printed in CSV mode
        #[arg(long, default_value = "alg1")]
        algorithm: String,
        #[arg(long, value_enum, default_value_t = Mode::Replay)]
        mode: Mode,
        /// Exit with status 1 if any check fails
        #[arg(long)]
        strict: bool,
    },
    /// Spectral constants, the q1 condition and the limit-matrix radius for a config
    Spectral {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = DEFAULT_THETA)]
        theta: f64,
    },
    /// Minimize the accuracy bound over (gamma, q1, q2)
    Tune(TuneArgs),
    /// Empirical leakage in the three-agent attacker scenario
    Mnmi(MnmiArgs),
    /// Residual curves of several algorithms on one problem and seed
    Compare {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated algorithm tags
        #[arg(long, default_value = "alg1,dp-dgd")]
        algorithms: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Replay,
    SharedNoise,
}

#[derive(Args)]
struct TuneArgs {
    /// Take epsilon, delta, n, p, mu, L from a config and calibrate c1, c2 from a noiseless run
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long = "smoothness")]
    l: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    c2: Option<f64>,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Args)]
struct MnmiArgs {
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 2000)]
    trials: usize,
    #[arg(long, default_value_t = 300)]
    iterations: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_NEIGHBORS)]
    neighbors: usize,
    /// reconstructed, verbatim or joint
    #[arg(long, default_value = "reconstructed")]
    variant: String,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    q1: Option<f64>,
    #[arg(long)]
    q2: Option<f64>,
    /// Write the (trial, k, v, attacker_estimate) dataset here
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

macro_rules! outln {
    ($out:expr, $($arg:tt)*) => {{
        let _ = writeln!($out, $($arg)*);
    }};
}

fn push_json(out: &mut String, v: &Value) {
    out.push_str(&serde_json::to_string_pretty(v).expect("json"));
    out.push('\n');
}

fn cmd_run(out: &mut String, cfg: &ConfigArgs, algorithm: Option<&str>) -> Result<()> {
    let mut c = cfg.load()?;
    if let Some(a) = algorithm {
        c.run.algorithm = a.parse()?;
        c.source.set("run.algorithm", a);
    }
    let res = run_experiment_with(&c, cfg.jobs)?;
    for p in write_artifacts(&c, &res)? {
        log::info!("wrote {}", p.display());
    }
    match cfg.format {
        Format::Csv => out.push_str(&res.curves.to_csv()),
        Format::Json => push_json(out, &res.summary),
    }
    Ok(())
}

fn envelope_json(e: &SensitivityEnvelope) -> Value {
    json!({
        "algorithm": e.algorithm.tag(),
        "trials": e.trials,
        "delta_hat": e.delta_hat,
        "bound": e.bound,
        "max_other_rows": e.max_other_rows(),
    })
}

fn cmd_audit(out: &mut String, cfg: &ConfigArgs, algorithm: &str, mode: Mode, strict: bool) -> Result<bool> {
    let c = cfg.load()?;
    let setup = Setup::build(&c)?;
    let pair = setup.adjacent_pair(&c)?;
    let (t, trials) = (c.run.iterations, c.run.trials);
    let (envelopes, checks) = match mode {
        Mode::Replay => {
            let r = with_jobs(cfg.jobs, || compare_sensitivities(&pair, &setup.weights, &c.schedule, t, trials, c.run.seed))?;
            (r.envelopes, r.checks)
        }
        Mode::SharedNoise => {
            let envs = with_jobs(cfg.jobs, || {
                AUDITED
                    .iter()
                    .map(|a| audit_sensitivity_with(&pair, *a, &setup.weights, &c.schedule, t, trials, c.run.seed, AuditMode::SharedNoise))
                    .collect::<Result<Vec<_>>>()
            })?;
            (envs, Vec::new())
        }
    };
    let alg1 = envelopes.iter().find(|e| e.algorithm == Algorithm::Alg1).expect("alg1 audited");
    let mut invariants = vec![
        ("sensitivity_bound".to_string(), alg1.within_bound(1e-12)),
        ("other_rows_identical".to_string(), alg1.max_other_rows() == 0.0),
    ];
    for ch in &checks {
        invariants.push((format!("{} <= {}", ch.lhs, ch.rhs), ch.holds));
    }
    for (name, ok) in &invariants {
        eprintln!("{} {name}", if *ok { "PASS" } else { "FAIL" });
    }
    let all = invariants.iter().all(|(_, ok)| *ok);
    match cfg.format {
        Format::Csv => {
            let want: Algorithm = algorithm.parse()?;
            let e = envelopes
                .iter()
                .find(|e| e.algorithm == want)
                .ok_or_else(|| Error::InvalidInput(format!("{want} was not audited")))?;
            out.push_str(&e.to_csv());
        }
        Format::Json => push_json(out, &json!({
            "mode": match mode { Mode::Replay => "replay", Mode::SharedNoise => "shared-noise" },
            "i0": pair.i0,
            "delta": pair.delta,
            "envelopes": envelopes.iter().map(envelope_json).collect::<Vec<_>>(),
            "orderings": checks.iter().map(|c| json!({
                "lhs": c.lhs.tag(), "rhs": c.rhs.tag(), "holds": c.holds,
                "violations": c.violations, "worst_excess": c.worst_excess,
            })).collect::<Vec<_>>(),
            "invariants": invariants.iter().map(|(k, v)| json!({"name": k, "pass": v})).collect::<Vec<_>>(),
        })),
    }
    Ok(all || !strict)
}

fn cmd_spectral(out: &mut String, cfg: &ConfigArgs, theta: f64) -> Result<()> {
    let c = cfg.load()?;
    let setup = Setup::build(&c)?;
    let sc = spectral_constants(&setup.weights)?;
    let bound = q1_bound(sc.sigma, theta, sc.w_minus_i_norm)?;
    let q1 = c.schedule.q1;
    let a = limit_matrix(sc.sigma, q1, sc.w_minus_i_norm);
    let dm = privdist::nalgebra::DMatrix::from_iterator(2, 2, a.iter().copied());
    let rho = spectral_radius(&dm);
    let det_test = rho_less_than(&dm, 1.0).ok();
    let sigma_sched = sigma_over_schedule(&setup.weights, q1)?;
    let rows: Vec<(&str, Value)> = vec![
        ("n", json!(setup.weights.n())),
        ("sigma", json!(sc.sigma)),
        ("w_minus_i_norm", json!(sc.w_minus_i_norm)),
        ("theta", json!(theta)),
        ("q1_bound", json!(bound)),
        ("q1", json!(q1)),
        ("q1_within_bound", json!(q1 <= bound)),
        ("sigma_over_schedule", json!(sigma_sched)),
        ("limit_rho", json!(rho)),
        ("limit_det", json!((privdist::nalgebra::Matrix2::identity() - a).determinant())),
        ("limit_rho_below_one", json!(det_test)),
    ];
    match cfg.format {
        Format::Csv => {
            outln!(out, "key,value");
            for (k, v) in rows {
                outln!(out, "{k},{v}");
            }
        }
        Format::Json => push_json(out, &Value::Object(rows.into_iter().map(|(k, v)| (k.to_string(), v)).collect())),
    }
    Ok(())
}

fn cmd_tune(out: &mut String, a: &TuneArgs) -> Result<()> {
    let mut missing = Vec::new();
    let mut need = |name: &str, v: Option<f64>| {
        v.unwrap_or_else(|| {
            missing.push(format!("--{name} is required without --config"));
            f64::NAN
        })
    };
    let consts = if let Some(path) = &a.config {
        let c = privdist::load_config(path)?;
        let setup = Setup::build(&c)?;
        let pr = &setup.problem;
        let (c1, c2) = match (a.c1, a.c2) {
            (Some(c1), Some(c2)) => (c1, c2),
            (c1, c2) => {
                let reference = run_trials(&setup, &c.schedule, Algorithm::Alg1NoiselessConstant.dynamics(), c.run.iterations, 1, c.run.seed, false)?;
                let (k1, k2) = calibrate_constants(&trace_metrics(&reference)?);
                (c1.unwrap_or(k1), c2.unwrap_or(k2))
            }
        };
        BoundConstants {
            epsilon: a.epsilon.unwrap_or(c.schedule.epsilon),
            delta: a.delta.unwrap_or(c.schedule.delta),
            mu: a.mu.unwrap_or_else(|| pr.strong_convexity()),
            l: a.l.unwrap_or_else(|| pr.smoothness()),
            n: a.n.unwrap_or(pr.n()),
            p: a.p.unwrap_or(pr.dim()),
            c1,
            c2,
        }
    } else {
        let k = BoundConstants {
            epsilon: need("epsilon", a.epsilon),
            delta: need("delta", a.delta),
            mu: need("mu", a.mu),
            l: need("smoothness", a.l),
            n: a.n.unwrap_or(0),
            p: a.p.unwrap_or(0),
            c1: need("c1", a.c1),
            c2: need("c2", a.c2),
        };
        if a.n.is_none() || a.p.is_none() {
            missing.push("--n and --p are required without --config".into());
        }
        if !missing.is_empty() {
            return Err(Error::Config(missing));
        }
        k
    };
    let t = tune(&consts, a.restarts, a.seed)?;
    debug_assert_eq!(t.bound, accuracy_bound(t.gamma, t.q1, t.q2, &consts)?);
    match a.format {
        Format::Csv => outln!(out, "gamma,q1,q2,bound\n{:?},{:?},{:?},{:?}", t.gamma, t.q1, t.q2, t.bound),
        Format::Json => push_json(out, &json!({ "constants": consts, "gamma": t.gamma, "q1": t.q1, "q2": t.q2, "bound": t.bound, "cycles": t.cycles })),
    }
    Ok(())
}

fn cmd_mnmi(out: &mut String, a: &MnmiArgs) -> Result<()> {
    let d = Scenario::default();
    let sc = Scenario {
        delta: a.delta.unwrap_or(d.delta),
        gamma: a.gamma.unwrap_or(d.gamma),
        beta: a.beta.unwrap_or(d.beta),
        q1: a.q1.unwrap_or(d.q1),
        q2: a.q2.unwrap_or(d.q2),
        ..d
    };
    let variant: AttackerVariant = a.variant.parse()?;
    let (pr, w, sp) = sc.build(a.epsilon)?;
    // The verbatim and reconstructed attacker views are always reported together.
    let companion = match variant {
        AttackerVariant::Verbatim => AttackerVariant::Reconstructed,
        _ => AttackerVariant::Verbatim,
    };
    let (ds, report, other) = with_jobs(a.jobs, || {
        let ds = collect_attacker_view(&pr, &w, &sp, a.iterations, a.trials, a.seed)?;
        let r = mnmi(&ds, a.neighbors, variant)?;
        let o = mnmi(&ds, a.neighbors, companion)?;
        Ok((ds, r, o))
    })?;
    if let Some(p) = &a.dataset {
        write_file(p, &ds.to_csv())?;
        log::info!("wrote {}", p.display());
    }
    match a.format {
        Format::Csv => {
            outln!(out, "k,ratio");
            for (k, r) in report.ratios.iter().enumerate() {
                match r {
                    Some(v) => outln!(out, "{},{v:?}", k + 1),
                    None => outln!(out, "{},", k + 1),
                }
            }
        }
        Format::Json => {
            let mut v = report.to_json();
            v["scenario"] = json!(sc);
            v["epsilon"] = json!(a.epsilon);
            v["companion"] = json!({ "variant": other.variant, "mnmi": other.mnmi, "argmax_k": other.argmax_k });
            push_json(out, &v);
        }
    }
    Ok(())
}

fn cmd_compare(out: &mut String, cfg: &ConfigArgs, algorithms: &str) -> Result<()> {
    let c = cfg.load()?;
    let algs: Vec<Algorithm> = algorithms.split(',').map(str::parse).collect::<Result<_>>()?;
    let setup = Setup::build(&c)?;
    let mut curves = Vec::new();
    for a in &algs {
        let traces = with_jobs(cfg.jobs, || {
            run_trials(&setup, &c.schedule, a.dynamics(), c.run.iterations, c.run.trials, c.run.seed, false)
        })?;
        curves.push((*a, trace_metrics(&traces)?));
    }
    match cfg.format {
        Format::Csv => {
            outln!(out, "algorithm,k,residual_mean,residual_std");
            for (a, cv) in &curves {
                for (k, (m, s)) in cv.residual_mean.iter().zip(&cv.residual_std).enumerate() {
                    outln!(out, "{a},{k},{m:?},{s:?}");
                }
            }
        }
        Format::Json => push_json(out, &json!({
            "config": c.source.to_json(),
            "results": curves.iter().map(|(a, cv)| json!({
                "algorithm": a.tag(),
                "final_residual": cv.final_residual,
                "residual_mean": cv.residual_mean,
                "residual_std": cv.residual_std,
            })).collect::<Vec<_>>(),
        })),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut out = String::new();
    let result = match &cli.command {
        Command::Run { cfg, algorithm } => cmd_run(&mut out, cfg, algorithm.as_deref()).map(|_| true),
        Command::Audit { cfg, algorithm, mode, strict } => cmd_audit(&mut out, cfg, algorithm, *mode, *strict),
        Command::Spectral { cfg, theta } => cmd_spectral(&mut out, cfg, *theta).map(|_| true),
        Command::Tune(a) => cmd_tune(&mut out, a).map(|_| true),
        Command::Mnmi(a) => cmd_mnmi(&mut out, a).map(|_| true),
        Command::Compare { cfg, algorithms } => cmd_compare(&mut out, cfg, algorithms).map(|_| true),
    };
    // A closed pipe (`| head`) is not an error worth reporting.
    let _ = std::io::stdout().lock().write_all(out.as_bytes());
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
