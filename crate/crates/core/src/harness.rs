//! Experiment configuration, Monte Carlo orchestration and artifact output.
//!
//! Config files are flat `key = value` lines with dotted sections:
//!
//! ```text
//! # sensor fusion, epsilon = 1
//! topology.kind = erdos-renyi
//! topology.n = 100
//! topology.p_edge = 0.1
//! schedule.gamma = 0.001
//! schedule.beta = 1000
//! schedule.q1 = 0.97
//! schedule.q2 = 0.99
//! schedule.epsilon = 1
//! schedule.delta = 1
//! run.algorithm = alg1
//! run.iterations = 1000
//! run.trials = 1000
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::analysis::{trace_metrics, Curves};
use crate::engine::{simulate, Algorithm, Dynamics, RunOptions, Trace};
use crate::error::{Error, Result};
use crate::objective::{make_adjacent, random_problem, AdjacentPair, Problem};
use crate::rng::RNG_ALGORITHM;
use crate::schedule::{privacy_spent, ScheduleParams};
use crate::topology::{erdos_renyi_connected, metropolis_weights, ring, Graph, WeightMatrix};

/// Parsed `key = value` pairs, sorted by key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut errors = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) if !k.trim().is_empty() => {
                    if entries.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                        errors.push(format!("line {}: duplicate key `{}`", no + 1, k.trim()));
                    }
                }
                _ => errors.push(format!("line {}: expected `key = value`, got `{}`", no + 1, line)),
            }
        }
        if errors.is_empty() {
            Ok(ConfigMap { entries })
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// One `key = value` line per entry in key order.
    pub fn canonical(&self) -> String {
        self.entries.iter().fold(String::new(), |mut s, (k, v)| {
            let _ = writeln!(s, "{k} = {v}");
            s
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!(self.entries)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum TopologyKind {
    ErdosRenyi { p_edge: f64 },
    Ring,
    EdgeList(PathBuf),
    Weights(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemSpec {
    pub m: usize,
    pub p: usize,
    pub omega_range: (f64, f64),
    pub seed: u64,
    /// Load costs from a JSON document instead of sampling.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSpec {
    pub algorithm: Algorithm,
    pub iterations: u64,
    pub trials: usize,
    pub seed: u64,
    pub retain: bool,
}

/// Adjacent-pair construction for audits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairSpec {
    pub i0: usize,
    pub delta: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OutputSpec {
    pub trace: Option<PathBuf>,
    pub curves: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub topology: TopologySpec,
    pub problem: ProblemSpec,
    pub schedule: ScheduleParams,
    pub run: RunSpec,
    pub pair: PairSpec,
    pub output: OutputSpec,
    #[serde(skip)]
    pub source: ConfigMap,
}

const KNOWN_KEYS: &[&str] = &[
    "topology.kind",
    "topology.n",
    "topology.p_edge",
    "topology.seed",
    "topology.path",
    "problem.m",
    "problem.p",
    "problem.omega_min",
    "problem.omega_max",
    "problem.seed",
    "problem.path",
    "schedule.gamma",
    "schedule.beta",
    "schedule.q1",
    "schedule.q2",
    "schedule.epsilon",
    "schedule.delta",
    "run.algorithm",
    "run.iterations",
    "run.trials",
    "run.seed",
    "run.retain",
    "pair.i0",
    "pair.delta",
    "pair.seed",
    "output.trace",
    "output.curves",
    "output.summary",
];

struct Reader<'a> {
    map: &'a ConfigMap,
    errors: Vec<String>,
}

impl Reader<'_> {
    fn parse<T: FromStr>(&mut self, key: &str, default: Option<T>) -> Option<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.map.get(key) {
            Some(raw) => match raw.parse::<T>() {
                Ok(v) => Some(v),
                Err(e) => {
                    self.errors.push(format!("{key}: cannot parse `{raw}`: {e}"));
                    None
                }
            },
            None if default.is_some() => default,
            None => {
                self.errors.push(format!("missing required key `{key}`"));
                None
            }
        }
    }
}

fn resolve(base: &Path, raw: &str) -> PathBuf {
    let p = PathBuf::from(raw);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    /// Validates every field, collecting all violations. Relative paths resolve against `base`.
    pub fn from_map(map: &ConfigMap, base: &Path) -> Result<Self> {
        let mut r = Reader { map, errors: Vec::new() };
        for k in map.entries.keys() {
            if !KNOWN_KEYS.contains(&k.as_str()) {
                r.errors.push(format!("unknown key `{k}`"));
            }
        }
        let kind_raw = r.parse::<String>("topology.kind", None);
        let n = r.parse::<usize>("topology.n", None);
        let tseed = r.parse::<u64>("topology.seed", Some(0));
        let path = map.get("topology.path").map(|p| resolve(base, p));
        let kind = match kind_raw.as_deref() {
            Some("erdos-renyi") => r.parse::<f64>("topology.p_edge", None).map(|p_edge| TopologyKind::ErdosRenyi { p_edge }),
            Some("ring") => Some(TopologyKind::Ring),
            Some(k @ ("edge-list" | "weights")) => match path {
                Some(p) if k == "edge-list" => Some(TopologyKind::EdgeList(p)),
                Some(p) => Some(TopologyKind::Weights(p)),
                None => {
                    r.errors.push(format!("topology.kind = {k} needs topology.path"));
                    None
                }
            },
            Some(other) => {
                r.errors.push(format!("topology.kind: unknown kind `{other}` (erdos-renyi, ring, edge-list, weights)"));
                None
            }
            None => None,
        };
        if let Some(TopologyKind::ErdosRenyi { p_edge }) = &kind {
            if !(*p_edge > 0.0 && *p_edge <= 1.0) {
                r.errors.push(format!("topology.p_edge must lie in (0, 1], got {p_edge}"));
            }
        }

        let m = r.parse::<usize>("problem.m", Some(3));
        let p = r.parse::<usize>("problem.p", Some(2));
        let wmin = r.parse::<f64>("problem.omega_min", Some(0.1));
        let wmax = r.parse::<f64>("problem.omega_max", Some(1.0));
        let pseed = r.parse::<u64>("problem.seed", Some(0));
        if let (Some(a), Some(b)) = (wmin, wmax) {
            if !(a >= 0.0 && b >= a) {
                r.errors.push(format!("problem.omega_min/omega_max must satisfy 0 <= min <= max, got {a}, {b}"));
            }
        }
        if m == Some(0) || p == Some(0) {
            r.errors.push("problem.m and problem.p must be positive".into());
        }

        let gamma = r.parse::<f64>("schedule.gamma", None);
        let beta = r.parse::<f64>("schedule.beta", None);
        let q1 = r.parse::<f64>("schedule.q1", None);
        let q2 = r.parse::<f64>("schedule.q2", None);
        let epsilon = r.parse::<f64>("schedule.epsilon", None);
        let delta = r.parse::<f64>("schedule.delta", None);
        let schedule = match (gamma, beta, q1, q2, epsilon, delta) {
            (Some(gamma), Some(beta), Some(q1), Some(q2), Some(epsilon), Some(delta)) => {
                let sp = ScheduleParams { gamma, beta, q1, q2, epsilon, delta };
                r.errors.extend(sp.violations().into_iter().map(|v| format!("schedule: {v}")));
                Some(sp)
            }
            _ => None,
        };

        let algorithm = match map.get("run.algorithm") {
            Some(tag) => match tag.parse::<Algorithm>() {
                Ok(a) => Some(a),
                Err(e) => {
                    r.errors.push(format!("run.algorithm: {e}"));
                    None
                }
            },
            None => {
                r.errors.push("missing required key `run.algorithm`".into());
                None
            }
        };
        let iterations = r.parse::<u64>("run.iterations", None);
        let trials = r.parse::<usize>("run.trials", Some(1));
        let rseed = r.parse::<u64>("run.seed", Some(0));
        let retain = r.parse::<bool>("run.retain", Some(false));
        if iterations == Some(0) {
            r.errors.push("run.iterations must be at least 1".into());
        }
        if trials == Some(0) {
            r.errors.push("run.trials must be at least 1".into());
        }

        let i0 = r.parse::<usize>("pair.i0", Some(0));
        let pdelta = r.parse::<f64>("pair.delta", Some(1.0));
        let pair_seed = r.parse::<u64>("pair.seed", Some(pseed.unwrap_or(0)));
        if let (Some(i), Some(n)) = (i0, n) {
            if i >= n {
                r.errors.push(format!("pair.i0 = {i} out of range for {n} agents"));
            }
        }

        let output = OutputSpec {
            trace: map.get("output.trace").map(|p| resolve(base, p)),
            curves: map.get("output.curves").map(|p| resolve(base, p)),
            summary: map.get("output.summary").map(|p| resolve(base, p)),
        };

        if !r.errors.is_empty() {
            return Err(Error::Config(r.errors));
        }
        // Every Option is Some once no errors were recorded.
        Ok(ExperimentConfig {
            topology: TopologySpec { kind: kind.unwrap(), n: n.unwrap(), seed: tseed.unwrap() },
            problem: ProblemSpec {
                m: m.unwrap(),
                p: p.unwrap(),
                omega_range: (wmin.unwrap(), wmax.unwrap()),
                seed: pseed.unwrap(),
                path: map.get("problem.path").map(|p| resolve(base, p)),
            },
            schedule: schedule.unwrap(),
            run: RunSpec {
                algorithm: algorithm.unwrap(),
                iterations: iterations.unwrap(),
                trials: trials.unwrap(),
                seed: rseed.unwrap(),
                retain: retain.unwrap(),
            },
            pair: PairSpec { i0: i0.unwrap(), delta: pdelta.unwrap(), seed: pair_seed.unwrap() },
            output,
            source: map.clone(),
        })
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        Self::from_map(&ConfigMap::parse(text)?, base)
    }
}

pub fn read_config_map(path: &Path) -> Result<ConfigMap> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ConfigMap::parse(&text)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let map = read_config_map(path)?;
    ExperimentConfig::from_map(&map, path.parent().unwrap_or(Path::new(".")))
}

/// Network and costs built from a config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub graph: Graph,
    pub weights: WeightMatrix,
    pub problem: Problem,
}

impl Setup {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let t = &cfg.topology;
        let read = |p: &Path| fs::read_to_string(p).map_err(|e| Error::io(p, e));
        let (graph, weights) = match &t.kind {
            TopologyKind::ErdosRenyi { p_edge } => {
                let g = erdos_renyi_connected(t.n, *p_edge, t.seed, 1000)?;
                let w = metropolis_weights(&g)?;
                (g, w)
            }
            TopologyKind::Ring => {
                let g = ring(t.n)?;
                let w = metropolis_weights(&g)?;
                (g, w)
            }
            TopologyKind::EdgeList(p) => {
                let g = Graph::from_edge_list(&read(p)?, Some(t.n))?;
                let w = metropolis_weights(&g)?;
                (g, w)
            }
            TopologyKind::Weights(p) => {
                let w = WeightMatrix::from_csv(&read(p)?)?;
                (w.induced_graph(), w)
            }
        };
        if weights.n() != t.n {
            return Err(Error::InvalidTopology(format!("weights have {} agents, topology.n = {}", weights.n(), t.n)));
        }
        let ps = &cfg.problem;
        let problem = match &ps.path {
            Some(p) => {
                let v: serde_json::Value =
                    serde_json::from_str(&read(p)?).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?;
                Problem::from_json(&v)?
            }
            None => random_problem(t.n, ps.m, ps.p, ps.omega_range, ps.seed)?,
        };
        if problem.n() != t.n {
            return Err(Error::InvalidInput(format!("problem has {} agents, topology.n = {}", problem.n(), t.n)));
        }
        Ok(Setup { graph, weights, problem })
    }

    pub fn adjacent_pair(&self, cfg: &ExperimentConfig) -> Result<AdjacentPair> {
        make_adjacent(&self.problem, cfg.pair.i0, cfg.pair.delta, cfg.pair.seed)
    }
}

/// Runs `f` on a pool of `jobs` threads, or the global pool when `None`.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match jobs {
        None => f(),
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?
            .install(f),
    }
}

/// Independent trials of one dynamics, merged by trial index.
#[allow(clippy::too_many_arguments)]
pub fn run_trials(
    setup: &Setup,
    sp: &ScheduleParams,
    dynamics: Dynamics,
    iterations: u64,
    trials: usize,
    seed: u64,
    retain: bool,
) -> Result<Vec<Trace>> {
    let opts = RunOptions { retain_snapshots: retain };
    (0..trials as u64)
        .into_par_iter()
        .map(|t| simulate(&setup.problem, &setup.weights, sp, dynamics, iterations, seed, t, None, opts))
        .collect()
}

/// Git-style blob hash: `sha256("blob <len>\0" ‖ content)`.
pub fn content_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}

/// Residual threshold for the summary's `converged` flag.
pub const CONVERGED_BELOW: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub traces: Vec<Trace>,
    pub curves: Curves,
    pub summary: serde_json::Value,
}

impl ExperimentOutcome {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from(Trace::csv_header());
        s.push('\n');
        for (t, tr) in self.traces.iter().enumerate() {
            s.push_str(&tr.to_csv_rows(t as u64));
        }
        s
    }
}

fn input_blob(cfg: &ExperimentConfig, setup: &Setup) -> String {
    format!(
        "{}\n{}\n{}",
        cfg.source.canonical(),
        setup.weights.to_csv(),
        serde_json::to_string(&setup.problem.to_json()).expect("problem serializes")
    )
}

pub fn run_experiment_with(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<ExperimentOutcome> {
    let setup = Setup::build(cfg)?;
    let rs = &cfg.run;
    let traces = with_jobs(jobs, || {
        run_trials(&setup, &cfg.schedule, rs.algorithm.dynamics(), rs.iterations, rs.trials, rs.seed, rs.retain)
    })?;
    let curves = trace_metrics(&traces)?;
    let dynamics = rs.algorithm.dynamics();
    let fold = |f: fn(&Trace) -> Option<f64>| traces.iter().filter_map(f).fold(None, |a: Option<f64>, v| Some(a.map_or(v, |a| a.max(v))));
    let spent = if dynamics.noisy { Some(privacy_spent(&cfg.schedule, rs.iterations)?.termwise) } else { None };
    let fr = curves.final_residual;
    let summary = json!({
        "config": cfg.source.to_json(),
        "content_hash": content_hash(input_blob(cfg, &setup).as_bytes()),
        "rng": RNG_ALGORITHM,
        "algorithm": rs.algorithm.tag(),
        "label": if rs.algorithm == Algorithm::DpDgd { "dp-dgd (DPOP proxy)" } else { rs.algorithm.tag() },
        "trials": rs.trials,
        "iterations": rs.iterations,
        "final_residual": { "mean": fr.mean, "std": fr.std, "min": fr.min, "max": fr.max },
        "final_consensus_err_mean": curves.s2.last(),
        "final_mean_err_mean": curves.s1.last(),
        "converged": fr.mean < CONVERGED_BELOW,
        "privacy_spent": spent,
        "invariants": {
            "y_mean_max": fold(|t| t.invariants.y_mean),
            "gt_tracking_max": fold(|t| t.invariants.gt_tracking),
            "mean_dynamics_max": fold(|t| t.invariants.mean_dynamics),
        },
    });
    Ok(ExperimentOutcome { traces, curves, summary })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    run_experiment_with(cfg, None)
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes whichever artifacts the config names. Returns the paths written.
pub fn write_artifacts(cfg: &ExperimentConfig, out: &ExperimentOutcome) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    if let Some(p) = &cfg.output.trace {
        write_file(p, &out.trace_csv())?;
        written.push(p.clone());
    }
    if let Some(p) = &cfg.output.curves {
        write_file(p, &out.curves.to_csv())?;
        written.push(p.clone());
    }
    if let Some(p) = &cfg.output.summary {
        let mut s = serde_json::to_string_pretty(&out.summary).expect("summary serializes");
        s.push('\n');
        write_file(p, &s)?;
        written.push(p.clone());
    }
    Ok(written)
}
