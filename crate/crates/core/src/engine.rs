//! Synchronous network iterations for the private algorithm and its comparison dynamics.
//!
//! States are `n × p` matrices with one agent per row. Every noisy method shares the
//! observation `Z(k) = X(k−1) + Ξ(k)`; the methods differ in how they consume it.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::Problem;
use crate::rng::{noise_stream, substream, Purpose};
use crate::schedule::{laplace_fill, ScheduleParams};
use crate::topology::WeightMatrix;

/// Decision variables `X` and auxiliary variables `Y` after `k` iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub k: u64,
}

impl NetworkState {
    /// `X = x0`, `Y = 0`, `k = 0`.
    pub fn new(x0: DMatrix<f64>) -> Self {
        let y = DMatrix::zeros(x0.nrows(), x0.ncols());
        NetworkState { x: x0, y, k: 0 }
    }
}

/// The noisy states every agent broadcasts at one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub z: DMatrix<f64>,
}

/// Update rule consuming an observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// `Y ← Y + β(Z − WZ)`, `X ← WZ − α(Y + ∇F(Z))`.
    Alg1,
    /// `X ← WZ − α∇F(Z)`.
    DpDgd,
    /// `X ← W₀X + (W − W₀)Z − α∇F(Z)` with `W₀ = diag(W)`.
    DgdTrueConsensus,
    /// `X ← WZ − α∇F(X)`.
    DgdTrueGradient,
}

/// Named run configurations accepted by [`run`] and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Alg1,
    DpDgd,
    DgdTrueConsensus,
    DgdTrueGradient,
    GtNoiseless,
    Alg1NoiselessConstant,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Alg1,
        Algorithm::DpDgd,
        Algorithm::DgdTrueConsensus,
        Algorithm::DgdTrueGradient,
        Algorithm::GtNoiseless,
        Algorithm::Alg1NoiselessConstant,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::Alg1 => "alg1",
            Algorithm::DpDgd => "dp-dgd",
            Algorithm::DgdTrueConsensus => "dgd-true-consensus",
            Algorithm::DgdTrueGradient => "dgd-true-gradient",
            Algorithm::GtNoiseless => "gt-noiseless",
            Algorithm::Alg1NoiselessConstant => "alg1-noiseless-constant",
        }
    }

    /// Dynamics this tag runs.
    pub fn dynamics(self) -> Dynamics {
        use Algorithm::*;
        match self {
            Alg1 => Dynamics::noisy(Method::Alg1),
            DpDgd => Dynamics::noisy(Method::DpDgd),
            DgdTrueConsensus => Dynamics::noisy(Method::DgdTrueConsensus),
            DgdTrueGradient => Dynamics::noisy(Method::DgdTrueGradient),
            GtNoiseless => Dynamics { rule: Rule::GradientTracking, steps: StepRule::Constant, noisy: false },
            Alg1NoiselessConstant => Dynamics { rule: Rule::Observed(Method::Alg1), steps: StepRule::Constant, noisy: false },
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.tag() == s.trim())
            .ok_or_else(|| Error::UnknownAlgorithm(s.trim().to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rule {
    Observed(Method),
    /// Two-variable gradient tracking; always noiseless.
    GradientTracking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepRule {
    /// `α_k = γ q1^(k−1)`.
    Decaying,
    /// `α_k = γ`.
    Constant,
}

/// Fully specified dynamics: update rule, stepsize rule and whether Laplace noise is injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dynamics {
    pub rule: Rule,
    pub steps: StepRule,
    pub noisy: bool,
}

impl Dynamics {
    pub fn noisy(method: Method) -> Self {
        Dynamics { rule: Rule::Observed(method), steps: StepRule::Decaying, noisy: true }
    }

    pub fn noiseless_constant(method: Method) -> Self {
        Dynamics { rule: Rule::Observed(method), steps: StepRule::Constant, noisy: false }
    }
}

fn check_shapes(st: &NetworkState, w: &WeightMatrix, pr: &Problem, other: Option<&DMatrix<f64>>) -> Result<()> {
    let (n, p) = (pr.n(), pr.dim());
    let bad = |what: &str, m: &DMatrix<f64>| {
        Error::Shape(format!("{what} is {}x{}, expected {n}x{p}", m.nrows(), m.ncols()))
    };
    if w.n() != n {
        return Err(Error::Shape(format!("W is {0}x{0} but problem has {n} agents", w.n())));
    }
    if st.x.shape() != (n, p) {
        return Err(bad("X", &st.x));
    }
    if st.y.shape() != (n, p) {
        return Err(bad("Y", &st.y));
    }
    if let Some(m) = other {
        if m.shape() != (n, p) {
            return Err(bad("noise/observation", m));
        }
    }
    Ok(())
}

/// Stacked gradients `∇F(S)`: row `i` is `∇f_i(s_i)`.
pub fn stacked_gradient(pr: &Problem, s: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = s.shape();
    let mut out = DMatrix::zeros(n, p);
    let mut row = vec![0.0; p];
    let mut g = vec![0.0; p];
    for i in 0..n {
        for d in 0..p {
            row[d] = s[(i, d)];
        }
        pr.cost(i).gradient_into(&row, &mut g);
        for d in 0..p {
            out[(i, d)] = g[d];
        }
    }
    out
}

/// Internal-state update for a given observation `Z(k)`. This is the map an adversary
/// replays: the same `Z` drives both problems of an adjacent pair.
pub fn advance(
    method: Method,
    st: &NetworkState,
    z: &DMatrix<f64>,
    w: &WeightMatrix,
    pr: &Problem,
    alpha: f64,
    beta: f64,
) -> Result<NetworkState> {
    check_shapes(st, w, pr, Some(z))?;
    let wm = w.matrix();
    let zbar = wm * z;
    let (x, y) = match method {
        Method::Alg1 => {
            let y = &st.y + (z - &zbar) * beta;
            let x = &zbar - (&y + stacked_gradient(pr, z)) * alpha;
            (x, y)
        }
        Method::DpDgd => (&zbar - stacked_gradient(pr, z) * alpha, st.y.clone()),
        Method::DgdTrueConsensus => {
            let mut x = &zbar - stacked_gradient(pr, z) * alpha;
            for i in 0..pr.n() {
                let wii = wm[(i, i)];
                for d in 0..pr.dim() {
                    x[(i, d)] += wii * (st.x[(i, d)] - z[(i, d)]);
                }
            }
            (x, st.y.clone())
        }
        Method::DgdTrueGradient => (&zbar - stacked_gradient(pr, &st.x) * alpha, st.y.clone()),
    };
    Ok(NetworkState { x, y, k: st.k + 1 })
}

fn noisy_step(
    method: Method,
    st: &NetworkState,
    w: &WeightMatrix,
    pr: &Problem,
    alpha: f64,
    beta: f64,
    xi: &DMatrix<f64>,
) -> Result<(NetworkState, Observation)> {
    check_shapes(st, w, pr, Some(xi))?;
    let z = &st.x + xi;
    let next = advance(method, st, &z, w, pr, alpha, beta)?;
    Ok((next, Observation { z }))
}

/// One iteration of the private gradient-tracking scheme.
pub fn step_alg1(
    st: &NetworkState,
    w: &WeightMatrix,
    pr: &Problem,
    alpha: f64,
    beta: f64,
    xi: &DMatrix<f64>,
) -> Result<(NetworkState, Observation)> {
    noisy_step(Method::Alg1, st, w, pr, alpha, beta, xi)
}

/// One iteration of private DGD on noisy states.
pub fn step_dpdgd(st: &NetworkState, w: &WeightMatrix, pr: &Problem, alpha: f64, xi: &DMatrix<f64>) -> Result<(NetworkState, Observation)> {
    noisy_step(Method::DpDgd, st, w, pr, alpha, 0.0, xi)
}

/// Private DGD where each agent mixes its own true state.
pub fn step_dgd_true_consensus(
    st: &NetworkState,
    w: &WeightMatrix,
    pr: &Problem,
    alpha: f64,
    xi: &DMatrix<f64>,
) -> Result<(NetworkState, Observation)> {
    noisy_step(Method::DgdTrueConsensus, st, w, pr, alpha, 0.0, xi)
}

/// Private DGD with gradients taken at true states.
pub fn step_dgd_true_gradient(
    st: &NetworkState,
    w: &WeightMatrix,
    pr: &Problem,
    alpha: f64,
    xi: &DMatrix<f64>,
) -> Result<(NetworkState, Observation)> {
    noisy_step(Method::DgdTrueGradient, st, w, pr, alpha, 0.0, xi)
}

/// Initial state for gradient tracking: `Y(0) = ∇F(X(0))`.
pub fn gt_initial_state(pr: &Problem, x0: DMatrix<f64>) -> NetworkState {
    let y = stacked_gradient(pr, &x0);
    NetworkState { x: x0, y, k: 0 }
}

/// `X ← WX − αY`, `Y ← WY + ∇F(X_new) − ∇F(X)`.
pub fn step_gt_noiseless(st: &NetworkState, w: &WeightMatrix, pr: &Problem, alpha: f64) -> Result<NetworkState> {
    check_shapes(st, w, pr, None)?;
    let wm = w.matrix();
    let x = wm * &st.x - &st.y * alpha;
    let y = wm * &st.y + stacked_gradient(pr, &x) - stacked_gradient(pr, &st.x);
    Ok(NetworkState { x, y, k: st.k + 1 })
}

/// Per-iteration residuals against the optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: u64,
    /// `‖X − 1x*ᵀ‖²`
    pub residual: f64,
    /// `‖X − 1x̄ᵀ‖²`
    pub consensus_err: f64,
    /// `‖x̄ − x*‖²`
    pub mean_err: f64,
    /// `‖X(k) − X(k−1)‖²`
    pub step_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub k: u64,
    pub z: Option<DMatrix<f64>>,
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

/// Largest violations of the structural identities seen during a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    /// `max_k max_d |(1/n) Σ_i Y_id(k)|` for the private scheme.
    pub y_mean: Option<f64>,
    /// `max_k max_d |(1/n) Σ_i (Y − ∇F(X))_id|` for gradient tracking.
    pub gt_tracking: Option<f64>,
    /// `max_k ‖x̄(k) − x̄(k−1) + (α_k/n)1ᵀ∇F(Z) − (1/n)1ᵀΞ‖_∞`.
    pub mean_dynamics: Option<f64>,
    /// Largest `|Y|` entry, the scale against which `y_mean` rounding is judged.
    pub y_scale: f64,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub dynamics: Dynamics,
    pub records: Vec<IterationRecord>,
    pub snapshots: Vec<Snapshot>,
    pub invariants: InvariantReport,
    pub final_state: NetworkState,
}

impl Trace {
    pub fn last(&self) -> &IterationRecord {
        self.records.last().expect("trace has the initial record")
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.residual).collect()
    }

    pub fn csv_header() -> &'static str {
        "trial,k,residual,consensus_err,mean_err,step_norm"
    }

    /// CSV rows without header, values in shortest round-trip form.
    pub fn to_csv_rows(&self, trial: u64) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&format!(
                "{trial},{},{:?},{:?},{:?},{:?}\n",
                r.k, r.residual, r.consensus_err, r.mean_err, r.step_norm
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Keep full `Z`, `X`, `Y` snapshots at every iteration.
    pub retain_snapshots: bool,
}

fn column_means(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows() as f64;
    (0..m.ncols()).map(|d| m.column(d).sum() / n).collect()
}

fn record(k: u64, x: &DMatrix<f64>, prev: Option<&DMatrix<f64>>, xstar: &[f64]) -> IterationRecord {
    let (n, p) = x.shape();
    let xbar = column_means(x);
    let (mut residual, mut consensus) = (0.0, 0.0);
    for i in 0..n {
        for d in 0..p {
            residual += (x[(i, d)] - xstar[d]).powi(2);
            consensus += (x[(i, d)] - xbar[d]).powi(2);
        }
    }
    let mean_err = xbar.iter().zip(xstar).map(|(a, b)| (a - b).powi(2)).sum();
    let step_norm = prev.map_or(0.0, |p| (x - p).norm_squared());
    IterationRecord { k, residual, consensus_err: consensus, mean_err, step_norm }
}

/// Standard-normal initial rows from the trial's `InitialState` substream.
pub fn random_initial_state(n: usize, p: usize, seed: u64, trial: u64) -> DMatrix<f64> {
    let mut rng = substream(seed, trial, Purpose::InitialState);
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        for d in 0..p {
            x[(i, d)] = StandardNormal.sample(&mut rng);
        }
    }
    x
}

/// Noise block `Ξ(k)` for a trial, drawn agent-major from the `(seed, trial, k)` stream.
pub fn noise_block(n: usize, p: usize, scale: f64, seed: u64, trial: u64, k: u64) -> DMatrix<f64> {
    let mut buf = vec![0.0; n * p];
    if scale > 0.0 {
        laplace_fill(scale, &mut noise_stream(seed, trial, k), &mut buf);
    }
    DMatrix::from_row_slice(n, p, &buf)
}

/// Stepsize used at iteration `k`.
pub fn stepsize_for(steps: StepRule, sp: &ScheduleParams, k: u64) -> f64 {
    match steps {
        StepRule::Decaying => sp.stepsize(k),
        StepRule::Constant => sp.gamma,
    }
}

/// Runs `iterations` steps of `dynamics` for trial `trial` of master seed `seed`.
///
/// The trace holds `iterations + 1` records, the first being the initial state.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    pr: &Problem,
    w: &WeightMatrix,
    sp: &ScheduleParams,
    dynamics: Dynamics,
    iterations: u64,
    seed: u64,
    trial: u64,
    x0: Option<&DMatrix<f64>>,
    opts: RunOptions,
) -> Result<Trace> {
    if iterations == 0 {
        return Err(Error::InvalidInput("iterations must be at least 1".into()));
    }
    if dynamics.noisy || dynamics.steps == StepRule::Decaying {
        sp.validate()?;
    }
    let (n, p) = (pr.n(), pr.dim());
    let x0 = match x0 {
        Some(m) => m.clone(),
        None => random_initial_state(n, p, seed, trial),
    };
    let xstar = pr.optimum()?;
    let mut st = match dynamics.rule {
        Rule::GradientTracking => gt_initial_state(pr, x0),
        Rule::Observed(_) => NetworkState::new(x0),
    };
    check_shapes(&st, w, pr, None)?;

    let mut records = Vec::with_capacity(iterations as usize + 1);
    records.push(record(0, &st.x, None, &xstar));
    let mut snapshots = Vec::new();
    if opts.retain_snapshots {
        snapshots.push(Snapshot { k: 0, z: None, x: st.x.clone(), y: st.y.clone() });
    }
    let mut inv = InvariantReport::default();
    let nf = n as f64;

    for k in 1..=iterations {
        let alpha = stepsize_for(dynamics.steps, sp, k);
        let (next, z) = match dynamics.rule {
            Rule::GradientTracking => (step_gt_noiseless(&st, w, pr, alpha)?, None),
            Rule::Observed(method) => {
                let scale = if dynamics.noisy { sp.nu(k) } else { 0.0 };
                let xi = noise_block(n, p, scale, seed, trial, k);
                let (next, obs) = noisy_step(method, &st, w, pr, alpha, sp.beta, &xi)?;
                if matches!(method, Method::Alg1 | Method::DpDgd) {
                    let grad_mean = column_means(&stacked_gradient(pr, &obs.z));
                    let xi_mean = column_means(&xi);
                    let prev = column_means(&st.x);
                    let cur = column_means(&next.x);
                    let err = (0..p)
                        .map(|d| (cur[d] - (prev[d] - alpha * grad_mean[d] + xi_mean[d])).abs())
                        .fold(0.0, f64::max);
                    inv.mean_dynamics = Some(inv.mean_dynamics.unwrap_or(0.0).max(err));
                }
                (next, Some(obs.z))
            }
        };
        match dynamics.rule {
            Rule::Observed(Method::Alg1) => {
                let ym = column_means(&next.y).into_iter().map(f64::abs).fold(0.0, f64::max);
                inv.y_mean = Some(inv.y_mean.unwrap_or(0.0).max(ym));
                inv.y_scale = inv.y_scale.max(next.y.amax());
            }
            Rule::GradientTracking => {
                let g = stacked_gradient(pr, &next.x);
                let diff: f64 = (0..p)
                    .map(|d| ((next.y.column(d).sum() - g.column(d).sum()) / nf).abs())
                    .fold(0.0, f64::max);
                inv.gt_tracking = Some(inv.gt_tracking.unwrap_or(0.0).max(diff));
                inv.y_scale = inv.y_scale.max(next.y.amax());
            }
            _ => {}
        }
        records.push(record(k, &next.x, Some(&st.x), &xstar));
        if opts.retain_snapshots {
            snapshots.push(Snapshot { k, z, x: next.x.clone(), y: next.y.clone() });
        }
        st = next;
    }
    Ok(Trace { dynamics, records, snapshots, invariants: inv, final_state: st })
}

/// Runs a named algorithm (trial 0 of `seed`).
pub fn run(
    pr: &Problem,
    w: &WeightMatrix,
    sp: &ScheduleParams,
    algorithm: Algorithm,
    iterations: u64,
    seed: u64,
    x0: Option<&DMatrix<f64>>,
) -> Result<Trace> {
    simulate(pr, w, sp, algorithm.dynamics(), iterations, seed, 0, x0, RunOptions::default())
}
