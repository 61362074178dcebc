//! Empirical sensitivity of the noisy methods on adjacent problems.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{advance, noise_block, random_initial_state, stepsize_for, Algorithm, Method, NetworkState, Rule};
use crate::error::{Error, Result};
use crate::objective::AdjacentPair;
use crate::schedule::ScheduleParams;
use crate::topology::WeightMatrix;

/// How the perturbed run sees the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditMode {
    /// The perturbed run consumes the base run's observations `Z(k)`, so both runs
    /// produce the same observable sequence. This is the quantity the privacy
    /// accountant needs.
    #[default]
    Replay,
    /// Both runs draw the same noise `Ξ(k)` but form their own observations.
    SharedNoise,
}

/// Per-iteration maxima of `‖X(k) − X'(k)‖₁` over the sampled noise streams.
#[derive(Debug, Clone, Serialize)]
pub struct SensitivityEnvelope {
    pub algorithm: Algorithm,
    pub mode: AuditMode,
    /// `delta_hat[k − 1]` for `k = 1..=T`.
    pub delta_hat: Vec<f64>,
    /// `δα_k`.
    pub bound: Vec<f64>,
    /// `per_agent[k − 1][j]`: max L1 gap of row `j`.
    pub per_agent: Vec<Vec<f64>>,
    pub i0: usize,
    pub trials: usize,
}

impl SensitivityEnvelope {
    pub fn iterations(&self) -> usize {
        self.delta_hat.len()
    }

    /// `bound − delta_hat` per iteration.
    pub fn margins(&self) -> Vec<f64> {
        self.bound.iter().zip(&self.delta_hat).map(|(b, d)| b - d).collect()
    }

    /// Whether `delta_hat(k) ≤ δα_k + tol` everywhere.
    pub fn within_bound(&self, tol: f64) -> bool {
        self.delta_hat.iter().zip(&self.bound).all(|(d, b)| *d <= b + tol)
    }

    /// Largest gap seen on any row other than `i0`.
    pub fn max_other_rows(&self) -> f64 {
        self.per_agent
            .iter()
            .flat_map(|row| row.iter().enumerate().filter(|(j, _)| *j != self.i0).map(|(_, v)| *v))
            .fold(0.0, f64::max)
    }

    pub fn csv_header() -> &'static str {
        "k,delta_hat,bound,margin"
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::csv_header());
        out.push('\n');
        for (i, (d, b)) in self.delta_hat.iter().zip(&self.bound).enumerate() {
            out.push_str(&format!("{},{:?},{:?},{:?}\n", i + 1, d, b, b - d));
        }
        out
    }
}

fn observed_method(algorithm: Algorithm) -> Result<Method> {
    let dyns = algorithm.dynamics();
    match dyns.rule {
        Rule::Observed(m) if dyns.noisy => Ok(m),
        _ => Err(Error::InvalidInput(format!("{algorithm} has no noisy observations to audit"))),
    }
}

fn row_gaps(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    (0..a.nrows()).map(|i| (a.row(i) - b.row(i)).abs().sum()).collect()
}

/// Gaps per `(k, agent)` for one trial.
#[allow(clippy::too_many_arguments)]
fn audit_trial(
    pair: &AdjacentPair,
    method: Method,
    w: &WeightMatrix,
    sp: &ScheduleParams,
    iterations: u64,
    seed: u64,
    trial: u64,
    mode: AuditMode,
    steps: crate::engine::StepRule,
) -> Result<Vec<Vec<f64>>> {
    let (n, p) = (pair.base.n(), pair.base.dim());
    let x0 = random_initial_state(n, p, seed, trial);
    let mut a = NetworkState::new(x0.clone());
    let mut b = NetworkState::new(x0);
    let mut out = Vec::with_capacity(iterations as usize);
    for k in 1..=iterations {
        let alpha = stepsize_for(steps, sp, k);
        let xi = noise_block(n, p, sp.noise_scale(k)?, seed, trial, k);
        let za = &a.x + &xi;
        let zb = match mode {
            AuditMode::Replay => za.clone(),
            AuditMode::SharedNoise => &b.x + &xi,
        };
        a = advance(method, &a, &za, w, &pair.base, alpha, sp.beta)?;
        b = advance(method, &b, &zb, w, &pair.perturbed, alpha, sp.beta)?;
        out.push(row_gaps(&a.x, &b.x));
    }
    Ok(out)
}

/// Monte Carlo sensitivity envelope for one noisy algorithm.
#[allow(clippy::too_many_arguments)]
pub fn audit_sensitivity_with(
    pair: &AdjacentPair,
    algorithm: Algorithm,
    w: &WeightMatrix,
    sp: &ScheduleParams,
    iterations: u64,
    trials: usize,
    seed: u64,
    mode: AuditMode,
) -> Result<SensitivityEnvelope> {
    if trials == 0 {
        return Err(Error::InvalidInput("trials must be at least 1".into()));
    }
    if iterations == 0 {
        return Err(Error::InvalidInput("iterations must be at least 1".into()));
    }
    sp.validate()?;
    let method = observed_method(algorithm)?;
    let steps = algorithm.dynamics().steps;
    let n = pair.base.n();
    let per_trial: Vec<Vec<Vec<f64>>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| audit_trial(pair, method, w, sp, iterations, seed, t, mode, steps))
        .collect::<Result<_>>()?;
    let mut per_agent = vec![vec![0.0; n]; iterations as usize];
    for tr in &per_trial {
        for (acc, row) in per_agent.iter_mut().zip(tr) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a = f64::max(*a, *v);
            }
        }
    }
    let delta_hat = per_trial
        .iter()
        .fold(vec![0.0; iterations as usize], |mut acc, tr| {
            for (a, row) in acc.iter_mut().zip(tr) {
                *a = f64::max(*a, row.iter().sum());
            }
            acc
        });
    let bound = (1..=iterations).map(|k| pair.delta * stepsize_for(steps, sp, k)).collect();
    Ok(SensitivityEnvelope { algorithm, mode, delta_hat, bound, per_agent, i0: pair.i0, trials })
}

/// [`audit_sensitivity_with`] in replay mode.
pub fn audit_sensitivity(
    pair: &AdjacentPair,
    algorithm: Algorithm,
    w: &WeightMatrix,
    sp: &ScheduleParams,
    iterations: u64,
    trials: usize,
    seed: u64,
) -> Result<SensitivityEnvelope> {
    audit_sensitivity_with(pair, algorithm, w, sp, iterations, trials, seed, AuditMode::Replay)
}

/// One pairwise ordering `lhs(k) ≤ rhs(k) + tol` checked at every `k`.
#[derive(Debug, Clone, Serialize)]
pub struct OrderingCheck {
    pub lhs: Algorithm,
    pub rhs: Algorithm,
    pub holds: bool,
    /// Iterations (1-based) where the ordering fails.
    pub violations: Vec<usize>,
    /// `max_k (lhs(k) − rhs(k))`.
    pub worst_excess: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderingReport {
    pub envelopes: Vec<SensitivityEnvelope>,
    pub checks: Vec<OrderingCheck>,
    pub tolerance: f64,
}

impl OrderingReport {
    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }

    pub fn envelope(&self, algorithm: Algorithm) -> Option<&SensitivityEnvelope> {
        self.envelopes.iter().find(|e| e.algorithm == algorithm)
    }
}

pub const AUDITED: [Algorithm; 4] =
    [Algorithm::Alg1, Algorithm::DpDgd, Algorithm::DgdTrueConsensus, Algorithm::DgdTrueGradient];

/// Pairs `(lhs, rhs)` for which `lhs ≤ rhs` is expected.
pub const ORDERINGS: [(Algorithm, Algorithm); 5] = [
    (Algorithm::Alg1, Algorithm::DpDgd),
    (Algorithm::Alg1, Algorithm::DgdTrueConsensus),
    (Algorithm::Alg1, Algorithm::DgdTrueGradient),
    (Algorithm::DpDgd, Algorithm::DgdTrueConsensus),
    (Algorithm::DpDgd, Algorithm::DgdTrueGradient),
];

fn check(lhs: &SensitivityEnvelope, rhs: &SensitivityEnvelope, tol: f64) -> OrderingCheck {
    let mut violations = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    for (k, (a, b)) in lhs.delta_hat.iter().zip(&rhs.delta_hat).enumerate() {
        worst = worst.max(a - b);
        if *a > b + tol {
            violations.push(k + 1);
        }
    }
    OrderingCheck { lhs: lhs.algorithm, rhs: rhs.algorithm, holds: violations.is_empty(), violations, worst_excess: worst }
}

/// Envelopes for the four noisy methods on the same noise streams, and the expected orderings.
pub fn compare_sensitivities(
    pair: &AdjacentPair,
    w: &WeightMatrix,
    sp: &ScheduleParams,
    iterations: u64,
    trials: usize,
    seed: u64,
) -> Result<OrderingReport> {
    let tolerance = 1e-12;
    let envelopes: Vec<_> = AUDITED
        .iter()
        .map(|a| audit_sensitivity(pair, *a, w, sp, iterations, trials, seed))
        .collect::<Result<_>>()?;
    let find = |a: Algorithm| envelopes.iter().find(|e| e.algorithm == a).expect("audited");
    let checks = ORDERINGS.iter().map(|(l, r)| check(find(*l), find(*r), tolerance)).collect();
    Ok(OrderingReport { envelopes, checks, tolerance })
}
