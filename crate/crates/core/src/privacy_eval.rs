//! Empirical leakage of the private scheme to colluding neighbours, measured through
//! kNN mutual information.

use std::collections::BinaryHeap;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::digamma;

use crate::engine::{noise_block, random_initial_state, step_alg1, NetworkState};
use crate::error::{Error, Result};
use crate::objective::Problem;
use crate::rng::{substream, Purpose};
use crate::schedule::ScheduleParams;
use crate::topology::WeightMatrix;

/// Target agent (0-based). Its two neighbours collude.
pub const TARGET: usize = 0;

/// Which attacker statistic is paired with the private gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackerVariant {
    /// `(z̄₁(k) − z₁(k+1))/α_k − y₁(k)`: exact when noise is absent.
    #[default]
    Reconstructed,
    /// `(z̄₁(k) − z₁(k))/α_k − y₁(k)`.
    Verbatim,
    /// The triple `(z₁(k), y₁(k), verbatim estimate)` as one joint variable.
    Joint,
}

impl std::str::FromStr for AttackerVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reconstructed" => Ok(AttackerVariant::Reconstructed),
            "verbatim" => Ok(AttackerVariant::Verbatim),
            "joint" => Ok(AttackerVariant::Joint),
            other => Err(Error::InvalidInput(format!("unknown attacker variant '{other}'"))),
        }
    }
}

/// Columns indexed `[k − 1][trial]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackerDataset {
    pub trials: usize,
    pub horizon: usize,
    /// `∇f₁(z₁(k))`.
    pub v: Vec<Vec<f64>>,
    pub z1: Vec<Vec<f64>>,
    /// `y₁(k)` as rebuilt by the colluders.
    pub y1: Vec<Vec<f64>>,
    pub reconstructed: Vec<Vec<f64>>,
    pub verbatim: Vec<Vec<f64>>,
    /// Mean over trials of the final `‖X − 1x*ᵀ‖²`.
    pub final_residual_mean: f64,
}

impl AttackerDataset {
    fn check(&self) -> Result<()> {
        let cols = [&self.v, &self.z1, &self.y1, &self.reconstructed, &self.verbatim];
        let ok = cols.iter().all(|c| c.len() == self.horizon && c.iter().all(|r| r.len() == self.trials));
        if !ok {
            return Err(Error::InvalidInput("attacker dataset columns are misaligned".into()));
        }
        if cols.iter().any(|c| c.iter().flatten().any(|v| !v.is_finite())) {
            return Err(Error::InvalidInput("attacker dataset has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn csv_header() -> &'static str {
        "trial,k,v,attacker_estimate"
    }

    /// Long-format CSV of the headline estimate, ordered by trial then `k`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::csv_header());
        out.push('\n');
        for t in 0..self.trials {
            for k in 0..self.horizon {
                out.push_str(&format!("{t},{},{:?},{:?}\n", k + 1, self.v[k][t], self.reconstructed[k][t]));
            }
        }
        out
    }
}

struct TrialView {
    v: Vec<f64>,
    z1: Vec<f64>,
    y1: Vec<f64>,
    reconstructed: Vec<f64>,
    verbatim: Vec<f64>,
    final_residual: f64,
}

fn attacker_trial(pr: &Problem, w: &WeightMatrix, sp: &ScheduleParams, horizon: u64, seed: u64, trial: u64) -> Result<TrialView> {
    let x0 = random_initial_state(3, 1, seed, trial);
    let mut st = NetworkState::new(x0);
    let wm = w.matrix();
    let cost = pr.cost(TARGET);
    let h = horizon as usize;
    let mut view = TrialView {
        v: Vec::with_capacity(h),
        z1: Vec::with_capacity(h),
        y1: Vec::with_capacity(h),
        reconstructed: Vec::with_capacity(h),
        verbatim: Vec::with_capacity(h),
        final_residual: 0.0,
    };
    let mut zbar_prev = 0.0;
    let mut y1 = 0.0;
    // One extra step supplies z₁(K + 1) for the last reconstruction.
    for k in 1..=horizon + 1 {
        let alpha = sp.stepsize(k);
        let xi = noise_block(3, 1, sp.noise_scale(k)?, seed, trial, k);
        let (next, obs) = step_alg1(&st, w, pr, alpha, sp.beta, &xi)?;
        let z = &obs.z;
        if k > 1 {
            let a_prev = sp.stepsize(k - 1);
            view.reconstructed.push((zbar_prev - z[(TARGET, 0)]) / a_prev - y1);
        }
        if k <= horizon {
            let zbar: f64 = (0..3).map(|j| wm[(TARGET, j)] * z[(j, 0)]).sum();
            y1 += sp.beta * (z[(TARGET, 0)] - zbar);
            view.v.push(cost.gradient(&[z[(TARGET, 0)]])?[0]);
            view.z1.push(z[(TARGET, 0)]);
            view.y1.push(y1);
            view.verbatim.push((zbar - z[(TARGET, 0)]) / alpha - y1);
            zbar_prev = zbar;
            if k == horizon {
                let xs = pr.optimum()?;
                view.final_residual = (0..3).map(|i| (next.x[(i, 0)] - xs[0]).powi(2)).sum();
            }
        }
        st = next;
    }
    Ok(view)
}

/// Runs the private scheme on a three-agent scalar problem and records what agents 2
/// and 3 can compute about agent 1 at every iteration.
pub fn collect_attacker_view(
    pr: &Problem,
    w: &WeightMatrix,
    sp: &ScheduleParams,
    horizon: u64,
    trials: usize,
    seed: u64,
) -> Result<AttackerDataset> {
    if pr.n() != 3 || pr.dim() != 1 || pr.costs().iter().any(|c| c.observation_matrix().nrows() != 1) {
        return Err(Error::InvalidScenario("attacker scenario needs n = 3, p = 1, m = 1".into()));
    }
    if w.n() != 3 || w.get(0, 1) <= 0.0 || w.get(0, 2) <= 0.0 {
        return Err(Error::InvalidScenario("agents 2 and 3 must both neighbour agent 1".into()));
    }
    if horizon == 0 || trials < 2 {
        return Err(Error::InvalidInput("need horizon >= 1 and at least two trials".into()));
    }
    sp.validate()?;
    let views: Vec<TrialView> = (0..trials as u64)
        .into_par_iter()
        .map(|t| attacker_trial(pr, w, sp, horizon, seed, t))
        .collect::<Result<_>>()?;
    let h = horizon as usize;
    let column = |f: fn(&TrialView) -> &Vec<f64>| -> Vec<Vec<f64>> {
        (0..h).map(|k| views.iter().map(|v| f(v)[k]).collect()).collect()
    };
    Ok(AttackerDataset {
        trials,
        horizon: h,
        v: column(|v| &v.v),
        z1: column(|v| &v.z1),
        y1: column(|v| &v.y1),
        reconstructed: column(|v| &v.reconstructed),
        verbatim: column(|v| &v.verbatim),
        final_residual_mean: views.iter().map(|v| v.final_residual).sum::<f64>() / trials as f64,
    })
}

/// Three-agent attacker scenario: scalar costs on ring(3) with Metropolis weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scenario {
    pub problem_seed: u64,
    pub omega_range: (f64, f64),
    pub gamma: f64,
    pub beta: f64,
    pub q1: f64,
    pub q2: f64,
    pub delta: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario { problem_seed: 2024, omega_range: (0.1, 1.0), gamma: 0.01, beta: 100.0, q1: 0.97, q2: 0.99, delta: 0.005 }
    }
}

impl Scenario {
    pub fn build(&self, epsilon: f64) -> Result<(Problem, WeightMatrix, ScheduleParams)> {
        let pr = crate::objective::random_problem(3, 1, 1, self.omega_range, self.problem_seed)?;
        let w = crate::topology::metropolis_weights(&crate::topology::ring(3)?)?;
        let sp = ScheduleParams::new(self.gamma, self.beta, self.q1, self.q2, epsilon, self.delta)?;
        Ok((pr, w, sp))
    }
}

pub const DEFAULT_NEIGHBORS: usize = 3;
const JITTER: f64 = 1e-10;
const MIN_SAMPLES: usize = 50;

/// Samples stored point-major: `data[i * dim + d]`.
struct Points {
    data: Vec<f64>,
    dim: usize,
}

impl Points {
    fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

fn jittered(rows: &[Vec<f64>], dim: usize, seed: u64, stream: u64) -> Points {
    let mut rng = substream(seed, stream, Purpose::Jitter);
    let data = rows.iter().flat_map(|r| r.iter().copied()).map(|v| v + JITTER * rng.random::<f64>()).collect();
    Points { data, dim }
}

fn cheb(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

/// Ordered float for the neighbour heap.
#[derive(PartialEq)]
struct Dist(f64);
impl Eq for Dist {}
impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Dist {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Distance to the `k`-th nearest neighbour of every point in the max-norm joint space.
/// Points are swept in order of the first coordinate, which bounds the max-norm from below.
fn kth_distances(x: &Points, y: &Points, k: usize) -> Vec<f64> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x.row(a)[0].total_cmp(&x.row(b)[0]));
    let key: Vec<f64> = order.iter().map(|&i| x.row(i)[0]).collect();
    let mut out = vec![0.0; n];
    for (pos, &i) in order.iter().enumerate() {
        let mut heap: BinaryHeap<Dist> = BinaryHeap::with_capacity(k + 1);
        let joint = |j: usize| cheb(x.row(i), x.row(j)).max(cheb(y.row(i), y.row(j)));
        let (mut lo, mut hi) = (pos, pos + 1);
        loop {
            let bound = if heap.len() == k { heap.peek().map_or(f64::INFINITY, |d| d.0) } else { f64::INFINITY };
            let left = (lo > 0).then(|| key[pos] - key[lo - 1]);
            let right = (hi < n).then(|| key[hi] - key[pos]);
            let take_left = match (left, right) {
                (None, None) => break,
                (Some(l), Some(r)) => l <= r,
                (l, _) => l.is_some(),
            };
            let gap = if take_left { left.unwrap() } else { right.unwrap() };
            if gap >= bound {
                break;
            }
            let j = if take_left {
                lo -= 1;
                order[lo]
            } else {
                hi += 1;
                order[hi - 1]
            };
            let d = joint(j);
            if heap.len() < k {
                heap.push(Dist(d));
            } else if d < bound {
                heap.pop();
                heap.push(Dist(d));
            }
        }
        out[i] = heap.peek().map_or(0.0, |d| d.0);
    }
    out
}

/// Number of other points strictly within `eps[i]` of point `i`.
fn marginal_counts(p: &Points, eps: &[f64]) -> Vec<usize> {
    let n = p.len();
    if p.dim == 1 {
        let mut sorted: Vec<f64> = p.data.clone();
        sorted.sort_by(f64::total_cmp);
        (0..n)
            .map(|i| {
                let (c, e) = (p.data[i], eps[i]);
                let inside = |v: f64| (v - c).abs() < e;
                // Rounding in c ± e can misplace points sitting at distance e; fix the ends.
                let mut lo = sorted.partition_point(|v| *v <= c - e);
                while lo > 0 && inside(sorted[lo - 1]) {
                    lo -= 1;
                }
                while lo < n && !inside(sorted[lo]) && sorted[lo] < c {
                    lo += 1;
                }
                let mut hi = sorted.partition_point(|v| *v < c + e);
                while hi < n && inside(sorted[hi]) {
                    hi += 1;
                }
                while hi > lo && !inside(sorted[hi - 1]) && sorted[hi - 1] > c {
                    hi -= 1;
                }
                hi - lo - 1
            })
            .collect()
    } else {
        (0..n)
            .map(|i| (0..n).filter(|&j| j != i && cheb(p.row(i), p.row(j)) < eps[i]).count())
            .collect()
    }
}

fn ksg(x: &Points, y: &Points, k: usize) -> f64 {
    let n = x.len();
    let eps = kth_distances(x, y, k);
    let nx = marginal_counts(x, &eps);
    let ny = marginal_counts(y, &eps);
    let avg: f64 = nx.iter().zip(&ny).map(|(a, b)| digamma(*a as f64 + 1.0) + digamma(*b as f64 + 1.0)).sum::<f64>()
        / n as f64;
    digamma(k as f64) + digamma(n as f64) - avg
}

fn check_lengths(nx: usize, ny: usize, k: usize) -> Result<()> {
    if nx != ny {
        return Err(Error::InvalidInput(format!("sample lengths differ: {nx} vs {ny}")));
    }
    if nx < MIN_SAMPLES {
        return Err(Error::InvalidInput(format!("need at least {MIN_SAMPLES} samples, got {nx}")));
    }
    if k == 0 || k >= nx {
        return Err(Error::InvalidInput(format!("k_neighbors = {k} must lie in [1, N)")));
    }
    Ok(())
}

/// KSG estimate (first variant, max-norm) of `I(X; Y)` in nats for scalar samples.
/// Jitter of `1e−10` is drawn from `seed`.
pub fn knn_mutual_information_seeded(xs: &[f64], ys: &[f64], k: usize, seed: u64) -> Result<f64> {
    check_lengths(xs.len(), ys.len(), k)?;
    let wrap = |v: &[f64]| v.iter().map(|x| vec![*x]).collect::<Vec<_>>();
    Ok(ksg(&jittered(&wrap(xs), 1, seed, 0), &jittered(&wrap(ys), 1, seed, 1), k))
}

pub fn knn_mutual_information(xs: &[f64], ys: &[f64], k: usize) -> Result<f64> {
    knn_mutual_information_seeded(xs, ys, k, 0)
}

/// Multivariate KSG: rows of `xs` and `ys` are samples.
pub fn knn_mutual_information_multi(xs: &[Vec<f64>], ys: &[Vec<f64>], k: usize, seed: u64) -> Result<f64> {
    check_lengths(xs.len(), ys.len(), k)?;
    let dx = xs.first().map_or(0, Vec::len);
    let dy = ys.first().map_or(0, Vec::len);
    if dx == 0 || dy == 0 || xs.iter().any(|r| r.len() != dx) || ys.iter().any(|r| r.len() != dy) {
        return Err(Error::InvalidInput("sample rows must be nonempty and of equal width".into()));
    }
    Ok(ksg(&jittered(xs, dx, seed, 0), &jittered(ys, dy, seed, 1), k))
}

#[derive(Debug, Clone, Serialize)]
pub struct MnmiReport {
    pub variant: AttackerVariant,
    pub k_neighbors: usize,
    /// Clamped ratio per iteration; `None` where `V(k)` is degenerate.
    pub ratios: Vec<Option<f64>>,
    /// Ratio before clamping to `[0, 1]`.
    pub raw_ratios: Vec<Option<f64>>,
    /// 1-based iteration attaining the maximum.
    pub argmax_k: usize,
    pub mnmi: f64,
    pub trials: usize,
    pub final_residual_mean: f64,
}

impl MnmiReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

/// Maximum over iterations of `I(V(k); est(k)) / I(V(k); V(k))`.
pub fn mnmi(ds: &AttackerDataset, k_neighbors: usize, variant: AttackerVariant) -> Result<MnmiReport> {
    ds.check()?;
    check_lengths(ds.trials, ds.trials, k_neighbors)?;
    let raw: Vec<Option<f64>> = (0..ds.horizon)
        .into_par_iter()
        .map(|k| -> Result<Option<f64>> {
            let v = &ds.v[k];
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            if v.iter().all(|x| (x - mean).abs() <= f64::EPSILON * mean.abs().max(1e-300)) {
                log::warn!("V({}) has zero variance; iteration skipped", k + 1);
                return Ok(None);
            }
            let seed = k as u64;
            let self_info = knn_mutual_information_seeded(v, v, k_neighbors, seed)?;
            if !(self_info > 0.0) {
                log::warn!("I(V({0}); V({0})) = {self_info} is not positive; iteration skipped", k + 1);
                return Ok(None);
            }
            let cross = match variant {
                AttackerVariant::Reconstructed => knn_mutual_information_seeded(v, &ds.reconstructed[k], k_neighbors, seed)?,
                AttackerVariant::Verbatim => knn_mutual_information_seeded(v, &ds.verbatim[k], k_neighbors, seed)?,
                AttackerVariant::Joint => {
                    let xs: Vec<Vec<f64>> = v.iter().map(|x| vec![*x]).collect();
                    let ys: Vec<Vec<f64>> = (0..ds.trials)
                        .map(|t| vec![ds.z1[k][t], ds.y1[k][t], ds.verbatim[k][t]])
                        .collect();
                    knn_mutual_information_multi(&xs, &ys, k_neighbors, seed)?
                }
            };
            Ok(Some(cross / self_info))
        })
        .collect::<Result<_>>()?;
    let ratios: Vec<Option<f64>> = raw.iter().map(|r| r.map(|v| v.clamp(0.0, 1.0))).collect();
    let (argmax, best) = ratios
        .iter()
        .enumerate()
        .filter_map(|(k, r)| r.map(|v| (k, v)))
        .fold(None, |acc: Option<(usize, f64)>, (k, v)| match acc {
            Some((_, b)) if b >= v => acc,
            _ => Some((k, v)),
        })
        .ok_or_else(|| Error::InvalidInput("every iteration is degenerate".into()))?;
    Ok(MnmiReport {
        variant,
        k_neighbors,
        ratios,
        raw_ratios: raw,
        argmax_k: argmax + 1,
        mnmi: best,
        trials: ds.trials,
        final_residual_mean: ds.final_residual_mean,
    })
}
