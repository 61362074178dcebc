//! Per-agent quadratic costs of the sensor-fusion family and adjacent problem pairs.
//!
//! Agent `i` holds `f_i(x) = ‖v_i − M_i x‖² + ω_i‖x‖² + b_iᵀx`. The network minimizes the
//! average `(1/n) Σ f_i`; the linear term `b_i` is zero except on perturbed costs.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    m: DMatrix<f64>,
    v: DVector<f64>,
    omega: f64,
    bias: DVector<f64>,
    // Cached: Hessian 2(MᵀM + ωI) and constant part of the gradient −2Mᵀv.
    hessian: DMatrix<f64>,
    offset: DVector<f64>,
    smoothness: f64,
    convexity: f64,
}

impl QuadraticCost {
    pub fn new(m: DMatrix<f64>, v: DVector<f64>, omega: f64) -> Result<Self> {
        let p = m.ncols();
        Self::with_bias(m, v, omega, DVector::zeros(p))
    }

    pub fn with_bias(m: DMatrix<f64>, v: DVector<f64>, omega: f64, bias: DVector<f64>) -> Result<Self> {
        if m.nrows() != v.len() {
            return Err(Error::Shape(format!("M has {} rows but v has {} entries", m.nrows(), v.len())));
        }
        if bias.len() != m.ncols() {
            return Err(Error::Shape(format!("bias has {} entries, expected {}", bias.len(), m.ncols())));
        }
        if !(omega >= 0.0) {
            return Err(Error::DegenerateProblem(format!("omega = {omega} must be nonnegative")));
        }
        let p = m.ncols();
        let gram = m.transpose() * &m;
        let hessian = (&gram + DMatrix::identity(p, p) * omega) * 2.0;
        let offset = m.transpose() * &v * -2.0;
        let ev = SymmetricEigen::new(gram).eigenvalues;
        let lmax = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lmin = ev.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(QuadraticCost {
            m,
            v,
            omega,
            bias,
            hessian,
            offset,
            smoothness: 2.0 * lmax + 2.0 * omega,
            convexity: 2.0 * lmin.max(0.0) + 2.0 * omega,
        })
    }

    pub fn dim(&self) -> usize {
        self.m.ncols()
    }

    pub fn observation_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn observation(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    /// `L_i = 2λ_max(MᵀM) + 2ω`.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    /// `μ_i = 2λ_min(MᵀM) + 2ω`.
    pub fn strong_convexity(&self) -> f64 {
        self.convexity
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        let xv = DVector::from_column_slice(x);
        let r = &self.v - &self.m * &xv;
        Ok(r.norm_squared() + self.omega * xv.norm_squared() + self.bias.dot(&xv))
    }

    /// `2Mᵀ(Mx − v) + 2ωx + bias`.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut out = vec![0.0; x.len()];
        self.gradient_into(x, &mut out);
        Ok(out)
    }

    /// Unchecked gradient for the inner loops; `x` and `out` must have length `dim()`.
    #[allow(clippy::needless_range_loop)]
    pub(crate) fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let p = x.len();
        for r in 0..p {
            let mut acc = self.offset[r];
            for c in 0..p {
                acc += self.hessian[(r, c)] * x[c];
            }
            out[r] = acc + self.bias[r];
        }
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!("x has {} entries, cost expects {}", x.len(), self.dim())));
        }
        Ok(())
    }

    fn shifted(&self, shift: &DVector<f64>) -> Self {
        let mut c = self.clone();
        c.bias = &self.bias + shift;
        c
    }
}

/// A distributed problem: one cost per agent, shared decision dimension `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    costs: Vec<QuadraticCost>,
    p: usize,
}

impl Problem {
    pub fn new(costs: Vec<QuadraticCost>) -> Result<Self> {
        let p = costs
            .first()
            .ok_or_else(|| Error::DegenerateProblem("problem needs at least one agent".into()))?
            .dim();
        if let Some((i, c)) = costs.iter().enumerate().find(|(_, c)| c.dim() != p) {
            return Err(Error::Shape(format!("cost {i} has dimension {}, expected {p}", c.dim())));
        }
        if let Some((i, c)) = costs.iter().enumerate().find(|(_, c)| c.strong_convexity() <= 0.0) {
            return Err(Error::DegenerateProblem(format!(
                "cost {i} is not strongly convex (mu = {})",
                c.strong_convexity()
            )));
        }
        Ok(Problem { costs, p })
    }

    pub fn n(&self) -> usize {
        self.costs.len()
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn costs(&self) -> &[QuadraticCost] {
        &self.costs
    }

    pub fn cost(&self, i: usize) -> &QuadraticCost {
        &self.costs[i]
    }

    /// `L = max_i L_i`.
    pub fn smoothness(&self) -> f64 {
        self.costs.iter().map(QuadraticCost::smoothness).fold(0.0, f64::max)
    }

    /// `μ = min_i μ_i`.
    pub fn strong_convexity(&self) -> f64 {
        self.costs.iter().map(QuadraticCost::strong_convexity).fold(f64::INFINITY, f64::min)
    }

    /// Average objective `(1/n) Σ f_i(x)`.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for c in &self.costs {
            acc += c.value(x)?;
        }
        Ok(acc / self.n() as f64)
    }

    /// `(1/n) Σ ∇f_i(x)`.
    pub fn mean_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.p];
        for c in &self.costs {
            for (a, g) in acc.iter_mut().zip(c.gradient(x)?) {
                *a += g;
            }
        }
        let n = self.n() as f64;
        Ok(acc.into_iter().map(|a| a / n).collect())
    }

    /// Unique minimizer of the average objective via the normal equations
    /// `Σ(MᵢᵀMᵢ + ωᵢI) x = Σ Mᵢᵀvᵢ − ½ Σ bᵢ`.
    pub fn optimum(&self) -> Result<Vec<f64>> {
        let p = self.p;
        let mut lhs = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        for c in &self.costs {
            lhs += c.m.transpose() * &c.m + DMatrix::identity(p, p) * c.omega;
            rhs += c.m.transpose() * &c.v - &c.bias * 0.5;
        }
        let chol = lhs
            .clone()
            .cholesky()
            .ok_or_else(|| Error::DegenerateProblem("normal equations are singular".into()))?;
        let x = chol.solve(&rhs);
        let resid = (&lhs * &x - &rhs).norm();
        let scale = rhs.norm().max(1.0);
        if !(resid <= 1e-10 * scale) {
            return Err(Error::DegenerateProblem(format!("normal-equation residual {resid:e}")));
        }
        Ok(x.iter().copied().collect())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(ProblemDoc::from(self)).expect("problem serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let doc: ProblemDoc = serde_json::from_value(value.clone()).map_err(|e| Error::Parse(e.to_string()))?;
        doc.try_into()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CostDoc {
    m: Vec<Vec<f64>>,
    v: Vec<f64>,
    omega: f64,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProblemDoc {
    p: usize,
    costs: Vec<CostDoc>,
}

impl From<&Problem> for ProblemDoc {
    fn from(pr: &Problem) -> Self {
        let costs = pr
            .costs
            .iter()
            .map(|c| CostDoc {
                m: c.m.row_iter().map(|r| r.iter().copied().collect()).collect(),
                v: c.v.iter().copied().collect(),
                omega: c.omega,
                bias: c.bias.iter().copied().collect(),
            })
            .collect();
        ProblemDoc { p: pr.p, costs }
    }
}

impl TryFrom<ProblemDoc> for Problem {
    type Error = Error;

    fn try_from(doc: ProblemDoc) -> Result<Self> {
        let costs = doc
            .costs
            .into_iter()
            .map(|c| {
                let rows = c.m.len();
                if c.m.iter().any(|r| r.len() != doc.p) {
                    return Err(Error::Shape(format!("observation matrix rows must have {} entries", doc.p)));
                }
                let m = DMatrix::from_fn(rows, doc.p, |i, j| c.m[i][j]);
                QuadraticCost::with_bias(m, DVector::from_vec(c.v), c.omega, DVector::from_vec(c.bias))
            })
            .collect::<Result<Vec<_>>>()?;
        Problem::new(costs)
    }
}

/// Sensor-fusion instance: standard-normal `M_i`, `v_i` and `ω_i ~ U[omega_range]`.
pub fn random_problem(n: usize, m: usize, p: usize, omega_range: (f64, f64), seed: u64) -> Result<Problem> {
    const MAX_RETRIES: usize = 100;
    if n == 0 || m == 0 || p == 0 {
        return Err(Error::DegenerateProblem(format!("dimensions must be positive (n={n}, m={m}, p={p})")));
    }
    let (lo, hi) = omega_range;
    if !(lo >= 0.0 && hi >= lo) {
        return Err(Error::DegenerateProblem(format!("bad omega range [{lo}, {hi}]")));
    }
    let mut rng = substream(seed, 0, Purpose::Problem);
    let mut costs = Vec::with_capacity(n);
    for i in 0..n {
        let mut attempt = 0;
        loop {
            let mm = DMatrix::from_fn(m, p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let v = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
            let omega = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let cost = QuadraticCost::new(mm, v, omega)?;
            if cost.strong_convexity() > 1e-12 {
                costs.push(cost);
                break;
            }
            attempt += 1;
            if attempt >= MAX_RETRIES {
                return Err(Error::DegenerateProblem(format!(
                    "agent {i}: no strongly convex cost after {MAX_RETRIES} draws"
                )));
            }
        }
    }
    Problem::new(costs)
}

/// Two problems that differ only in agent `i0`, whose gradients differ by a constant
/// vector of L1 norm `delta`.
#[derive(Debug, Clone)]
pub struct AdjacentPair {
    pub base: Problem,
    pub perturbed: Problem,
    pub i0: usize,
    pub delta: f64,
}

impl AdjacentPair {
    /// Constant gradient gap `∇f'_{i0} − ∇f_{i0}`.
    pub fn shift(&self) -> Vec<f64> {
        let a = self.base.cost(self.i0).bias();
        let b = self.perturbed.cost(self.i0).bias();
        (b - a).iter().copied().collect()
    }

    /// L1 gradient distance of the differing cost at `x`.
    pub fn gradient_gap(&self, x: &[f64]) -> Result<f64> {
        let g = self.base.cost(self.i0).gradient(x)?;
        let h = self.perturbed.cost(self.i0).gradient(x)?;
        Ok(g.iter().zip(&h).map(|(a, b)| (a - b).abs()).sum())
    }
}

/// Shifts the linear term of cost `i0` by a random vector with `‖c‖₁ = delta`.
pub fn make_adjacent(pr: &Problem, i0: usize, delta: f64, seed: u64) -> Result<AdjacentPair> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidInput(format!("delta = {delta} must be nonnegative")));
    }
    let mut rng = substream(seed, i0 as u64, Purpose::Adjacent);
    let dir: Vec<f64> = loop {
        let d: Vec<f64> = (0..pr.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let l1: f64 = d.iter().map(|x: &f64| x.abs()).sum();
        if l1 > 1e-300 {
            break d.into_iter().map(|x| x / l1).collect();
        }
    };
    let c: Vec<f64> = dir.into_iter().map(|x| x * delta).collect();
    make_adjacent_with_shift(pr, i0, &c)
}

/// Adjacent pair for an explicit gradient shift `c`; `delta` is recorded as `‖c‖₁`.
pub fn make_adjacent_with_shift(pr: &Problem, i0: usize, c: &[f64]) -> Result<AdjacentPair> {
    if i0 >= pr.n() {
        return Err(Error::InvalidInput(format!("i0 = {i0} out of range for {} agents", pr.n())));
    }
    if c.len() != pr.dim() {
        return Err(Error::Shape(format!("shift has {} entries, expected {}", c.len(), pr.dim())));
    }
    let shift = DVector::from_column_slice(c);
    let mut costs = pr.costs.clone();
    costs[i0] = costs[i0].shifted(&shift);
    Ok(AdjacentPair {
        base: pr.clone(),
        perturbed: Problem::new(costs)?,
        i0,
        delta: c.iter().map(|x| x.abs()).sum(),
    })
}
