//! Geometric stepsize / noise schedules, Laplace sampling and privacy accounting.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `α_k = γ q1^(k−1)` and `ν_k = γδq2 / (ε(q2 − q1)) · q2^(k−1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub gamma: f64,
    pub beta: f64,
    pub q1: f64,
    pub q2: f64,
    pub epsilon: f64,
    pub delta: f64,
}

impl ScheduleParams {
    /// Validated constructor.
    pub fn new(gamma: f64, beta: f64, q1: f64, q2: f64, epsilon: f64, delta: f64) -> Result<Self> {
        let sp = ScheduleParams { gamma, beta, q1, q2, epsilon, delta };
        sp.validate()?;
        Ok(sp)
    }

    /// Every violated constraint, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            v.push(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            v.push(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.q1 > 0.0 && self.q1 < 1.0) {
            v.push(format!("q1 must lie in (0,1), got {}", self.q1));
        }
        if !(self.q2 < 1.0) {
            v.push(format!("q2 must be below 1, got {}", self.q2));
        }
        if !(self.q2 > self.q1) {
            v.push(format!("q2 must exceed q1 (q1 = {}, q2 = {})", self.q1, self.q2));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            v.push(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            v.push(format!("delta must be nonnegative, got {}", self.delta));
        }
        // Tiny slack so the boundary γβ = 1 survives decimal round-off (0.001 · 1000).
        if self.gamma * self.beta > 1.0 + 1e-12 {
            v.push(format!(
                "gamma*beta must be <= 1, got {} * {} = {}",
                self.gamma,
                self.beta,
                self.gamma * self.beta
            ));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSchedule(v.join("; ")))
        }
    }

    /// `α_k = γ q1^(k−1)`, `k ≥ 1`.
    pub fn stepsize(&self, k: u64) -> f64 {
        debug_assert!(k >= 1);
        self.gamma * self.q1.powf((k - 1) as f64)
    }

    /// `ν_k`; zero for every `k` when `δ = 0`.
    pub fn noise_scale(&self, k: u64) -> Result<f64> {
        if !(self.q2 > self.q1) {
            return Err(Error::InvalidSchedule(format!("q2 must exceed q1 (q1 = {}, q2 = {})", self.q1, self.q2)));
        }
        Ok(self.nu(k))
    }

    pub(crate) fn nu(&self, k: u64) -> f64 {
        if self.delta == 0.0 {
            return 0.0;
        }
        self.gamma * self.delta * self.q2 / (self.epsilon * (self.q2 - self.q1)) * self.q2.powf((k - 1) as f64)
    }

    /// `Σ_{k≥1} α_k = γ / (1 − q1)`.
    pub fn total_stepsize(&self) -> f64 {
        self.gamma / (1.0 - self.q1)
    }

    /// `δα_k / ν_k` evaluated in log space so it stays finite after `α_k`, `ν_k` underflow.
    pub fn spend_term(&self, k: u64) -> f64 {
        if self.delta == 0.0 {
            return 0.0;
        }
        let km1 = (k - 1) as f64;
        let log_alpha = self.gamma.ln() + km1 * self.q1.ln();
        let log_nu = (self.gamma * self.delta * self.q2 / (self.epsilon * (self.q2 - self.q1))).ln() + km1 * self.q2.ln();
        self.delta * (log_alpha - log_nu).exp()
    }
}

/// Termwise and closed-form privacy spend over a horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacySpend {
    pub termwise: f64,
    pub closed_form: f64,
}

/// `Σ_{k=1}^{K} δα_k/ν_k`, summed termwise and via `ε(1 − (q1/q2)^K)`.
///
/// Errors if the two routes disagree beyond `1e−12` relative (plus a rounding allowance
/// that grows with `K`).
pub fn privacy_spent(sp: &ScheduleParams, horizon: u64) -> Result<PrivacySpend> {
    sp.validate()?;
    if sp.delta == 0.0 {
        return Ok(PrivacySpend { termwise: 0.0, closed_form: 0.0 });
    }
    let mut sum = NeumaierSum::default();
    for k in 1..=horizon {
        sum.add(sp.spend_term(k));
    }
    let termwise = sum.value();
    let closed_form = privacy_spent_closed_form(sp, horizon);
    let tol = 1e-12_f64.max(horizon as f64 * 4.0 * f64::EPSILON) * closed_form.abs().max(f64::MIN_POSITIVE);
    if (termwise - closed_form).abs() > tol {
        return Err(Error::InvalidSchedule(format!(
            "accountant mismatch: termwise {termwise} vs closed form {closed_form}"
        )));
    }
    Ok(PrivacySpend { termwise, closed_form })
}

/// `ε(1 − (q1/q2)^K)`; `horizon = u64::MAX` is treated as the limit `ε`.
pub fn privacy_spent_closed_form(sp: &ScheduleParams, horizon: u64) -> f64 {
    if sp.delta == 0.0 {
        return 0.0;
    }
    if horizon == u64::MAX {
        return sp.epsilon;
    }
    -sp.epsilon * (horizon as f64 * (sp.q1 / sp.q2).ln()).exp_m1()
}

/// Running sum of `Δ(k)/ν_k` for audited sensitivities.
#[derive(Debug, Clone, Default)]
pub struct BudgetLedger {
    sum: NeumaierSum,
    k: u64,
}

impl BudgetLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accounts one iteration. A positive sensitivity with zero noise spends infinitely.
    pub fn record(&mut self, sensitivity: f64, nu: f64) -> Result<f64> {
        if sensitivity < 0.0 || !sensitivity.is_finite() {
            return Err(Error::InvalidInput(format!("sensitivity {sensitivity} must be finite and nonnegative")));
        }
        self.k += 1;
        if sensitivity > 0.0 {
            if nu <= 0.0 {
                return Err(Error::InfiniteSpend(format!(
                    "iteration {} has sensitivity {sensitivity} but noise scale {nu}",
                    self.k
                )));
            }
            self.sum.add(sensitivity / nu);
        }
        Ok(self.sum.value())
    }

    pub fn spent(&self) -> f64 {
        self.sum.value()
    }

    pub fn iterations(&self) -> u64 {
        self.k
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// One zero-mean Laplace draw with scale `ν` (variance `2ν²`) by inverse CDF.
pub fn laplace_sample<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    let u = loop {
        let u = rng.random::<f64>() - 0.5;
        if u > -0.5 {
            break u;
        }
    };
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Fills `out` with independent Laplace draws of the same scale.
pub fn laplace_fill<R: Rng + ?Sized>(scale: f64, rng: &mut R, out: &mut [f64]) {
    for x in out {
        *x = laplace_sample(scale, rng);
    }
}
