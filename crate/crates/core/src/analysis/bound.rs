//! Limiting accuracy bound and a coordinate-wise tuner for the schedule.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};

/// Everything in the accuracy bound except `(γ, q1, q2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundConstants {
    pub epsilon: f64,
    pub delta: f64,
    pub mu: f64,
    pub l: f64,
    pub n: usize,
    pub p: usize,
    pub c1: f64,
    pub c2: f64,
}

impl BoundConstants {
    fn check(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.epsilon > 0.0) {
            bad.push(format!("epsilon = {} must be positive", self.epsilon));
        }
        if !(self.delta >= 0.0) {
            bad.push(format!("delta = {} must be nonnegative", self.delta));
        }
        if !(self.mu > 0.0 && self.l >= self.mu && self.l.is_finite()) {
            bad.push(format!("need 0 < mu <= L, got mu = {}, L = {}", self.mu, self.l));
        }
        if self.n == 0 || self.p == 0 {
            bad.push("n and p must be positive".into());
        }
        if !(self.c1 >= 0.0 && self.c2 >= 0.0) {
            bad.push(format!("c1, c2 must be nonnegative, got {}, {}", self.c1, self.c2));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(bad.join("; ")))
        }
    }
}

/// The four terms of the bound, in order: initial-error decay, consensus drift,
/// noise variance, noise-gradient coupling.
pub fn accuracy_terms(gamma: f64, q1: f64, q2: f64, c: &BoundConstants) -> Result<[f64; 4]> {
    c.check()?;
    if !(q2 > q1) {
        return Err(Error::InvalidSchedule(format!("q2 must exceed q1 (q1 = {q1}, q2 = {q2})")));
    }
    if !(gamma > 0.0 && q1 > 0.0 && q2 < 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "need gamma > 0 and 0 < q1 < q2 < 1, got gamma = {gamma}, q1 = {q1}, q2 = {q2}"
        )));
    }
    let (n, p) = (c.n as f64, c.p as f64);
    let (mu, l) = (c.mu, c.l);
    let noise = c.delta * c.delta * q2 * q2 / (c.epsilon * c.epsilon * (q2 - q1) * (q2 - q1));
    Ok([
        (-mu * gamma / (1.0 - q1)).exp() * c.c1,
        gamma * c.c2 * l * l / (n * mu * (1.0 - q1)),
        2.0 * p * noise * gamma * gamma / (1.0 - q2 * q2),
        (4.0 * p * l + 2.0 * p * l * l / mu) * noise * gamma.powi(3) / (1.0 - q1 * q2 * q2),
    ])
}

pub fn accuracy_bound(gamma: f64, q1: f64, q2: f64, c: &BoundConstants) -> Result<f64> {
    Ok(accuracy_terms(gamma, q1, q2, c)?.iter().sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tuned {
    pub gamma: f64,
    pub q1: f64,
    pub q2: f64,
    pub bound: f64,
    /// Coordinate cycles used by the winning restart.
    pub cycles: usize,
}

const Q_MARGIN: f64 = 1e-4;
const Q_MAX: f64 = 0.9999;
const GAMMA_MIN: f64 = 1e-6;
const MAX_CYCLES: usize = 100;
const REL_TOL: f64 = 1e-6;

/// Golden-section minimizer of `f` on `[a, b]`, returning `(x, f(x))`.
fn golden<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-12 * (a.abs() + b.abs()).max(1e-300) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn local_search(c: &BoundConstants, mut x: [f64; 3], gamma_max: f64) -> Result<(Tuned, f64)> {
    let eval = |g: f64, q1: f64, q2: f64| accuracy_bound(g, q1, q2, c).unwrap_or(f64::INFINITY);
    let start = accuracy_bound(x[0], x[1], x[2], c)?;
    let mut best = start;
    let mut cycles = 0;
    while cycles < MAX_CYCLES {
        cycles += 1;
        let before = best;
        // γ is searched in log space since its bracket spans several decades.
        let (lg, v) = golden(|t| eval(t.exp(), x[1], x[2]), GAMMA_MIN.ln(), gamma_max.ln());
        if v < best {
            x[0] = lg.exp();
            best = v;
        }
        let hi = x[2] - Q_MARGIN;
        if hi > Q_MARGIN {
            let (q1, v) = golden(|t| eval(x[0], t, x[2]), Q_MARGIN, hi);
            if v < best {
                x[1] = q1;
                best = v;
            }
        }
        let lo = x[1] + Q_MARGIN;
        if lo < Q_MAX {
            let (q2, v) = golden(|t| eval(x[0], x[1], t), lo, Q_MAX);
            if v < best {
                x[2] = q2;
                best = v;
            }
        }
        if before - best <= REL_TOL * before.abs() {
            break;
        }
    }
    Ok((Tuned { gamma: x[0], q1: x[1], q2: x[2], bound: best, cycles }, start))
}

/// Best local minimizer of [`accuracy_bound`] over `restarts` random feasible starts.
pub fn tune(c: &BoundConstants, restarts: usize, seed: u64) -> Result<Tuned> {
    c.check()?;
    if restarts == 0 {
        return Err(Error::InvalidInput("restarts must be at least 1".into()));
    }
    let gamma_max = 2.0 / (c.mu + c.l);
    if !(gamma_max > GAMMA_MIN) {
        return Err(Error::InvalidInput(format!(
            "stepsize bracket [{GAMMA_MIN}, {gamma_max}] is empty"
        )));
    }
    let mut rng = substream(seed, 0, Purpose::Tuner);
    let mut best: Option<Tuned> = None;
    for _ in 0..restarts {
        let gamma = (rng.random_range(GAMMA_MIN.ln()..gamma_max.ln())).exp();
        let q1 = rng.random_range(Q_MARGIN..Q_MAX - Q_MARGIN);
        let q2 = rng.random_range(q1 + Q_MARGIN..Q_MAX);
        let (t, start) = local_search(c, [gamma, q1, q2], gamma_max)?;
        debug_assert!(t.bound <= start);
        if best.is_none_or(|b| t.bound < b.bound) {
            best = Some(t);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn consts(epsilon: f64, delta: f64) -> BoundConstants {
        BoundConstants { epsilon, delta, mu: 2.0, l: 2.0, n: 10, p: 2, c1: 1.0, c2: 1.0 }
    }

    /// Series form of the bound: `e^{−μΣα}c1 + c2L²Σα/(nμ) + 2pΣν² + (4pL + 2pL²/μ)Σαν²`.
    fn series_oracle(gamma: f64, q1: f64, q2: f64, c: &BoundConstants) -> f64 {
        let nu0 = gamma * c.delta * q2 / (c.epsilon * (q2 - q1));
        let (mut sa, mut sn, mut san) = (0.0, 0.0, 0.0);
        for k in 0..200_000 {
            let a = gamma * q1.powi(k);
            let nu = nu0 * q2.powi(k);
            sa += a;
            sn += nu * nu;
            san += a * nu * nu;
        }
        let (n, p, mu, l) = (c.n as f64, c.p as f64, c.mu, c.l);
        (-mu * sa).exp() * c.c1 + c.c2 * l * l * sa / (n * mu) + 2.0 * p * sn + (4.0 * p * l + 2.0 * p * l * l / mu) * san
    }

    #[test]
    fn matches_series_oracle() {
        let c = consts(1.0, 1.0);
        let b = accuracy_bound(0.001, 0.97, 0.99, &c).unwrap();
        assert!(b.is_finite());
        assert_relative_eq!(b, series_oracle(0.001, 0.97, 0.99, &c), max_relative = 1e-9);
    }

    #[test]
    fn noise_terms_scale_inverse_square() {
        let t1 = accuracy_terms(0.001, 0.97, 0.99, &consts(1.0, 1.0)).unwrap();
        let t2 = accuracy_terms(0.001, 0.97, 0.99, &consts(0.5, 1.0)).unwrap();
        assert_relative_eq!(t2[2], 4.0 * t1[2], max_relative = 1e-12);
        assert_relative_eq!(t2[3], 4.0 * t1[3], max_relative = 1e-12);
        assert_eq!(t1[0], t2[0]);
        let t0 = accuracy_terms(0.001, 0.97, 0.99, &consts(1.0, 0.0)).unwrap();
        assert_eq!(t0[2] + t0[3], 0.0);
        assert!(accuracy_bound(0.001, 0.99, 0.97, &consts(1.0, 1.0)).is_err());
    }

    #[test]
    fn tuner_properties() {
        let lo = tune(&consts(0.1, 1.0), 3, 7).unwrap();
        let hi = tune(&consts(10.0, 1.0), 3, 7).unwrap();
        assert!(hi.bound < lo.bound);
        assert_relative_eq!(lo.bound, accuracy_bound(lo.gamma, lo.q1, lo.q2, &consts(0.1, 1.0)).unwrap());
        let one = tune(&consts(1.0, 1.0), 1, 11).unwrap();
        let five = tune(&consts(1.0, 1.0), 5, 11).unwrap();
        assert!(five.bound <= one.bound);
        let free = tune(&consts(1.0, 0.0), 2, 3).unwrap();
        let t = accuracy_terms(free.gamma, free.q1, free.q2, &consts(1.0, 0.0)).unwrap();
        assert_eq!(t[2] + t[3], 0.0);
        assert!(tune(&consts(1.0, 1.0), 0, 1).is_err());
    }
}
