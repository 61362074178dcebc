//! Small summary statistics used by the harness and acceptance checks.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Welford accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct Running {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Running {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero below two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }
}

impl FromIterator<f64> for Running {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut r = Running::default();
        for x in iter {
            r.push(x);
        }
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchResult {
    pub t: f64,
    pub dof: f64,
    /// `P(T ≥ t)` under the null of equal means.
    pub p_greater: f64,
}

/// One-sided Welch test of `mean(a) > mean(b)`.
pub fn welch_greater(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidInput("welch test needs at least two samples per group".into()));
    }
    let ra: Running = a.iter().copied().collect();
    let rb: Running = b.iter().copied().collect();
    let (va, vb) = (ra.variance() / a.len() as f64, rb.variance() / b.len() as f64);
    let se2 = va + vb;
    if se2 == 0.0 {
        let p = if ra.mean() > rb.mean() { 0.0 } else { 1.0 };
        return Ok(WelchResult { t: f64::INFINITY.copysign(ra.mean() - rb.mean()), dof: f64::NAN, p_greater: p });
    }
    let t = (ra.mean() - rb.mean()) / se2.sqrt();
    let dof = se2 * se2 / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(WelchResult { t, dof, p_greater: 1.0 - dist.cdf(t) })
}
