//! Monte Carlo aggregation of traces.

use serde::Serialize;

use crate::engine::Trace;
use crate::error::{Error, Result};
use crate::stats::Running;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FinalStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Per-iteration means over trials; index `k` of each curve is iteration `k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curves {
    /// `E‖x̄ − x*‖²`
    pub s1: Vec<f64>,
    /// `E‖X − 1x̄ᵀ‖²`
    pub s2: Vec<f64>,
    /// `E‖X(k) − X(k−1)‖²`
    pub s3: Vec<f64>,
    pub residual_mean: Vec<f64>,
    pub residual_std: Vec<f64>,
    /// Statistics of the last residual across trials.
    pub final_residual: FinalStats,
    pub trials: usize,
}

impl Curves {
    pub fn csv_header() -> &'static str {
        "k,residual_mean,residual_std,s1,s2,s3"
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::csv_header());
        out.push('\n');
        for k in 0..self.s1.len() {
            out.push_str(&format!(
                "{k},{:?},{:?},{:?},{:?},{:?}\n",
                self.residual_mean[k], self.residual_std[k], self.s1[k], self.s2[k], self.s3[k]
            ));
        }
        out
    }
}

pub fn trace_metrics(traces: &[Trace]) -> Result<Curves> {
    let first = traces.first().ok_or_else(|| Error::InvalidInput("no traces to aggregate".into()))?;
    let len = first.records.len();
    if traces.iter().any(|t| t.records.len() != len) {
        return Err(Error::InvalidInput("traces have different lengths".into()));
    }
    let mut acc = vec![[Running::default(); 4]; len];
    for t in traces {
        for (a, r) in acc.iter_mut().zip(&t.records) {
            a[0].push(r.mean_err);
            a[1].push(r.consensus_err);
            a[2].push(r.step_norm);
            a[3].push(r.residual);
        }
    }
    let finals: Running = traces.iter().map(|t| t.last().residual).collect();
    let (min, max) = traces
        .iter()
        .map(|t| t.last().residual)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    Ok(Curves {
        s1: acc.iter().map(|a| a[0].mean()).collect(),
        s2: acc.iter().map(|a| a[1].mean()).collect(),
        s3: acc.iter().map(|a| a[2].mean()).collect(),
        residual_mean: acc.iter().map(|a| a[3].mean()).collect(),
        residual_std: acc.iter().map(|a| a[3].std()).collect(),
        final_residual: FinalStats { mean: finals.mean(), std: finals.std(), min, max },
        trials: traces.len(),
    })
}

/// `c1 = s1(0)` and `c2 = max_k s2(k)` from reference curves.
pub fn calibrate_constants(reference: &Curves) -> (f64, f64) {
    let c1 = reference.s1.first().copied().unwrap_or(0.0);
    let c2 = reference.s2.iter().copied().fold(0.0, f64::max);
    (c1, c2)
}
