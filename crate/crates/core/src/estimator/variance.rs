use super::{Batch, GradientEstimate};
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSummary {
    /// Unbiased per-coordinate variance across estimates.
    pub per_coord: Vec<f64>,
    pub trace: f64,
    /// `ln(trace)`, `-inf` when the trace is zero.
    pub log_trace: f64,
    pub count: usize,
}

/// Empirical variance of a set of estimates.
pub fn variance_of(estimates: &[GradientEstimate]) -> Result<VarianceSummary> {
    if estimates.len() < 2 {
        return Err(Error::InvalidArgument("variance needs at least two estimates".into()));
    }
    let p = estimates[0].values.len();
    let k = estimates.len() as f64;
    let mut mean = vec![0.0; p];
    for e in estimates {
        check_len("estimate length", p, e.values.len())?;
        mean.iter_mut().zip(&e.values).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= k);
    let mut per_coord = vec![0.0; p];
    for e in estimates {
        per_coord
            .iter_mut()
            .zip(e.values.iter().zip(&mean))
            .for_each(|(acc, (v, m))| *acc += (v - m) * (v - m));
    }
    per_coord.iter_mut().for_each(|v| *v /= k - 1.0);
    let trace: f64 = per_coord.iter().sum();
    let log_trace = if trace > 0.0 { trace.ln() } else { f64::NEG_INFINITY };
    Ok(VarianceSummary {
        per_coord,
        trace,
        log_trace,
        count: estimates.len(),
    })
}

/// Applies `make_estimate` to each batch and summarizes the spread.
pub fn estimator_variance(
    make_estimate: impl Fn(&Batch) -> Result<GradientEstimate>,
    batches: &[Batch],
) -> Result<VarianceSummary> {
    let estimates = batches.iter().map(make_estimate).collect::<Result<Vec<_>>>()?;
    variance_of(&estimates)
}
