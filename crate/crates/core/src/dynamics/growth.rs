use serde::Serialize;

use super::TrajectoryRecord;
use crate::error::{Error, Result};

/// End-to-start amplitude ratio that counts as clear growth.
pub const GROWTH_RATIO: f64 = 1e3;

/// Fraction of the record, counted back from its end, used for the fit.
const WINDOW_FRACTION: f64 = 0.8;

/// Exponential growth rate of a diverging or clearly growing trajectory.
///
/// Least-squares slope of `ln|x(t)|` over the last 80% of the stored
/// samples (the record already ends at the divergence point if it was
/// truncated).
pub fn growth_rate(record: &TrajectoryRecord) -> Result<f64> {
    let norms = record.norms();
    let start = norms
        .iter()
        .copied()
        .find(|&n| n > 0.0)
        .ok_or_else(|| Error::NoGrowth("trajectory is identically zero".into()))?;
    let end = *norms.last().unwrap_or(&0.0);
    if !record.diverged && !(end / start > GROWTH_RATIO) {
        return Err(Error::NoGrowth(format!(
            "amplitude ratio end/start = {:.3e} is below {GROWTH_RATIO:e}",
            end / start
        )));
    }

    let n = norms.len();
    let first = ((1.0 - WINDOW_FRACTION) * n as f64).floor() as usize;
    let pts: Vec<(f64, f64)> = (first..n)
        .filter(|&i| norms[i] > 0.0)
        .map(|i| (record.times[i], norms[i].ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::NoGrowth("too few samples in the fit window".into()));
    }
    let m = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthEstimate {
    pub mean: f64,
    /// Standard error of the mean across members.
    pub std_err: f64,
    pub members: usize,
}

/// Mean growth rate over an ensemble; any non-growing member is an error.
pub fn ensemble_growth_rate(records: &[TrajectoryRecord]) -> Result<GrowthEstimate> {
    let rates = records.iter().map(growth_rate).collect::<Result<Vec<_>>>()?;
    let n = rates.len();
    if n == 0 {
        return Err(Error::NoGrowth("empty ensemble".into()));
    }
    let mean = rates.iter().sum::<f64>() / n as f64;
    let std_err = if n > 1 {
        let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        f64::NAN
    };
    Ok(GrowthEstimate {
        mean,
        std_err,
        members: n,
    })
}
