use serde::Serialize;

use crate::error::Result;
use crate::model::{build_dynamical_matrix, effective_eigenvalues, DriveConfig, SystemParams};
use crate::stability::{classify, DEFAULT_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrequencyShift {
    /// `Re √(Δm(Δm - 2Σ(0)))` from the effective two-mode model.
    pub delta_eff: f64,
    /// `|Im λ|` of the slow eigenvalue pair of the full matrix.
    pub slow_branch_im: f64,
    /// `Δm - δΩm`: the slow-branch frequency carrying the sign of `Δm`.
    pub observable: f64,
}

/// Effective mechanical frequency in the rotating frame, from both the
/// effective model and the full matrix.
pub fn effective_frequency_shift(params: &SystemParams, drive: &DriveConfig) -> Result<FrequencyShift> {
    let eff = effective_eigenvalues(params, drive);
    let report = classify(&build_dynamical_matrix(params, drive)?, DEFAULT_TOL)?;
    let slow = report.slow_frequency();
    let sign = if drive.effective_delta_m(params) < 0.0 {
        -1.0
    } else {
        1.0
    };
    Ok(FrequencyShift {
        delta_eff: eff.delta_eff,
        slow_branch_im: slow,
        observable: sign * slow,
    })
}
