use serde::Serialize;

use super::{output_spectrum_auto, NoiseModel, SpectrumResult};
use crate::error::{invalid, Result};
use crate::model::{DriveConfig, SystemParams};
use crate::stability::DetuningPoint;

/// Reference operating point for normalized power maps.
pub const REFERENCE_POINT: DetuningPoint = DetuningPoint {
    delta_m_norm: -18.0,
    delta_c_norm: 0.0,
};

/// Relative edge excess above which the feature is considered truncated.
const TRUNCATION_LEVEL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SidebandPower {
    /// `∫(S - floor) dω/2π`, an output photon flux.
    pub power: f64,
    /// Largest excess over the floor at either grid edge, relative to the
    /// floor (or to the peak excess when the floor is zero).
    pub edge_excess: f64,
    pub truncated: bool,
}

pub(crate) fn trapezoid_excess(omega: &[f64], psd: &[f64], floor: f64) -> f64 {
    let area: f64 = omega
        .windows(2)
        .zip(psd.windows(2))
        .map(|(w, s)| 0.5 * (w[1] - w[0]) * (s[0] + s[1] - 2.0 * floor))
        .sum();
    area / (2.0 * std::f64::consts::PI)
}

/// Total power in the mechanical sidebands.
///
/// Logs a warning when the spectrum at either end of the grid still exceeds
/// the floor by more than 1%.
pub fn sideband_power(spec: &SpectrumResult) -> SidebandPower {
    let power = trapezoid_excess(&spec.omega_grid, &spec.psd_total, spec.floor);
    let n = spec.psd_total.len();
    let peak_excess = spec.psd_total.iter().map(|s| s - spec.floor).fold(0.0, f64::max);
    let reference = if spec.floor > 0.0 { spec.floor } else { peak_excess };
    let edge_excess = if reference > 0.0 {
        [spec.psd_total[0], spec.psd_total[n - 1]]
            .iter()
            .map(|s| (s - spec.floor) / reference)
            .fold(0.0, f64::max)
    } else {
        0.0
    };
    let truncated = edge_excess > TRUNCATION_LEVEL;
    if truncated {
        log::warn!(
            "mechanical feature truncated: edge spectrum exceeds floor by {:.2}%",
            100.0 * edge_excess
        );
    }
    SidebandPower {
        power,
        edge_excess,
        truncated,
    }
}

/// Output photon flux per mechanical quantum, `2ηCΓm`.
pub fn transduction_gain(params: &SystemParams, noise: &NoiseModel) -> f64 {
    2.0 * noise.kappa_ex_fraction * params.cooperativity() * params.gamma_m()
}

/// Converts a feature area to mechanical quanta.
pub fn mechanical_quanta(power: f64, params: &SystemParams, noise: &NoiseModel) -> Result<f64> {
    let gain = transduction_gain(params, noise);
    if gain > 0.0 {
        Ok(power / gain)
    } else {
        Err(invalid("g", "mechanical quanta are undefined without coupling"))
    }
}

/// Sideband power on the default adaptive grid.
pub fn power_at(params: &SystemParams, drive: &DriveConfig, noise: &NoiseModel) -> Result<f64> {
    Ok(sideband_power(&output_spectrum_auto(params, drive, noise)?).power)
}

/// `P/P₀`, with `P₀` taken at the two-tone operating point `reference`.
pub fn normalized_power(
    params: &SystemParams,
    drive: &DriveConfig,
    noise: &NoiseModel,
    reference: &DetuningPoint,
) -> Result<f64> {
    let ref_drive = DriveConfig::two_tone_normalized(params, reference.delta_c_norm, reference.delta_m_norm);
    let p0 = power_at(params, &ref_drive, noise)?;
    if !(p0 > 0.0) {
        return Err(invalid("reference", format!("reference power must be > 0, got {p0}")));
    }
    Ok(power_at(params, drive, noise)? / p0)
}
