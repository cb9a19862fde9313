use serde::Serialize;

use super::power::trapezoid_excess;
use super::{mechanical_quanta, output_spectrum_auto, NoiseModel};
use crate::error::{invalid, Result};
use crate::model::{DriveConfig, SystemParams};

/// Off-BAE reference detuning `Δ̃m` used to quantify the evaded backaction.
pub const BAE_REFERENCE_DELTA_M_NORM: f64 = 18.0;

/// Cancellation threshold relative to the thermal feature.
const CANCELLATION_LEVEL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaeReport {
    pub cooperativity: f64,
    /// Backaction feature area at `Δc = Δm = 0`.
    pub bae_backaction_area: f64,
    /// Thermal feature area at `Δc = Δm = 0`.
    pub bae_thermal_area: f64,
    /// `|bae_backaction_area| / bae_thermal_area`.
    pub cancellation_ratio: f64,
    pub canceled: bool,
    /// Backaction feature at `Δ̃m = 18`, `Δ̃c = 0`, in mechanical quanta.
    pub evaded_backaction_quanta: f64,
    /// `2 n_ba C`, which is `C` for vacuum cavity inputs.
    pub expected_quanta: f64,
}

impl BaeReport {
    /// Evaded backaction relative to its expectation.
    pub fn evaded_ratio(&self) -> f64 {
        self.evaded_backaction_quanta / self.expected_quanta
    }
}

/// Checks that measurement backaction drops out of the mechanical feature at
/// the backaction-evading point and quantifies what is evaded.
pub fn bae_cancellation_check(params: &SystemParams, noise: &NoiseModel) -> Result<BaeReport> {
    let c = params.cooperativity();
    if !(c > 0.0) {
        return Err(invalid("g", "the check needs a nonzero coupling"));
    }
    let floor = noise.n_ba;

    let bae = output_spectrum_auto(params, &DriveConfig::two_tone(0.0, 0.0), noise)?;
    let ba = trapezoid_excess(&bae.omega_grid, &bae.psd_backaction, floor);
    let th = trapezoid_excess(&bae.omega_grid, &bae.psd_thermal, 0.0);
    let ratio = ba.abs() / th;

    let off = DriveConfig::two_tone_normalized(params, 0.0, BAE_REFERENCE_DELTA_M_NORM);
    let spec = output_spectrum_auto(params, &off, noise)?;
    let evaded = trapezoid_excess(&spec.omega_grid, &spec.psd_backaction, floor);

    Ok(BaeReport {
        cooperativity: c,
        bae_backaction_area: ba,
        bae_thermal_area: th,
        cancellation_ratio: ratio,
        canceled: ratio < CANCELLATION_LEVEL,
        evaded_backaction_quanta: mechanical_quanta(evaded, params, noise)?,
        expected_quanta: 2.0 * noise.n_ba * c,
    })
}
