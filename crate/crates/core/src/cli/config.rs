//! TOML run configuration.
//!
//! Every key is optional and unknown keys are rejected. Values given in a
//! file are overridden by command-line flags. With `units = "hz"` all rates
//! and detunings in `[system]` and `[drive]` are ordinary frequencies and
//! are multiplied by 2π on load; normalized detunings and times are unitless
//! or in seconds either way.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{CouplingWaveform, Scheme};
use crate::model::{Coupling, DriveConfig, DriveMode, SystemParams};
use crate::spectra::{NoiseModel, DEFAULT_POINTS_PER_POLE, DEFAULT_SPAN_FACTOR};
use crate::stability::{Axis, GridSpec, DEFAULT_TOL};

use super::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    #[default]
    Angular,
    Hz,
}

impl Units {
    /// Factor converting a user-facing rate to an angular one.
    pub fn to_angular(self) -> f64 {
        match self {
            Units::Angular => 1.0,
            Units::Hz => 2.0 * PI,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Map,
    Contour,
    Spectrum,
    Simulate,
    Reproduce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Fig3,
    Fig4def,
    Fig5,
    #[value(name = "fig6-analog")]
    Fig6Analog,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Fig3 => "fig3",
            Target::Fig4def => "fig4def",
            Target::Fig5 => "fig5",
            Target::Fig6Analog => "fig6-analog",
        }
    }
}

/// Used when `[system]` sets neither `g` nor `cooperativity`.
pub const DEFAULT_COOPERATIVITY: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    pub kappa: f64,
    pub gamma_m: f64,
    pub omega_m: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cooperativity: Option<f64>,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            gamma_m: 1e-2,
            omega_m: 10.0,
            g: None,
            cooperativity: None,
        }
    }
}

impl SystemSection {
    pub fn to_params(&self, units: Units) -> Result<SystemParams, CliError> {
        let s = units.to_angular();
        let coupling = match (self.g, self.cooperativity) {
            (Some(g), None) => Coupling::G(g * s),
            (None, Some(c)) => Coupling::Cooperativity(c),
            (Some(_), Some(_)) => return Err(CliError::Config("[system] sets both g and cooperativity".into())),
            (None, None) => Coupling::Cooperativity(DEFAULT_COOPERATIVITY),
        };
        Ok(SystemParams::new(
            self.kappa * s,
            self.gamma_m * s,
            self.omega_m * s,
            coupling,
        )?)
    }

    /// The cooperativity as configured, without a round trip through `g`.
    pub fn cooperativity(&self, units: Units) -> Result<f64, CliError> {
        match (self.g, self.cooperativity) {
            (None, c) => Ok(c.unwrap_or(DEFAULT_COOPERATIVITY)),
            _ => Ok(self.to_params(units)?.cooperativity()),
        }
    }

    pub fn set_cooperativity(&mut self, c: f64) {
        self.cooperativity = Some(c);
        self.g = None;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriveSection {
    pub mode: DriveMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_c_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_m_norm: Option<f64>,
}

impl Default for DriveSection {
    fn default() -> Self {
        Self {
            mode: DriveMode::TwoToneBalanced,
            delta_c: None,
            delta_m: None,
            delta_c_norm: None,
            delta_m_norm: None,
        }
    }
}

impl DriveSection {
    pub fn to_drive(&self, params: &SystemParams, units: Units) -> Result<DriveConfig, CliError> {
        let s = units.to_angular();
        let dc = match (self.delta_c, self.delta_c_norm) {
            (Some(_), Some(_)) => return Err(CliError::Config("[drive] sets both delta_c and delta_c_norm".into())),
            (Some(v), None) => v * s,
            (None, Some(v)) => v * params.kappa() / 2.0,
            (None, None) => 0.0,
        };
        let dm = match (self.delta_m, self.delta_m_norm) {
            (Some(_), Some(_)) => return Err(CliError::Config("[drive] sets both delta_m and delta_m_norm".into())),
            (Some(v), None) => v * s,
            (None, Some(v)) => v * params.gamma_m() / 2.0,
            (None, None) => 0.0,
        };
        Ok(match self.mode {
            DriveMode::TwoToneBalanced => DriveConfig::two_tone(dc, dm),
            DriveMode::SingleToneUpper => DriveConfig::single_tone_upper(params, dc),
        })
    }

    pub fn set_delta_c_norm(&mut self, v: f64) {
        self.delta_c_norm = Some(v);
        self.delta_c = None;
    }

    pub fn set_delta_m_norm(&mut self, v: f64) {
        self.delta_m_norm = Some(v);
        self.delta_m = None;
    }
}

/// Coordinates of a sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AxisUnits {
    /// `Δ̃m = Δm/(Γm/2)`, `Δ̃c = Δc/(κ/2)`.
    #[default]
    Normalized,
    /// `Δm/κ`, `Δc/κ`.
    Kappa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub axes: AxisUnits,
    pub delta_m: Axis,
    pub delta_c: Axis,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            axes: AxisUnits::Normalized,
            delta_m: Axis {
                min: -20.0,
                max: 20.0,
                n: 101,
            },
            delta_c: Axis {
                min: -1.0,
                max: 1.0,
                n: 101,
            },
        }
    }
}

impl SweepSection {
    pub fn grid(&self, params: &SystemParams) -> Result<GridSpec, CliError> {
        self.delta_m.validate()?;
        self.delta_c.validate()?;
        Ok(match self.axes {
            AxisUnits::Normalized => GridSpec {
                delta_m_norm: self.delta_m,
                delta_c_norm: self.delta_c,
            },
            AxisUnits::Kappa => GridSpec::in_kappa_units(params, self.delta_m, self.delta_c),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSection {
    pub points_per_pole: usize,
    pub span_factor: f64,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self {
            points_per_pole: DEFAULT_POINTS_PER_POLE,
            span_factor: DEFAULT_SPAN_FACTOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    /// Defaults to the Euler–Maruyama bound `0.01/max(κ, |Δc|, |Δm|, g)`
    /// (or `0.01/Ωm` for the non-RWA model).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub t_end: f64,
    pub scheme: Scheme,
    pub ensemble: usize,
    pub decimation: usize,
    pub noise: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<[f64; 4]>,
    pub nonrwa: bool,
    pub waveform: CouplingWaveform,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            dt: None,
            t_end: 1000.0,
            scheme: Scheme::EulerMaruyama,
            ensemble: 1,
            decimation: 1,
            noise: true,
            x0: None,
            nonrwa: false,
            waveform: CouplingWaveform::TwoTone,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub format: Format,
    pub plot: bool,
}

/// Recipe parameters for `reproduce`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReproduceSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
    /// Cooperativities of the contour set or of the power maps.
    pub cooperativities: Vec<f64>,
    /// `Δ̃c` of horizontal cuts through a power map.
    pub cuts_delta_c_norm: Vec<f64>,
    /// Cooperativity whose map the cuts are taken from.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cut_cooperativity: Option<f64>,
    /// Second, zoomed grid (normalized axes).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inset: Option<SweepSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    pub units: Units,
    pub seed: u64,
    /// Marginality tolerance relative to κ.
    pub tol: f64,
    pub system: SystemSection,
    pub drive: DriveSection,
    pub noise: NoiseModel,
    pub sweep: SweepSection,
    pub spectrum: SpectrumSection,
    pub simulation: SimulationSection,
    pub output: OutputSection,
    pub reproduce: ReproduceSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: None,
            units: Units::Angular,
            seed: 0,
            tol: DEFAULT_TOL,
            system: SystemSection::default(),
            drive: DriveSection::default(),
            noise: NoiseModel::vacuum(),
            sweep: SweepSection::default(),
            spectrum: SpectrumSection::default(),
            simulation: SimulationSection::default(),
            output: OutputSection::default(),
            reproduce: ReproduceSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// The configuration embedded in artifacts: everything that determines
    /// the data, without the output location.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.output.dir = None;
        if c.system.g.is_none() && c.system.cooperativity.is_none() {
            c.system.cooperativity = Some(DEFAULT_COOPERATIVITY);
        }
        c
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes to TOML")
    }

    pub fn params(&self) -> Result<SystemParams, CliError> {
        self.system.to_params(self.units)
    }

    pub fn cooperativity(&self) -> Result<f64, CliError> {
        self.system.cooperativity(self.units)
    }

    pub fn drive_config(&self, params: &SystemParams) -> Result<DriveConfig, CliError> {
        self.drive.to_drive(params, self.units)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(CliError::Config(format!(
                "tol must be finite and > 0, got {}",
                self.tol
            )));
        }
        let params = self.params()?;
        self.drive_config(&params)?;
        self.noise.validate()?;
        self.sweep.grid(&params)?;
        if self.spectrum.points_per_pole < 3 || !(self.spectrum.span_factor > 1.0) {
            return Err(CliError::Config(
                "[spectrum] needs points_per_pole >= 3 and span_factor > 1".into(),
            ));
        }
        let sim = &self.simulation;
        if sim.ensemble == 0 || sim.decimation == 0 {
            return Err(CliError::Config(
                "[simulation] ensemble and decimation must be >= 1".into(),
            ));
        }
        if !(sim.t_end > 0.0 && sim.t_end.is_finite()) || sim.dt.is_some_and(|dt| !(dt > 0.0 && dt.is_finite())) {
            return Err(CliError::Config(
                "[simulation] dt and t_end must be finite and > 0".into(),
            ));
        }
        if self
            .reproduce
            .cooperativities
            .iter()
            .any(|c| !(c.is_finite() && *c >= 0.0))
        {
            return Err(CliError::Config(
                "[reproduce] cooperativities must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[system]\nkapa = 1.0\n").is_err());
        assert!(RunConfig::from_toml("colour = 1\n").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.system.set_cooperativity(14.0);
        c.sweep.delta_c = Axis::new(-0.3, 0.3, 61).unwrap();
        c.drive.set_delta_m_norm(-18.0);
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn hz_units_scale_rates() {
        let c = RunConfig::from_toml("units = \"hz\"\n[system]\nkappa = 1.0\ngamma_m = 0.5\nomega_m = 20.0\ng = 0.1\n")
            .unwrap();
        let p = c.params().unwrap();
        assert!((p.kappa() - 2.0 * PI).abs() < 1e-12);
        assert!((p.g() - 0.2 * PI).abs() < 1e-12);
        // cooperativity is unit-free
        assert!((p.cooperativity() - 4.0 * 0.01 / 0.5).abs() < 1e-12);
    }

    #[test]
    fn conflicting_detunings_are_config_errors() {
        let c = RunConfig::from_toml("[drive]\ndelta_c = 0.1\ndelta_c_norm = 0.2\n").unwrap();
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
    }
}
