//! Output noise spectra of the linearised system.
//!
//! Conventions, used consistently by this module and by [`crate::dynamics`]:
//!
//! * Six real white-noise inputs drive `ẋ = M x + B ξ`: the external and
//!   internal cavity ports (`X`, `Y` each) and the mechanical bath (`X`, `Y`).
//!   The cavity rows of `B` carry `√κex` and `√κ0` with `κex = η κ`,
//!   `κ0 = κ - κex`; the mechanical rows carry `√Γm`.
//! * Symmetrized input densities are `2 n_ba` for every cavity quadrature and
//!   `2 n_th + 1` for the mechanical ones, so the diffusion matrix is
//!   `diag(2κ n_ba, 2κ n_ba, Γm(2n_th+1), Γm(2n_th+1))`.
//! * The measured field is `a_out = (X_out + i Y_out)/2` with
//!   `[X_out, Y_out] = √κex [Xa, Ya] - [X_ex, Y_ex]`, and a frequency
//!   component `x(ω)` solves `(-iω - M) x(ω) = B ξ(ω)`.
//! * Spectra are symmetrized and expressed in quanta per unit bandwidth
//!   `dω/2π`. The decoupled cavity is all-pass, so the floor is exactly
//!   `n_ba`.
//! * Sideband power is the area above the floor, `∫(S - n_ba) dω/2π`, an
//!   output photon flux. Dividing by the transduction gain `2ηCΓm` gives
//!   mechanical quanta, normalized so that a thermal bath contributes
//!   `n_th + 1/2`.

mod bae;
mod features;
mod power;
mod shift;

pub use bae::{bae_cancellation_check, BaeReport, BAE_REFERENCE_DELTA_M_NORM};
pub use features::{extract_features, lorentzian, Features, Peak};
pub(crate) use power::trapezoid_excess;
pub use power::{
    mechanical_quanta, normalized_power, power_at, sideband_power, transduction_gain, SidebandPower, REFERENCE_POINT,
};
pub use shift::{effective_frequency_shift, FrequencyShift};

use std::io::Write;

use nalgebra::{Matrix4, SMatrix};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, require_finite, Error, Result};
use crate::linalg::{self, CMatrix4};
use crate::model::{build_dynamical_matrix, DriveConfig, SystemParams};
use crate::stability::{classify, DEFAULT_TOL};

pub const SPECTRUM_FORMAT: &str = "twotone.spectrum/1";

pub const SPECTRUM_CSV_HEADER: [&str; 4] = ["omega", "psd_total", "psd_thermal", "psd_backaction"];

type InputMatrix = SMatrix<f64, 4, 6>;

/// Noise occupations feeding the cavity and mechanical inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// Thermal occupation of the mechanical bath.
    pub n_th: f64,
    /// Symmetrized occupation of the cavity inputs, vacuum included
    /// (`1/2` is the vacuum floor). Classical pump noise is lumped in here.
    pub n_ba: f64,
    /// Output coupling fraction `κex/κ`.
    pub kappa_ex_fraction: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::vacuum()
    }
}

impl NoiseModel {
    pub fn new(n_th: f64, n_ba: f64, kappa_ex_fraction: f64) -> Result<Self> {
        let noise = Self {
            n_th,
            n_ba,
            kappa_ex_fraction,
        };
        noise.validate()?;
        Ok(noise)
    }

    /// Zero temperature, vacuum cavity inputs, overcoupled cavity.
    pub fn vacuum() -> Self {
        Self {
            n_th: 0.0,
            n_ba: 0.5,
            kappa_ex_fraction: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(require_finite("n_th", self.n_th)? >= 0.0) {
            return Err(invalid("n_th", format!("must be >= 0, got {}", self.n_th)));
        }
        if !(require_finite("n_ba", self.n_ba)? >= 0.0) {
            return Err(invalid("n_ba", format!("must be >= 0, got {}", self.n_ba)));
        }
        let eta = require_finite("kappa_ex_fraction", self.kappa_ex_fraction)?;
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(invalid("kappa_ex_fraction", format!("must lie in (0, 1], got {eta}")));
        }
        Ok(())
    }

    pub fn with_n_th(self, n_th: f64) -> Result<Self> {
        Self::new(n_th, self.n_ba, self.kappa_ex_fraction)
    }

    pub fn with_n_ba(self, n_ba: f64) -> Result<Self> {
        Self::new(self.n_th, n_ba, self.kappa_ex_fraction)
    }

    /// Symmetrized densities of the six inputs.
    fn densities(&self) -> [f64; 6] {
        let a = 2.0 * self.n_ba;
        let b = 2.0 * self.n_th + 1.0;
        [a, a, a, a, b, b]
    }
}

/// Folds an auxiliary cooling tone into the bath: the mechanical damping
/// becomes `gamma_eff` and the occupation drops to keep `Γm n_th` fixed
/// (a zero-temperature cooling reservoir). `g` is kept, so `C` changes.
pub fn with_cooling_tone(
    params: &SystemParams,
    noise: &NoiseModel,
    gamma_eff: f64,
) -> Result<(SystemParams, NoiseModel)> {
    if !(gamma_eff >= params.gamma_m()) {
        return Err(invalid(
            "gamma_eff",
            format!("must be >= gamma_m = {}, got {gamma_eff}", params.gamma_m()),
        ));
    }
    let cooled = SystemParams::new(
        params.kappa(),
        gamma_eff,
        params.omega_m(),
        crate::model::Coupling::G(params.g()),
    )?;
    let n_th = noise.n_th * params.gamma_m() / gamma_eff;
    Ok((cooled, noise.with_n_th(n_th)?))
}

fn input_matrix(params: &SystemParams, noise: &NoiseModel) -> InputMatrix {
    let kex = noise.kappa_ex_fraction * params.kappa();
    let k0 = (params.kappa() - kex).max(0.0);
    let gm = params.gamma_m();
    let mut b = InputMatrix::zeros();
    b[(0, 0)] = kex.sqrt();
    b[(1, 1)] = kex.sqrt();
    b[(0, 2)] = k0.sqrt();
    b[(1, 3)] = k0.sqrt();
    b[(2, 4)] = gm.sqrt();
    b[(3, 5)] = gm.sqrt();
    b
}

/// Diffusion matrix `B N Bᵀ` of the quadrature Langevin equations.
pub fn diffusion_matrix(params: &SystemParams, noise: &NoiseModel) -> Matrix4<f64> {
    let b = input_matrix(params, noise);
    let n = noise.densities();
    let mut d = Matrix4::zeros();
    for (col, density) in b.column_iter().zip(n) {
        d += col * col.transpose() * density;
    }
    d
}

/// Intracavity quadrature spectral matrix `G D G†` with `G = (-iω - M)⁻¹`.
pub fn quadrature_psd(m: &Matrix4<f64>, diffusion: &Matrix4<f64>, omega: f64) -> Result<CMatrix4> {
    let g = linalg::resolvent(m, omega)?;
    let d = diffusion.map(Complex64::from);
    Ok(g * d * g.adjoint())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumResult {
    pub omega_grid: Vec<f64>,
    pub psd_total: Vec<f64>,
    pub psd_thermal: Vec<f64>,
    pub psd_backaction: Vec<f64>,
    /// Analytic noise floor far from the mechanical features.
    pub floor: f64,
    pub features: Features,
}

impl SpectrumResult {
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(SPECTRUM_CSV_HEADER)?;
        for i in 0..self.omega_grid.len() {
            out.write_record([
                self.omega_grid[i].to_string(),
                self.psd_total[i].to_string(),
                self.psd_thermal[i].to_string(),
                self.psd_backaction[i].to_string(),
            ])?;
        }
        out.flush()
    }

    pub fn features_json(&self) -> serde_json::Value {
        serde_json::json!({
            "format": SPECTRUM_FORMAT,
            "floor": self.floor,
            "peaks": self.features.peaks,
            "gamma_eff": self.features.gamma_eff,
            "delta_eff": self.features.delta_eff,
            "total_power": self.features.total_power,
            "fit_error": self.features.fit_error,
        })
    }
}

/// Contributions of the cavity (`backaction`, floor included) and mechanical
/// (`thermal`) inputs to the output spectrum at one frequency.
fn output_psd_point(
    m: &Matrix4<f64>,
    b: &InputMatrix,
    densities: &[f64; 6],
    sqrt_kex: f64,
    omega: f64,
) -> Result<(f64, f64)> {
    let g = linalg::resolvent(m, omega)?;
    let half = Complex64::new(0.5, 0.0);
    let half_i = Complex64::new(0.0, 0.5);
    let mut backaction = 0.0;
    let mut thermal = 0.0;
    for k in 0..6 {
        let mut xa = Complex64::new(0.0, 0.0);
        let mut ya = Complex64::new(0.0, 0.0);
        for j in 0..4 {
            xa += g[(0, j)] * b[(j, k)];
            ya += g[(1, j)] * b[(j, k)];
        }
        let mut r = (half * xa + half_i * ya) * sqrt_kex;
        match k {
            0 => r -= half,
            1 => r -= half_i,
            _ => {}
        }
        let s = r.norm_sqr() * densities[k];
        if k < 4 {
            backaction += s;
        } else {
            thermal += s;
        }
    }
    Ok((backaction, thermal))
}

fn validate_grid(omega_grid: &[f64]) -> Result<()> {
    if omega_grid.len() < 3 {
        return Err(invalid("omega_grid", "needs at least 3 points"));
    }
    if !omega_grid.iter().all(|w| w.is_finite()) {
        return Err(invalid("omega_grid", "must be finite"));
    }
    if omega_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("omega_grid", "must be strictly increasing"));
    }
    Ok(())
}

/// Symmetrized output spectrum at a stable operating point.
///
/// Frequencies are evaluated in parallel; the result does not depend on
/// scheduling. Lorentzian features are extracted from the total spectrum;
/// a failed fit is reported in [`Features::fit_error`] rather than as an
/// error.
pub fn output_spectrum(
    params: &SystemParams,
    drive: &DriveConfig,
    noise: &NoiseModel,
    omega_grid: &[f64],
) -> Result<SpectrumResult> {
    noise.validate()?;
    validate_grid(omega_grid)?;
    let matrix = build_dynamical_matrix(params, drive)?;
    let report = classify(&matrix, DEFAULT_TOL)?;
    if !report.is_stable() {
        return Err(Error::UnstablePoint { margin: report.margin });
    }

    let m = *matrix.entries();
    let b = input_matrix(params, noise);
    let densities = noise.densities();
    let sqrt_kex = (noise.kappa_ex_fraction * params.kappa()).sqrt();
    let points = omega_grid
        .par_iter()
        .map(|&w| output_psd_point(&m, &b, &densities, sqrt_kex, w))
        .collect::<Result<Vec<_>>>()?;

    let psd_backaction: Vec<f64> = points.iter().map(|p| p.0).collect();
    let psd_thermal: Vec<f64> = points.iter().map(|p| p.1).collect();
    let psd_total: Vec<f64> = points.iter().map(|p| p.0 + p.1).collect();
    let floor = noise.n_ba;

    let total_power = power::trapezoid_excess(omega_grid, &psd_total, floor);
    let features = match extract_features(omega_grid, &psd_total, floor) {
        Ok(mut f) => {
            f.total_power = total_power;
            f
        }
        Err(e) => Features::unfitted(total_power, e.to_string()),
    };

    Ok(SpectrumResult {
        omega_grid: omega_grid.to_vec(),
        psd_total,
        psd_thermal,
        psd_backaction,
        floor,
        features,
    })
}

/// Points per resolved pole in [`frequency_grid`].
pub const DEFAULT_POINTS_PER_POLE: usize = 801;
/// Half-span of each pole's grid in units of `max(|Re λ|, Γm/2)`.
pub const DEFAULT_SPAN_FACTOR: f64 = 2000.0;

/// Non-uniform frequency grid resolving the mechanical features.
///
/// Around each slow eigenvalue `λ` (and its mirror) the points are
/// `ω = -Im λ + w sinh(u)` with `w = |Re λ|` and `u` uniform, reaching out to
/// `span_factor · max(w, Γm/2)`. The union is sorted and deduplicated, so
/// sharp features close to threshold stay resolved while the tails are
/// covered to where the feature decays to the floor.
pub fn frequency_grid(
    params: &SystemParams,
    drive: &DriveConfig,
    points_per_pole: usize,
    span_factor: f64,
) -> Result<Vec<f64>> {
    if points_per_pole < 3 {
        return Err(invalid("points_per_pole", "needs at least 3"));
    }
    if !(span_factor > 1.0) {
        return Err(invalid("span_factor", format!("must be > 1, got {span_factor}")));
    }
    let matrix = build_dynamical_matrix(params, drive)?;
    let report = classify(&matrix, DEFAULT_TOL)?;
    let floor_width = params.gamma_m() / 2.0;
    let mut grid = Vec::with_capacity(4 * points_per_pole);
    for z in report.slow_eigenvalues() {
        let w = z.re.abs().max(1e-6 * floor_width);
        let span = span_factor * w.max(floor_width);
        let u_max = (span / w).asinh();
        for centre in [-z.im, z.im] {
            for k in 0..points_per_pole {
                let u = -u_max + 2.0 * u_max * k as f64 / (points_per_pole - 1) as f64;
                grid.push(centre + w * u.sinh());
            }
        }
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * floor_width);
    Ok(grid)
}

/// Spectrum on the default [`frequency_grid`].
pub fn output_spectrum_auto(params: &SystemParams, drive: &DriveConfig, noise: &NoiseModel) -> Result<SpectrumResult> {
    let grid = frequency_grid(params, drive, DEFAULT_POINTS_PER_POLE, DEFAULT_SPAN_FACTOR)?;
    output_spectrum(params, drive, noise, &grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn diffusion_is_diagonal() {
        let p = SystemParams::from_cooperativity(1.0, 1e-3, 50.0, 2.0).unwrap();
        let noise = NoiseModel::new(3.0, 0.75, 0.4).unwrap();
        let d = diffusion_matrix(&p, &noise);
        let expected = Matrix4::from_diagonal(&nalgebra::Vector4::new(1.5, 1.5, 7e-3, 7e-3));
        assert_relative_eq!(d, expected, epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_noise() {
        assert!(NoiseModel::new(-1.0, 0.5, 1.0).is_err());
        assert!(NoiseModel::new(0.0, f64::NAN, 1.0).is_err());
        assert!(NoiseModel::new(0.0, 0.5, 0.0).is_err());
        assert!(NoiseModel::new(0.0, 0.5, 1.1).is_err());
    }

    #[test]
    fn decoupled_cavity_is_all_pass() {
        let p = SystemParams::from_cooperativity(1.0, 1e-2, 50.0, 0.0).unwrap();
        let noise = NoiseModel::new(0.0, 2.0, 0.3).unwrap();
        let grid: Vec<f64> = (0..41).map(|i| -2.0 + 0.1 * i as f64).collect();
        let s = output_spectrum(&p, &DriveConfig::two_tone(0.3, 0.01), &noise, &grid).unwrap();
        for v in &s.psd_total {
            assert_relative_eq!(*v, 2.0, max_relative = 1e-12);
        }
        for v in &s.psd_thermal {
            assert!(v.abs() < 1e-28);
        }
    }

    #[test]
    fn unstable_point_is_rejected() {
        let p = SystemParams::from_cooperativity(1.0, 1e-2, 10.0, 2.0).unwrap();
        let d = DriveConfig::two_tone_normalized(&p, 1.0, 1.0);
        let grid = [-1.0, 0.0, 1.0];
        match output_spectrum(&p, &d, &NoiseModel::vacuum(), &grid) {
            Err(Error::UnstablePoint { margin }) => assert!(margin > 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn grid_must_increase() {
        let p = SystemParams::from_cooperativity(1.0, 1e-2, 10.0, 0.5).unwrap();
        let d = DriveConfig::two_tone(0.0, 0.0);
        assert!(output_spectrum(&p, &d, &NoiseModel::vacuum(), &[0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn cooling_tone_keeps_bath_flux() {
        let p = SystemParams::from_cooperativity(1.0, 1e-3, 50.0, 2.0).unwrap();
        let noise = NoiseModel::new(100.0, 0.5, 1.0).unwrap();
        let (pc, nc) = with_cooling_tone(&p, &noise, 1e-2).unwrap();
        assert_eq!(pc.g(), p.g());
        assert_relative_eq!(pc.cooperativity(), 0.2, max_relative = 1e-12);
        assert_relative_eq!(nc.n_th, 10.0, max_relative = 1e-12);
        assert!(with_cooling_tone(&p, &noise, 1e-4).is_err());
    }
}
