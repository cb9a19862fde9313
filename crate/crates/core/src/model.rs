//! Physical parameterization, self-energy and the linear dynamical matrix.
//!
//! Conventions: every rate is an angular frequency. `kappa` and `gamma_m` are
//! energy decay rates (full widths), `g` is the field-enhanced coupling of
//! the rotating-wave Hamiltonian
//!
//! ```text
//! H = -Δc a†a - Δm b†b - g (a + a†)(b + b†)
//! ```
//!
//! and the cooperativity is `C = 4 g² / (κ Γm)`.

use nalgebra::Matrix4;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, require_finite, require_positive, Result};

/// Coupling strength, given either directly or through the cooperativity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    G(f64),
    Cooperativity(f64),
}

/// Rates of the optomechanical system. The coupling is stored canonically as `g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSystemParams", into = "RawSystemParams")]
pub struct SystemParams {
    kappa: f64,
    gamma_m: f64,
    omega_m: f64,
    g: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystemParams {
    kappa: f64,
    gamma_m: f64,
    omega_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    g: Option<f64>,
    #[serde(default)]
    cooperativity: Option<f64>,
}

impl TryFrom<RawSystemParams> for SystemParams {
    type Error = crate::Error;

    fn try_from(raw: RawSystemParams) -> Result<Self> {
        let coupling = match (raw.g, raw.cooperativity) {
            (Some(g), _) => Coupling::G(g),
            (None, Some(c)) => Coupling::Cooperativity(c),
            (None, None) => return Err(invalid("coupling", "either `g` or `cooperativity` is required")),
        };
        SystemParams::new(raw.kappa, raw.gamma_m, raw.omega_m, coupling)
    }
}

impl From<SystemParams> for RawSystemParams {
    fn from(p: SystemParams) -> Self {
        RawSystemParams {
            kappa: p.kappa,
            gamma_m: p.gamma_m,
            omega_m: p.omega_m,
            g: Some(p.g),
            cooperativity: Some(p.cooperativity()),
        }
    }
}

impl SystemParams {
    pub fn new(kappa: f64, gamma_m: f64, omega_m: f64, coupling: Coupling) -> Result<Self> {
        require_positive("kappa", kappa)?;
        require_positive("gamma_m", gamma_m)?;
        require_positive("omega_m", omega_m)?;
        let g = match coupling {
            Coupling::G(g) => {
                require_finite("g", g)?;
                if g < 0.0 {
                    return Err(invalid("g", format!("must be >= 0, got {g}")));
                }
                g
            }
            Coupling::Cooperativity(c) => {
                require_finite("cooperativity", c)?;
                if c < 0.0 {
                    return Err(invalid("cooperativity", format!("must be >= 0, got {c}")));
                }
                (c * kappa * gamma_m / 4.0).sqrt()
            }
        };
        Ok(Self {
            kappa,
            gamma_m,
            omega_m,
            g,
        })
    }

    pub fn from_cooperativity(kappa: f64, gamma_m: f64, omega_m: f64, c: f64) -> Result<Self> {
        Self::new(kappa, gamma_m, omega_m, Coupling::Cooperativity(c))
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn gamma_m(&self) -> f64 {
        self.gamma_m
    }

    pub fn omega_m(&self) -> f64 {
        self.omega_m
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn cooperativity(&self) -> f64 {
        4.0 * self.g * self.g / (self.kappa * self.gamma_m)
    }

    /// Same rates with a different coupling.
    pub fn with_coupling(&self, coupling: Coupling) -> Result<Self> {
        Self::new(self.kappa, self.gamma_m, self.omega_m, coupling)
    }

    pub fn with_cooperativity(&self, c: f64) -> Result<Self> {
        self.with_coupling(Coupling::Cooperativity(c))
    }

    /// All rates multiplied by `s > 0`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        require_positive("scale", s)?;
        Self::new(
            self.kappa * s,
            self.gamma_m * s,
            self.omega_m * s,
            Coupling::G(self.g * s),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveMode {
    /// Single tone on the upper motional sideband; `Δm = -Ωm` is implied.
    SingleToneUpper,
    /// Balanced two-tone drive in the rotating-wave approximation.
    TwoToneBalanced,
}

/// Drive mode and detuning errors. Normalized detunings are derived on demand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveConfig {
    pub mode: DriveMode,
    pub delta_c: f64,
    /// Ignored in [`DriveMode::SingleToneUpper`], where `-Ωm` is used instead.
    pub delta_m: f64,
}

impl DriveConfig {
    pub fn two_tone(delta_c: f64, delta_m: f64) -> Self {
        Self {
            mode: DriveMode::TwoToneBalanced,
            delta_c,
            delta_m,
        }
    }

    /// Two-tone drive from normalized detunings `Δ̃c = Δc/(κ/2)`, `Δ̃m = Δm/(Γm/2)`.
    pub fn two_tone_normalized(params: &SystemParams, delta_c_norm: f64, delta_m_norm: f64) -> Self {
        Self::two_tone(delta_c_norm * params.kappa / 2.0, delta_m_norm * params.gamma_m / 2.0)
    }

    pub fn single_tone_upper(params: &SystemParams, delta_c: f64) -> Self {
        Self {
            mode: DriveMode::SingleToneUpper,
            delta_c,
            delta_m: -params.omega_m,
        }
    }

    /// Mechanical detuning entering the dynamical matrix.
    pub fn effective_delta_m(&self, params: &SystemParams) -> f64 {
        match self.mode {
            DriveMode::SingleToneUpper => -params.omega_m,
            DriveMode::TwoToneBalanced => self.delta_m,
        }
    }

    pub fn delta_c_norm(&self, params: &SystemParams) -> f64 {
        self.delta_c / (params.kappa / 2.0)
    }

    pub fn delta_m_norm(&self, params: &SystemParams) -> f64 {
        self.effective_delta_m(params) / (params.gamma_m / 2.0)
    }

    /// The same drive with both detunings negated.
    pub fn sign_flipped(&self) -> Self {
        Self {
            mode: self.mode,
            delta_c: -self.delta_c,
            delta_m: -self.delta_m,
        }
    }
}

/// Drift matrix `M` of `ẋ = M x` over `x = [Xa, Ya, Xb, Yb]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicalMatrix(Matrix4<f64>);

impl DynamicalMatrix {
    /// Wraps raw entries without validation; [`build_dynamical_matrix`] is the
    /// checked constructor.
    pub fn from_entries(entries: Matrix4<f64>) -> Self {
        Self(entries)
    }

    pub fn entries(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// κ recovered from the optical diagonal.
    pub fn kappa(&self) -> f64 {
        -2.0 * self.0[(0, 0)]
    }

    /// Γm recovered from the mechanical diagonal.
    pub fn gamma_m(&self) -> f64 {
        -2.0 * self.0[(2, 2)]
    }
}

/// `Σ(ω) = 2 Δc g² / ((κ/2 - iω)² + Δc²)`.
pub fn self_energy(params: &SystemParams, delta_c: f64, omega: f64) -> Complex64 {
    let half_kappa = Complex64::new(params.kappa / 2.0, -omega);
    let denom = half_kappa * half_kappa + delta_c * delta_c;
    Complex64::from(2.0 * delta_c * params.g * params.g) / denom
}

pub fn build_dynamical_matrix(params: &SystemParams, drive: &DriveConfig) -> Result<DynamicalMatrix> {
    require_finite("delta_c", drive.delta_c)?;
    let delta_m = require_finite("delta_m", drive.effective_delta_m(params))?;
    let delta_c = drive.delta_c;
    let hk = params.kappa / 2.0;
    let hg = params.gamma_m / 2.0;
    let c = 2.0 * params.g;
    #[rustfmt::skip]
    let m = Matrix4::new(
        -hk,     -delta_c, 0.0,      0.0,
        delta_c, -hk,      c,        0.0,
        0.0,     0.0,      -hg,      -delta_m,
        c,       0.0,      delta_m,  -hg,
    );
    Ok(DynamicalMatrix(m))
}

/// Eigenvalues of the single-mode effective equation of motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveEigenvalues {
    pub plus: Complex64,
    pub minus: Complex64,
    /// `Δeff = Re √(Δm (Δm - 2Σ))`.
    pub delta_eff: f64,
    /// Static self-energy `Σ(0)`.
    pub sigma: f64,
}

impl EffectiveEigenvalues {
    pub fn max_real(&self) -> f64 {
        self.plus.re.max(self.minus.re)
    }
}

/// `λ± = -Γm/2 ± i √(Δm (Δm - 2Σ(0)))`, principal square root.
///
/// Meaningful for the two-tone drive with `κ ≫ Γm`; that regime is not checked.
pub fn effective_eigenvalues(params: &SystemParams, drive: &DriveConfig) -> EffectiveEigenvalues {
    let delta_m = drive.effective_delta_m(params);
    let sigma = self_energy(params, drive.delta_c, 0.0).re;
    let q = Complex64::new(delta_m * (delta_m - 2.0 * sigma), 0.0);
    // principal branch: Re ≥ 0, and √0 = +0
    let root = if q.re == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        q.sqrt()
    };
    let i_root = Complex64::i() * root;
    let damping = Complex64::new(-params.gamma_m / 2.0, 0.0);
    EffectiveEigenvalues {
        plus: damping + i_root,
        minus: damping - i_root,
        delta_eff: root.re,
        sigma,
    }
}
