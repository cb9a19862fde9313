//! Eigenvalue-based stability classification, the closed-form two-tone
//! threshold and stability maps over normalized detuning grids.

mod contour;
mod map;
mod threshold;

pub use contour::{marching_squares, Polyline};
pub use map::{stability_map, stability_map_until, Axis, GridSpec, MapCell, StabilityMap, MAP_FORMAT};
pub use threshold::{
    corridor_half_width, normalized_threshold_residual, threshold_condition, threshold_contour,
    threshold_residual_physical, unstable_delta_m_interval, ContourBranch, DetuningPoint,
};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg;
use crate::model::DynamicalMatrix;

/// Default marginality tolerance, relative to κ.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Fixed-point taxonomy of the linear system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedPointClass {
    StableSpiral,
    StableNode,
    Saddle,
    UnstableSpiral,
    UnstableNode,
    Marginal,
}

impl FixedPointClass {
    pub fn code(self) -> &'static str {
        match self {
            Self::StableSpiral => "stable_spiral",
            Self::StableNode => "stable_node",
            Self::Saddle => "saddle",
            Self::UnstableSpiral => "unstable_spiral",
            Self::UnstableNode => "unstable_node",
            Self::Marginal => "marginal",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        [
            Self::StableSpiral,
            Self::StableNode,
            Self::Saddle,
            Self::UnstableSpiral,
            Self::UnstableNode,
            Self::Marginal,
        ]
        .into_iter()
        .find(|c| c.code() == code)
    }

    pub fn is_unstable(self) -> bool {
        matches!(self, Self::Saddle | Self::UnstableSpiral | Self::UnstableNode)
    }
}

impl std::fmt::Display for FixedPointClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport {
    /// Sorted by descending real part.
    pub eigenvalues: [Complex64; 4],
    pub classification: FixedPointClass,
    /// Largest real part; negative means stable.
    pub margin: f64,
    /// Imaginary part of the offending (largest real part) eigenvalue.
    pub offending_im: f64,
    /// Index into `eigenvalues` of the offending eigenvalue.
    pub offending: usize,
    /// Indices of the slow (mechanical-like) pair.
    pub slow_pair: [usize; 2],
}

impl StabilityReport {
    pub fn slow_eigenvalues(&self) -> [Complex64; 2] {
        [self.eigenvalues[self.slow_pair[0]], self.eigenvalues[self.slow_pair[1]]]
    }

    /// `|Im λ|` of the slow branch, i.e. the effective mechanical frequency in
    /// the rotating frame.
    pub fn slow_frequency(&self) -> f64 {
        let [a, b] = self.slow_eigenvalues();
        a.im.abs().max(b.im.abs())
    }

    pub fn is_stable(&self) -> bool {
        self.margin < 0.0 && self.classification != FixedPointClass::Marginal
    }
}

/// Classifies the fixed point of `ẋ = M x`.
///
/// `tol` is relative to κ (read off the optical diagonal of `M`). The result
/// is `Marginal` when `|margin| < tol·κ`; spiral/node discrimination tests
/// `|Im λ| < tol·κ` on the offending eigenvalue. When several eigenvalues
/// share the largest real part within tolerance the one with the smallest
/// `|Im λ|` is taken as offending.
pub fn classify(matrix: &DynamicalMatrix, tol: f64) -> Result<StabilityReport> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(invalid("tol", format!("must be finite and > 0, got {tol}")));
    }
    let mut eig = linalg::eigenvalues(matrix.entries())?;
    eig.sort_by(|a, b| {
        b.re.total_cmp(&a.re)
            .then(a.im.abs().total_cmp(&b.im.abs()))
            .then(b.im.total_cmp(&a.im))
    });

    let scale = if matrix.kappa() > 0.0 {
        matrix.kappa()
    } else {
        matrix.entries().amax().max(f64::MIN_POSITIVE)
    };
    let abs_tol = tol * scale;
    let margin = eig[0].re;

    let offending = (0..4)
        .filter(|&i| eig[i].re >= margin - abs_tol)
        .min_by(|&a, &b| eig[a].im.abs().total_cmp(&eig[b].im.abs()).then(a.cmp(&b)))
        .unwrap_or(0);
    let slow_pair = slow_pair(&eig, matrix.gamma_m());
    let is_real = |z: Complex64| z.im.abs() < abs_tol;

    let classification = if margin.abs() < abs_tol {
        FixedPointClass::Marginal
    } else if margin < 0.0 {
        if is_real(eig[offending]) {
            FixedPointClass::StableNode
        } else {
            FixedPointClass::StableSpiral
        }
    } else if !is_real(eig[offending]) {
        FixedPointClass::UnstableSpiral
    } else {
        let partner = if slow_pair.contains(&offending) {
            if slow_pair[0] == offending {
                slow_pair[1]
            } else {
                slow_pair[0]
            }
        } else {
            (0..4)
                .filter(|&i| i != offending)
                .min_by(|&a, &b| {
                    (eig[a] - eig[offending])
                        .norm()
                        .total_cmp(&(eig[b] - eig[offending]).norm())
                })
                .unwrap_or(offending)
        };
        let p = eig[partner];
        if is_real(p) && p.re < -abs_tol {
            FixedPointClass::Saddle
        } else {
            FixedPointClass::UnstableNode
        }
    };

    Ok(StabilityReport {
        eigenvalues: eig,
        classification,
        margin,
        offending_im: eig[offending].im,
        offending,
        slow_pair,
    })
}

/// The two eigenvalues whose real parts lie closest to the bare mechanical
/// damping `-Γm/2`; ties resolved by index so conjugate pairs stay together.
fn slow_pair(eig: &[Complex64; 4], gamma_m: f64) -> [usize; 2] {
    let mut idx = [0usize, 1, 2, 3];
    let target = -gamma_m / 2.0;
    idx.sort_by(|&a, &b| {
        (eig[a].re - target)
            .abs()
            .total_cmp(&(eig[b].re - target).abs())
            .then(a.cmp(&b))
    });
    let mut pair = [idx[0], idx[1]];
    pair.sort_unstable();
    pair
}
