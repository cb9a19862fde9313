use serde::{Deserialize, Serialize};

use crate::model::{DriveConfig, SystemParams};

/// A point in normalized detuning space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetuningPoint {
    pub delta_m_norm: f64,
    pub delta_c_norm: f64,
}

/// Closed threshold curve in one sign quadrant (`Δ̃c Δ̃m > 0`).
///
/// Points run along the upper root from the inner to the outer `Δ̃c`
/// endpoint and back along the lower root; the first point is repeated at
/// the end. A degenerate branch (C = 1) holds a single point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourBranch {
    /// +1 for the `Δ̃c, Δ̃m > 0` quadrant, -1 for the mirrored one.
    pub quadrant: i8,
    pub points: Vec<DetuningPoint>,
}

/// `4 C Δ̃c Δ̃m - (1 + Δ̃c²)(1 + Δ̃m²)`; positive means unstable.
pub fn normalized_threshold_residual(cooperativity: f64, delta_c_norm: f64, delta_m_norm: f64) -> f64 {
    4.0 * cooperativity * delta_c_norm * delta_m_norm
        - (1.0 + delta_c_norm * delta_c_norm) * (1.0 + delta_m_norm * delta_m_norm)
}

/// Dimensionless threshold residual of the effective two-tone model.
///
/// This is `r = 4g²ΔmΔc - (Γm²/4 + Δm²)(κ²/4 + Δc²)` scaled by
/// `16/(κ²Γm²)`, so it has the sign of `r` and vanishes on the threshold.
pub fn threshold_condition(params: &SystemParams, drive: &DriveConfig) -> f64 {
    normalized_threshold_residual(
        params.cooperativity(),
        drive.delta_c_norm(params),
        drive.delta_m_norm(params),
    )
}

/// The residual `r` in physical units (frequency⁴).
pub fn threshold_residual_physical(params: &SystemParams, drive: &DriveConfig) -> f64 {
    let dm = drive.effective_delta_m(params);
    let dc = drive.delta_c;
    let g2 = params.g() * params.g();
    4.0 * g2 * dm * dc - (params.gamma_m().powi(2) / 4.0 + dm * dm) * (params.kappa().powi(2) / 4.0 + dc * dc)
}

/// Smallest unstable `|Δ̃c|`, `C - √(C² - 1)`, or `None` for `C < 1`.
pub fn corridor_half_width(cooperativity: f64) -> Option<f64> {
    if cooperativity < 1.0 || !cooperativity.is_finite() {
        return None;
    }
    // 1 / (C + √(C²-1)) avoids cancellation for large C
    Some(1.0 / (cooperativity + (cooperativity * cooperativity - 1.0).sqrt()))
}

/// Unstable `Δ̃m` interval `[lo, hi]` (with `lo·hi = 1`) at a given `Δ̃c`.
pub fn unstable_delta_m_interval(cooperativity: f64, delta_c_norm: f64) -> Option<(f64, f64)> {
    roots(cooperativity, delta_c_norm, Disc::Strict)
}

#[derive(Clone, Copy)]
enum Disc {
    Strict,
    Clamp,
    Zero,
}

fn roots(c: f64, x: f64, mode: Disc) -> Option<(f64, f64)> {
    if x == 0.0 {
        return None;
    }
    let a = 1.0 + x * x;
    let disc = match mode {
        Disc::Zero => 0.0,
        _ => 16.0 * c * c * x * x - 4.0 * a * a,
    };
    let disc = match mode {
        Disc::Strict if disc < 0.0 => return None,
        _ => disc.max(0.0),
    };
    // stable quadratic formula; the roots share the sign of x and multiply to 1
    let b = -4.0 * c * x;
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let r1 = q / a;
    let r2 = a / q;
    Some((r1.min(r2), r1.max(r2)))
}

/// Analytic threshold contour of the two-tone instability.
///
/// For each `|Δ̃c|` taken from `delta_c_grid` that lies inside the unstable
/// band `[C - √(C²-1), C + √(C²-1)]`, both roots of
/// `(1+Δ̃c²)Δ̃m² - 4CΔ̃cΔ̃m + (1+Δ̃c²) = 0` are returned. The band endpoints
/// are always included so each quadrant's branch closes. The negative
/// quadrant is the point reflection of the positive one. `C < 1` yields no
/// branches.
pub fn threshold_contour(cooperativity: f64, delta_c_grid: &[f64]) -> Vec<ContourBranch> {
    let Some(inner) = corridor_half_width(cooperativity) else {
        return Vec::new();
    };
    let outer = 1.0 / inner;

    let mut xs: Vec<f64> = delta_c_grid
        .iter()
        .map(|x| x.abs())
        .filter(|&x| x > inner && x < outer)
        .collect();
    xs.push(inner);
    xs.push(outer);
    xs.sort_by(f64::total_cmp);
    xs.dedup();

    let mut upper = Vec::with_capacity(xs.len());
    let mut lower = Vec::with_capacity(xs.len());
    for &x in &xs {
        let mode = if x == inner || x == outer {
            Disc::Zero
        } else {
            Disc::Clamp
        };
        let (lo, hi) = roots(cooperativity, x, mode).expect("x is nonzero");
        upper.push(DetuningPoint {
            delta_m_norm: hi,
            delta_c_norm: x,
        });
        lower.push(DetuningPoint {
            delta_m_norm: lo,
            delta_c_norm: x,
        });
    }

    let mut points = upper;
    if xs.len() > 1 {
        // endpoints are double roots; skip the duplicate at the outer end
        points.extend(lower.into_iter().rev().skip(1));
    }

    let mirrored = points
        .iter()
        .map(|p| DetuningPoint {
            delta_m_norm: -p.delta_m_norm,
            delta_c_norm: -p.delta_c_norm,
        })
        .collect();
    vec![
        ContourBranch { quadrant: 1, points },
        ContourBranch {
            quadrant: -1,
            points: mirrored,
        },
    ]
}
