//! Lorentzian feature extraction.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// One fitted line `(A w² + B w (ω - c)) / ((ω - c)² + w²)` above the floor.
///
/// The dispersive part `B` absorbs the interference between neighbouring
/// poles, so `c` and `w` are the pole's frequency and damping even when the
/// line is visibly asymmetric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Peak {
    pub center: f64,
    /// Half width at half maximum of the absorptive part.
    pub hwhm: f64,
    pub amplitude: f64,
    pub dispersion: f64,
}

impl Peak {
    pub fn new(center: f64, hwhm: f64, amplitude: f64) -> Self {
        Self {
            center,
            hwhm,
            amplitude,
            dispersion: 0.0,
        }
    }

    /// `∫ L dω/2π`; the dispersive part integrates to zero.
    pub fn area(&self) -> f64 {
        0.5 * self.amplitude * self.hwhm
    }
}

pub fn lorentzian(omega: f64, peak: &Peak) -> f64 {
    let d = omega - peak.center;
    let h = peak.hwhm;
    (peak.amplitude * h * h + peak.dispersion * h * d) / (d * d + h * h)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Features {
    /// Sorted by center.
    pub peaks: Vec<Peak>,
    /// Mean full width at half maximum of the fitted peaks.
    pub gamma_eff: Option<f64>,
    /// Half the peak separation; zero for a single peak.
    pub delta_eff: Option<f64>,
    pub total_power: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_error: Option<String>,
}

impl Features {
    pub fn unfitted(total_power: f64, reason: String) -> Self {
        Self {
            peaks: Vec::new(),
            gamma_eff: None,
            delta_eff: None,
            total_power,
            fit_error: Some(reason),
        }
    }
}

/// Fraction of the grid at each end used to estimate the noise level.
const EDGE_FRACTION: f64 = 0.05;
/// Relative guard on the detection threshold for noiseless spectra.
const RELATIVE_GUARD: f64 = 1e-3;
/// Excess below this fraction of the floor is rounding noise.
const ROUNDING_LEVEL: f64 = 1e-12;

fn detection_threshold(excess: &[f64], floor: f64) -> f64 {
    let n = excess.len();
    let k = ((n as f64 * EDGE_FRACTION) as usize).max(2).min(n / 2);
    let edges: Vec<f64> = excess[..k].iter().chain(&excess[n - k..]).copied().collect();
    let mean = edges.iter().sum::<f64>() / edges.len() as f64;
    let var = edges.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (edges.len() - 1) as f64;
    let peak = excess.iter().copied().fold(0.0, f64::max);
    (3.0 * var.sqrt() + RELATIVE_GUARD * peak).max(ROUNDING_LEVEL * floor.abs())
}

/// Indices of local maxima (negative discrete curvature) above threshold,
/// highest first, at most two.
fn find_peaks(excess: &[f64], threshold: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (1..excess.len() - 1)
        .filter(|&i| excess[i] > threshold && excess[i] > excess[i - 1] && excess[i] >= excess[i + 1])
        .collect();
    idx.sort_by(|&a, &b| excess[b].total_cmp(&excess[a]));
    idx.truncate(2);
    idx
}

fn initial_hwhm(omega: &[f64], excess: &[f64], i: usize) -> f64 {
    let half = excess[i] / 2.0;
    let cross = |mut range: Box<dyn Iterator<Item = usize>>| -> Option<f64> {
        range.find(|&k| excess[k] <= half).map(|k| (omega[k] - omega[i]).abs())
    };
    let left = cross(Box::new((0..i).rev()));
    let right = cross(Box::new(i + 1..omega.len()));
    match (left, right) {
        (Some(l), Some(r)) => l.min(r),
        (Some(v), None) | (None, Some(v)) => v,
        (None, None) => (omega[omega.len() - 1] - omega[0]) / 4.0,
    }
}

const PARAMS_PER_PEAK: usize = 4;

fn peak_of(q: &[f64]) -> Peak {
    Peak {
        amplitude: q[0],
        center: q[1],
        hwhm: q[2],
        dispersion: q[3],
    }
}

fn model(omega: f64, p: &[f64]) -> f64 {
    p.chunks(PARAMS_PER_PEAK).map(|q| lorentzian(omega, &peak_of(q))).sum()
}

fn cost(omega: &[f64], y: &[f64], p: &[f64]) -> f64 {
    omega.iter().zip(y).map(|(&w, &v)| (model(w, p) - v).powi(2)).sum()
}

/// Levenberg–Marquardt least squares for a sum of Lorentzians.
fn levenberg_marquardt(omega: &[f64], y: &[f64], p0: Vec<f64>) -> Result<Vec<f64>> {
    let n = omega.len();
    let np = p0.len();
    let mut p = p0;
    let mut c = cost(omega, y, &p);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let mut jac = DMatrix::<f64>::zeros(n, np);
        let mut r = DVector::<f64>::zeros(n);
        for (i, &w) in omega.iter().enumerate() {
            r[i] = model(w, &p) - y[i];
            for (k, q) in p.chunks(PARAMS_PER_PEAK).enumerate() {
                let (a, ctr, h, b) = (q[0], q[1], q[2], q[3]);
                let d = w - ctr;
                let den = d * d + h * h;
                let den2 = den * den;
                let col = PARAMS_PER_PEAK * k;
                jac[(i, col)] = h * h / den;
                jac[(i, col + 1)] = (2.0 * a * h * h * d - b * h * (h * h - d * d)) / den2;
                jac[(i, col + 2)] = (2.0 * a * h * d * d + b * d * (d * d - h * h)) / den2;
                jac[(i, col + 3)] = h * d / den;
            }
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        loop {
            let mut lhs = jtj.clone();
            for k in 0..np {
                lhs[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let step = lhs
                .lu()
                .solve(&(-&jtr))
                .ok_or(Error::Fit("singular normal equations".into()))?;
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let ct = cost(omega, y, &trial);
            if ct.is_finite() && ct < c {
                let improvement = (c - ct) / c.max(f64::MIN_POSITIVE);
                p = trial;
                c = ct;
                lambda = (lambda / 3.0).max(1e-12);
                if improvement < 1e-14 {
                    return Ok(p);
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e12 {
                // no downhill step left: converged to machine precision
                return Ok(p);
            }
        }
    }
    Ok(p)
}

/// Detects up to two peaks in `psd - floor` and fits that many Lorentzians.
///
/// A peak is a local maximum above `3σ` of the edge fluctuations plus a
/// small relative guard. `total_power` is left at zero for the caller.
pub fn extract_features(omega: &[f64], psd: &[f64], floor: f64) -> Result<Features> {
    if omega.len() != psd.len() || omega.len() < 5 {
        return Err(Error::Fit("need at least 5 matching samples".into()));
    }
    let excess: Vec<f64> = psd.iter().map(|s| s - floor).collect();
    let threshold = detection_threshold(&excess, floor);
    let found = find_peaks(&excess, threshold);
    if found.is_empty() {
        return Ok(Features {
            peaks: Vec::new(),
            gamma_eff: None,
            delta_eff: None,
            total_power: 0.0,
            fit_error: None,
        });
    }

    let mut p0 = Vec::with_capacity(PARAMS_PER_PEAK * found.len());
    for &i in &found {
        p0.extend([excess[i], omega[i], initial_hwhm(omega, &excess, i), 0.0]);
    }
    let p = levenberg_marquardt(omega, &excess, p0)?;
    let mut peaks: Vec<Peak> = p
        .chunks(PARAMS_PER_PEAK)
        .map(|q| {
            let mut pk = peak_of(q);
            // the line shape is even in w up to the sign of the dispersive part
            if pk.hwhm < 0.0 {
                pk.hwhm = -pk.hwhm;
                pk.dispersion = -pk.dispersion;
            }
            pk
        })
        .collect();
    if peaks
        .iter()
        .any(|pk| !(pk.amplitude.is_finite() && pk.center.is_finite() && pk.dispersion.is_finite() && pk.hwhm > 0.0))
    {
        return Err(Error::Fit(format!("degenerate parameters {peaks:?}")));
    }
    peaks.sort_by(|a, b| a.center.total_cmp(&b.center));

    let gamma_eff = 2.0 * peaks.iter().map(|pk| pk.hwhm).sum::<f64>() / peaks.len() as f64;
    let delta_eff = match peaks.as_slice() {
        [a, b] => (b.center - a.center) / 2.0,
        _ => 0.0,
    };
    Ok(Features {
        peaks,
        gamma_eff: Some(gamma_eff),
        delta_eff: Some(delta_eff),
        total_power: 0.0,
        fit_error: None,
    })
}
