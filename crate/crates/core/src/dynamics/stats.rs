use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use super::TrajectoryRecord;
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::model::{build_dynamical_matrix, DriveConfig, SystemParams};
use crate::spectra::{diffusion_matrix, NoiseModel};
use crate::stability::{classify, DEFAULT_TOL};

/// Stationary covariance `P` solving `M P + P Mᵀ + D = 0`.
pub fn stationary_covariance(params: &SystemParams, drive: &DriveConfig, noise: &NoiseModel) -> Result<Matrix4<f64>> {
    let m = build_dynamical_matrix(params, drive)?;
    let report = classify(&m, DEFAULT_TOL)?;
    if !report.is_stable() {
        return Err(Error::UnstablePoint { margin: report.margin });
    }
    linalg::lyapunov(m.entries(), &diffusion_matrix(params, noise))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceEstimate {
    pub mean: Matrix4<f64>,
    /// Standard error of each entry across ensemble members.
    pub std_err: Matrix4<f64>,
    pub members: usize,
}

/// Ensemble estimate of `E[x xᵀ]` from time averages over `t ≥ burn_in`.
///
/// Each member contributes one time-averaged second-moment matrix; the
/// spread across members gives the standard errors, so members must be
/// independent.
pub fn sample_covariance(records: &[TrajectoryRecord], burn_in: f64) -> Result<CovarianceEstimate> {
    if records.len() < 2 {
        return Err(invalid("records", "need at least two members for error bars"));
    }
    let per_member = records
        .iter()
        .map(|r| {
            let mut acc = Matrix4::zeros();
            let mut n = 0usize;
            for (t, x) in r.times.iter().zip(&r.states) {
                if *t >= burn_in {
                    let v = Vector4::from(*x);
                    acc += v * v.transpose();
                    n += 1;
                }
            }
            if n == 0 {
                Err(invalid("burn_in", "leaves no samples"))
            } else {
                Ok(acc / n as f64)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let k = per_member.len() as f64;
    let mean = per_member.iter().sum::<Matrix4<f64>>() / k;
    let var = per_member
        .iter()
        .map(|c| (c - mean).map(|v| v * v))
        .sum::<Matrix4<f64>>()
        / (k - 1.0);
    Ok(CovarianceEstimate {
        mean,
        std_err: var.map(|v| (v / k).sqrt()),
        members: per_member.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WelchEstimate {
    /// Angular frequencies, ascending.
    pub omega: Vec<f64>,
    /// Two-sided density per unit `dω/2π`.
    pub psd: Vec<f64>,
    /// Standard error of each bin from the spread across segments.
    pub std_err: Vec<f64>,
    pub segments: usize,
}

/// Welch estimate of `S(ω) = ∫⟨x(t) x(0)⟩ e^{iωt} dt` for a real signal.
///
/// Hann-windowed, non-overlapping segments of `segment_len` samples, so the
/// segment periodograms are nearly independent and their spread gives honest
/// error bars.
pub fn welch_psd(signal: &[f64], dt: f64, segment_len: usize) -> Result<WelchEstimate> {
    if segment_len < 4 {
        return Err(invalid("segment_len", "needs at least 4 samples"));
    }
    let segments = signal.len() / segment_len;
    if segments < 2 {
        return Err(invalid("segment_len", "signal must hold at least two segments"));
    }
    let l = segment_len;
    let window: Vec<f64> = (0..l)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / l as f64).cos())
        .collect();
    let norm = dt / window.iter().map(|w| w * w).sum::<f64>();
    // e^{+iωt} kernel: the unnormalised inverse transform
    let fft = FftPlanner::new().plan_fft_inverse(l);

    let mut sum = vec![0.0; l];
    let mut sum_sq = vec![0.0; l];
    let mut buf = vec![Complex64::new(0.0, 0.0); l];
    for s in 0..segments {
        for (n, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(signal[s * l + n] * window[n], 0.0);
        }
        fft.process(&mut buf);
        for k in 0..l {
            let p = buf[k].norm_sqr() * norm;
            sum[k] += p;
            sum_sq[k] += p * p;
        }
    }

    let seg = segments as f64;
    let d_omega = 2.0 * std::f64::consts::PI / (l as f64 * dt);
    let half = l / 2;
    let mut omega = Vec::with_capacity(l);
    let mut psd = Vec::with_capacity(l);
    let mut std_err = Vec::with_capacity(l);
    // shift so that frequencies ascend from -l/2
    for j in 0..l {
        let k = (j + l - half) % l;
        let signed = if k >= l - half { k as f64 - l as f64 } else { k as f64 };
        let mean = sum[k] / seg;
        let var = ((sum_sq[k] / seg - mean * mean) * seg / (seg - 1.0)).max(0.0);
        omega.push(signed * d_omega);
        psd.push(mean);
        std_err.push((var / seg).sqrt());
    }
    Ok(WelchEstimate {
        omega,
        psd,
        std_err,
        segments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn welch_of_white_noise_is_flat() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
        let dt = 0.1;
        // variance σ² sampled every dt has density σ² dt
        let x: Vec<f64> = (0..256 * 400).map(|_| StandardNormal.sample(&mut rng)).collect();
        let w = welch_psd(&x, dt, 256).unwrap();
        assert_eq!(w.segments, 400);
        assert_eq!(w.omega.len(), 256);
        assert!(w.omega.windows(2).all(|p| p[1] > p[0]));
        assert_relative_eq!(w.omega[128], 0.0);
        let mean = w.psd.iter().sum::<f64>() / 256.0;
        assert_relative_eq!(mean, dt, max_relative = 0.02);
    }

    #[test]
    fn welch_rejects_short_signals() {
        assert!(welch_psd(&[0.0; 10], 0.1, 8).is_err());
    }
}
