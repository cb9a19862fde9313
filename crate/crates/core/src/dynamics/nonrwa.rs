//! The linearised model before the rotating-wave approximation.
//!
//! The mechanics is kept in the lab frame (`Δm → -Ωm`) and the coupling is
//! modulated explicitly. For balanced two-tone driving the lab-frame coupling
//! is `2g cos((Ωm + Δm) t)`: averaging over the fast rotation halves it, so
//! the rotating-wave limit reproduces the time-independent model with
//! coupling `g`.

use std::f64::consts::PI;

use nalgebra::{Matrix4, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{reference_amplitude, Recorder, Scheme, TrajectoryRecord, DEFAULT_DIVERGENCE_FACTOR};
use crate::error::{invalid, require_positive, Result};
use crate::linalg;
use crate::model::{DriveConfig, DriveMode, SystemParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingWaveform {
    /// `g(t) = 2g cos((Ωm + Δm) t)`.
    TwoTone,
    /// `g(t) = g`, a single tone at cavity detuning `Δc`.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonRwaOptions {
    pub dt: f64,
    pub t_end: f64,
    /// Seeds the random initial state.
    pub seed: u64,
    pub waveform: CouplingWaveform,
    pub divergence_factor: f64,
    pub decimation: usize,
}

impl NonRwaOptions {
    pub fn new(dt: f64, t_end: f64, seed: u64) -> Self {
        Self {
            dt,
            t_end,
            seed,
            waveform: CouplingWaveform::TwoTone,
            divergence_factor: DEFAULT_DIVERGENCE_FACTOR,
            decimation: 1,
        }
    }
}

fn modulation_frequency(params: &SystemParams, drive: &DriveConfig, waveform: CouplingWaveform) -> Result<f64> {
    match waveform {
        CouplingWaveform::Constant => Ok(0.0),
        CouplingWaveform::TwoTone => {
            if drive.mode != DriveMode::TwoToneBalanced {
                return Err(invalid(
                    "drive",
                    "the two-tone waveform needs a balanced two-tone drive",
                ));
            }
            let w = params.omega_m() + drive.delta_m;
            if !(w > 0.0) {
                return Err(invalid("delta_m", "modulation frequency Ωm + Δm must be > 0"));
            }
            Ok(w)
        }
    }
}

fn coupling_at(params: &SystemParams, waveform: CouplingWaveform, modulation: f64, t: f64) -> f64 {
    match waveform {
        CouplingWaveform::TwoTone => 2.0 * params.g() * (modulation * t).cos(),
        CouplingWaveform::Constant => params.g(),
    }
}

fn lab_matrix(params: &SystemParams, delta_c: f64, coupling: f64) -> Matrix4<f64> {
    let hk = params.kappa() / 2.0;
    let hg = params.gamma_m() / 2.0;
    let om = params.omega_m();
    let c = 2.0 * coupling;
    #[rustfmt::skip]
    let m = Matrix4::new(
        -hk, -delta_c, 0.0, 0.0,
        delta_c, -hk, c, 0.0,
        0.0, 0.0, -hg, om,
        c, 0.0, -om, -hg,
    );
    m
}

/// Instantaneous drift matrix of the non-RWA model at time `t`.
pub fn nonrwa_matrix(
    params: &SystemParams,
    drive: &DriveConfig,
    waveform: CouplingWaveform,
    t: f64,
) -> Result<Matrix4<f64>> {
    let w = modulation_frequency(params, drive, waveform)?;
    Ok(lab_matrix(params, drive.delta_c, coupling_at(params, waveform, w, t)))
}

struct Rk4<'a> {
    params: &'a SystemParams,
    delta_c: f64,
    waveform: CouplingWaveform,
    modulation: f64,
}

impl Rk4<'_> {
    fn matrix(&self, t: f64) -> Matrix4<f64> {
        lab_matrix(
            self.params,
            self.delta_c,
            coupling_at(self.params, self.waveform, self.modulation, t),
        )
    }

    fn step<const C: usize>(&self, t: f64, h: f64, x: &nalgebra::SMatrix<f64, 4, C>) -> nalgebra::SMatrix<f64, 4, C> {
        let m0 = self.matrix(t);
        let mh = self.matrix(t + 0.5 * h);
        let m1 = self.matrix(t + h);
        let k1 = m0 * x;
        let k2 = mh * (x + k1 * (0.5 * h));
        let k3 = mh * (x + k2 * (0.5 * h));
        let k4 = m1 * (x + k3 * h);
        x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
    }
}

fn check_frequencies(params: &SystemParams, dt: f64) -> Result<()> {
    let limit = 0.01 / params.omega_m();
    if dt > limit * (1.0 + 1e-12) {
        return Err(invalid("dt", format!("must resolve Ωm: dt <= {limit:e}, got {dt:e}")));
    }
    if params.omega_m() < 10.0 * params.kappa() {
        log::warn!(
            "Ωm/κ = {:.2} is below 10; the rotating-wave comparison is not meaningful",
            params.omega_m() / params.kappa()
        );
    }
    Ok(())
}

/// Noise-free RK4 integration of the non-RWA model from a random initial
/// state drawn from `seed`.
pub fn brute_force_nonrwa(
    params: &SystemParams,
    drive: &DriveConfig,
    opts: &NonRwaOptions,
) -> Result<TrajectoryRecord> {
    require_positive("dt", opts.dt)?;
    require_positive("t_end", opts.t_end)?;
    if opts.decimation == 0 {
        return Err(invalid("decimation", "must be >= 1"));
    }
    if !(opts.divergence_factor > 1.0) {
        return Err(invalid("divergence_factor", "must be > 1"));
    }
    check_frequencies(params, opts.dt)?;
    let rk = Rk4 {
        params,
        delta_c: drive.delta_c,
        waveform: opts.waveform,
        modulation: modulation_frequency(params, drive, opts.waveform)?,
    };

    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let mut x: Vector4<f64> = Vector4::from_fn(|_, _| StandardNormal.sample(&mut rng));
    let bound = opts.divergence_factor * reference_amplitude(&x, None, params);
    let steps = (opts.t_end / opts.dt * (1.0 + 4.0 * f64::EPSILON)).floor() as usize;
    let mut rec = Recorder::new(steps, opts.decimation, bound);
    let mut diverged = rec.push(0, opts.dt, &x)?;
    let mut n = 0;
    while n < steps && !diverged {
        x = rk.step(n as f64 * opts.dt, opts.dt, &x);
        n += 1;
        diverged = rec.push(n, opts.dt, &x)?;
    }
    let (times, states) = rec.finish(n, opts.dt, &x, diverged);
    Ok(TrajectoryRecord {
        times,
        states,
        seed: opts.seed,
        dt: opts.dt,
        scheme: Scheme::RungeKutta4,
        params: *params,
        drive: *drive,
        noise: None,
        decimation: opts.decimation,
        diverged,
    })
}

/// Largest Floquet exponent `max ln|μ| / T` of the non-RWA model.
///
/// The monodromy matrix over one modulation period `T = 2π/(Ωm + Δm)` (or
/// `2π/Ωm` for a constant coupling) is integrated with RK4 in
/// `steps_per_period` steps. A positive exponent means every generic
/// trajectory eventually diverges at that rate.
pub fn nonrwa_floquet_exponent(
    params: &SystemParams,
    drive: &DriveConfig,
    waveform: CouplingWaveform,
    steps_per_period: usize,
) -> Result<f64> {
    if steps_per_period < 8 {
        return Err(invalid("steps_per_period", "needs at least 8"));
    }
    let modulation = modulation_frequency(params, drive, waveform)?;
    let period = 2.0 * PI / if modulation > 0.0 { modulation } else { params.omega_m() };
    let h = period / steps_per_period as f64;
    check_frequencies(params, h)?;
    let rk = Rk4 {
        params,
        delta_c: drive.delta_c,
        waveform,
        modulation,
    };
    let mut phi = Matrix4::<f64>::identity();
    for n in 0..steps_per_period {
        phi = rk.step(n as f64 * h, h, &phi);
    }
    let mu = linalg::eigenvalues(&phi)?;
    Ok(mu.iter().map(|z| z.norm().ln()).fold(f64::NEG_INFINITY, f64::max) / period)
}
