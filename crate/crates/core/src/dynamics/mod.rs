//! Seeded time-domain integration of the linear Langevin equations.
//!
//! Trajectories integrate `dx = M x dt + dW` with `E[dW dWᵀ] = D dt`, where
//! `D` is the diffusion matrix of [`crate::spectra::diffusion_matrix`], so the
//! stationary statistics match the spectra module exactly.
//!
//! Randomness comes from ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded with
//! `seed_from_u64`; Gaussian increments use the ziggurat sampler of
//! `rand_distr::StandardNormal`, drawn four per step in quadrature order.
//! Results are bitwise reproducible for a fixed seed on one build.

mod growth;
mod nonrwa;
mod stats;

pub use growth::{ensemble_growth_rate, growth_rate, GrowthEstimate, GROWTH_RATIO};
pub use nonrwa::{brute_force_nonrwa, nonrwa_floquet_exponent, nonrwa_matrix, CouplingWaveform, NonRwaOptions};
pub use stats::{sample_covariance, stationary_covariance, welch_psd, CovarianceEstimate, WelchEstimate};

use std::io::Write;

use nalgebra::{Matrix4, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, require_positive, Error, Result};
use crate::linalg;
use crate::model::{build_dynamical_matrix, DriveConfig, SystemParams};
use crate::spectra::{diffusion_matrix, NoiseModel};

pub const TRAJECTORY_FORMAT: &str = "twotone.trajectory/1";

/// Default divergence bound relative to the reference amplitude.
pub const DEFAULT_DIVERGENCE_FACTOR: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EulerMaruyama,
    /// Exact Ornstein–Uhlenbeck transition per step (matrix exponential).
    ExactOuStep,
    /// Deterministic fourth-order Runge–Kutta, used by the non-RWA model.
    RungeKutta4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationOptions {
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub scheme: Scheme,
    /// Noise inputs; `None` integrates the deterministic system.
    pub noise: Option<NoiseModel>,
    /// Initial state, zero when absent.
    pub x0: Option<[f64; 4]>,
    pub divergence_factor: f64,
    /// Keep every `decimation`-th sample.
    pub decimation: usize,
}

impl SimulationOptions {
    pub fn new(dt: f64, t_end: f64, seed: u64) -> Self {
        Self {
            dt,
            t_end,
            seed,
            scheme: Scheme::EulerMaruyama,
            noise: None,
            x0: None,
            divergence_factor: DEFAULT_DIVERGENCE_FACTOR,
            decimation: 1,
        }
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = Some(noise);
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_x0(mut self, x0: [f64; 4]) -> Self {
        self.x0 = Some(x0);
        self
    }

    pub fn with_decimation(mut self, decimation: usize) -> Self {
        self.decimation = decimation;
        self
    }

    /// Number of integration steps, `floor(T/dt)`.
    pub fn steps(&self) -> usize {
        // tolerate T/dt landing a hair below an integer
        (self.t_end / self.dt * (1.0 + 4.0 * f64::EPSILON)).floor() as usize
    }

    fn validate(&self) -> Result<()> {
        require_positive("dt", self.dt)?;
        require_positive("t_end", self.t_end)?;
        if self.dt > self.t_end {
            return Err(invalid("dt", "must not exceed t_end"));
        }
        if self.decimation == 0 {
            return Err(invalid("decimation", "must be >= 1"));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(invalid("divergence_factor", "must be > 1"));
        }
        if let Some(x0) = self.x0 {
            if !x0.iter().all(|v| v.is_finite()) {
                return Err(invalid("x0", "must be finite"));
            }
        }
        if let Some(n) = &self.noise {
            n.validate()?;
        }
        Ok(())
    }
}

/// Spurious growth rate Euler–Maruyama adds to the least stable mode,
/// `ln|1 + λ dt|/dt - Re λ`, about `|Im λ|² dt / 2` for small steps.
pub fn euler_rate_bias(params: &SystemParams, drive: &DriveConfig, dt: f64) -> Result<f64> {
    let m = build_dynamical_matrix(params, drive)?;
    let eig = linalg::eigenvalues(m.entries())?;
    let lead = eig
        .iter()
        .max_by(|a, b| a.re.total_cmp(&b.re))
        .copied()
        .unwrap_or_default();
    Ok((1.0 + lead * dt).norm().ln() / dt - lead.re)
}

/// Largest Euler–Maruyama step, `0.01 / max(κ, |Δc|, |Δm|, g)`.
pub fn max_euler_dt(params: &SystemParams, drive: &DriveConfig) -> f64 {
    let rate = params
        .kappa()
        .max(drive.delta_c.abs())
        .max(drive.effective_delta_m(params).abs())
        .max(params.g());
    0.01 / rate
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    /// `[Xa, Ya, Xb, Yb]` per stored sample.
    pub states: Vec<[f64; 4]>,
    pub seed: u64,
    pub dt: f64,
    pub scheme: Scheme,
    pub params: SystemParams,
    pub drive: DriveConfig,
    pub noise: Option<NoiseModel>,
    pub decimation: usize,
    /// Set when integration stopped at the divergence bound; the last stored
    /// sample is the first one beyond it.
    pub diverged: bool,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn norms(&self) -> Vec<f64> {
        self.states.iter().map(|x| Vector4::from(*x).norm()).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "xa", "ya", "xb", "yb"])?;
        for (t, x) in self.times.iter().zip(&self.states) {
            out.write_record([
                t.to_string(),
                x[0].to_string(),
                x[1].to_string(),
                x[2].to_string(),
                x[3].to_string(),
            ])?;
        }
        out.flush()
    }

    /// Metadata written next to the CSV samples.
    pub fn sidecar_json(&self) -> serde_json::Value {
        serde_json::json!({
            "format": TRAJECTORY_FORMAT,
            "seed": self.seed,
            "dt": self.dt,
            "scheme": self.scheme,
            "params": self.params,
            "drive": self.drive,
            "noise": self.noise,
            "decimation": self.decimation,
            "diverged": self.diverged,
            "samples": self.len(),
            "t_end": self.times.last(),
        })
    }
}

pub(crate) struct Recorder {
    times: Vec<f64>,
    states: Vec<[f64; 4]>,
    decimation: usize,
    bound: f64,
}

impl Recorder {
    pub(crate) fn new(steps: usize, decimation: usize, bound: f64) -> Self {
        let cap = steps / decimation + 2;
        Self {
            times: Vec::with_capacity(cap),
            states: Vec::with_capacity(cap),
            decimation,
            bound,
        }
    }

    /// Stores step `n` if due; returns `Ok(true)` once the bound is exceeded.
    pub(crate) fn push(&mut self, n: usize, dt: f64, x: &Vector4<f64>) -> Result<bool> {
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { step: n });
        }
        let beyond = x.norm() > self.bound;
        if n.is_multiple_of(self.decimation) || beyond {
            self.times.push(n as f64 * dt);
            self.states.push([x[0], x[1], x[2], x[3]]);
        }
        Ok(beyond)
    }

    pub(crate) fn finish(
        mut self,
        steps: usize,
        dt: f64,
        last: &Vector4<f64>,
        diverged: bool,
    ) -> (Vec<f64>, Vec<[f64; 4]>) {
        let t_last = steps as f64 * dt;
        if !diverged && self.times.last() != Some(&t_last) {
            self.times.push(t_last);
            self.states.push([last[0], last[1], last[2], last[3]]);
        }
        (self.times, self.states)
    }
}

/// Reference amplitude for the divergence bound: `|x0|`, or the stationary
/// noise scale `√(tr D / (κ + Γm))` when starting from rest.
pub(crate) fn reference_amplitude(x0: &Vector4<f64>, diffusion: Option<&Matrix4<f64>>, params: &SystemParams) -> f64 {
    let n = x0.norm();
    match diffusion {
        _ if n > 0.0 => n,
        Some(d) => (d.trace() / (params.kappa() + params.gamma_m())).sqrt(),
        None => 0.0,
    }
}

/// Euler–Maruyama trajectory with optional noise.
pub fn simulate(
    params: &SystemParams,
    drive: &DriveConfig,
    noise: Option<&NoiseModel>,
    dt: f64,
    t_end: f64,
    seed: u64,
) -> Result<TrajectoryRecord> {
    let mut opts = SimulationOptions::new(dt, t_end, seed);
    opts.noise = noise.copied();
    simulate_with(params, drive, &opts)
}

pub fn simulate_with(params: &SystemParams, drive: &DriveConfig, opts: &SimulationOptions) -> Result<TrajectoryRecord> {
    opts.validate()?;
    if opts.scheme == Scheme::RungeKutta4 {
        return Err(invalid(
            "scheme",
            "Runge-Kutta integration is reserved for the non-RWA model",
        ));
    }
    if opts.scheme == Scheme::EulerMaruyama {
        let limit = max_euler_dt(params, drive);
        if opts.dt > limit * (1.0 + 1e-12) {
            return Err(invalid(
                "dt",
                format!("Euler-Maruyama needs dt <= {limit:e}, got {:e}", opts.dt),
            ));
        }
    }
    let m = *build_dynamical_matrix(params, drive)?.entries();
    let diffusion = opts.noise.map(|n| diffusion_matrix(params, &n));
    let x0 = Vector4::from(opts.x0.unwrap_or([0.0; 4]));
    let bound = opts.divergence_factor * reference_amplitude(&x0, diffusion.as_ref(), params);
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(invalid(
            "x0",
            "zero initial state without noise has no reference amplitude",
        ));
    }

    let dt = opts.dt;
    let (propagator, noise_factor) = match opts.scheme {
        Scheme::EulerMaruyama => (
            Matrix4::identity() + m * dt,
            diffusion.map(|d| linalg::psd_factor(&d) * dt.sqrt()),
        ),
        _ => {
            let d = diffusion.unwrap_or_else(Matrix4::zeros);
            let (phi, q) = linalg::van_loan(&m, &d, dt);
            (phi, diffusion.map(|_| linalg::psd_factor(&q)))
        }
    };

    let steps = opts.steps();
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let mut rec = Recorder::new(steps, opts.decimation, bound);
    let mut x = x0;
    let mut diverged = rec.push(0, dt, &x)?;
    let mut n = 0;
    while n < steps && !diverged {
        x = propagator * x;
        if let Some(l) = &noise_factor {
            let z = Vector4::from_fn(|_, _| StandardNormal.sample(&mut rng));
            x += l * z;
        }
        n += 1;
        diverged = rec.push(n, dt, &x)?;
    }
    let (times, states) = rec.finish(n, dt, &x, diverged);
    Ok(TrajectoryRecord {
        times,
        states,
        seed: opts.seed,
        dt,
        scheme: opts.scheme,
        params: *params,
        drive: *drive,
        noise: opts.noise,
        decimation: opts.decimation,
        diverged,
    })
}

/// Independent trajectories for each seed, returned in seed order.
pub fn ensemble(
    params: &SystemParams,
    drive: &DriveConfig,
    opts: &SimulationOptions,
    seeds: &[u64],
) -> Result<Vec<TrajectoryRecord>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let mut o = opts.clone();
            o.seed = seed;
            simulate_with(params, drive, &o)
        })
        .collect()
}
