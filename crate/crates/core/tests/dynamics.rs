use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector, Matrix4};
use twotone::dynamics::{
    brute_force_nonrwa, ensemble, ensemble_growth_rate, growth_rate, max_euler_dt, sample_covariance, simulate,
    simulate_with, stationary_covariance, welch_psd, CouplingWaveform, NonRwaOptions, Scheme, SimulationOptions,
    TrajectoryRecord,
};
use twotone::spectra::{diffusion_matrix, quadrature_psd, NoiseModel};
use twotone::stability::DEFAULT_TOL;
use twotone::{build_dynamical_matrix, classify, DriveConfig, Error, FixedPointClass, SystemParams};

fn fig5() -> SystemParams {
    SystemParams::from_cooperativity(1.0, 1e-2, 10.0, 2.0).unwrap()
}

/// `M P + P Mᵀ + D = 0` solved as a 16×16 linear system.
fn lyapunov_by_kronecker(m: &Matrix4<f64>, d: &Matrix4<f64>) -> Matrix4<f64> {
    let mut a = DMatrix::<f64>::zeros(16, 16);
    let mut b = DVector::<f64>::zeros(16);
    // unknown P[(i, j)] sits at 4 i + j
    for i in 0..4 {
        for j in 0..4 {
            let row = 4 * i + j;
            b[row] = -d[(i, j)];
            for k in 0..4 {
                a[(row, 4 * k + j)] += m[(i, k)];
                a[(row, 4 * i + k)] += m[(j, k)];
            }
        }
    }
    let p = a.lu().solve(&b).unwrap();
    Matrix4::from_fn(|i, j| p[4 * i + j])
}

fn report(p: &SystemParams, d: &DriveConfig) -> twotone::StabilityReport {
    classify(&build_dynamical_matrix(p, d).unwrap(), DEFAULT_TOL).unwrap()
}

#[test]
fn decaying_eigenvector_follows_its_eigenvalue() {
    let p = fig5();
    // between phase locking and threshold the slow pair is real
    let d = DriveConfig::two_tone_normalized(&p, 1.0, 3.9);
    let r = report(&p, &d);
    assert_eq!(r.classification, FixedPointClass::StableNode);
    let lambda = r.eigenvalues[r.offending].re;
    let m = *build_dynamical_matrix(&p, &d).unwrap().entries();
    let svd = (m - Matrix4::identity() * lambda).svd(false, true);
    let v_t = svd.v_t.unwrap();
    let k = svd.singular_values.imin();
    let v: [f64; 4] = std::array::from_fn(|i| v_t[(k, i)]);

    let dt = max_euler_dt(&p, &d);
    let t_end = 5.0 / lambda.abs();
    let rec = simulate_with(&p, &d, &SimulationOptions::new(dt, t_end, 0).with_x0(v)).unwrap();
    let norms = rec.norms();
    for (t, n) in rec.times.iter().zip(&norms).step_by(997) {
        assert_relative_eq!(*n, (lambda * t).exp(), max_relative = 0.01);
    }
    assert_relative_eq!(*norms.last().unwrap(), (-5.0f64).exp(), max_relative = 0.01);
}

#[test]
fn ensemble_growth_matches_margin_in_both_classes() {
    let p = fig5();
    let cases = [
        (DriveConfig::two_tone_normalized(&p, 0.5, 1.0), FixedPointClass::Saddle),
        (DriveConfig::two_tone(0.8, -0.8), FixedPointClass::UnstableSpiral),
    ];
    for (d, class) in cases {
        let r = report(&p, &d);
        assert_eq!(r.classification, class);
        // exact transitions: Euler-Maruyama inflates the rate of an
        // oscillating mode by about |Im λ|² dt / 2, comparable to a small margin
        let opts = SimulationOptions::new(0.05, 40.0 / r.margin, 0)
            .with_noise(NoiseModel::vacuum())
            .with_scheme(Scheme::ExactOuStep);
        let seeds: Vec<u64> = (0..32).collect();
        let members = ensemble(&p, &d, &opts, &seeds).unwrap();
        assert!(members.iter().all(|m| m.diverged));
        let est = ensemble_growth_rate(&members).unwrap();
        assert_relative_eq!(est.mean, r.margin, max_relative = 0.05);
    }
}

#[test]
fn halving_dt_barely_moves_growth_rate() {
    let p = fig5();
    let d = DriveConfig::two_tone_normalized(&p, 0.5, 1.0);
    let margin = report(&p, &d).margin;
    let dt = max_euler_dt(&p, &d);
    let rate = |h: f64| {
        let opts = SimulationOptions::new(h, 40.0 / margin, 7).with_x0([0.3, -0.2, 1.0, 0.5]);
        growth_rate(&simulate_with(&p, &d, &opts).unwrap()).unwrap()
    };
    let (a, b) = (rate(dt), rate(dt / 2.0));
    assert!((a - b).abs() < 0.01 * b.abs(), "{a} vs {b}");
}

#[test]
fn synthetic_exponential_rate() {
    let p = fig5();
    let times: Vec<f64> = (0..=1000).map(|k| k as f64 * 0.1).collect();
    let states = times.iter().map(|t| [(0.1 * t).exp(), 0.0, 0.0, 0.0]).collect();
    let rec = TrajectoryRecord {
        times,
        states,
        seed: 0,
        dt: 0.1,
        scheme: Scheme::EulerMaruyama,
        params: p,
        drive: DriveConfig::two_tone(0.0, 0.0),
        noise: None,
        decimation: 1,
        diverged: false,
    };
    assert_relative_eq!(growth_rate(&rec).unwrap(), 0.1, max_relative = 1e-6);
}

#[test]
fn stable_point_shows_no_growth() {
    let p = fig5();
    let d = DriveConfig::two_tone_normalized(&p, 0.5, -1.0);
    let rec = simulate(&p, &d, Some(&NoiseModel::vacuum()), max_euler_dt(&p, &d), 2000.0, 1).unwrap();
    assert!(!rec.diverged);
    assert!(matches!(growth_rate(&rec), Err(Error::NoGrowth(_))));
}

#[test]
fn trajectories_are_bitwise_reproducible() {
    let p = fig5();
    let d = DriveConfig::two_tone_normalized(&p, 0.3, -2.0);
    for scheme in [Scheme::EulerMaruyama, Scheme::ExactOuStep] {
        let opts = SimulationOptions::new(0.01, 50.0, 42)
            .with_noise(NoiseModel::new(3.0, 0.6, 0.8).unwrap())
            .with_scheme(scheme);
        let a = simulate_with(&p, &d, &opts).unwrap();
        let b = simulate_with(&p, &d, &opts).unwrap();
        assert_eq!(a, b);
        let bits = |r: &TrajectoryRecord| -> Vec<u64> { r.states.iter().flatten().map(|v| v.to_bits()).collect() };
        assert_eq!(bits(&a), bits(&b));
        let mut other = opts.clone();
        other.seed = 43;
        assert_ne!(simulate_with(&p, &d, &other).unwrap().states, a.states);
    }
}

#[test]
fn ensemble_order_does_not_depend_on_scheduling() {
    let p = fig5();
    let d = DriveConfig::two_tone_normalized(&p, 0.3, -2.0);
    let opts = SimulationOptions::new(0.01, 20.0, 0).with_noise(NoiseModel::vacuum());
    let forward = ensemble(&p, &d, &opts, &[5, 6, 7]).unwrap();
    let single = simulate_with(
        &p,
        &d,
        &SimulationOptions {
            seed: 6,
            ..opts.clone()
        },
    )
    .unwrap();
    assert_eq!(forward[1], single);
}

#[test]
fn lyapunov_solution_agrees_with_kronecker_oracle() {
    let p = fig5();
    let noise = NoiseModel::new(4.0, 0.7, 0.9).unwrap();
    for (dcn, dmn) in [(0.3, -2.0), (1.5, 6.0), (-0.4, 0.0)] {
        let d = DriveConfig::two_tone_normalized(&p, dcn, dmn);
        let m = *build_dynamical_matrix(&p, &d).unwrap().entries();
        let want = lyapunov_by_kronecker(&m, &diffusion_matrix(&p, &noise));
        let got = stationary_covariance(&p, &d, &noise).unwrap();
        assert_relative_eq!(got, want, max_relative = 1e-9, epsilon = 1e-9 * want.amax());
    }
}

#[test]
fn stationary_covariance_within_three_standard_errors() {
    let p = SystemParams::from_cooperativity(1.0, 0.05, 10.0, 1.5).unwrap();
    let noise = NoiseModel::new(2.0, 0.5, 1.0).unwrap();
    let d = DriveConfig::two_tone_normalized(&p, 0.3, -3.0);
    let m = *build_dynamical_matrix(&p, &d).unwrap().entries();
    let want = lyapunov_by_kronecker(&m, &diffusion_matrix(&p, &noise));
    let relax = 1.0 / report(&p, &d).margin.abs();
    let opts = SimulationOptions::new(0.05, 400.0 * relax, 100)
        .with_noise(noise)
        .with_scheme(Scheme::ExactOuStep);
    let seeds: Vec<u64> = (100..132).collect();
    let est = sample_covariance(&ensemble(&p, &d, &opts, &seeds).unwrap(), 20.0 * relax).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let z = (est.mean[(i, j)] - want[(i, j)]).abs() / est.std_err[(i, j)];
            assert!(
                z < 3.0,
                "P[{i}{j}] = {} vs {} ({z:.2} SE)",
                est.mean[(i, j)],
                want[(i, j)]
            );
        }
    }
}

#[test]
fn welch_spectrum_matches_frequency_domain() {
    let p = SystemParams::from_cooperativity(1.0, 0.05, 10.0, 1.5).unwrap();
    let noise = NoiseModel::new(2.0, 0.5, 1.0).unwrap();
    let d = DriveConfig::two_tone_normalized(&p, 0.3, -3.0);
    let dt = 0.1;
    let segment = 20_000;
    let segments = 64;
    let opts = SimulationOptions::new(dt, dt * (segment * segments) as f64, 9)
        .with_noise(noise)
        .with_scheme(Scheme::ExactOuStep);
    let rec = simulate_with(&p, &d, &opts).unwrap();
    // drop the first segment as burn-in
    let xb: Vec<f64> = rec.states[segment..].iter().map(|x| x[2]).collect();
    let est = welch_psd(&xb, dt, segment).unwrap();

    let m = *build_dynamical_matrix(&p, &d).unwrap().entries();
    let diff = diffusion_matrix(&p, &noise);
    let mut inside = 0;
    let mut total = 0;
    for ((w, s), se) in est.omega.iter().zip(&est.psd).zip(&est.std_err) {
        if w.abs() > 0.5 || *w == 0.0 {
            continue;
        }
        let want = quadrature_psd(&m, &diff, *w).unwrap()[(2, 2)].re;
        total += 1;
        if (s - want).abs() <= 3.0 * se {
            inside += 1;
        }
    }
    assert!(total > 300);
    assert!(
        inside as f64 >= 0.97 * total as f64,
        "{inside}/{total} bins within 3 SE"
    );
}

#[test]
fn non_rwa_two_tone_follows_the_rwa_threshold() {
    let p = SystemParams::from_cooperativity(1.0, 1e-2, 50.0, 2.0).unwrap();
    let dt = 0.01 / p.omega_m();
    // Δ̃c = 0.5: the effective model is unstable for 0.351 < Δ̃m < 2.849
    let inside = DriveConfig::two_tone_normalized(&p, 0.5, 1.5);
    let outside = DriveConfig::two_tone_normalized(&p, 0.5, 6.0);
    let t_end = 40.0 / report(&p, &inside).margin;
    let opts = NonRwaOptions {
        decimation: 100,
        ..NonRwaOptions::new(dt, t_end, 3)
    };
    assert!(brute_force_nonrwa(&p, &inside, &opts).unwrap().diverged);
    let bounded = brute_force_nonrwa(&p, &outside, &opts).unwrap();
    assert!(!bounded.diverged);
    let n = bounded.norms();
    assert!(n.last().unwrap() < &n[0]);
}

#[test]
fn constant_coupling_recovers_parametric_instability() {
    let base = SystemParams::from_cooperativity(1.0, 0.1, 20.0, 1.0).unwrap();
    let dt = 0.01 / base.omega_m();
    for (c, grows) in [(1.3, true), (0.7, false)] {
        let p = base.with_cooperativity(c).unwrap();
        let d = DriveConfig::single_tone_upper(&p, p.omega_m());
        // antidamping rate (C - 1) Γm / 2 in the resolved-sideband limit
        let t_end = 40.0 / (0.3 * p.gamma_m() / 2.0);
        let opts = NonRwaOptions {
            waveform: CouplingWaveform::Constant,
            decimation: 100,
            ..NonRwaOptions::new(dt, t_end, 5)
        };
        let rec = brute_force_nonrwa(&p, &d, &opts).unwrap();
        let n = rec.norms();
        assert_eq!(n.last().unwrap() > &(1e3 * n[0]), grows, "C = {c}");
    }
}

#[test]
fn euler_step_bound_is_enforced() {
    let p = fig5();
    let d = DriveConfig::two_tone_normalized(&p, 0.3, -2.0);
    let dt = max_euler_dt(&p, &d);
    assert!(
        simulate(&p, &d, None, 2.0 * dt, 10.0, 0).is_err(),
        "no reference amplitude and too coarse"
    );
    let coarse = SimulationOptions::new(2.0 * dt, 10.0, 0).with_noise(NoiseModel::vacuum());
    assert!(simulate_with(&p, &d, &coarse).is_err());
    let exact = coarse.with_scheme(Scheme::ExactOuStep);
    assert_eq!(simulate_with(&p, &d, &exact).unwrap().len(), 501);
}
