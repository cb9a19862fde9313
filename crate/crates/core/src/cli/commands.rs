use std::io::Write;
use std::sync::atomic::Ordering;

use rayon::prelude::*;
use serde_json::json;

use super::plot::{self, ColorScale, Heatmap, Overlay, Series};
use super::raster::{rasterize_nearest, read_scatter};
use super::{AxisUnits, CliError, Format, RunContext};
use crate::dynamics::{
    brute_force_nonrwa, ensemble_growth_rate, euler_rate_bias, max_euler_dt, nonrwa_floquet_exponent,
    sample_covariance, simulate_with, stationary_covariance, NonRwaOptions, Scheme, SimulationOptions,
    TrajectoryRecord,
};
use crate::model::{build_dynamical_matrix, DriveConfig, DriveMode, SystemParams};
use crate::spectra::{
    frequency_grid, mechanical_quanta, output_spectrum, sideband_power, SpectrumResult, SPECTRUM_FORMAT,
};
use crate::stability::{
    classify, corridor_half_width, marching_squares, stability_map_until, threshold_contour, ContourBranch,
    FixedPointClass, MapCell, Polyline, StabilityMap,
};

/// Axis scaling from normalized detunings to the displayed coordinates.
pub(super) struct View {
    pub fx: f64,
    pub fy: f64,
    pub x_label: &'static str,
    pub y_label: &'static str,
}

impl View {
    pub fn new(axes: AxisUnits, params: &SystemParams) -> Self {
        match axes {
            AxisUnits::Normalized => Self {
                fx: 1.0,
                fy: 1.0,
                x_label: "Δm/(Γm/2)",
                y_label: "Δc/(κ/2)",
            },
            AxisUnits::Kappa => Self {
                fx: params.gamma_m() / (2.0 * params.kappa()),
                fy: 0.5,
                x_label: "Δm/κ",
                y_label: "Δc/κ",
            },
        }
    }

    pub fn apply(&self, points: impl IntoIterator<Item = (f64, f64)>) -> Vec<(f64, f64)> {
        points.into_iter().map(|(x, y)| (x * self.fx, y * self.fy)).collect()
    }
}

/// Legend codes for class heatmaps.
pub(super) fn class_code(cell: &MapCell) -> f64 {
    match cell.class {
        Some(FixedPointClass::StableSpiral | FixedPointClass::StableNode) => 0.0,
        Some(FixedPointClass::Saddle) => 1.0,
        Some(FixedPointClass::UnstableSpiral) => 3.0,
        Some(FixedPointClass::UnstableNode) => 4.0,
        Some(FixedPointClass::Marginal) => 7.0,
        None => f64::NAN,
    }
}

pub(super) fn class_legend() -> Vec<(String, usize)> {
    [
        ("stable", 0),
        ("saddle", 1),
        ("unstable spiral", 3),
        ("unstable node", 4),
        ("marginal", 7),
    ]
    .into_iter()
    .map(|(s, c)| (s.to_string(), c))
    .collect()
}

/// Zero-margin iso-lines of a map in normalized coordinates. Rows that were
/// not computed are absent, so only the completed part is contoured.
pub(super) fn map_boundary(map: &StabilityMap) -> Vec<Polyline> {
    let xs = map.grid.delta_m_norm.values();
    let rows = map.cells.len() / xs.len().max(1);
    let ys: Vec<f64> = map.grid.delta_c_norm.values().into_iter().take(rows).collect();
    marching_squares(&xs, &ys, &map.margin_field(), 0.0)
}

/// Geometric sampling of `|Δ̃c|` across the unstable band, merged with the
/// configured axis so the analytic contour is smooth at any `C`.
pub(super) fn contour_samples(cooperativity: f64, axis_values: &[f64]) -> Vec<f64> {
    let mut xs = axis_values.to_vec();
    if let Some(inner) = corridor_half_width(cooperativity) {
        let outer = 1.0 / inner;
        let n = 400;
        xs.extend((0..n).map(|k| inner * (outer / inner).powf(k as f64 / (n - 1) as f64)));
    }
    xs
}

pub(super) fn write_polylines(
    ctx: &mut RunContext,
    stem: &str,
    artifact: &str,
    lines: &[(String, Vec<(f64, f64)>)],
    notes: &[String],
) -> Result<(), CliError> {
    match ctx.config.output.format {
        Format::Csv => {
            ctx.write_csv(&format!("{stem}.csv"), artifact, notes, |w| {
                let mut out = csv::Writer::from_writer(w);
                out.write_record(["curve", "delta_m_norm", "delta_c_norm"])?;
                for (name, pts) in lines {
                    for (x, y) in pts {
                        out.write_record([name.clone(), x.to_string(), y.to_string()])?;
                    }
                }
                out.flush()
            })?;
        }
        Format::Json => {
            let curves: Vec<_> = lines
                .iter()
                .map(|(name, pts)| json!({"curve": name, "points": pts}))
                .collect();
            ctx.write_json(
                &format!("{stem}.json"),
                artifact,
                json!({"notes": notes, "curves": curves}),
            )?;
        }
    }
    Ok(())
}

pub(super) fn branch_lines(prefix: &str, branches: &[ContourBranch]) -> Vec<(String, Vec<(f64, f64)>)> {
    branches
        .iter()
        .map(|b| {
            let name = format!("{prefix}{}", if b.quadrant > 0 { "+" } else { "-" });
            (
                name,
                b.points.iter().map(|p| (p.delta_m_norm, p.delta_c_norm)).collect(),
            )
        })
        .collect()
}

fn truncation_note(map: &StabilityMap) -> Option<String> {
    (!map.is_complete()).then(|| {
        format!(
            "truncated: interrupted after {} of {} rows",
            map.cells.len() / map.grid.delta_m_norm.n,
            map.grid.delta_c_norm.n
        )
    })
}

/// Writes a stability map with its contours and optional plot under `stem`.
pub(super) fn emit_map(ctx: &mut RunContext, stem: &str, map: &StabilityMap, axes: AxisUnits) -> Result<(), CliError> {
    let c = ctx.config.cooperativity()?;
    let mut notes = Vec::new();
    notes.extend(truncation_note(map));
    if map.failed_cells() > 0 {
        notes.push(format!("{} cells failed; see the error column", map.failed_cells()));
    }
    if !map.is_complete() || map.failed_cells() > 0 {
        ctx.outcome.partial = true;
    }
    notes.push("delta_m_norm > 0 is unphysical under the single-tone mapping delta_m = -omega_m".into());
    match ctx.config.output.format {
        Format::Csv => {
            ctx.write_csv(&format!("{stem}.csv"), crate::stability::MAP_FORMAT, &notes, |w| {
                map.write_csv(w)
            })?;
        }
        Format::Json => {
            let mut v = map.to_json();
            v["truncated"] = json!(!map.is_complete());
            ctx.write_json(&format!("{stem}.json"), crate::stability::MAP_FORMAT, v)?;
        }
    }

    let boundary = map_boundary(map);
    let analytic = threshold_contour(c, &contour_samples(c, &map.grid.delta_c_norm.values()));
    let mut lines: Vec<(String, Vec<(f64, f64)>)> = boundary
        .iter()
        .enumerate()
        .map(|(k, p)| (format!("full_model_{k}"), p.points.clone()))
        .collect();
    lines.extend(branch_lines("threshold", &analytic));
    write_polylines(
        ctx,
        &format!("{stem}_contours"),
        "twotone.contours/1",
        &lines,
        &["full_model_*: zero-margin lines of the map; threshold±: closed-form threshold".into()],
    )?;

    if ctx.config.output.plot {
        let view = View::new(axes, &map.params);
        let xs: Vec<f64> = map.grid.delta_m_norm.values().iter().map(|x| x * view.fx).collect();
        let ys: Vec<f64> = map.grid.delta_c_norm.values().iter().map(|y| y * view.fy).collect();
        let mut z: Vec<Vec<f64>> = map
            .cells
            .chunks(xs.len())
            .map(|r| r.iter().map(class_code).collect())
            .collect();
        z.resize(ys.len(), vec![f64::NAN; xs.len()]);
        let mut overlays: Vec<Overlay> = boundary
            .iter()
            .map(|p| Overlay {
                points: view.apply(p.points.iter().copied()),
                color: "black",
                dashed: false,
            })
            .collect();
        overlays.extend(analytic.iter().map(|b| Overlay {
            points: view.apply(b.points.iter().map(|p| (p.delta_m_norm, p.delta_c_norm))),
            color: "#ffffff",
            dashed: true,
        }));
        let svg = plot::heatmap_svg(&Heatmap {
            title: format!("Fixed-point class, C = {c}"),
            x_label: view.x_label.into(),
            y_label: view.y_label.into(),
            xs: &xs,
            ys: &ys,
            z: &z,
            scale: ColorScale::Categorical,
            overlays,
            legend: class_legend(),
        });
        ctx.write_text(&format!("{stem}.svg"), &svg)?;
    }
    Ok(())
}

pub(super) fn map(ctx: &mut RunContext) -> Result<(), CliError> {
    let params = ctx.config.params()?;
    let grid = ctx.config.sweep.grid(&params)?;
    let map = stability_map_until(&params, &grid, ctx.config.tol, &ctx.stop);
    emit_map(ctx, "stability_map", &map, ctx.config.sweep.axes)?;
    if let Some(path) = ctx.scatter.clone() {
        scatter(ctx, &params, &map, &path)?;
    }
    let waist = corridor_half_width(ctx.config.cooperativity()?);
    log::info!(
        "map: {} cells, {} unstable, corridor half-width {:?}",
        map.cells.len(),
        map.cells.iter().filter(|c| c.is_unstable()).count(),
        waist
    );
    Ok(())
}

fn scatter(
    ctx: &mut RunContext,
    params: &SystemParams,
    map: &StabilityMap,
    path: &std::path::Path,
) -> Result<(), CliError> {
    let points = read_scatter(path)?;
    let tol = ctx.config.tol;
    let samples = points
        .par_iter()
        .map(|p| match p.value {
            Some(v) => Ok((p.delta_m_norm, p.delta_c_norm, v)),
            None => {
                let d = DriveConfig::two_tone_normalized(params, p.delta_c_norm, p.delta_m_norm);
                let r = classify(&build_dynamical_matrix(params, &d)?, tol)?;
                Ok((p.delta_m_norm, p.delta_c_norm, r.margin))
            }
        })
        .collect::<Result<Vec<_>, crate::Error>>()?;
    let xs = map.grid.delta_m_norm.values();
    let ys = map.grid.delta_c_norm.values();
    let span = |v: &[f64]| (v[v.len() - 1] - v[0]).abs().max(f64::MIN_POSITIVE);
    let raster = rasterize_nearest(&samples, &xs, &ys, (span(&xs), span(&ys)));
    let notes = vec![format!(
        "nearest-neighbour rasterization of {} points from {}",
        samples.len(),
        path.display()
    )];
    ctx.write_csv("scatter_raster.csv", "twotone.raster/1", &notes, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["delta_m_norm", "delta_c_norm", "value"])?;
        for (j, y) in ys.iter().enumerate() {
            for (i, x) in xs.iter().enumerate() {
                out.write_record([x.to_string(), y.to_string(), raster[j][i].to_string()])?;
            }
        }
        out.flush()
    })?;
    if ctx.config.output.plot {
        let scale = raster
            .iter()
            .flatten()
            .filter(|v| v.is_finite())
            .fold(0.0f64, |a, v| a.max(v.abs()));
        let svg = plot::heatmap_svg(&Heatmap {
            title: "Rasterized scatter".into(),
            x_label: "Δm/(Γm/2)".into(),
            y_label: "Δc/(κ/2)".into(),
            xs: &xs,
            ys: &ys,
            z: &raster,
            scale: ColorScale::Diverging {
                scale: if scale > 0.0 { scale / 3.0 } else { 1.0 },
            },
            overlays: Vec::new(),
            legend: Vec::new(),
        });
        ctx.write_text("scatter_raster.svg", &svg)?;
    }
    Ok(())
}

pub(super) fn contour(ctx: &mut RunContext) -> Result<(), CliError> {
    let c = ctx.config.cooperativity()?;
    let branches = threshold_contour(c, &contour_samples(c, &ctx.config.sweep.delta_c.values()));
    let mut notes = vec![match corridor_half_width(c) {
        Some(w) => format!("corridor half-width C - sqrt(C^2 - 1) = {w}"),
        None => "no threshold for C < 1".into(),
    }];
    if branches.iter().any(|b| b.points.len() == 1) {
        notes.push("degenerate contour: isolated threshold points".into());
    }
    let lines = branch_lines("threshold", &branches);
    write_polylines(ctx, "contour", "twotone.contours/1", &lines, &notes)?;
    if ctx.config.output.plot {
        let series: Vec<Series> = lines
            .iter()
            .map(|(name, pts)| Series {
                label: name.clone(),
                points: pts.clone(),
            })
            .collect();
        let svg = plot::line_plot_svg(
            &format!("Threshold contour, C = {c}"),
            "Δm/(Γm/2)",
            "Δc/(κ/2)",
            &series,
            false,
        );
        ctx.write_text("contour.svg", &svg)?;
    }
    Ok(())
}

fn spectrum_json(spec: &SpectrumResult) -> serde_json::Value {
    json!({
        "format": SPECTRUM_FORMAT,
        "omega": spec.omega_grid,
        "psd_total": spec.psd_total,
        "psd_thermal": spec.psd_thermal,
        "psd_backaction": spec.psd_backaction,
        "floor": spec.floor,
    })
}

pub(super) fn spectrum(ctx: &mut RunContext) -> Result<(), CliError> {
    let params = ctx.config.params()?;
    let drive = ctx.config.drive_config(&params)?;
    let noise = ctx.config.noise;
    let s = &ctx.config.spectrum;
    let grid = frequency_grid(&params, &drive, s.points_per_pole, s.span_factor)?;
    let spec = output_spectrum(&params, &drive, &noise, &grid)?;
    let power = sideband_power(&spec);
    let mut notes = Vec::new();
    if power.truncated {
        notes.push(format!(
            "feature truncated at grid edge: excess {:.3e} of floor",
            power.edge_excess
        ));
    }
    match ctx.config.output.format {
        Format::Csv => {
            ctx.write_csv("spectrum.csv", SPECTRUM_FORMAT, &notes, |w| spec.write_csv(w))?;
        }
        Format::Json => {
            ctx.write_json("spectrum.json", SPECTRUM_FORMAT, spectrum_json(&spec))?;
        }
    }
    let mut features = spec.features_json();
    features["sideband_power"] = json!(power);
    features["mechanical_quanta"] = json!(mechanical_quanta(power.power, &params, &noise)?);
    features["delta_c_norm"] = json!(drive.delta_c_norm(&params));
    features["delta_m_norm"] = json!(drive.delta_m_norm(&params));
    ctx.write_json("spectrum_features.json", "twotone.spectrum_features/1", features)?;
    if ctx.config.output.plot {
        let pick = |v: &[f64]| -> Vec<(f64, f64)> { spec.omega_grid.iter().copied().zip(v.iter().copied()).collect() };
        let series = [
            Series {
                label: "total".into(),
                points: pick(&spec.psd_total),
            },
            Series {
                label: "thermal".into(),
                points: pick(&spec.psd_thermal),
            },
            Series {
                label: "backaction".into(),
                points: pick(&spec.psd_backaction),
            },
        ];
        let svg = plot::line_plot_svg("Output spectrum", "ω", "S(ω)", &series, true);
        ctx.write_text("spectrum.svg", &svg)?;
    }
    Ok(())
}

fn write_trajectory(ctx: &mut RunContext, rec: &TrajectoryRecord) -> Result<(), CliError> {
    let stem = format!("trajectory_{}", rec.seed);
    match ctx.config.output.format {
        Format::Csv => {
            let notes = vec![format!("seed {} diverged {}", rec.seed, rec.diverged)];
            ctx.write_csv(
                &format!("{stem}.csv"),
                crate::dynamics::TRAJECTORY_FORMAT,
                &notes,
                |w| rec.write_csv(w),
            )?;
            ctx.write_json(
                &format!("{stem}.meta.json"),
                crate::dynamics::TRAJECTORY_FORMAT,
                rec.sidecar_json(),
            )?;
        }
        Format::Json => {
            let mut v = rec.sidecar_json();
            v["times"] = json!(rec.times);
            v["states"] = json!(rec.states);
            ctx.write_json(&format!("{stem}.json"), crate::dynamics::TRAJECTORY_FORMAT, v)?;
        }
    }
    Ok(())
}

pub(super) fn simulate(ctx: &mut RunContext) -> Result<(), CliError> {
    let params = ctx.config.params()?;
    let drive = ctx.config.drive_config(&params)?;
    let sim = ctx.config.simulation.clone();
    let seeds: Vec<u64> = (0..sim.ensemble as u64)
        .map(|k| ctx.config.seed.wrapping_add(k))
        .collect();
    let stop = ctx.stop.clone();

    let mut summary = json!({"seeds": seeds});
    let results: Vec<Option<Result<TrajectoryRecord, crate::Error>>> = if sim.nonrwa {
        let dt = sim.dt.unwrap_or(0.01 / params.omega_m());
        let mut opts = NonRwaOptions::new(dt, sim.t_end, 0);
        opts.waveform = sim.waveform;
        opts.decimation = sim.decimation;
        if drive.mode == DriveMode::TwoToneBalanced || sim.waveform == crate::dynamics::CouplingWaveform::Constant {
            summary["floquet_exponent"] = json!(nonrwa_floquet_exponent(&params, &drive, sim.waveform, 1000)?);
        }
        seeds
            .par_iter()
            .map(|&seed| {
                (!stop.load(Ordering::Relaxed)).then(|| {
                    let mut o = opts.clone();
                    o.seed = seed;
                    brute_force_nonrwa(&params, &drive, &o)
                })
            })
            .collect()
    } else {
        let dt = sim.dt.unwrap_or_else(|| max_euler_dt(&params, &drive));
        if sim.scheme == Scheme::EulerMaruyama {
            let margin = classify(&build_dynamical_matrix(&params, &drive)?, ctx.config.tol)?.margin;
            let bias = euler_rate_bias(&params, &drive, dt)?;
            if bias > 0.01 * margin.abs() {
                log::warn!(
                    "Euler-Maruyama shifts the leading rate by {bias:.3e} ({:.1}% of |margin|); \
                     use a smaller dt or the exact OU step",
                    100.0 * bias / margin.abs()
                );
            }
        }
        let mut opts = SimulationOptions::new(dt, sim.t_end, 0)
            .with_scheme(sim.scheme)
            .with_decimation(sim.decimation);
        if sim.noise {
            opts = opts.with_noise(ctx.config.noise);
        }
        opts.x0 = sim.x0;
        seeds
            .par_iter()
            .map(|&seed| {
                (!stop.load(Ordering::Relaxed)).then(|| {
                    let mut o = opts.clone();
                    o.seed = seed;
                    simulate_with(&params, &drive, &o)
                })
            })
            .collect()
    };

    let mut records = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Some(rec) => records.push(rec?),
            None => ctx.outcome.partial = true,
        }
    }
    for rec in &records {
        write_trajectory(ctx, rec)?;
    }

    let report = classify(&build_dynamical_matrix(&params, &drive)?, ctx.config.tol)?;
    summary["margin"] = json!(report.margin);
    summary["class"] = json!(report.classification);
    summary["members"] = json!(records.len());
    summary["diverged"] = json!(records.iter().filter(|r| r.diverged).count());
    summary["truncated"] = json!(records.len() < seeds.len());
    if !report.is_stable() {
        match ensemble_growth_rate(&records) {
            Ok(g) => summary["growth_rate"] = json!(g),
            Err(e) => summary["growth_rate_error"] = json!(e.to_string()),
        }
    } else if sim.noise && !sim.nonrwa && records.len() >= 2 {
        let burn_in = 0.2 * sim.t_end;
        let sample = sample_covariance(&records, burn_in)?;
        let exact = stationary_covariance(&params, &drive, &ctx.config.noise)?;
        let rows = |m: &nalgebra::Matrix4<f64>| -> Vec<Vec<f64>> {
            (0..4).map(|i| (0..4).map(|j| m[(i, j)]).collect()).collect()
        };
        summary["covariance"] = json!({
            "burn_in": burn_in,
            "sample_mean": rows(&sample.mean),
            "sample_std_err": rows(&sample.std_err),
            "stationary": rows(&exact),
        });
    }
    ctx.write_json("simulation_summary.json", "twotone.simulation_summary/1", summary)?;

    if ctx.config.output.plot {
        if let Some(rec) = records.first() {
            let series: Vec<Series> = ["Xa", "Ya", "Xb", "Yb"]
                .iter()
                .enumerate()
                .map(|(k, name)| Series {
                    label: (*name).into(),
                    points: rec.times.iter().zip(&rec.states).map(|(t, x)| (*t, x[k])).collect(),
                })
                .collect();
            let svg = plot::line_plot_svg(
                &format!("Trajectory, seed {}", rec.seed),
                "t",
                "quadrature",
                &series,
                false,
            );
            ctx.write_text("trajectory.svg", &svg)?;
        }
    }
    Ok(())
}

/// Writes a CSV table with one header row.
pub(super) fn table<'a>(
    header: &'a [&'a str],
    rows: &'a [Vec<f64>],
) -> impl FnOnce(&mut dyn Write) -> std::io::Result<()> + 'a {
    move |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(header)?;
        for r in rows {
            out.write_record(r.iter().map(|v| v.to_string()))?;
        }
        out.flush()
    }
}
