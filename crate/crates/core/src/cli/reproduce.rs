//! Figure recipes driven by the pinned configurations in `configs/`.

use std::sync::atomic::Ordering;

use rayon::prelude::*;
use serde_json::json;

use super::commands::{branch_lines, contour_samples, emit_map, table, write_polylines};
use super::plot::{self, ColorScale, Heatmap, Overlay, Series};
use super::{CliError, RunConfig, RunContext, Target};
use crate::model::{DriveConfig, SystemParams};
use crate::spectra::{
    effective_frequency_shift, frequency_grid, output_spectrum, trapezoid_excess, NoiseModel, REFERENCE_POINT,
};
use crate::stability::{classify, stability_map_until, threshold_contour, Axis, FixedPointClass, StabilityMap};

const FIG3: &str = include_str!("../../configs/fig3.toml");
const FIG4DEF: &str = include_str!("../../configs/fig4def.toml");
const FIG5: &str = include_str!("../../configs/fig5.toml");
const FIG6_ANALOG: &str = include_str!("../../configs/fig6-analog.toml");

pub fn pinned_config(target: Target) -> Result<RunConfig, CliError> {
    let text = match target {
        Target::Fig3 => FIG3,
        Target::Fig4def => FIG4DEF,
        Target::Fig5 => FIG5,
        Target::Fig6Analog => FIG6_ANALOG,
    };
    RunConfig::from_toml(text)
}

pub fn run(ctx: &mut RunContext, target: Target) -> Result<(), CliError> {
    match target {
        Target::Fig3 => fig3(ctx),
        Target::Fig4def => fig4def(ctx),
        Target::Fig5 => fig5(ctx),
        Target::Fig6Analog => fig6_analog(ctx),
    }
}

fn cooperativities(ctx: &RunContext) -> Result<Vec<f64>, CliError> {
    let cs = ctx.config.reproduce.cooperativities.clone();
    if cs.is_empty() {
        return Err(CliError::Config("[reproduce] cooperativities is empty".into()));
    }
    Ok(cs)
}

fn fig3(ctx: &mut RunContext) -> Result<(), CliError> {
    let axis = ctx.config.sweep.delta_c.values();
    let mut lines = Vec::new();
    for c in cooperativities(ctx)? {
        let branches = threshold_contour(c, &contour_samples(c, &axis));
        lines.extend(branch_lines(&format!("C={c} "), &branches));
    }
    write_polylines(ctx, "fig3_contours", "twotone.contours/1", &lines, &[])?;
    if ctx.config.output.plot {
        let (dm, dc) = (ctx.config.sweep.delta_m, ctx.config.sweep.delta_c);
        // clip to the configured window; NaN breaks the line between branches
        let clip = |&(x, y): &(f64, f64)| {
            if (dm.min..=dm.max).contains(&x) && (dc.min..=dc.max).contains(&y) {
                (x, y)
            } else {
                (f64::NAN, f64::NAN)
            }
        };
        let series: Vec<Series> = lines
            .chunks(2)
            .map(|pair| Series {
                label: pair[0].0.trim_end_matches(['+', ' ']).to_string(),
                points: pair
                    .iter()
                    .flat_map(|(_, pts)| pts.iter().map(clip).chain([(f64::NAN, f64::NAN)]))
                    .collect(),
            })
            .collect();
        let svg = plot::line_plot_svg(
            "Two-tone instability thresholds",
            "Δm/(Γm/2)",
            "Δc/(κ/2)",
            &series,
            false,
        );
        ctx.write_text("fig3_contours.svg", &svg)?;
    }
    Ok(())
}

/// Total sideband power on a reduced adaptive grid; NaN where unstable.
fn power(
    params: &SystemParams,
    drive: &DriveConfig,
    noise: &NoiseModel,
    ppp: usize,
    span: f64,
) -> Result<f64, crate::Error> {
    let grid = frequency_grid(params, drive, ppp, span)?;
    match output_spectrum(params, drive, noise, &grid) {
        Ok(s) => Ok(trapezoid_excess(&s.omega_grid, &s.psd_total, s.floor)),
        Err(crate::Error::UnstablePoint { .. }) => Ok(f64::NAN),
        Err(e) => Err(e),
    }
}

struct PowerMap {
    xs: Vec<f64>,
    ys: Vec<f64>,
    rows: Vec<Vec<f64>>,
    complete: bool,
}

fn power_map(ctx: &RunContext, params: &SystemParams, dm: &Axis, dc: &Axis) -> Result<PowerMap, CliError> {
    let noise = ctx.config.noise;
    let (ppp, span) = (ctx.config.spectrum.points_per_pole, ctx.config.spectrum.span_factor);
    let reference =
        DriveConfig::two_tone_normalized(params, REFERENCE_POINT.delta_c_norm, REFERENCE_POINT.delta_m_norm);
    let p0 = power(params, &reference, &noise, ppp, span)?;
    if !(p0 > 0.0) {
        return Err(CliError::Numerical(crate::Error::Fit(format!(
            "reference power {p0} is not positive"
        ))));
    }
    let xs = dm.values();
    let ys = dc.values();
    let mut rows = Vec::with_capacity(ys.len());
    for &y in &ys {
        if ctx.stop.load(Ordering::Relaxed) {
            break;
        }
        let row = xs
            .par_iter()
            .map(|&x| {
                let d = DriveConfig::two_tone_normalized(params, y, x);
                power(params, &d, &noise, ppp, span).map(|p| p / p0)
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    let complete = rows.len() == ys.len();
    Ok(PowerMap { xs, ys, rows, complete })
}

fn fig4def(ctx: &mut RunContext) -> Result<(), CliError> {
    let base = ctx.config.params()?;
    let (dm, dc) = (ctx.config.sweep.delta_m, ctx.config.sweep.delta_c);
    for c in cooperativities(ctx)? {
        let params = base.with_cooperativity(c)?;
        let map = power_map(ctx, &params, &dm, &dc)?;
        let stem = format!("fig4def_power_C{c}");
        let mut notes = vec![format!(
            "P/P0 with P0 at (delta_m_norm, delta_c_norm) = ({}, {}); NaN marks unstable cells",
            REFERENCE_POINT.delta_m_norm, REFERENCE_POINT.delta_c_norm
        )];
        if !map.complete {
            notes.push(format!(
                "truncated: interrupted after {} of {} rows",
                map.rows.len(),
                map.ys.len()
            ));
            ctx.outcome.partial = true;
        }
        let flat: Vec<Vec<f64>> = map
            .rows
            .iter()
            .zip(&map.ys)
            .flat_map(|(row, &y)| map.xs.iter().zip(row).map(move |(&x, &p)| vec![x, y, p]))
            .collect();
        ctx.write_csv(
            &format!("{stem}.csv"),
            "twotone.power_map/1",
            &notes,
            table(&["delta_m_norm", "delta_c_norm", "p_over_p0"], &flat),
        )?;
        if ctx.config.output.plot {
            let branches = threshold_contour(c, &contour_samples(c, &map.ys));
            let mut rows = map.rows.clone();
            rows.resize(map.ys.len(), vec![f64::NAN; map.xs.len()]);
            let svg = plot::heatmap_svg(&Heatmap {
                title: format!("Sideband power P/P0, C = {c}"),
                x_label: "Δm/(Γm/2)".into(),
                y_label: "Δc/(κ/2)".into(),
                xs: &map.xs,
                ys: &map.ys,
                z: &rows,
                scale: ColorScale::Sequential {
                    min: 0.3,
                    max: 30.0,
                    log: true,
                },
                overlays: branches
                    .iter()
                    .map(|b| Overlay {
                        points: b.points.iter().map(|p| (p.delta_m_norm, p.delta_c_norm)).collect(),
                        color: "black",
                        dashed: false,
                    })
                    .collect(),
                legend: Vec::new(),
            });
            ctx.write_text(&format!("{stem}.svg"), &svg)?;
        }
        if ctx.interrupted() {
            return Ok(());
        }
    }
    fig4_cuts(ctx, &base)
}

fn fig4_cuts(ctx: &mut RunContext, base: &SystemParams) -> Result<(), CliError> {
    let r = ctx.config.reproduce.clone();
    let Some(c) = r.cut_cooperativity else {
        return Ok(());
    };
    let params = base.with_cooperativity(c)?;
    let dm = ctx.config.sweep.delta_m;
    let fine = Axis::new(dm.min, dm.max, 4 * (dm.n - 1) + 1)?;
    let mut series = Vec::new();
    let mut flat = Vec::new();
    for &y in &r.cuts_delta_c_norm {
        let map = power_map(ctx, &params, &fine, &Axis::new(y, y, 1)?)?;
        let Some(row) = map.rows.first() else {
            ctx.outcome.partial = true;
            break;
        };
        flat.extend(map.xs.iter().zip(row).map(|(&x, &p)| vec![y, x, p]));
        series.push(Series {
            label: format!("Δc/(κ/2) = {y}"),
            points: map.xs.iter().copied().zip(row.iter().copied()).collect(),
        });
    }
    ctx.write_csv(
        &format!("fig4def_cuts_C{c}.csv"),
        "twotone.power_cuts/1",
        &[],
        table(&["delta_c_norm", "delta_m_norm", "p_over_p0"], &flat),
    )?;
    if ctx.config.output.plot {
        let svg = plot::line_plot_svg(&format!("Horizontal cuts, C = {c}"), "Δm/(Γm/2)", "P/P0", &series, true);
        ctx.write_text(&format!("fig4def_cuts_C{c}.svg"), &svg)?;
    }
    Ok(())
}

fn class_counts(map: &StabilityMap) -> serde_json::Value {
    let count = |k: Option<FixedPointClass>| map.cells.iter().filter(|c| c.class == k).count();
    json!({
        "stable_spiral": count(Some(FixedPointClass::StableSpiral)),
        "stable_node": count(Some(FixedPointClass::StableNode)),
        "saddle": count(Some(FixedPointClass::Saddle)),
        "unstable_spiral": count(Some(FixedPointClass::UnstableSpiral)),
        "unstable_node": count(Some(FixedPointClass::UnstableNode)),
        "marginal": count(Some(FixedPointClass::Marginal)),
        "failed": count(None),
    })
}

fn fig5(ctx: &mut RunContext) -> Result<(), CliError> {
    let params = ctx.config.params()?;
    let grid = ctx.config.sweep.grid(&params)?;
    let map = stability_map_until(&params, &grid, ctx.config.tol, &ctx.stop);
    emit_map(ctx, "fig5_map", &map, ctx.config.sweep.axes)?;
    let mut summary = json!({"map": class_counts(&map)});
    if let Some(inset) = ctx.config.reproduce.inset.clone() {
        if !ctx.interrupted() {
            let grid = inset.grid(&params)?;
            let inset_map = stability_map_until(&params, &grid, ctx.config.tol, &ctx.stop);
            emit_map(ctx, "fig5_inset", &inset_map, inset.axes)?;
            summary["inset"] = class_counts(&inset_map);
        } else {
            ctx.outcome.partial = true;
        }
    }
    ctx.write_json("fig5_summary.json", "twotone.class_counts/1", summary)?;
    Ok(())
}

fn fig6_analog(ctx: &mut RunContext) -> Result<(), CliError> {
    let params = ctx.config.params()?;
    let (dm, dc) = (ctx.config.sweep.delta_m, ctx.config.sweep.delta_c);
    let half_gm = params.gamma_m() / 2.0;
    let tol = ctx.config.tol;
    let xs = dm.values();
    let ys = dc.values();
    let mut rows: Vec<Vec<[f64; 2]>> = Vec::with_capacity(ys.len());
    for &y in &ys {
        if ctx.interrupted() {
            ctx.outcome.partial = true;
            break;
        }
        let row = xs
            .par_iter()
            .map(|&x| {
                let d = DriveConfig::two_tone_normalized(&params, y, x);
                let report = classify(&crate::model::build_dynamical_matrix(&params, &d)?, tol)?;
                if !report.is_stable() {
                    return Ok([f64::NAN, f64::NAN]);
                }
                let s = effective_frequency_shift(&params, &d)?;
                Ok([s.observable / half_gm, s.delta_eff / half_gm])
            })
            .collect::<Result<Vec<_>, crate::Error>>()?;
        rows.push(row);
    }
    let flat: Vec<Vec<f64>> = rows
        .iter()
        .zip(&ys)
        .flat_map(|(row, &y)| xs.iter().zip(row).map(move |(&x, v)| vec![x, y, v[0], v[1]]))
        .collect();
    let notes = vec!["frequencies in units of gamma_m/2; NaN marks unstable cells".to_string()];
    ctx.write_csv(
        "fig6_analog_shift.csv",
        "twotone.frequency_shift_map/1",
        &notes,
        table(
            &["delta_m_norm", "delta_c_norm", "observable_norm", "delta_eff_norm"],
            &flat,
        ),
    )?;
    if ctx.config.output.plot {
        let mut z: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v[0]).collect()).collect();
        z.resize(ys.len(), vec![f64::NAN; xs.len()]);
        let c = ctx.config.cooperativity()?;
        let branches = threshold_contour(c, &contour_samples(c, &ys));
        let svg = plot::heatmap_svg(&Heatmap {
            title: format!("Δm - δΩm in units of Γm/2, C = {c}"),
            x_label: "Δm/(Γm/2)".into(),
            y_label: "Δc/(κ/2)".into(),
            xs: &xs,
            ys: &ys,
            z: &z,
            scale: ColorScale::Diverging { scale: 5.0 },
            overlays: branches
                .iter()
                .map(|b| Overlay {
                    points: b.points.iter().map(|p| (p.delta_m_norm, p.delta_c_norm)).collect(),
                    color: "black",
                    dashed: false,
                })
                .collect(),
            legend: Vec::new(),
        });
        ctx.write_text("fig6_analog_shift.svg", &svg)?;
    }
    Ok(())
}
