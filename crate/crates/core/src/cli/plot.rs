//! Minimal static SVG plots: heatmaps with line overlays, and line charts.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 520.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 110.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

/// Categorical palette, also used for line series.
pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ColorScale {
    /// Blue below zero, red above, `tanh`-compressed by the given scale.
    Diverging { scale: f64 },
    /// Dark-to-light over `[min, max]`, optionally on a log axis.
    Sequential { min: f64, max: f64, log: bool },
    /// Integer codes indexing [`PALETTE`].
    Categorical,
}

#[derive(Debug, Clone)]
pub struct Overlay {
    pub points: Vec<(f64, f64)>,
    pub color: &'static str,
    pub dashed: bool,
}

#[derive(Debug, Clone)]
pub struct Heatmap<'a> {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub xs: &'a [f64],
    pub ys: &'a [f64],
    /// Rows indexed by `ys`; NaN cells are drawn grey.
    pub z: &'a [Vec<f64>],
    pub scale: ColorScale,
    pub overlays: Vec<Overlay>,
    /// Legend entries for categorical maps.
    pub legend: Vec<(String, usize)>,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn widen(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        let d = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - d, hi + d)
    }
}

/// Roughly `n` round tick values within `[lo, hi]`.
pub fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if !(hi > lo) || n == 0 {
        return vec![lo];
    }
    let raw = (hi - lo) / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e4).contains(&a) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open_svg(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let (l, r, t, b) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(
        out,
        r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        r - l,
        b - t
    );
    for x in nice_ticks(f.x0, f.x1, 6) {
        let p = f.px(x);
        let _ = writeln!(
            out,
            r#"<line x1="{p:.2}" y1="{b}" x2="{p:.2}" y2="{}" stroke="black"/><text x="{p:.2}" y="{}" text-anchor="middle">{}</text>"#,
            b + 5.0,
            b + 19.0,
            fmt_tick(x)
        );
    }
    for y in nice_ticks(f.y0, f.y1, 6) {
        let p = f.py(y);
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{p:.2}" x2="{l}" y2="{p:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            l - 5.0,
            l - 8.0,
            p + 4.0,
            fmt_tick(y)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (l + r) / 2.0,
        HEIGHT - 18.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate(20 {}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (t + b) / 2.0,
        escape(y_label)
    );
}

fn polyline(out: &mut String, f: &Frame, points: &[(f64, f64)], color: &str, dashed: bool) {
    let finite: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|p| p.0.is_finite() && p.1.is_finite())
        .collect();
    match finite.as_slice() {
        [] => return,
        [(x, y)] => {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                f.px(*x),
                f.py(*y)
            );
            return;
        }
        _ => {}
    }
    let pts: Vec<String> = finite
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
        .collect();
    let dash = if dashed { r#" stroke-dasharray="5,3""# } else { "" };
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
        pts.join(" ")
    );
}

fn lerp_rgb(a: [f64; 3], b: [f64; 3], t: f64) -> String {
    let c: Vec<u8> = (0..3).map(|i| (a[i] + (b[i] - a[i]) * t).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn color(scale: ColorScale, v: f64) -> String {
    if !v.is_finite() {
        return "#bbbbbb".into();
    }
    match scale {
        ColorScale::Diverging { scale } => {
            let t = (v / scale).tanh();
            let white = [247.0, 247.0, 247.0];
            if t < 0.0 {
                lerp_rgb(white, [33.0, 102.0, 172.0], -t)
            } else {
                lerp_rgb(white, [178.0, 24.0, 43.0], t)
            }
        }
        ColorScale::Sequential { min, max, log } => {
            let (v, min, max) = if log {
                (v.max(f64::MIN_POSITIVE).log10(), min.log10(), max.log10())
            } else {
                (v, min, max)
            };
            let t = ((v - min) / (max - min)).clamp(0.0, 1.0);
            let stops = [
                [68.0, 1.0, 84.0],
                [59.0, 82.0, 139.0],
                [33.0, 145.0, 140.0],
                [94.0, 201.0, 98.0],
                [253.0, 231.0, 37.0],
            ];
            let s = t * (stops.len() - 1) as f64;
            let i = (s.floor() as usize).min(stops.len() - 2);
            lerp_rgb(stops[i], stops[i + 1], s - i as f64)
        }
        ColorScale::Categorical => PALETTE[(v.max(0.0) as usize) % PALETTE.len()].into(),
    }
}

/// Cell edges at the midpoints between samples.
fn edges(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    if n == 1 {
        return vec![v[0] - 0.5, v[0] + 0.5];
    }
    let mut e = Vec::with_capacity(n + 1);
    e.push(v[0] - (v[1] - v[0]) / 2.0);
    for w in v.windows(2) {
        e.push((w[0] + w[1]) / 2.0);
    }
    e.push(v[n - 1] + (v[n - 1] - v[n - 2]) / 2.0);
    e
}

pub fn heatmap_svg(h: &Heatmap) -> String {
    let ex = edges(h.xs);
    let ey = edges(h.ys);
    let f = Frame {
        x0: ex[0],
        x1: *ex.last().unwrap(),
        y0: ey[0],
        y1: *ey.last().unwrap(),
    };
    let mut out = String::new();
    open_svg(&mut out, &h.title);
    let _ = writeln!(out, r#"<g shape-rendering="crispEdges">"#);
    for (j, row) in h.z.iter().enumerate() {
        let (y0, y1) = (f.py(ey[j + 1]), f.py(ey[j]));
        let colors: Vec<String> = row.iter().map(|&v| color(h.scale, v)).collect();
        // one rect per run of equal colour
        let mut i = 0;
        while i < colors.len() {
            let mut k = i + 1;
            while k < colors.len() && colors[k] == colors[i] {
                k += 1;
            }
            let (x0, x1) = (f.px(ex[i]), f.px(ex[k]));
            let _ = writeln!(
                out,
                r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                x1 - x0 + 0.3,
                y1 - y0 + 0.3,
                colors[i]
            );
            i = k;
        }
    }
    let _ = writeln!(out, "</g>");
    let _ = writeln!(
        out,
        r#"<clipPath id="plot"><rect x="{LEFT}" y="{TOP}" width="{}" height="{}"/></clipPath><g clip-path="url(#plot)">"#,
        WIDTH - LEFT - RIGHT,
        HEIGHT - TOP - BOTTOM
    );
    for o in &h.overlays {
        polyline(&mut out, &f, &o.points, o.color, o.dashed);
    }
    let _ = writeln!(out, "</g>");
    axes(&mut out, &f, &h.x_label, &h.y_label);
    colorbar(&mut out, h);
    out.push_str("</svg>\n");
    out
}

fn colorbar(out: &mut String, h: &Heatmap) {
    let x = WIDTH - RIGHT + 15.0;
    match h.scale {
        ColorScale::Categorical => {
            for (k, (label, code)) in h.legend.iter().enumerate() {
                let y = TOP + 20.0 * k as f64;
                let _ = writeln!(
                    out,
                    r#"<rect x="{x}" y="{y}" width="12" height="12" fill="{}"/><text x="{}" y="{}" font-size="10">{}</text>"#,
                    PALETTE[code % PALETTE.len()],
                    x + 16.0,
                    y + 10.0,
                    escape(label)
                );
            }
        }
        scale => {
            let (lo, hi) = match scale {
                ColorScale::Diverging { scale } => (-3.0 * scale, 3.0 * scale),
                ColorScale::Sequential { min, max, .. } => (min, max),
                ColorScale::Categorical => unreachable!(),
            };
            let steps = 50;
            let height = HEIGHT - TOP - BOTTOM;
            for k in 0..steps {
                let t = k as f64 / (steps - 1) as f64;
                let v = match scale {
                    ColorScale::Sequential { log: true, .. } => lo * (hi / lo).powf(t),
                    _ => lo + (hi - lo) * t,
                };
                let y = TOP + height * (1.0 - (k + 1) as f64 / steps as f64);
                let _ = writeln!(
                    out,
                    r#"<rect x="{x}" y="{y:.2}" width="14" height="{:.2}" fill="{}"/>"#,
                    height / steps as f64 + 0.5,
                    color(scale, v)
                );
            }
            for (v, y) in [(hi, TOP + 8.0), (lo, TOP + height)] {
                let _ = writeln!(
                    out,
                    r#"<text x="{}" y="{y}" font-size="10">{}</text>"#,
                    x + 18.0,
                    fmt_tick(v)
                );
            }
        }
    }
}

pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[Series], log_y: bool) -> String {
    let tf = |y: f64| if log_y { y.log10() } else { y };
    let finite = series
        .iter()
        .flat_map(|s| s.points.iter())
        .map(|&(x, y)| (x, tf(y)))
        .filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in finite {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let (x0, x1) = widen(x0, x1);
    let (y0, y1) = widen(y0, y1);
    let pad = 0.05 * (y1 - y0);
    let f = Frame {
        x0,
        x1,
        y0: y0 - pad,
        y1: y1 + pad,
    };
    let mut out = String::new();
    open_svg(&mut out, title);
    for (k, s) in series.iter().enumerate() {
        let pts: Vec<(f64, f64)> = s.points.iter().map(|&(x, y)| (x, tf(y))).collect();
        let c = PALETTE[k % PALETTE.len()];
        // break the line at non-finite samples
        for run in pts
            .split(|p| !(p.0.is_finite() && p.1.is_finite()))
            .filter(|r| !r.is_empty())
        {
            polyline(&mut out, &f, run, c, false);
        }
        let y = TOP + 16.0 * k as f64;
        let lx = WIDTH - RIGHT + 10.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx}" y1="{y}" x2="{}" y2="{y}" stroke="{c}" stroke-width="2"/><text x="{}" y="{}" font-size="10">{}</text>"#,
            lx + 14.0,
            lx + 18.0,
            y + 4.0,
            escape(&s.label)
        );
    }
    let y_label = if log_y {
        format!("log10 {y_label}")
    } else {
        y_label.to_string()
    };
    axes(&mut out, &f, x_label, &y_label);
    out.push_str("</svg>\n");
    out
}
