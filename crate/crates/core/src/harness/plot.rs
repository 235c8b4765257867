//! Deterministic SVG output: objective against iteration, and contour lines
//! with trajectories for 2-D problems.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::problem::{Objective, Point};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 130.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const MAX_POINTS: usize = 2000;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub const GRID: usize = 201;
pub const LEVELS: usize = 12;

/// One objective curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub t: Vec<f64>,
    pub f: Vec<f64>,
    /// Iterations at which a perturbation was applied.
    pub events: Vec<f64>,
}

/// Reads a trace CSV; the label is the name of the containing directory.
pub fn read_trace_csv(path: &Path) -> Result<Series> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Usage(format!("{}: missing column {name}", path.display())))
    };
    let (ct, cf, cp) = (col("t")?, col("f")?, col("perturbed")?);
    let mut s = Series {
        label: path
            .parent()
            .and_then(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string()),
        t: Vec::new(),
        f: Vec::new(),
        events: Vec::new(),
    };
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |i: usize| {
            rec[i]
                .parse::<f64>()
                .map_err(|e| Error::Usage(format!("{}: {:?}: {e}", path.display(), &rec[i])))
        };
        let t = parse(ct)?;
        s.t.push(t);
        s.f.push(parse(cf)?);
        if &rec[cp] == "1" || &rec[cp] == "true" {
            s.events.push(t);
        }
    }
    Ok(s)
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / n as f64;
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

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
        (lo - pad, hi + pad)
    }
}

fn header(out: &mut String) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<clipPath id="plot"><rect x="{LEFT}" y="{TOP}" width="{}" height="{}"/></clipPath>"#,
        WIDTH - LEFT - RIGHT,
        HEIGHT - TOP - BOTTOM
    );
}

fn axes(out: &mut String, fr: &Frame, xlabel: &str, ylabel: &str, log_x: bool) {
    let (l, r, t, b) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(
        out,
        r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        r - l,
        b - t
    );
    for v in nice_ticks(fr.x0, fr.x1, 6) {
        let x = fr.px(v);
        let label = if log_x { format!("1e{}", fmt_tick(v)) } else { fmt_tick(v) };
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{b}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#,
            b + 5.0,
            b + 18.0
        );
    }
    for v in nice_ticks(fr.y0, fr.y1, 6) {
        let y = fr.py(v);
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{l}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            l - 5.0,
            l - 8.0,
            y + 4.0,
            fmt_tick(v)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{xlabel}</text>"#,
        (l + r) / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{ylabel}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0
    );
}

fn legend(out: &mut String, labels: &[String]) {
    for (i, label) in labels.iter().enumerate() {
        let y = TOP + 15.0 + 20.0 * i as f64;
        let x = WIDTH - RIGHT + 12.0;
        let c = COLORS[i % COLORS.len()];
        let _ = writeln!(
            out,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{c}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            x + 24.0,
            x + 30.0,
            y + 4.0,
            escape(label)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn thin(n: usize) -> Vec<usize> {
    if n <= MAX_POINTS {
        return (0..n).collect();
    }
    let stride = n.div_ceil(MAX_POINTS);
    let mut idx: Vec<usize> = (0..n).step_by(stride).collect();
    if idx.last() != Some(&(n - 1)) {
        idx.push(n - 1);
    }
    idx
}

/// Objective against iteration, one polyline per series, perturbations as circles.
pub fn objective_svg(series: &[Series], log_x: bool) -> Result<String> {
    if series.is_empty() || series.iter().any(|s| s.t.is_empty()) {
        return Err(Error::Usage("cannot plot an empty trace".into()));
    }
    let xf = |t: f64| if log_x { (t + 1.0).log10() } else { t };
    let all_t = series.iter().flat_map(|s| s.t.iter().map(|t| xf(*t)));
    let (tx0, tx1) = all_t.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let finite_f = series.iter().flat_map(|s| s.f.iter().copied()).filter(|v| v.is_finite());
    let (fy0, fy1) = finite_f.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !fy0.is_finite() {
        return Err(Error::Usage("trace has no finite objective values".into()));
    }
    let (x0, x1) = if tx1 > tx0 { (tx0, tx1) } else { (tx0, tx0 + 1.0) };
    let (y0, y1) = padded(fy0, fy1);
    let fr = Frame { x0, x1, y0, y1 };

    let mut out = String::new();
    header(&mut out);
    axes(&mut out, &fr, if log_x { "iteration + 1" } else { "iteration" }, "objective", log_x);
    for (i, s) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let mut pts = String::new();
        for k in thin(s.t.len()) {
            if s.f[k].is_finite() {
                let _ = write!(pts, "{:.2},{:.2} ", fr.px(xf(s.t[k])), fr.py(s.f[k]));
            }
        }
        let _ = writeln!(
            out,
            r#"<polyline clip-path="url(#plot)" fill="none" stroke="{c}" stroke-width="1.5" points="{}"/>"#,
            pts.trim_end()
        );
        for &e in &s.events {
            if let Some(k) = s.t.iter().position(|t| *t == e) {
                let _ = writeln!(
                    out,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="none" stroke="{c}"/>"#,
                    fr.px(xf(e)),
                    fr.py(s.f[k])
                );
            }
        }
    }
    legend(&mut out, &series.iter().map(|s| s.label.clone()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    Ok(out)
}

/// Values of `obj` on a `GRID × GRID` grid over `bbox`; row `j` is `y_j`.
pub fn grid_values(obj: &dyn Objective, bbox: [f64; 4]) -> Result<Vec<Vec<f64>>> {
    if obj.dim() != 2 {
        return Err(Error::Usage(format!("contour plots need a 2-D problem, got d = {}", obj.dim())));
    }
    let xs = axis(bbox[0], bbox[1]);
    let ys = axis(bbox[2], bbox[3]);
    Ok(ys
        .iter()
        .map(|&y| xs.iter().map(|&x| obj.value(&Point::from_vec(vec![x, y]))).collect())
        .collect())
}

fn axis(lo: f64, hi: f64) -> Vec<f64> {
    (0..GRID)
        .map(|i| lo + (hi - lo) * i as f64 / (GRID - 1) as f64)
        .collect()
}

/// `LEVELS` levels at evenly spaced quantiles of the grid values.
pub fn quantile_levels(values: &[Vec<f64>]) -> Vec<f64> {
    let mut v: Vec<f64> = values.iter().flatten().copied().filter(|v| v.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return Vec::new();
    }
    (0..LEVELS)
        .map(|k| {
            let q = (k as f64 + 0.5) / LEVELS as f64;
            v[((q * (v.len() - 1) as f64).round()) as usize]
        })
        .collect()
}

/// Line segments of the level set `level` by marching squares, in grid coordinates.
pub fn marching_squares(values: &[Vec<f64>], level: f64) -> Vec<[(f64, f64); 2]> {
    let mut segs = Vec::new();
    let ny = values.len();
    if ny < 2 {
        return segs;
    }
    let nx = values[0].len();
    let lerp = |a: f64, b: f64| if a == b { 0.5 } else { (level - a) / (b - a) };
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let v = [values[j][i], values[j][i + 1], values[j + 1][i + 1], values[j + 1][i]];
            let mut case = 0;
            for (b, val) in v.iter().enumerate() {
                if *val > level {
                    case |= 1 << b;
                }
            }
            if case == 0 || case == 15 {
                continue;
            }
            let (x, y) = (i as f64, j as f64);
            // edges: 0 bottom, 1 right, 2 top, 3 left
            let e = |k: usize| match k {
                0 => (x + lerp(v[0], v[1]), y),
                1 => (x + 1.0, y + lerp(v[1], v[2])),
                2 => (x + 1.0 - lerp(v[2], v[3]), y + 1.0),
                _ => (x, y + 1.0 - lerp(v[3], v[0])),
            };
            let center_above = (v[0] + v[1] + v[2] + v[3]) / 4.0 > level;
            let pairs: &[(usize, usize)] = match case {
                1 | 14 => &[(3, 0)],
                2 | 13 => &[(0, 1)],
                3 | 12 => &[(3, 1)],
                4 | 11 => &[(1, 2)],
                6 | 9 => &[(0, 2)],
                7 | 8 => &[(3, 2)],
                5 if center_above => &[(3, 2), (0, 1)],
                5 => &[(3, 0), (1, 2)],
                10 if center_above => &[(3, 0), (1, 2)],
                _ => &[(3, 2), (0, 1)],
            };
            for &(a, b) in pairs {
                segs.push([e(a), e(b)]);
            }
        }
    }
    segs
}

/// Contour lines of a 2-D objective with trajectories drawn over them.
pub fn contour_svg(obj: &dyn Objective, bbox: [f64; 4], trajectories: &[(String, Vec<[f64; 2]>)]) -> Result<String> {
    let values = grid_values(obj, bbox)?;
    let levels = quantile_levels(&values);
    let fr = Frame {
        x0: bbox[0],
        x1: bbox[1],
        y0: bbox[2],
        y1: bbox[3],
    };
    let gx = |g: f64| bbox[0] + (bbox[1] - bbox[0]) * g / (GRID - 1) as f64;
    let gy = |g: f64| bbox[2] + (bbox[3] - bbox[2]) * g / (GRID - 1) as f64;

    let mut out = String::new();
    header(&mut out);
    axes(&mut out, &fr, "x1", "x2", false);
    for (k, level) in levels.iter().enumerate() {
        let shade = 40 + (k * 150) / LEVELS.max(1);
        let mut d = String::new();
        for [a, b] in marching_squares(&values, *level) {
            let _ = write!(
                d,
                "M{:.2} {:.2}L{:.2} {:.2}",
                fr.px(gx(a.0)),
                fr.py(gy(a.1)),
                fr.px(gx(b.0)),
                fr.py(gy(b.1))
            );
        }
        let _ = writeln!(
            out,
            r#"<path clip-path="url(#plot)" fill="none" stroke="rgb({shade},{shade},{shade})" stroke-width="0.8" d="{d}"/>"#
        );
    }
    for (i, (_, pts)) in trajectories.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let mut s = String::new();
        for k in thin(pts.len()) {
            let _ = write!(s, "{:.2},{:.2} ", fr.px(pts[k][0]), fr.py(pts[k][1]));
        }
        let _ = writeln!(
            out,
            r#"<polyline clip-path="url(#plot)" fill="none" stroke="{c}" stroke-width="1.5" points="{}"/>"#,
            s.trim_end()
        );
        if let Some(p) = pts.first() {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"#,
                fr.px(p[0]),
                fr.py(p[1])
            );
        }
    }
    legend(&mut out, &trajectories.iter().map(|t| t.0.clone()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::QuadraticForm;
    use nalgebra::DMatrix;

    fn series(label: &str, f: Vec<f64>) -> Series {
        Series {
            label: label.into(),
            t: (0..f.len()).map(|t| t as f64).collect(),
            f,
            events: vec![],
        }
    }

    fn polyline_ys(svg: &str) -> Vec<Vec<String>> {
        svg.lines()
            .filter(|l| l.starts_with("<polyline"))
            .map(|l| {
                let pts = l.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>");
                pts.split(' ').map(|p| p.split(',').nth(1).unwrap().to_string()).collect()
            })
            .collect()
    }

    #[test]
    fn constant_trace_is_horizontal() {
        let svg = objective_svg(&[series("agd", vec![1.5; 10])], false).unwrap();
        let ys = polyline_ys(&svg);
        assert_eq!(ys.len(), 1);
        assert!(ys[0].iter().all(|y| *y == ys[0][0]));
    }

    #[test]
    fn two_traces_two_labelled_polylines() {
        let svg = objective_svg(&[series("agd", vec![0.0, -1.0]), series("pagd", vec![0.0, -2.0])], false).unwrap();
        assert_eq!(polyline_ys(&svg).len(), 2);
        assert!(svg.contains(">agd</text>"));
        assert!(svg.contains(">pagd</text>"));
    }

    #[test]
    fn same_input_same_bytes() {
        let s = [series("pagd", (0..5000).map(|t| -(t as f64).sqrt()).collect())];
        assert_eq!(objective_svg(&s, true).unwrap(), objective_svg(&s, true).unwrap());
    }

    #[test]
    fn empty_trace_rejected() {
        assert!(objective_svg(&[series("x", vec![])], false).is_err());
        assert!(objective_svg(&[], false).is_err());
    }

    #[test]
    fn circle_level_set() {
        // f = x² + y² on a 201 grid; the level 1 contour lies on the unit circle
        let q = QuadraticForm::new(DMatrix::identity(2, 2), 1).unwrap();
        let bbox = [-2.0, 2.0, -2.0, 2.0];
        let vals = grid_values(&q, bbox).unwrap();
        let segs = marching_squares(&vals, 1.0);
        assert!(!segs.is_empty());
        let to = |g: f64| -2.0 + 4.0 * g / 200.0;
        for s in segs {
            for p in s {
                let r = (to(p.0).powi(2) + to(p.1).powi(2)).sqrt();
                assert!((r - 1.0).abs() < 2e-3, "{r}");
            }
        }
    }

    #[test]
    fn levels_are_sorted_quantiles() {
        let q = QuadraticForm::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]), 1).unwrap();
        let vals = grid_values(&q, [-2.5, 2.5, -2.5, 2.5]).unwrap();
        let lv = quantile_levels(&vals);
        assert_eq!(lv.len(), LEVELS);
        assert!(lv.windows(2).all(|w| w[0] <= w[1]));
    }
}
