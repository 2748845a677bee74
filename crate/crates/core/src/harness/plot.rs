//! Self-contained SVG line charts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::HarnessError;

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotOptions {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub width: u32,
    pub height: u32,
}

impl Default for PlotOptions {
    fn default() -> Self {
        Self {
            title: String::new(),
            x_label: "k".into(),
            y_label: String::new(),
            log_y: false,
            width: 720,
            height: 440,
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn linear_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

/// Renders an SVG 1.1 chart with one `<path>` per series. All series must
/// share the same x axis.
pub fn render_svg(series: &[PlotSeries], opts: &PlotOptions) -> Result<String, HarnessError> {
    let first = series.first().ok_or_else(|| HarnessError::AxisMismatch("no series to plot".into()))?;
    if first.x.is_empty() {
        return Err(HarnessError::AxisMismatch(format!("series `{}` is empty", first.label)));
    }
    for s in series {
        if s.x.len() != s.y.len() {
            return Err(HarnessError::AxisMismatch(format!("series `{}` has {} x and {} y values", s.label, s.x.len(), s.y.len())));
        }
        if s.x != first.x {
            return Err(HarnessError::AxisMismatch(format!("series `{}` and `{}` differ in x", first.label, s.label)));
        }
    }

    let ty = |v: f64| if opts.log_y { v.log10() } else { v };
    let usable = |v: f64| v.is_finite() && (!opts.log_y || v > 0.0);
    let (x_lo, x_hi) = (first.x[0], *first.x.last().expect("nonempty"));
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in series.iter().flat_map(|s| s.y.iter().copied()).filter(|v| usable(*v)) {
        y_lo = y_lo.min(ty(v));
        y_hi = y_hi.max(ty(v));
    }
    if !y_lo.is_finite() {
        (y_lo, y_hi) = (0.0, 1.0);
    }
    if opts.log_y {
        y_lo = y_lo.floor();
        y_hi = y_hi.ceil();
    }
    if y_hi - y_lo < 1e-12 {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    let x_span = if x_hi > x_lo { x_hi - x_lo } else { 1.0 };

    let (w, h) = (opts.width as f64, opts.height as f64);
    let (left, right, top, bottom) = (80.0, 170.0, 40.0, 56.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let px = |x: f64| left + (x - x_lo) / x_span * pw;
    let py = |y: f64| top + (1.0 - (y - y_lo) / (y_hi - y_lo)) * ph;

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    if !opts.title.is_empty() {
        let _ = writeln!(svg, r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#, left + pw / 2.0, escape(&opts.title));
    }

    let y_ticks: Vec<f64> = if opts.log_y {
        let step = ((y_hi - y_lo) / 8.0).ceil().max(1.0);
        let mut t = y_lo;
        let mut v = Vec::new();
        while t <= y_hi + 1e-9 {
            v.push(t);
            t += step;
        }
        v
    } else {
        linear_ticks(y_lo, y_hi)
    };
    let _ = writeln!(svg, r##"<g stroke="#dddddd" stroke-width="1">"##);
    for &t in &y_ticks {
        let _ = writeln!(svg, r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#, left, py(t), left + pw, py(t));
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, r#"<g text-anchor="end">"#);
    for &t in &y_ticks {
        let label = if opts.log_y { format!("1e{}", t as i64) } else { tick_label(t) };
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}">{label}</text>"#, left - 6.0, py(t) + 4.0);
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, r#"<g text-anchor="middle">"#);
    for t in linear_ticks(x_lo, x_lo + x_span) {
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, px(t), top + ph + 18.0, tick_label(t));
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black" stroke-width="1"/>"#
    );
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 14.0, escape(&opts.x_label));
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(&opts.y_label)
    );

    for (i, s) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let mut d = String::new();
        let mut pen_down = false;
        for (&x, &y) in s.x.iter().zip(&s.y) {
            if !usable(y) {
                pen_down = false;
                continue;
            }
            let _ = write!(d, "{}{:.2},{:.2} ", if pen_down { 'L' } else { 'M' }, px(x), py(ty(y)));
            pen_down = true;
        }
        let _ = writeln!(
            svg,
            r#"<path d="{}" fill="none" stroke="{colour}" stroke-width="1.5"><title>{}</title></path>"#,
            d.trim_end(),
            escape(&s.label)
        );
        let ly = top + 14.0 + 20.0 * i as f64;
        let lx = left + pw + 14.0;
        let _ = writeln!(svg, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{colour}" stroke-width="2"/>"#, lx + 24.0);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 30.0, ly + 4.0, escape(&s.label));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_plot(series: &[PlotSeries], opts: &PlotOptions, path: &Path) -> Result<(), HarnessError> {
    let svg = render_svg(series, opts)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, svg)?;
    Ok(())
}
