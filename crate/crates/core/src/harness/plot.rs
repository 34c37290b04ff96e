//! Deterministic SVG line plots of CSV columns.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::fit_line;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const TICKS: usize = 5;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotSpec {
    /// CSV file, relative to the output directory when used by the harness.
    pub source: String,
    pub x: String,
    pub y: String,
    /// Column splitting rows into separate series.
    pub group: Option<String>,
    pub log_x: bool,
    pub log_y: bool,
    /// Annotate each series with its least-squares slope (in plotted
    /// coordinates, so a log-log slope on log axes).
    pub fit: bool,
    pub title: String,
}

impl Default for PlotSpec {
    fn default() -> Self {
        PlotSpec {
            source: String::new(),
            x: "x".into(),
            y: "y".into(),
            group: None,
            log_x: false,
            log_y: false,
            fit: false,
            title: String::new(),
        }
    }
}

impl PlotSpec {
    pub fn line(source: &str, x: &str, y: &str) -> Self {
        PlotSpec { source: source.into(), x: x.into(), y: y.into(), ..Default::default() }
    }

    pub fn loglog(source: &str, x: &str, y: &str) -> Self {
        PlotSpec { log_x: true, log_y: true, fit: true, ..Self::line(source, x, y) }
    }

    pub fn grouped(mut self, column: &str) -> Self {
        self.group = Some(column.into());
        self
    }

    pub fn titled(mut self, title: &str) -> Self {
        self.title = title.into();
        self
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotOutcome {
    pub svg: String,
    /// Fitted slope per series, by group label.
    pub slopes: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

/// Reads `path` and plots it.
pub fn plot_file(path: &Path, spec: &PlotSpec) -> Result<PlotOutcome> {
    let text = fs::read_to_string(path)?;
    plot(&text, spec)
}

type Series = BTreeMap<String, Vec<(f64, f64)>>;

fn read_series(csv_text: &str, spec: &PlotSpec) -> Result<(Series, usize)> {
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let header = reader.headers()?.clone();
    let column = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (xi, yi) = (column(&spec.x)?, column(&spec.y)?);
    let gi = spec.group.as_deref().map(column).transpose()?;
    let mut series = Series::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record?;
        rows += 1;
        let parse = |i: usize| record.get(i).and_then(|v| v.trim().parse::<f64>().ok());
        let (Some(x), Some(y)) = (parse(xi), parse(yi)) else { continue };
        let keep = |v: f64, log: bool| v.is_finite() && (!log || v > 0.0);
        if !keep(x, spec.log_x) || !keep(y, spec.log_y) {
            continue;
        }
        let tx = if spec.log_x { x.log10() } else { x };
        let ty = if spec.log_y { y.log10() } else { y };
        let label = gi.and_then(|i| record.get(i)).unwrap_or(&spec.y).to_string();
        series.entry(label).or_default().push((tx, ty));
    }
    Ok((series, rows))
}

fn tick_label(v: f64, log: bool) -> String {
    let value = if log { 10f64.powf(v) } else { v };
    if value == 0.0 {
        "0".into()
    } else if value.abs() >= 1e4 || value.abs() < 1e-2 {
        format!("{value:.2e}")
    } else {
        format!("{value:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

/// Renders the columns of `csv_text` selected by `spec` as an SVG line
/// plot of fixed size.
pub fn plot(csv_text: &str, spec: &PlotSpec) -> Result<PlotOutcome> {
    let (series, rows) = read_series(csv_text, spec)?;
    let mut warnings = Vec::new();
    if rows <= 1 {
        warnings.push(format!("{rows} data row(s): plotted without a fit"));
    }
    let (x0, x1) = span(series.values().flatten().map(|p| p.0));
    let (y0, y1) = span(series.values().flatten().map(|p| p.1));
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * (WIDTH - LEFT - RIGHT);
    let sy = |y: f64| HEIGHT - BOTTOM - (y - y0) / (y1 - y0) * (HEIGHT - TOP - BOTTOM);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="DejaVu Sans, sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(&spec.title));
    let (left, right, top, bottom) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(
        svg,
        r#"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" fill="none" stroke="black"/>"#
    );
    for i in 0..TICKS {
        let f = i as f64 / (TICKS - 1) as f64;
        let (tx, ty) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (px, py) = (sx(tx), sy(ty));
        let _ = writeln!(svg, r#"<line x1="{px:.2}" y1="{bottom}" x2="{px:.2}" y2="{}" stroke="black"/>"#, bottom + 5.0);
        let _ = writeln!(
            svg,
            r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#,
            bottom + 18.0,
            tick_label(tx, spec.log_x)
        );
        let _ = writeln!(svg, r#"<line x1="{}" y1="{py:.2}" x2="{left}" y2="{py:.2}" stroke="black"/>"#, left - 5.0);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 8.0,
            py + 4.0,
            tick_label(ty, spec.log_y)
        );
    }
    let axis = |name: &str, log: bool| if log { format!("{name} (log scale)") } else { name.to_string() };
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (left + right) / 2.0,
        HEIGHT - 15.0,
        escape(&axis(&spec.x, spec.log_x))
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        (top + bottom) / 2.0,
        escape(&axis(&spec.y, spec.log_y))
    );

    let mut slopes = BTreeMap::new();
    for (idx, (label, points)) in series.iter().enumerate() {
        let colour = PALETTE[idx % PALETTE.len()];
        let mut pts = points.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
        if pts.len() > 1 {
            let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#, path.join(" "));
        }
        for (x, y) in &pts {
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{colour}"/>"#, sx(*x), sy(*y));
        }
        let mut legend = escape(label);
        if spec.fit && pts.len() >= 2 {
            let (xs, ys): (Vec<f64>, Vec<f64>) = pts.iter().cloned().unzip();
            if let Some(fit) = fit_line(&xs, &ys) {
                slopes.insert(label.clone(), fit.slope);
                let _ = write!(legend, " (slope {:.3})", fit.slope);
                let (a, b) = (pts[0].0, pts[pts.len() - 1].0);
                let _ = writeln!(
                    svg,
                    r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{colour}" stroke-dasharray="4 3"/>"#,
                    sx(a),
                    sy(fit.intercept + fit.slope * a),
                    sx(b),
                    sy(fit.intercept + fit.slope * b)
                );
            }
        }
        let ly = top + 14.0 + 16.0 * idx as f64;
        let _ = writeln!(svg, r#"<rect x="{}" y="{}" width="10" height="10" fill="{colour}"/>"#, left + 10.0, ly - 9.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{ly}">{legend}</text>"#, left + 26.0);
    }
    if spec.fit && rows > 1 && slopes.is_empty() {
        warnings.push("no series had two usable points: plotted without a fit".into());
    }
    svg.push_str("</svg>\n");
    Ok(PlotOutcome { svg, slopes, warnings })
}
