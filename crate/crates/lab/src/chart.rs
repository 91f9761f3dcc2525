//! Static SVG line charts with min–max bands and a dashed baseline.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandPoint {
    pub x: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<BandPoint>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub baseline: Option<f64>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 120.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
const TICKS: usize = 5;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

fn class_token(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values
        .filter(|v| v.is_finite())
        .fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
}

fn padded(r: Option<(f64, f64)>, pad_frac: f64) -> (f64, f64) {
    match r {
        None => (0.0, 1.0),
        Some((lo, hi)) if hi - lo <= f64::EPSILON * hi.abs().max(1.0) => (lo - 0.5, hi + 0.5),
        Some((lo, hi)) => {
            let pad = (hi - lo) * pad_frac;
            (lo - pad, hi + pad)
        }
    }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }
}

/// Renders the chart. Identical input gives identical bytes.
pub fn render_linechart(chart: &LineChart) -> String {
    let points = || chart.series.iter().flat_map(|s| s.points.iter());
    let frame = Frame {
        x: padded(range(points().map(|p| p.x)), 0.0),
        y: padded(
            range(
                points()
                    .flat_map(|p| [p.min, p.max, p.mean])
                    .chain(chart.baseline),
            ),
            0.05,
        ),
    };
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect class="background" x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text class="title" x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        (x0 + x1) / 2.0,
        escape(&chart.title)
    );

    for i in 0..=TICKS {
        let t = i as f64 / TICKS as f64;
        let xv = frame.x.0 + t * (frame.x.1 - frame.x.0);
        let xp = frame.px(xv);
        let _ = writeln!(
            s,
            r##"<line class="tick" x1="{xp:.2}" y1="{y0:.2}" x2="{xp:.2}" y2="{:.2}" stroke="#000"/>"##,
            y0 + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text class="tick-label" x="{xp:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + 18.0,
            fmt_tick(xv)
        );
        let yv = frame.y.0 + t * (frame.y.1 - frame.y.0);
        let yp = frame.py(yv);
        let _ = writeln!(
            s,
            r##"<line class="tick" x1="{:.2}" y1="{yp:.2}" x2="{x0:.2}" y2="{yp:.2}" stroke="#000"/>"##,
            x0 - 5.0
        );
        let _ = writeln!(
            s,
            r#"<text class="tick-label" x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 8.0,
            yp + 4.0,
            fmt_tick(yv)
        );
    }

    for (k, series) in chart.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let class = class_token(&series.label);
        if !series.points.is_empty() {
            let mut poly = String::new();
            for p in &series.points {
                let _ = write!(poly, "{:.2},{:.2} ", frame.px(p.x), frame.py(p.max));
            }
            for p in series.points.iter().rev() {
                let _ = write!(poly, "{:.2},{:.2} ", frame.px(p.x), frame.py(p.min));
            }
            let _ = writeln!(
                s,
                r#"<polygon class="band {class}" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                poly.trim_end()
            );
        }
        for w in series.points.windows(2) {
            let _ = writeln!(
                s,
                r#"<line class="series {class}" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#,
                frame.px(w[0].x),
                frame.py(w[0].mean),
                frame.px(w[1].x),
                frame.py(w[1].mean)
            );
        }
        let ly = TOP + 16.0 + 18.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line class="legend-key {class}" x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            x1 + 12.0,
            x1 + 32.0
        );
        let _ = writeln!(
            s,
            r#"<text class="legend" x="{:.2}" y="{:.2}">{}</text>"#,
            x1 + 38.0,
            ly + 4.0,
            escape(&series.label)
        );
    }

    if let Some(b) = chart.baseline {
        let yp = frame.py(b);
        let _ = writeln!(
            s,
            r##"<line class="baseline" data-value="{b}" x1="{x0:.2}" y1="{yp:.2}" x2="{x1:.2}" y2="{yp:.2}" stroke="#444" stroke-width="1.5" stroke-dasharray="6 4"/>"##
        );
    }

    let _ = writeln!(
        s,
        r##"<line class="axis x-axis" x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}" stroke="#000"/>"##
    );
    let _ = writeln!(
        s,
        r##"<line class="axis y-axis" x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}" stroke="#000"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text class="axis-label x-label" x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 14.0,
        escape(&chart.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text class="axis-label y-label" x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(&chart.y_label)
    );
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e5).contains(&a) {
        format!("{v:.2e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Pixel row of `value` on the chart's y-axis.
pub fn y_pixel(chart: &LineChart, value: f64) -> f64 {
    let points = || chart.series.iter().flat_map(|s| s.points.iter());
    let y = padded(
        range(
            points()
                .flat_map(|p| [p.min, p.max, p.mean])
                .chain(chart.baseline),
        ),
        0.05,
    );
    Frame { x: (0.0, 1.0), y }.py(value)
}

pub fn emit_linechart(chart: &LineChart, path: &Path) -> Result<()> {
    std::fs::write(path, render_linechart(chart)).map_err(|e| LabError::io(path, e))
}
