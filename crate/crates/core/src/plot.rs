//! Minimal SVG line charts.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::harness::{Axis, ScalingReport};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub series: Vec<Series>,
}

/// What to draw from a scaling report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotStyle {
    /// Accuracy per grid point, or pass@k curves when the report has them.
    Accuracy,
    /// Mean executed steps per grid point.
    Steps,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|f| f * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

/// Render `chart` as a standalone SVG document.
pub fn render_svg(chart: &Chart) -> Result<String> {
    let points: Vec<(f64, f64)> = chart
        .series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .collect();
    if points.is_empty() {
        return Err(Error::InvalidArgument("nothing to plot".into()));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidArgument("non-finite plot coordinate".into()));
    }
    if chart.log_x && points.iter().any(|&(x, _)| x <= 0.0) {
        return Err(Error::InvalidArgument(
            "log axis needs positive x values".into(),
        ));
    }
    let tx = |x: f64| if chart.log_x { x.log10() } else { x };
    let (mut x0, mut x1) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(x, _)| {
            (a.min(tx(x)), b.max(tx(x)))
        });
    let (mut y0, mut y1) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(_, y)| {
            (a.min(y), b.max(y))
        });
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    y0 = y0.min(0.0);
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (tx(x) - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    let w = &mut svg;
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        w,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&chart.title)
    );
    let _ = writeln!(
        w,
        r#"<path d="M{LEFT:.2},{TOP:.2} V{:.2} H{:.2}" fill="none" stroke="black"/>"#,
        TOP + ph,
        LEFT + pw
    );

    let mut xticks: Vec<f64> = if chart.log_x {
        let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let stride = xs.len().div_ceil(10);
        xs.into_iter().step_by(stride).collect()
    } else {
        nice_ticks(x0, x1)
    };
    xticks.retain(|&x| (x0 - 1e-9..=x1 + 1e-9).contains(&tx(x)));
    for x in xticks {
        let _ = writeln!(
            w,
            r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="black"/><text x="{0:.2}" y="{3:.2}" text-anchor="middle">{4}</text>"#,
            px(x),
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 18.0,
            fmt_tick(x)
        );
    }
    for y in nice_ticks(y0, y1) {
        let _ = writeln!(
            w,
            r#"<line x1="{0:.2}" y1="{1:.2}" x2="{2:.2}" y2="{1:.2}" stroke="black"/><text x="{3:.2}" y="{4:.2}" text-anchor="end">{5}</text>"#,
            LEFT - 5.0,
            py(y),
            LEFT,
            LEFT - 8.0,
            py(y) + 4.0,
            fmt_tick(y)
        );
    }
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 15.0,
        escape(&chart.x_label)
    );
    let _ = writeln!(
        w,
        r#"<text x="18" y="{0:.2}" text-anchor="middle" transform="rotate(-90 18 {0:.2})">{1}</text>"#,
        TOP + ph / 2.0,
        escape(&chart.y_label)
    );

    for (i, s) in chart.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if s.points.len() > 1 {
            let coords: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            let _ = writeln!(
                w,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                coords.join(" ")
            );
        }
        for &(x, y) in &s.points {
            let _ = writeln!(
                w,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                px(x),
                py(y)
            );
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            w,
            r#"<rect x="{:.2}" y="{:.2}" width="12" height="3" fill="{color}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            LEFT + pw + 15.0,
            ly - 4.0,
            LEFT + pw + 32.0,
            ly,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn axis_label(axis: Axis) -> &'static str {
    match axis {
        Axis::Parallel => "samples k (count)",
        Axis::Diffusion => "diffusion steps (steps)",
        Axis::Sequential => "generation length (tokens)",
    }
}

/// Chart for a scaling report.
pub fn report_chart(report: &ScalingReport, style: PlotStyle) -> Result<Chart> {
    let log_x = matches!(report.axis, Axis::Parallel | Axis::Diffusion);
    let title = format!("{} scaling", report.axis);
    let grid_series = |label: &str, ys: &[f64]| Series {
        label: label.into(),
        points: report
            .grid
            .iter()
            .map(|&g| g as f64)
            .zip(ys.iter().copied())
            .collect(),
    };
    let chart = match (style, &report.pass_at_k) {
        (PlotStyle::Accuracy, Some(table)) => Chart {
            title,
            x_label: axis_label(Axis::Parallel).into(),
            y_label: "pass@k (accuracy)".into(),
            log_x: true,
            series: table
                .temperatures
                .iter()
                .zip(&table.curves)
                .map(|(t, curve)| Series {
                    label: format!("T = {t}"),
                    points: table
                        .ks
                        .iter()
                        .map(|&k| k as f64)
                        .zip(curve.iter().copied())
                        .collect(),
                })
                .collect(),
        },
        (PlotStyle::Accuracy, None) => Chart {
            title,
            x_label: axis_label(report.axis).into(),
            y_label: "accuracy".into(),
            log_x,
            series: vec![grid_series("accuracy", &report.accuracy)],
        },
        (PlotStyle::Steps, _) => Chart {
            title,
            x_label: axis_label(report.axis).into(),
            y_label: "executed steps (steps)".into(),
            log_x,
            series: vec![grid_series("mean steps", &report.mean_steps)],
        },
    };
    if chart.series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::InvalidArgument("empty report".into()));
    }
    Ok(chart)
}

pub fn emit_plot(report: &ScalingReport, style: PlotStyle) -> Result<String> {
    render_svg(&report_chart(report, style)?)
}
