//! CSV and SVG emitters for the tables and figures the CLI produces.
//! SVG output is plain generated markup (no renderer dependency), so
//! reruns are byte-stable.

use std::fmt::Write as _;

use crate::data::DatasetStats;
use crate::eval::{CrossRegionRow, MetricsReport};
use crate::model::MacItem;

/// Header of the per-model metrics table.
pub const METRICS_CSV_HEADER: &str = "model,params,macs,flops,miou,recall,precision,dice,pixel_acc";

/// One row of the metrics table; ratios are fractions in [0,1].
pub fn metrics_csv_row(model: &str, params: u64, macs: u64, report: &MetricsReport) -> String {
    format!(
        "{model},{params},{macs},{flops},{:.6},{:.6},{:.6},{:.6},{:.6}",
        report.miou,
        report.recall,
        report.precision,
        report.dice,
        report.pixel_accuracy,
        flops = 2 * macs,
    )
}

/// Header of the four-row cross-region table.
pub const XREGION_CSV_HEADER: &str = "experiment,miou,mrecall,mprecision,mf1,acc,delta_miou";

pub fn xregion_csv(rows: &[CrossRegionRow]) -> String {
    let mut out = String::from(XREGION_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let experiment = if r.train_region == r.test_region {
            format!("train_{}_within", r.train_region)
        } else {
            format!("{}_to_{}", r.train_region, r.test_region)
        };
        let delta = match r.delta_miou {
            Some(d) => format!("{d:.6}"),
            None => String::new(),
        };
        let _ = writeln!(
            out,
            "{experiment},{:.6},{:.6},{:.6},{:.6},{:.6},{delta}",
            r.metrics.miou,
            r.macro_metrics.mrecall,
            r.macro_metrics.mprecision,
            r.macro_metrics.mf1,
            r.metrics.pixel_accuracy,
        );
    }
    out
}

/// Dataset statistics table: `class,pixels,proportion`.
pub fn stats_csv(stats: &DatasetStats) -> String {
    let mut out = String::from("class,pixels,proportion\n");
    let _ = writeln!(
        out,
        "background,{},{:.6}",
        stats.background_pixels, stats.proportions.0
    );
    let _ = writeln!(
        out,
        "moraine,{},{:.6}",
        stats.moraine_pixels, stats.proportions.1
    );
    out
}

/// Per-layer complexity table: `layer,kind,macs`.
pub fn macs_csv(items: &[MacItem]) -> String {
    let mut out = String::from("layer,kind,macs\n");
    for item in items {
        let _ = writeln!(out, "{},{},{}", item.name, item.kind.name(), item.macs);
    }
    out
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const MARGIN: f64 = 56.0;

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">\n\
         <rect width=\"{SVG_W}\" height=\"{SVG_H}\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{title}</text>\n",
        SVG_W / 2.0
    )
}

/// Vertical bar chart with value labels.
pub fn bar_chart_svg(title: &str, labels: &[String], values: &[f64]) -> String {
    let mut out = svg_open(title);
    let max = values.iter().cloned().fold(0.0f64, f64::max).max(1e-12);
    let plot_w = SVG_W - 2.0 * MARGIN;
    let plot_h = SVG_H - 2.0 * MARGIN;
    let n = values.len().max(1) as f64;
    let slot = plot_w / n;
    let bar_w = slot * 0.6;
    for (i, (label, value)) in labels.iter().zip(values).enumerate() {
        let x = MARGIN + i as f64 * slot + (slot - bar_w) / 2.0;
        let h = plot_h * (value / max);
        let y = SVG_H - MARGIN - h;
        let _ = writeln!(
            out,
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{bar_w:.2}\" height=\"{h:.2}\" fill=\"#4878a8\"/>"
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{label}</text>",
            x + bar_w / 2.0,
            SVG_H - MARGIN + 16.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{value:.4}</text>",
            x + bar_w / 2.0,
            (y - 6.0).max(34.0)
        );
    }
    let _ = writeln!(
        out,
        "<line x1=\"{MARGIN}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        SVG_H - MARGIN,
        SVG_W - MARGIN,
        SVG_H - MARGIN
    );
    out.push_str("</svg>\n");
    out
}

/// Single-series line chart over (x, y) points.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> String {
    let mut out = svg_open(title);
    let plot_w = SVG_W - 2.0 * MARGIN;
    let plot_h = SVG_H - 2.0 * MARGIN;
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in points {
        x_min = x_min.min(*x);
        x_max = x_max.max(*x);
        y_min = y_min.min(*y);
        y_max = y_max.max(*y);
    }
    if points.is_empty() {
        x_min = 0.0;
        x_max = 1.0;
        y_min = 0.0;
        y_max = 1.0;
    }
    if (x_max - x_min).abs() < 1e-12 {
        x_max = x_min + 1.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_max = y_min + 1.0;
    }
    let map = |x: f64, y: f64| {
        (
            MARGIN + plot_w * (x - x_min) / (x_max - x_min),
            SVG_H - MARGIN - plot_h * (y - y_min) / (y_max - y_min),
        )
    };
    let path: Vec<String> = points
        .iter()
        .map(|(x, y)| {
            let (px, py) = map(*x, *y);
            format!("{px:.2},{py:.2}")
        })
        .collect();
    if !path.is_empty() {
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#a84848\" stroke-width=\"1.5\"/>",
            path.join(" ")
        );
    }
    let _ = writeln!(
        out,
        "<line x1=\"{MARGIN}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n\
         <line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{:.1}\" stroke=\"black\"/>",
        SVG_H - MARGIN,
        SVG_W - MARGIN,
        SVG_H - MARGIN,
        SVG_H - MARGIN
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{x_label}</text>",
        SVG_W / 2.0,
        SVG_H - 12.0
    );
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{y_label}</text>",
        SVG_H / 2.0,
        SVG_H / 2.0
    );
    let _ = writeln!(
        out,
        "<text x=\"{MARGIN}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\">{y_min:.4}..{y_max:.4}</text>",
        MARGIN - 8.0
    );
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{compute_metrics, ClassCounts, ConfusionCounts};

    fn sample_report() -> MetricsReport {
        compute_metrics(&ConfusionCounts {
            classes: [
                ClassCounts {
                    tp: 900,
                    fp: 25,
                    fn_: 25,
                    tn: 50,
                },
                ClassCounts {
                    tp: 50,
                    fp: 25,
                    fn_: 25,
                    tn: 900,
                },
            ],
        })
        .unwrap()
    }

    #[test]
    fn metrics_row_follows_header_order() {
        let row = metrics_csv_row("mcdnet", 100, 2000, &sample_report());
        assert_eq!(
            METRICS_CSV_HEADER.split(',').count(),
            row.split(',').count()
        );
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[0], "mcdnet");
        assert_eq!(fields[1], "100");
        assert_eq!(fields[2], "2000");
        assert_eq!(fields[3], "4000", "flops = 2 * macs");
    }

    #[test]
    fn svg_output_is_wellformed_and_stable() {
        let labels = vec!["background".to_string(), "moraine".to_string()];
        let a = bar_chart_svg("pixels", &labels, &[0.9, 0.1]);
        let b = bar_chart_svg("pixels", &labels, &[0.9, 0.1]);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.trim_end().ends_with("</svg>"));
        let line = line_chart_svg("loss", "epoch", "loss", &[(1.0, 0.5), (2.0, 0.25)]);
        assert!(line.contains("polyline"));
    }
}
