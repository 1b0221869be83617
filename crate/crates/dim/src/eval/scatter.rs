//! Scatter rendering: a standalone 800x800 SVG plus a (x, y, label) CSV.

use super::LatentEmbedding;
use crate::error::{DimError, Result};
use std::fmt::Write as _;
use std::path::Path;

const SIZE: f64 = 800.0;
const MARGIN: f64 = 50.0;

/// One color per digit.
const COLORS: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

pub fn render_svg(embedding: &LatentEmbedding) -> String {
    let xs = embedding.points.iter().map(|p| f64::from(p[0]));
    let ys = embedding.points.iter().map(|p| f64::from(p[1]));
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for x in xs {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
    }
    for y in ys {
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    let xspan = (xmax - xmin).max(1e-9);
    let yspan = (ymax - ymin).max(1e-9);
    let scale = (SIZE - 2.0 * MARGIN) / xspan.max(yspan);
    let sx = |x: f64| MARGIN + (x - xmin) * scale;
    let sy = |y: f64| SIZE - MARGIN - (y - ymin) * scale;

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#).unwrap();
    writeln!(
        svg,
        r#"<text x="{}" y="30" font-family="sans-serif" font-size="18" text-anchor="middle">internal model {}</text>"#,
        SIZE / 2.0,
        embedding.model_index
    )
    .unwrap();
    for (p, &label) in embedding.points.iter().zip(&embedding.labels) {
        writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}" fill-opacity="0.7"/>"#,
            sx(f64::from(p[0])),
            sy(f64::from(p[1])),
            COLORS[label as usize % 10]
        )
        .unwrap();
    }
    // Digit legend.
    for digit in 0..10usize {
        let y = 60.0 + digit as f64 * 20.0;
        writeln!(
            svg,
            r#"<circle cx="{}" cy="{}" r="5" fill="{}"/>"#,
            SIZE - 40.0,
            y,
            COLORS[digit]
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="14">{digit}</text>"#,
            SIZE - 28.0,
            y + 5.0
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn render_points_csv(embedding: &LatentEmbedding) -> String {
    let mut out = String::from("x,y,label\n");
    for (p, &label) in embedding.points.iter().zip(&embedding.labels) {
        writeln!(out, "{},{},{label}", p[0], p[1]).unwrap();
    }
    out
}

/// Write `<stem>.svg` and `<stem>.csv`.
pub fn emit_scatter(embedding: &LatentEmbedding, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| DimError::io(dir.display().to_string(), e))?;
    let svg_path = dir.join(format!("{stem}.svg"));
    std::fs::write(&svg_path, render_svg(embedding))
        .map_err(|e| DimError::io(svg_path.display().to_string(), e))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    std::fs::write(&csv_path, render_points_csv(embedding))
        .map_err(|e| DimError::io(csv_path.display().to_string(), e))
}
