// SPDX-License-Identifier: Apache-2.0

use std::fmt::Write;
use std::path::{Path, PathBuf};

use super::project::{LanguageTag, Projection2D};
use crate::error::{Error, Result};
use crate::probe::LayerScanResult;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN: f64 = 60.0;

/// Paths of a written figure and its data sidecar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Figure {
    pub svg: PathBuf,
    pub data: PathBuf,
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("csv")
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Vertical plotting range of a layer curve: from 0.05 below the lowest
/// mean up to 1.
pub fn layer_curve_y_range(means: &[f64]) -> (f64, f64) {
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min) - 0.05;
    (lo.min(0.95), 1.0)
}

fn svg_open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

/// Mean similarity per layer as a polyline of points, with a red dashed
/// vertical line at `peak`. The sidecar holds `layer,mean_sim,std`.
pub fn render_layer_curve(result: &LayerScanResult, peak: usize, path: &Path) -> Result<Figure> {
    let means = &result.per_layer_mean_sim;
    let n = means.len();
    if n == 0 || result.per_layer_std.len() != n || peak >= n {
        return Err(Error::Contract(format!(
            "layer curve with {n} points cannot mark layer {peak}"
        )));
    }
    let (y0, y1) = layer_curve_y_range(means);
    let x_of = |i: usize| {
        MARGIN
            + (WIDTH - 2.0 * MARGIN)
                * if n > 1 {
                    i as f64 / (n - 1) as f64
                } else {
                    0.5
                }
    };
    let y_of = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (v - y0) / (y1 - y0);

    let mut svg = String::new();
    svg_open(&mut svg, "Mean pair cosine similarity by layer");
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        svg,
        r#"<path class="axes" d="M{left},{top} L{left},{bottom} L{right},{bottom}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let v = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text class="tick" x="{:.3}" y="{:.3}" text-anchor="end" font-family="sans-serif" font-size="11">{v:.3}</text>"#,
            left - 6.0,
            y_of(v) + 4.0
        );
    }
    for i in 0..n {
        let _ = writeln!(
            svg,
            r#"<text class="tick" x="{:.3}" y="{:.3}" text-anchor="middle" font-family="sans-serif" font-size="11">{i}</text>"#,
            x_of(i),
            bottom + 16.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.3}" y="{:.3}" text-anchor="middle" font-family="sans-serif" font-size="12">layer</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0
    );
    let pts: Vec<String> = (0..n)
        .map(|i| format!("{:.3},{:.3}", x_of(i), y_of(means[i])))
        .collect();
    let _ = writeln!(
        svg,
        r#"<polyline class="curve" points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        pts.join(" ")
    );
    for i in 0..n {
        let _ = writeln!(
            svg,
            r#"<circle class="point" data-layer="{i}" cx="{:.3}" cy="{:.3}" r="4" fill="steelblue"/>"#,
            x_of(i),
            y_of(means[i])
        );
    }
    let px = x_of(peak);
    let _ = writeln!(
        svg,
        r#"<line class="peak-marker" x1="{px:.3}" y1="{top:.3}" x2="{px:.3}" y2="{bottom:.3}" stroke="red" stroke-dasharray="6,4" stroke-width="1.5"/>"#
    );
    svg.push_str("</svg>\n");

    let mut csv = String::from("layer,mean_sim,std\n");
    for i in 0..n {
        let _ = writeln!(csv, "{i},{},{}", means[i], result.per_layer_std[i]);
    }
    let data = sidecar(path);
    write(path, &svg)?;
    write(&data, &csv)?;
    Ok(Figure {
        svg: path.to_path_buf(),
        data,
    })
}

/// Scatter of a projection: blue source markers, red target markers, a
/// grey segment per pair link and a text label per point. The sidecar
/// holds `index,label,language,x,y,px,py`, where `px,py` are the exact
/// pixel coordinates written into the SVG.
pub fn render_projection(proj: &Projection2D, title: &str, path: &Path) -> Result<Figure> {
    let n = proj.points.len();
    if n == 0 {
        return Err(Error::Contract("projection has no points".into()));
    }
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for p in &proj.points {
        xmin = xmin.min(p[0]);
        xmax = xmax.max(p[0]);
        ymin = ymin.min(p[1]);
        ymax = ymax.max(p[1]);
    }
    let span = |lo: f64, hi: f64| if hi - lo > 0.0 { hi - lo } else { 1.0 };
    let (sx, sy) = (span(xmin, xmax), span(ymin, ymax));
    let pixel: Vec<(String, String)> = proj
        .points
        .iter()
        .map(|p| {
            let px = MARGIN + (WIDTH - 2.0 * MARGIN) * (p[0] - xmin) / sx;
            let py = HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (p[1] - ymin) / sy;
            (format!("{px:.3}"), format!("{py:.3}"))
        })
        .collect();

    let mut svg = String::new();
    svg_open(&mut svg, title);
    for &(s, t) in &proj.pair_links {
        let _ = writeln!(
            svg,
            r##"<line class="pair-link" x1="{}" y1="{}" x2="{}" y2="{}" stroke="#888888" stroke-width="1"/>"##,
            pixel[s].0, pixel[s].1, pixel[t].0, pixel[t].1
        );
    }
    for (i, (px, py)) in pixel.iter().enumerate() {
        let (class, color) = match proj.tags[i] {
            LanguageTag::Source => ("marker source", "blue"),
            LanguageTag::Target => ("marker target", "red"),
        };
        let _ = writeln!(
            svg,
            r#"<circle class="{class}" cx="{px}" cy="{py}" r="4" fill="{color}"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<text class="label" x="{px}" y="{py}" dx="6" dy="-6" font-family="sans-serif" font-size="10">{}</text>"#,
            escape(&proj.labels[i])
        );
    }
    svg.push_str("</svg>\n");

    let data = sidecar(path);
    let csv_err = |e: csv::Error| Error::io(&data, e.into());
    let mut w = csv::Writer::from_path(&data).map_err(csv_err)?;
    w.write_record(["index", "label", "language", "x", "y", "px", "py"])
        .map_err(csv_err)?;
    for (i, (px, py)) in pixel.iter().enumerate() {
        let lang = match proj.tags[i] {
            LanguageTag::Source => "source",
            LanguageTag::Target => "target",
        };
        w.write_record([
            i.to_string(),
            proj.labels[i].clone(),
            lang.to_string(),
            proj.points[i][0].to_string(),
            proj.points[i][1].to_string(),
            px.clone(),
            py.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&data, e))?;
    write(path, &svg)?;
    Ok(Figure {
        svg: path.to_path_buf(),
        data,
    })
}
