//! `curves`: normalized validation-loss curves from `selection.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sumsr_core::Error;

use crate::write_file;

pub const CURVES_HEADER: &str = "iteration,epoch,recon_norm,spar_norm,difference";

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub iteration: usize,
    pub epoch: usize,
    pub recon_norm: f64,
    pub spar_norm: f64,
    pub difference: f64,
}

pub fn parse_selection_csv(text: &str) -> Result<Vec<CurvePoint>, Error> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::Schema(format!("selection.csv lacks column {name}")))
    };
    let (ci, ce, cr, cs, cd) = (
        col("iteration")?,
        col("epoch")?,
        col("recon_norm")?,
        col("spar_norm")?,
        col("difference")?,
    );
    lines
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Schema(format!("selection.csv row {}: {line}", n + 2));
            let num = |i: usize| f.get(i).and_then(|v| v.parse::<f64>().ok()).ok_or_else(bad);
            let int = |i: usize| f.get(i).and_then(|v| v.parse::<usize>().ok()).ok_or_else(bad);
            Ok(CurvePoint {
                iteration: int(ci)?,
                epoch: int(ce)?,
                recon_norm: num(cr)?,
                spar_norm: num(cs)?,
                difference: num(cd)?,
            })
        })
        .collect()
}

pub fn curves_csv(points: &[CurvePoint]) -> String {
    let mut out = format!("{CURVES_HEADER}\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            p.iteration, p.epoch, p.recon_norm, p.spar_norm, p.difference
        );
    }
    out
}

const PANEL_W: f64 = 640.0;
const PANEL_H: f64 = 240.0;
const MARGIN: f64 = 48.0;
const SERIES: [(&str, &str); 3] = [
    ("recon_norm", "#1f77b4"),
    ("spar_norm", "#ff7f0e"),
    ("difference", "#2ca02c"),
];

fn value(p: &CurvePoint, series: usize) -> f64 {
    [p.recon_norm, p.spar_norm, p.difference][series]
}

/// One panel per iteration; the y axis spans [-1, 1], which holds all three series.
pub fn curves_svg(points: &[CurvePoint]) -> String {
    let mut iterations: Vec<usize> = points.iter().map(|p| p.iteration).collect();
    iterations.dedup();
    let height = MARGIN + iterations.len() as f64 * (PANEL_H + MARGIN);
    let width = PANEL_W + 2.0 * MARGIN;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, (name, color)) in SERIES.iter().enumerate() {
        let x = MARGIN + k as f64 * 120.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{x}" y1="20" x2="{}" y2="20" stroke="{color}" stroke-width="2"/>"#,
            x + 20.0
        );
        let _ = writeln!(svg, r#"<text x="{}" y="24">{name}</text>"#, x + 24.0);
    }
    for (panel, &it) in iterations.iter().enumerate() {
        let pts: Vec<&CurvePoint> = points.iter().filter(|p| p.iteration == it).collect();
        let top = MARGIN + panel as f64 * (PANEL_H + MARGIN);
        let max_epoch = pts.iter().map(|p| p.epoch).max().unwrap_or(1).max(2) as f64;
        let sx = |e: usize| MARGIN + (e as f64 - 1.0) / (max_epoch - 1.0) * PANEL_W;
        let sy = |v: f64| top + (1.0 - v) / 2.0 * PANEL_H;
        let _ = writeln!(
            svg,
            r##"<rect x="{MARGIN}" y="{top}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#888"/>"##
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{MARGIN}" y1="{0}" x2="{1}" y2="{0}" stroke="#ccc" stroke-dasharray="4 3"/>"##,
            sy(0.0),
            MARGIN + PANEL_W
        );
        for (v, label) in [(1.0, "1"), (0.0, "0"), (-1.0, "-1")] {
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="end">{label}</text>"#,
                MARGIN - 6.0,
                sy(v) + 4.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">epoch (iteration {it})</text>"#,
            MARGIN + PANEL_W / 2.0,
            top + PANEL_H + 30.0
        );
        for (k, (name, color)) in SERIES.iter().enumerate() {
            let coords: Vec<String> = pts
                .iter()
                .map(|p| format!("{:.2},{:.2}", sx(p.epoch), sy(value(p, k))))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline class="{name}" data-iteration="{it}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `curves.csv` and `curves.svg` next to the run's `selection.csv`.
pub fn curves(run: &Path) -> anyhow::Result<Vec<CurvePoint>> {
    let path = run.join("selection.csv");
    let text = fs::read_to_string(&path).map_err(|_| Error::Lookup(format!("missing {}", path.display())))?;
    let points = parse_selection_csv(&text)?;
    write_file(&run.join("curves.csv"), curves_csv(&points).as_bytes())?;
    write_file(&run.join("curves.svg"), curves_svg(&points).as_bytes())?;
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_renders() {
        let text =
            "iteration,epoch,recon_mean,spar_mean,recon_norm,spar_norm,difference,chosen_epoch,chosen_iteration\n\
                    1,1,5,0.2,0,1,-1,0,1\n1,2,6,0.1,1,0,1,1,1\n";
        let pts = parse_selection_csv(text).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[1].difference, 1.0);
        let svg = curves_svg(&pts);
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(parse_selection_csv("iteration,epoch\n1,1\n").is_err());
    }
}
