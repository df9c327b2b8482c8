//! Minimal SVG writer for report figures.

use std::fmt::Write;

use crate::calibration::{ReliabilityBin, RiskCoverage};

use super::{format_tick, nice_ticks};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Area {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axes {
    pub area: Area,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub title: String,
    pub x_label: String,
    pub y_label: String,
}

impl Axes {
    pub fn new(area: Area, x_range: (f64, f64), y_range: (f64, f64)) -> Self {
        Axes {
            area,
            x_range,
            y_range,
            title: String::new(),
            x_label: String::new(),
            y_label: String::new(),
        }
    }

    pub fn px(&self, x: f64) -> f64 {
        let (lo, hi) = self.x_range;
        self.area.x0 + (x - lo) / (hi - lo) * (self.area.x1 - self.area.x0)
    }

    pub fn py(&self, y: f64) -> f64 {
        let (lo, hi) = self.y_range;
        self.area.y1 - (y - lo) / (hi - lo) * (self.area.y1 - self.area.y0)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub struct Document {
    body: String,
    width: u32,
    height: u32,
}

impl Document {
    pub fn new(width: u32, height: u32) -> Self {
        Document { body: String::new(), width, height }
    }

    pub fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, text: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.1}" y="{y:.1}" font-size="{size}" text-anchor="{anchor}">{}</text>"#,
            escape(text)
        );
    }

    pub fn line(&mut self, a: (f64, f64), b: (f64, f64), stroke: &str, dash: Option<&str>) {
        let dash = dash.map(|d| format!(r#" stroke-dasharray="{d}""#)).unwrap_or_default();
        let _ = writeln!(
            self.body,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{stroke}"{dash}/>"#,
            a.0, a.1, b.0, b.1
        );
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.1}" y="{y:.1}" width="{w:.1}" height="{h:.1}" fill="{fill}" stroke="{stroke}"/>"#
        );
    }

    /// Frame, ticks, tick labels, title and axis labels.
    pub fn axes(&mut self, ax: &Axes) {
        let a = ax.area;
        self.rect(a.x0, a.y0, a.x1 - a.x0, a.y1 - a.y0, "none", "#000");
        let xt = nice_ticks(ax.x_range.0, ax.x_range.1, 6);
        let xs = if xt.len() > 1 { xt[1] - xt[0] } else { 1.0 };
        for t in &xt {
            let x = ax.px(*t);
            self.line((x, a.y1), (x, a.y1 + 5.0), "#000", None);
            self.text(x, a.y1 + 18.0, 11.0, "middle", &format_tick(*t, xs));
        }
        let yt = nice_ticks(ax.y_range.0, ax.y_range.1, 5);
        let ys = if yt.len() > 1 { yt[1] - yt[0] } else { 1.0 };
        for t in &yt {
            let y = ax.py(*t);
            self.line((a.x0 - 5.0, y), (a.x0, y), "#000", None);
            self.text(a.x0 - 8.0, y + 4.0, 11.0, "end", &format_tick(*t, ys));
        }
        let title = ax.title.clone();
        let xl = ax.x_label.clone();
        let yl = ax.y_label.clone();
        self.text(a.x0, a.y0 - 8.0, 13.0, "start", &title);
        self.text((a.x0 + a.x1) / 2.0, a.y1 + 34.0, 12.0, "middle", &xl);
        let (cx, cy) = (a.x0 - 48.0, (a.y0 + a.y1) / 2.0);
        let _ = writeln!(
            self.body,
            r#"<text x="{cx:.1}" y="{cy:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 {cx:.1} {cy:.1})">{}</text>"#,
            escape(&yl)
        );
    }

    /// Dashed vertical guides with optional labels.
    pub fn vguides(&mut self, ax: &Axes, guides: &[(f64, Option<&str>)]) {
        for (x, label) in guides {
            if *x < ax.x_range.0 || *x > ax.x_range.1 {
                continue;
            }
            let px = ax.px(*x);
            self.line((px, ax.area.y0), (px, ax.area.y1), "#eeaa6e", Some("4 4"));
            if let Some(l) = label {
                self.text(px + 3.0, ax.area.y0 + 12.0, 10.0, "start", l);
            }
        }
    }

    /// Series clipped to the x range, y clamped to the y range.
    pub fn polyline(&mut self, ax: &Axes, pts: &[(f64, f64)], stroke: &str) {
        self.polyline_styled(ax, pts, stroke, None);
    }

    pub fn polyline_styled(&mut self, ax: &Axes, pts: &[(f64, f64)], stroke: &str, dash: Option<&str>) {
        let mut coords = String::new();
        for &(x, y) in pts {
            if x < ax.x_range.0 || x > ax.x_range.1 || !y.is_finite() {
                continue;
            }
            let y = y.clamp(ax.y_range.0, ax.y_range.1);
            let _ = write!(coords, "{:.1},{:.1} ", ax.px(x), ax.py(y));
        }
        let dash = dash.map(|d| format!(r#" stroke-dasharray="{d}""#)).unwrap_or_default();
        let _ = writeln!(
            self.body,
            r#"<polyline fill="none" stroke="{stroke}" stroke-width="1.2"{dash} points="{}"/>"#,
            coords.trim_end()
        );
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"#fff\"/>\n<g font-family=\"sans-serif\">\n{}</g>\n</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

const PALETTE: [&str; 4] = ["#1f4e9a", "#c0392b", "#27ae60", "#8e44ad"];

fn legend(doc: &mut Document, ax: &Axes, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = ax.area.y0 + 16.0 + 16.0 * i as f64;
        let x = ax.area.x1 - 190.0;
        doc.line((x, y - 4.0), (x + 20.0, y - 4.0), PALETTE[i % PALETTE.len()], None);
        doc.text(x + 26.0, y, 11.0, "start", name);
    }
}

fn unit_axes(title: &str, x_label: &str, y_label: &str) -> (Document, Axes) {
    let doc = Document::new(640, 480);
    let mut ax = Axes::new(
        Area { x0: 80.0, y0: 40.0, x1: 610.0, y1: 420.0 },
        (0.0, 1.0),
        (0.0, 1.0),
    );
    ax.title = title.to_string();
    ax.x_label = x_label.to_string();
    ax.y_label = y_label.to_string();
    (doc, ax)
}

/// Accuracy against mean confidence per bin, one line per system, with the
/// identity diagonal. Empty bins are skipped.
pub fn reliability_diagram(title: &str, systems: &[(&str, &[ReliabilityBin])]) -> String {
    let (mut doc, ax) = unit_axes(title, "Confidence", "Accuracy");
    doc.axes(&ax);
    doc.polyline_styled(&ax, &[(0.0, 0.0), (1.0, 1.0)], "#999", Some("5 4"));
    for (i, (_, bins)) in systems.iter().enumerate() {
        let pts: Vec<(f64, f64)> = bins
            .iter()
            .filter(|b| b.count > 0)
            .map(|b| (b.mean_confidence, b.accuracy))
            .collect();
        doc.polyline(&ax, &pts, PALETTE[i % PALETTE.len()]);
        for (x, y) in &pts {
            let _ = writeln!(
                doc.body,
                r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{}"/>"#,
                ax.px(*x),
                ax.py(*y),
                PALETTE[i % PALETTE.len()]
            );
        }
    }
    let names: Vec<&str> = systems.iter().map(|(n, _)| *n).collect();
    legend(&mut doc, &ax, &names);
    doc.finish()
}

/// Selective risk against coverage, one line per system.
pub fn risk_coverage_plot(title: &str, systems: &[(&str, &RiskCoverage)]) -> String {
    let (mut doc, ax) = unit_axes(title, "Coverage", "Risk");
    doc.axes(&ax);
    for (i, (_, rc)) in systems.iter().enumerate() {
        let pts: Vec<(f64, f64)> = rc.curve.iter().map(|p| (p.coverage, p.risk)).collect();
        doc.polyline(&ax, &pts, PALETTE[i % PALETTE.len()]);
    }
    let names: Vec<&str> = systems.iter().map(|(n, _)| *n).collect();
    legend(&mut doc, &ax, &names);
    doc.finish()
}
