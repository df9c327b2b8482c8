//! Four-chart diagnostic panel: time waveform, FFT spectrum, order spectrum
//! and envelope spectrum in a 2x2 grid.
//!
//! Rendering is integer-pixel, unantialiased and free of timestamps, so the
//! same panel always encodes to the same PNG bytes.

mod font;
pub mod svg;

use serde::{Deserialize, Serialize};

use crate::dsp::{Extraction, Spectrum};
use crate::error::{Error, Result};
use crate::signal::Signal;

type Rgb = [u8; 3];

const WHITE: Rgb = [255, 255, 255];
const BLACK: Rgb = [0, 0, 0];
const SERIES: Rgb = [31, 78, 154];
const GUIDE: Rgb = [238, 170, 110];
const TICK_TEXT: Rgb = [60, 60, 60];

pub const MIN_SIZE: (u32, u32) = (320, 240);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChartConfig {
    pub width: u32,
    pub height: u32,
    pub fft_max_hz: f64,
    pub order_max: f64,
    pub envelope_max_hz: f64,
    /// Length of the waveform excerpt, seconds.
    pub time_window_s: f64,
    /// Guide lines drawn at `k * f_s` for `k = 1..=guide_harmonics`.
    pub guide_harmonics: usize,
}

impl Default for ChartConfig {
    fn default() -> Self {
        ChartConfig {
            width: 1200,
            height: 900,
            fft_max_hz: 5000.0,
            order_max: 12.0,
            envelope_max_hz: 1000.0,
            time_window_s: 0.1,
            guide_harmonics: 10,
        }
    }
}

impl ChartConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < MIN_SIZE.0 || self.height < MIN_SIZE.1 {
            return Err(Error::Render(format!(
                "panel must be at least {}x{} pixels",
                MIN_SIZE.0, MIN_SIZE.1
            )));
        }
        if !(self.fft_max_hz > 0.0 && self.order_max > 0.0 && self.envelope_max_hz > 0.0) {
            return Err(Error::Render("axis maxima must be positive".into()));
        }
        if !(self.time_window_s > 0.0) {
            return Err(Error::Render("time window must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartPanel {
    pub title: String,
    /// Waveform excerpt starting at t = 0.
    pub excerpt: Vec<f64>,
    pub sample_rate: f64,
    pub shaft_freq: f64,
    pub fft: Spectrum,
    pub order: Spectrum,
    pub envelope: Spectrum,
}

impl ChartPanel {
    pub fn from_extraction(title: &str, sig: &Signal, ex: &Extraction, cfg: &ChartConfig) -> Self {
        let n = ((cfg.time_window_s * sig.sample_rate).round() as usize).clamp(2, sig.samples.len());
        ChartPanel {
            title: title.to_string(),
            excerpt: sig.samples[..n].to_vec(),
            sample_rate: sig.sample_rate,
            shaft_freq: sig.shaft_freq,
            fft: ex.spectra.fft.clone(),
            order: ex.spectra.order.clone(),
            envelope: ex.spectra.envelope.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    pub png: Vec<u8>,
    pub width: u32,
    pub height: u32,
}

/// Pixel rectangle, inclusive of `x0, y0`, exclusive of `x1, y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }
}

/// Which sub-chart, in reading order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chart {
    Time,
    Fft,
    Order,
    Envelope,
}

/// Text scale used for a panel of this size.
fn font_scale(width: u32) -> usize {
    if width >= 900 {
        2
    } else {
        1
    }
}

/// Plot-area rectangles (inside the axes frame) of the four sub-charts.
pub fn layout(width: u32, height: u32) -> [(Chart, Rect); 4] {
    let s = font_scale(width);
    let (w, h) = (width as usize, height as usize);
    let header = font::GLYPH_H * s + 14;
    let cell_w = w / 2;
    let cell_h = (h - header) / 2;
    let cell = |col: usize, row: usize| {
        let x0 = col * cell_w;
        let y0 = header + row * cell_h;
        Rect {
            x0: x0 + 12 * s * 6 / 2 + 14 * s,
            y0: y0 + font::GLYPH_H * s + 16,
            x1: x0 + cell_w - 12 * s,
            y1: y0 + cell_h - (2 * font::GLYPH_H * s + 22),
        }
    };
    [
        (Chart::Time, cell(0, 0)),
        (Chart::Fft, cell(1, 0)),
        (Chart::Order, cell(0, 1)),
        (Chart::Envelope, cell(1, 1)),
    ]
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<Rgb>,
}

impl Canvas {
    fn new(w: usize, h: usize) -> Self {
        Canvas { w, h, px: vec![WHITE; w * h] }
    }

    fn set(&mut self, x: i64, y: i64, c: Rgb) {
        if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
            self.px[y as usize * self.w + x as usize] = c;
        }
    }

    fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.set(x, y, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn dashed_vline(&mut self, x: i64, y0: i64, y1: i64, c: Rgb) {
        for y in y0..=y1 {
            if (y - y0) % 8 < 4 {
                self.set(x, y, c);
            }
        }
    }

    fn text(&mut self, x: i64, y: i64, text: &str, scale: usize, c: Rgb) {
        font::rasterize(text, scale, |dx, dy| self.set(x + dx as i64, y + dy as i64, c));
    }

    fn frame(&mut self, r: Rect, c: Rgb) {
        let (x0, y0, x1, y1) = (r.x0 as i64 - 1, r.y0 as i64 - 1, r.x1 as i64, r.y1 as i64);
        self.line(x0, y0, x1, y0, c);
        self.line(x0, y1, x1, y1, c);
        self.line(x0, y0, x0, y1, c);
        self.line(x1, y0, x1, y1, c);
    }

    fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.w as u32, self.h as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc
                .write_header()
                .map_err(|e| Error::Render(format!("png header: {e}")))?;
            let data: Vec<u8> = self.px.iter().flatten().copied().collect();
            writer
                .write_image_data(&data)
                .map_err(|e| Error::Render(format!("png data: {e}")))?;
        }
        Ok(out)
    }
}

/// Tick positions at a 1/2/5 step giving roughly `target` intervals.
pub fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

pub fn format_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10()).ceil() as usize };
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s.trim_start_matches(['-', '0', '.']).is_empty() {
        s[1..].to_string()
    } else {
        s
    }
}

/// Series data and axis ranges for one sub-chart.
pub(crate) struct Plot<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub guides: Vec<(f64, Option<String>)>,
}

fn spectrum_plot<'a>(
    title: &'a str,
    x_label: &'a str,
    spec: &Spectrum,
    x_max: f64,
    guides: Vec<(f64, Option<String>)>,
) -> Result<Plot<'a>> {
    if spec.is_empty() {
        return Err(Error::Render(format!("{title}: empty spectrum")));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = spec
        .freqs
        .iter()
        .zip(&spec.magnitudes)
        .filter(|(f, _)| **f <= x_max)
        .map(|(f, m)| (*f, *m))
        .unzip();
    let peak = ys.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::Render(format!("{title}: spectrum has no magnitude to plot")));
    }
    Ok(Plot {
        title,
        x_label,
        y_label: "AMPLITUDE",
        xs,
        ys,
        x_range: (0.0, x_max),
        y_range: (0.0, 1.1 * peak),
        guides,
    })
}

pub(crate) fn panel_plots<'a>(panel: &'a ChartPanel, cfg: &ChartConfig) -> Result<[Plot<'a>; 4]> {
    if panel.excerpt.len() < 2 {
        return Err(Error::Render("waveform excerpt is empty".into()));
    }
    if !(panel.shaft_freq > 0.0) || !(panel.sample_rate > 0.0) {
        return Err(Error::Render("panel metadata must be positive".into()));
    }
    let amp = panel.excerpt.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !amp.is_finite() {
        return Err(Error::Render("waveform is not finite".into()));
    }
    let amp = if amp > 0.0 { 1.1 * amp } else { 1.0 };
    let duration = (panel.excerpt.len() - 1) as f64 / panel.sample_rate;
    let time = Plot {
        title: "TIME WAVEFORM",
        x_label: "TIME (S)",
        y_label: "AMPLITUDE",
        xs: (0..panel.excerpt.len()).map(|i| i as f64 / panel.sample_rate).collect(),
        ys: panel.excerpt.clone(),
        x_range: (0.0, duration),
        y_range: (-amp, amp),
        guides: Vec::new(),
    };
    let fft_guides = (1..=cfg.guide_harmonics)
        .map(|k| k as f64 * panel.shaft_freq)
        .filter(|f| *f <= cfg.fft_max_hz)
        .map(|f| (f, None))
        .collect();
    let order_guides = (1..=cfg.order_max.floor() as usize)
        .map(|k| (k as f64, (k <= 2).then(|| format!("{k}X"))))
        .collect();
    Ok([
        time,
        spectrum_plot("FFT SPECTRUM", "FREQUENCY (HZ)", &panel.fft, cfg.fft_max_hz, fft_guides)?,
        spectrum_plot("ORDER SPECTRUM", "ORDER", &panel.order, cfg.order_max, order_guides)?,
        spectrum_plot(
            "ENVELOPE SPECTRUM",
            "FREQUENCY (HZ)",
            &panel.envelope,
            cfg.envelope_max_hz,
            Vec::new(),
        )?,
    ])
}

fn draw_plot(cv: &mut Canvas, r: Rect, p: &Plot<'_>, s: usize) {
    let (x_lo, x_hi) = p.x_range;
    let (y_lo, y_hi) = p.y_range;
    let px = |x: f64| r.x0 as f64 + (x - x_lo) / (x_hi - x_lo) * (r.width() - 1) as f64;
    let py = |y: f64| (r.y1 - 1) as f64 - (y - y_lo) / (y_hi - y_lo) * (r.height() - 1) as f64;

    for (x, label) in &p.guides {
        let gx = px(*x).round() as i64;
        cv.dashed_vline(gx, r.y0 as i64, r.y1 as i64 - 1, GUIDE);
        if let Some(l) = label {
            cv.text(gx + 3, r.y0 as i64 + 2, l, s, GUIDE);
        }
    }

    let mut prev: Option<(i64, i64)> = None;
    for (&x, &y) in p.xs.iter().zip(&p.ys) {
        if x < x_lo || x > x_hi {
            prev = None;
            continue;
        }
        let pt = (
            px(x).round() as i64,
            py(y.clamp(y_lo, y_hi)).round() as i64,
        );
        match prev {
            Some((x0, y0)) => cv.line(x0, y0, pt.0, pt.1, SERIES),
            None => cv.set(pt.0, pt.1, SERIES),
        }
        prev = Some(pt);
    }

    cv.frame(r, BLACK);
    let tick_len = 4 * s as i64;
    let xt = nice_ticks(x_lo, x_hi, 6);
    let x_step = if xt.len() > 1 { xt[1] - xt[0] } else { 1.0 };
    for &t in &xt {
        let x = px(t).round() as i64;
        cv.line(x, r.y1 as i64, x, r.y1 as i64 + tick_len, BLACK);
        let label = format_tick(t, x_step);
        let w = font::text_width(&label, s) as i64;
        cv.text(x - w / 2, r.y1 as i64 + tick_len + 3, &label, s, TICK_TEXT);
    }
    let yt = nice_ticks(y_lo, y_hi, 4);
    let y_step = if yt.len() > 1 { yt[1] - yt[0] } else { 1.0 };
    for &t in &yt {
        let y = py(t).round() as i64;
        cv.line(r.x0 as i64 - 1 - tick_len, y, r.x0 as i64 - 1, y, BLACK);
        let label = format_tick(t, y_step);
        let w = font::text_width(&label, s) as i64;
        cv.text(r.x0 as i64 - tick_len - 4 - w, y - (3 * s) as i64, &label, s, TICK_TEXT);
    }
    let xw = font::text_width(p.x_label, s) as i64;
    let label_y = r.y1 as i64 + tick_len + 3 + (font::GLYPH_H * s) as i64 + 4;
    cv.text((r.x0 + r.x1) as i64 / 2 - xw / 2, label_y, p.x_label, s, BLACK);
    cv.text(r.x0 as i64, r.y0 as i64 - (font::GLYPH_H * s) as i64 - 6, p.title, s, BLACK);
    let yw = font::text_width(p.y_label, s) as i64;
    cv.text(r.x1 as i64 - yw, r.y0 as i64 - (font::GLYPH_H * s) as i64 - 6, p.y_label, s, TICK_TEXT);
}

/// Renders the panel to PNG at the configured size.
pub fn render_panel(panel: &ChartPanel, cfg: &ChartConfig) -> Result<RasterImage> {
    cfg.validate()?;
    let plots = panel_plots(panel, cfg)?;
    let s = font_scale(cfg.width);
    let mut cv = Canvas::new(cfg.width as usize, cfg.height as usize);
    cv.text(12, 7, &panel.title, s, BLACK);
    for ((_, rect), plot) in layout(cfg.width, cfg.height).iter().zip(&plots) {
        draw_plot(&mut cv, *rect, plot, s);
    }
    Ok(RasterImage {
        png: cv.encode()?,
        width: cfg.width,
        height: cfg.height,
    })
}

/// Same panel as scalable vector graphics, for reports.
pub fn render_panel_svg(panel: &ChartPanel, cfg: &ChartConfig) -> Result<String> {
    cfg.validate()?;
    let plots = panel_plots(panel, cfg)?;
    let mut doc = svg::Document::new(cfg.width, cfg.height);
    doc.text(12.0, 22.0, 16.0, "start", &panel.title);
    for ((_, r), p) in layout(cfg.width, cfg.height).iter().zip(&plots) {
        let area = svg::Area {
            x0: r.x0 as f64,
            y0: r.y0 as f64,
            x1: r.x1 as f64,
            y1: r.y1 as f64,
        };
        let mut axes = svg::Axes::new(area, p.x_range, p.y_range);
        axes.title = p.title.to_string();
        axes.x_label = p.x_label.to_string();
        axes.y_label = p.y_label.to_string();
        let guides: Vec<(f64, Option<&str>)> =
            p.guides.iter().map(|(x, l)| (*x, l.as_deref())).collect();
        doc.axes(&axes);
        doc.vguides(&axes, &guides);
        let pts: Vec<(f64, f64)> = p.xs.iter().copied().zip(p.ys.iter().copied()).collect();
        doc.polyline(&axes, &pts, "#1f4e9a");
    }
    Ok(doc.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks() {
        assert_eq!(nice_ticks(0.0, 5000.0, 6), vec![0.0, 1000.0, 2000.0, 3000.0, 4000.0, 5000.0]);
        assert_eq!(nice_ticks(0.0, 12.0, 6), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0]);
        assert_eq!(format_tick(0.25, 0.05), "0.25");
        assert_eq!(format_tick(-0.0, 0.5), "0.0");
    }

    fn imbalance_panel() -> ChartPanel {
        use crate::dsp::{extract_all, FeatureConfig};
        use crate::synth::{synthesize, SynthConfig};
        use crate::FaultClass;
        let sig = synthesize(FaultClass::Imbalance, &SynthConfig::default()).unwrap();
        let ex = extract_all(&sig, &FeatureConfig::default()).unwrap();
        ChartPanel::from_extraction("case 1", &sig, &ex, &ChartConfig::default())
    }

    fn decode(png_bytes: &[u8]) -> (u32, u32, Vec<u8>) {
        let dec = png::Decoder::new(std::io::Cursor::new(png_bytes));
        let mut reader = dec.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        buf.truncate(info.buffer_size());
        (info.width, info.height, buf)
    }

    #[test]
    fn renders_requested_size_deterministically() {
        let panel = imbalance_panel();
        let cfg = ChartConfig::default();
        let a = render_panel(&panel, &cfg).unwrap();
        let b = render_panel(&panel, &cfg).unwrap();
        assert_eq!(a.png, b.png);
        let (w, h, _) = decode(&a.png);
        assert_eq!((w, h), (1200, 900));
        let small = ChartConfig { width: 640, height: 480, ..cfg };
        let (w, h, _) = decode(&render_panel(&panel, &small).unwrap().png);
        assert_eq!((w, h), (640, 480));
    }

    #[test]
    fn fft_peak_column_sits_on_shaft_frequency() {
        let panel = imbalance_panel();
        let cfg = ChartConfig::default();
        let (w, _, px) = decode(&render_panel(&panel, &cfg).unwrap().png);
        let (_, r) = layout(cfg.width, cfg.height)[1];
        let darkness = |x: usize| -> u64 {
            (r.y0 + 1..r.y1 - 1)
                .map(|y| {
                    let i = (y * w as usize + x) * 3;
                    765 - (px[i] as u64 + px[i + 1] as u64 + px[i + 2] as u64)
                })
                .sum()
        };
        let best = (r.x0 + 1..r.x1 - 1).max_by_key(|&x| (darkness(x), std::cmp::Reverse(x))).unwrap();
        let expected = r.x0 as f64 + 60.0 / cfg.fft_max_hz * (r.width() - 1) as f64;
        assert!(
            (best as f64 - expected).abs() <= 0.01 * cfg.width as f64,
            "peak column {best}, expected {expected:.1}"
        );
    }

    #[test]
    fn rejects_empty_or_flat_data() {
        let mut panel = imbalance_panel();
        let cfg = ChartConfig::default();
        panel.fft.magnitudes.iter_mut().for_each(|m| *m = 0.0);
        assert!(matches!(render_panel(&panel, &cfg), Err(Error::Render(_))));
        let mut panel = imbalance_panel();
        panel.envelope.freqs.clear();
        panel.envelope.magnitudes.clear();
        assert!(render_panel(&panel, &cfg).is_err());
        let tiny = ChartConfig { width: 100, height: 80, ..cfg };
        assert!(render_panel(&imbalance_panel(), &tiny).is_err());
    }

    #[test]
    fn svg_panel_has_four_series() {
        let s = render_panel_svg(&imbalance_panel(), &ChartConfig::default()).unwrap();
        assert_eq!(s.matches("<polyline").count(), 4);
    }

    #[test]
    fn layout_fits() {
        for (_, r) in layout(1200, 900) {
            assert!(r.x1 <= 1200 && r.y1 <= 900 && r.width() > 300 && r.height() > 250);
        }
    }
}
