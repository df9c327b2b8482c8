//! Order tracking: shaft-speed estimation, angular resampling and harmonic
//! amplitudes.
//!
//! The instantaneous shaft frequency is refined frame by frame from the 1X
//! peak near the tachometer value, smoothed with a 5-point median filter to
//! suppress jitter, and integrated to a shaft-angle curve. The signal is then
//! resampled at a fixed number of samples per revolution over a whole number
//! of revolutions so that every harmonic lands on the order grid.

use crate::dsp::filter::SosFilter;
use crate::dsp::spectrum::{hann, windowed_magnitudes, Spectrum, SpectrumKind};
use crate::error::{Error, Result};
use crate::signal::Signal;

pub const MEDIAN_WINDOW: usize = 5;
const TRACK_FRAME: usize = 4096;
const TRACK_HOP: usize = 2048;
const TRACK_PAD: usize = 4;
/// Speed refinement search band around the tachometer value (fraction).
const TRACK_BAND: f64 = 0.05;
/// Half-width, in orders, of the window an order amplitude is read from.
pub const ORDER_TOLERANCE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct OrderAnalysis {
    pub a1x: f64,
    pub a2x: f64,
    /// `a2x / a1x`, or 0 when `a1x` is 0.
    pub ratio_2x_1x: f64,
    pub harmonic_count: usize,
    /// Raw amplitudes at orders `1..=max_harmonics`.
    pub amplitudes: Vec<f64>,
    pub spectrum: Spectrum,
    /// Smoothed shaft-frequency track, one value per tracking frame (Hz).
    pub speed_track: Vec<f64>,
}

impl OrderAnalysis {
    /// Harmonic amplitudes divided by the largest of them.
    pub fn normalized_amplitudes(&self) -> Vec<f64> {
        let max = self.amplitudes.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            self.amplitudes.iter().map(|a| a / max).collect()
        } else {
            vec![0.0; self.amplitudes.len()]
        }
    }
}

/// Running median with a centred window that shrinks at the ends.
pub fn median_filter(x: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(x.len());
            let mut w: Vec<f64> = x[lo..hi].to_vec();
            w.sort_by(f64::total_cmp);
            let m = w.len();
            if m % 2 == 1 {
                w[m / 2]
            } else {
                0.5 * (w[m / 2 - 1] + w[m / 2])
            }
        })
        .collect()
}

/// Per-frame shaft frequency estimates (Hz), before smoothing.
fn raw_speed_track(sig: &Signal) -> Vec<f64> {
    let fs = sig.sample_rate;
    let nominal = sig.shaft_freq;
    let window = hann(TRACK_FRAME);
    let fft_len = TRACK_FRAME * TRACK_PAD;
    let res = fs / fft_len as f64;
    let lo = ((nominal * (1.0 - TRACK_BAND)) / res).floor() as usize;
    let hi = ((nominal * (1.0 + TRACK_BAND)) / res).ceil() as usize;

    let mut track = Vec::new();
    let mut start = 0;
    while start + TRACK_FRAME <= sig.samples.len() {
        let frame = &sig.samples[start..start + TRACK_FRAME];
        let mags = windowed_magnitudes(frame, &window, fft_len);
        let estimate = (lo.max(1)..=hi.min(mags.len() - 2))
            .max_by(|&a, &b| mags[a].total_cmp(&mags[b]))
            .filter(|&k| k > lo.max(1) && k < hi.min(mags.len() - 2) && mags[k] > 0.0)
            .map(|k| {
                // parabolic interpolation of the log magnitude
                let (l, c, r) = (mags[k - 1].ln(), mags[k].ln(), mags[k + 1].ln());
                let denom = l - 2.0 * c + r;
                let delta = if denom.abs() > 1e-300 { 0.5 * (l - r) / denom } else { 0.0 };
                (k as f64 + delta.clamp(-0.5, 0.5)) * res
            });
        track.push(match estimate {
            Some(f) if f.is_finite() => f,
            _ => nominal,
        });
        start += TRACK_HOP;
    }
    if track.is_empty() {
        track.push(nominal);
    }
    track
}

/// Resamples `x` onto a uniform shaft-angle grid. Returns the resampled block
/// covering a whole number of revolutions.
fn angular_resample(x: &[f64], fs: f64, track: &[f64], samples_per_rev: usize) -> Vec<f64> {
    let n = x.len();
    let centre = |j: usize| (j * TRACK_HOP + TRACK_FRAME / 2) as f64;
    // instantaneous frequency per sample by linear interpolation between frame centres
    let mut freq = Vec::with_capacity(n);
    let mut j = 0;
    for i in 0..n {
        let t = i as f64;
        while j + 1 < track.len() && centre(j + 1) <= t {
            j += 1;
        }
        let f = if t <= centre(0) || j + 1 >= track.len() {
            track[j.min(track.len() - 1)]
        } else {
            let w = (t - centre(j)) / (centre(j + 1) - centre(j));
            track[j] * (1.0 - w) + track[j + 1] * w
        };
        freq.push(f);
    }
    // shaft angle in revolutions at each sample (trapezoidal integration)
    let mut angle = Vec::with_capacity(n);
    let mut acc = 0.0;
    angle.push(0.0);
    for i in 1..n {
        acc += 0.5 * (freq[i - 1] + freq[i]) / fs;
        angle.push(acc);
    }
    let revs = acc.floor() as usize;
    let m = revs * samples_per_rev;
    let mut out = Vec::with_capacity(m);
    let mut i = 0;
    for k in 0..m {
        let target = k as f64 / samples_per_rev as f64;
        while i + 2 < n && angle[i + 1] <= target {
            i += 1;
        }
        let span = angle[i + 1] - angle[i];
        let w = if span > 0.0 { (target - angle[i]) / span } else { 0.0 };
        out.push(x[i] * (1.0 - w) + x[i + 1] * w);
    }
    out
}

pub fn order_features(
    sig: &Signal,
    tau: f64,
    max_harmonics: usize,
    samples_per_rev: usize,
) -> Result<OrderAnalysis> {
    if !(sig.shaft_freq > 0.0) || !sig.shaft_freq.is_finite() {
        return Err(Error::Metadata(format!(
            "shaft frequency must be positive, got {}",
            sig.shaft_freq
        )));
    }
    if max_harmonics == 0 {
        return Err(Error::config("max_harmonics must be at least 1"));
    }
    if !(sig.sample_rate > 2.0 * max_harmonics as f64 * sig.shaft_freq) {
        return Err(Error::config(format!(
            "sample rate {} Hz cannot resolve {} harmonics of {} Hz",
            sig.sample_rate, max_harmonics, sig.shaft_freq
        )));
    }
    if samples_per_rev < 4 * max_harmonics {
        return Err(Error::config("samples_per_rev must be at least 4 x max_harmonics"));
    }
    let fs = sig.sample_rate;

    let track = median_filter(&raw_speed_track(sig), MEDIAN_WINDOW);

    // anti-alias before dropping to the angular rate
    let mean_speed = track.iter().sum::<f64>() / track.len() as f64;
    let cutoff = (0.4 * samples_per_rev as f64 * mean_speed).min(0.45 * fs);
    let filtered = SosFilter::butter_lowpass(4, cutoff, fs).filtfilt(&sig.samples);
    let resampled = angular_resample(&filtered, fs, &track, samples_per_rev);
    if resampled.len() < 2 * samples_per_rev {
        return Err(Error::Length {
            needed: 2 * samples_per_rev,
            got: resampled.len(),
        });
    }

    let fft_len = (4 * resampled.len()).next_power_of_two();
    let window = hann(resampled.len());
    let mags = windowed_magnitudes(&resampled, &window, fft_len);
    let resolution = samples_per_rev as f64 / fft_len as f64;
    let spectrum = Spectrum {
        freqs: (0..mags.len()).map(|k| k as f64 * resolution).collect(),
        magnitudes: mags,
        kind: SpectrumKind::Order,
        resolution,
    };

    let amplitudes: Vec<f64> = (1..=max_harmonics)
        .map(|k| spectrum.max_in(k as f64 - ORDER_TOLERANCE, k as f64 + ORDER_TOLERANCE))
        .collect();
    let a1x = amplitudes[0];
    let a2x = amplitudes.get(1).copied().unwrap_or_else(|| {
        spectrum.max_in(2.0 - ORDER_TOLERANCE, 2.0 + ORDER_TOLERANCE)
    });
    let ratio_2x_1x = if a1x > 0.0 { a2x / a1x } else { 0.0 };
    let harmonic_count = amplitudes.iter().filter(|&&a| a > tau * a1x).count();

    Ok(OrderAnalysis {
        a1x,
        a2x,
        ratio_2x_1x,
        harmonic_count,
        amplitudes,
        spectrum,
        speed_track: track,
    })
}
