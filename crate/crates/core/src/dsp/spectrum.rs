//! Windowed magnitude spectra.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Signal;

/// FFT frame length used for every frequency-domain view.
pub const FRAME_LEN: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumKind {
    Fft,
    Order,
    Envelope,
}

/// One-sided magnitude spectrum. For [`SpectrumKind::Order`] the axis is in
/// shaft orders rather than Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    pub magnitudes: Vec<f64>,
    pub kind: SpectrumKind,
    pub resolution: f64,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// Index of the largest magnitude; first wins on ties.
    pub fn peak_index(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &m) in self.magnitudes.iter().enumerate() {
            if best.is_none_or(|(_, b)| m > b) {
                best = Some((i, m));
            }
        }
        best.map(|(i, _)| i)
    }

    /// Largest magnitude whose axis value lies within `[lo, hi]`.
    pub fn max_in(&self, lo: f64, hi: f64) -> f64 {
        let start = self.freqs.partition_point(|&f| f < lo);
        self.freqs[start..]
            .iter()
            .zip(&self.magnitudes[start..])
            .take_while(|(&f, _)| f <= hi)
            .map(|(_, &m)| m)
            .fold(0.0, f64::max)
    }

    pub fn total_magnitude(&self) -> f64 {
        self.magnitudes.iter().sum()
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) fn forward_plan(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

pub(crate) fn inverse_plan(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len))
}

/// Periodic Hann window (sum = n/2).
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Windowed, zero-padded, amplitude-corrected one-sided spectrum of a single
/// block. A tone of amplitude `a` centred on a bin reads `a`.
pub(crate) fn windowed_magnitudes(block: &[f64], window: &[f64], fft_len: usize) -> Vec<f64> {
    debug_assert_eq!(block.len(), window.len());
    debug_assert!(fft_len >= block.len());
    let mut buf: Vec<Complex64> = block
        .iter()
        .zip(window)
        .map(|(&x, &w)| Complex64::new(x * w, 0.0))
        .collect();
    buf.resize(fft_len, Complex64::new(0.0, 0.0));
    forward_plan(fft_len).process(&mut buf);

    let gain: f64 = window.iter().sum();
    let half = fft_len / 2;
    (0..=half)
        .map(|k| {
            let scale = if k == 0 || (k == half && fft_len.is_multiple_of(2)) {
                1.0
            } else {
                2.0
            };
            scale * buf[k].norm() / gain
        })
        .collect()
}

/// Averages Hann-windowed magnitude spectra of consecutive non-overlapping
/// `FRAME_LEN` frames. Trailing samples that do not fill a frame are ignored.
pub fn averaged_spectrum(samples: &[f64], sample_rate: f64, kind: SpectrumKind) -> Result<Spectrum> {
    if samples.len() < FRAME_LEN {
        return Err(Error::Length {
            needed: FRAME_LEN,
            got: samples.len(),
        });
    }
    let window = hann(FRAME_LEN);
    let frames = samples.len() / FRAME_LEN;
    let mut acc = vec![0.0; FRAME_LEN / 2 + 1];
    for frame in samples.chunks_exact(FRAME_LEN) {
        let mags = windowed_magnitudes(frame, &window, FRAME_LEN);
        for (a, m) in acc.iter_mut().zip(mags) {
            *a += m;
        }
    }
    let resolution = sample_rate / FRAME_LEN as f64;
    Ok(Spectrum {
        freqs: (0..acc.len()).map(|k| k as f64 * resolution).collect(),
        magnitudes: acc.into_iter().map(|a| a / frames as f64).collect(),
        kind,
        resolution,
    })
}

/// Hann-windowed, frame-averaged FFT magnitude spectrum of a signal.
pub fn fft_spectrum(sig: &Signal) -> Result<Spectrum> {
    averaged_spectrum(&sig.samples, sig.sample_rate, SpectrumKind::Fft)
}

/// Dominant frequency and magnitude-weighted spectral centroid.
pub fn freq_features(spec: &Spectrum) -> Result<(f64, f64)> {
    let total = spec.total_magnitude();
    if spec.is_empty() || !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateSpectrum(
            "spectrum has zero total magnitude".into(),
        ));
    }
    let dom = spec.freqs[spec.peak_index().expect("nonempty")];
    let centroid = spec
        .freqs
        .iter()
        .zip(&spec.magnitudes)
        .map(|(f, m)| f * m)
        .sum::<f64>()
        / total;
    Ok((dom, centroid))
}

/// Mean power per sample recovered from window-corrected frame periodograms
/// (Parseval check). For a stationary input it approximates `mean(x^2)`.
pub fn window_corrected_power(samples: &[f64]) -> Result<f64> {
    if samples.len() < FRAME_LEN {
        return Err(Error::Length {
            needed: FRAME_LEN,
            got: samples.len(),
        });
    }
    let window = hann(FRAME_LEN);
    let energy: f64 = window.iter().map(|w| w * w).sum();
    let plan = forward_plan(FRAME_LEN);
    let mut total = 0.0;
    let mut frames = 0usize;
    for frame in samples.chunks_exact(FRAME_LEN) {
        let mut buf: Vec<Complex64> = frame
            .iter()
            .zip(&window)
            .map(|(&x, &w)| Complex64::new(x * w, 0.0))
            .collect();
        plan.process(&mut buf);
        total += buf.iter().map(|c| c.norm_sqr()).sum::<f64>() / (FRAME_LEN as f64 * energy);
        frames += 1;
    }
    Ok(total / frames as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tones(parts: &[(f64, f64)], fs: f64, n: usize) -> Signal {
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                parts.iter().map(|(f, a)| a * (2.0 * PI * f * t).sin()).sum()
            })
            .collect();
        Signal::new("t", samples, fs, 60.0).unwrap()
    }

    /// Plain O(n^2) DFT magnitude at bin `k`, same window and scaling.
    fn dft_bin(frame: &[f64], k: usize) -> f64 {
        let n = frame.len();
        let w = hann(n);
        let (mut re, mut im) = (0.0, 0.0);
        for (i, (&x, &wi)) in frame.iter().zip(&w).enumerate() {
            let ang = -2.0 * PI * (k * i) as f64 / n as f64;
            re += x * wi * ang.cos();
            im += x * wi * ang.sin();
        }
        2.0 * re.hypot(im) / w.iter().sum::<f64>()
    }

    #[test]
    fn single_tone_peak_is_within_one_bin() {
        let s = tones(&[(60.0, 1.0)], 10_000.0, 20_000);
        let spec = fft_spectrum(&s).unwrap();
        let (dom, centroid) = freq_features(&spec).unwrap();
        assert!((dom - 60.0).abs() <= spec.resolution);
        assert!((centroid - 60.0).abs() <= spec.resolution);
        assert!((spec.resolution - 10_000.0 / 4096.0).abs() < 1e-12);
    }

    #[test]
    fn zero_signal_has_zero_spectrum() {
        let s = Signal::new("z", vec![0.0; 8192], 10_000.0, 60.0).unwrap();
        let spec = fft_spectrum(&s).unwrap();
        assert!(spec.magnitudes.iter().all(|&m| m == 0.0));
        assert!(matches!(freq_features(&spec), Err(Error::DegenerateSpectrum(_))));
    }

    #[test]
    fn short_signal_is_rejected() {
        assert!(matches!(
            averaged_spectrum(&[0.0; 100], 1000.0, SpectrumKind::Fft),
            Err(Error::Length { .. })
        ));
    }

    #[test]
    fn two_tone_ratio_matches_direct_dft() {
        let s = tones(&[(60.0, 1.0), (120.0, 0.5)], 10_000.0, 20_000);
        let spec = fft_spectrum(&s).unwrap();
        let fast = spec.max_in(100.0, 140.0) / spec.max_in(40.0, 80.0);

        let frames: Vec<&[f64]> = s.samples.chunks_exact(FRAME_LEN).collect();
        let peak = |lo: usize, hi: usize| {
            (lo..=hi)
                .map(|k| frames.iter().map(|f| dft_bin(f, k)).sum::<f64>() / frames.len() as f64)
                .fold(0.0, f64::max)
        };
        let oracle = peak(41, 57) / peak(17, 32);
        assert!((fast - oracle).abs() < 1e-9, "{fast} vs {oracle}");
        // Hann scalloping at these off-bin frequencies lifts the ratio above 0.5.
        assert!((oracle - 0.5536).abs() < 5e-3, "{oracle}");
    }

    #[test]
    fn equal_tones_centroid_is_midpoint() {
        let fs = 10_000.0;
        let f1 = 40.0 * fs / 4096.0;
        let f2 = 3.0 * f1;
        let s = tones(&[(f1, 1.0), (f2, 1.0)], fs, 16_384);
        let spec = fft_spectrum(&s).unwrap();
        let (_, c) = freq_features(&spec).unwrap();
        assert!((c - 2.0 * f1).abs() <= spec.resolution, "{c}");
    }

    #[test]
    fn parseval_white_noise() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..FRAME_LEN * 64).map(|_| normal.sample(&mut rng)).collect();
        let direct = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        let p = window_corrected_power(&x).unwrap();
        assert!((p / direct - 1.0).abs() < 0.01, "{p} vs {direct}");
    }
}
