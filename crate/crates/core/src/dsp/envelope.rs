use rustfft::num_complex::Complex64;

use crate::dsp::filter::SosFilter;
use crate::dsp::spectrum::{
    averaged_spectrum, forward_plan, inverse_plan, Spectrum, SpectrumKind, FRAME_LEN,
};
use crate::error::{Error, Result};
use crate::signal::Signal;

/// Relative variance floor for envelope kurtosis. A perfectly flat envelope
/// has zero variance; numerical ripple from the filter and FFT edges must not
/// read as impulsiveness.
const ENVELOPE_VARIANCE_FLOOR: f64 = 1e-4;

pub const BANDPASS_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeAnalysis {
    pub env_kurtosis: f64,
    pub env_peak_freq: f64,
    pub spectrum: Spectrum,
}

/// Analytic signal `x + j H{x}` built in the frequency domain.
pub fn analytic_signal(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    forward_plan(n).process(&mut buf);
    // keep DC (and Nyquist for even n), double positive, zero negative frequencies
    let half = n / 2;
    for (k, c) in buf.iter_mut().enumerate() {
        let gain = if k == 0 || (n.is_multiple_of(2) && k == half) {
            1.0
        } else if k <= (n - 1) / 2 {
            2.0
        } else {
            0.0
        };
        *c *= gain;
    }
    inverse_plan(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|c| *c *= scale);
    buf
}

/// Kurtosis with a variance floor relative to the squared mean.
fn regularized_kurtosis(x: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (m2, m4) = x.iter().fold((0.0, 0.0), |(m2, m4), v| {
        let d = (v - mean) * (v - mean);
        (m2 + d, m4 + d * d)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    if !(m2 > 0.0) {
        return Err(Error::DegenerateSignal("envelope has zero variance".into()));
    }
    let denom = m2 + ENVELOPE_VARIANCE_FLOOR * mean * mean;
    Ok(m4 / (denom * denom))
}

/// Band-pass (Butterworth, forward-backward), Hilbert demodulation, then
/// envelope statistics and the spectrum of the mean-removed envelope.
///
/// `trim` is the fraction of samples dropped from each end of the envelope
/// before statistics are taken, to exclude filter start-up transients.
pub fn envelope_spectrum(sig: &Signal, band: (f64, f64), trim: f64) -> Result<EnvelopeAnalysis> {
    let (lo, hi) = band;
    let nyquist = sig.sample_rate / 2.0;
    if !(lo > 0.0 && lo < hi && hi < nyquist) {
        return Err(Error::config(format!(
            "envelope band ({lo}, {hi}) must satisfy 0 < lo < hi < {nyquist}"
        )));
    }
    if !(0.0..0.25).contains(&trim) {
        return Err(Error::config("envelope trim fraction must lie in [0, 0.25)"));
    }
    if sig.samples.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateSignal("signal is identically zero".into()));
    }

    let filtered = SosFilter::butter_bandpass(BANDPASS_ORDER, lo, hi, sig.sample_rate)
        .filtfilt(&sig.samples);
    let envelope: Vec<f64> = analytic_signal(&filtered).iter().map(|c| c.norm()).collect();
    let cut = ((envelope.len() as f64 * trim) as usize)
        .min(envelope.len().saturating_sub(FRAME_LEN) / 2);
    let core = &envelope[cut..envelope.len() - cut];

    let env_kurtosis = regularized_kurtosis(core)?;
    let mean = core.iter().sum::<f64>() / core.len() as f64;
    let centred: Vec<f64> = core.iter().map(|v| v - mean).collect();
    let spectrum = averaged_spectrum(&centred, sig.sample_rate, SpectrumKind::Envelope)?;
    // DC carries no repetition rate
    let peak = spectrum
        .magnitudes
        .iter()
        .enumerate()
        .skip(1)
        .fold((1, f64::MIN), |best, (i, &m)| if m > best.1 { (i, m) } else { best })
        .0;
    Ok(EnvelopeAnalysis {
        env_kurtosis,
        env_peak_freq: spectrum.freqs[peak],
        spectrum,
    })
}
