//! Feature extraction: time statistics, FFT, order and envelope analysis.

pub mod envelope;
pub mod filter;
pub mod order;
pub mod spectrum;
pub mod time;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Signal;

pub use envelope::{envelope_spectrum, EnvelopeAnalysis};
pub use order::{order_features, OrderAnalysis};
pub use spectrum::{fft_spectrum, freq_features, Spectrum, SpectrumKind};
pub use time::{time_features, TimeFeatures};

pub const FEATURE_COUNT: usize = 13;

/// Column names, in vector order.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "rms",
    "crest_factor",
    "kurtosis",
    "impulse_factor",
    "clearance_factor",
    "dominant_freq",
    "spectral_centroid",
    "a1x",
    "a2x",
    "ratio_2x_1x",
    "harmonic_count",
    "env_kurtosis",
    "env_peak_freq",
];

/// Human-readable labels (with units) in vector order.
pub const FEATURE_LABELS: [&str; FEATURE_COUNT] = [
    "RMS",
    "Crest Factor",
    "Kurtosis",
    "Impulse Factor",
    "Clearance Factor",
    "Dominant Frequency (Hz)",
    "Spectral Centroid (Hz)",
    "1X Amplitude",
    "2X Amplitude",
    "2X/1X Amplitude Ratio",
    "Harmonic Count",
    "Envelope Kurtosis",
    "Envelope Peak Frequency (Hz)",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub rms: f64,
    pub crest_factor: f64,
    pub kurtosis: f64,
    pub impulse_factor: f64,
    pub clearance_factor: f64,
    pub dominant_freq: f64,
    pub spectral_centroid: f64,
    pub a1x: f64,
    pub a2x: f64,
    pub ratio_2x_1x: f64,
    pub harmonic_count: u32,
    pub env_kurtosis: f64,
    pub env_peak_freq: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.rms,
            self.crest_factor,
            self.kurtosis,
            self.impulse_factor,
            self.clearance_factor,
            self.dominant_freq,
            self.spectral_centroid,
            self.a1x,
            self.a2x,
            self.ratio_2x_1x,
            self.harmonic_count as f64,
            self.env_kurtosis,
            self.env_peak_freq,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != FEATURE_COUNT {
            return Err(Error::input(format!(
                "expected {FEATURE_COUNT} features, got {}",
                v.len()
            )));
        }
        let fv = FeatureVector {
            rms: v[0],
            crest_factor: v[1],
            kurtosis: v[2],
            impulse_factor: v[3],
            clearance_factor: v[4],
            dominant_freq: v[5],
            spectral_centroid: v[6],
            a1x: v[7],
            a2x: v[8],
            ratio_2x_1x: v[9],
            harmonic_count: v[10].round().max(0.0) as u32,
            env_kurtosis: v[11],
            env_peak_freq: v[12],
        };
        fv.check_finite()?;
        Ok(fv)
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.to_array().iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::input(format!(
                "feature `{}` is not finite",
                FEATURE_NAMES[i]
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Harmonic-count threshold as a fraction of the 1X amplitude.
    pub tau: f64,
    pub max_harmonics: usize,
    /// Envelope band-pass edges, Hz.
    pub envelope_band: (f64, f64),
    pub samples_per_rev: usize,
    /// Fraction of the envelope dropped from each end before statistics.
    pub envelope_trim: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            tau: 0.1,
            max_harmonics: 10,
            envelope_band: (1500.0, 4000.0),
            samples_per_rev: 64,
            envelope_trim: 0.05,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::config("tau must lie in (0, 1)"));
        }
        if self.max_harmonics == 0 || self.max_harmonics > 64 {
            return Err(Error::config("max_harmonics must lie in [1, 64]"));
        }
        let (lo, hi) = self.envelope_band;
        if !(lo > 0.0 && lo < hi) {
            return Err(Error::config("envelope band must satisfy 0 < lo < hi"));
        }
        Ok(())
    }
}

/// The three spectra kept alongside a feature vector for chart rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSet {
    pub fft: Spectrum,
    pub order: Spectrum,
    pub envelope: Spectrum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub features: FeatureVector,
    pub spectra: SpectrumSet,
    pub order: OrderAnalysis,
}

/// Runs every extractor on one signal.
pub fn extract_all(sig: &Signal, cfg: &FeatureConfig) -> Result<Extraction> {
    cfg.validate()?;
    sig.validate()?;
    let tf = time_features(&sig.samples)?;
    let fft = fft_spectrum(sig)?;
    let (dominant_freq, spectral_centroid) = freq_features(&fft)?;
    let oa = order_features(sig, cfg.tau, cfg.max_harmonics, cfg.samples_per_rev)?;
    let ea = envelope_spectrum(sig, cfg.envelope_band, cfg.envelope_trim)?;

    let features = FeatureVector {
        rms: tf.rms,
        crest_factor: tf.crest_factor,
        kurtosis: tf.kurtosis,
        impulse_factor: tf.impulse_factor,
        clearance_factor: tf.clearance_factor,
        dominant_freq,
        spectral_centroid,
        a1x: oa.a1x,
        a2x: oa.a2x,
        ratio_2x_1x: oa.ratio_2x_1x,
        harmonic_count: oa.harmonic_count as u32,
        env_kurtosis: ea.env_kurtosis,
        env_peak_freq: ea.env_peak_freq,
    };
    features.check_finite()?;
    Ok(Extraction {
        features,
        spectra: SpectrumSet {
            fft,
            order: oa.spectrum.clone(),
            envelope: ea.spectrum,
        },
        order: oa,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn array_round_trip() {
        let fv = FeatureVector::from_slice(&[1., 2., 3., 4., 5., 6., 7., 8., 9., 10., 11., 12., 13.])
            .unwrap();
        assert_eq!(fv.harmonic_count, 11);
        assert_eq!(fv.to_array()[12], 13.0);
        assert!(FeatureVector::from_slice(&[1.0; 3]).is_err());
        let mut v = [1.0; 13];
        v[4] = f64::INFINITY;
        assert!(FeatureVector::from_slice(&v).is_err());
    }
}
