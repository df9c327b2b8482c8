use crate::class::FaultClass;
use crate::error::{Error, Result};

/// Minimum number of samples a signal must carry (one FFT frame).
pub const MIN_SIGNAL_LEN: usize = 4096;

/// A sampled vibration waveform plus the acquisition metadata the feature
/// extractors need.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub id: String,
    pub samples: Vec<f64>,
    /// Hz.
    pub sample_rate: f64,
    /// Nominal shaft rotation frequency from the tachometer, Hz.
    pub shaft_freq: f64,
    pub label: Option<FaultClass>,
    pub severity: Option<f64>,
}

impl Signal {
    pub fn new(
        id: impl Into<String>,
        samples: Vec<f64>,
        sample_rate: f64,
        shaft_freq: f64,
    ) -> Result<Self> {
        let sig = Signal {
            id: id.into(),
            samples,
            sample_rate,
            shaft_freq,
            label: None,
            severity: None,
        };
        sig.validate()?;
        Ok(sig)
    }

    pub fn with_label(mut self, label: FaultClass, severity: Option<f64>) -> Self {
        self.label = Some(label);
        self.severity = severity;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) || !self.sample_rate.is_finite() {
            return Err(Error::Metadata(format!(
                "sample rate must be positive, got {}",
                self.sample_rate
            )));
        }
        if !(self.shaft_freq > 0.0) || !self.shaft_freq.is_finite() {
            return Err(Error::Metadata(format!(
                "shaft frequency must be positive, got {}",
                self.shaft_freq
            )));
        }
        if self.samples.len() < MIN_SIGNAL_LEN {
            return Err(Error::Length {
                needed: MIN_SIGNAL_LEN,
                got: self.samples.len(),
            });
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("sample {i} is not finite")));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// Copy with every sample multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Signal {
        Signal {
            samples: self.samples.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }
}
