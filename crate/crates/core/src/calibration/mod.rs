//! Confidence calibration and trustworthiness metrics.
//!
//! Each confidence source gets its own map, fitted on validation cases only:
//! temperature scaling on the rule engine's log scores and isotonic
//! regression on the arbiter's vote shares.

mod isotonic;
mod metrics;
mod temperature;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::bayes::argmax;
use crate::class::FaultClass;
use crate::error::{Error, Result};
use crate::synth::Split;

pub use isotonic::{fit_isotonic, pav, IsotonicModel};
pub use metrics::{
    adaptive_bins, adaptive_ece, bin_index, brier, ece, evaluate, nll, per_class_metrics,
    reliability_bins, risk_coverage, ClassMetrics, CoveragePoint, EvalReport, Prediction,
    ReliabilityBin, RiskCoverage, ThresholdRow, COVERAGE_THRESHOLDS, DEFAULT_BINS,
};
pub use temperature::{
    apply_temperature, fit_temperature, softmax, tempered_nll, TemperatureModel, MIN_FIT_SAMPLES,
    PROB_FLOOR, T_MAX, T_MIN,
};

pub const BUNDLE_FORMAT: &str = "faultarb-calibration";
pub const BUNDLE_VERSION: u32 = 1;

/// What calibration needs to know about one validation case.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationCase {
    pub sample_id: String,
    pub split: Split,
    pub truth: FaultClass,
    /// Rule-engine log scores over [`FaultClass::ALL`].
    pub log_scores: [f64; FaultClass::COUNT],
    /// Arbiter label and raw confidence, when the arbiter answered.
    pub llm: Option<(FaultClass, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBundle {
    pub format: String,
    pub version: u32,
    pub temperature: TemperatureModel,
    /// Absent when no arbiter outputs were available at fit time.
    pub isotonic: Option<IsotonicModel>,
    /// Split the bundle was fitted on.
    pub fit_split: Split,
    pub fit_ids: Vec<String>,
}

/// Rule-engine output after temperature scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedRule {
    pub label: FaultClass,
    pub confidence: f64,
    pub probs: [f64; FaultClass::COUNT],
}

impl CalibrationBundle {
    /// The bundle that changes nothing.
    pub fn identity() -> Self {
        CalibrationBundle {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION,
            temperature: TemperatureModel::identity(),
            isotonic: None,
            fit_split: Split::Val,
            fit_ids: Vec::new(),
        }
    }

    pub fn calibrate_rule(&self, log_scores: &[f64; FaultClass::COUNT]) -> CalibratedRule {
        let p = self.temperature.apply(log_scores);
        let mut probs = [0.0; FaultClass::COUNT];
        probs.copy_from_slice(&p);
        let best = argmax(&probs);
        CalibratedRule {
            label: FaultClass::from_index(best).expect("index within class count"),
            confidence: probs[best],
            probs,
        }
    }

    pub fn calibrate_llm(&self, share: f64) -> f64 {
        match &self.isotonic {
            Some(m) => m.apply(share),
            None => share,
        }
    }

    /// Refuses to score cases the bundle was fitted on.
    pub fn check_disjoint<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let fit: BTreeSet<&str> = self.fit_ids.iter().map(String::as_str).collect();
        let overlap: Vec<&str> = ids.into_iter().filter(|id| fit.contains(id)).take(5).collect();
        if overlap.is_empty() {
            Ok(())
        } else {
            Err(Error::Leakage(format!(
                "calibration bundle was fitted on evaluated samples: {}",
                overlap.join(", ")
            )))
        }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes") + "\n"
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let b: CalibrationBundle = serde_json::from_str(text)?;
        if b.format != BUNDLE_FORMAT || b.version != BUNDLE_VERSION {
            return Err(Error::input(format!(
                "unsupported calibration bundle {} v{}",
                b.format, b.version
            )));
        }
        if !(b.temperature.t > 0.0) {
            return Err(Error::input("bundle temperature must be positive"));
        }
        if b.fit_split == Split::Test {
            return Err(Error::Leakage("calibration bundle was fitted on the test split".into()));
        }
        Ok(b)
    }
}

/// Fits the per-source calibration maps on validation cases.
pub fn calibrate_pipeline(cases: &[CalibrationCase]) -> Result<CalibrationBundle> {
    if cases.is_empty() {
        return Err(Error::Fit("no validation cases to calibrate on".into()));
    }
    if let Some(c) = cases.iter().find(|c| c.split != Split::Val) {
        return Err(Error::Leakage(format!(
            "sample {} from the {} split offered for calibration",
            c.sample_id, c.split
        )));
    }
    let logits: Vec<Vec<f64>> = cases.iter().map(|c| c.log_scores.to_vec()).collect();
    let labels: Vec<usize> = cases.iter().map(|c| c.truth.index()).collect();
    let temperature = fit_temperature(&logits, &labels)?;

    let answered: Vec<(f64, bool)> = cases
        .iter()
        .filter_map(|c| c.llm.map(|(label, share)| (share, label == c.truth)))
        .collect();
    let isotonic = if answered.is_empty() {
        None
    } else {
        let (conf, correct): (Vec<f64>, Vec<bool>) = answered.into_iter().unzip();
        Some(fit_isotonic(&conf, &correct)?)
    };
    Ok(CalibrationBundle {
        format: BUNDLE_FORMAT.into(),
        version: BUNDLE_VERSION,
        temperature,
        isotonic,
        fit_split: Split::Val,
        fit_ids: cases.iter().map(|c| c.sample_id.clone()).collect(),
    })
}
