//! Deterministic stand-in for the vision arbiter: a first-match rule table
//! over the feature vector, written the way a vibration analyst reads the
//! evidence.

use serde::{Deserialize, Serialize};

use super::prompt::STEP_HEADINGS;
use crate::class::FaultClass;
use crate::dsp::FeatureVector;
use crate::error::{Error, Result};
use crate::synth::{BEARING_DEFECT_ORDER, GEAR_MESH_ORDER};

/// Confidence when the winning rule clears all its thresholds comfortably.
pub const CONFIDENT: f64 = 0.85;
/// Confidence when some margin of the winning rule is within 10% of its threshold.
pub const NEAR_THRESHOLD: f64 = 0.6;
const MARGIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// 1X amplitude of a healthy machine.
    pub reference_1x: f64,
    /// Upper edge of the RMS band seen on healthy machines.
    pub normal_rms_max: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            reference_1x: 1.0,
            normal_rms_max: 0.9,
        }
    }
}

/// One evaluated condition with its relative distance from the boundary.
#[derive(Debug, Clone, Copy)]
struct Check {
    holds: bool,
    margin: f64,
}

fn rel(v: f64, t: f64) -> f64 {
    (v - t).abs() / t.abs().max(1e-12)
}

fn gt(v: f64, t: f64) -> Check {
    Check { holds: v > t, margin: rel(v, t) }
}

fn ge(v: f64, t: f64) -> Check {
    Check { holds: v >= t, margin: rel(v, t) }
}

fn lt(v: f64, t: f64) -> Check {
    Check { holds: v < t, margin: rel(v, t) }
}

fn le(v: f64, t: f64) -> Check {
    Check { holds: v <= t, margin: rel(v, t) }
}

/// `v` within relative tolerance `tol` of `target`.
fn near(v: f64, target: f64, tol: f64) -> Check {
    let d = rel(v, target);
    Check { holds: d <= tol, margin: (tol - d).abs() / tol }
}

struct Rule {
    label: FaultClass,
    checks: Vec<Check>,
    evidence: String,
}

impl Rule {
    fn fires(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }

    fn marginal(&self) -> bool {
        self.checks.iter().any(|c| c.margin < MARGIN)
    }

    /// Every condition holds or misses by less than the margin.
    fn nearly_fires(&self) -> bool {
        self.checks.iter().all(|c| c.holds || c.margin < MARGIN)
    }
}

fn rules(f: &FeatureVector, shaft_freq: f64, cfg: &OracleConfig) -> Vec<Rule> {
    let r = f.ratio_2x_1x;
    let nh = f.harmonic_count as f64;
    let defect = BEARING_DEFECT_ORDER * shaft_freq;
    let mesh = GEAR_MESH_ORDER * shaft_freq;
    vec![
        Rule {
            label: FaultClass::Misalignment,
            checks: vec![gt(r, 1.3)],
            evidence: format!(
                "2X/1X amplitude ratio {r:.3} exceeds 1.3; twice-per-revolution vibration dominates"
            ),
        },
        Rule {
            label: FaultClass::Looseness,
            checks: vec![ge(r, 0.5), le(r, 1.3), ge(nh, 5.0)],
            evidence: format!(
                "2X/1X ratio {r:.3} with {} shaft harmonics above threshold; a rich harmonic series",
                f.harmonic_count
            ),
        },
        Rule {
            label: FaultClass::BearingDamage,
            checks: vec![gt(f.env_kurtosis, 4.0), near(f.env_peak_freq, defect, 0.15)],
            evidence: format!(
                "envelope kurtosis {:.2} with envelope peak at {:.1} Hz, near the {:.1} Hz defect rate",
                f.env_kurtosis, f.env_peak_freq, defect
            ),
        },
        Rule {
            label: FaultClass::GearFault,
            checks: vec![near(f.dominant_freq, mesh, 0.1)],
            evidence: format!(
                "dominant frequency {:.1} Hz sits at the {:.1} Hz gear mesh",
                f.dominant_freq, mesh
            ),
        },
        Rule {
            label: FaultClass::Cavitation,
            checks: vec![
                gt(f.spectral_centroid, 1000.0),
                lt(f.kurtosis, 4.0),
                lt(r, 0.3),
                lt(f.a1x, 0.5 * cfg.reference_1x),
            ],
            evidence: format!(
                "spectral centroid {:.0} Hz with weak 1X ({:.3}) and kurtosis {:.2}; broadband high-frequency noise",
                f.spectral_centroid, f.a1x, f.kurtosis
            ),
        },
        Rule {
            label: FaultClass::Imbalance,
            checks: vec![
                lt(r, 0.2),
                le(nh, 2.0),
                lt(f.kurtosis, 3.5),
                gt(f.rms, cfg.normal_rms_max),
            ],
            evidence: format!(
                "clean 1X-dominated spectrum (ratio {r:.3}) with RMS {:.3} above the healthy band",
                f.rms
            ),
        },
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleVerdict {
    pub label: FaultClass,
    pub confidence: f64,
    pub rationale: String,
}

impl OracleVerdict {
    /// The verdict written in the structured response format.
    pub fn report(&self) -> String {
        format!(
            "Final Diagnosis: {} - Confidence Level: {:.0}%\nRationale: {}",
            self.label,
            100.0 * self.confidence,
            self.rationale
        )
    }

    pub fn step_reports(&self, d_rule: FaultClass, c_rule: f64) -> Vec<String> {
        let verification = if d_rule == self.label {
            format!("The evidence supports the rule-based hypothesis {d_rule}.")
        } else {
            format!("The evidence does not support the rule-based hypothesis {d_rule}.")
        };
        let conflict = if d_rule == self.label {
            "No conflict with the rule engine.".to_string()
        } else {
            format!(
                "The rule engine ({:.1}%) is contradicted; the evidence points to {}.",
                100.0 * c_rule,
                self.label
            )
        };
        vec![
            verification,
            self.rationale.clone(),
            conflict,
            format!("{} at {:.0}%.", self.label, 100.0 * self.confidence),
        ]
        .into_iter()
        .zip(STEP_HEADINGS)
        .map(|(text, heading)| format!("{heading}: {text}"))
        .collect()
    }
}

/// Applies the rule table. `shaft_freq` locates the defect and mesh rates.
pub fn oracle_arbiter(f: &FeatureVector, shaft_freq: f64, cfg: &OracleConfig) -> Result<OracleVerdict> {
    f.check_finite()?;
    if !(shaft_freq > 0.0) || !shaft_freq.is_finite() {
        return Err(Error::Metadata(format!(
            "shaft frequency must be positive, got {shaft_freq}"
        )));
    }
    let table = rules(f, shaft_freq, cfg);
    if let Some(rule) = table.iter().find(|r| r.fires()) {
        let confidence = if rule.marginal() { NEAR_THRESHOLD } else { CONFIDENT };
        return Ok(OracleVerdict {
            label: rule.label,
            confidence,
            rationale: format!("{}.", rule.evidence),
        });
    }
    let near_miss = table.iter().find(|r| r.nearly_fires());
    Ok(match near_miss {
        Some(r) => OracleVerdict {
            label: FaultClass::Normal,
            confidence: NEAR_THRESHOLD,
            rationale: format!(
                "no fault signature is established, but the {} pattern is close to its thresholds.",
                r.label
            ),
        },
        None => OracleVerdict {
            label: FaultClass::Normal,
            confidence: CONFIDENT,
            rationale: "no fault signature is present; 1X-dominated spectrum at a healthy level."
                .into(),
        },
    })
}
