//! Cognitive arbitration: an expert arbiter (vision LLM or deterministic
//! oracle) reviews the rule engine's hypothesis, and a selective policy
//! decides whether to agree, override or abstain.

mod llm;
mod oracle;
mod prompt;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::class::FaultClass;
use crate::dsp::FeatureVector;
use crate::error::{Error, Result};

pub use llm::{CompletionBackend, LlmBackend, LlmSettings, RecordedBackend, API_KEY_ENV};
pub use oracle::{oracle_arbiter, OracleConfig, OracleVerdict, CONFIDENT, NEAR_THRESHOLD};
pub use prompt::{build_prompt, parse_verdict, ParsedVerdict, PromptBundle, STEP_HEADINGS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Oracle,
    Llm,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "oracle" => Ok(BackendKind::Oracle),
            "llm" => Ok(BackendKind::Llm),
            other => Err(Error::config(format!("unknown backend `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArbitrationConfig {
    /// Abstention threshold.
    pub theta: f64,
    /// Minimum confidence lead the arbiter needs to override the rule engine.
    pub delta: f64,
    /// Self-consistency samples per case.
    pub k_samples: usize,
    pub backend: BackendKind,
    pub llm: LlmSettings,
    pub oracle: OracleConfig,
}

impl Default for ArbitrationConfig {
    fn default() -> Self {
        ArbitrationConfig {
            theta: 0.5,
            delta: 0.15,
            k_samples: 5,
            backend: BackendKind::Oracle,
            llm: LlmSettings::default(),
            oracle: OracleConfig::default(),
        }
    }
}

impl ArbitrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) || !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::config("theta and delta must lie in [0, 1]"));
        }
        if self.k_samples == 0 {
            return Err(Error::config("k_samples must be at least 1"));
        }
        self.llm.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbiterVerdict {
    pub label: FaultClass,
    /// Vote share of `label` among parsed samples (oracle: rule-margin confidence).
    pub confidence: f64,
    pub rationale: String,
    pub step_reports: Vec<String>,
    pub raw_responses: Vec<String>,
    /// Confidence each parsed sample stated for itself; audit only.
    pub stated_confidences: Vec<Option<f64>>,
    pub votes: BTreeMap<FaultClass, usize>,
    pub parsed_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Agree,
    Override,
    Abstain,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Agree => "agree",
            Decision::Override => "override",
            Decision::Abstain => "abstain",
        }
    }
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Every branch condition evaluated by [`arbitrate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArbitrationAudit {
    pub theta: f64,
    pub delta: f64,
    pub labels_agree: bool,
    /// `max(c_rule, c_llm) >= theta`
    pub max_confidence_clears_theta: bool,
    /// `c_llm - c_rule >= delta`
    pub llm_lead_clears_delta: bool,
    /// `c_llm >= theta`
    pub llm_clears_theta: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbitrationOutcome {
    pub decision: Decision,
    pub final_label: Option<FaultClass>,
    pub final_confidence: Option<f64>,
    pub rule: (FaultClass, f64),
    /// Absent when the arbiter could not be consulted.
    pub llm: Option<(FaultClass, f64)>,
    pub audit: Option<ArbitrationAudit>,
    /// Why the case abstained without a policy evaluation.
    pub cause: Option<String>,
}

impl ArbitrationOutcome {
    /// Abstention recorded when the arbiter failed; routes the case to review.
    pub fn unavailable(d_rule: FaultClass, c_rule: f64, cause: impl Into<String>) -> Self {
        ArbitrationOutcome {
            decision: Decision::Abstain,
            final_label: None,
            final_confidence: None,
            rule: (d_rule, c_rule),
            llm: None,
            audit: None,
            cause: Some(cause.into()),
        }
    }
}

/// Selective arbitration policy.
///
/// * labels agree and `max(c_rule, c_llm) >= theta`: agree, keep the rule
///   label at the larger confidence;
/// * labels differ, `c_llm - c_rule >= delta` and `c_llm >= theta`: override
///   with the arbiter's label and confidence;
/// * otherwise abstain.
///
/// The agree-branch maximum is reported as is; callers pass already
/// calibrated confidences when calibration is in use.
pub fn arbitrate(
    d_rule: FaultClass,
    c_rule: f64,
    d_llm: FaultClass,
    c_llm: f64,
    theta: f64,
    delta: f64,
) -> ArbitrationOutcome {
    let audit = ArbitrationAudit {
        theta,
        delta,
        labels_agree: d_rule == d_llm,
        max_confidence_clears_theta: c_rule.max(c_llm) >= theta,
        llm_lead_clears_delta: c_llm - c_rule >= delta,
        llm_clears_theta: c_llm >= theta,
    };
    let (decision, final_label, final_confidence) =
        if audit.labels_agree && audit.max_confidence_clears_theta {
            (Decision::Agree, Some(d_rule), Some(c_rule.max(c_llm)))
        } else if !audit.labels_agree && audit.llm_lead_clears_delta && audit.llm_clears_theta {
            (Decision::Override, Some(d_llm), Some(c_llm))
        } else {
            (Decision::Abstain, None, None)
        };
    ArbitrationOutcome {
        decision,
        final_label,
        final_confidence,
        rule: (d_rule, c_rule),
        llm: Some((d_llm, c_llm)),
        audit: Some(audit),
        cause: None,
    }
}

/// What the arbiter gets to look at for one case.
#[derive(Debug, Clone, Copy)]
pub struct CaseEvidence<'a> {
    pub case_id: &'a str,
    pub features: &'a FeatureVector,
    pub shaft_freq: f64,
    /// Four-chart diagnostic panel, PNG encoded.
    pub panel_png: Option<&'a [u8]>,
}

/// Where arbiter verdicts come from.
pub enum Arbiter {
    Oracle(OracleConfig),
    Sampling(Box<dyn CompletionBackend>),
}

impl std::fmt::Debug for Arbiter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Arbiter::Oracle(c) => f.debug_tuple("Oracle").field(c).finish(),
            Arbiter::Sampling(_) => f.write_str("Sampling(..)"),
        }
    }
}

impl Arbiter {
    /// Builds the arbiter selected by `cfg.backend`. The LLM backend reads its
    /// API key from the environment.
    pub fn from_config(cfg: &ArbitrationConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.backend {
            BackendKind::Oracle => Arbiter::Oracle(cfg.oracle.clone()),
            BackendKind::Llm => Arbiter::Sampling(Box::new(LlmBackend::new(cfg.llm.clone())?)),
        })
    }

    pub fn is_oracle(&self) -> bool {
        matches!(self, Arbiter::Oracle(_))
    }
}

/// Plurality vote over parsed samples. Ties go to the higher mean stated
/// confidence (missing counts as 0), then to canonical class order.
pub fn tally_votes(parsed: &[ParsedVerdict]) -> Option<(FaultClass, f64, BTreeMap<FaultClass, usize>)> {
    if parsed.is_empty() {
        return None;
    }
    let mut votes: BTreeMap<FaultClass, usize> = BTreeMap::new();
    let mut stated: BTreeMap<FaultClass, f64> = BTreeMap::new();
    for p in parsed {
        *votes.entry(p.label).or_default() += 1;
        *stated.entry(p.label).or_default() += p.stated_confidence.unwrap_or(0.0);
    }
    let mean_stated = |c: &FaultClass| stated[c] / votes[c] as f64;
    // BTreeMap iterates in canonical order, so keeping the first maximum
    // implements the final tie-break
    let mut best: Option<FaultClass> = None;
    for (&c, &n) in &votes {
        best = match best {
            None => Some(c),
            Some(b) => {
                let nb = votes[&b];
                if n > nb || (n == nb && mean_stated(&c) > mean_stated(&b)) {
                    Some(c)
                } else {
                    Some(b)
                }
            }
        };
    }
    let label = best.expect("nonempty votes");
    let share = votes[&label] as f64 / parsed.len() as f64;
    Some((label, share, votes))
}

/// Obtains the arbiter's verdict on one case.
///
/// The oracle is deterministic, so it answers once with its rule-margin
/// confidence. A sampling backend is asked `k_samples` times (up to
/// `llm.max_concurrency` at once); unparseable samples are dropped and the
/// confidence is the plurality label's vote share.
pub fn arbiter_verdict(
    arbiter: &Arbiter,
    evidence: &CaseEvidence<'_>,
    d_rule: FaultClass,
    c_rule: f64,
    cfg: &ArbitrationConfig,
) -> Result<ArbiterVerdict> {
    cfg.validate()?;
    let CaseEvidence { case_id, features, shaft_freq, panel_png } = *evidence;
    match arbiter {
        Arbiter::Oracle(ocfg) => {
            let v = oracle_arbiter(features, shaft_freq, ocfg)?;
            let text = v.report();
            Ok(ArbiterVerdict {
                label: v.label,
                confidence: v.confidence,
                rationale: v.rationale.clone(),
                step_reports: v.step_reports(d_rule, c_rule),
                raw_responses: vec![text],
                stated_confidences: vec![Some(v.confidence)],
                votes: [(v.label, 1)].into_iter().collect(),
                parsed_samples: 1,
            })
        }
        Arbiter::Sampling(backend) => {
            let prompt = build_prompt(
                features,
                shaft_freq,
                d_rule,
                c_rule,
                panel_png.map(<[u8]>::to_vec),
                case_id,
            );
            let k = cfg.k_samples;
            let limit = cfg.llm.max_concurrency.max(1);
            let mut raw: Vec<Result<String>> = Vec::with_capacity(k);
            let mut next = 0;
            while next < k {
                let batch: Vec<usize> = (next..(next + limit).min(k)).collect();
                let results: Vec<Result<String>> = std::thread::scope(|s| {
                    let handles: Vec<_> = batch
                        .iter()
                        .map(|&i| {
                            let p = &prompt;
                            let b = backend.as_ref();
                            s.spawn(move || b.complete(p, i))
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| {
                            h.join().unwrap_or_else(|_| {
                                Err(Error::ArbiterUnavailable("backend worker panicked".into()))
                            })
                        })
                        .collect()
                });
                raw.extend(results);
                next += batch.len();
            }

            let mut last_err = None;
            let mut texts = Vec::new();
            let mut parsed = Vec::new();
            for r in raw {
                match r {
                    Ok(text) => {
                        if let Ok(p) = parse_verdict(&text) {
                            parsed.push(p);
                        }
                        texts.push(text);
                    }
                    Err(e) => last_err = Some(e),
                }
            }
            let Some((label, share, votes)) = tally_votes(&parsed) else {
                let cause = match last_err {
                    Some(e @ Error::ArbiterUnavailable(_)) if texts.is_empty() => return Err(e),
                    Some(e) => format!("no usable arbiter sample: {e}"),
                    None => format!("none of {} arbiter samples could be parsed", texts.len()),
                };
                return Err(Error::ArbiterUnavailable(cause));
            };
            let representative = parsed
                .iter()
                .find(|p| p.label == label)
                .expect("plurality label was voted");
            Ok(ArbiterVerdict {
                label,
                confidence: share,
                rationale: representative.rationale.clone(),
                step_reports: representative.step_reports.clone(),
                raw_responses: texts,
                stated_confidences: parsed.iter().map(|p| p.stated_confidence).collect(),
                votes,
                parsed_samples: parsed.len(),
            })
        }
    }
}

/// Default location of raw request/response logs, relative to an output dir.
pub fn default_audit_dir(out: &std::path::Path) -> PathBuf {
    out.join("llm_audit")
}

#[cfg(test)]
mod tests {
    use super::*;
    use FaultClass::*;

    #[test]
    fn agree_takes_larger_confidence() {
        let o = arbitrate(Looseness, 0.60, Looseness, 0.85, 0.5, 0.15);
        assert_eq!(o.decision, Decision::Agree);
        assert_eq!(o.final_label, Some(Looseness));
        assert_eq!(o.final_confidence, Some(0.85));
    }

    #[test]
    fn override_case() {
        let o = arbitrate(GearFault, 0.40, Looseness, 0.85, 0.5, 0.15);
        assert_eq!(o.decision, Decision::Override);
        assert_eq!(o.final_label, Some(Looseness));
        assert_eq!(o.final_confidence, Some(0.85));
        let a = o.audit.unwrap();
        assert!(a.llm_lead_clears_delta && a.llm_clears_theta && !a.labels_agree);
    }

    #[test]
    fn small_lead_abstains() {
        let o = arbitrate(GearFault, 0.70, Looseness, 0.80, 0.5, 0.15);
        assert_eq!(o.decision, Decision::Abstain);
        assert!(o.final_label.is_none() && o.final_confidence.is_none());
    }

    #[test]
    fn weak_agreement_abstains() {
        let o = arbitrate(Normal, 0.3, Normal, 0.4, 0.5, 0.15);
        assert_eq!(o.decision, Decision::Abstain);
    }

    fn pv(label: FaultClass, stated: Option<f64>) -> ParsedVerdict {
        ParsedVerdict {
            label,
            stated_confidence: stated,
            rationale: String::new(),
            step_reports: Vec::new(),
        }
    }

    #[test]
    fn vote_share() {
        let mut v = vec![pv(Looseness, None); 4];
        v.push(pv(Misalignment, Some(0.99)));
        let (label, share, votes) = tally_votes(&v).unwrap();
        assert_eq!(label, Looseness);
        assert_eq!(share, 0.8);
        assert_eq!(votes[&Misalignment], 1);
        let (_, share, _) = tally_votes(&vec![pv(Looseness, None); 5]).unwrap();
        assert_eq!(share, 1.0);
        assert!(tally_votes(&[]).is_none());
    }

    #[test]
    fn vote_ties() {
        let v = [pv(Normal, Some(0.9)), pv(Cavitation, Some(0.6))];
        assert_eq!(tally_votes(&v).unwrap().0, Normal);
        let v = [pv(Normal, Some(0.6)), pv(Cavitation, Some(0.6))];
        assert_eq!(tally_votes(&v).unwrap().0, Cavitation);
    }

    #[test]
    fn backend_kind_parses() {
        assert_eq!("LLM".parse::<BackendKind>().unwrap(), BackendKind::Llm);
        assert!("gpt".parse::<BackendKind>().is_err());
    }
}
