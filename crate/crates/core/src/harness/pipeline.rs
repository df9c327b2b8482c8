//! Per-sample pipeline stages shared by the CLI subcommands and the
//! repeated experiment: extract, train, diagnose, arbitrate, calibrate and
//! score.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arbiter::{
    arbiter_verdict, arbitrate, Arbiter, ArbiterVerdict, ArbitrationConfig, ArbitrationOutcome,
    CaseEvidence, Decision,
};
use crate::bayes::{BayesConfig, Diagnosis, NaiveBayesModel};
use crate::calibration::{
    calibrate_pipeline, evaluate, CalibrationBundle, CalibrationCase, EvalReport, Prediction,
};
use crate::class::FaultClass;
use crate::dsp::{extract_all, FeatureConfig, FeatureVector, FEATURE_LABELS};
use crate::error::{Error, Result};
use crate::signal::Signal;
use crate::synth::{Dataset, Split};

pub const BASELINE: &str = "Baseline-NB";
pub const HCAA_UNCALIBRATED: &str = "HCAA-Uncalibrated";
pub const HCAA_CALIBRATED: &str = "HCAA-Calibrated";
pub const SYSTEMS: [&str; 3] = [BASELINE, HCAA_UNCALIBRATED, HCAA_CALIBRATED];

/// One row of the feature table.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub sample_id: String,
    pub truth: FaultClass,
    pub split: Split,
    pub severity: Option<f64>,
    pub shaft_freq: f64,
    pub features: FeatureVector,
}

/// Rule-engine output for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleRow {
    pub sample_id: String,
    pub split: Split,
    pub truth: FaultClass,
    pub diagnosis: Diagnosis,
}

/// Arbiter output for one sample. `llm_*` are empty when the arbiter failed,
/// in which case `cause` says why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbiterRow {
    pub sample_id: String,
    pub split: Split,
    pub truth: FaultClass,
    pub rule_label: FaultClass,
    pub rule_confidence: f64,
    pub llm_label: Option<FaultClass>,
    /// Vote share of `llm_label` (oracle: its own confidence).
    pub llm_confidence: Option<f64>,
    pub parsed_samples: usize,
    pub requested_samples: usize,
    pub cause: Option<String>,
    pub panel_path: Option<String>,
    pub verdict_path: Option<String>,
}

impl ArbiterRow {
    pub fn llm(&self) -> Option<(FaultClass, f64)> {
        self.llm_label.zip(self.llm_confidence)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verification {
    Correct,
    Incorrect,
    Abstained,
}

impl Verification {
    pub fn of(truth: FaultClass, final_label: Option<FaultClass>) -> Self {
        match final_label {
            None => Verification::Abstained,
            Some(l) if l == truth => Verification::Correct,
            Some(_) => Verification::Incorrect,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verification::Correct => "CORRECT",
            Verification::Incorrect => "INCORRECT",
            Verification::Abstained => "ABSTAINED",
        }
    }
}

/// Everything known about one evaluated case, for the report and for
/// manual review of abstentions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub sample_id: String,
    pub truth: FaultClass,
    pub features: FeatureVector,
    pub rule_label: FaultClass,
    pub rule_confidence: f64,
    pub rule_calibrated: f64,
    pub llm_label: Option<FaultClass>,
    pub llm_confidence: Option<f64>,
    pub llm_calibrated: Option<f64>,
    /// Outcome of the calibrated system.
    pub outcome: ArbitrationOutcome,
    pub uncalibrated_decision: Decision,
    pub uncalibrated_label: Option<FaultClass>,
    pub status: Verification,
    pub panel_path: Option<String>,
    pub verdict_path: Option<String>,
    pub report_path: Option<String>,
}

fn extract_one(
    sig: &Signal,
    truth: FaultClass,
    split: Split,
    severity: Option<f64>,
    cfg: &FeatureConfig,
) -> Result<FeatureRow> {
    let ex = extract_all(sig, cfg)?;
    Ok(FeatureRow {
        sample_id: sig.id.clone(),
        truth,
        split,
        severity,
        shaft_freq: sig.shaft_freq,
        features: ex.features,
    })
}

/// Regenerates and extracts every sample of an in-memory dataset, in
/// dataset order.
pub fn extract_dataset(ds: &Dataset, cfg: &FeatureConfig) -> Result<Vec<FeatureRow>> {
    ds.entries
        .par_iter()
        .map(|e| extract_one(&ds.signal(e)?, e.class, e.split, e.severity, cfg))
        .collect()
}

/// Extracts signals produced by `load`, in input order.
pub fn extract_signals<T: Sync>(
    items: &[T],
    cfg: &FeatureConfig,
    load: impl Fn(&T) -> Result<(Signal, FaultClass, Split, Option<f64>)> + Sync,
) -> Result<Vec<FeatureRow>> {
    items
        .par_iter()
        .map(|it| {
            let (sig, truth, split, severity) = load(it)?;
            extract_one(&sig, truth, split, severity, cfg)
        })
        .collect()
}

/// Fits the rule engine on the training rows.
pub fn train_model(rows: &[FeatureRow], cfg: &BayesConfig) -> Result<NaiveBayesModel> {
    let train: Vec<(FeatureVector, FaultClass)> = rows
        .iter()
        .filter(|r| r.split == Split::Train)
        .map(|r| (r.features, r.truth))
        .collect();
    NaiveBayesModel::fit_features(&train, cfg)
}

pub fn diagnose_rows(model: &NaiveBayesModel, rows: &[FeatureRow]) -> Result<Vec<RuleRow>> {
    rows.iter()
        .map(|r| {
            Ok(RuleRow {
                sample_id: r.sample_id.clone(),
                split: r.split,
                truth: r.truth,
                diagnosis: model.diagnose_features(&r.features)?,
            })
        })
        .collect()
}

/// Runs the arbiter on one case. Failures are captured in the row rather
/// than returned, so one bad case never aborts a run.
pub fn arbitrate_case(
    arbiter: &Arbiter,
    cfg: &ArbitrationConfig,
    row: &FeatureRow,
    rule: &RuleRow,
    panel_png: Option<&[u8]>,
) -> (ArbiterRow, Option<ArbiterVerdict>) {
    let d = &rule.diagnosis;
    let evidence = CaseEvidence {
        case_id: &row.sample_id,
        features: &row.features,
        shaft_freq: row.shaft_freq,
        panel_png,
    };
    let requested = if arbiter.is_oracle() { 1 } else { cfg.k_samples };
    let mut out = ArbiterRow {
        sample_id: row.sample_id.clone(),
        split: row.split,
        truth: row.truth,
        rule_label: d.label,
        rule_confidence: d.confidence,
        llm_label: None,
        llm_confidence: None,
        parsed_samples: 0,
        requested_samples: requested,
        cause: None,
        panel_path: None,
        verdict_path: None,
    };
    match arbiter_verdict(arbiter, &evidence, d.label, d.confidence, cfg) {
        Ok(v) => {
            out.llm_label = Some(v.label);
            out.llm_confidence = Some(v.confidence);
            out.parsed_samples = v.parsed_samples;
            (out, Some(v))
        }
        Err(e) => {
            out.cause = Some(e.to_string());
            (out, None)
        }
    }
}

/// Arbitrates `rows` (paired index-wise with `rules`). The oracle runs as a
/// parallel map; a sampling backend runs one case at a time so its own
/// concurrency limit holds. `panel` supplies the chart image per case.
pub fn arbitrate_rows(
    arbiter: &Arbiter,
    cfg: &ArbitrationConfig,
    rows: &[&FeatureRow],
    rules: &[&RuleRow],
    panel: &(dyn Fn(&FeatureRow) -> Result<Option<Vec<u8>>> + Sync),
) -> Result<Vec<(ArbiterRow, Option<ArbiterVerdict>)>> {
    if rows.len() != rules.len() {
        return Err(Error::input("feature and diagnosis rows differ in count"));
    }
    if let Some((r, d)) = rows.iter().zip(rules).find(|(r, d)| r.sample_id != d.sample_id) {
        return Err(Error::input(format!(
            "feature row {} paired with diagnosis {}",
            r.sample_id, d.sample_id
        )));
    }
    let one = |(row, rule): (&&FeatureRow, &&RuleRow)| match panel(row) {
        Ok(png) => arbitrate_case(arbiter, cfg, row, rule, png.as_deref()),
        Err(e) => {
            let (mut out, _) = arbitrate_case(arbiter, cfg, row, rule, None);
            if !arbiter.is_oracle() {
                out.llm_label = None;
                out.llm_confidence = None;
                out.parsed_samples = 0;
                out.cause = Some(format!("chart panel unavailable: {e}"));
            }
            (out, None)
        }
    };
    Ok(if arbiter.is_oracle() {
        rows.par_iter().zip(rules.par_iter()).map(one).collect()
    } else {
        rows.iter().zip(rules.iter()).map(one).collect()
    })
}

/// Validation cases for calibration, joined by sample id.
pub fn calibration_cases(rules: &[RuleRow], arbs: &[ArbiterRow]) -> Vec<CalibrationCase> {
    let by_id: BTreeMap<&str, &ArbiterRow> = arbs.iter().map(|a| (a.sample_id.as_str(), a)).collect();
    rules
        .iter()
        .filter(|r| r.split == Split::Val)
        .map(|r| CalibrationCase {
            sample_id: r.sample_id.clone(),
            split: r.split,
            truth: r.truth,
            log_scores: r.diagnosis.full_log_scores(),
            llm: by_id.get(r.sample_id.as_str()).and_then(|a| a.llm()),
        })
        .collect()
}

pub fn fit_calibration(rules: &[RuleRow], arbs: &[ArbiterRow]) -> Result<CalibrationBundle> {
    calibrate_pipeline(&calibration_cases(rules, arbs))
}

/// Confidences fed to the selective policy: raw without a bundle, per-source
/// calibrated with one.
pub fn policy_inputs(
    rule: &RuleRow,
    arb: &ArbiterRow,
    bundle: Option<&CalibrationBundle>,
) -> (FaultClass, f64, Option<(FaultClass, f64)>) {
    let d = &rule.diagnosis;
    match bundle {
        None => (d.label, d.confidence, arb.llm()),
        Some(b) => {
            let c = b.calibrate_rule(&d.full_log_scores());
            (c.label, c.confidence, arb.llm().map(|(l, s)| (l, b.calibrate_llm(s))))
        }
    }
}

pub fn hcaa_outcome(
    rule: &RuleRow,
    arb: &ArbiterRow,
    bundle: Option<&CalibrationBundle>,
    theta: f64,
    delta: f64,
) -> ArbitrationOutcome {
    let (d_rule, c_rule, llm) = policy_inputs(rule, arb, bundle);
    match llm {
        Some((d_llm, c_llm)) => arbitrate(d_rule, c_rule, d_llm, c_llm, theta, delta),
        None => ArbitrationOutcome::unavailable(
            d_rule,
            c_rule,
            arb.cause.clone().unwrap_or_else(|| "no arbiter verdict".into()),
        ),
    }
}

pub fn outcome_prediction(truth: FaultClass, o: &ArbitrationOutcome) -> Prediction {
    match (o.final_label, o.final_confidence) {
        (Some(l), Some(c)) => Prediction::decided(truth, l, c),
        _ => Prediction::abstained(truth),
    }
}

pub fn baseline_prediction(rule: &RuleRow) -> Prediction {
    let d = &rule.diagnosis;
    Prediction {
        truth: rule.truth,
        label: Some(d.label),
        confidence: d.confidence,
        probs: d.full_posteriors(),
    }
}

/// Scores of the three systems on one split, plus per-case records.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// In [`SYSTEMS`] order.
    pub reports: Vec<EvalReport>,
    pub predictions: Vec<Vec<Prediction>>,
    pub records: Vec<CaseRecord>,
}

/// Scores Baseline-NB, HCAA without calibration and HCAA with `bundle` on
/// the `split` rows. All three systems see the same cases.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_split(
    features: &[FeatureRow],
    rules: &[RuleRow],
    arbs: &[ArbiterRow],
    bundle: &CalibrationBundle,
    split: Split,
    theta: f64,
    delta: f64,
    n_bins: usize,
) -> Result<Evaluation> {
    let feats: BTreeMap<&str, &FeatureRow> =
        features.iter().map(|f| (f.sample_id.as_str(), f)).collect();
    let by_id: BTreeMap<&str, &ArbiterRow> = arbs.iter().map(|a| (a.sample_id.as_str(), a)).collect();
    let cases: Vec<&RuleRow> = rules.iter().filter(|r| r.split == split).collect();
    if cases.is_empty() {
        return Err(Error::missing(split.as_str(), "no diagnosed cases in this split"));
    }
    bundle.check_disjoint(cases.iter().map(|r| r.sample_id.as_str()))?;

    let mut preds: Vec<Vec<Prediction>> = vec![Vec::new(); 3];
    let mut records = Vec::with_capacity(cases.len());
    for rule in cases {
        let id = rule.sample_id.as_str();
        let arb = by_id
            .get(id)
            .ok_or_else(|| Error::missing("arbitration", format!("no arbiter row for {id}")))?;
        let feat = feats
            .get(id)
            .ok_or_else(|| Error::missing("features", format!("no feature row for {id}")))?;
        let raw = hcaa_outcome(rule, arb, None, theta, delta);
        let cal = hcaa_outcome(rule, arb, Some(bundle), theta, delta);
        preds[0].push(baseline_prediction(rule));
        preds[1].push(outcome_prediction(rule.truth, &raw));
        preds[2].push(outcome_prediction(rule.truth, &cal));

        let (_, rule_cal, llm_cal) = policy_inputs(rule, arb, Some(bundle));
        records.push(CaseRecord {
            sample_id: rule.sample_id.clone(),
            truth: rule.truth,
            features: feat.features,
            rule_label: rule.diagnosis.label,
            rule_confidence: rule.diagnosis.confidence,
            rule_calibrated: rule_cal,
            llm_label: arb.llm_label,
            llm_confidence: arb.llm_confidence,
            llm_calibrated: llm_cal.map(|(_, c)| c),
            status: Verification::of(rule.truth, cal.final_label),
            outcome: cal,
            uncalibrated_decision: raw.decision,
            uncalibrated_label: raw.final_label,
            panel_path: arb.panel_path.clone(),
            verdict_path: arb.verdict_path.clone(),
            report_path: None,
        });
    }
    let reports = SYSTEMS
        .iter()
        .zip(&preds)
        .map(|(name, p)| evaluate(name, p, n_bins))
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation { reports, predictions: preds, records })
}

fn pct(v: f64) -> String {
    format!("{:.1}%", 100.0 * v)
}

/// Plain-text case report in the order a reviewer reads it.
pub fn case_report(rec: &CaseRecord) -> String {
    let mut s = format!("Case: {}\nGround truth: {}\n\nExtracted features\n", rec.sample_id, rec.truth);
    for (label, v) in FEATURE_LABELS.iter().zip(rec.features.to_array()) {
        s += &format!("- {label}: {v:.4}\n");
    }
    s += &format!(
        "\nRule-based diagnosis: {} ({}, calibrated {})\n",
        rec.rule_label,
        pct(rec.rule_confidence),
        pct(rec.rule_calibrated)
    );
    match (rec.llm_label, rec.llm_confidence, rec.llm_calibrated) {
        (Some(l), Some(c), Some(cc)) => {
            s += &format!("Arbiter verdict: {l} (vote share {}, calibrated {})\n", pct(c), pct(cc))
        }
        _ => s += "Arbiter verdict: unavailable\n",
    }
    s += &format!("Decision: {}\n", rec.outcome.decision.as_str().to_uppercase());
    match (rec.outcome.final_label, rec.outcome.final_confidence) {
        (Some(l), Some(c)) => s += &format!("Final diagnosis: {l} ({})\n", pct(c)),
        _ => s += "Final diagnosis: none, routed to manual review\n",
    }
    if let Some(a) = &rec.outcome.audit {
        s += &format!(
            "Policy checks (theta {}, delta {}): labels agree {}, max confidence >= theta {}, arbiter lead >= delta {}, arbiter >= theta {}\n",
            a.theta, a.delta, a.labels_agree, a.max_confidence_clears_theta, a.llm_lead_clears_delta, a.llm_clears_theta
        );
    }
    if let Some(cause) = &rec.outcome.cause {
        s += &format!("Cause: {cause}\n");
    }
    s += &format!("Verification: {}\n", rec.status.as_str());
    let evidence: Vec<String> = [("chart panel", &rec.panel_path), ("arbiter transcript", &rec.verdict_path)]
        .iter()
        .filter_map(|(what, p)| p.as_ref().map(|p| format!("{what} {p}")))
        .collect();
    if !evidence.is_empty() {
        s += &format!("Evidence: {}\n", evidence.join(", "));
    }
    s
}

/// Arbiter transcript: raw responses and the structured step reports.
pub fn verdict_transcript(row: &ArbiterRow, v: Option<&ArbiterVerdict>) -> String {
    let mut s = format!(
        "Case: {}\nRule-based diagnosis: {} ({})\n",
        row.sample_id,
        row.rule_label,
        pct(row.rule_confidence)
    );
    match v {
        Some(v) => {
            s += &format!(
                "Arbiter verdict: {} ({}, {} of {} samples parsed)\nVotes:",
                v.label,
                pct(v.confidence),
                v.parsed_samples,
                row.requested_samples
            );
            for (c, n) in &v.votes {
                s += &format!(" {c}={n}");
            }
            s += "\n\n";
            for step in &v.step_reports {
                s += step;
                s += "\n";
            }
            for (i, r) in v.raw_responses.iter().enumerate() {
                s += &format!("\n--- response {} ---\n{}\n", i + 1, r.trim_end());
            }
        }
        None => {
            s += &format!(
                "Arbiter verdict: unavailable ({})\n",
                row.cause.as_deref().unwrap_or("unknown cause")
            );
        }
    }
    s
}
