//! Markdown summary, SVG figures and CSV exports of a comparison.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::calibration::EvalReport;
use crate::chart::svg::{reliability_diagram, risk_coverage_plot};
use crate::error::Result;

use super::experiment::{ComparisonReport, Stat, SystemSummary};
use super::pipeline::{CaseRecord, Verification, BASELINE, HCAA_CALIBRATED, HCAA_UNCALIBRATED};
use super::store::{write_rows, write_text};

/// Rows that are reported but not computed here; left blank for pasting
/// external results.
pub const EXTERNAL_BASELINES: [&str; 2] = ["SVM", "1D-CNN"];

fn opt(s: &Option<Stat>, decimals: usize, scale: f64) -> String {
    s.as_ref().map_or_else(|| "n/a".into(), |s| s.format(decimals, scale))
}

fn main_row(s: &SystemSummary) -> String {
    format!(
        "| {} | {} | {} | {} | {} | {} |",
        s.system,
        s.accuracy.format(1, 100.0),
        opt(&s.ece, 3, 1.0),
        s.nll.format(3, 1.0),
        s.aurc.format(3, 1.0),
        s.auacc.format(3, 1.0),
    )
}

fn seed_range(seeds: &[u64]) -> String {
    match (seeds.first(), seeds.last()) {
        (Some(a), Some(b)) if seeds.len() > 1 => format!("{a}..={b}"),
        (Some(a), _) => a.to_string(),
        _ => "none".into(),
    }
}

/// Markdown summary. `records` (may be empty) lists the cases routed to
/// manual review.
pub fn render_markdown(rep: &ComparisonReport, records: &[CaseRecord]) -> String {
    let mut s = String::from("# Fault diagnosis comparison\n\n");
    let _ = writeln!(
        s,
        "Arbiter backend: {}. Runs: {} (dataset seeds {}). Policy: theta = {}, delta = {}. Test cases per run: {}.\n",
        match rep.backend {
            crate::arbiter::BackendKind::Oracle => "oracle",
            crate::arbiter::BackendKind::Llm => "llm",
        },
        rep.seeds.len(),
        seed_range(&rep.seeds),
        rep.theta,
        rep.delta,
        rep.test_counts.iter().map(usize::to_string).collect::<Vec<_>>().join(", "),
    );
    s += "Values are mean ± standard deviation over runs. Accuracy counts abstentions as errors; \
          ECE bins the final confidence of non-abstained cases.\n\n";
    s += "| Method | Accuracy (%) | ECE | NLL | AURC | AUACC |\n|---|---|---|---|---|---|\n";
    for name in [BASELINE] {
        if let Some(sm) = rep.summary(name) {
            s += &main_row(sm);
            s += "\n";
        }
    }
    for name in EXTERNAL_BASELINES {
        let _ = writeln!(s, "| {name} |  |  |  |  |  |");
    }
    for name in [HCAA_UNCALIBRATED, HCAA_CALIBRATED] {
        if let Some(sm) = rep.summary(name) {
            s += &main_row(sm);
            s += "\n";
        }
    }
    let _ = writeln!(
        s,
        "\nThe {} rows are not computed by this tool and are left blank for external results.\n",
        EXTERNAL_BASELINES.join(" and ")
    );

    s += "## Abstention and secondary metrics\n\n";
    s += "| Method | Abstention (%) | Selective accuracy (%) | Adaptive ECE | Brier |\n|---|---|---|---|---|\n";
    for sm in &rep.summaries {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} |",
            sm.system,
            sm.abstention_rate.format(1, 100.0),
            opt(&sm.selective_accuracy, 1, 100.0),
            opt(&sm.adaptive_ece, 3, 1.0),
            sm.brier.format(3, 1.0),
        );
    }
    if !rep.temperatures.is_empty() {
        let t = Stat::of(&rep.temperatures).expect("nonempty");
        let _ = writeln!(s, "\nFitted rule-engine temperature: {}.", t.format(3, 1.0));
    }

    s += "\n## Coverage at confidence thresholds\n\nPooled test predictions of all runs; a case is retained when its confidence is at least the threshold.\n\n";
    s += "| Threshold |";
    for r in &rep.pooled {
        let _ = write!(s, " {} coverage (%) | {} risk (%) |", r.system, r.system);
    }
    s += "\n|---|";
    s += &"---|---|".repeat(rep.pooled.len());
    s += "\n";
    if let Some(first) = rep.pooled.first() {
        for (i, row) in first.thresholds.iter().enumerate() {
            let _ = write!(s, "| {:.2} |", row.theta);
            for r in &rep.pooled {
                let t = &r.thresholds[i];
                let risk = t.risk.map_or_else(|| "n/a".into(), |v| format!("{:.1}", 100.0 * v));
                let _ = write!(s, " {:.1} | {} |", 100.0 * t.coverage, risk);
            }
            s += "\n";
        }
    }

    s += "\n## Per-class metrics\n\nOne-vs-rest over non-abstained pooled test predictions.\n\n";
    for r in &rep.pooled {
        let _ = writeln!(s, "### {}\n\n| Class | Support | Precision | Recall | F1 |\n|---|---|---|---|---|", r.system);
        for c in &r.per_class {
            let _ = writeln!(
                s,
                "| {} | {} | {:.3} | {:.3} | {:.3} |",
                c.class, c.support, c.precision, c.recall, c.f1
            );
        }
        s += "\n";
    }

    s += "## Figures\n\n![Reliability diagram](reliability.svg)\n\n![Risk-coverage curves](risk_coverage.svg)\n\n";

    let review: Vec<&CaseRecord> = records.iter().filter(|r| r.status == Verification::Abstained).collect();
    if !records.is_empty() {
        let _ = writeln!(s, "## Cases routed to manual review\n\n{} of {} cases abstained.\n", review.len(), records.len());
        if !review.is_empty() {
            s += "| Case | Truth | Rule | Arbiter | Report | Chart panel |\n|---|---|---|---|---|---|\n";
            for r in review {
                let arb = match (r.llm_label, r.llm_confidence) {
                    (Some(l), Some(c)) => format!("{l} ({:.1}%)", 100.0 * c),
                    _ => "unavailable".into(),
                };
                let _ = writeln!(
                    s,
                    "| {} | {} | {} ({:.1}%) | {} | {} | {} |",
                    r.sample_id,
                    r.truth,
                    r.rule_label,
                    100.0 * r.rule_confidence,
                    arb,
                    r.report_path.as_deref().unwrap_or("n/a"),
                    r.panel_path.as_deref().unwrap_or("n/a"),
                );
            }
        }
    }
    s
}

#[derive(Serialize)]
struct ComparisonCsvRow<'a> {
    system: &'a str,
    accuracy_mean: f64,
    accuracy_std: f64,
    ece_mean: Option<f64>,
    ece_std: Option<f64>,
    nll_mean: f64,
    nll_std: f64,
    aurc_mean: f64,
    aurc_std: f64,
    auacc_mean: f64,
    auacc_std: f64,
    abstention_mean: f64,
    abstention_std: f64,
}

#[derive(Serialize)]
struct ThresholdCsvRow<'a> {
    system: &'a str,
    theta: f64,
    count: usize,
    coverage: f64,
    risk: Option<f64>,
}

#[derive(Serialize)]
struct ReliabilityCsvRow<'a> {
    system: &'a str,
    lo: f64,
    hi: f64,
    count: usize,
    mean_confidence: f64,
    accuracy: f64,
}

#[derive(Serialize)]
struct CurveCsvRow<'a> {
    system: &'a str,
    coverage: f64,
    risk: f64,
}

/// Writes `report.md`, `reliability.svg`, `risk_coverage.svg` and the CSV
/// exports into `dir`. Returns the markdown path.
pub fn write_report(dir: &Path, rep: &ComparisonReport, records: &[CaseRecord]) -> Result<PathBuf> {
    let md = dir.join("report.md");
    write_text(&md, &render_markdown(rep, records))?;

    let pooled: Vec<&EvalReport> = rep.pooled.iter().collect();
    let rel: Vec<(&str, &[crate::calibration::ReliabilityBin])> =
        pooled.iter().map(|r| (r.system.as_str(), r.reliability.as_slice())).collect();
    write_text(&dir.join("reliability.svg"), &reliability_diagram("Reliability (pooled test predictions)", &rel))?;
    let curves: Vec<(&str, crate::calibration::RiskCoverage)> = pooled
        .iter()
        .map(|r| {
            (
                r.system.as_str(),
                crate::calibration::RiskCoverage {
                    curve: r.risk_coverage.clone(),
                    aurc: r.aurc,
                    auacc: r.auacc,
                    thresholds: r.thresholds.clone(),
                },
            )
        })
        .collect();
    let curve_refs: Vec<(&str, &crate::calibration::RiskCoverage)> = curves.iter().map(|(n, c)| (*n, c)).collect();
    write_text(&dir.join("risk_coverage.svg"), &risk_coverage_plot("Risk-coverage (pooled test predictions)", &curve_refs))?;

    let comparison: Vec<ComparisonCsvRow> = rep
        .summaries
        .iter()
        .map(|s| ComparisonCsvRow {
            system: &s.system,
            accuracy_mean: s.accuracy.mean,
            accuracy_std: s.accuracy.std,
            ece_mean: s.ece.map(|e| e.mean),
            ece_std: s.ece.map(|e| e.std),
            nll_mean: s.nll.mean,
            nll_std: s.nll.std,
            aurc_mean: s.aurc.mean,
            aurc_std: s.aurc.std,
            auacc_mean: s.auacc.mean,
            auacc_std: s.auacc.std,
            abstention_mean: s.abstention_rate.mean,
            abstention_std: s.abstention_rate.std,
        })
        .collect();
    write_rows(&dir.join("comparison.csv"), &comparison)?;

    let thresholds: Vec<ThresholdCsvRow> = pooled
        .iter()
        .flat_map(|r| {
            r.thresholds.iter().map(move |t| ThresholdCsvRow {
                system: &r.system,
                theta: t.theta,
                count: t.count,
                coverage: t.coverage,
                risk: t.risk,
            })
        })
        .collect();
    write_rows(&dir.join("thresholds.csv"), &thresholds)?;

    let bins: Vec<ReliabilityCsvRow> = pooled
        .iter()
        .flat_map(|r| {
            r.reliability.iter().map(move |b| ReliabilityCsvRow {
                system: &r.system,
                lo: b.lo,
                hi: b.hi,
                count: b.count,
                mean_confidence: b.mean_confidence,
                accuracy: b.accuracy,
            })
        })
        .collect();
    write_rows(&dir.join("reliability.csv"), &bins)?;

    let curve: Vec<CurveCsvRow> = pooled
        .iter()
        .flat_map(|r| {
            r.risk_coverage.iter().map(move |p| CurveCsvRow {
                system: &r.system,
                coverage: p.coverage,
                risk: p.risk,
            })
        })
        .collect();
    write_rows(&dir.join("risk_coverage.csv"), &curve)?;
    Ok(md)
}
