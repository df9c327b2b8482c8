use std::sync::LazyLock;

use regex::Regex;

use crate::class::FaultClass;
use crate::dsp::{FeatureVector, FEATURE_LABELS};
use crate::error::{Error, Result};

pub const STEP_HEADINGS: [&str; 4] = [
    "Hypothesis Verification",
    "Evidence Synthesis & Cross-Validation",
    "Conflict Arbitration",
    "Final Verdict Formulation",
];

const STEP_INSTRUCTIONS: [&str; 4] = [
    "State what evidence the rule-based hypothesis would require and check whether the features and charts show it.",
    "Cross-check the numeric features against the four charts. Note where they support each other and where they disagree.",
    "If the evidence contradicts the rule-based hypothesis, name the fault it points to instead and explain why the rule engine was misled.",
    "Commit to one class from the allowed list and state your confidence as an integer percentage.",
];

/// Everything sent to a chat-completions backend for one case.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub case_id: String,
    pub system: String,
    pub user: String,
    pub image_png: Option<Vec<u8>>,
}

fn format_value(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-3) {
        format!("{v:.4e}")
    } else {
        format!("{v:.4}")
    }
}

pub fn build_prompt(
    f: &FeatureVector,
    shaft_freq: f64,
    d_rule: FaultClass,
    c_rule: f64,
    panel_png: Option<Vec<u8>>,
    case_id: &str,
) -> PromptBundle {
    let system = "You are a Chief Reliability Engineer with 25 years of experience in vibration \
                  analysis and fault diagnosis of rotating machinery. You review preliminary \
                  diagnoses produced by a probabilistic rule engine and either confirm them or \
                  correct them based on the evidence."
        .to_string();

    let mut u = String::new();
    u.push_str("A rule engine has produced a preliminary diagnosis for a machine. Review it.\n\n");
    u.push_str(&format!(
        "Rule-Based Diagnosis: {} ({:.1}%)\n\n",
        d_rule.as_str(),
        100.0 * c_rule
    ));
    u.push_str("Operating Context:\n");
    u.push_str(&format!("Shaft Frequency (Hz) = {shaft_freq:.2}\n\n"));
    u.push_str("Extracted Features:\n");
    for (label, v) in FEATURE_LABELS.iter().zip(f.to_array()) {
        u.push_str(&format!("- {label}: {}\n", format_value(v)));
    }
    u.push_str("\nDiagnostic Charts:\n");
    u.push_str(
        "The attached image is the four-chart diagnostic panel for this machine: time-domain \
         waveform (top left), FFT spectrum (top right), order spectrum with shaft harmonics \
         marked (bottom left) and envelope spectrum (bottom right).\n\n",
    );
    u.push_str("Task:\n");
    for (i, (h, text)) in STEP_HEADINGS.iter().zip(STEP_INSTRUCTIONS).enumerate() {
        u.push_str(&format!("{}. {h}: {text}\n", i + 1));
    }
    u.push_str("\nOutput Format:\n");
    u.push_str("Write one short paragraph per step, each starting with the step name. Then end with exactly these lines:\n");
    u.push_str("Final Diagnosis: <class>\n");
    u.push_str("Confidence Level: <integer>%\n");
    u.push_str("Rationale: <one or two sentences>\n");
    let names: Vec<&str> = FaultClass::ALL.iter().map(|c| c.as_str()).collect();
    u.push_str(&format!("<class> must be one of: {}.\n", names.join(", ")));

    PromptBundle {
        case_id: case_id.to_string(),
        system,
        user: u,
        image_png: panel_png,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedVerdict {
    pub label: FaultClass,
    /// The sample's own stated confidence in [0, 1], if given.
    pub stated_confidence: Option<f64>,
    pub rationale: String,
    pub step_reports: Vec<String>,
}

static DIAGNOSIS_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?im)final\s+diagnosis\s*[:：]\s*\**\s*([^\n]*)").unwrap());
static CONFIDENCE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)confidence\s+level\s*[:：]\s*\**\s*(\d+(?:\.\d+)?)\s*%").unwrap()
});
static RATIONALE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?is)rationale\s*[:：]\s*(.*)").unwrap());
static CLASS_RES: LazyLock<Vec<(FaultClass, Regex)>> = LazyLock::new(|| {
    FaultClass::ALL
        .iter()
        .map(|c| {
            let pat = c.as_str().replace('_', r"[\s_-]*");
            (*c, Regex::new(&format!(r"(?i)\b{pat}\b")).unwrap())
        })
        .collect()
});

/// Maps free label text to a class: exact canonical name first, then the
/// earliest whole-word mention of any class name.
fn match_class(text: &str) -> Option<FaultClass> {
    let cleaned: String = text
        .trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_string();
    if let Ok(c) = cleaned.parse::<FaultClass>() {
        return Some(c);
    }
    CLASS_RES
        .iter()
        .filter_map(|(c, re)| re.find(text).map(|m| (m.start(), *c)))
        .min()
        .map(|(_, c)| c)
}

fn step_reports(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let found: Vec<(usize, usize)> = STEP_HEADINGS
        .iter()
        .filter_map(|h| lower.find(&h.to_lowercase()).map(|p| (p, p + h.len())))
        .collect();
    let stop = lower.find("final diagnosis").unwrap_or(text.len());
    found
        .iter()
        .map(|&(_, body_start)| {
            let end = found
                .iter()
                .map(|&(s, _)| s)
                .filter(|&s| s > body_start)
                .chain(std::iter::once(stop))
                .filter(|&s| s >= body_start)
                .min()
                .unwrap_or(text.len());
            text.get(body_start..end)
                .unwrap_or("")
                .trim_start_matches(|c: char| c == ':' || c == '*' || c.is_whitespace())
                .trim()
                .to_string()
        })
        .collect()
}

/// Extracts the verdict from a structured response. The stated confidence is
/// kept for audit only.
pub fn parse_verdict(text: &str) -> Result<ParsedVerdict> {
    let caps = DIAGNOSIS_RE
        .captures(text)
        .ok_or_else(|| Error::Parse("no `Final Diagnosis:` line".into()))?;
    let line = caps.get(1).map_or("", |m| m.as_str());
    // the label ends where an inline confidence clause starts
    let label_text = line
        .split(['-', '|', ',', '('])
        .next()
        .unwrap_or("");
    let label = match_class(label_text)
        .or_else(|| match_class(line))
        .ok_or_else(|| Error::Parse(format!("unrecognized diagnosis `{}`", line.trim())))?;
    let stated_confidence = CONFIDENCE_RE
        .captures(text)
        .and_then(|c| c[1].parse::<f64>().ok())
        .filter(|p| (0.0..=100.0).contains(p))
        .map(|p| p / 100.0);
    let rationale = RATIONALE_RE
        .captures(text)
        .map(|c| c[1].trim().to_string())
        .unwrap_or_default();
    Ok(ParsedVerdict {
        label,
        stated_confidence,
        rationale,
        step_reports: step_reports(text),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features() -> FeatureVector {
        FeatureVector::from_slice(&[
            1.2, 2.4, 2.6, 3.0, 3.5, 60.0, 1250.0, 1.0, 0.716, 0.716, 10.0, 3.2, 270.0,
        ])
        .unwrap()
    }

    #[test]
    fn prompt_structure() {
        let p = build_prompt(&features(), 60.0, FaultClass::GearFault, 0.466, None, "c1");
        for h in STEP_HEADINGS {
            assert!(p.user.contains(h), "{h}");
        }
        let hyp = p.user.lines().find(|l| l.starts_with("Rule-Based Diagnosis:")).unwrap();
        assert!(hyp.contains("gear_fault") && hyp.contains("46.6%"), "{hyp}");
        assert_eq!(p.user.lines().filter(|l| l.starts_with("- ")).count(), 13);
        assert!(p.user.contains("Final Diagnosis: <class>"));
        assert!(p.user.contains("Confidence Level: <integer>%"));
        assert!(p.system.contains("Chief Reliability Engineer with 25 years of experience"));
    }

    #[test]
    fn parses_inline_verdict() {
        let v = parse_verdict("Final Diagnosis: Looseness - Confidence Level: 85%").unwrap();
        assert_eq!(v.label, FaultClass::Looseness);
        assert_eq!(v.stated_confidence, Some(0.85));
    }

    #[test]
    fn parses_case_and_spacing() {
        let v = parse_verdict("final diagnosis: MISALIGNMENT\nConfidence Level: 85 %").unwrap();
        assert_eq!(v.label, FaultClass::Misalignment);
        assert_eq!(v.stated_confidence, Some(0.85));
    }

    #[test]
    fn rejects_free_text() {
        assert!(matches!(
            parse_verdict("I cannot determine the fault."),
            Err(Error::Parse(_))
        ));
        assert!(parse_verdict("Final Diagnosis: something odd").is_err());
    }

    #[test]
    fn fuzzy_names_and_sections() {
        let text = "Hypothesis Verification: the gear band is quiet.\n\
                    Evidence Synthesis & Cross-Validation: strong 2X.\n\
                    Conflict Arbitration: rule engine misled.\n\
                    Final Verdict Formulation: settle.\n\
                    Final Diagnosis: **Bearing Damage** (outer race)\n\
                    Confidence Level: 90%\n\
                    Rationale: periodic impacts at the defect rate.";
        let v = parse_verdict(text).unwrap();
        assert_eq!(v.label, FaultClass::BearingDamage);
        assert_eq!(v.rationale, "periodic impacts at the defect rate.");
        assert_eq!(v.step_reports.len(), 4);
        assert_eq!(v.step_reports[1], "strong 2X.");
        assert_eq!(v.step_reports[3], "settle.");
        let v = parse_verdict("Final Diagnosis: likely gear-fault with worn teeth").unwrap();
        assert_eq!(v.label, FaultClass::GearFault);
        assert_eq!(v.stated_confidence, None);
        // "abnormal" must not read as "normal"
        let v = parse_verdict("Final Diagnosis: abnormal imbalance").unwrap();
        assert_eq!(v.label, FaultClass::Imbalance);
    }
}
