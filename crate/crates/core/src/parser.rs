//! Extraction of the contractual structures from agent text: the fenced JSON
//! status summary, the `<ANALYSIS_SUMMARY>` trial scope and the `<DONE>` token.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::registry::NctId;

pub const DONE_TOKEN: &str = "<DONE>";
pub const SUMMARY_KEY: &str = "patient_status_summary";
pub const FALLBACK_SUMMARY: &str = "There is not enough information to provide a status report.";
pub const ANALYSIS_OPEN: &str = "<ANALYSIS_SUMMARY>";
pub const ANALYSIS_CLOSE: &str = "</ANALYSIS_SUMMARY>";

pub const SENTINEL_TRIALS_FOUND: &str = "is potentially eligible to participate";
pub const SENTINEL_NONE_FOUND: &str = "No relevant clinical trials were found";
pub const SENTINEL_DEMOGRAPHICS: &str = "age and sex could not be retrieved";
pub const SENTINEL_SEARCH_ERROR: &str = "An error occurred when searching";

const HEADER_PREFIX: &str = "Clinical Trials Eligibility Summary for ";

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ParseError {
    #[error("no fenced block contains a \"patient_status_summary\" key")]
    NoSummary,
    #[error("\"patient_status_summary\" is not a string")]
    SummaryNotString,
    #[error("no <ANALYSIS_SUMMARY> scope found")]
    MissingScope,
    #[error("unparseable <ANALYSIS_SUMMARY> scope: {reason}")]
    Unparseable { reason: String, region: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryPayload {
    pub text: String,
    pub is_fallback: bool,
}

impl SummaryPayload {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            is_fallback: text == FALLBACK_SUMMARY,
            text,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisScenario {
    TrialsFound,
    NoneFound,
    DemographicsMissing,
    SearchError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub nct_id: NctId,
    pub title: String,
    pub met_summary: String,
    pub unknown_summary: String,
    pub not_applicable_summary: String,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub scenario: AnalysisScenario,
    pub entries: Vec<TrialEntry>,
    pub patient_display_name: String,
}

/// Splits text into lines tagged with whether each sits inside a fenced code
/// block. Fence marker lines themselves are reported as inside. A line that
/// opens with three backticks toggles the state; inside a fence, a line that
/// ends with three backticks also closes it (`</ANALYSIS_SUMMARY>```).
fn fence_scan(text: &str) -> Vec<(&str, bool)> {
    let mut in_fence = false;
    let mut out = Vec::new();
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with("```") {
            let closes_same_line = trimmed.len() > 3 && trimmed.ends_with("```") && !in_fence;
            out.push((line, true));
            if !closes_same_line {
                in_fence = !in_fence;
            }
        } else if in_fence && trimmed.ends_with("```") {
            out.push((line, true));
            in_fence = false;
        } else {
            out.push((line, in_fence));
        }
    }
    out
}

fn fenced_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    let mut in_fence = false;
    for line in text.lines() {
        let trimmed = line.trim();
        let is_marker = trimmed.starts_with("```") || (in_fence && trimmed.ends_with("```"));
        if is_marker {
            if in_fence {
                let before_ticks = trimmed.trim_end_matches('`');
                let mut lines = current.take().unwrap_or_default();
                if !trimmed.starts_with("```") && !before_ticks.is_empty() {
                    lines.push(before_ticks);
                }
                blocks.push(lines.join("\n"));
                in_fence = false;
            } else {
                let after = trimmed.trim_start_matches('`');
                if trimmed.len() > 3 && trimmed.ends_with("```") && after.len() >= 3 {
                    // ```{...}``` on one line
                    blocks.push(after.trim_end_matches('`').to_string());
                } else {
                    current = Some(Vec::new());
                    in_fence = true;
                }
            }
        } else if let Some(lines) = current.as_mut() {
            lines.push(line);
        }
    }
    blocks
}

fn json_objects_in(block: &str) -> Vec<serde_json::Map<String, Value>> {
    if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(block.trim()) {
        return vec![map];
    }
    let mut found: Vec<_> = block
        .lines()
        .map(str::trim)
        .filter(|l| l.starts_with('{'))
        .filter_map(|l| match serde_json::from_str::<Value>(l) {
            Ok(Value::Object(map)) => Some(map),
            _ => None,
        })
        .collect();
    if found.is_empty() {
        if let (Some(start), Some(end)) = (block.find('{'), block.rfind('}')) {
            if start < end {
                if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(&block[start..=end]) {
                    found.push(map);
                }
            }
        }
    }
    found
}

/// Returns the `patient_status_summary` from the last fenced block that
/// carries the key.
pub fn extract_json_summary(text: &str) -> Result<SummaryPayload, ParseError> {
    let value = fenced_blocks(text)
        .iter()
        .flat_map(|b| json_objects_in(b))
        .filter_map(|mut obj| obj.remove(SUMMARY_KEY))
        .next_back()
        .ok_or(ParseError::NoSummary)?;
    match value {
        Value::String(s) => Ok(SummaryPayload::new(s)),
        _ => Err(ParseError::SummaryNotString),
    }
}

fn strip_inline_code(line: &str) -> String {
    line.split('`').step_by(2).collect()
}

/// True iff `<DONE>` appears outside fenced blocks and inline code spans.
pub fn detect_done(text: &str) -> bool {
    fence_scan(text)
        .into_iter()
        .filter(|(_, fenced)| !fenced)
        .any(|(line, _)| strip_inline_code(line).contains(DONE_TOKEN))
}

static ENTRY_HEADING: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^#{1,6}\s*(\d+)\.\s*\*\*(.+?)\*\*\s*$").expect("valid regex"));
static ENTRY_FIELD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^[-*]\s*\*\*(Title|Criteria Evaluation Summary|Met|Unknown|Not Applicable|URL):\*\*\s*(.*)$")
        .expect("valid regex")
});

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Default)]
struct EntryDraft {
    nct: String,
    title: Option<String>,
    met: Option<String>,
    unknown: Option<String>,
    not_applicable: Option<String>,
    url: Option<String>,
}

impl EntryDraft {
    fn finish(self, region: &str) -> Result<TrialEntry, ParseError> {
        let unparseable = |reason: String| ParseError::Unparseable {
            reason,
            region: region.to_string(),
        };
        let nct_id = NctId::parse(&self.nct)
            .map_err(|_| unparseable(format!("invalid NCT id {:?}", self.nct)))?;
        let missing = |field: &str| unparseable(format!("entry {} lacks {field}", self.nct));
        Ok(TrialEntry {
            title: self.title.ok_or_else(|| missing("Title"))?,
            url: self.url.ok_or_else(|| missing("URL"))?,
            met_summary: self.met.unwrap_or_default(),
            unknown_summary: self.unknown.unwrap_or_default(),
            not_applicable_summary: self.not_applicable.unwrap_or_default(),
            nct_id,
        })
    }
}

/// Parses the last `<ANALYSIS_SUMMARY>` scope in `text`. The closing tag may be
/// missing, in which case the scope runs to the end of the text.
pub fn extract_analysis_summary(text: &str) -> Result<AnalysisSummary, ParseError> {
    let start = text.rfind(ANALYSIS_OPEN).ok_or(ParseError::MissingScope)? + ANALYSIS_OPEN.len();
    let rest = &text[start..];
    let region = match rest.find(ANALYSIS_CLOSE) {
        Some(end) => &rest[..end],
        None => rest,
    };
    let unparseable = |reason: &str| ParseError::Unparseable {
        reason: reason.to_string(),
        region: region.to_string(),
    };

    let lines: Vec<&str> = region
        .lines()
        .map(str::trim)
        .filter(|l| !l.chars().all(|c| c == '`'))
        .collect();
    let flat = collapse_ws(&lines.join(" "));

    let scenario = if flat.contains(SENTINEL_TRIALS_FOUND) {
        AnalysisScenario::TrialsFound
    } else if flat.contains(SENTINEL_NONE_FOUND) {
        AnalysisScenario::NoneFound
    } else if flat.contains(SENTINEL_DEMOGRAPHICS) {
        AnalysisScenario::DemographicsMissing
    } else if flat.contains(SENTINEL_SEARCH_ERROR) {
        AnalysisScenario::SearchError
    } else {
        return Err(unparseable("no scenario sentinel phrase found"));
    };

    let patient_display_name = lines
        .iter()
        .find_map(|l| {
            l.trim_start_matches('#')
                .trim()
                .strip_prefix(HEADER_PREFIX)
                .map(|n| n.trim().to_string())
        })
        .unwrap_or_default();

    let mut entries = Vec::new();
    let mut draft: Option<EntryDraft> = None;
    for line in &lines {
        if let Some(caps) = ENTRY_HEADING.captures(line) {
            if let Some(done) = draft.take() {
                entries.push(done.finish(region)?);
            }
            draft = Some(EntryDraft {
                nct: caps[2].trim().to_string(),
                ..EntryDraft::default()
            });
            continue;
        }
        let (Some(d), Some(caps)) = (draft.as_mut(), ENTRY_FIELD.captures(line)) else {
            continue;
        };
        let value = caps[2].trim().to_string();
        match &caps[1] {
            "Title" => d.title = Some(value),
            "Met" => d.met = Some(value),
            "Unknown" => d.unknown = Some(value),
            "Not Applicable" => d.not_applicable = Some(value),
            "URL" => d.url = Some(value),
            _ => {}
        }
    }
    if let Some(done) = draft.take() {
        entries.push(done.finish(region)?);
    }

    match (scenario, entries.is_empty()) {
        (AnalysisScenario::TrialsFound, true) => Err(unparseable("success scope lists no trials")),
        (AnalysisScenario::TrialsFound, false) | (_, true) => Ok(AnalysisSummary {
            scenario,
            entries,
            patient_display_name,
        }),
        (_, false) => Err(unparseable("trial entries present in a no-trial scenario")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extracts_single_block() {
        let text = "Timeline...\n```\n{\"patient_status_summary\": \"Stable, day 12 of 28 fractions.\"}\n```\n<DONE>";
        assert_eq!(
            extract_json_summary(text).unwrap(),
            SummaryPayload {
                text: "Stable, day 12 of 28 fractions.".into(),
                is_fallback: false
            }
        );
    }

    #[test]
    fn fallback_flag_is_exact_match() {
        let text = format!("```\n...\n{{\"patient_status_summary\": \"{FALLBACK_SUMMARY}\"}}\n...\n```");
        assert!(extract_json_summary(&text).unwrap().is_fallback);
        let near = "```\n{\"patient_status_summary\": \"There is not enough information to provide a status report\"}\n```";
        assert!(!extract_json_summary(near).unwrap().is_fallback);
    }

    #[test]
    fn last_block_with_key_wins() {
        let text = "```json\n{\"patient_status_summary\": \"draft\"}\n```\nthen\n```\n{\"other\": 1}\n```\n```\n{\"patient_status_summary\": \"final\"}\n```\ntrailing prose";
        assert_eq!(extract_json_summary(text).unwrap().text, "final");
    }

    #[test]
    fn summary_errors() {
        assert_eq!(extract_json_summary("no fences here"), Err(ParseError::NoSummary));
        assert_eq!(
            extract_json_summary("```\n{\"patient_status_summary\": 4}\n```"),
            Err(ParseError::SummaryNotString)
        );
    }

    #[test]
    fn done_detection_is_fence_aware() {
        assert!(detect_done("...summary... <DONE>"));
        assert!(!detect_done("```\n<DONE>\n```"));
        assert!(!detect_done("` <DONE> `"));
        assert!(!detect_done(""));
        assert!(detect_done("```<ANALYSIS_SUMMARY>\nx\n</ANALYSIS_SUMMARY>```\n<DONE>"));
    }

    const NONE_FOUND: &str = "```<ANALYSIS_SUMMARY>\n### Clinical Trials Eligibility Summary for Jane Roe\nNo relevant clinical trials were found for Jane Roe.\n</ANALYSIS_SUMMARY>```";

    #[test]
    fn parses_none_found_template() {
        let s = extract_analysis_summary(NONE_FOUND).unwrap();
        assert_eq!(s.scenario, AnalysisScenario::NoneFound);
        assert!(s.entries.is_empty());
        assert_eq!(s.patient_display_name, "Jane Roe");
    }

    #[test]
    fn parses_wrapped_demographics_template() {
        let text = "```<ANALYSIS_SUMMARY>\nClinical Trials Eligibility Summary for Jane Roe\nClinical trial eligibility could not be evaluated for patient P7 because their age and sex could not be\nretrieved.\n</ANALYSIS_SUMMARY>```";
        assert_eq!(
            extract_analysis_summary(text).unwrap().scenario,
            AnalysisScenario::DemographicsMissing
        );
    }

    #[test]
    fn error_template_without_close_tag() {
        let text = "```<ANALYSIS_SUMMARY>\n### Clinical Trials Eligibility Summary for Jane Roe\nAn error occurred when searching for clinical trials for Jane Roe.\n```";
        assert_eq!(
            extract_analysis_summary(text).unwrap().scenario,
            AnalysisScenario::SearchError
        );
    }

    #[test]
    fn parses_success_entries() {
        let text = "\
```<ANALYSIS_SUMMARY>
Clinical Trials Eligibility Summary for Jane Roe
Jane Roe is potentially eligible to participate in the
following clinical trials:
```

#### 1. **NCT00000001**

- **Title:** Proton therapy for prostate cancer
- **Criteria Evaluation Summary:**
  - **Met:** age 67 within [18,75]
  - **Unknown:** ECOG not recorded
  - **Not Applicable:** None
- **URL:** https://clinicaltrials.gov/study/NCT00000001

#### 2. **NCT00000002**

- **Title:** Hypofractionation
- **Criteria Evaluation Summary:**
  - **Met:** x
  - **Unknown:** y
  - **Not Applicable:** z
- **URL:** https://clinicaltrials.gov/study/NCT00000002

```
</ANALYSIS_SUMMARY>```
<DONE>";
        let s = extract_analysis_summary(text).unwrap();
        assert_eq!(s.scenario, AnalysisScenario::TrialsFound);
        assert_eq!(s.entries.len(), 2);
        assert_eq!(s.entries[0].unknown_summary, "ECOG not recorded");
        assert_eq!(s.entries[1].url, "https://clinicaltrials.gov/study/NCT00000002");
        assert!(detect_done(text));
    }

    #[test]
    fn scope_errors() {
        assert_eq!(extract_analysis_summary("nothing"), Err(ParseError::MissingScope));
        assert!(matches!(
            extract_analysis_summary("<ANALYSIS_SUMMARY>\nhello\n</ANALYSIS_SUMMARY>"),
            Err(ParseError::Unparseable { .. })
        ));
        let bad_id = NONE_FOUND.replace(
            "No relevant",
            "x is potentially eligible to participate\n#### 1. **NCT-1**\n- **Title:** t\n- **URL:** u\nNo relevant",
        );
        assert!(matches!(
            extract_analysis_summary(&bad_id),
            Err(ParseError::Unparseable { .. })
        ));
    }
}
