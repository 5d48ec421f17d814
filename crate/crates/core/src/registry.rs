//! Clinical-trials search with two interchangeable backends: a file-backed
//! registry used by fixtures and tests, and an HTTP client shaped like the
//! clinicaltrials.gov v2 `studies` endpoint.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Condvar, Mutex, OnceLock};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::Sex;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum RegistryError {
    #[error("trial registry transport error: {0}")]
    Transport(String),
    #[error("malformed trial registry: {0}")]
    Malformed(String),
    #[error("unknown trial {0}")]
    UnknownTrial(NctId),
    #[error("invalid NCT id {0:?}")]
    InvalidId(String),
    #[error("invalid trial query: {0}")]
    InvalidQuery(String),
}

static NCT_PATTERN: OnceLock<Regex> = OnceLock::new();

/// Registry identifier: `NCT` followed by exactly eight digits.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct NctId(String);

impl NctId {
    pub fn parse(raw: &str) -> Result<Self, RegistryError> {
        let re = NCT_PATTERN.get_or_init(|| Regex::new(r"^NCT\d{8}$").expect("valid regex"));
        if re.is_match(raw) {
            Ok(Self(raw.to_string()))
        } else {
            Err(RegistryError::InvalidId(raw.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for NctId {
    type Err = RegistryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NctId::parse(s)
    }
}

impl fmt::Display for NctId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for NctId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        NctId::parse(&raw).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverallStatus {
    Recruiting,
    ActiveNotRecruiting,
    Completed,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrialSex {
    #[default]
    All,
    Female,
    Male,
}

impl TrialSex {
    pub fn admits(self, sex: Sex) -> bool {
        match (self, sex) {
            (TrialSex::All, _) => true,
            (TrialSex::Female, Sex::Female) | (TrialSex::Male, Sex::Male) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Inclusion,
    Exclusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl Comparator {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparator::Lt => lhs < rhs,
            Comparator::Le => lhs <= rhs,
            Comparator::Gt => lhs > rhs,
            Comparator::Ge => lhs >= rhs,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentCategory {
    Radiation,
    Systemic,
    Surgery,
}

/// The closed set of machine-checkable criterion kinds. Each predicate is a
/// statement about the patient; polarity decides whether it must hold or must
/// not hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CriterionPredicate {
    AgeRange {
        #[serde(default)]
        min_years: Option<f64>,
        #[serde(default)]
        max_years: Option<f64>,
    },
    Sex {
        sex: TrialSex,
    },
    DiagnosisMatch {
        terms: Vec<String>,
    },
    RequiresPriorTreatment {
        category: TreatmentCategory,
        #[serde(default)]
        site: Option<String>,
        #[serde(default)]
        agent: Option<String>,
    },
    ExcludesPriorTreatment {
        category: TreatmentCategory,
        #[serde(default)]
        site: Option<String>,
        #[serde(default)]
        agent: Option<String>,
    },
    LabThreshold {
        analyte: String,
        comparator: Comparator,
        value: f64,
    },
    EcogMax {
        max: u8,
    },
    FreeText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub criterion_id: String,
    pub description: String,
    pub polarity: Polarity,
    pub predicate: CriterionPredicate,
    /// Disease site the criterion is scoped to, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub nct_id: NctId,
    pub title: String,
    pub overall_status: OverallStatus,
    #[serde(default)]
    pub locations: Vec<String>,
    #[serde(default)]
    pub conditions: Vec<String>,
    #[serde(default)]
    pub interventions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_age_years: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_age_years: Option<f64>,
    #[serde(default)]
    pub sex: TrialSex,
    #[serde(default)]
    pub criteria: Vec<Criterion>,
    pub url: String,
}

/// Search request. The status filter is fixed to recruiting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialQuery {
    pub condition_terms: Vec<String>,
    #[serde(default)]
    pub intervention_terms: Vec<String>,
    #[serde(default)]
    pub age_years: Option<f64>,
    #[serde(default)]
    pub sex: Option<Sex>,
    pub institution: String,
}

impl TrialQuery {
    pub fn validate(&self) -> Result<(), RegistryError> {
        if !self.condition_terms.iter().any(|t| !tokens(t).is_empty()) {
            return Err(RegistryError::InvalidQuery(
                "at least one condition term is required".into(),
            ));
        }
        Ok(())
    }
}

/// Lowercases, strips punctuation and splits on whitespace.
pub fn tokens(text: &str) -> Vec<String> {
    text.chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

/// Whole-token match: the term's tokens occur as a contiguous run inside the
/// keyword's tokens.
pub fn term_matches(term: &str, keyword: &str) -> bool {
    let needle = tokens(term);
    let hay = tokens(keyword);
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle.as_slice())
}

pub fn any_term_matches(terms: &[String], keywords: &[String]) -> bool {
    terms
        .iter()
        .any(|t| keywords.iter().any(|k| term_matches(t, k)))
}

/// The post-condition every backend guarantees for a returned trial.
pub fn trial_satisfies(trial: &TrialRecord, query: &TrialQuery) -> bool {
    if trial.overall_status != OverallStatus::Recruiting {
        return false;
    }
    let institution = query.institution.trim();
    if !trial
        .locations
        .iter()
        .any(|l| l.trim().eq_ignore_ascii_case(institution))
    {
        return false;
    }
    if let Some(age) = query.age_years {
        if trial.min_age_years.is_some_and(|min| age < min)
            || trial.max_age_years.is_some_and(|max| age > max)
        {
            return false;
        }
    }
    if let Some(sex) = query.sex.filter(|s| *s != Sex::Unknown) {
        if !trial.sex.admits(sex) {
            return false;
        }
    }
    if !any_term_matches(&query.condition_terms, &trial.conditions) {
        return false;
    }
    query.intervention_terms.is_empty()
        || any_term_matches(&query.intervention_terms, &trial.interventions)
}

pub trait TrialRegistry: Send + Sync {
    fn search_trials(&self, query: &TrialQuery) -> Result<Vec<TrialRecord>, RegistryError>;
    fn get_trial(&self, nct_id: &str) -> Result<TrialRecord, RegistryError>;
}

/// Registry backed by a `trials.json` array. The file is read on first use;
/// a malformed file surfaces as an error from every call.
#[derive(Debug)]
pub struct FileRegistry {
    source: Option<PathBuf>,
    trials: OnceLock<Result<Vec<TrialRecord>, RegistryError>>,
}

impl FileRegistry {
    pub fn open(path: impl AsRef<Path>) -> Self {
        Self {
            source: Some(path.as_ref().to_path_buf()),
            trials: OnceLock::new(),
        }
    }

    pub fn from_records(records: Vec<TrialRecord>) -> Result<Self, RegistryError> {
        let cell = OnceLock::new();
        let _ = cell.set(check_records(records));
        let registry = Self {
            source: None,
            trials: cell,
        };
        registry.records()?;
        Ok(registry)
    }

    pub fn records(&self) -> Result<&[TrialRecord], RegistryError> {
        let loaded = self.trials.get_or_init(|| {
            let path = self.source.as_ref().expect("path-backed registry");
            let text = std::fs::read_to_string(path)
                .map_err(|e| RegistryError::Malformed(format!("{}: {e}", path.display())))?;
            let records: Vec<TrialRecord> = serde_json::from_str(&text).map_err(|e| {
                RegistryError::Malformed(format!(
                    "{}:{}:{}: {e}",
                    path.display(),
                    e.line(),
                    e.column()
                ))
            })?;
            check_records(records)
        });
        loaded.as_deref().map_err(Clone::clone)
    }
}

fn check_records(mut records: Vec<TrialRecord>) -> Result<Vec<TrialRecord>, RegistryError> {
    records.sort_by(|a, b| a.nct_id.cmp(&b.nct_id));
    if let Some(w) = records.windows(2).find(|w| w[0].nct_id == w[1].nct_id) {
        return Err(RegistryError::Malformed(format!(
            "duplicate trial {}",
            w[0].nct_id
        )));
    }
    if let Some(t) = records.iter().find(|t| t.url.trim().is_empty()) {
        return Err(RegistryError::Malformed(format!("trial {} has no url", t.nct_id)));
    }
    Ok(records)
}

impl TrialRegistry for FileRegistry {
    fn search_trials(&self, query: &TrialQuery) -> Result<Vec<TrialRecord>, RegistryError> {
        query.validate()?;
        Ok(self
            .records()?
            .iter()
            .filter(|t| trial_satisfies(t, query))
            .cloned()
            .collect())
    }

    fn get_trial(&self, nct_id: &str) -> Result<TrialRecord, RegistryError> {
        let id = NctId::parse(nct_id)?;
        self.records()?
            .iter()
            .find(|t| t.nct_id == id)
            .cloned()
            .ok_or(RegistryError::UnknownTrial(id))
    }
}

/// Counting gate bounding concurrent HTTP requests.
#[derive(Debug)]
struct InFlightGate {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlightGate {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn enter(&self) -> InFlightPermit<'_> {
        let mut active = self.active.lock().expect("gate lock");
        while *active >= self.limit {
            active = self.freed.wait(active).expect("gate lock");
        }
        *active += 1;
        InFlightPermit { gate: self }
    }
}

struct InFlightPermit<'a> {
    gate: &'a InFlightGate,
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        *self.gate.active.lock().expect("gate lock") -= 1;
        self.gate.freed.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpRegistryConfig {
    pub base_url: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_page_size")]
    pub page_size: usize,
}

fn default_timeout_secs() -> u64 {
    20
}

fn default_max_in_flight() -> usize {
    4
}

fn default_page_size() -> usize {
    100
}

/// Hard cap on trials collected by one query across all pages.
pub const HTTP_MAX_TRIALS_PER_QUERY: usize = 200;

/// Client for a clinicaltrials.gov v2 shaped API. Live results are re-filtered
/// locally so both backends honor the same post-condition.
#[derive(Debug)]
pub struct HttpRegistry {
    config: HttpRegistryConfig,
    client: reqwest::blocking::Client,
    gate: InFlightGate,
}

impl HttpRegistry {
    pub fn new(config: HttpRegistryConfig) -> Result<Self, RegistryError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| RegistryError::Transport(e.to_string()))?;
        Ok(Self {
            gate: InFlightGate::new(config.max_in_flight),
            config,
            client,
        })
    }

    fn get_json(&self, url: &str, params: &[(&str, String)]) -> Result<Value, RegistryError> {
        let _permit = self.gate.enter();
        let response = self
            .client
            .get(url)
            .query(params)
            .send()
            .map_err(|e| RegistryError::Transport(e.to_string()))?;
        let status = response.status();
        if status == reqwest::StatusCode::NOT_FOUND {
            return Err(RegistryError::Transport("404 not found".into()));
        }
        if !status.is_success() {
            return Err(RegistryError::Transport(format!("HTTP {status}")));
        }
        response
            .json::<Value>()
            .map_err(|e| RegistryError::Transport(format!("invalid JSON body: {e}")))
    }

    fn studies_url(&self) -> String {
        format!("{}/studies", self.config.base_url.trim_end_matches('/'))
    }
}

impl TrialRegistry for HttpRegistry {
    fn search_trials(&self, query: &TrialQuery) -> Result<Vec<TrialRecord>, RegistryError> {
        query.validate()?;
        let mut params = vec![
            ("query.cond", query.condition_terms.join(" OR ")),
            ("filter.overallStatus", "RECRUITING".to_string()),
            ("query.locn", query.institution.clone()),
            ("pageSize", self.config.page_size.to_string()),
            ("format", "json".to_string()),
        ];
        if !query.intervention_terms.is_empty() {
            params.push(("query.intr", query.intervention_terms.join(" OR ")));
        }
        let mut found: Vec<TrialRecord> = Vec::new();
        let mut seen = BTreeSet::new();
        let mut page_token: Option<String> = None;
        loop {
            let mut page_params = params.clone();
            if let Some(token) = &page_token {
                page_params.push(("pageToken", token.clone()));
            }
            let body = self.get_json(&self.studies_url(), &page_params)?;
            let studies = body
                .get("studies")
                .and_then(Value::as_array)
                .ok_or_else(|| RegistryError::Transport("response has no studies array".into()))?;
            for study in studies {
                let record = study_to_record(study)?;
                if seen.insert(record.nct_id.clone()) {
                    found.push(record);
                }
                if found.len() >= HTTP_MAX_TRIALS_PER_QUERY {
                    break;
                }
            }
            page_token = body
                .get("nextPageToken")
                .and_then(Value::as_str)
                .map(str::to_owned);
            if page_token.is_none() || found.len() >= HTTP_MAX_TRIALS_PER_QUERY {
                break;
            }
        }
        let mut matched: Vec<TrialRecord> = found
            .into_iter()
            .filter(|t| trial_satisfies(t, query))
            .collect();
        matched.sort_by(|a, b| a.nct_id.cmp(&b.nct_id));
        Ok(matched)
    }

    fn get_trial(&self, nct_id: &str) -> Result<TrialRecord, RegistryError> {
        let id = NctId::parse(nct_id)?;
        let url = format!("{}/{}", self.studies_url(), id);
        match self.get_json(&url, &[("format", "json".to_string())]) {
            Ok(body) => study_to_record(&body),
            Err(RegistryError::Transport(msg)) if msg.starts_with("404") => {
                Err(RegistryError::UnknownTrial(id))
            }
            Err(e) => Err(e),
        }
    }
}

fn parse_age_years(raw: &str) -> Option<f64> {
    let mut parts = raw.split_whitespace();
    let n: f64 = parts.next()?.parse().ok()?;
    let unit = parts.next().unwrap_or("years").to_ascii_lowercase();
    Some(match unit.trim_end_matches('s') {
        "year" => n,
        "month" => n / 12.0,
        "week" => n / 52.0,
        "day" => n / 365.25,
        _ => return None,
    })
}

/// Maps one v2 `studies[]` element onto a trial record. Free-text
/// eligibility becomes one `free_text` criterion per bullet line.
pub fn study_to_record(study: &Value) -> Result<TrialRecord, RegistryError> {
    let protocol = study
        .get("protocolSection")
        .ok_or_else(|| RegistryError::Transport("study without protocolSection".into()))?;
    let get = |module: &str, field: &str| protocol.get(module).and_then(|m| m.get(field));
    let str_list = |v: Option<&Value>| -> Vec<String> {
        v.and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_str).map(str::to_owned).collect())
            .unwrap_or_default()
    };

    let nct_raw = get("identificationModule", "nctId")
        .and_then(Value::as_str)
        .ok_or_else(|| RegistryError::Transport("study without nctId".into()))?;
    let nct_id = NctId::parse(nct_raw)?;
    let title = get("identificationModule", "briefTitle")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let overall_status = match get("statusModule", "overallStatus").and_then(Value::as_str) {
        Some("RECRUITING") => OverallStatus::Recruiting,
        Some("ACTIVE_NOT_RECRUITING") => OverallStatus::ActiveNotRecruiting,
        Some("COMPLETED") => OverallStatus::Completed,
        _ => OverallStatus::Other,
    };
    let locations = get("contactsLocationsModule", "locations")
        .and_then(Value::as_array)
        .map(|locs| {
            locs.iter()
                .filter_map(|l| l.get("facility").and_then(Value::as_str))
                .map(str::to_owned)
                .collect()
        })
        .unwrap_or_default();
    let mut conditions = str_list(get("conditionsModule", "conditions"));
    conditions.extend(str_list(get("conditionsModule", "keywords")));
    let interventions = get("armsInterventionsModule", "interventions")
        .and_then(Value::as_array)
        .map(|items| {
            items
                .iter()
                .filter_map(|i| i.get("name").and_then(Value::as_str))
                .map(str::to_owned)
                .collect()
        })
        .unwrap_or_default();
    let eligibility = protocol.get("eligibilityModule");
    let elig_str = |field: &str| eligibility.and_then(|e| e.get(field)).and_then(Value::as_str);
    let sex = match elig_str("sex") {
        Some("FEMALE") => TrialSex::Female,
        Some("MALE") => TrialSex::Male,
        _ => TrialSex::All,
    };
    let criteria = elig_str("eligibilityCriteria")
        .map(free_text_criteria)
        .unwrap_or_default();

    Ok(TrialRecord {
        url: format!("https://clinicaltrials.gov/study/{nct_id}"),
        nct_id,
        title,
        overall_status,
        locations,
        conditions,
        interventions,
        min_age_years: elig_str("minimumAge").and_then(parse_age_years),
        max_age_years: elig_str("maximumAge").and_then(parse_age_years),
        sex,
        criteria,
    })
}

fn free_text_criteria(text: &str) -> Vec<Criterion> {
    let mut polarity = Polarity::Inclusion;
    let mut out = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let lower = line.to_ascii_lowercase();
        if lower.starts_with("inclusion criteria") {
            polarity = Polarity::Inclusion;
            continue;
        }
        if lower.starts_with("exclusion criteria") {
            polarity = Polarity::Exclusion;
            continue;
        }
        let description = line.trim_start_matches(['*', '-', '•', ' ']).to_string();
        out.push(Criterion {
            criterion_id: format!("c{}", out.len() + 1),
            description,
            polarity,
            predicate: CriterionPredicate::FreeText,
            site: None,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trial(id: &str, status: OverallStatus, cond: &[&str], intr: &[&str]) -> TrialRecord {
        TrialRecord {
            nct_id: NctId::parse(id).unwrap(),
            title: format!("Trial {id}"),
            overall_status: status,
            locations: vec!["Mayo Clinic".into()],
            conditions: cond.iter().map(|s| s.to_string()).collect(),
            interventions: intr.iter().map(|s| s.to_string()).collect(),
            min_age_years: Some(18.0),
            max_age_years: Some(75.0),
            sex: TrialSex::All,
            criteria: vec![],
            url: format!("https://clinicaltrials.gov/study/{id}"),
        }
    }

    fn query(cond: &[&str], intr: &[&str]) -> TrialQuery {
        TrialQuery {
            condition_terms: cond.iter().map(|s| s.to_string()).collect(),
            intervention_terms: intr.iter().map(|s| s.to_string()).collect(),
            age_years: Some(67.0),
            sex: Some(Sex::Male),
            institution: "Mayo Clinic".into(),
        }
    }

    #[test]
    fn nct_ids_are_validated() {
        assert!(NctId::parse("NCT00000001").is_ok());
        assert!(NctId::parse("NCT-12").is_err());
        assert!(NctId::parse("NCT123456789").is_err());
        let reg = FileRegistry::from_records(vec![]).unwrap();
        assert!(matches!(reg.get_trial("NCT-12"), Err(RegistryError::InvalidId(_))));
        assert!(matches!(reg.get_trial("NCT99999999"), Err(RegistryError::UnknownTrial(_))));
    }

    #[test]
    fn whole_token_matching() {
        assert!(term_matches("prostate cancer", "Metastatic Prostate Cancer"));
        assert!(term_matches("Prostate-Cancer", "prostate cancer"));
        assert!(!term_matches("prostate", "prostatectomy"));
        assert!(!term_matches("cancer prostate", "prostate cancer"));
        assert!(!term_matches("", "anything"));
    }

    #[test]
    fn completed_trials_are_filtered() {
        let reg = FileRegistry::from_records(vec![trial(
            "NCT00000009",
            OverallStatus::Completed,
            &["Prostate Cancer"],
            &["Proton Therapy"],
        )])
        .unwrap();
        assert!(reg
            .search_trials(&query(&["prostate cancer"], &[]))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn age_bounds_are_inclusive_and_optional() {
        let mut t = trial("NCT00000002", OverallStatus::Recruiting, &["lung cancer"], &[]);
        let mut q = query(&["lung cancer"], &[]);
        q.age_years = Some(75.0);
        assert!(trial_satisfies(&t, &q));
        q.age_years = Some(75.5);
        assert!(!trial_satisfies(&t, &q));
        t.max_age_years = None;
        assert!(trial_satisfies(&t, &q));
    }

    #[test]
    fn intervention_terms_are_conjunctive_with_conditions() {
        let t = trial(
            "NCT00000003",
            OverallStatus::Recruiting,
            &["prostate cancer"],
            &["proton therapy"],
        );
        assert!(trial_satisfies(&t, &query(&["prostate cancer"], &["proton therapy"])));
        assert!(trial_satisfies(&t, &query(&["prostate cancer"], &[])));
        assert!(!trial_satisfies(&t, &query(&["prostate cancer"], &["brachytherapy"])));
        assert!(!trial_satisfies(&t, &query(&["breast cancer"], &["proton therapy"])));
    }

    #[test]
    fn query_requires_condition() {
        let reg = FileRegistry::from_records(vec![]).unwrap();
        assert!(matches!(
            reg.search_trials(&query(&[], &["x"])),
            Err(RegistryError::InvalidQuery(_))
        ));
    }

    #[test]
    fn malformed_file_is_a_search_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trials.json");
        std::fs::write(&path, "[{\"nct_id\": 5}]").unwrap();
        let reg = FileRegistry::open(&path);
        assert!(matches!(
            reg.search_trials(&query(&["x"], &[])),
            Err(RegistryError::Malformed(_))
        ));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let t = trial("NCT00000004", OverallStatus::Recruiting, &["x"], &[]);
        assert!(FileRegistry::from_records(vec![t.clone(), t]).is_err());
    }

    #[test]
    fn maps_v2_study_documents() {
        let study = serde_json::json!({
            "protocolSection": {
                "identificationModule": {"nctId": "NCT01234567", "briefTitle": "Proton vs photon"},
                "statusModule": {"overallStatus": "RECRUITING"},
                "conditionsModule": {"conditions": ["Prostate Cancer"]},
                "armsInterventionsModule": {"interventions": [{"name": "Proton Therapy"}]},
                "contactsLocationsModule": {"locations": [{"facility": "Mayo Clinic"}]},
                "eligibilityModule": {
                    "minimumAge": "18 Years", "maximumAge": "6 Months", "sex": "MALE",
                    "eligibilityCriteria": "Inclusion Criteria:\n* Adenocarcinoma\nExclusion Criteria:\n* Prior pelvic RT"
                }
            }
        });
        let rec = study_to_record(&study).unwrap();
        assert_eq!(rec.nct_id.as_str(), "NCT01234567");
        assert_eq!(rec.overall_status, OverallStatus::Recruiting);
        assert_eq!(rec.min_age_years, Some(18.0));
        assert_eq!(rec.max_age_years, Some(0.5));
        assert_eq!(rec.sex, TrialSex::Male);
        assert_eq!(rec.criteria.len(), 2);
        assert_eq!(rec.criteria[1].polarity, Polarity::Exclusion);
        assert_eq!(rec.criteria[1].description, "Prior pelvic RT");
    }
}
