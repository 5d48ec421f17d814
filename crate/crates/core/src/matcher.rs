//! Trial eligibility screening as an explicit pipeline:
//! timeline → ranked keywords → condition/intervention combinations →
//! synonym expansion → bounded iterative search → per-criterion evaluation →
//! exclusion → formatted `<ANALYSIS_SUMMARY>` result.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::LazyLock;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::domain::{DiagnosisDetail, PatientChart, Sex, VisitKind};
use crate::parser::{AnalysisScenario, ANALYSIS_CLOSE, ANALYSIS_OPEN};
use crate::registry::{
    term_matches, Criterion, CriterionPredicate, NctId, Polarity,
    TreatmentCategory, TrialQuery, TrialRecord, TrialRegistry,
};

/// Searches stop once the pool holds at least this many trials (and the
/// minimum search count is met).
pub const POOL_TARGET: usize = 7;
/// Trials beyond this many, in discovery order, are dropped.
pub const POOL_CAP: usize = 15;
pub const MIN_SEARCHES: usize = 2;
pub const MAX_SEARCHES: usize = 5;
/// Combination lists shorter than this are padded with condition-only queries.
pub const MIN_COMBINATIONS: usize = 10;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum MatchError {
    #[error("no condition keywords to combine")]
    EmptyConditions,
    #[error("scenario {scenario:?} is inconsistent with a shortlist of {len} trials")]
    InconsistentScenario {
        scenario: AnalysisScenario,
        len: usize,
    },
    #[error("invalid lexicon: {0}")]
    Lexicon(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventCategory {
    Diagnostic,
    Lab,
    Staging,
    Performance,
    Symptom,
    Comorbidity,
    Biomarker,
    Simulation,
    Surgery,
    Planning,
    Treatment,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub date: NaiveDate,
    pub category: EventCategory,
    pub description: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timeline {
    pub events: Vec<TimelineEvent>,
}

impl Timeline {
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Date | Category | Event |\n| --- | --- | --- |\n");
        for e in &self.events {
            let category = serde_json::to_value(e.category).expect("category serializes");
            let _ = writeln!(
                out,
                "| {} | {} | {} |",
                e.date,
                category.as_str().unwrap_or_default(),
                e.description.replace('|', "/")
            );
        }
        out
    }
}

/// One event per dated chart item, ordered by date, then category, then text.
pub fn build_timeline(chart: &PatientChart) -> Timeline {
    let mut events = Vec::new();
    let mut push = |date, category, description: String| {
        events.push(TimelineEvent {
            date,
            category,
            description,
        })
    };
    for doc in &chart.pathology_reports {
        push(doc.date, EventCategory::Diagnostic, format!("Pathology: {}", doc.title));
    }
    for doc in &chart.radiology_reports {
        push(doc.date, EventCategory::Diagnostic, format!("Imaging: {}", doc.title));
    }
    for lab in &chart.labs {
        push(
            lab.date,
            EventCategory::Lab,
            format!("{} {} {}", lab.analyte, lab.value, lab.unit),
        );
    }
    for dx in &chart.diagnoses {
        push(
            dx.onset_date,
            EventCategory::Staging,
            format!("Diagnosis: {} {}, {}", dx.site, dx.histology, dx.staging),
        );
    }
    for tx in &chart.treatments {
        let category = if tx.modality.eq_ignore_ascii_case("surgery") {
            EventCategory::Surgery
        } else {
            EventCategory::Treatment
        };
        push(tx.start_date, category, tx.description.clone());
    }
    for med in &chart.medications {
        push(med.start_date, EventCategory::Treatment, format!("Started {}", med.name));
    }
    for appt in &chart.appointments {
        if appt.visit_kind == VisitKind::Simulation {
            push(
                appt.local_date(),
                EventCategory::Simulation,
                format!("Simulation: {}", appt.raw_type_label),
            );
        }
    }
    for (specialty, notes) in &chart.notes {
        for note in notes {
            push(
                note.date,
                EventCategory::Other,
                format!("{} note: {}", specialty.display_name(), note.title),
            );
        }
    }
    events.sort();
    Timeline { events }
}

#[derive(Debug, Clone, Deserialize)]
struct SiteLexicon {
    site: String,
    #[serde(rename = "match")]
    match_terms: Vec<String>,
    conditions: Vec<String>,
    interventions: Vec<String>,
}

/// Disease-site vocabulary and synonym table used for keyword generation.
#[derive(Debug, Clone, Deserialize)]
pub struct Lexicon {
    sites: Vec<SiteLexicon>,
    synonyms: BTreeMap<String, Vec<String>>,
}

static BUNDLED_LEXICON: LazyLock<Lexicon> = LazyLock::new(|| {
    Lexicon::from_json(include_str!("../lexicon/synonyms.json")).expect("bundled lexicon is valid")
});

impl Lexicon {
    pub fn from_json(json: &str) -> Result<Self, MatchError> {
        let mut lexicon: Lexicon =
            serde_json::from_str(json).map_err(|e| MatchError::Lexicon(e.to_string()))?;
        for site in &mut lexicon.sites {
            for term in site.conditions.iter_mut().chain(site.interventions.iter_mut()) {
                *term = term.to_lowercase();
            }
        }
        lexicon.synonyms = lexicon
            .synonyms
            .into_iter()
            .map(|(k, v)| (k.to_lowercase(), v.into_iter().map(|s| s.to_lowercase()).collect()))
            .collect();
        Ok(lexicon)
    }

    pub fn bundled() -> &'static Lexicon {
        &BUNDLED_LEXICON
    }

    fn site_for(&self, dx: &DiagnosisDetail) -> Option<&SiteLexicon> {
        let text = format!("{} {}", dx.site, dx.histology);
        self.sites
            .iter()
            .find(|s| s.match_terms.iter().any(|m| term_matches(m, &text)))
    }

    pub fn site_name(&self, dx: &DiagnosisDetail) -> Option<&str> {
        self.site_for(dx).map(|s| s.site.as_str())
    }

    pub fn synonyms(&self, term: &str) -> &[String] {
        self.synonyms
            .get(&term.to_lowercase())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedTerm {
    pub term: String,
    pub rank: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedKeywords {
    pub conditions: Vec<RankedTerm>,
    pub interventions: Vec<RankedTerm>,
}

fn rank_unique(terms: impl IntoIterator<Item = String>) -> Vec<RankedTerm> {
    let mut seen = BTreeSet::new();
    terms
        .into_iter()
        .map(|t| t.to_lowercase())
        .filter(|t| seen.insert(t.clone()))
        .enumerate()
        .map(|(i, term)| RankedTerm { term, rank: i + 1 })
        .collect()
}

/// Conditions come from the chart's diagnoses, most recent first;
/// interventions come from the lexicon entry of each diagnosis site in
/// lexicon order.
pub fn generate_keywords(chart: &PatientChart, lexicon: &Lexicon) -> RankedKeywords {
    let mut diagnoses: Vec<&DiagnosisDetail> = chart.diagnoses.iter().collect();
    diagnoses.sort_by(|a, b| b.onset_date.cmp(&a.onset_date).then(a.site.cmp(&b.site)));
    let mut conditions = Vec::new();
    let mut interventions = Vec::new();
    for dx in diagnoses {
        match lexicon.site_for(dx) {
            Some(site) => {
                conditions.extend(site.conditions.iter().cloned());
                interventions.extend(site.interventions.iter().cloned());
            }
            None => {
                let site = dx.site.trim().to_lowercase();
                if site.contains("cancer") {
                    conditions.push(site);
                } else {
                    conditions.push(format!("{site} cancer"));
                }
            }
        }
    }
    RankedKeywords {
        conditions: rank_unique(conditions),
        interventions: rank_unique(interventions),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombinationQuery {
    pub condition_terms: Vec<String>,
    pub intervention_terms: Vec<String>,
    pub rank: usize,
}

/// Cross product in rank order (condition major). When fewer than
/// `MIN_COMBINATIONS` result, condition-only combinations are appended.
pub fn make_combinations(keywords: &RankedKeywords) -> Result<Vec<CombinationQuery>, MatchError> {
    if keywords.conditions.is_empty() {
        return Err(MatchError::EmptyConditions);
    }
    let mut pairs: Vec<(String, Option<String>)> = keywords
        .conditions
        .iter()
        .flat_map(|c| {
            keywords
                .interventions
                .iter()
                .map(move |i| (c.term.clone(), Some(i.term.clone())))
        })
        .collect();
    if pairs.len() < MIN_COMBINATIONS {
        pairs.extend(keywords.conditions.iter().map(|c| (c.term.clone(), None)));
        if pairs.len() < MIN_COMBINATIONS {
            tracing::debug!(
                combinations = pairs.len(),
                "lexicon exhausted before reaching the combination target"
            );
        }
    }
    Ok(pairs
        .into_iter()
        .enumerate()
        .map(|(i, (c, intr))| CombinationQuery {
            condition_terms: vec![c],
            intervention_terms: intr.into_iter().collect(),
            rank: i + 1,
        })
        .collect())
}

fn expand_terms(terms: &[String], lexicon: &Lexicon) -> Vec<String> {
    let mut seen = BTreeSet::new();
    terms
        .iter()
        .flat_map(|head| std::iter::once(head.clone()).chain(lexicon.synonyms(head).iter().cloned()))
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

/// Replaces each head term by itself followed by its lexicon synonyms.
pub fn expand_synonyms(combo: &CombinationQuery, lexicon: &Lexicon) -> CombinationQuery {
    CombinationQuery {
        condition_terms: expand_terms(&combo.condition_terms, lexicon),
        intervention_terms: expand_terms(&combo.intervention_terms, lexicon),
        rank: combo.rank,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Demographics {
    pub age_years: Option<u32>,
    pub sex: Option<Sex>,
}

impl Demographics {
    pub fn of(chart: &PatientChart, as_of: NaiveDate) -> Self {
        Self {
            age_years: chart.age_on(as_of),
            sex: Some(chart.sex).filter(|s| *s != Sex::Unknown),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.age_years.is_some() && self.sex.is_some_and(|s| s != Sex::Unknown)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchCount {
    pub new_unique: usize,
    pub cumulative: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialPool {
    /// Discovery order.
    pub trials: Vec<TrialRecord>,
    pub searches_performed: usize,
    pub per_search_counts: Vec<SearchCount>,
}

impl TrialPool {
    pub fn contains(&self, id: &NctId) -> bool {
        self.trials.iter().any(|t| &t.nct_id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SearchOutcome {
    Pool(TrialPool),
    DemographicsMissing,
    SearchError { message: String },
}

/// The iterative search as a resumable state machine, so a driver that
/// issues each search as a separate tool call can replay it step by step.
#[derive(Debug, Clone)]
pub struct SearchLoop {
    queries: Vec<TrialQuery>,
    broadened: Option<TrialQuery>,
    next_index: usize,
    broadened_issued: bool,
    pool: TrialPool,
    error: Option<String>,
    demographics_missing: bool,
}

impl SearchLoop {
    pub fn new(combos: &[CombinationQuery], demographics: &Demographics, institution: &str) -> Self {
        let mut combos: Vec<&CombinationQuery> = combos.iter().collect();
        combos.sort_by_key(|c| c.rank);
        let age = demographics.age_years.map(f64::from);
        let make = |conditions: Vec<String>, interventions: Vec<String>| TrialQuery {
            condition_terms: conditions,
            intervention_terms: interventions,
            age_years: age,
            sex: demographics.sex,
            institution: institution.to_string(),
        };
        let queries: Vec<TrialQuery> = combos
            .iter()
            .map(|c| make(c.condition_terms.clone(), c.intervention_terms.clone()))
            .collect();
        let mut seen = BTreeSet::new();
        let all_conditions: Vec<String> = combos
            .iter()
            .flat_map(|c| c.condition_terms.iter().cloned())
            .filter(|t| seen.insert(t.clone()))
            .collect();
        let broadened = (!all_conditions.is_empty()).then(|| make(all_conditions, Vec::new()));
        Self {
            queries,
            broadened,
            next_index: 0,
            broadened_issued: false,
            pool: TrialPool::default(),
            error: None,
            demographics_missing: !demographics.is_complete(),
        }
    }

    fn done_searching(&self) -> bool {
        let searches = self.pool.searches_performed;
        searches >= MAX_SEARCHES || (searches >= MIN_SEARCHES && self.pool.trials.len() >= POOL_TARGET)
    }

    /// The next query to issue, or `None` once the loop has finished.
    pub fn next_query(&self) -> Option<TrialQuery> {
        if self.demographics_missing || self.error.is_some() || self.done_searching() {
            return None;
        }
        if let Some(q) = self.queries.get(self.next_index) {
            return Some(q.clone());
        }
        // Combinations exhausted: one last query over every condition term.
        let broadened = self.broadened.as_ref()?;
        let repeats_earlier = self.queries.iter().any(|q| q == broadened);
        let below_minimum = self.pool.searches_performed < MIN_SEARCHES;
        (!self.broadened_issued && (below_minimum || !repeats_earlier)).then(|| broadened.clone())
    }

    pub fn record<E: std::fmt::Display>(&mut self, result: Result<Vec<TrialRecord>, E>) {
        if self.next_index < self.queries.len() {
            self.next_index += 1;
        } else {
            self.broadened_issued = true;
        }
        match result {
            Err(e) => self.error = Some(e.to_string()),
            Ok(trials) => {
                self.pool.searches_performed += 1;
                let mut new_unique = 0;
                for trial in trials {
                    if self.pool.trials.len() < POOL_CAP && !self.pool.contains(&trial.nct_id) {
                        self.pool.trials.push(trial);
                        new_unique += 1;
                    }
                }
                self.pool.per_search_counts.push(SearchCount {
                    new_unique,
                    cumulative: self.pool.trials.len(),
                });
            }
        }
    }

    pub fn pool(&self) -> &TrialPool {
        &self.pool
    }

    pub fn into_outcome(self) -> SearchOutcome {
        if self.demographics_missing {
            SearchOutcome::DemographicsMissing
        } else if let Some(message) = self.error {
            SearchOutcome::SearchError { message }
        } else {
            SearchOutcome::Pool(self.pool)
        }
    }
}

/// Runs the bounded search loop directly against a registry.
pub fn iterative_search(
    combos: &[CombinationQuery],
    client: &dyn TrialRegistry,
    demographics: &Demographics,
    institution: &str,
) -> SearchOutcome {
    let mut search = SearchLoop::new(combos, demographics, institution);
    while let Some(query) = search.next_query() {
        let result = client.search_trials(&query);
        search.record(result);
    }
    search.into_outcome()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionStatus {
    Met,
    NotMet,
    Unknown,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub criterion_id: String,
    pub description: String,
    pub status: CriterionStatus,
    pub evidence: String,
}

enum Truth {
    Holds(String),
    Fails(String),
    Unknown(String),
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}

fn diagnosis_keywords(dx: &DiagnosisDetail) -> Vec<String> {
    vec![
        dx.site.clone(),
        dx.histology.clone(),
        format!("{} {}", dx.site, dx.histology),
        format!("{} cancer", dx.site),
    ]
}

fn has_treatment_history(chart: &PatientChart) -> bool {
    !chart.treatments.is_empty()
        || !chart.medications.is_empty()
        || !chart.eligibility_facts.prior_radiation.is_empty()
        || !chart.eligibility_facts.prior_systemic_therapies.is_empty()
}

fn site_ok(wanted: Option<&str>, actual: &[Option<&str>]) -> bool {
    match wanted {
        None => true,
        Some(w) => actual.iter().flatten().any(|a| term_matches(w, a)),
    }
}

/// Evidence of a prior treatment of the given kind, if the chart shows one.
fn find_prior_treatment(
    chart: &PatientChart,
    category: TreatmentCategory,
    site: Option<&str>,
    agent: Option<&str>,
) -> Option<String> {
    let agent_ok = |name: &str| agent.is_none_or(|a| term_matches(a, name));
    match category {
        TreatmentCategory::Radiation => {
            if let Some(course) = chart
                .eligibility_facts
                .prior_radiation
                .iter()
                .find(|r| site_ok(site, &[r.site.as_deref()]))
            {
                return Some(format!(
                    "prior radiation {} Gy in {}{}",
                    fmt_num(course.dose_gy),
                    course.year,
                    course.site.as_deref().map(|s| format!(" to {s}")).unwrap_or_default()
                ));
            }
            chart
                .treatments
                .iter()
                .filter(|t| t.modality.eq_ignore_ascii_case("radiation"))
                .find(|t| site_ok(site, &[t.site.as_deref(), Some(&t.description)]))
                .map(|t| format!("{} started {}", t.description, t.start_date))
        }
        TreatmentCategory::Systemic => {
            if let Some(therapy) = chart
                .eligibility_facts
                .prior_systemic_therapies
                .iter()
                .find(|t| agent_ok(t))
            {
                return Some(format!("prior systemic therapy {therapy}"));
            }
            if let Some(med) = chart.medications.iter().find(|m| agent.is_some() && agent_ok(&m.name)) {
                return Some(format!("{} started {}", med.name, med.start_date));
            }
            chart
                .treatments
                .iter()
                .filter(|t| t.modality.eq_ignore_ascii_case("systemic"))
                .find(|t| agent_ok(&t.description))
                .map(|t| format!("{} started {}", t.description, t.start_date))
        }
        TreatmentCategory::Surgery => chart
            .treatments
            .iter()
            .filter(|t| t.modality.eq_ignore_ascii_case("surgery"))
            .find(|t| site_ok(site, &[t.site.as_deref(), Some(&t.description)]))
            .map(|t| format!("{} on {}", t.description, t.start_date)),
    }
}

fn treatment_label(category: TreatmentCategory, site: Option<&str>, agent: Option<&str>) -> String {
    let kind = match category {
        TreatmentCategory::Radiation => "radiation",
        TreatmentCategory::Systemic => "systemic therapy",
        TreatmentCategory::Surgery => "surgery",
    };
    match (site, agent) {
        (_, Some(a)) => format!("{kind} ({a})"),
        (Some(s), None) => format!("{s} {kind}"),
        (None, None) => kind.to_string(),
    }
}

fn evaluate_predicate(predicate: &CriterionPredicate, chart: &PatientChart, as_of: NaiveDate) -> Truth {
    match predicate {
        CriterionPredicate::AgeRange { min_years, max_years } => {
            let bounds = format!(
                "[{},{}]",
                min_years.map_or("any".into(), fmt_num),
                max_years.map_or("any".into(), fmt_num)
            );
            match chart.age_on(as_of) {
                None => Truth::Unknown("age not recorded".into()),
                Some(age) => {
                    let a = f64::from(age);
                    if min_years.is_none_or(|m| a >= m) && max_years.is_none_or(|m| a <= m) {
                        Truth::Holds(format!("age {age} within {bounds}"))
                    } else {
                        Truth::Fails(format!("age {age} outside {bounds}"))
                    }
                }
            }
        }
        CriterionPredicate::Sex { sex } => match chart.sex {
            Sex::Unknown => Truth::Unknown("sex not recorded".into()),
            s if sex.admits(s) => Truth::Holds(format!("sex {} eligible", s.as_str())),
            s => Truth::Fails(format!("sex {} not eligible", s.as_str())),
        },
        CriterionPredicate::DiagnosisMatch { terms } => {
            if chart.diagnoses.is_empty() {
                return Truth::Unknown("no diagnosis recorded".into());
            }
            match chart.diagnoses.iter().find(|dx| {
                let keys = diagnosis_keywords(dx);
                terms.iter().any(|t| keys.iter().any(|k| term_matches(t, k)))
            }) {
                Some(dx) => Truth::Holds(format!(
                    "diagnosis {} {} ({})",
                    dx.site, dx.histology, dx.onset_date
                )),
                None => Truth::Fails(format!(
                    "no diagnosis matching {}",
                    terms.join(" / ")
                )),
            }
        }
        CriterionPredicate::RequiresPriorTreatment { category, site, agent }
        | CriterionPredicate::ExcludesPriorTreatment { category, site, agent } => {
            let requires = matches!(predicate, CriterionPredicate::RequiresPriorTreatment { .. });
            let label = treatment_label(*category, site.as_deref(), agent.as_deref());
            if !has_treatment_history(chart) {
                return Truth::Unknown(format!("no treatment history recorded to confirm {label}"));
            }
            match (find_prior_treatment(chart, *category, site.as_deref(), agent.as_deref()), requires) {
                (Some(evidence), true) => Truth::Holds(evidence),
                (Some(evidence), false) => Truth::Fails(evidence),
                (None, true) => Truth::Fails(format!("no prior {label} on record")),
                (None, false) => Truth::Holds(format!("no prior {label} on record")),
            }
        }
        CriterionPredicate::LabThreshold { analyte, comparator, value } => {
            let latest = chart
                .labs
                .iter()
                .filter(|l| l.analyte.eq_ignore_ascii_case(analyte))
                .max_by_key(|l| l.date);
            match latest {
                None => Truth::Unknown(format!("no {analyte} result recorded")),
                Some(lab) => {
                    let evidence = format!(
                        "{} {} {} on {} (threshold {} {})",
                        lab.analyte,
                        fmt_num(lab.value),
                        lab.unit,
                        lab.date,
                        comparator.symbol(),
                        fmt_num(*value)
                    );
                    if comparator.holds(lab.value, *value) {
                        Truth::Holds(evidence)
                    } else {
                        Truth::Fails(evidence)
                    }
                }
            }
        }
        CriterionPredicate::EcogMax { max } => match chart.eligibility_facts.ecog {
            None => Truth::Unknown("ECOG not recorded".into()),
            Some(ecog) if ecog <= *max => Truth::Holds(format!("ECOG {ecog} <= {max}")),
            Some(ecog) => Truth::Fails(format!("ECOG {ecog} > {max}")),
        },
        CriterionPredicate::FreeText => {
            Truth::Unknown("free-text criterion requires clinician review".into())
        }
    }
}

fn evaluate_criterion(criterion: &Criterion, chart: &PatientChart, as_of: NaiveDate) -> CriterionReport {
    let report = |status, evidence: String| CriterionReport {
        criterion_id: criterion.criterion_id.clone(),
        description: criterion.description.clone(),
        status,
        evidence,
    };
    if let Some(site) = criterion.site.as_deref() {
        if !chart.diagnoses.is_empty()
            && !chart.diagnoses.iter().any(|dx| term_matches(site, &dx.site))
        {
            return report(
                CriterionStatus::NotApplicable,
                format!("patient has no {site} diagnosis"),
            );
        }
    }
    // Inclusion criteria must hold; exclusion criteria describe a
    // disqualifying condition, so they are met when it does not hold.
    match (evaluate_predicate(&criterion.predicate, chart, as_of), criterion.polarity) {
        (Truth::Unknown(e), _) => report(CriterionStatus::Unknown, e),
        (Truth::Holds(e), Polarity::Inclusion) | (Truth::Fails(e), Polarity::Exclusion) => {
            report(CriterionStatus::Met, e)
        }
        (Truth::Fails(e), Polarity::Inclusion) | (Truth::Holds(e), Polarity::Exclusion) => {
            report(CriterionStatus::NotMet, e)
        }
    }
}

/// One report per criterion, in the trial's criterion order.
pub fn evaluate_eligibility(
    trial: &TrialRecord,
    chart: &PatientChart,
    as_of: NaiveDate,
) -> Vec<CriterionReport> {
    trial
        .criteria
        .iter()
        .map(|c| evaluate_criterion(c, chart, as_of))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortlistEntry {
    pub nct_id: NctId,
    pub title: String,
    pub url: String,
    pub reports: Vec<CriterionReport>,
}

impl ShortlistEntry {
    pub fn summary_for(&self, status: CriterionStatus) -> String {
        let parts: Vec<String> = self
            .reports
            .iter()
            .filter(|r| r.status == status)
            .map(|r| format!("{} ({})", r.description, r.evidence))
            .collect();
        if parts.is_empty() {
            "None".to_string()
        } else {
            parts.join("; ")
        }
    }
}

/// Keeps pool trials with no `not_met` criterion, in discovery order.
pub fn filter_pool(
    pool: &TrialPool,
    reports_by_trial: &BTreeMap<NctId, Vec<CriterionReport>>,
) -> Vec<ShortlistEntry> {
    pool.trials
        .iter()
        .filter_map(|trial| {
            let reports = reports_by_trial.get(&trial.nct_id).cloned().unwrap_or_default();
            if reports.iter().any(|r| r.status == CriterionStatus::NotMet) {
                None
            } else {
                Some(ShortlistEntry {
                    nct_id: trial.nct_id.clone(),
                    title: trial.title.clone(),
                    url: trial.url.clone(),
                    reports,
                })
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientLabel {
    pub name: String,
    pub patient_id: String,
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Renders the `<ANALYSIS_SUMMARY>` block for a scenario.
pub fn format_result(
    scenario: AnalysisScenario,
    shortlist: &[ShortlistEntry],
    patient: &PatientLabel,
) -> Result<String, MatchError> {
    if (scenario == AnalysisScenario::TrialsFound) == shortlist.is_empty() {
        return Err(MatchError::InconsistentScenario {
            scenario,
            len: shortlist.len(),
        });
    }
    let name = one_line(&patient.name);
    let mut out = String::new();
    match scenario {
        AnalysisScenario::TrialsFound => {
            let _ = writeln!(out, "```{ANALYSIS_OPEN}");
            let _ = writeln!(out, "Clinical Trials Eligibility Summary for {name}");
            let _ = writeln!(out, "{name} is potentially eligible to participate in the");
            let _ = writeln!(out, "following clinical trials:");
            let _ = writeln!(out, "```");
            for (i, entry) in shortlist.iter().enumerate() {
                let _ = writeln!(out);
                let _ = writeln!(out, "#### {}. **{}**", i + 1, entry.nct_id);
                let _ = writeln!(out);
                let _ = writeln!(out, "- **Title:** {}", one_line(&entry.title));
                let _ = writeln!(out, "- **Criteria Evaluation Summary:**");
                let _ = writeln!(out, "  - **Met:** {}", one_line(&entry.summary_for(CriterionStatus::Met)));
                let _ = writeln!(
                    out,
                    "  - **Unknown:** {}",
                    one_line(&entry.summary_for(CriterionStatus::Unknown))
                );
                let _ = writeln!(
                    out,
                    "  - **Not Applicable:** {}",
                    one_line(&entry.summary_for(CriterionStatus::NotApplicable))
                );
                let _ = writeln!(out, "- **URL:** {}", one_line(&entry.url));
            }
            let _ = writeln!(out);
            let _ = writeln!(out, "```");
            let _ = write!(out, "{ANALYSIS_CLOSE}```");
        }
        AnalysisScenario::NoneFound => {
            let _ = writeln!(out, "```{ANALYSIS_OPEN}");
            let _ = writeln!(out, "### Clinical Trials Eligibility Summary for {name}");
            let _ = writeln!(out, "No relevant clinical trials were found for {name}.");
            let _ = write!(out, "{ANALYSIS_CLOSE}```");
        }
        AnalysisScenario::DemographicsMissing => {
            let _ = writeln!(out, "```{ANALYSIS_OPEN}");
            let _ = writeln!(out, "Clinical Trials Eligibility Summary for {name}");
            let _ = writeln!(
                out,
                "Clinical trial eligibility could not be evaluated for patient {} because their age and sex could not be retrieved.",
                one_line(&patient.patient_id)
            );
            let _ = write!(out, "{ANALYSIS_CLOSE}```");
        }
        AnalysisScenario::SearchError => {
            let _ = writeln!(out, "```{ANALYSIS_OPEN}");
            let _ = writeln!(out, "### Clinical Trials Eligibility Summary for {name}");
            let _ = writeln!(out, "An error occurred when searching for clinical trials for {name}.");
            let _ = write!(out, "{ANALYSIS_CLOSE}```");
        }
    }
    Ok(out)
}
