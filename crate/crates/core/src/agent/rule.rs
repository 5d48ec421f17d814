//! Deterministic reference backend. Each message is a pure function of the
//! prompt and the tool results already in the transcript, so a transcript can
//! be replayed from scratch at any step.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::NaiveDate;

use super::{
    AgentBackend, AgentMessage, AgentStep, AgentTranscript, BackendError, PromptText, TemplateId,
    ToolCall, ToolName, ToolOutcome, BINDING_PATIENT_ID, BINDING_PATIENT_NAME,
};
use crate::clinical_rules::prostate_addendum;
use crate::domain::{PatientChart, Sex, Specialty, VisitKind};
use crate::ehr::{SectionContent, SectionPayload};
use crate::matcher::{
    build_timeline, evaluate_eligibility, expand_synonyms, filter_pool, format_result,
    generate_keywords, make_combinations, Demographics, Lexicon, PatientLabel, SearchLoop,
    SearchOutcome,
};
use crate::parser::{AnalysisScenario, DONE_TOKEN, FALLBACK_SUMMARY, SUMMARY_KEY};
use crate::registry::TrialRecord;

pub struct RuleBackend {
    lexicon: &'static Lexicon,
}

impl Default for RuleBackend {
    fn default() -> Self {
        Self {
            lexicon: Lexicon::bundled(),
        }
    }
}

impl RuleBackend {
    pub fn new(lexicon: &'static Lexicon) -> Self {
        Self { lexicon }
    }
}

impl AgentBackend for RuleBackend {
    fn next_message(
        &self,
        prompt: &PromptText,
        transcript: &AgentTranscript,
    ) -> Result<AgentMessage, BackendError> {
        let patient_id = prompt
            .binding(BINDING_PATIENT_ID)
            .ok_or_else(|| BackendError("prompt has no patient id binding".into()))?;
        let Some(first) = transcript.steps.first() else {
            return Ok(retrieval_message(prompt.template_id, patient_id));
        };
        let retrieved = retrieved_chart(patient_id, prompt.binding(BINDING_PATIENT_NAME), first);
        Ok(match prompt.template_id {
            TemplateId::ClinicalSummary => summary_message(&retrieved),
            TemplateId::TrialEvaluation => self.trial_message(&retrieved, &transcript.steps),
        })
    }
}

fn retrieval_calls(patient_id: &str) -> Vec<ToolCall> {
    let mut calls: Vec<ToolCall> = [
        ToolName::GetPatientDetails,
        ToolName::GetTreatmentDetails,
        ToolName::GetDiagnosisDetails,
        ToolName::GetAppointments,
        ToolName::GetRadiologyReports,
        ToolName::GetPathologyReports,
    ]
    .into_iter()
    .map(|t| ToolCall::for_patient(t, patient_id))
    .collect();
    calls.extend(Specialty::ALL.map(|s| ToolCall::clinical_notes(patient_id, s)));
    calls
}

fn retrieval_message(template: TemplateId, patient_id: &str) -> AgentMessage {
    let text = match template {
        TemplateId::ClinicalSummary => {
            format!("Step 1: retrieving all patient data for {patient_id} simultaneously.")
        }
        TemplateId::TrialEvaluation => {
            format!("Retrieve Patient Data: requesting chart sections for {patient_id}.")
        }
    };
    AgentMessage {
        text,
        tool_calls: retrieval_calls(patient_id),
    }
}

/// The chart as reconstructed from a retrieval step's tool results.
#[derive(Debug, Clone)]
pub struct RetrievedChart {
    pub chart: PatientChart,
    /// Retrieval date reported by `get_patient_details`, or the date of
    /// today's appointments.
    pub as_of: Option<NaiveDate>,
    /// Every retrieval came back empty or failed.
    pub all_empty: bool,
    pub details_failed: bool,
}

pub fn retrieved_chart(patient_id: &str, name: Option<&str>, step: &AgentStep) -> RetrievedChart {
    let mut chart = PatientChart::new(patient_id, name.unwrap_or(patient_id));
    let mut as_of = None;
    let mut details_failed = false;
    for (call, outcome) in step.tool_calls.iter().zip(&step.tool_results) {
        if call.tool == ToolName::GetPatientDetails && outcome.is_error() {
            details_failed = true;
        }
        let Some(payload) = outcome.payload() else { continue };
        let Ok(sections) = serde_json::from_value::<Vec<SectionPayload>>(payload.clone()) else {
            continue;
        };
        for section in sections {
            match section.content {
                SectionContent::Details(d) => {
                    if name.is_none() {
                        chart.name = d.name;
                    }
                    chart.date_of_birth = d.date_of_birth;
                    chart.sex = d.sex;
                    chart.eligibility_facts = d.eligibility_facts;
                    as_of = Some(d.as_of);
                }
                SectionContent::Treatments(t) => chart.treatments = t,
                SectionContent::Diagnoses(d) => chart.diagnoses = d,
                SectionContent::Appointments(a) => chart.appointments = a,
                SectionContent::Medications(m) => chart.medications = m,
                SectionContent::Labs(l) => chart.labs = l,
                SectionContent::Documents(docs) => {
                    match (call.tool, section.section.specialty()) {
                        (ToolName::GetRadiologyReports, _) => chart.radiology_reports = docs,
                        (ToolName::GetPathologyReports, _) => chart.pathology_reports = docs,
                        (_, Some(specialty)) => {
                            chart.notes.insert(specialty, docs);
                        }
                        _ => {}
                    }
                }
                SectionContent::Empty => {}
            }
        }
    }
    let as_of = as_of.or_else(|| chart.appointments.first().map(|a| a.local_date()));
    RetrievedChart {
        all_empty: step.tool_results.iter().all(ToolOutcome::is_empty_or_error),
        chart,
        as_of,
        details_failed,
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn first_sentence(s: &str) -> String {
    let flat = one_line(s);
    match flat.find(". ") {
        Some(i) => flat[..=i].to_string(),
        None => flat,
    }
}

fn gy(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.1}")
    }
}

fn end_sentence(mut s: String) -> String {
    if !s.ends_with('.') {
        s.push('.');
    }
    s
}

/// The status paragraph written for the clinical summary.
pub fn compose_status_summary(chart: &PatientChart, run_date: Option<NaiveDate>) -> String {
    let mut sentences: Vec<String> = Vec::new();

    let age = run_date.and_then(|d| chart.age_on(d));
    let who = match (age, chart.sex) {
        (Some(a), Sex::Unknown) => format!("{} is a {a}-year-old patient", chart.name),
        (Some(a), s) => format!("{} is a {a}-year-old {}", chart.name, s.as_str()),
        (None, Sex::Unknown) => chart.name.clone(),
        (None, s) => format!("{} is a {} patient", chart.name, s.as_str()),
    };
    let mut diagnoses: Vec<_> = chart.diagnoses.iter().collect();
    diagnoses.sort_by(|a, b| b.onset_date.cmp(&a.onset_date));
    let dx_text: Vec<String> = diagnoses
        .iter()
        .map(|d| {
            format!(
                "{} {} ({}) diagnosed {}",
                d.site.to_lowercase(),
                d.histology,
                d.staging,
                d.onset_date
            )
        })
        .collect();
    sentences.push(if dx_text.is_empty() {
        format!("{who} with no oncologic diagnosis on record.")
    } else {
        format!("{who} with {}.", dx_text.join("; "))
    });

    match prostate_addendum(chart) {
        Ok(Some(addendum)) => sentences.push(end_sentence(addendum)),
        Ok(None) => {}
        Err(e) => tracing::debug!(patient = %chart.patient_id, "no prostate addendum: {e}"),
    }

    for tx in &chart.treatments {
        let mut parts = vec![format!("{} started {}", one_line(&tx.description), tx.start_date)];
        match (tx.fractions_delivered, tx.fractions_prescribed) {
            (Some(d), Some(p)) => parts.push(format!("{d} of {p} fractions delivered")),
            (None, Some(p)) => parts.push(format!("{p} fractions prescribed")),
            (Some(d), None) => parts.push(format!("{d} fractions delivered")),
            (None, None) => {}
        }
        match (tx.dose_delivered_gy, tx.dose_prescribed_gy) {
            (Some(d), Some(p)) => parts.push(format!("{} of {} Gy delivered", gy(d), gy(p))),
            (None, Some(p)) => parts.push(format!("{} Gy prescribed", gy(p))),
            (Some(d), None) => parts.push(format!("{} Gy delivered", gy(d))),
            (None, None) => {}
        }
        if let Some(d) = tx.most_recent_treatment_date {
            parts.push(format!("most recent treatment {d}"));
        }
        if let Some(d) = tx.next_treatment_date {
            parts.push(format!("next treatment {d}"));
        }
        if let Some(d) = tx.end_date {
            parts.push(format!("completed {d}"));
        }
        sentences.push(format!("{}.", parts.join(", ")));
    }

    let prior = &chart.eligibility_facts.prior_radiation;
    if !prior.is_empty() {
        let courses: Vec<String> = prior
            .iter()
            .map(|r| match &r.site {
                Some(site) => format!("{} Gy in {} ({site})", gy(r.dose_gy), r.year),
                None => format!("{} Gy in {}", gy(r.dose_gy), r.year),
            })
            .collect();
        sentences.push(format!("Prior radiation: {}.", courses.join(", ")));
    }

    let meds: Vec<String> = chart
        .medications
        .iter()
        .filter(|m| match run_date {
            Some(d) => m.is_active_on(d),
            None => m.end_date.is_none(),
        })
        .map(|m| match run_date {
            Some(d) => format!(
                "{} since {} ({} days)",
                m.name,
                m.start_date,
                (d - m.start_date).num_days()
            ),
            None => format!("{} since {}", m.name, m.start_date),
        })
        .collect();
    if !meds.is_empty() {
        sentences.push(format!("Current medications: {}.", meds.join(", ")));
    }

    let mut latest_labs: BTreeMap<String, &crate::domain::LabResult> = BTreeMap::new();
    for lab in chart.labs.iter().filter(|l| !l.is_psa()) {
        let entry = latest_labs.entry(lab.analyte.clone()).or_insert(lab);
        if lab.date >= entry.date {
            *entry = lab;
        }
    }
    if !latest_labs.is_empty() {
        let labs: Vec<String> = latest_labs
            .values()
            .map(|l| format!("{} {} {} ({})", l.analyte, l.value, l.unit, l.date))
            .collect();
        sentences.push(format!("Recent labs: {}.", labs.join(", ")));
    }

    if let Some(img) = chart.radiology_reports.iter().max_by_key(|d| d.date) {
        sentences.push(end_sentence(format!(
            "Recent imaging: {} on {}: {}",
            one_line(&img.title),
            img.date,
            first_sentence(&img.text)
        )));
    }
    if let Some(path) = chart.pathology_reports.iter().max_by_key(|d| d.date) {
        sentences.push(end_sentence(format!(
            "Pathology: {} on {}: {}",
            one_line(&path.title),
            path.date,
            first_sentence(&path.text)
        )));
    }

    let today: Vec<_> = chart
        .appointments
        .iter()
        .filter(|a| run_date.is_none_or(|d| a.local_date() == d))
        .collect();
    if let Some((first, rest)) = today.split_first() {
        sentences.push(format!(
            "Today's visit: {} at {}.",
            one_line(&first.raw_type_label),
            first.start_time.format("%H:%M")
        ));
        if !rest.is_empty() {
            let others: Vec<String> = rest
                .iter()
                .map(|a| format!("{} at {}", one_line(&a.raw_type_label), a.start_time.format("%H:%M")))
                .collect();
            sentences.push(format!("Other appointments today: {}.", others.join(", ")));
        }
    }

    let notes_before: Vec<(Specialty, &crate::domain::DatedDocument)> = chart
        .notes
        .iter()
        .flat_map(|(s, docs)| docs.iter().map(move |d| (*s, d)))
        .filter(|(_, d)| run_date.is_none_or(|r| d.date < r))
        .collect();
    let latest_note = notes_before
        .iter()
        .max_by_key(|(s, d)| (d.date, *s == Specialty::Radonc));
    if today.iter().any(|a| a.visit_kind == VisitKind::Management) {
        match latest_note {
            Some((specialty, note)) => sentences.push(end_sentence(format!(
                "At the prior visit on {} ({} note), the plan was: {}",
                note.date,
                specialty.display_name(),
                one_line(&note.text)
            ))),
            None => sentences.push("No prior progress note is available to review.".to_string()),
        }
    } else if let Some((specialty, note)) = latest_note {
        sentences.push(end_sentence(format!(
            "Latest {} note ({}): {}",
            specialty.display_name(),
            note.date,
            first_sentence(&note.text)
        )));
    }

    sentences.join(" ")
}

/// Same `{"key": "value"}` spacing as the prompt's fallback example.
fn summary_block(text: &str) -> String {
    let key = serde_json::to_string(SUMMARY_KEY).expect("string serializes");
    let value = serde_json::to_string(text).expect("string serializes");
    format!("```json\n{{{key}: {value}}}\n```")
}

fn summary_message(retrieved: &RetrievedChart) -> AgentMessage {
    let text = if retrieved.all_empty {
        format!("{}\n{DONE_TOKEN}", summary_block(FALLBACK_SUMMARY))
    } else {
        let timeline = build_timeline(&retrieved.chart);
        let paragraph = compose_status_summary(&retrieved.chart, retrieved.as_of);
        format!(
            "Step 2: timeline\n\n{}\nStep 3: status summary\n\n{}\n{DONE_TOKEN}",
            timeline.to_markdown(),
            summary_block(&paragraph)
        )
    };
    AgentMessage {
        text,
        tool_calls: Vec::new(),
    }
}

fn final_message(
    preamble: String,
    scenario: AnalysisScenario,
    shortlist: &[crate::matcher::ShortlistEntry],
    label: &PatientLabel,
) -> AgentMessage {
    let block = format_result(scenario, shortlist, label).expect("scenario matches shortlist");
    let mut text = preamble;
    if !text.is_empty() {
        text.push_str("\n\n");
    }
    let _ = write!(text, "{block}\n{DONE_TOKEN}");
    AgentMessage {
        text,
        tool_calls: Vec::new(),
    }
}

fn trials_from(outcome: &ToolOutcome) -> Result<Vec<TrialRecord>, String> {
    match outcome {
        ToolOutcome::Error { message } => Err(message.clone()),
        ToolOutcome::Ok { payload } => {
            serde_json::from_value(payload.clone()).map_err(|e| format!("malformed search result: {e}"))
        }
    }
}

impl RuleBackend {
    fn trial_message(
        &self,
        retrieved: &RetrievedChart,
        steps: &[AgentStep],
    ) -> AgentMessage {
        let chart = &retrieved.chart;
        let label = PatientLabel {
            name: chart.name.clone(),
            patient_id: chart.patient_id.to_string(),
        };
        let demographics = match retrieved.as_of {
            Some(d) => Demographics::of(chart, d),
            None => Demographics {
                age_years: None,
                sex: None,
            },
        };
        if !demographics.is_complete() {
            return final_message(
                "Patient age or sex is missing; trial search cannot proceed.".into(),
                AnalysisScenario::DemographicsMissing,
                &[],
                &label,
            );
        }
        let keywords = generate_keywords(chart, self.lexicon);
        let Ok(combos) = make_combinations(&keywords) else {
            return final_message(
                "No diagnosis on record to build condition keywords.".into(),
                AnalysisScenario::NoneFound,
                &[],
                &label,
            );
        };
        let expanded: Vec<_> = combos.iter().map(|c| expand_synonyms(c, self.lexicon)).collect();

        let mut search = SearchLoop::new(&expanded, &demographics, "");
        let mut next_step = 1;
        while let Some(step) = steps.get(next_step) {
            let searches: Vec<_> = step
                .tool_calls
                .iter()
                .zip(&step.tool_results)
                .filter(|(c, _)| c.tool == ToolName::GetListOfClinicalTrials)
                .collect();
            if searches.is_empty() {
                break;
            }
            for (_, outcome) in searches {
                search.record(trials_from(outcome));
            }
            next_step += 1;
        }

        if let Some(query) = search.next_query() {
            let text = if next_step == 1 {
                planning_text(retrieved, &keywords, &expanded)
            } else {
                search_progress(search.pool())
            };
            return AgentMessage {
                text,
                tool_calls: vec![ToolCall::search(&query)],
            };
        }
        let progress = search_progress(search.pool());
        let pool = match search.into_outcome() {
            SearchOutcome::Pool(pool) => pool,
            SearchOutcome::DemographicsMissing => {
                return final_message(progress, AnalysisScenario::DemographicsMissing, &[], &label)
            }
            SearchOutcome::SearchError { message } => {
                return final_message(
                    format!("Trial search failed: {}", one_line(&message)),
                    AnalysisScenario::SearchError,
                    &[],
                    &label,
                )
            }
        };
        if pool.trials.is_empty() {
            return final_message(progress, AnalysisScenario::NoneFound, &[], &label);
        }
        let Some(detail_step) = steps.get(next_step) else {
            return AgentMessage {
                text: format!("{progress}\nLooking up eligibility criteria for each trial in the pool."),
                tool_calls: pool.trials.iter().map(|t| ToolCall::trial_details(&t.nct_id)).collect(),
            };
        };

        let as_of = retrieved.as_of.expect("demographics imply a retrieval date");
        let mut details: BTreeMap<_, TrialRecord> = BTreeMap::new();
        for (call, outcome) in detail_step.tool_calls.iter().zip(&detail_step.tool_results) {
            if let (Ok(id), Some(payload)) = (call.nct_id(), outcome.payload()) {
                if let Ok(record) = serde_json::from_value::<TrialRecord>(payload.clone()) {
                    details.insert(id, record);
                }
            }
        }
        let mut evaluation = String::from("Eligibility evaluation:\n");
        let mut reports_by_trial = BTreeMap::new();
        for trial in &pool.trials {
            let record = details.get(&trial.nct_id).unwrap_or(trial);
            let reports = evaluate_eligibility(record, chart, as_of);
            let _ = writeln!(evaluation, "\n{} ({} criteria)", trial.nct_id, reports.len());
            for r in &reports {
                let status = serde_json::to_value(r.status).expect("status serializes");
                let _ = writeln!(
                    evaluation,
                    "- {}: {} ({})",
                    one_line(&r.description),
                    status.as_str().unwrap_or_default(),
                    one_line(&r.evidence)
                );
            }
            reports_by_trial.insert(trial.nct_id.clone(), reports);
        }
        let shortlist = filter_pool(&pool, &reports_by_trial);
        let scenario = if shortlist.is_empty() {
            AnalysisScenario::NoneFound
        } else {
            AnalysisScenario::TrialsFound
        };
        final_message(evaluation.trim_end().to_string(), scenario, &shortlist, &label)
    }
}

fn planning_text(
    retrieved: &RetrievedChart,
    keywords: &crate::matcher::RankedKeywords,
    expanded: &[crate::matcher::CombinationQuery],
) -> String {
    let mut out = String::from("Patient timeline:\n\n");
    out.push_str(&build_timeline(&retrieved.chart).to_markdown());
    out.push_str("\nCondition keywords by relevance:\n");
    for k in &keywords.conditions {
        let _ = writeln!(out, "{}. {}", k.rank, k.term);
    }
    out.push_str("\nIntervention keywords by relevance:\n");
    for k in &keywords.interventions {
        let _ = writeln!(out, "{}. {}", k.rank, k.term);
    }
    out.push_str("\nSearch inputs in processing order:\n");
    for c in expanded {
        let _ = writeln!(
            out,
            "{}. conditions: {} | interventions: {}",
            c.rank,
            c.condition_terms.join(", "),
            if c.intervention_terms.is_empty() {
                "(none)".to_string()
            } else {
                c.intervention_terms.join(", ")
            }
        );
    }
    out
}

fn search_progress(pool: &crate::matcher::TrialPool) -> String {
    let mut out = String::new();
    for (i, c) in pool.per_search_counts.iter().enumerate() {
        let _ = writeln!(
            out,
            "Search {}: {} new unique trials, {} found so far.",
            i + 1,
            c.new_unique,
            c.cumulative
        );
    }
    out.trim_end().to_string()
}
