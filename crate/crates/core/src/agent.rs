//! Tool-loop harness: prompt rendering, the closed tool registry, and the
//! message/tool alternation that ends on `<DONE>`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use chrono::NaiveDate;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::domain::{PatientId, Sex, Specialty};
use crate::ehr::{CohortStore, EhrError, EhrSection, SectionPayload};
use crate::parser::detect_done;
use crate::registry::{NctId, RegistryError, TrialQuery, TrialRegistry};

mod chat;
mod rule;

pub use chat::{ChatCompletionBackend, ChatCompletionConfig};
pub use rule::{compose_status_summary, retrieved_chart, RetrievedChart, RuleBackend};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("unknown prompt template {0:?}")]
    UnknownTemplate(String),
    #[error("placeholder {0:?} has no binding")]
    UnboundPlaceholder(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    ClinicalSummary,
    TrialEvaluation,
}

impl TemplateId {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::ClinicalSummary => "clinical_summary",
            TemplateId::TrialEvaluation => "trial_evaluation",
        }
    }

    /// The template body exactly as shipped in `prompts/`.
    pub fn body(self) -> &'static str {
        match self {
            TemplateId::ClinicalSummary => include_str!("../prompts/clinical_summary.txt"),
            TemplateId::TrialEvaluation => include_str!("../prompts/trial_evaluation.txt"),
        }
    }
}

impl FromStr for TemplateId {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clinical_summary" => Ok(TemplateId::ClinicalSummary),
            "trial_evaluation" => Ok(TemplateId::TrialEvaluation),
            other => Err(AgentError::UnknownTemplate(other.to_string())),
        }
    }
}

pub const BINDING_PATIENT_ID: &str = "patient id";
pub const BINDING_PATIENT_NAME: &str = "patient name";

// The key may be broken across a line (`["patient\nid"]`).
static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"\{physician_appointment\["([^"]+)"\]\}"#).unwrap());

fn placeholder_key(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Placeholder names used by a template, in first-appearance order.
pub fn placeholders(template: TemplateId) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for cap in PLACEHOLDER.captures_iter(template.body()) {
        let key = placeholder_key(&cap[1]);
        if !out.contains(&key) {
            out.push(key);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub template_id: TemplateId,
    pub text: String,
    pub bindings: BTreeMap<String, String>,
}

impl PromptText {
    pub fn binding(&self, key: &str) -> Option<&str> {
        self.bindings.get(key).map(String::as_str)
    }
}

pub fn render_prompt(
    template_id: TemplateId,
    bindings: &BTreeMap<String, String>,
) -> Result<PromptText, AgentError> {
    let body = template_id.body();
    if let Some(missing) = placeholders(template_id)
        .into_iter()
        .find(|k| !bindings.contains_key(k))
    {
        return Err(AgentError::UnboundPlaceholder(missing));
    }
    let text = PLACEHOLDER
        .replace_all(body, |cap: &regex::Captures| {
            bindings[&placeholder_key(&cap[1])].clone()
        })
        .into_owned();
    Ok(PromptText {
        template_id,
        text,
        bindings: bindings.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolName {
    GetPatientDetails,
    GetTreatmentDetails,
    GetDiagnosisDetails,
    GetAppointments,
    GetRadiologyReports,
    GetPathologyReports,
    GetClinicalNotes,
    GetListOfClinicalTrials,
    GetTrialDetails,
}

impl ToolName {
    pub const ALL: [ToolName; 9] = [
        ToolName::GetPatientDetails,
        ToolName::GetTreatmentDetails,
        ToolName::GetDiagnosisDetails,
        ToolName::GetAppointments,
        ToolName::GetRadiologyReports,
        ToolName::GetPathologyReports,
        ToolName::GetClinicalNotes,
        ToolName::GetListOfClinicalTrials,
        ToolName::GetTrialDetails,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ToolName::GetPatientDetails => "get_patient_details",
            ToolName::GetTreatmentDetails => "get_treatment_details",
            ToolName::GetDiagnosisDetails => "get_diagnosis_details",
            ToolName::GetAppointments => "get_appointments",
            ToolName::GetRadiologyReports => "get_radiology_reports",
            ToolName::GetPathologyReports => "get_pathology_reports",
            ToolName::GetClinicalNotes => "get_clinical_notes",
            ToolName::GetListOfClinicalTrials => "get_list_of_clinical_trials",
            ToolName::GetTrialDetails => "get_trial_details",
        }
    }

    pub fn is_ehr(self) -> bool {
        !matches!(self, ToolName::GetListOfClinicalTrials | ToolName::GetTrialDetails)
    }

    /// JSON schema of the argument object, for function-calling backends.
    pub fn parameters_schema(self) -> Value {
        let patient = json!({"type": "string"});
        match self {
            ToolName::GetClinicalNotes => json!({
                "type": "object",
                "properties": {
                    "patient_id": patient,
                    "specialty": {"type": "string", "enum": Specialty::ALL.map(Specialty::as_str)}
                },
                "required": ["patient_id", "specialty"]
            }),
            ToolName::GetListOfClinicalTrials => json!({
                "type": "object",
                "properties": {
                    "condition_terms": {"type": "array", "items": {"type": "string"}},
                    "intervention_terms": {"type": "array", "items": {"type": "string"}},
                    "age_years": {"type": "number"},
                    "sex": {"type": "string", "enum": ["female", "male"]}
                },
                "required": ["condition_terms"]
            }),
            ToolName::GetTrialDetails => json!({
                "type": "object",
                "properties": {"nct_id": {"type": "string"}},
                "required": ["nct_id"]
            }),
            _ => json!({
                "type": "object",
                "properties": {"patient_id": patient},
                "required": ["patient_id"]
            }),
        }
    }
}

impl fmt::Display for ToolName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ToolName {
    type Err = ToolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ToolName::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| ToolError::UnknownTool(s.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ToolError {
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("invalid arguments for {tool}: {reason}")]
    InvalidArguments { tool: ToolName, reason: String },
    #[error(transparent)]
    Ehr(#[from] EhrError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("injected fault in {0}")]
    Injected(ToolName),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: ToolName,
    pub arguments: Map<String, Value>,
}

impl ToolCall {
    pub fn new(tool: ToolName, arguments: Value) -> Self {
        let arguments = match arguments {
            Value::Object(map) => map,
            _ => Map::new(),
        };
        Self { tool, arguments }
    }

    pub fn for_patient(tool: ToolName, patient_id: &str) -> Self {
        Self::new(tool, json!({"patient_id": patient_id}))
    }

    pub fn clinical_notes(patient_id: &str, specialty: Specialty) -> Self {
        Self::new(
            ToolName::GetClinicalNotes,
            json!({"patient_id": patient_id, "specialty": specialty.as_str()}),
        )
    }

    pub fn search(query: &TrialQuery) -> Self {
        let mut args = json!({
            "condition_terms": query.condition_terms,
            "intervention_terms": query.intervention_terms,
        });
        if let Some(age) = query.age_years {
            args["age_years"] = json!(age);
        }
        if let Some(sex) = query.sex {
            args["sex"] = json!(sex.as_str());
        }
        Self::new(ToolName::GetListOfClinicalTrials, args)
    }

    pub fn trial_details(id: &NctId) -> Self {
        Self::new(ToolName::GetTrialDetails, json!({"nct_id": id.as_str()}))
    }

    fn invalid(&self, reason: impl Into<String>) -> ToolError {
        ToolError::InvalidArguments {
            tool: self.tool,
            reason: reason.into(),
        }
    }

    fn string_arg(&self, key: &str) -> Result<&str, ToolError> {
        match self.arguments.get(key) {
            Some(Value::String(s)) if !s.trim().is_empty() => Ok(s),
            Some(_) => Err(self.invalid(format!("{key} must be a non-empty string"))),
            None => Err(self.invalid(format!("missing {key}"))),
        }
    }

    fn string_list_arg(&self, key: &str) -> Result<Vec<String>, ToolError> {
        match self.arguments.get(key) {
            None => Ok(Vec::new()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| self.invalid(format!("{key} must contain strings")))
                })
                .collect(),
            Some(_) => Err(self.invalid(format!("{key} must be an array"))),
        }
    }

    pub fn patient_id(&self) -> Result<PatientId, ToolError> {
        self.string_arg("patient_id").map(PatientId::from)
    }

    pub fn specialty(&self) -> Result<Specialty, ToolError> {
        let raw = self.string_arg("specialty")?;
        raw.parse()
            .map_err(|_| self.invalid(format!("unknown specialty {raw:?}")))
    }

    pub fn nct_id(&self) -> Result<NctId, ToolError> {
        NctId::parse(self.string_arg("nct_id")?).map_err(|e| self.invalid(e.to_string()))
    }

    /// The search query these arguments describe, minus the institution,
    /// which the tool host supplies.
    pub fn query(&self) -> Result<TrialQuery, ToolError> {
        let age_years = match self.arguments.get("age_years") {
            None | Some(Value::Null) => None,
            Some(v) => Some(
                v.as_f64()
                    .filter(|a| a.is_finite() && *a >= 0.0)
                    .ok_or_else(|| self.invalid("age_years must be a non-negative number"))?,
            ),
        };
        let sex = match self.arguments.get("sex") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(match s.to_ascii_lowercase().as_str() {
                "female" => Sex::Female,
                "male" => Sex::Male,
                _ => return Err(self.invalid(format!("unknown sex {s:?}"))),
            }),
            Some(_) => return Err(self.invalid("sex must be a string")),
        };
        let query = TrialQuery {
            condition_terms: self.string_list_arg("condition_terms")?,
            intervention_terms: self.string_list_arg("intervention_terms")?,
            age_years,
            sex,
            institution: String::new(),
        };
        if query.condition_terms.iter().all(|t| t.trim().is_empty()) {
            return Err(self.invalid("condition_terms must contain at least one term"));
        }
        Ok(query)
    }

    /// Checks the argument object against the tool's schema.
    pub fn validate(&self) -> Result<(), ToolError> {
        let allowed: &[&str] = match self.tool {
            ToolName::GetClinicalNotes => &["patient_id", "specialty"],
            ToolName::GetListOfClinicalTrials => {
                &["condition_terms", "intervention_terms", "age_years", "sex"]
            }
            ToolName::GetTrialDetails => &["nct_id"],
            _ => &["patient_id"],
        };
        if let Some(extra) = self.arguments.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(self.invalid(format!("unexpected argument {extra:?}")));
        }
        match self.tool {
            ToolName::GetClinicalNotes => {
                self.patient_id()?;
                self.specialty()?;
            }
            ToolName::GetListOfClinicalTrials => {
                self.query()?;
            }
            ToolName::GetTrialDetails => {
                self.nct_id()?;
            }
            _ => {
                self.patient_id()?;
            }
        }
        Ok(())
    }
}

/// Result of one tool call as recorded in the transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ToolOutcome {
    Ok { payload: Value },
    Error { message: String },
}

impl ToolOutcome {
    pub fn payload(&self) -> Option<&Value> {
        match self {
            ToolOutcome::Ok { payload } => Some(payload),
            ToolOutcome::Error { .. } => None,
        }
    }

    pub fn is_error(&self) -> bool {
        matches!(self, ToolOutcome::Error { .. })
    }

    /// EHR payloads are arrays of sections; empty means every section is empty.
    pub fn is_empty_or_error(&self) -> bool {
        match self {
            ToolOutcome::Error { .. } => true,
            ToolOutcome::Ok { payload } => match serde_json::from_value::<Vec<SectionPayload>>(payload.clone()) {
                Ok(sections) => sections.iter().all(SectionPayload::is_empty),
                Err(_) => payload.is_null() || payload.as_array().is_some_and(Vec::is_empty),
            },
        }
    }
}

pub trait ToolHost: Send + Sync {
    fn dispatch(&self, call: &ToolCall) -> Result<Value, ToolError>;
}

/// Tools backed by the mock EHR and a trial registry.
pub struct ClinicalTools<'a> {
    pub store: &'a CohortStore,
    pub registry: &'a dyn TrialRegistry,
    pub run_date: NaiveDate,
    pub institution: String,
}

impl ClinicalTools<'_> {
    fn sections(&self, call: &ToolCall, sections: &[EhrSection]) -> Result<Value, ToolError> {
        let id = call.patient_id()?;
        let payloads = sections
            .iter()
            .map(|s| self.store.get_section(&id, *s, self.run_date))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(serde_json::to_value(payloads).expect("sections serialize"))
    }
}

impl ToolHost for ClinicalTools<'_> {
    fn dispatch(&self, call: &ToolCall) -> Result<Value, ToolError> {
        call.validate()?;
        match call.tool {
            ToolName::GetPatientDetails => self.sections(
                call,
                &[EhrSection::PatientDetails, EhrSection::Medications, EhrSection::Labs],
            ),
            ToolName::GetTreatmentDetails => self.sections(call, &[EhrSection::TreatmentDetails]),
            ToolName::GetDiagnosisDetails => self.sections(call, &[EhrSection::DiagnosisDetails]),
            ToolName::GetAppointments => self.sections(call, &[EhrSection::AppointmentsToday]),
            ToolName::GetRadiologyReports => self.sections(call, &[EhrSection::RadiologyReports]),
            ToolName::GetPathologyReports => self.sections(call, &[EhrSection::PathologyReports]),
            ToolName::GetClinicalNotes => {
                self.sections(call, &[EhrSection::notes(call.specialty()?)])
            }
            ToolName::GetListOfClinicalTrials => {
                let mut query = call.query()?;
                query.institution = self.institution.clone();
                let trials = self.registry.search_trials(&query)?;
                Ok(serde_json::to_value(trials).expect("trials serialize"))
            }
            ToolName::GetTrialDetails => {
                let trial = self.registry.get_trial(call.nct_id()?.as_str())?;
                Ok(serde_json::to_value(trial).expect("trial serializes"))
            }
        }
    }
}

/// Which calls a `FaultyTools` wrapper fails.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolFault {
    /// Empty means every tool.
    #[serde(default)]
    pub tools: Vec<ToolName>,
    /// Restricts the fault to calls about one patient.
    #[serde(default)]
    pub patient_id: Option<PatientId>,
}

impl ToolFault {
    pub fn matches(&self, call: &ToolCall) -> bool {
        let tool_ok = self.tools.is_empty() || self.tools.contains(&call.tool);
        let patient_ok = match &self.patient_id {
            None => true,
            Some(id) => call.patient_id().is_ok_and(|p| &p == id),
        };
        tool_ok && patient_ok
    }
}

pub struct FaultyTools<'a> {
    pub inner: &'a dyn ToolHost,
    pub faults: Vec<ToolFault>,
}

impl ToolHost for FaultyTools<'_> {
    fn dispatch(&self, call: &ToolCall) -> Result<Value, ToolError> {
        if self.faults.iter().any(|f| f.matches(call)) {
            return Err(ToolError::Injected(call.tool));
        }
        self.inner.dispatch(call)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentMessage {
    pub text: String,
    #[serde(default)]
    pub tool_calls: Vec<ToolCall>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentStep {
    pub agent_message: String,
    pub tool_calls: Vec<ToolCall>,
    pub tool_results: Vec<ToolOutcome>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum AbortReason {
    StepLimit { max_steps: usize },
    ToolCallLimit { requested: usize, max: usize },
    Backend { message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentTranscript {
    pub steps: Vec<AgentStep>,
    pub terminated: bool,
    pub done_signal_seen: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort: Option<AbortReason>,
}

impl AgentTranscript {
    pub fn final_message(&self) -> Option<&str> {
        self.steps.last().map(|s| s.agent_message.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendLimits {
    pub max_steps: usize,
    pub max_tool_calls_per_step: usize,
    pub deterministic: bool,
}

impl Default for BackendLimits {
    fn default() -> Self {
        Self {
            max_steps: 40,
            max_tool_calls_per_step: 16,
            deterministic: true,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct BackendError(pub String);

pub trait AgentBackend: Send + Sync {
    fn next_message(
        &self,
        prompt: &PromptText,
        transcript: &AgentTranscript,
    ) -> Result<AgentMessage, BackendError>;
}

/// Alternates backend messages with tool execution until `<DONE>` or a limit.
/// Tool failures become error payloads the backend sees on its next turn.
pub fn run_agent(
    prompt: &PromptText,
    backend: &dyn AgentBackend,
    tools: &dyn ToolHost,
    limits: &BackendLimits,
) -> AgentTranscript {
    let mut transcript = AgentTranscript::default();
    let max_steps = limits.max_steps.max(1);
    loop {
        if transcript.steps.len() >= max_steps {
            transcript.abort = Some(AbortReason::StepLimit { max_steps });
            break;
        }
        let message = match backend.next_message(prompt, &transcript) {
            Ok(m) => m,
            Err(e) => {
                transcript.abort = Some(AbortReason::Backend { message: e.0 });
                break;
            }
        };
        if message.tool_calls.len() > limits.max_tool_calls_per_step {
            transcript.abort = Some(AbortReason::ToolCallLimit {
                requested: message.tool_calls.len(),
                max: limits.max_tool_calls_per_step,
            });
            transcript.steps.push(AgentStep {
                agent_message: message.text,
                tool_calls: Vec::new(),
                tool_results: Vec::new(),
            });
            break;
        }
        let tool_results = message
            .tool_calls
            .iter()
            .map(|call| match call.validate().and_then(|()| tools.dispatch(call)) {
                Ok(payload) => ToolOutcome::Ok { payload },
                Err(e) => ToolOutcome::Error {
                    message: e.to_string(),
                },
            })
            .collect();
        let done = detect_done(&message.text);
        transcript.steps.push(AgentStep {
            agent_message: message.text,
            tool_calls: message.tool_calls,
            tool_results,
        });
        if done {
            transcript.done_signal_seen = true;
            break;
        }
    }
    transcript.terminated = true;
    transcript
}
