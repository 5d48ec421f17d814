//! Shared clinical vocabulary: identifiers, chart sections, staging enums and
//! the visit taxonomy consumed by every other module.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use chrono::{DateTime, Datelike, FixedOffset, NaiveDate};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DomainError {
    #[error("unknown {kind}: {value:?}")]
    UnknownVocabulary { kind: &'static str, value: String },
    #[error("{0}")]
    Invariant(String),
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

string_id!(
    /// Opaque patient identifier, unique within a cohort.
    PatientId
);
string_id!(PhysicianId);
string_id!(AppointmentId);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Female,
    Male,
    #[default]
    Unknown,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
            Sex::Unknown => "unknown",
        }
    }
}

/// Specialties whose clinical notes the summary agent retrieves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Specialty {
    Radiology,
    Pathology,
    Surgery,
    Medonc,
    #[serde(rename = "ent")]
    Ent,
    Urology,
    Radonc,
}

impl Specialty {
    pub const ALL: [Specialty; 7] = [
        Specialty::Radiology,
        Specialty::Pathology,
        Specialty::Surgery,
        Specialty::Medonc,
        Specialty::Ent,
        Specialty::Urology,
        Specialty::Radonc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Specialty::Radiology => "radiology",
            Specialty::Pathology => "pathology",
            Specialty::Surgery => "surgery",
            Specialty::Medonc => "medonc",
            Specialty::Ent => "ent",
            Specialty::Urology => "urology",
            Specialty::Radonc => "radonc",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Specialty::Radiology => "radiology",
            Specialty::Pathology => "pathology",
            Specialty::Surgery => "surgery",
            Specialty::Medonc => "medical oncology",
            Specialty::Ent => "ENT",
            Specialty::Urology => "urology",
            Specialty::Radonc => "radiation oncology",
        }
    }
}

impl FromStr for Specialty {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Specialty::ALL
            .into_iter()
            .find(|sp| sp.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| DomainError::UnknownVocabulary {
                kind: "specialty",
                value: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatedDocument {
    pub date: NaiveDate,
    pub title: String,
    #[serde(default)]
    pub text: String,
}

macro_rules! closed_vocab {
    ($(#[$meta:meta])* $name:ident, $kind:literal, { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl FromStr for $name {
            type Err = DomainError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let s = s.trim();
                $name::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str().eq_ignore_ascii_case(s))
                    .ok_or_else(|| DomainError::UnknownVocabulary { kind: $kind, value: s.to_string() })
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let raw = String::deserialize(d)?;
                raw.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

closed_vocab!(
    /// Primary tumor stage. Unsuffixed stages are kept distinct from their
    /// lettered sub-stages; see `clinical_rules` for how they are graded.
    TStage, "T stage", {
        T1 => "T1", T1a => "T1a", T1b => "T1b", T1c => "T1c",
        T2 => "T2", T2a => "T2a", T2b => "T2b", T2c => "T2c",
        T3 => "T3", T3a => "T3a", T3b => "T3b", T3c => "T3c",
        T4 => "T4", T4a => "T4a", T4b => "T4b", T4c => "T4c",
    }
);
closed_vocab!(NStage, "N stage", { N0 => "N0", N1 => "N1" });
closed_vocab!(MStage, "M stage", { M0 => "M0", M1 => "M1" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TnmStage {
    pub t_stage: TStage,
    pub n_stage: NStage,
    pub m_stage: MStage,
}

impl fmt::Display for TnmStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.t_stage, self.n_stage, self.m_stage)
    }
}

/// Biopsy grading and core counts for a prostate primary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawProstateDetail")]
pub struct ProstateDetail {
    gleason_primary: u8,
    gleason_secondary: u8,
    cores_positive: u32,
    cores_total: u32,
}

#[derive(Deserialize)]
struct RawProstateDetail {
    gleason_primary: u8,
    gleason_secondary: u8,
    cores_positive: u32,
    cores_total: u32,
}

impl TryFrom<RawProstateDetail> for ProstateDetail {
    type Error = DomainError;

    fn try_from(raw: RawProstateDetail) -> Result<Self, Self::Error> {
        ProstateDetail::new(
            raw.gleason_primary,
            raw.gleason_secondary,
            raw.cores_positive,
            raw.cores_total,
        )
    }
}

impl ProstateDetail {
    pub fn new(
        gleason_primary: u8,
        gleason_secondary: u8,
        cores_positive: u32,
        cores_total: u32,
    ) -> Result<Self, DomainError> {
        if !(1..=5).contains(&gleason_primary) || !(1..=5).contains(&gleason_secondary) {
            return Err(DomainError::Invariant(format!(
                "Gleason patterns must be 1-5, got {gleason_primary}+{gleason_secondary}"
            )));
        }
        if cores_total == 0 {
            return Err(DomainError::Invariant("cores_total must be positive".into()));
        }
        if cores_positive > cores_total {
            return Err(DomainError::Invariant(format!(
                "cores_positive {cores_positive} exceeds cores_total {cores_total}"
            )));
        }
        Ok(Self {
            gleason_primary,
            gleason_secondary,
            cores_positive,
            cores_total,
        })
    }

    pub fn gleason_primary(&self) -> u8 {
        self.gleason_primary
    }

    pub fn gleason_secondary(&self) -> u8 {
        self.gleason_secondary
    }

    pub fn gleason_sum(&self) -> u8 {
        self.gleason_primary + self.gleason_secondary
    }

    pub fn cores_positive(&self) -> u32 {
        self.cores_positive
    }

    pub fn cores_total(&self) -> u32 {
        self.cores_total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisDetail {
    pub site: String,
    pub onset_date: NaiveDate,
    pub staging: TnmStage,
    pub histology: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prostate_detail: Option<ProstateDetail>,
}

impl DiagnosisDetail {
    pub fn is_prostate(&self) -> bool {
        self.prostate_detail.is_some() || self.site.to_ascii_lowercase().contains("prostate")
    }
}

/// One course or procedure on the chart. Radiation courses carry dose and
/// fraction accounting; other modalities leave those fields empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentDetail {
    pub modality: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site: Option<String>,
    pub start_date: NaiveDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_date: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dose_prescribed_gy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dose_delivered_gy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fractions_prescribed: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fractions_delivered: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub most_recent_treatment_date: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_treatment_date: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedicationEntry {
    pub name: String,
    pub start_date: NaiveDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_date: Option<NaiveDate>,
}

impl MedicationEntry {
    pub fn is_active_on(&self, date: NaiveDate) -> bool {
        self.start_date <= date && self.end_date.is_none_or(|end| end >= date)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabResult {
    pub analyte: String,
    pub value: f64,
    pub unit: String,
    pub date: NaiveDate,
}

impl LabResult {
    pub fn is_psa(&self) -> bool {
        self.analyte.eq_ignore_ascii_case("PSA")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorRadiation {
    pub dose_gy: f64,
    pub year: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EligibilityFacts {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ecog: Option<u8>,
    #[serde(default)]
    pub comorbidities: Vec<String>,
    #[serde(default)]
    pub biomarkers: BTreeMap<String, String>,
    #[serde(default)]
    pub prior_radiation: Vec<PriorRadiation>,
    #[serde(default)]
    pub prior_systemic_therapies: Vec<String>,
}

impl EligibilityFacts {
    pub fn is_empty(&self) -> bool {
        self.ecog.is_none()
            && self.comorbidities.is_empty()
            && self.biomarkers.is_empty()
            && self.prior_radiation.is_empty()
            && self.prior_systemic_therapies.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisitKind {
    Consult,
    New,
    FollowUp,
    Management,
    Simulation,
    Treatment,
    Other,
}

impl VisitKind {
    pub const ALL: [VisitKind; 7] = [
        VisitKind::Consult,
        VisitKind::New,
        VisitKind::FollowUp,
        VisitKind::Management,
        VisitKind::Simulation,
        VisitKind::Treatment,
        VisitKind::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VisitKind::Consult => "consult",
            VisitKind::New => "new",
            VisitKind::FollowUp => "follow_up",
            VisitKind::Management => "management",
            VisitKind::Simulation => "simulation",
            VisitKind::Treatment => "treatment",
            VisitKind::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Appointment {
    pub appointment_id: AppointmentId,
    pub physician_id: PhysicianId,
    pub patient_id: PatientId,
    pub start_time: DateTime<FixedOffset>,
    pub visit_kind: VisitKind,
    pub raw_type_label: String,
}

impl Appointment {
    pub fn local_date(&self) -> NaiveDate {
        self.start_time.date_naive()
    }
}

/// Every EHR section for one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientChart {
    pub patient_id: PatientId,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date_of_birth: Option<NaiveDate>,
    #[serde(default)]
    pub sex: Sex,
    #[serde(default)]
    pub diagnoses: Vec<DiagnosisDetail>,
    #[serde(default)]
    pub treatments: Vec<TreatmentDetail>,
    /// Populated from the schedule files at load time, never read from the
    /// chart document itself.
    #[serde(default, skip)]
    pub appointments: Vec<Appointment>,
    #[serde(default)]
    pub radiology_reports: Vec<DatedDocument>,
    #[serde(default)]
    pub pathology_reports: Vec<DatedDocument>,
    #[serde(default)]
    pub notes: BTreeMap<Specialty, Vec<DatedDocument>>,
    #[serde(default)]
    pub medications: Vec<MedicationEntry>,
    #[serde(default)]
    pub labs: Vec<LabResult>,
    #[serde(default)]
    pub eligibility_facts: EligibilityFacts,
}

impl PatientChart {
    /// A chart with demographics only.
    pub fn new(patient_id: impl Into<PatientId>, name: impl Into<String>) -> Self {
        Self {
            patient_id: patient_id.into(),
            name: name.into(),
            date_of_birth: None,
            sex: Sex::Unknown,
            diagnoses: Vec::new(),
            treatments: Vec::new(),
            appointments: Vec::new(),
            radiology_reports: Vec::new(),
            pathology_reports: Vec::new(),
            notes: BTreeMap::new(),
            medications: Vec::new(),
            labs: Vec::new(),
            eligibility_facts: EligibilityFacts::default(),
        }
    }

    pub fn age_on(&self, date: NaiveDate) -> Option<u32> {
        let dob = self.date_of_birth?;
        age_in_years(dob, date)
    }

    pub fn psa_series(&self) -> impl Iterator<Item = &LabResult> {
        self.labs.iter().filter(|l| l.is_psa())
    }

    /// Checks the per-chart invariants; returns every violation found.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.patient_id.as_str().trim().is_empty() {
            problems.push("patient_id is empty".to_string());
        }
        let mut check_sorted = |what: &str, dates: Vec<NaiveDate>| {
            if dates.windows(2).any(|w| w[0] > w[1]) {
                problems.push(format!("{what} are not stored date-ascending"));
            }
        };
        check_sorted("radiology_reports", self.radiology_reports.iter().map(|d| d.date).collect());
        check_sorted("pathology_reports", self.pathology_reports.iter().map(|d| d.date).collect());
        for (specialty, docs) in &self.notes {
            check_sorted(
                &format!("{} notes", specialty.as_str()),
                docs.iter().map(|d| d.date).collect(),
            );
        }
        check_sorted("labs", self.labs.iter().map(|l| l.date).collect());
        check_sorted("medications", self.medications.iter().map(|m| m.start_date).collect());
        check_sorted("diagnoses", self.diagnoses.iter().map(|d| d.onset_date).collect());
        check_sorted("treatments", self.treatments.iter().map(|t| t.start_date).collect());

        for lab in self.psa_series() {
            if lab.unit != "ng/mL" {
                problems.push(format!("PSA on {} has unit {:?}, expected \"ng/mL\"", lab.date, lab.unit));
            }
        }
        for lab in &self.labs {
            if !lab.value.is_finite() {
                problems.push(format!("{} on {} is not a finite number", lab.analyte, lab.date));
            }
        }
        for course in &self.eligibility_facts.prior_radiation {
            if !(course.dose_gy > 0.0) {
                problems.push(format!("prior radiation in {} has non-positive dose", course.year));
            }
        }
        if let Some(ecog) = self.eligibility_facts.ecog {
            if ecog > 5 {
                problems.push(format!("ECOG {ecog} outside 0-5"));
            }
        }
        problems
    }
}

/// Whole years elapsed between `dob` and `date`; `None` if `date` precedes birth.
pub fn age_in_years(dob: NaiveDate, date: NaiveDate) -> Option<u32> {
    if date < dob {
        return None;
    }
    let mut years = date.year() - dob.year();
    if (date.month(), date.day()) < (dob.month(), dob.day()) {
        years -= 1;
    }
    u32::try_from(years).ok()
}

#[derive(Debug, Clone, Deserialize)]
struct VisitKindRule {
    keyword: String,
    kind: VisitKind,
}

/// Priority-ordered substring table mapping raw schedule labels to visit kinds.
#[derive(Debug, Clone)]
pub struct VisitKindTable {
    rules: Vec<VisitKindRule>,
}

static DEFAULT_VISIT_TABLE: LazyLock<VisitKindTable> = LazyLock::new(|| {
    VisitKindTable::from_json(include_str!("../config/visit_kinds.json"))
        .expect("bundled visit kind table is valid")
});

impl VisitKindTable {
    pub fn from_json(json: &str) -> Result<Self, DomainError> {
        let rules: Vec<VisitKindRule> = serde_json::from_str(json)
            .map_err(|e| DomainError::Invariant(format!("visit kind table: {e}")))?;
        let rules = rules
            .into_iter()
            .map(|r| VisitKindRule {
                keyword: r.keyword.to_lowercase(),
                kind: r.kind,
            })
            .collect();
        Ok(Self { rules })
    }

    pub fn bundled() -> &'static VisitKindTable {
        &DEFAULT_VISIT_TABLE
    }

    pub fn classify(&self, raw_type_label: &str) -> VisitKind {
        let label = raw_type_label.to_lowercase();
        self.rules
            .iter()
            .find(|rule| label.contains(&rule.keyword))
            .map_or(VisitKind::Other, |rule| rule.kind)
    }
}

/// Maps a schedule's raw appointment-type label onto the visit taxonomy using
/// the bundled keyword table. Unrecognized labels map to `Other`.
pub fn classify_visit_kind(raw_type_label: &str) -> VisitKind {
    VisitKindTable::bundled().classify(raw_type_label)
}

/// Trial screening runs for new and consult visits only.
pub fn is_trial_eligible_visit(kind: VisitKind) -> bool {
    matches!(kind, VisitKind::New | VisitKind::Consult)
}
