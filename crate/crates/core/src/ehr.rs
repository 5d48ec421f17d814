//! File-backed mock EHR.
//!
//! A cohort directory holds one document per patient (`patients/<id>.json`),
//! one per physician (`physicians/<id>.json`) and one schedule file per clinic
//! day (`schedules/<YYYY-MM-DD>.json`). The store is immutable once loaded.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, FixedOffset, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::domain::{
    classify_visit_kind, Appointment, AppointmentId, DatedDocument, DiagnosisDetail,
    EligibilityFacts, LabResult, MedicationEntry, PatientChart, PatientId, PhysicianId, Sex,
    Specialty, TreatmentDetail,
};

#[derive(Debug, thiserror::Error)]
pub enum EhrError {
    #[error("cohort directory {0} does not exist")]
    MissingDirectory(PathBuf),
    #[error("no physicians defined under {0}")]
    NoPhysicians(PathBuf),
    #[error("{path}:{line}:{column}: malformed document: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("appointment {appointment} references unknown patient {patient}")]
    DanglingPatient {
        appointment: AppointmentId,
        patient: PatientId,
    },
    #[error("appointment {appointment} references unknown physician {physician}")]
    DanglingPhysician {
        appointment: AppointmentId,
        physician: PhysicianId,
    },
    #[error("unknown patient {0}")]
    UnknownPatient(PatientId),
    #[error("unknown physician {0}")]
    UnknownPhysician(PhysicianId),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicianProfile {
    pub id: PhysicianId,
    pub display_name: String,
    pub email: String,
    pub campus: String,
}

/// One row of a `schedules/<date>.json` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub appointment_id: AppointmentId,
    pub physician_id: PhysicianId,
    pub patient_id: PatientId,
    pub start_time: DateTime<FixedOffset>,
    pub type_label: String,
}

impl ScheduleEntry {
    pub fn into_appointment(self) -> Appointment {
        Appointment {
            visit_kind: classify_visit_kind(&self.type_label),
            appointment_id: self.appointment_id,
            physician_id: self.physician_id,
            patient_id: self.patient_id,
            start_time: self.start_time,
            raw_type_label: self.type_label,
        }
    }

    pub fn from_appointment(a: &Appointment) -> Self {
        Self {
            appointment_id: a.appointment_id.clone(),
            physician_id: a.physician_id.clone(),
            patient_id: a.patient_id.clone(),
            start_time: a.start_time,
            type_label: a.raw_type_label.clone(),
        }
    }
}

/// The retrievable chart sections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EhrSection {
    PatientDetails,
    TreatmentDetails,
    DiagnosisDetails,
    AppointmentsToday,
    RadiologyReports,
    PathologyReports,
    NotesRadiology,
    NotesPathology,
    NotesSurgery,
    NotesMedonc,
    NotesEnt,
    NotesUrology,
    NotesRadonc,
    Medications,
    Labs,
}

impl EhrSection {
    pub const ALL: [EhrSection; 15] = [
        EhrSection::PatientDetails,
        EhrSection::TreatmentDetails,
        EhrSection::DiagnosisDetails,
        EhrSection::AppointmentsToday,
        EhrSection::RadiologyReports,
        EhrSection::PathologyReports,
        EhrSection::NotesRadiology,
        EhrSection::NotesPathology,
        EhrSection::NotesSurgery,
        EhrSection::NotesMedonc,
        EhrSection::NotesEnt,
        EhrSection::NotesUrology,
        EhrSection::NotesRadonc,
        EhrSection::Medications,
        EhrSection::Labs,
    ];

    pub fn notes(specialty: Specialty) -> Self {
        match specialty {
            Specialty::Radiology => EhrSection::NotesRadiology,
            Specialty::Pathology => EhrSection::NotesPathology,
            Specialty::Surgery => EhrSection::NotesSurgery,
            Specialty::Medonc => EhrSection::NotesMedonc,
            Specialty::Ent => EhrSection::NotesEnt,
            Specialty::Urology => EhrSection::NotesUrology,
            Specialty::Radonc => EhrSection::NotesRadonc,
        }
    }

    pub fn specialty(self) -> Option<Specialty> {
        Some(match self {
            EhrSection::NotesRadiology => Specialty::Radiology,
            EhrSection::NotesPathology => Specialty::Pathology,
            EhrSection::NotesSurgery => Specialty::Surgery,
            EhrSection::NotesMedonc => Specialty::Medonc,
            EhrSection::NotesEnt => Specialty::Ent,
            EhrSection::NotesUrology => Specialty::Urology,
            EhrSection::NotesRadonc => Specialty::Radonc,
            _ => return None,
        })
    }
}

impl fmt::Display for EhrSection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("section serializes");
        f.write_str(s.as_str().unwrap_or_default())
    }
}

/// Demographic view returned for `patient_details`. Age is computed against
/// the retrieval date so downstream consumers need no clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientDetails {
    pub patient_id: PatientId,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date_of_birth: Option<NaiveDate>,
    pub sex: Sex,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_years: Option<u32>,
    pub as_of: NaiveDate,
    #[serde(default)]
    pub eligibility_facts: EligibilityFacts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "items", rename_all = "snake_case")]
pub enum SectionContent {
    Details(Box<PatientDetails>),
    Treatments(Vec<TreatmentDetail>),
    Diagnoses(Vec<DiagnosisDetail>),
    Appointments(Vec<Appointment>),
    Documents(Vec<DatedDocument>),
    Medications(Vec<MedicationEntry>),
    Labs(Vec<LabResult>),
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionPayload {
    pub section: EhrSection,
    pub content: SectionContent,
}

impl SectionPayload {
    pub fn is_empty(&self) -> bool {
        matches!(self.content, SectionContent::Empty)
    }
}

fn non_empty<T>(items: Vec<T>, wrap: impl FnOnce(Vec<T>) -> SectionContent) -> SectionContent {
    if items.is_empty() {
        SectionContent::Empty
    } else {
        wrap(items)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortStore {
    patients: BTreeMap<PatientId, PatientChart>,
    schedules: BTreeMap<(PhysicianId, NaiveDate), Vec<Appointment>>,
    physicians: BTreeMap<PhysicianId, PhysicianProfile>,
}

impl CohortStore {
    /// Builds a store from parts, checking every referential invariant.
    /// Appointments are attached to their patients' charts.
    pub fn new(
        physicians: Vec<PhysicianProfile>,
        patients: Vec<PatientChart>,
        appointments: Vec<Appointment>,
    ) -> Result<Self, EhrError> {
        let mut findings = Vec::new();
        let store = Self::assemble(physicians, patients, appointments, &mut findings);
        match findings.into_iter().next() {
            Some(err) => Err(err),
            None => Ok(store),
        }
    }

    fn assemble(
        physicians: Vec<PhysicianProfile>,
        patients: Vec<PatientChart>,
        mut appointments: Vec<Appointment>,
        findings: &mut Vec<EhrError>,
    ) -> Self {
        let mut physician_map = BTreeMap::new();
        for p in physicians {
            if physician_map.contains_key(&p.id) {
                findings.push(EhrError::Invalid {
                    path: PathBuf::from("physicians"),
                    message: format!("duplicate physician id {}", p.id),
                });
            }
            physician_map.insert(p.id.clone(), p);
        }
        if physician_map.is_empty() {
            findings.push(EhrError::NoPhysicians(PathBuf::from("physicians")));
        }

        let mut patient_map = BTreeMap::new();
        for mut chart in patients {
            chart.appointments.clear();
            if patient_map.contains_key(&chart.patient_id) {
                findings.push(EhrError::Invalid {
                    path: PathBuf::from("patients"),
                    message: format!("duplicate patient id {}", chart.patient_id),
                });
            }
            patient_map.insert(chart.patient_id.clone(), chart);
        }

        appointments.sort_by(|a, b| {
            (a.start_time, &a.appointment_id).cmp(&(b.start_time, &b.appointment_id))
        });
        let mut schedules: BTreeMap<(PhysicianId, NaiveDate), Vec<Appointment>> = BTreeMap::new();
        for appt in appointments {
            if !physician_map.contains_key(&appt.physician_id) {
                findings.push(EhrError::DanglingPhysician {
                    appointment: appt.appointment_id.clone(),
                    physician: appt.physician_id.clone(),
                });
                continue;
            }
            match patient_map.get_mut(&appt.patient_id) {
                Some(chart) => chart.appointments.push(appt.clone()),
                None => {
                    findings.push(EhrError::DanglingPatient {
                        appointment: appt.appointment_id.clone(),
                        patient: appt.patient_id.clone(),
                    });
                    continue;
                }
            }
            schedules
                .entry((appt.physician_id.clone(), appt.local_date()))
                .or_default()
                .push(appt);
        }

        Self {
            patients: patient_map,
            schedules,
            physicians: physician_map,
        }
    }

    pub fn patient(&self, id: &PatientId) -> Result<&PatientChart, EhrError> {
        self.patients
            .get(id)
            .ok_or_else(|| EhrError::UnknownPatient(id.clone()))
    }

    pub fn patients(&self) -> impl Iterator<Item = &PatientChart> {
        self.patients.values()
    }

    pub fn physician(&self, id: &PhysicianId) -> Result<&PhysicianProfile, EhrError> {
        self.physicians
            .get(id)
            .ok_or_else(|| EhrError::UnknownPhysician(id.clone()))
    }

    /// Every appointment in the cohort, ordered by physician, then date, then time.
    pub fn appointments(&self) -> impl Iterator<Item = &Appointment> {
        self.schedules.values().flatten()
    }

    pub fn schedule_count(&self) -> usize {
        self.schedules.len()
    }

    /// Returns one chart section. `run_date` scopes `appointments_today` and
    /// the age reported in `patient_details`.
    pub fn get_section(
        &self,
        patient_id: &PatientId,
        section: EhrSection,
        run_date: NaiveDate,
    ) -> Result<SectionPayload, EhrError> {
        let chart = self.patient(patient_id)?;
        let content = match section {
            EhrSection::PatientDetails => {
                if chart.date_of_birth.is_none() && chart.sex == Sex::Unknown {
                    SectionContent::Empty
                } else {
                    SectionContent::Details(Box::new(PatientDetails {
                        patient_id: chart.patient_id.clone(),
                        name: chart.name.clone(),
                        date_of_birth: chart.date_of_birth,
                        sex: chart.sex,
                        age_years: chart.age_on(run_date),
                        as_of: run_date,
                        eligibility_facts: chart.eligibility_facts.clone(),
                    }))
                }
            }
            EhrSection::TreatmentDetails => {
                non_empty(chart.treatments.clone(), SectionContent::Treatments)
            }
            EhrSection::DiagnosisDetails => {
                non_empty(chart.diagnoses.clone(), SectionContent::Diagnoses)
            }
            EhrSection::AppointmentsToday => non_empty(
                chart
                    .appointments
                    .iter()
                    .filter(|a| a.local_date() == run_date)
                    .cloned()
                    .collect(),
                SectionContent::Appointments,
            ),
            EhrSection::RadiologyReports => {
                non_empty(chart.radiology_reports.clone(), SectionContent::Documents)
            }
            EhrSection::PathologyReports => {
                non_empty(chart.pathology_reports.clone(), SectionContent::Documents)
            }
            EhrSection::Medications => {
                non_empty(chart.medications.clone(), SectionContent::Medications)
            }
            EhrSection::Labs => non_empty(chart.labs.clone(), SectionContent::Labs),
            notes => {
                let specialty = notes.specialty().expect("remaining sections are notes");
                non_empty(
                    chart.notes.get(&specialty).cloned().unwrap_or_default(),
                    SectionContent::Documents,
                )
            }
        };
        Ok(SectionPayload { section, content })
    }

    /// Appointments for one physician on one date, sorted by start time.
    pub fn get_schedule(
        &self,
        physician_id: &PhysicianId,
        date: NaiveDate,
    ) -> Result<Vec<Appointment>, EhrError> {
        self.physician(physician_id)?;
        Ok(self
            .schedules
            .get(&(physician_id.clone(), date))
            .cloned()
            .unwrap_or_default())
    }

    /// All physicians sorted by id, including those with no clinic on `date`.
    pub fn list_physicians(&self, _date: NaiveDate) -> Vec<PhysicianId> {
        self.physicians.keys().cloned().collect()
    }

    /// Writes the store back out in the cohort directory layout.
    pub fn write_to(&self, root: &Path) -> Result<(), EhrError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| EhrError::Io { path, source }
        };
        for dir in ["patients", "physicians", "schedules"] {
            let d = root.join(dir);
            fs::create_dir_all(&d).map_err(io(&d))?;
        }
        for chart in self.patients.values() {
            let path = root.join("patients").join(format!("{}.json", chart.patient_id));
            fs::write(&path, to_pretty(chart)).map_err(io(&path))?;
        }
        for profile in self.physicians.values() {
            let path = root.join("physicians").join(format!("{}.json", profile.id));
            fs::write(&path, to_pretty(profile)).map_err(io(&path))?;
        }
        let mut by_date: BTreeMap<NaiveDate, Vec<ScheduleEntry>> = BTreeMap::new();
        for appt in self.appointments() {
            by_date
                .entry(appt.local_date())
                .or_default()
                .push(ScheduleEntry::from_appointment(appt));
        }
        for (date, entries) in by_date {
            let path = root.join("schedules").join(format!("{date}.json"));
            fs::write(&path, to_pretty(&entries)).map_err(io(&path))?;
        }
        Ok(())
    }
}

fn to_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("fixture types serialize");
    s.push('\n');
    s
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, EhrError> {
    let text = fs::read_to_string(path).map_err(|source| EhrError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| EhrError::Malformed {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>, EhrError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let entries = fs::read_dir(dir).map_err(|source| EhrError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    files.sort();
    Ok(files)
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Reads and validates a cohort directory, collecting every problem found.
/// Returns the store only when there were no findings.
pub fn validate_cohort(root: &Path) -> (Option<CohortStore>, Vec<EhrError>) {
    if !root.is_dir() {
        return (None, vec![EhrError::MissingDirectory(root.to_path_buf())]);
    }
    let mut findings = Vec::new();

    let mut physicians = Vec::new();
    match json_files(&root.join("physicians")) {
        Ok(files) => {
            for path in files {
                match read_json::<PhysicianProfile>(&path) {
                    Ok(p) if p.id.as_str() != file_stem(&path) => findings.push(EhrError::Invalid {
                        message: format!("file name does not match physician id {}", p.id),
                        path,
                    }),
                    Ok(p) => physicians.push(p),
                    Err(e) => findings.push(e),
                }
            }
        }
        Err(e) => findings.push(e),
    }
    if physicians.is_empty() && findings.is_empty() {
        return (None, vec![EhrError::NoPhysicians(root.join("physicians"))]);
    }

    let mut patients = Vec::new();
    match json_files(&root.join("patients")) {
        Ok(files) => {
            for path in files {
                match read_json::<PatientChart>(&path) {
                    Ok(chart) => {
                        if chart.patient_id.as_str() != file_stem(&path) {
                            findings.push(EhrError::Invalid {
                                path: path.clone(),
                                message: format!(
                                    "file name does not match patient id {}",
                                    chart.patient_id
                                ),
                            });
                        }
                        for problem in chart.validate() {
                            findings.push(EhrError::Invalid {
                                path: path.clone(),
                                message: problem,
                            });
                        }
                        patients.push(chart);
                    }
                    Err(e) => findings.push(e),
                }
            }
        }
        Err(e) => findings.push(e),
    }

    let mut appointments = Vec::new();
    match json_files(&root.join("schedules")) {
        Ok(files) => {
            for path in files {
                let date = match file_stem(&path).parse::<NaiveDate>() {
                    Ok(d) => d,
                    Err(_) => {
                        findings.push(EhrError::Invalid {
                            path,
                            message: "schedule file name must be an ISO date".into(),
                        });
                        continue;
                    }
                };
                match read_json::<Vec<ScheduleEntry>>(&path) {
                    Ok(entries) => {
                        for entry in entries {
                            if entry.start_time.date_naive() != date {
                                findings.push(EhrError::Invalid {
                                    path: path.clone(),
                                    message: format!(
                                        "appointment {} starts {} outside {date}",
                                        entry.appointment_id, entry.start_time
                                    ),
                                });
                            }
                            if entry.type_label.trim().is_empty() {
                                findings.push(EhrError::Invalid {
                                    path: path.clone(),
                                    message: format!(
                                        "appointment {} has an empty type label",
                                        entry.appointment_id
                                    ),
                                });
                            }
                            appointments.push(entry.into_appointment());
                        }
                    }
                    Err(e) => findings.push(e),
                }
            }
        }
        Err(e) => findings.push(e),
    }

    let store = CohortStore::assemble(physicians, patients, appointments, &mut findings);
    if findings.is_empty() {
        (Some(store), findings)
    } else {
        (None, findings)
    }
}

/// Loads a cohort directory; fails on the first finding.
pub fn load_cohort(root: &Path) -> Result<CohortStore, EhrError> {
    let (store, findings) = validate_cohort(root);
    match (store, findings.into_iter().next()) {
        (Some(store), None) => Ok(store),
        (_, Some(err)) => Err(err),
        (None, None) => unreachable!("validation without a store always reports a finding"),
    }
}
