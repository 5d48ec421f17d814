//! The bundled `smoke-3x10` cohort and its 20-trial registry: three
//! physicians, ten patients and ten appointments on 2025-08-04.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{FixedOffset, NaiveDate, TimeZone};

use crate::domain::{
    Appointment, AppointmentId, DatedDocument, DiagnosisDetail, LabResult, MStage,
    MedicationEntry, NStage, PatientChart, PhysicianId, PriorRadiation, ProstateDetail, Sex, Specialty,
    TStage, TnmStage, TreatmentDetail, classify_visit_kind,
};
use crate::ehr::{CohortStore, EhrError, PhysicianProfile};
use crate::registry::{
    Comparator, Criterion, CriterionPredicate, NctId, OverallStatus, Polarity, TreatmentCategory, TrialRecord,
    TrialSex,
};

pub const SMOKE_DATE: &str = "2025-08-04";
pub const SMOKE_INSTITUTION: &str = "Mayo Clinic";

pub fn smoke_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2025, 8, 4).unwrap()
}

fn d(y: i32, m: u32, day: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, day).unwrap()
}

fn doc(date: NaiveDate, title: &str, text: &str) -> DatedDocument {
    DatedDocument {
        date,
        title: title.into(),
        text: text.into(),
    }
}

fn lab(analyte: &str, value: f64, unit: &str, date: NaiveDate) -> LabResult {
    LabResult {
        analyte: analyte.into(),
        value,
        unit: unit.into(),
        date,
    }
}

fn med(name: &str, start: NaiveDate) -> MedicationEntry {
    MedicationEntry {
        name: name.into(),
        start_date: start,
        end_date: None,
    }
}

fn stage(t: TStage, n: NStage, m: MStage) -> TnmStage {
    TnmStage {
        t_stage: t,
        n_stage: n,
        m_stage: m,
    }
}

fn dx(site: &str, onset: NaiveDate, staging: TnmStage, histology: &str) -> DiagnosisDetail {
    DiagnosisDetail {
        site: site.into(),
        onset_date: onset,
        staging,
        histology: histology.into(),
        prostate_detail: None,
    }
}

fn course(modality: &str, description: &str, site: &str, start: NaiveDate) -> TreatmentDetail {
    TreatmentDetail {
        modality: modality.into(),
        description: description.into(),
        site: Some(site.into()),
        start_date: start,
        end_date: None,
        dose_prescribed_gy: None,
        dose_delivered_gy: None,
        fractions_prescribed: None,
        fractions_delivered: None,
        most_recent_treatment_date: None,
        next_treatment_date: None,
    }
}

fn person(id: &str, name: &str, dob: NaiveDate, sex: Sex) -> PatientChart {
    let mut c = PatientChart::new(id, name);
    c.date_of_birth = Some(dob);
    c.sex = sex;
    c
}

fn note(chart: &mut PatientChart, specialty: Specialty, document: DatedDocument) {
    chart.notes.entry(specialty).or_default().push(document);
}

fn physicians() -> Vec<PhysicianProfile> {
    [
        ("dr-A", "Dr. Alice Anders", "Rochester"),
        ("dr-B", "Dr. Ben Brooks", "Phoenix"),
        ("dr-C", "Dr. Carla Cruz", "Jacksonville"),
    ]
    .into_iter()
    .map(|(id, name, campus)| PhysicianProfile {
        id: PhysicianId::new(id),
        display_name: name.into(),
        email: format!("{id}@example.org"),
        campus: campus.into(),
    })
    .collect()
}

/// Prostate consult: Gleason 4+3, 3/12 cores, T1c N0 M0, latest PSA 5.0.
fn p001() -> PatientChart {
    let mut c = person("P001", "Robert Hale", d(1958, 3, 15), Sex::Male);
    let mut diagnosis = dx(
        "Prostate",
        d(2025, 5, 12),
        stage(TStage::T1c, NStage::N0, MStage::M0),
        "adenocarcinoma",
    );
    diagnosis.prostate_detail = Some(ProstateDetail::new(4, 3, 3, 12).unwrap());
    c.diagnoses.push(diagnosis);
    c.pathology_reports.push(doc(
        d(2025, 5, 12),
        "Prostate needle biopsy",
        "Adenocarcinoma, Gleason 4+3=7 (grade group 3) in 3 of 12 cores.",
    ));
    c.radiology_reports.push(doc(
        d(2025, 6, 2),
        "MRI prostate",
        "PI-RADS 4 lesion in the left peripheral zone. No extraprostatic extension.",
    ));
    c.radiology_reports.push(doc(
        d(2025, 6, 10),
        "Bone scan",
        "No scintigraphic evidence of osseous metastatic disease.",
    ));
    c.labs.push(lab("PSA", 6.2, "ng/mL", d(2025, 5, 12)));
    c.labs.push(lab("PSA", 5.0, "ng/mL", d(2025, 7, 15)));
    c.labs.push(lab("Testosterone", 410.0, "ng/dL", d(2025, 7, 22)));
    note(
        &mut c,
        Specialty::Urology,
        doc(
            d(2025, 7, 1),
            "Urology consultation",
            "Discussed active surveillance, prostatectomy and radiation. Patient prefers radiation; referred to radiation oncology.",
        ),
    );
    c.medications.push(med("tamsulosin 0.4 mg daily", d(2025, 7, 28)));
    c.eligibility_facts.ecog = Some(0);
    c.eligibility_facts.comorbidities.push("hypertension".into());
    c
}

/// Lung SBRT follow-up.
fn p002() -> PatientChart {
    let mut c = person("P002", "Margaret Olsen", d(1949, 11, 2), Sex::Female);
    c.diagnoses.push(dx(
        "Lung",
        d(2025, 1, 20),
        stage(TStage::T1b, NStage::N0, MStage::M0),
        "adenocarcinoma",
    ));
    let mut sbrt = course("radiation", "SBRT to right upper lobe", "right upper lobe", d(2025, 3, 3));
    sbrt.end_date = Some(d(2025, 3, 12));
    sbrt.dose_prescribed_gy = Some(50.0);
    sbrt.dose_delivered_gy = Some(50.0);
    sbrt.fractions_prescribed = Some(5);
    sbrt.fractions_delivered = Some(5);
    sbrt.most_recent_treatment_date = Some(d(2025, 3, 12));
    c.treatments.push(sbrt);
    c.radiology_reports.push(doc(
        d(2025, 7, 21),
        "CT chest",
        "Expected post-treatment consolidation at the treated site. No new nodules.",
    ));
    note(
        &mut c,
        Specialty::Radonc,
        doc(
            d(2025, 5, 5),
            "Post-SBRT follow-up",
            "Mild fatigue resolved. Repeat CT chest in 3 months.",
        ),
    );
    c.eligibility_facts.ecog = Some(1);
    c.eligibility_facts.comorbidities.push("COPD".into());
    c
}

/// Oropharynx cancer after chemoradiation.
fn p003() -> PatientChart {
    let mut c = person("P003", "Daniel Reyes", d(1966, 6, 30), Sex::Male);
    c.diagnoses.push(dx(
        "Oropharynx",
        d(2024, 10, 8),
        stage(TStage::T2, NStage::N1, MStage::M0),
        "squamous cell carcinoma, p16 positive",
    ));
    let mut crt = course("radiation", "Chemoradiation to oropharynx and bilateral neck", "oropharynx", d(2024, 11, 18));
    crt.end_date = Some(d(2025, 1, 3));
    crt.dose_prescribed_gy = Some(70.0);
    crt.dose_delivered_gy = Some(70.0);
    crt.fractions_prescribed = Some(35);
    crt.fractions_delivered = Some(35);
    c.treatments.push(crt);
    c.medications.push(MedicationEntry {
        name: "cisplatin 40 mg/m2 weekly".into(),
        start_date: d(2024, 11, 18),
        end_date: Some(d(2024, 12, 30)),
    });
    c.radiology_reports.push(doc(
        d(2025, 4, 14),
        "PET/CT",
        "Complete metabolic response at the primary and neck.",
    ));
    note(
        &mut c,
        Specialty::Ent,
        doc(d(2025, 6, 2), "ENT surveillance", "Flexible laryngoscopy without evidence of recurrence."),
    );
    c.eligibility_facts.biomarkers.insert("p16".into(), "positive".into());
    c.eligibility_facts.ecog = Some(0);
    c
}

/// Rectal cancer at simulation.
fn p004() -> PatientChart {
    let mut c = person("P004", "Linda Park", d(1971, 2, 9), Sex::Female);
    c.diagnoses.push(dx(
        "Rectum",
        d(2025, 6, 16),
        stage(TStage::T3, NStage::N1, MStage::M0),
        "adenocarcinoma",
    ));
    c.radiology_reports.push(doc(
        d(2025, 6, 24),
        "MRI pelvis",
        "Mid rectal tumor with mesorectal nodes. Circumferential margin clear.",
    ));
    c.medications.push(med("capecitabine 825 mg/m2 twice daily", d(2025, 8, 11)));
    note(
        &mut c,
        Specialty::Medonc,
        doc(
            d(2025, 7, 10),
            "Medical oncology consult",
            "Plan total neoadjuvant therapy with concurrent capecitabine and long-course radiation.",
        ),
    );
    c
}

/// Breast consult after lumpectomy.
fn p005() -> PatientChart {
    let mut c = person("P005", "Susan Whitaker", d(1967, 4, 21), Sex::Female);
    c.diagnoses.push(dx(
        "Left breast",
        d(2025, 5, 28),
        stage(TStage::T1c, NStage::N0, MStage::M0),
        "invasive ductal carcinoma",
    ));
    let mut surgery = course("surgery", "Left lumpectomy with sentinel node biopsy", "left breast", d(2025, 7, 1));
    surgery.end_date = Some(d(2025, 7, 1));
    c.treatments.push(surgery);
    c.pathology_reports.push(doc(
        d(2025, 7, 1),
        "Lumpectomy pathology",
        "1.4 cm invasive ductal carcinoma, grade 2, margins negative, 0/2 sentinel nodes.",
    ));
    c.eligibility_facts.biomarkers.insert("ER".into(), "positive".into());
    c.eligibility_facts.biomarkers.insert("PR".into(), "positive".into());
    c.eligibility_facts.biomarkers.insert("HER2".into(), "negative".into());
    c.eligibility_facts.ecog = Some(0);
    note(
        &mut c,
        Specialty::Surgery,
        doc(
            d(2025, 7, 15),
            "Postoperative visit",
            "Healing well. Referred for adjuvant radiation and endocrine therapy.",
        ),
    );
    c
}

/// Prostate on treatment, fraction 15 of 28, with androgen deprivation.
fn p006() -> PatientChart {
    let mut c = person("P006", "Thomas Greer", d(1952, 9, 5), Sex::Male);
    let mut diagnosis = dx(
        "Prostate",
        d(2025, 3, 3),
        stage(TStage::T2b, NStage::N0, MStage::M0),
        "adenocarcinoma",
    );
    diagnosis.prostate_detail = Some(ProstateDetail::new(4, 4, 6, 12).unwrap());
    c.diagnoses.push(diagnosis);
    c.labs.push(lab("PSA", 14.8, "ng/mL", d(2025, 3, 1)));
    c.labs.push(lab("PSA", 2.1, "ng/mL", d(2025, 6, 30)));
    let mut rt = course("radiation", "IMRT to prostate and seminal vesicles", "prostate", d(2025, 7, 14));
    rt.dose_prescribed_gy = Some(70.0);
    rt.dose_delivered_gy = Some(37.5);
    rt.fractions_prescribed = Some(28);
    rt.fractions_delivered = Some(15);
    rt.most_recent_treatment_date = Some(d(2025, 8, 1));
    rt.next_treatment_date = Some(d(2025, 8, 4));
    c.treatments.push(rt);
    c.medications.push(med("leuprolide 22.5 mg every 3 months", d(2025, 4, 1)));
    note(
        &mut c,
        Specialty::Radonc,
        doc(
            d(2025, 7, 28),
            "On-treatment visit",
            "Urinary frequency grade 1. Started tamsulosin 0.4 mg nightly; reassess next week.",
        ),
    );
    c.eligibility_facts.ecog = Some(1);
    c
}

/// Breast follow-up on letrozole.
fn p007() -> PatientChart {
    let mut c = person("P007", "Helen Ortiz", d(1955, 12, 12), Sex::Female);
    c.diagnoses.push(dx(
        "Right breast",
        d(2023, 2, 14),
        stage(TStage::T2, NStage::N0, MStage::M0),
        "invasive lobular carcinoma",
    ));
    let mut rt = course("radiation", "Whole breast radiation", "right breast", d(2023, 5, 1));
    rt.end_date = Some(d(2023, 5, 26));
    rt.dose_prescribed_gy = Some(40.05);
    rt.dose_delivered_gy = Some(40.05);
    rt.fractions_prescribed = Some(15);
    rt.fractions_delivered = Some(15);
    c.treatments.push(rt);
    c.medications.push(med("letrozole 2.5 mg daily", d(2023, 6, 15)));
    c.radiology_reports.push(doc(
        d(2025, 6, 30),
        "Bilateral mammogram",
        "Post-treatment changes in the right breast. BI-RADS 2.",
    ));
    c
}

/// Oropharynx consult.
fn p008() -> PatientChart {
    let mut c = person("P008", "Victor Lang", d(1964, 1, 17), Sex::Male);
    c.diagnoses.push(dx(
        "Oropharynx",
        d(2025, 7, 9),
        stage(TStage::T2, NStage::N1, MStage::M0),
        "squamous cell carcinoma, p16 positive",
    ));
    c.pathology_reports.push(doc(
        d(2025, 7, 9),
        "Base of tongue biopsy",
        "Invasive squamous cell carcinoma, nonkeratinizing, p16 positive.",
    ));
    c.radiology_reports.push(doc(
        d(2025, 7, 18),
        "PET/CT",
        "Hypermetabolic left base of tongue primary with a single ipsilateral level II node.",
    ));
    note(
        &mut c,
        Specialty::Ent,
        doc(
            d(2025, 7, 22),
            "ENT consultation",
            "Transoral surgery versus definitive chemoradiation discussed; tumor board favors chemoradiation.",
        ),
    );
    c.eligibility_facts.biomarkers.insert("p16".into(), "positive".into());
    c.eligibility_facts.ecog = Some(0);
    c.eligibility_facts.prior_radiation.push(PriorRadiation {
        dose_gy: 20.0,
        year: 1998,
        site: Some("left shoulder".into()),
    });
    c
}

/// Lung cancer on concurrent chemoradiation, fraction 10 of 30.
fn p009() -> PatientChart {
    let mut c = person("P009", "George Nakamura", d(1959, 8, 1), Sex::Male);
    c.diagnoses.push(dx(
        "Lung",
        d(2025, 5, 30),
        stage(TStage::T3, NStage::N1, MStage::M0),
        "non-small cell carcinoma, squamous",
    ));
    let mut rt = course("radiation", "Chemoradiation to left lung and mediastinum", "left lung", d(2025, 7, 21));
    rt.dose_prescribed_gy = Some(60.0);
    rt.dose_delivered_gy = Some(20.0);
    rt.fractions_prescribed = Some(30);
    rt.fractions_delivered = Some(10);
    rt.most_recent_treatment_date = Some(d(2025, 8, 1));
    rt.next_treatment_date = Some(d(2025, 8, 4));
    c.treatments.push(rt);
    c.medications.push(med("carboplatin and paclitaxel weekly", d(2025, 7, 21)));
    c.labs.push(lab("Hemoglobin", 11.2, "g/dL", d(2025, 7, 31)));
    c.eligibility_facts.ecog = Some(1);
    c.eligibility_facts.prior_systemic_therapies.push("carboplatin".into());
    c
}

/// Demographics only.
fn p010() -> PatientChart {
    person("P010", "Anne Doe", d(1980, 10, 10), Sex::Female)
}

fn appointments() -> Vec<Appointment> {
    let cdt = FixedOffset::west_opt(5 * 3600).unwrap();
    [
        ("A1", "dr-A", "P001", 8, 0, "Consult"),
        ("A2", "dr-A", "P002", 9, 0, "Follow-up"),
        ("A3", "dr-A", "P003", 10, 0, "Follow-up"),
        ("A4", "dr-A", "P004", 13, 0, "Sim"),
        ("B1", "dr-B", "P005", 8, 30, "New patient consult"),
        ("B2", "dr-B", "P006", 10, 30, "OTV management"),
        ("B3", "dr-B", "P007", 14, 0, "Follow-up"),
        ("C1", "dr-C", "P008", 9, 0, "Consult"),
        ("C2", "dr-C", "P009", 11, 0, "Treatment"),
        ("C3", "dr-C", "P010", 15, 0, "Follow-up"),
    ]
    .into_iter()
    .map(|(id, physician, patient, h, m, label)| Appointment {
        appointment_id: AppointmentId::new(id),
        physician_id: PhysicianId::new(physician),
        patient_id: patient.into(),
        start_time: cdt.with_ymd_and_hms(2025, 8, 4, h, m, 0).unwrap(),
        visit_kind: classify_visit_kind(label),
        raw_type_label: label.into(),
    })
    .collect()
}

pub fn smoke_charts() -> Vec<PatientChart> {
    vec![p001(), p002(), p003(), p004(), p005(), p006(), p007(), p008(), p009(), p010()]
}

pub fn smoke_cohort() -> CohortStore {
    CohortStore::new(physicians(), smoke_charts(), appointments()).expect("smoke cohort is consistent")
}

fn criterion(id: &str, description: &str, polarity: Polarity, predicate: CriterionPredicate) -> Criterion {
    Criterion {
        criterion_id: id.into(),
        description: description.into(),
        polarity,
        predicate,
        site: None,
    }
}

fn age(min: f64, max: f64) -> Criterion {
    criterion(
        "age",
        &format!("Age {min} to {max} years"),
        Polarity::Inclusion,
        CriterionPredicate::AgeRange {
            min_years: Some(min),
            max_years: Some(max),
        },
    )
}

fn psa(comparator: Comparator, value: f64) -> Criterion {
    criterion(
        "psa",
        &format!("PSA {} {value} ng/mL", comparator.symbol()),
        Polarity::Inclusion,
        CriterionPredicate::LabThreshold {
            analyte: "PSA".into(),
            comparator,
            value,
        },
    )
}

fn ecog(max: u8) -> Criterion {
    criterion(
        "ecog",
        &format!("ECOG performance status 0-{max}"),
        Polarity::Inclusion,
        CriterionPredicate::EcogMax { max },
    )
}

fn diagnosis(terms: &[&str]) -> Criterion {
    criterion(
        "diagnosis",
        &format!("Histologically confirmed {}", terms[0]),
        Polarity::Inclusion,
        CriterionPredicate::DiagnosisMatch {
            terms: terms.iter().map(|t| t.to_string()).collect(),
        },
    )
}

fn no_prior_radiation(site: &str) -> Criterion {
    criterion(
        "prior_rt",
        &format!("Exclusion: prior radiation to the {site}"),
        Polarity::Exclusion,
        CriterionPredicate::RequiresPriorTreatment {
            category: TreatmentCategory::Radiation,
            site: Some(site.into()),
            agent: None,
        },
    )
}

struct TrialDraft {
    n: u32,
    title: &'static str,
    status: OverallStatus,
    location: &'static str,
    conditions: &'static [&'static str],
    interventions: &'static [&'static str],
    ages: (f64, f64),
    sex: TrialSex,
    criteria: Vec<Criterion>,
}

impl TrialDraft {
    fn new(n: u32, title: &'static str, conditions: &'static [&'static str], interventions: &'static [&'static str]) -> Self {
        Self {
            n,
            title,
            status: OverallStatus::Recruiting,
            location: SMOKE_INSTITUTION,
            conditions,
            interventions,
            ages: (18.0, 99.0),
            sex: TrialSex::All,
            criteria: Vec::new(),
        }
    }

    fn record(self) -> TrialRecord {
        let id = format!("NCT{:08}", self.n);
        TrialRecord {
            nct_id: NctId::parse(&id).unwrap(),
            title: self.title.into(),
            overall_status: self.status,
            locations: vec![self.location.into()],
            conditions: self.conditions.iter().map(|s| s.to_string()).collect(),
            interventions: self.interventions.iter().map(|s| s.to_string()).collect(),
            min_age_years: Some(self.ages.0),
            max_age_years: Some(self.ages.1),
            sex: self.sex,
            criteria: self.criteria,
            url: format!("https://clinicaltrials.gov/study/{id}"),
        }
    }
}

const PROSTATE: &[&str] = &["Prostate Cancer"];
const BREAST: &[&str] = &["Breast Cancer"];
const HN: &[&str] = &["Head and Neck Squamous Cell Carcinoma", "Oropharynx Cancer"];
const LUNG: &[&str] = &["Non-small Cell Lung Cancer"];

/// The 20-trial registry. Exactly NCT00000001-3 are recruiting at the
/// institution, admit a 67-year-old man and list both prostate cancer and
/// proton therapy.
pub fn smoke_trials() -> Vec<TrialRecord> {
    let male = |mut s: TrialDraft| {
        s.sex = TrialSex::Male;
        s
    };
    let mut specs = Vec::new();

    let mut t = male(TrialDraft::new(1, "Hypofractionated Proton Therapy for Localized Prostate Cancer", PROSTATE, &["Proton Therapy"]));
    t.ages = (18.0, 85.0);
    t.criteria = vec![
        age(18.0, 85.0),
        diagnosis(&["prostate"]),
        psa(Comparator::Lt, 20.0),
        no_prior_radiation("pelvis"),
        ecog(2),
    ];
    specs.push(t);

    let mut t = male(TrialDraft::new(
        2,
        "Proton Versus Photon Radiation Therapy for Prostate Adenocarcinoma",
        &["Prostate Adenocarcinoma", "Prostate Cancer"],
        &["Proton Therapy", "Radiation Therapy"],
    ));
    t.criteria = vec![diagnosis(&["prostate"]), ecog(1)];
    specs.push(t);

    let mut t = male(TrialDraft::new(
        3,
        "Short-course Androgen Deprivation With Proton Therapy in Intermediate-risk Prostate Cancer",
        PROSTATE,
        &["Proton Therapy", "Androgen Deprivation Therapy"],
    ));
    t.ages = (40.0, 80.0);
    t.criteria = vec![age(40.0, 80.0), psa(Comparator::Le, 10.0), ecog(1)];
    specs.push(t);

    let mut t = male(TrialDraft::new(4, "Proton Therapy for Prostate Cancer at a Partner Site", PROSTATE, &["Proton Therapy"]));
    t.location = "Northfield Cancer Center";
    specs.push(t);

    let mut t = male(TrialDraft::new(5, "Proton Boost for High-risk Prostate Cancer", PROSTATE, &["Proton Therapy"]));
    t.status = OverallStatus::ActiveNotRecruiting;
    specs.push(t);

    let mut t = male(TrialDraft::new(6, "Proton Therapy in Younger Men With Prostate Cancer", PROSTATE, &["Proton Therapy"]));
    t.ages = (18.0, 65.0);
    specs.push(t);

    let mut t = male(TrialDraft::new(
        7,
        "Radiation Therapy With or Without Androgen Deprivation for Prostate Cancer",
        PROSTATE,
        &["Radiation Therapy", "Androgen Deprivation Therapy"],
    ));
    t.criteria = vec![diagnosis(&["prostate"]), ecog(2)];
    specs.push(t);

    let mut t = male(TrialDraft::new(8, "HDR Brachytherapy Boost for Prostate Cancer", PROSTATE, &["Brachytherapy"]));
    t.criteria = vec![psa(Comparator::Gt, 10.0)];
    specs.push(t);

    let mut t = male(TrialDraft::new(
        9,
        "Five-fraction SBRT for Prostate Cancer",
        PROSTATE,
        &["Stereotactic Body Radiation Therapy"],
    ));
    t.criteria = vec![diagnosis(&["prostate"]), no_prior_radiation("pelvis")];
    specs.push(t);

    let mut t = male(TrialDraft::new(10, "Salvage Radiation After Prostatectomy", PROSTATE, &["Prostatectomy", "Radiation Therapy"]));
    t.criteria = vec![criterion(
        "prior_surgery",
        "Prior radical prostatectomy",
        Polarity::Inclusion,
        CriterionPredicate::RequiresPriorTreatment {
            category: TreatmentCategory::Surgery,
            site: Some("prostate".into()),
            agent: None,
        },
    )];
    specs.push(t);

    let mut t = TrialDraft::new(11, "Partial Breast Irradiation After Lumpectomy", BREAST, &["Partial Breast Irradiation", "Radiation Therapy"]);
    t.sex = TrialSex::Female;
    t.ages = (50.0, 99.0);
    t.criteria = vec![age(50.0, 99.0), diagnosis(&["breast"]), ecog(2)];
    specs.push(t);

    let mut t = TrialDraft::new(12, "Aromatase Inhibitors With Radiation in Early Breast Cancer", BREAST, &["Aromatase Inhibitors", "Radiation Therapy"]);
    t.sex = TrialSex::Female;
    t.criteria = vec![
        diagnosis(&["breast"]),
        criterion("free_text", "Hormone receptor positive disease confirmed centrally", Polarity::Inclusion, CriterionPredicate::FreeText),
    ];
    specs.push(t);

    let mut t = TrialDraft::new(13, "Proton Therapy for Left-sided Breast Cancer", BREAST, &["Proton Therapy"]);
    t.status = OverallStatus::Completed;
    specs.push(t);

    let mut t = TrialDraft::new(14, "De-escalated Chemoradiation for HPV-associated Oropharynx Cancer", HN, &["Chemoradiation", "De-escalation"]);
    t.criteria = vec![diagnosis(&["oropharynx", "head and neck"]), no_prior_radiation("head and neck"), ecog(1)];
    specs.push(t);

    let mut t = TrialDraft::new(15, "Proton Versus IMRT for Head and Neck Cancer", HN, &["Proton Therapy", "Radiation Therapy"]);
    t.criteria = vec![diagnosis(&["oropharynx", "head and neck"])];
    specs.push(t);

    let mut t = TrialDraft::new(16, "Consolidative Immunotherapy After Chemoradiation for Stage III Lung Cancer", LUNG, &["Durvalumab", "Chemoradiation"]);
    t.criteria = vec![
        diagnosis(&["lung"]),
        criterion(
            "hgb",
            "Hemoglobin >= 9 g/dL",
            Polarity::Inclusion,
            CriterionPredicate::LabThreshold {
                analyte: "Hemoglobin".into(),
                comparator: Comparator::Ge,
                value: 9.0,
            },
        ),
    ];
    specs.push(t);

    let mut t = TrialDraft::new(17, "SBRT for Early-stage Lung Cancer in Older Adults", LUNG, &["Stereotactic Body Radiation Therapy"]);
    t.ages = (70.0, 99.0);
    specs.push(t);

    specs.push(TrialDraft::new(18, "Chemoradiation for Locally Advanced Pancreatic Cancer", &["Pancreatic Cancer"], &["Chemoradiation"]));
    specs.push(TrialDraft::new(19, "Short-course Radiation for Rectal Cancer", &["Rectal Cancer"], &["Radiation Therapy"]));
    specs.push(TrialDraft::new(20, "Proton Reirradiation for Recurrent Glioblastoma", &["Glioblastoma"], &["Proton Therapy"]));

    specs.into_iter().map(TrialDraft::record).collect()
}

/// Writes the cohort to `root` and the registry to `root/registry/trials.json`.
pub fn write_smoke(root: &Path) -> Result<(), EhrError> {
    smoke_cohort().write_to(root)?;
    let registry = root.join("registry");
    fs::create_dir_all(&registry).map_err(|e| EhrError::Io {
        path: registry.clone(),
        source: e,
    })?;
    let path = registry.join("trials.json");
    let mut text = serde_json::to_string_pretty(&smoke_trials()).expect("trial records serialize");
    text.push('\n');
    fs::write(&path, text).map_err(|e| EhrError::Io { path, source: e })
}

/// Appointment counts per physician, for quick checks.
pub fn smoke_counts() -> BTreeMap<PhysicianId, usize> {
    let mut out = BTreeMap::new();
    for a in appointments() {
        *out.entry(a.physician_id).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{trial_satisfies, TrialQuery};

    #[test]
    fn smoke_cohort_shape() {
        let store = smoke_cohort();
        assert_eq!(store.patients().count(), 10);
        assert_eq!(store.schedule_count(), 3);
        let counts: Vec<usize> = smoke_counts().into_values().collect();
        assert_eq!(counts, vec![4, 3, 3]);
        let eligible = store
            .appointments()
            .filter(|a| crate::domain::is_trial_eligible_visit(a.visit_kind))
            .count();
        assert_eq!(eligible, 3);
    }

    #[test]
    fn three_prostate_proton_trials() {
        let query = TrialQuery {
            condition_terms: vec!["prostate cancer".into()],
            intervention_terms: vec!["proton therapy".into()],
            age_years: Some(67.0),
            sex: Some(Sex::Male),
            institution: SMOKE_INSTITUTION.into(),
        };
        let hits: Vec<String> = smoke_trials()
            .iter()
            .filter(|t| trial_satisfies(t, &query))
            .map(|t| t.nct_id.to_string())
            .collect();
        assert_eq!(hits, ["NCT00000001", "NCT00000002", "NCT00000003"]);
    }
}
