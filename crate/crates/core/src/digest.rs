//! Per-physician daily email: assembly, Markdown/HTML rendering, delivery
//! and archiving.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{LazyLock, Mutex};
use std::time::Duration;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::domain::{is_trial_eligible_visit, Appointment, PhysicianId, VisitKind};
use crate::ehr::PhysicianProfile;
use crate::parser::{AnalysisScenario, AnalysisSummary, SummaryPayload};

pub const SUMMARY_PLACEHOLDER: &str = "A summary could not be generated for this patient.";
pub const TRIALS_PLACEHOLDER: &str = "Clinical trial screening could not be completed for this patient.";

#[derive(Debug, thiserror::Error)]
pub enum DigestError {
    #[error("appointment {appointment} belongs to {found}, not {expected}")]
    PhysicianMismatch {
        appointment: String,
        expected: PhysicianId,
        found: PhysicianId,
    },
    #[error("appointment {appointment} is on {found}, not {expected}")]
    DateMismatch {
        appointment: String,
        expected: NaiveDate,
        found: NaiveDate,
    },
    #[error("trials section attached to a {0} visit")]
    TrialsNotAllowed(&'static str),
    #[error("a digest needs at least one entry")]
    Empty,
    #[error("invalid indicator table: {0}")]
    Indicators(String),
}

/// Visit-kind glyphs shown at the start of each appointment block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatorMap(BTreeMap<VisitKind, String>);

static BUNDLED_INDICATORS: LazyLock<IndicatorMap> = LazyLock::new(|| {
    IndicatorMap::from_json(include_str!("../config/indicators.json")).expect("bundled indicators are valid")
});

impl IndicatorMap {
    pub fn from_json(json: &str) -> Result<Self, DigestError> {
        let map: BTreeMap<VisitKind, String> =
            serde_json::from_str(json).map_err(|e| DigestError::Indicators(e.to_string()))?;
        if let Some(kind) = VisitKind::ALL.iter().find(|k| !map.contains_key(k)) {
            return Err(DigestError::Indicators(format!("no glyph for {}", kind.as_str())));
        }
        Ok(Self(map))
    }

    pub fn bundled() -> &'static IndicatorMap {
        &BUNDLED_INDICATORS
    }

    pub fn glyph(&self, kind: VisitKind) -> &str {
        &self.0[&kind]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SummarySection {
    Generated { payload: SummaryPayload },
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrialsSection {
    Generated { analysis: AnalysisSummary },
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigestEntry {
    pub appointment: Appointment,
    pub patient_name: String,
    pub indicator: String,
    pub summary: SummarySection,
    pub trials: Option<TrialsSection>,
}

impl DigestEntry {
    pub fn new(
        appointment: Appointment,
        patient_name: impl Into<String>,
        indicators: &IndicatorMap,
        summary: SummarySection,
        trials: Option<TrialsSection>,
    ) -> Result<Self, DigestError> {
        if trials.is_some() && !is_trial_eligible_visit(appointment.visit_kind) {
            return Err(DigestError::TrialsNotAllowed(appointment.visit_kind.as_str()));
        }
        Ok(Self {
            indicator: indicators.glyph(appointment.visit_kind).to_string(),
            appointment,
            patient_name: patient_name.into(),
            summary,
            trials,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigestSettings {
    /// Heading, subject prefix and HTML title.
    pub title: String,
    pub feedback_url: String,
    pub contact: String,
}

impl Default for DigestSettings {
    fn default() -> Self {
        Self {
            title: "Morning Digest".into(),
            feedback_url: "https://example.org/digest/feedback".into(),
            contact: "the digest team (digest@example.org)".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigestDocument {
    pub physician: PhysicianProfile,
    pub run_date: NaiveDate,
    pub title: String,
    pub greeting: String,
    pub entries: Vec<DigestEntry>,
    pub closing: String,
    pub markdown_source: String,
    pub html_rendered: String,
}

impl DigestDocument {
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.markdown_source.as_bytes());
        hasher.update([0]);
        hasher.update(self.html_rendered.as_bytes());
        hex::encode(hasher.finalize())
    }

    pub fn subject(&self) -> String {
        format!("{} for {}", self.title, self.run_date.format("%A, %B %-d, %Y"))
    }
}

pub fn build_digest(
    physician: &PhysicianProfile,
    date: NaiveDate,
    mut entries: Vec<DigestEntry>,
    settings: &DigestSettings,
) -> Result<DigestDocument, DigestError> {
    if entries.is_empty() {
        return Err(DigestError::Empty);
    }
    for e in &entries {
        let a = &e.appointment;
        if a.physician_id != physician.id {
            return Err(DigestError::PhysicianMismatch {
                appointment: a.appointment_id.to_string(),
                expected: physician.id.clone(),
                found: a.physician_id.clone(),
            });
        }
        if a.local_date() != date {
            return Err(DigestError::DateMismatch {
                appointment: a.appointment_id.to_string(),
                expected: date,
                found: a.local_date(),
            });
        }
        if e.trials.is_some() && !is_trial_eligible_visit(a.visit_kind) {
            return Err(DigestError::TrialsNotAllowed(a.visit_kind.as_str()));
        }
    }
    entries.sort_by(|a, b| {
        (a.appointment.start_time, &a.appointment.appointment_id)
            .cmp(&(b.appointment.start_time, &b.appointment.appointment_id))
    });
    let count = entries.len();
    let greeting = format!(
        "Good morning, {}. Here is your {} for {}: {} appointment{} today.",
        physician.display_name,
        settings.title.to_lowercase(),
        date.format("%A, %B %-d, %Y"),
        count,
        if count == 1 { "" } else { "s" }
    );
    let closing = format!(
        "Questions or problems? Contact {}. Tell us how we are doing: [share feedback]({}).",
        settings.contact, settings.feedback_url
    );
    let mut doc = DigestDocument {
        physician: physician.clone(),
        run_date: date,
        title: settings.title.clone(),
        greeting,
        entries,
        closing,
        markdown_source: String::new(),
        html_rendered: String::new(),
    };
    doc.markdown_source = render_markdown(&doc);
    doc.html_rendered = render_html(&doc.markdown_source, &doc.title);
    Ok(doc)
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn render_trials(out: &mut String, trials: &TrialsSection) {
    let analysis = match trials {
        TrialsSection::Failed => {
            let _ = writeln!(out, "{TRIALS_PLACEHOLDER}");
            return;
        }
        TrialsSection::Generated { analysis } => analysis,
    };
    let name = &analysis.patient_display_name;
    match analysis.scenario {
        AnalysisScenario::TrialsFound => {
            let _ = writeln!(out, "{name} is potentially eligible to participate in the following clinical trials:");
            let _ = writeln!(out);
            for (i, e) in analysis.entries.iter().enumerate() {
                let _ = writeln!(out, "{}. **{}**: {}", i + 1, e.nct_id, one_line(&e.title));
                let _ = writeln!(out, "   - Met: {}", one_line(&e.met_summary));
                let _ = writeln!(out, "   - Unknown: {}", one_line(&e.unknown_summary));
                let _ = writeln!(out, "   - Not applicable: {}", one_line(&e.not_applicable_summary));
                let _ = writeln!(out, "   - <{}>", e.url.trim());
            }
        }
        AnalysisScenario::NoneFound => {
            let _ = writeln!(out, "No relevant clinical trials were found for {name}.");
        }
        AnalysisScenario::DemographicsMissing => {
            let _ = writeln!(
                out,
                "Clinical trial eligibility could not be evaluated because the patient's age and sex could not be retrieved."
            );
        }
        AnalysisScenario::SearchError => {
            let _ = writeln!(out, "An error occurred when searching for clinical trials for {name}.");
        }
    }
}

/// Markdown source of the email. Pure over the digest contents.
pub fn render_markdown(digest: &DigestDocument) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {}", one_line(&digest.title));
    let _ = writeln!(out);
    let _ = writeln!(out, "{}", digest.greeting);
    for entry in &digest.entries {
        let a = &entry.appointment;
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "## {} {} {} ({})",
            entry.indicator,
            a.start_time.format("%H:%M"),
            one_line(&a.raw_type_label),
            a.visit_kind.as_str().replace('_', " ")
        );
        let _ = writeln!(out);
        let _ = writeln!(out, "**Patient:** {} ({})", one_line(&entry.patient_name), a.patient_id);
        let _ = writeln!(out);
        let summary = match &entry.summary {
            SummarySection::Generated { payload } => one_line(&payload.text),
            SummarySection::Failed => SUMMARY_PLACEHOLDER.to_string(),
        };
        let _ = writeln!(out, "**Summary:** {summary}");
        if let Some(trials) = &entry.trials {
            let _ = writeln!(out);
            let _ = writeln!(out, "### Clinical trials");
            let _ = writeln!(out);
            render_trials(&mut out, trials);
        }
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "---");
    let _ = writeln!(out);
    let _ = writeln!(out, "{}", digest.closing);
    out
}

pub fn render_html(markdown: &str, title: &str) -> String {
    let parser = pulldown_cmark::Parser::new(markdown);
    let mut body = String::new();
    pulldown_cmark::html::push_html(&mut body, parser);
    format!(
        "<!DOCTYPE html>\n<html>\n<head><meta charset=\"utf-8\"><title>{}</title></head>\n<body>\n{body}</body>\n</html>\n",
        title.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryReceipt {
    pub physician_id: PhysicianId,
    pub run_date: NaiveDate,
    pub transport: String,
    pub delivered_at: DateTime<Utc>,
    pub content_sha256: String,
    pub duplicate: bool,
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum DeliveryError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("mail submission failed: {0}")]
    Smtp(String),
    #[error("cannot build message: {0}")]
    Message(String),
}

impl DeliveryError {
    pub fn is_retryable(&self) -> bool {
        !matches!(self, DeliveryError::Message(_))
    }
}

pub trait Transport: Send + Sync {
    fn name(&self) -> &'static str;
    fn deliver(&self, digest: &DigestDocument) -> Result<DeliveryReceipt, DeliveryError>;
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DeliveryError + '_ {
    move |source| DeliveryError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `<root>/<date>/<physician_id>.md` and `.html` and appends a
/// receipt to `<root>/receipts.jsonl`.
pub struct OutboxTransport {
    root: PathBuf,
    lock: Mutex<()>,
}

impl OutboxTransport {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            lock: Mutex::new(()),
        }
    }

    pub fn receipts_path(&self) -> PathBuf {
        self.root.join("receipts.jsonl")
    }

    pub fn receipts(&self) -> Result<Vec<DeliveryReceipt>, DeliveryError> {
        let path = self.receipts_path();
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let mut out = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(io_err(&path))?;
            if let Ok(r) = serde_json::from_str(&line) {
                out.push(r);
            }
        }
        Ok(out)
    }
}

impl Transport for OutboxTransport {
    fn name(&self) -> &'static str {
        "outbox"
    }

    fn deliver(&self, digest: &DigestDocument) -> Result<DeliveryReceipt, DeliveryError> {
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        let hash = digest.content_hash();
        let duplicate = self.receipts()?.iter().any(|r| {
            r.physician_id == digest.physician.id && r.run_date == digest.run_date && r.content_sha256 == hash
        });
        let dir = self.root.join(digest.run_date.to_string());
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let md = dir.join(format!("{}.md", digest.physician.id));
        let html = dir.join(format!("{}.html", digest.physician.id));
        fs::write(&md, &digest.markdown_source).map_err(io_err(&md))?;
        fs::write(&html, &digest.html_rendered).map_err(io_err(&html))?;
        let receipt = DeliveryReceipt {
            physician_id: digest.physician.id.clone(),
            run_date: digest.run_date,
            transport: self.name().into(),
            delivered_at: Utc::now(),
            content_sha256: hash,
            duplicate,
            outcome: "written".into(),
            location: Some(md.display().to_string()),
        };
        let path = self.receipts_path();
        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        let line = serde_json::to_string(&receipt).expect("receipt serializes");
        writeln!(log, "{line}").map_err(io_err(&path))?;
        Ok(receipt)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmtpSettings {
    pub host: String,
    #[serde(default = "default_smtp_port")]
    pub port: u16,
    pub from_address: String,
    #[serde(default = "default_smtp_timeout")]
    pub timeout_secs: u64,
}

fn default_smtp_port() -> u16 {
    25
}

fn default_smtp_timeout() -> u64 {
    30
}

/// Submits one multipart message (plain-text Markdown plus HTML) over
/// unauthenticated SMTP to the institutional relay.
pub struct SmtpTransport {
    settings: SmtpSettings,
    sent: Mutex<BTreeSet<(PhysicianId, NaiveDate, String)>>,
}

impl SmtpTransport {
    pub fn new(settings: SmtpSettings) -> Self {
        Self {
            settings,
            sent: Mutex::new(BTreeSet::new()),
        }
    }
}

impl Transport for SmtpTransport {
    fn name(&self) -> &'static str {
        "smtp"
    }

    fn deliver(&self, digest: &DigestDocument) -> Result<DeliveryReceipt, DeliveryError> {
        use lettre::message::{Mailbox, MultiPart};
        use lettre::Transport as _;

        let msg_err = |e: &dyn std::fmt::Display| DeliveryError::Message(e.to_string());
        let from: Mailbox = self.settings.from_address.parse().map_err(|e| msg_err(&e))?;
        let to: Mailbox = digest.physician.email.parse().map_err(|e| msg_err(&e))?;
        let message = lettre::Message::builder()
            .from(from)
            .to(to)
            .subject(digest.subject())
            .multipart(MultiPart::alternative_plain_html(
                digest.markdown_source.clone(),
                digest.html_rendered.clone(),
            ))
            .map_err(|e| msg_err(&e))?;
        let mailer = lettre::SmtpTransport::builder_dangerous(&self.settings.host)
            .port(self.settings.port)
            .timeout(Some(Duration::from_secs(self.settings.timeout_secs)))
            .build();
        let response = mailer
            .send(&message)
            .map_err(|e| DeliveryError::Smtp(e.to_string()))?;
        let hash = digest.content_hash();
        let duplicate = !self
            .sent
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert((digest.physician.id.clone(), digest.run_date, hash.clone()));
        Ok(DeliveryReceipt {
            physician_id: digest.physician.id.clone(),
            run_date: digest.run_date,
            transport: self.name().into(),
            delivered_at: Utc::now(),
            content_sha256: hash,
            duplicate,
            outcome: format!("accepted ({})", response.code()),
            location: None,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("digest for {physician_id} already archived under run {run_id}")]
    Conflict {
        run_id: String,
        physician_id: PhysicianId,
    },
    #[error("archive storage failure at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchiveRecord {
    pub run_id: String,
    pub physician_id: PhysicianId,
    pub run_date: NaiveDate,
    pub path: String,
    pub content_sha256: String,
    pub dry_run: bool,
}

pub const DRY_RUN_MARKER: &str = "DRY_RUN";

/// Write-once store under `<root>/<run_id>/` with an append-only
/// `<root>/index.jsonl`.
pub struct Archive {
    root: PathBuf,
    index_lock: Mutex<()>,
}

impl Archive {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            index_lock: Mutex::new(()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn index_path(&self) -> PathBuf {
        self.root.join("index.jsonl")
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    pub fn archive(
        &self,
        digest: &DigestDocument,
        run_id: &str,
        dry_run: bool,
    ) -> Result<PathBuf, ArchiveError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ArchiveError::Io { path, source }
        };
        let dir = self.run_dir(run_id);
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        if dry_run {
            let marker = dir.join(DRY_RUN_MARKER);
            fs::write(&marker, "dry run: digests were built but not delivered\n").map_err(io(&marker))?;
        }
        let md = dir.join(format!("{}.md", digest.physician.id));
        let mut file = match OpenOptions::new().write(true).create_new(true).open(&md) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(ArchiveError::Conflict {
                    run_id: run_id.to_string(),
                    physician_id: digest.physician.id.clone(),
                })
            }
            Err(e) => return Err(io(&md)(e)),
        };
        file.write_all(digest.markdown_source.as_bytes()).map_err(io(&md))?;
        let html = dir.join(format!("{}.html", digest.physician.id));
        fs::write(&html, &digest.html_rendered).map_err(io(&html))?;

        let record = ArchiveRecord {
            run_id: run_id.to_string(),
            physician_id: digest.physician.id.clone(),
            run_date: digest.run_date,
            path: md.display().to_string(),
            content_sha256: digest.content_hash(),
            dry_run,
        };
        let _guard = self.index_lock.lock().unwrap_or_else(|e| e.into_inner());
        let index = self.index_path();
        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&index)
            .map_err(io(&index))?;
        writeln!(log, "{}", serde_json::to_string(&record).expect("record serializes")).map_err(io(&index))?;
        Ok(md)
    }

    pub fn index(&self) -> Result<Vec<ArchiveRecord>, ArchiveError> {
        let path = self.index_path();
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(source) => return Err(ArchiveError::Io { path, source }),
        };
        Ok(text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect())
    }
}
