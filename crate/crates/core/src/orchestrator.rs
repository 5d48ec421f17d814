//! Daily run coordination: physician fan-out, per-appointment summary and
//! trial tasks with retries, digest delivery and archiving, the JSON-lines
//! run log, and the 05:00 service loop.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use chrono::{DateTime, Duration, LocalResult, NaiveDate, NaiveTime, TimeZone, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use crate::agent::{
    render_prompt, run_agent, AgentBackend, AgentError, AgentTranscript, BackendLimits,
    ChatCompletionBackend, ChatCompletionConfig, ClinicalTools, FaultyTools, RuleBackend,
    TemplateId, ToolFault, ToolName, BINDING_PATIENT_ID, BINDING_PATIENT_NAME,
};
use crate::digest::{
    build_digest, Archive, DeliveryError, DigestDocument, DigestEntry,
    DigestSettings, IndicatorMap, OutboxTransport, SmtpSettings, SmtpTransport, SummarySection,
    Transport, TrialsSection,
};
use crate::domain::{is_trial_eligible_visit, Appointment, AppointmentId, PatientId, PhysicianId};
use crate::ehr::{load_cohort, CohortStore, EhrError};
use crate::parser::{extract_analysis_summary, extract_json_summary, AnalysisSummary, ParseError, SummaryPayload};
use crate::registry::{FileRegistry, HttpRegistry, HttpRegistryConfig, TrialRegistry};

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cohort failed to load: {0}")]
    Cohort(#[from] EhrError),
    #[error("unknown physician {0}")]
    UnknownPhysician(PhysicianId),
    #[error("run log {path}: {source}")]
    Log {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RegistryConfig {
    File { path: PathBuf },
    Http(HttpRegistryConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransportConfig {
    Outbox,
    Smtp(SmtpSettings),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Rule,
    ChatCompletion(ChatCompletionConfig),
}

fn default_institution() -> String {
    "Mayo Clinic".into()
}
fn default_trigger() -> NaiveTime {
    NaiveTime::from_hms_opt(5, 0, 0).expect("valid time")
}
fn default_timezone() -> String {
    "America/Chicago".into()
}
fn default_retries() -> u32 {
    3
}
fn default_parallelism() -> usize {
    4
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_transport() -> TransportConfig {
    TransportConfig::Outbox
}
fn default_backend() -> BackendConfig {
    BackendConfig::Rule
}

/// Run settings, usually read from a TOML file. Relative paths resolve
/// against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub cohort_path: PathBuf,
    pub registry: RegistryConfig,
    #[serde(default = "default_institution")]
    pub institution_name: String,
    #[serde(default = "default_trigger")]
    pub trigger_time: NaiveTime,
    #[serde(default = "default_timezone")]
    pub timezone: String,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Concurrent physician jobs.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Concurrent appointment tasks within one physician job.
    #[serde(default = "default_parallelism")]
    pub appointment_parallelism: usize,
    #[serde(default = "default_transport")]
    pub transport: TransportConfig,
    #[serde(default = "default_backend")]
    pub backend: BackendConfig,
    #[serde(default)]
    pub limits: BackendLimits,
    /// Outbox, archive and logs live under this root unless overridden.
    #[serde(default = "default_output")]
    pub output_root: PathBuf,
    #[serde(default)]
    pub archive_root: Option<PathBuf>,
    #[serde(default)]
    pub log_root: Option<PathBuf>,
    #[serde(default)]
    pub run_date: Option<NaiveDate>,
    #[serde(default)]
    pub digest: DigestSettings,
}

impl RunConfig {
    /// A config for a cohort directory and registry file with defaults
    /// everywhere else.
    pub fn for_paths(cohort: impl Into<PathBuf>, registry: impl Into<PathBuf>, output_root: impl Into<PathBuf>) -> Self {
        Self {
            cohort_path: cohort.into(),
            registry: RegistryConfig::File { path: registry.into() },
            institution_name: default_institution(),
            trigger_time: default_trigger(),
            timezone: default_timezone(),
            max_retries: default_retries(),
            parallelism: default_parallelism(),
            appointment_parallelism: default_parallelism(),
            transport: TransportConfig::Outbox,
            backend: BackendConfig::Rule,
            limits: BackendLimits::default(),
            output_root: output_root.into(),
            archive_root: None,
            log_root: None,
            run_date: None,
            digest: DigestSettings::default(),
        }
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, OrchestratorError> {
        let mut config: RunConfig =
            toml::from_str(text).map_err(|e| OrchestratorError::Config(e.to_string()))?;
        config.resolve_paths(base_dir);
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, OrchestratorError> {
        let text = fs::read_to_string(path)
            .map_err(|e| OrchestratorError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.cohort_path);
        fix(&mut self.output_root);
        if let RegistryConfig::File { path } = &mut self.registry {
            fix(path);
        }
        if let Some(p) = &mut self.archive_root {
            fix(p);
        }
        if let Some(p) = &mut self.log_root {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.parallelism == 0 || self.appointment_parallelism == 0 {
            return Err(OrchestratorError::Config("parallelism must be at least 1".into()));
        }
        if self.limits.max_steps == 0 || self.limits.max_tool_calls_per_step == 0 {
            return Err(OrchestratorError::Config("agent limits must be positive".into()));
        }
        self.tz()?;
        Ok(())
    }

    pub fn tz(&self) -> Result<Tz, OrchestratorError> {
        self.timezone
            .parse()
            .map_err(|_| OrchestratorError::Config(format!("unknown time zone {:?}", self.timezone)))
    }

    pub fn outbox_root(&self) -> PathBuf {
        self.output_root.join("outbox")
    }

    pub fn archive_dir(&self) -> PathBuf {
        self.archive_root.clone().unwrap_or_else(|| self.output_root.join("archive"))
    }

    pub fn log_dir(&self) -> PathBuf {
        self.log_root.clone().unwrap_or_else(|| self.output_root.join("logs"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Summary,
    Trials,
    Delivery,
}

/// Makes the first `failing_attempts` attempts of one task fail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedFailure {
    pub patient_id: PatientId,
    pub task: TaskKind,
    pub failing_attempts: u32,
}

/// Faults injected into a run, for drills and tests.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultPlan {
    #[serde(default)]
    pub tool_faults: Vec<ToolFault>,
    #[serde(default)]
    pub task_failures: Vec<ScriptedFailure>,
    /// Failing delivery attempts per physician.
    #[serde(default)]
    pub delivery_failures: BTreeMap<PhysicianId, u32>,
}

impl FaultPlan {
    pub fn registry_down() -> Self {
        Self {
            tool_faults: vec![ToolFault {
                tools: vec![ToolName::GetListOfClinicalTrials, ToolName::GetTrialDetails],
                patient_id: None,
            }],
            ..Self::default()
        }
    }

    pub fn unreadable_chart(patient: impl Into<PatientId>) -> Self {
        Self {
            tool_faults: vec![ToolFault {
                tools: ToolName::ALL.into_iter().filter(|t| t.is_ehr()).collect(),
                patient_id: Some(patient.into()),
            }],
            ..Self::default()
        }
    }

    fn task_fails(&self, patient: &PatientId, task: TaskKind, attempt: u32) -> bool {
        self.task_failures
            .iter()
            .any(|f| &f.patient_id == patient && f.task == task && attempt <= f.failing_attempts)
    }
}

#[derive(Debug)]
pub struct RetryOutcome<T, E> {
    pub result: Result<T, E>,
    pub attempts: u32,
}

/// Runs `task` once plus up to `max_retries` more times until it succeeds.
/// The closure receives the 1-based attempt number.
pub fn with_retry<T, E>(max_retries: u32, mut task: impl FnMut(u32) -> Result<T, E>) -> RetryOutcome<T, E> {
    let mut attempt = 1;
    loop {
        match task(attempt) {
            Ok(v) => {
                return RetryOutcome {
                    result: Ok(v),
                    attempts: attempt,
                }
            }
            Err(e) if attempt > max_retries => {
                return RetryOutcome {
                    result: Err(e),
                    attempts: attempt,
                }
            }
            Err(_) => attempt += 1,
        }
    }
}

/// Maps `f` over `items` on at most `workers` threads, keeping input order.
pub fn bounded_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1).min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(i) else { break };
                let result = f(item);
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .unwrap_or_else(|e| e.into_inner())
                .expect("every item processed")
        })
        .collect()
}

/// Tracks how many physician jobs run at once.
#[derive(Debug, Default)]
pub struct ConcurrencyGauge {
    current: AtomicUsize,
    peak: AtomicUsize,
}

pub struct GaugeGuard<'a>(&'a ConcurrencyGauge);

impl ConcurrencyGauge {
    pub fn enter(&self) -> GaugeGuard<'_> {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        GaugeGuard(self)
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

impl Drop for GaugeGuard<'_> {
    fn drop(&mut self) {
        self.0.current.fetch_sub(1, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub run_id: String,
    pub timestamp: DateTime<Utc>,
    pub physician_id: Option<PhysicianId>,
    pub patient_id: Option<PatientId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appointment_id: Option<AppointmentId>,
    pub task: Option<TaskKind>,
    pub attempt: Option<u32>,
    pub stage: String,
    pub duration_ms: u64,
    pub outcome: String,
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<AgentTranscript>,
}

impl LogEvent {
    fn new(run_id: &str, stage: &str, outcome: &str) -> Self {
        Self {
            run_id: run_id.to_string(),
            timestamp: Utc::now(),
            physician_id: None,
            patient_id: None,
            appointment_id: None,
            task: None,
            attempt: None,
            stage: stage.to_string(),
            duration_ms: 0,
            outcome: outcome.to_string(),
            error: None,
            transcript: None,
        }
    }

    fn for_appointment(mut self, a: &Appointment) -> Self {
        self.physician_id = Some(a.physician_id.clone());
        self.patient_id = Some(a.patient_id.clone());
        self.appointment_id = Some(a.appointment_id.clone());
        self
    }
}

/// Serialized JSON-lines sink.
pub struct RunLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl RunLog {
    pub fn create(path: PathBuf) -> Result<Self, OrchestratorError> {
        let err = |source| OrchestratorError::Log {
            path: path.clone(),
            source,
        };
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(err)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(err)?;
        Ok(Self {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write(&self, event: &LogEvent) {
        let line = serde_json::to_string(event).expect("log event serializes");
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = writeln!(file, "{line}") {
            tracing::error!(path = %self.path.display(), "cannot append to run log: {e}");
        }
    }
}

pub fn read_log(path: &Path) -> std::io::Result<Vec<LogEvent>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskOutcome {
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: TaskKind,
    pub physician_id: PhysicianId,
    pub patient_id: Option<PatientId>,
    pub appointment_id: Option<AppointmentId>,
    pub attempts: u32,
    pub duration_ms: u64,
    pub outcome: TaskOutcome,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PhysicianStatus {
    Delivered,
    DryRun,
    /// No appointments on the run date; no email is sent.
    Skipped,
    DeliveryFailed { error: String },
    DigestFailed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicianOutcome {
    pub physician_id: PhysicianId,
    pub status: PhysicianStatus,
    pub appointments: usize,
    pub archive_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub archive_error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTotals {
    pub physicians: usize,
    pub physicians_ok: usize,
    pub physicians_skipped: usize,
    pub appointments: usize,
    pub summary_tasks: usize,
    pub trial_tasks: usize,
    pub failed_tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub run_date: NaiveDate,
    pub dry_run: bool,
    pub physicians: Vec<PhysicianOutcome>,
    pub tasks: Vec<TaskRecord>,
    pub totals: RunTotals,
    pub log_path: PathBuf,
}

impl RunReport {
    pub fn is_clean(&self) -> bool {
        self.totals.failed_tasks == 0
            && self.physicians.iter().all(|p| {
                matches!(
                    p.status,
                    PhysicianStatus::Delivered | PhysicianStatus::DryRun | PhysicianStatus::Skipped
                ) && p.archive_error.is_none()
            })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub physician: Option<PhysicianId>,
    pub dry_run: bool,
}

/// Everything a run needs, loaded once from a config.
pub struct RunEnvironment {
    pub config: RunConfig,
    pub store: CohortStore,
    pub registry: Box<dyn TrialRegistry>,
    pub backend: Box<dyn AgentBackend>,
    pub transport: Box<dyn Transport>,
    pub archive: Archive,
    pub indicators: IndicatorMap,
    pub faults: FaultPlan,
    pub gauge: ConcurrencyGauge,
}

impl RunEnvironment {
    pub fn from_config(config: RunConfig) -> Result<Self, OrchestratorError> {
        config.validate()?;
        let store = load_cohort(&config.cohort_path)?;
        let registry: Box<dyn TrialRegistry> = match &config.registry {
            RegistryConfig::File { path } => Box::new(FileRegistry::open(path)),
            RegistryConfig::Http(http) => Box::new(
                HttpRegistry::new(http.clone()).map_err(|e| OrchestratorError::Config(e.to_string()))?,
            ),
        };
        let backend: Box<dyn AgentBackend> = match &config.backend {
            BackendConfig::Rule => Box::new(RuleBackend::default()),
            BackendConfig::ChatCompletion(c) => Box::new(
                ChatCompletionBackend::new(c.clone()).map_err(|e| OrchestratorError::Config(e.to_string()))?,
            ),
        };
        let transport: Box<dyn Transport> = match &config.transport {
            TransportConfig::Outbox => Box::new(OutboxTransport::new(config.outbox_root())),
            TransportConfig::Smtp(s) => Box::new(SmtpTransport::new(s.clone())),
        };
        Ok(Self {
            archive: Archive::new(config.archive_dir()),
            config,
            store,
            registry,
            backend,
            transport,
            indicators: IndicatorMap::bundled().clone(),
            faults: FaultPlan::default(),
            gauge: ConcurrencyGauge::default(),
        })
    }

    pub fn with_faults(mut self, faults: FaultPlan) -> Self {
        self.faults = faults;
        self
    }
}

#[derive(Debug, thiserror::Error)]
enum TaskError {
    #[error("injected failure on attempt {0}")]
    Injected(u32),
    #[error(transparent)]
    Prompt(#[from] AgentError),
    #[error("agent aborted: {0}")]
    Aborted(String),
    #[error("agent ended without a <DONE> signal")]
    NoDone,
    #[error("patient chart unavailable: {0}")]
    ChartUnavailable(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

fn new_run_id(date: NaiveDate) -> String {
    let id = uuid::Uuid::new_v4().simple().to_string();
    format!("{}-{}", date.format("%Y%m%d"), &id[..12])
}

fn elapsed_ms(start: Instant) -> u64 {
    u64::try_from(start.elapsed().as_millis()).unwrap_or(u64::MAX)
}

struct AppointmentResult {
    entry: Option<DigestEntry>,
    records: Vec<TaskRecord>,
}

struct Runner<'a> {
    env: &'a RunEnvironment,
    run_id: String,
    date: NaiveDate,
    log: RunLog,
    options: RunOptions,
}

/// Generates, delivers and archives every physician's digest for `date`.
/// Task failures are contained; only a config or cohort problem fails the run.
pub fn run_daily(env: &RunEnvironment, date: NaiveDate, options: &RunOptions) -> Result<RunReport, OrchestratorError> {
    let run_id = new_run_id(date);
    let log = RunLog::create(env.config.log_dir().join(format!("{run_id}.jsonl")))?;
    let mut physicians = env.store.list_physicians(date);
    if let Some(only) = &options.physician {
        env.store.physician(only).map_err(|_| OrchestratorError::UnknownPhysician(only.clone()))?;
        physicians.retain(|p| p == only);
    }
    let runner = Runner {
        env,
        run_id,
        date,
        log,
        options: options.clone(),
    };
    runner.log.write(&LogEvent::new(&runner.run_id, "run_start", "started"));
    let began = Instant::now();

    let results = bounded_map(&physicians, env.config.parallelism, |p| runner.physician_job(p));
    let mut outcomes = Vec::new();
    let mut tasks = Vec::new();
    for (outcome, records) in results {
        outcomes.push(outcome);
        tasks.extend(records);
    }
    let totals = RunTotals {
        physicians: outcomes.len(),
        physicians_ok: outcomes
            .iter()
            .filter(|o| matches!(o.status, PhysicianStatus::Delivered | PhysicianStatus::DryRun))
            .count(),
        physicians_skipped: outcomes.iter().filter(|o| o.status == PhysicianStatus::Skipped).count(),
        appointments: outcomes.iter().map(|o| o.appointments).sum(),
        summary_tasks: tasks.iter().filter(|t| t.task == TaskKind::Summary).count(),
        trial_tasks: tasks.iter().filter(|t| t.task == TaskKind::Trials).count(),
        failed_tasks: tasks.iter().filter(|t| t.outcome == TaskOutcome::Failed).count(),
    };
    let mut end = LogEvent::new(&runner.run_id, "run_end", "finished");
    end.duration_ms = elapsed_ms(began);
    runner.log.write(&end);
    Ok(RunReport {
        run_id: runner.run_id.clone(),
        run_date: date,
        dry_run: options.dry_run,
        physicians: outcomes,
        tasks,
        totals,
        log_path: runner.log.path().to_path_buf(),
    })
}

impl Runner<'_> {
    fn physician_job(&self, physician_id: &PhysicianId) -> (PhysicianOutcome, Vec<TaskRecord>) {
        let _active = self.env.gauge.enter();
        let outcome = |status, appointments| PhysicianOutcome {
            physician_id: physician_id.clone(),
            status,
            appointments,
            archive_path: None,
            archive_error: None,
        };
        let schedule = match self.env.store.get_schedule(physician_id, self.date) {
            Ok(s) => s,
            Err(e) => {
                return (
                    outcome(PhysicianStatus::DigestFailed { error: e.to_string() }, 0),
                    Vec::new(),
                )
            }
        };
        let mut skip = LogEvent::new(&self.run_id, "physician", "started");
        skip.physician_id = Some(physician_id.clone());
        if schedule.is_empty() {
            skip.outcome = "skipped_no_appointments".into();
            self.log.write(&skip);
            return (outcome(PhysicianStatus::Skipped, 0), Vec::new());
        }
        self.log.write(&skip);

        let results = bounded_map(&schedule, self.env.config.appointment_parallelism, |a| {
            self.appointment_job(a)
        });
        let mut records = Vec::new();
        let mut entries = Vec::new();
        for r in results {
            records.extend(r.records);
            entries.extend(r.entry);
        }
        let physician = self.env.store.physician(physician_id).expect("listed physician exists");
        let digest = match build_digest(physician, self.date, entries, &self.env.config.digest) {
            Ok(d) => d,
            Err(e) => {
                return (
                    outcome(PhysicianStatus::DigestFailed { error: e.to_string() }, schedule.len()),
                    records,
                )
            }
        };

        let status = if self.options.dry_run {
            PhysicianStatus::DryRun
        } else {
            let (status, record) = self.deliver(&digest);
            records.push(record);
            status
        };
        let mut result = outcome(status, schedule.len());
        match self.env.archive.archive(&digest, &self.run_id, self.options.dry_run) {
            Ok(path) => result.archive_path = Some(path),
            Err(e) => {
                let mut ev = LogEvent::new(&self.run_id, "archive", "error");
                ev.physician_id = Some(physician_id.clone());
                ev.error = Some(e.to_string());
                self.log.write(&ev);
                result.archive_error = Some(e.to_string());
            }
        }
        (result, records)
    }

    fn deliver(&self, digest: &DigestDocument) -> (PhysicianStatus, TaskRecord) {
        let physician_id = &digest.physician.id;
        let scripted = self.env.faults.delivery_failures.get(physician_id).copied().unwrap_or(0);
        let started = Instant::now();
        let retry = with_retry(self.env.config.max_retries, |attempt| {
            let t = Instant::now();
            let result = if attempt <= scripted {
                Err(DeliveryError::Smtp(format!("injected delivery failure on attempt {attempt}")))
            } else {
                self.env.transport.deliver(digest)
            };
            let mut ev = LogEvent::new(&self.run_id, "attempt", if result.is_ok() { "ok" } else { "error" });
            ev.physician_id = Some(physician_id.clone());
            ev.task = Some(TaskKind::Delivery);
            ev.attempt = Some(attempt);
            ev.duration_ms = elapsed_ms(t);
            ev.error = result.as_ref().err().map(ToString::to_string);
            self.log.write(&ev);
            match result {
                Err(e) if !e.is_retryable() => Ok(Err(e)),
                Err(e) => Err(e),
                Ok(r) => Ok(Ok(r)),
            }
        });
        let result = retry.result.and_then(|r| r);
        let record = TaskRecord {
            task: TaskKind::Delivery,
            physician_id: physician_id.clone(),
            patient_id: None,
            appointment_id: None,
            attempts: retry.attempts,
            duration_ms: elapsed_ms(started),
            outcome: if result.is_ok() { TaskOutcome::Succeeded } else { TaskOutcome::Failed },
            error: result.as_ref().err().map(ToString::to_string),
        };
        self.log_task(&record, None);
        let status = match result {
            Ok(_) => PhysicianStatus::Delivered,
            Err(e) => PhysicianStatus::DeliveryFailed { error: e.to_string() },
        };
        (status, record)
    }

    fn log_task(&self, record: &TaskRecord, appointment: Option<&Appointment>) {
        let mut ev = LogEvent::new(
            &self.run_id,
            "task",
            match record.outcome {
                TaskOutcome::Succeeded => "ok",
                TaskOutcome::Failed => "failed",
            },
        );
        if let Some(a) = appointment {
            ev = ev.for_appointment(a);
        }
        ev.physician_id = Some(record.physician_id.clone());
        ev.task = Some(record.task);
        ev.attempt = Some(record.attempts);
        ev.duration_ms = record.duration_ms;
        ev.error = record.error.clone();
        self.log.write(&ev);
    }

    fn appointment_job(&self, appointment: &Appointment) -> AppointmentResult {
        let patient_name = self
            .env
            .store
            .patient(&appointment.patient_id)
            .map(|c| c.name.clone())
            .unwrap_or_else(|_| appointment.patient_id.to_string());
        let mut records = Vec::new();

        let (summary, record) = self.run_task(appointment, &patient_name, TaskKind::Summary, |t| {
            let text = t.final_message().unwrap_or_default();
            Ok(extract_json_summary(text)?)
        });
        records.push(record);
        let summary = match summary {
            Some(payload) => SummarySection::Generated { payload },
            None => SummarySection::Failed,
        };

        let trials = if is_trial_eligible_visit(appointment.visit_kind) {
            let (analysis, record) = self.run_task(appointment, &patient_name, TaskKind::Trials, |t| {
                let text = t.final_message().unwrap_or_default();
                Ok(extract_analysis_summary(text)?)
            });
            records.push(record);
            Some(match analysis {
                Some(analysis) => TrialsSection::Generated { analysis },
                None => TrialsSection::Failed,
            })
        } else {
            None
        };

        let entry = DigestEntry::new(appointment.clone(), patient_name, &self.env.indicators, summary, trials)
            .map_err(|e| tracing::error!("digest entry rejected: {e}"))
            .ok();
        AppointmentResult { entry, records }
    }

    fn run_task<T>(
        &self,
        appointment: &Appointment,
        patient_name: &str,
        kind: TaskKind,
        extract: impl Fn(&AgentTranscript) -> Result<T, TaskError>,
    ) -> (Option<T>, TaskRecord) {
        let started = Instant::now();
        let template = match kind {
            TaskKind::Trials => TemplateId::TrialEvaluation,
            _ => TemplateId::ClinicalSummary,
        };
        let inner = ClinicalTools {
            store: &self.env.store,
            registry: self.env.registry.as_ref(),
            run_date: self.date,
            institution: self.env.config.institution_name.clone(),
        };
        let tools = FaultyTools {
            inner: &inner,
            faults: self.env.faults.tool_faults.clone(),
        };
        let retry = with_retry(self.env.config.max_retries, |attempt| {
            let t = Instant::now();
            let result = self.attempt(appointment, patient_name, template, kind, attempt, &tools, &extract);
            let mut ev = LogEvent::new(&self.run_id, "attempt", if result.is_ok() { "ok" } else { "error" })
                .for_appointment(appointment);
            ev.task = Some(kind);
            ev.attempt = Some(attempt);
            ev.duration_ms = elapsed_ms(t);
            ev.error = result.as_ref().err().map(ToString::to_string);
            self.log.write(&ev);
            result
        });
        let record = TaskRecord {
            task: kind,
            physician_id: appointment.physician_id.clone(),
            patient_id: Some(appointment.patient_id.clone()),
            appointment_id: Some(appointment.appointment_id.clone()),
            attempts: retry.attempts,
            duration_ms: elapsed_ms(started),
            outcome: if retry.result.is_ok() { TaskOutcome::Succeeded } else { TaskOutcome::Failed },
            error: retry.result.as_ref().err().map(ToString::to_string),
        };
        self.log_task(&record, Some(appointment));
        (retry.result.ok(), record)
    }

    #[allow(clippy::too_many_arguments)]
    fn attempt<T>(
        &self,
        appointment: &Appointment,
        patient_name: &str,
        template: TemplateId,
        kind: TaskKind,
        attempt: u32,
        tools: &FaultyTools<'_>,
        extract: &impl Fn(&AgentTranscript) -> Result<T, TaskError>,
    ) -> Result<T, TaskError> {
        if self.env.faults.task_fails(&appointment.patient_id, kind, attempt) {
            return Err(TaskError::Injected(attempt));
        }
        let bindings = BTreeMap::from([
            (BINDING_PATIENT_ID.to_string(), appointment.patient_id.to_string()),
            (BINDING_PATIENT_NAME.to_string(), patient_name.to_string()),
        ]);
        let prompt = render_prompt(template, &bindings)?;
        let t = Instant::now();
        let transcript = run_agent(&prompt, self.env.backend.as_ref(), tools, &self.env.config.limits);
        let mut ev = LogEvent::new(&self.run_id, "transcript", if transcript.done_signal_seen { "done" } else { "aborted" })
            .for_appointment(appointment);
        ev.task = Some(kind);
        ev.attempt = Some(attempt);
        ev.duration_ms = elapsed_ms(t);
        ev.transcript = Some(transcript.clone());
        self.log.write(&ev);

        if let Some(reason) = &transcript.abort {
            return Err(TaskError::Aborted(serde_json::to_string(reason).expect("reason serializes")));
        }
        if !transcript.done_signal_seen {
            return Err(TaskError::NoDone);
        }
        if let Some(first) = transcript.steps.first() {
            if let Some((_, outcome)) = first
                .tool_calls
                .iter()
                .zip(&first.tool_results)
                .find(|(c, o)| c.tool == ToolName::GetPatientDetails && o.is_error())
            {
                let message = match outcome {
                    crate::agent::ToolOutcome::Error { message } => message.clone(),
                    crate::agent::ToolOutcome::Ok { .. } => unreachable!(),
                };
                return Err(TaskError::ChartUnavailable(message));
            }
        }
        extract(&transcript)
    }
}

/// A summary or analysis parsed back out of an archived transcript.
pub fn summary_from_transcript(transcript: &AgentTranscript) -> Result<SummaryPayload, ParseError> {
    extract_json_summary(transcript.final_message().unwrap_or_default())
}

pub fn analysis_from_transcript(transcript: &AgentTranscript) -> Result<AnalysisSummary, ParseError> {
    extract_analysis_summary(transcript.final_message().unwrap_or_default())
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
    fn sleep_until(&self, deadline: DateTime<Utc>);
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn sleep_until(&self, deadline: DateTime<Utc>) {
        loop {
            let remaining = deadline - Utc::now();
            if remaining <= Duration::zero() {
                return;
            }
            let step = remaining.min(Duration::seconds(60));
            std::thread::sleep(step.to_std().unwrap_or_default());
        }
    }
}

fn local_instant(tz: Tz, date: NaiveDate, at: NaiveTime) -> DateTime<Utc> {
    let naive = date.and_time(at);
    match tz.from_local_datetime(&naive) {
        LocalResult::Single(t) | LocalResult::Ambiguous(t, _) => t.with_timezone(&Utc),
        // Wall time skipped by a forward shift: fire at the first valid minute.
        LocalResult::None => (1..=180)
            .find_map(|m| tz.from_local_datetime(&(naive + Duration::minutes(m))).earliest())
            .expect("a valid local time within three hours")
            .with_timezone(&Utc),
    }
}

/// The first local `at` wall-clock time strictly after `now`.
pub fn next_trigger(now: DateTime<Utc>, tz: Tz, at: NaiveTime) -> DateTime<Utc> {
    let today = now.with_timezone(&tz).date_naive();
    (0..3)
        .map(|offset| local_instant(tz, today + Duration::days(offset), at))
        .find(|t| *t > now)
        .expect("a trigger within three days")
}

/// Sleeps until each trigger and calls `run` with the local date. Missed
/// triggers are logged, never back-filled. Stops after `max_runs` when set.
pub fn schedule_loop(
    config: &RunConfig,
    clock: &dyn Clock,
    mut run: impl FnMut(NaiveDate),
    max_runs: Option<usize>,
) -> Result<(), OrchestratorError> {
    let tz = config.tz()?;
    let now = clock.now();
    let today = now.with_timezone(&tz).date_naive();
    if local_instant(tz, today, config.trigger_time) <= now {
        tracing::info!(
            date = %today,
            trigger = %config.trigger_time,
            "today's trigger has already passed; it will not be back-filled"
        );
    }
    let mut runs = 0;
    while max_runs.is_none_or(|m| runs < m) {
        let trigger = next_trigger(clock.now(), tz, config.trigger_time);
        clock.sleep_until(trigger);
        let date = trigger.with_timezone(&tz).date_naive();
        tracing::info!(%date, "daily trigger fired");
        run(date);
        runs += 1;
    }
    Ok(())
}
