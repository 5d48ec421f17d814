use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use ddose_core::domain::PhysicianId;
use ddose_core::ehr::validate_cohort;
use ddose_core::fixtures;
use ddose_core::orchestrator::{
    run_daily, schedule_loop, PhysicianStatus, RegistryConfig, RunConfig, RunEnvironment, RunOptions, RunReport,
    SystemClock, TaskOutcome,
};
use ddose_core::registry::FileRegistry;
use ddose_survey::report::analyze;
use ddose_survey::{reconstruction, Manifest, ResponseMatrix};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "ddose", version, about = "Daily physician digest pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cohort directory; overrides the config.
    #[arg(long)]
    cohort: Option<PathBuf>,
    /// Registry trials.json; overrides the config.
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Output root for outbox, archive and logs; overrides the config.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate digests for one date.
    Run {
        #[arg(long)]
        date: NaiveDate,
        #[arg(long)]
        physician: Option<String>,
        /// Build and archive digests without delivering them.
        #[arg(long)]
        dry_run: bool,
        /// Print the run report as JSON.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run every day at the configured trigger time.
    Serve {
        #[arg(long)]
        max_runs: Option<usize>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    #[command(subcommand)]
    Fixtures(FixturesCommand),
    #[command(subcommand)]
    Survey(SurveyCommand),
}

#[derive(Subcommand)]
enum FixturesCommand {
    /// Check a cohort directory (and its registry file, if present).
    Validate { root: PathBuf },
    /// Write the bundled smoke cohort, registry and survey reconstruction.
    Generate { root: PathBuf },
}

#[derive(Subcommand)]
enum SurveyCommand {
    /// Score a response file and print a Markdown report.
    Analyze {
        file: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let (Some(cohort), Some(registry)) = (&args.cohort, &args.registry) else {
                bail!("either --config or both --cohort and --registry are required");
            };
            RunConfig::for_paths(cohort, registry, args.output.clone().unwrap_or_else(|| "out".into()))
        }
    };
    if let Some(c) = &args.cohort {
        config.cohort_path = c.clone();
    }
    if let Some(r) = &args.registry {
        config.registry = RegistryConfig::File { path: r.clone() };
    }
    if let Some(o) = &args.output {
        config.output_root = o.clone();
    }
    config.validate()?;
    Ok(config)
}

/// Prints the per-physician outcome and task warnings; returns whether every
/// digest was built, delivered (or dry-run) and archived.
fn summarize(report: &RunReport) -> bool {
    let t = &report.totals;
    println!(
        "run {} for {}: {} physicians ({} ok, {} skipped), {} appointments, {} summary tasks, {} trial tasks, {} failed",
        report.run_id,
        report.run_date,
        t.physicians,
        t.physicians_ok,
        t.physicians_skipped,
        t.appointments,
        t.summary_tasks,
        t.trial_tasks,
        t.failed_tasks
    );
    let mut ok = true;
    for p in &report.physicians {
        let status = match &p.status {
            PhysicianStatus::Delivered => "delivered".to_string(),
            PhysicianStatus::DryRun => "dry run".to_string(),
            PhysicianStatus::Skipped => "skipped (no appointments)".to_string(),
            PhysicianStatus::DeliveryFailed { error } => {
                ok = false;
                format!("delivery failed: {error}")
            }
            PhysicianStatus::DigestFailed { error } => {
                ok = false;
                format!("digest failed: {error}")
            }
        };
        println!("  {}: {} appointments, {status}", p.physician_id, p.appointments);
        if let Some(e) = &p.archive_error {
            ok = false;
            eprintln!("error: archive for {} failed: {e}", p.physician_id);
        }
    }
    for task in report.tasks.iter().filter(|t| t.outcome == TaskOutcome::Failed) {
        eprintln!(
            "warning: {:?} task for {} ({}) failed after {} attempts: {}; placeholder shown",
            task.task,
            task.appointment_id.as_ref().map_or("-", |a| a.as_str()),
            task.patient_id.as_ref().map_or("-", |p| p.as_str()),
            task.attempts,
            task.error.as_deref().unwrap_or("unknown error")
        );
    }
    println!("log: {}", report.log_path.display());
    ok
}

fn cmd_run(date: NaiveDate, physician: Option<String>, dry_run: bool, json: bool, args: &ConfigArgs) -> Result<bool> {
    let env = RunEnvironment::from_config(load_config(args)?)?;
    let options = RunOptions {
        physician: physician.map(PhysicianId::new),
        dry_run,
    };
    let report = run_daily(&env, date, &options)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        Ok(summarize_quiet(&report))
    } else {
        Ok(summarize(&report))
    }
}

fn summarize_quiet(report: &RunReport) -> bool {
    report.physicians.iter().all(|p| {
        matches!(
            p.status,
            PhysicianStatus::Delivered | PhysicianStatus::DryRun | PhysicianStatus::Skipped
        ) && p.archive_error.is_none()
    })
}

fn cmd_serve(max_runs: Option<usize>, args: &ConfigArgs) -> Result<bool> {
    let config = load_config(args)?;
    let env = RunEnvironment::from_config(config.clone())?;
    let mut all_ok = true;
    schedule_loop(
        &config,
        &SystemClock,
        |date| match run_daily(&env, date, &RunOptions::default()) {
            Ok(report) => all_ok &= summarize(&report),
            Err(e) => {
                all_ok = false;
                eprintln!("error: run for {date} failed: {e}");
            }
        },
        max_runs,
    )?;
    Ok(all_ok)
}

fn cmd_validate(root: &Path) -> Result<bool> {
    let (store, mut findings) = validate_cohort(root);
    let mut messages: Vec<String> = findings.drain(..).map(|e| e.to_string()).collect();
    let registry = root.join("registry").join("trials.json");
    let mut trials = None;
    if registry.exists() {
        match FileRegistry::open(&registry).records() {
            Ok(r) => trials = Some(r.len()),
            Err(e) => messages.push(e.to_string()),
        }
    }
    if messages.is_empty() {
        let store = store.context("validator returned no store and no findings")?;
        print!(
            "{}: ok ({} patients, {} physicians, {} schedules",
            root.display(),
            store.patients().count(),
            store.list_physicians(NaiveDate::MIN).len(),
            store.schedule_count()
        );
        match trials {
            Some(n) => println!(", {n} trials)"),
            None => println!(")"),
        }
        Ok(true)
    } else {
        eprintln!("{}: {} finding(s)", root.display(), messages.len());
        for m in &messages {
            eprintln!("  - {m}");
        }
        Ok(false)
    }
}

fn cmd_generate(root: &Path) -> Result<bool> {
    let smoke = root.join("smoke-3x10");
    fixtures::write_smoke(&smoke)?;
    let survey = root.join("survey");
    fs::create_dir_all(&survey)?;
    let matrix = reconstruction::cohort();
    fs::write(survey.join("reconstruction.csv"), matrix.to_csv()?)?;
    let mut manifest = serde_json::to_string_pretty(&reconstruction::manifest())?;
    manifest.push('\n');
    fs::write(survey.join("manifest.json"), manifest)?;
    println!("wrote {} and {}", smoke.display(), survey.display());
    Ok(true)
}

fn cmd_survey(file: &Path, manifest: &Path, json: bool) -> Result<bool> {
    let manifest = Manifest::load(manifest)?;
    let delimiter = if file.extension().is_some_and(|e| e == "tsv") { b'\t' } else { b',' };
    let reader = fs::File::open(file).with_context(|| format!("opening {}", file.display()))?;
    let matrix = ResponseMatrix::from_reader(reader, manifest, delimiter)?;
    let report = analyze(&matrix)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.to_markdown());
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.command {
        Command::Run {
            date,
            physician,
            dry_run,
            json,
            config,
        } => cmd_run(date, physician, dry_run, json, &config),
        Command::Serve { max_runs, config } => cmd_serve(max_runs, &config),
        Command::Fixtures(FixturesCommand::Validate { root }) => cmd_validate(&root),
        Command::Fixtures(FixturesCommand::Generate { root }) => cmd_generate(&root),
        Command::Survey(SurveyCommand::Analyze { file, manifest, json }) => cmd_survey(&file, &manifest, json),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
