//! Batch driver behind the `annofuse` binary.
//!
//! Exit codes: 0 success, 1 error, 2 fusion left unresolved discrepancies.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::api::{self, ServeConfig, ServiceLock};
use crate::ingest::{load_descriptors, load_fusion_config_file, parse_sources, FusionConfig};
use crate::model::{SourceValue, UserRegistry};
use crate::report::{write_fuse_summary, Format, Report, ReportKind};
use crate::store::{verify_log, write_snapshot, EventLog};
use crate::workbench::{SystemClock, Workbench, LOG_FILE};

pub const BASE_SNAPSHOT: &str = "base.snapshot";
pub const CURRENT_SNAPSHOT: &str = "current.snapshot";

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_UNRESOLVED: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "annofuse", version, about = "Fuse, cleanse and audit multi-source data with a replayable annotation log")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest and fuse sources into a new data directory.
    Fuse(FuseArgs),
    /// Print a discrepancy, edit or finding report for a log.
    Report(ReportArgs),
    /// Check a log: sequence, references and replay.
    Verify(LogArgs),
    /// Run the HTTP service over a data directory.
    Serve(ServeArgs),
    /// Write a dataset snapshot rebuilt from a log.
    Snapshot(SnapshotArgs),
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Source descriptor JSON files (each one object or an array).
    #[arg(long, required = true, num_args = 1..)]
    pub sources: Vec<PathBuf>,
    /// Hierarchy configuration JSON.
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    /// Output data directory.
    #[arg(long, env = "ANNOFUSE_DATA_DIR")]
    pub out: PathBuf,
    #[arg(long, default_value = "text")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct LogArgs {
    /// Log file; defaults to annotations.log in the data directory.
    pub log: Option<PathBuf>,
    /// Data directory.
    #[arg(long, env = "ANNOFUSE_DATA_DIR")]
    pub out: Option<PathBuf>,
}

impl LogArgs {
    fn path(&self) -> Result<PathBuf, String> {
        match (&self.log, &self.out) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(dir)) => Ok(dir.join(LOG_FILE)),
            (None, None) => Err("no log given: pass a path, --out or set ANNOFUSE_DATA_DIR".into()),
        }
    }
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// discrepancies, edits or findings
    pub kind: ReportKind,
    #[command(flatten)]
    pub log: LogArgs,
    #[arg(long, default_value = "text")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Data directory holding the log and blobs.
    #[arg(long, env = "ANNOFUSE_DATA_DIR")]
    pub out: PathBuf,
    /// Hierarchy configuration used by POST /api/fuse.
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    /// User registry JSON.
    #[arg(long)]
    pub users: PathBuf,
}

#[derive(Debug, Args)]
pub struct SnapshotArgs {
    #[command(flatten)]
    pub log: LogArgs,
    /// Dump the fused dataset before any edit instead of the current one.
    #[arg(long)]
    pub base: bool,
    /// Output file; defaults to current.snapshot (or base.snapshot) next to the log.
    #[arg(long, short = 'o')]
    pub output: Option<PathBuf>,
}

/// Parses arguments and runs one command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Fuse(a) => cmd_fuse(&a, out, err),
        Command::Report(a) => cmd_report(&a, out),
        Command::Verify(a) => cmd_verify(&a, out, err),
        Command::Serve(a) => cmd_serve(&a),
        Command::Snapshot(a) => cmd_snapshot(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(message) => {
            let _ = writeln!(err, "error: {message}");
            EXIT_ERROR
        }
    }
}

type CmdResult = Result<u8, String>;

fn refuse_if_served(dir: &Path) -> Result<(), String> {
    if ServiceLock::is_held(dir) {
        return Err(format!(
            "{} is locked by a running service ({}); stop it first",
            dir.display(),
            api::LOCK_FILE
        ));
    }
    Ok(())
}

pub fn cmd_fuse(args: &FuseArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    refuse_if_served(&args.out)?;
    let mut descriptors = Vec::new();
    for path in &args.sources {
        descriptors.extend(load_descriptors(path).map_err(|e| e.to_string())?);
    }
    let fusion = match &args.hierarchy {
        Some(p) => load_fusion_config_file(p).map_err(|e| e.to_string())?,
        None => FusionConfig::default(),
    };
    let parsed = parse_sources(&descriptors).map_err(|e| e.to_string())?;
    for w in &parsed.warnings {
        let _ = writeln!(err, "warning: {w}");
    }

    let users = UserRegistry::new([]).expect("empty registry");
    let mut wb = Workbench::open_dir(&args.out, users, fusion, Box::new(SystemClock))
        .map_err(|e| e.to_string())?;
    let mut by_source: BTreeMap<String, Vec<SourceValue>> =
        descriptors.iter().map(|d| (d.name.clone(), Vec::new())).collect();
    for v in parsed.values {
        by_source.entry(v.source.clone()).or_default().push(v);
    }
    for (name, values) in by_source {
        wb.add_values(&name, values).map_err(|e| e.to_string())?;
    }
    let report = wb.fuse().map_err(|e| format!("{}: {e}", args.out.display()))?;
    for w in &report.warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    write_snapshot(&args.out.join(BASE_SNAPSHOT), wb.base()).map_err(|e| e.to_string())?;
    write_fuse_summary(&report.summary, args.format, out).map_err(|e| e.to_string())?;
    Ok(if report.summary.unresolved > 0 {
        EXIT_UNRESOLVED
    } else {
        EXIT_OK
    })
}

pub fn cmd_report(args: &ReportArgs, out: &mut dyn Write) -> CmdResult {
    let path = args.log.path()?;
    let check = verify_log(&path).map_err(|e| e.to_string())?;
    if let Some(first) = check.issues.first() {
        return Err(format!("corrupt log {}: {first}", path.display()));
    }
    let log = EventLog::load(&path).map_err(|e| e.to_string())?;
    Report::build(args.kind, log.events())
        .write(args.format, out)
        .map_err(|e| e.to_string())?;
    Ok(EXIT_OK)
}

pub fn cmd_verify(args: &LogArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let path = args.path()?;
    let report = verify_log(&path).map_err(|e| e.to_string())?;
    for issue in &report.issues {
        let _ = writeln!(err, "{}: {issue}", path.display());
    }
    if report.is_ok() {
        let _ = writeln!(out, "ok: {} events", report.events);
        Ok(EXIT_OK)
    } else {
        let _ = writeln!(err, "{} issue(s) found", report.issues.len());
        Ok(EXIT_ERROR)
    }
}

pub fn cmd_snapshot(args: &SnapshotArgs, out: &mut dyn Write) -> CmdResult {
    let path = args.log.path()?;
    let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    refuse_if_served(&dir)?;
    let log = EventLog::load(&path).map_err(|e| e.to_string())?;
    let (data, default_name) = if args.base {
        (log.base_dataset(), BASE_SNAPSHOT)
    } else {
        (log.current_dataset().map_err(|e| e.to_string())?, CURRENT_SNAPSHOT)
    };
    let target = args.output.clone().unwrap_or_else(|| dir.join(default_name));
    write_snapshot(&target, &data).map_err(|e| e.to_string())?;
    let _ = writeln!(out, "wrote {} cells to {}", data.len(), target.display());
    Ok(EXIT_OK)
}

fn cmd_serve(args: &ServeArgs) -> CmdResult {
    let config = ServeConfig {
        addr: SocketAddr::new(args.host, args.port),
        data_dir: args.out.clone(),
        hierarchy: args.hierarchy.clone(),
        users: args.users.clone(),
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    runtime.block_on(api::serve(config)).map_err(|e| e.to_string())?;
    Ok(EXIT_OK)
}
