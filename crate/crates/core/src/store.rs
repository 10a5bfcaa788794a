//! Append-only annotation log.
//!
//! The log is a UTF-8 file of newline-delimited JSON records. Line one is a
//! header record (`seq` 0) carrying the schema version; every following line
//! is one [`AnnotationEvent`]:
//!
//! ```text
//! {"v":1,"seq":0,"kind":"header","format":"annofuse-log"}
//! {"v":1,"seq":1,"wall_time":"2019-03-01T10:00:00Z","annotation":{"type":"provenance",...}}
//! ```
//!
//! Sequence numbers start at 1, have no gaps, and double as annotation ids.
//! Appends are checked (variant invariants, target existence, votability),
//! written as one complete line and synced before returning. A trailing
//! fragment without a newline is a torn write: readers ignore it and
//! reopening for append truncates it.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cleansing::{replay_edit, ReplayFault};
use crate::dataset::{Dataset, DatasetRecord};
use crate::model::{
    Annotation, AnnotationId, AnnotationKind, CellKey, ModelError, Timestamp,
};

pub const SCHEMA_VERSION: u32 = 1;
const FORMAT_NAME: &str = "annofuse-log";
const SNAPSHOT_FORMAT_NAME: &str = "annofuse-snapshot";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("invalid annotation: {0}")]
    Invalid(#[from] ModelError),
    #[error("unknown target annotation {0}")]
    UnknownTarget(AnnotationId),
    #[error("annotation {0} is a {1} and cannot be voted on")]
    NotVotable(AnnotationId, AnnotationKind),
    #[error("log {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("log {0} was opened read-only")]
    ReadOnly(PathBuf),
    #[error("i/o error on {path}: {error}")]
    Io {
        path: PathBuf,
        error: std::io::Error,
    },
}

/// One entry of the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEvent {
    #[serde(rename = "v")]
    pub schema_version: u32,
    pub seq: u64,
    pub wall_time: Timestamp,
    pub annotation: Annotation,
}

impl AnnotationEvent {
    pub fn id(&self) -> AnnotationId {
        AnnotationId(self.seq)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    v: u32,
    seq: u64,
    kind: String,
    format: String,
}

impl Header {
    fn new(format: &str) -> Self {
        Self {
            v: SCHEMA_VERSION,
            seq: 0,
            kind: "header".into(),
            format: format.into(),
        }
    }
}

/// Analysis step an annotation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Preprocessing,
    Cleansing,
    Exploration,
}

impl Step {
    pub const ALL: [Step; 3] = [Step::Preprocessing, Step::Cleansing, Step::Exploration];
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Step::Preprocessing => "preprocessing",
            Step::Cleansing => "cleansing",
            Step::Exploration => "exploration",
        })
    }
}

impl FromStr for Step {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "preprocessing" => Ok(Step::Preprocessing),
            "cleansing" => Ok(Step::Cleansing),
            "exploration" => Ok(Step::Exploration),
            other => Err(format!("unknown step `{other}`")),
        }
    }
}

/// Optional cell/entity/time restriction for [`EventLog::query`]. An event
/// matches when any cell it touches satisfies every field that is set.
/// Comments and votes touch the cells of their target.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventPredicate {
    pub entity_id: Option<String>,
    pub dimension: Option<String>,
    pub cell: Option<CellKey>,
    pub from: Option<Timestamp>,
    pub to: Option<Timestamp>,
}

impl EventPredicate {
    pub fn is_empty(&self) -> bool {
        *self == EventPredicate::default()
    }

    pub fn matches_cell(&self, c: &CellKey) -> bool {
        self.entity_id.as_ref().is_none_or(|e| &c.entity_id == e)
            && self.dimension.as_ref().is_none_or(|d| &c.dimension == d)
            && self.cell.as_ref().is_none_or(|k| k == c)
            && self.from.is_none_or(|t| c.observed_at >= t)
            && self.to.is_none_or(|t| c.observed_at <= t)
    }
}

/// The annotation log, held in memory and optionally backed by a file.
#[derive(Debug)]
pub struct EventLog {
    path: Option<PathBuf>,
    file: Option<File>,
    events: Vec<AnnotationEvent>,
}

impl EventLog {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            file: None,
            events: Vec::new(),
        }
    }

    /// Opens a log file for appending, creating it with a header if absent.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let io = |error| StoreError::Io {
            path: path.clone(),
            error,
        };
        let exists = path.exists();
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(io)?;
        let events = if exists && file.metadata().map_err(io)?.len() > 0 {
            let (events, complete_len) = read_events(&path)?;
            let len = file.metadata().map_err(io)?.len();
            if complete_len < len {
                tracing::warn!(path = %path.display(), "truncating torn trailing record");
                file.set_len(complete_len).map_err(io)?;
                file.seek(SeekFrom::End(0)).map_err(io)?;
            }
            events
        } else {
            let mut line = serde_json::to_string(&Header::new(FORMAT_NAME)).expect("header serializes");
            line.push('\n');
            file.write_all(line.as_bytes()).map_err(io)?;
            file.sync_data().map_err(io)?;
            Vec::new()
        };
        Ok(Self {
            path: Some(path),
            file: Some(file),
            events,
        })
    }

    /// Reads a log without opening it for writing.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let (events, _) = read_events(path.as_ref())?;
        Ok(Self {
            path: Some(path.as_ref().to_path_buf()),
            file: None,
            events,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn last_seq(&self) -> u64 {
        self.events.len() as u64
    }

    pub fn events(&self) -> &[AnnotationEvent] {
        &self.events
    }

    pub fn get(&self, id: AnnotationId) -> Option<&AnnotationEvent> {
        let idx = usize::try_from(id.0).ok()?.checked_sub(1)?;
        self.events.get(idx)
    }

    /// Checks whether `annotation` could be appended now.
    pub fn check(&self, annotation: &Annotation) -> Result<(), StoreError> {
        annotation.validate()?;
        if let Some(target) = annotation.target() {
            let event = self.get(target).ok_or(StoreError::UnknownTarget(target))?;
            let kind = event.annotation.kind();
            if annotation.kind() == AnnotationKind::Vote && !kind.is_votable() {
                return Err(StoreError::NotVotable(target, kind));
            }
        }
        Ok(())
    }

    /// Appends an annotation and returns its id. The record is on disk when
    /// this returns; on error the log is unchanged.
    pub fn append(
        &mut self,
        annotation: Annotation,
        wall_time: Timestamp,
    ) -> Result<AnnotationId, StoreError> {
        self.check(&annotation)?;
        let event = AnnotationEvent {
            schema_version: SCHEMA_VERSION,
            seq: self.last_seq() + 1,
            wall_time,
            annotation,
        };
        if let (None, Some(path)) = (self.file.as_ref(), self.path.as_ref()) {
            return Err(StoreError::ReadOnly(path.clone()));
        }
        if let (Some(file), Some(path)) = (self.file.as_mut(), self.path.as_ref()) {
            let mut line = serde_json::to_string(&event).expect("annotation serializes");
            line.push('\n');
            let io = |error| StoreError::Io {
                path: path.clone(),
                error,
            };
            file.write_all(line.as_bytes()).map_err(io)?;
            file.flush().map_err(io)?;
            file.sync_data().map_err(io)?;
        }
        let id = event.id();
        self.events.push(event);
        Ok(id)
    }

    pub fn step_of(&self, event: &AnnotationEvent) -> Step {
        match &event.annotation {
            Annotation::Provenance(_) | Annotation::Resolution(_) => Step::Preprocessing,
            Annotation::Edit(_) => Step::Cleansing,
            Annotation::Finding(_) | Annotation::Comment(_) => Step::Exploration,
            Annotation::Vote(v) => match self.get(v.target()).map(|t| t.annotation.kind()) {
                Some(AnnotationKind::Edit) => Step::Cleansing,
                _ => Step::Exploration,
            },
        }
    }

    /// Cells an event refers to; comments and votes inherit their target's.
    pub fn touched_cells<'a>(&'a self, event: &'a AnnotationEvent) -> Vec<&'a CellKey> {
        let mut current = event;
        let mut hops = 0;
        loop {
            match &current.annotation {
                Annotation::Provenance(p) => return vec![&p.cell],
                Annotation::Resolution(r) => return vec![&r.cell],
                Annotation::Edit(e) => return e.changes.iter().map(|c| &c.cell).collect(),
                Annotation::Finding(f) => return f.data_refs.iter().map(|r| &r.cell).collect(),
                Annotation::Comment(_) | Annotation::Vote(_) => {
                    let target = current.annotation.target().expect("has target");
                    match self.get(target) {
                        // targets always precede their referrers
                        Some(t) if t.seq < current.seq && hops < self.events.len() => {
                            current = t;
                            hops += 1;
                        }
                        _ => return Vec::new(),
                    }
                }
            }
        }
    }

    /// Events of one analysis step, optionally restricted by a predicate, in
    /// ascending sequence order.
    pub fn query(&self, step: Step, predicate: &EventPredicate) -> Vec<&AnnotationEvent> {
        self.events
            .iter()
            .filter(|e| self.step_of(e) == step)
            .filter(|e| {
                predicate.is_empty()
                    || self
                        .touched_cells(e)
                        .into_iter()
                        .any(|c| predicate.matches_cell(c))
            })
            .collect()
    }

    /// Votes targeting `id`, in sequence order.
    pub fn votes_for(&self, id: AnnotationId) -> impl Iterator<Item = &crate::model::Vote> {
        self.events.iter().filter_map(move |e| match &e.annotation {
            Annotation::Vote(v) if v.target() == id => Some(v),
            _ => None,
        })
    }

    /// The fused dataset the log starts from, rebuilt from its provenance
    /// records.
    pub fn base_dataset(&self) -> Dataset {
        base_dataset(&self.events)
    }

    /// Current dataset: the base with every edit applied.
    pub fn current_dataset(&self) -> Result<Dataset, ReplayError> {
        replay(self.base_dataset(), &self.events)
    }
}

/// Rebuilds the fused dataset from provenance records.
pub fn base_dataset(events: &[AnnotationEvent]) -> Dataset {
    events
        .iter()
        .filter_map(|e| match &e.annotation {
            Annotation::Provenance(p) => p.chosen.clone().map(|v| (p.cell.clone(), v)),
            _ => None,
        })
        .collect()
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("replay halted at seq {seq}: {fault}")]
pub struct ReplayError {
    pub seq: u64,
    pub fault: ReplayFault,
}

/// Applies the edit events, in order, to `base`. Other events leave the data
/// alone. Events must be ascending and gap-free.
pub fn replay(mut base: Dataset, events: &[AnnotationEvent]) -> Result<Dataset, ReplayError> {
    let first = events.first().map_or(1, |e| e.seq);
    for (expected, event) in (first..).zip(events) {
        if event.seq != expected {
            return Err(ReplayError {
                seq: event.seq,
                fault: ReplayFault::OutOfOrder { expected },
            });
        }
        if let Annotation::Edit(edit) = &event.annotation {
            replay_edit(&mut base, edit).map_err(|fault| ReplayError {
                seq: event.seq,
                fault,
            })?;
        }
    }
    Ok(base)
}

/// Reads every complete event, returning them with the byte length of the
/// complete prefix. A trailing line without a newline is ignored.
fn read_events(path: &Path) -> Result<(Vec<AnnotationEvent>, u64), StoreError> {
    let corrupt = |reason: String| StoreError::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let file = File::open(path).map_err(|error| StoreError::Io {
        path: path.to_path_buf(),
        error,
    })?;
    let mut reader = BufReader::new(file);
    let mut events = Vec::new();
    let mut complete_len = 0u64;
    let mut line = String::new();
    let mut line_no = 0usize;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|error| StoreError::Io {
            path: path.to_path_buf(),
            error,
        })?;
        if n == 0 || !line.ends_with('\n') {
            break;
        }
        line_no += 1;
        complete_len += n as u64;
        if line_no == 1 {
            let header: Header = serde_json::from_str(&line)
                .map_err(|e| corrupt(format!("bad header: {e}")))?;
            if header.format != FORMAT_NAME || header.seq != 0 {
                return Err(corrupt("not an annotation log".into()));
            }
            if header.v != SCHEMA_VERSION {
                return Err(corrupt(format!("unsupported schema version {}", header.v)));
            }
            continue;
        }
        let event: AnnotationEvent = serde_json::from_str(&line).map_err(|e| {
            corrupt(format!(
                "malformed record at line {line_no} (first bad seq {}): {e}",
                events.len() + 1
            ))
        })?;
        let expected = events.len() as u64 + 1;
        if event.seq != expected {
            return Err(corrupt(format!(
                "sequence gap: expected seq {expected}, found {}",
                event.seq
            )));
        }
        events.push(event);
    }
    if line_no == 0 {
        return Err(corrupt("missing header".into()));
    }
    Ok((events, complete_len))
}

/// A problem found by [`verify_log`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogIssue {
    /// 1-based line number in the file.
    pub line: usize,
    pub seq: Option<u64>,
    pub problem: String,
}

impl fmt::Display for LogIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.seq {
            Some(seq) => write!(f, "line {} seq {}: {}", self.line, seq, self.problem),
            None => write!(f, "line {}: {}", self.line, self.problem),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub events: usize,
    pub issues: Vec<LogIssue>,
}

impl VerifyReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Checks a log file: header, well-formed records, gap-free sequence
/// numbers, referential integrity, and that the edits replay cleanly.
/// Keeps going after the first problem so every issue is reported.
pub fn verify_log(path: &Path) -> Result<VerifyReport, StoreError> {
    let text = std::fs::read_to_string(path).map_err(|error| StoreError::Io {
        path: path.to_path_buf(),
        error,
    })?;
    let mut report = VerifyReport::default();
    let mut lines: Vec<&str> = text.split_inclusive('\n').collect();
    if let Some(last) = lines.last() {
        if !last.ends_with('\n') {
            report.issues.push(LogIssue {
                line: lines.len(),
                seq: None,
                problem: "unterminated trailing record (torn write)".into(),
            });
            lines.pop();
        }
    }
    let issue = |report: &mut VerifyReport, line: usize, seq: Option<u64>, problem: String| {
        report.issues.push(LogIssue { line, seq, problem })
    };

    match lines.first().map(|l| serde_json::from_str::<Header>(l)) {
        Some(Ok(h)) if h.format == FORMAT_NAME && h.v == SCHEMA_VERSION && h.seq == 0 => {}
        Some(Ok(h)) => issue(
            &mut report,
            1,
            Some(0),
            format!("unexpected header (format `{}`, version {})", h.format, h.v),
        ),
        Some(Err(e)) => issue(&mut report, 1, Some(0), format!("malformed header: {e}")),
        None => issue(&mut report, 1, None, "empty file, missing header".into()),
    }

    // Parsed events keyed by line; malformed lines are reported and skipped.
    // A malformed line is assumed to hold the next seq, so it is not also
    // reported as a gap.
    let mut parsed: Vec<(usize, AnnotationEvent)> = Vec::new();
    let mut malformed: BTreeSet<u64> = BTreeSet::new();
    let mut last_seq = 0u64;
    for (idx, raw) in lines.iter().enumerate().skip(1) {
        let line = idx + 1;
        match serde_json::from_str::<AnnotationEvent>(raw.trim_end()) {
            Ok(e) => {
                last_seq = e.seq;
                parsed.push((line, e))
            }
            Err(err) => {
                last_seq += 1;
                malformed.insert(last_seq);
                issue(
                    &mut report,
                    line,
                    Some(last_seq),
                    format!("malformed record (first bad seq {last_seq}): {err}"),
                )
            }
        }
    }

    let mut expected = 1u64;
    let mut seen: std::collections::BTreeMap<u64, AnnotationKind> = Default::default();
    let mut ids: BTreeSet<u64> = BTreeSet::new();
    for (line, e) in &parsed {
        if e.schema_version != SCHEMA_VERSION {
            issue(
                &mut report,
                *line,
                Some(e.seq),
                format!("unsupported schema version {}", e.schema_version),
            );
        }
        while malformed.contains(&expected) {
            expected += 1;
        }
        if e.seq != expected {
            let problem = if e.seq > expected {
                format!("sequence gap: seq {} missing", describe_range(expected, e.seq - 1))
            } else {
                format!("sequence out of order: expected {expected}, found {}", e.seq)
            };
            issue(&mut report, *line, Some(e.seq), problem);
        }
        expected = expected.max(e.seq + 1);
        if !ids.insert(e.seq) {
            issue(&mut report, *line, Some(e.seq), "duplicate seq".into());
        }
        if let Err(err) = e.annotation.validate() {
            issue(&mut report, *line, Some(e.seq), format!("invalid annotation: {err}"));
        }
        if let Some(target) = e.annotation.target() {
            match seen.get(&target.0) {
                None => issue(
                    &mut report,
                    *line,
                    Some(e.seq),
                    format!("dangling target: annotation {target} does not precede this record"),
                ),
                Some(kind) if e.annotation.kind() == AnnotationKind::Vote && !kind.is_votable() => {
                    issue(
                        &mut report,
                        *line,
                        Some(e.seq),
                        format!("vote targets {target}, a {kind}, which is not votable"),
                    )
                }
                Some(_) => {}
            }
        }
        seen.insert(e.seq, e.annotation.kind());
    }
    report.events = parsed.len();

    let events: Vec<AnnotationEvent> = parsed.iter().map(|(_, e)| e.clone()).collect();
    let mut data = base_dataset(&events);
    for (line, e) in &parsed {
        if let Annotation::Edit(edit) = &e.annotation {
            if let Err(fault) = replay_edit(&mut data, edit) {
                issue(&mut report, *line, Some(e.seq), format!("replay failed: {fault}"));
                break;
            }
        }
    }
    Ok(report)
}

fn describe_range(a: u64, b: u64) -> String {
    if a == b {
        a.to_string()
    } else {
        format!("{a}..={b}")
    }
}

/// Writes a dataset snapshot file: a header line, then one record per cell.
pub fn write_snapshot(path: &Path, dataset: &Dataset) -> Result<(), StoreError> {
    let io = |error| StoreError::Io {
        path: path.to_path_buf(),
        error,
    };
    let mut out = std::io::BufWriter::new(File::create(path).map_err(io)?);
    write_json_line(&mut out, &Header::new(SNAPSHOT_FORMAT_NAME)).map_err(io)?;
    for record in dataset.records() {
        write_json_line(&mut out, &record).map_err(io)?;
    }
    let file = out.into_inner().map_err(|e| io(e.into_error()))?;
    file.sync_all().map_err(io)
}

fn write_json_line<W: Write, T: Serialize>(out: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")
}

pub fn read_snapshot(path: &Path) -> Result<Dataset, StoreError> {
    let corrupt = |reason: String| StoreError::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|error| StoreError::Io {
        path: path.to_path_buf(),
        error,
    })?;
    let mut lines = text.lines();
    let header: Header = lines
        .next()
        .ok_or_else(|| corrupt("empty snapshot".into()))
        .and_then(|l| serde_json::from_str(l).map_err(|e| corrupt(format!("bad header: {e}"))))?;
    if header.format != SNAPSHOT_FORMAT_NAME {
        return Err(corrupt("not a dataset snapshot".into()));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<DatasetRecord>(l)
                .map_err(|e| corrupt(format!("line {}: {e}", i + 2)))
        })
        .collect()
}
