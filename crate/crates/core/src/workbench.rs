//! One working session over a data directory: uploaded sources, the event
//! log, the base (fused) and current (edited) dataset, and the blob store.
//!
//! The workbench is the single writer. Every mutating method appends exactly
//! the annotations its operation defines and nothing else.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;

use chrono::{Duration, Utc};
use serde::Serialize;
use thiserror::Error;

use crate::cleansing::{self, apply_edit, apply_rule_edit, CleansingError, CorrectionRule, EditRequest};
use crate::dataset::Dataset;
use crate::exploration::{
    self, annotation_feed, AnnotationView, BlobStore, ExplorationError, FindingRequest,
    SnapshotBlob,
};
use crate::fusion::{fuse, FuseSummary};
use crate::ingest::{parse_source_from, FusionConfig, IngestError, IngestWarning, SourceDescriptor};
use crate::model::{
    Annotation, AnnotationId, AnnotationKind, CellKey, Comment, Edit, Finding, LifecycleState,
    ProvenanceSource, RedundancyStatus, Scalar, SourceValue, Timestamp, UserRegistry, Verdict,
    Vote,
};
use crate::store::{AnnotationEvent, EventLog, EventPredicate, ReplayError, Step, StoreError};

pub const LOG_FILE: &str = "annotations.log";
pub const BLOB_DIR: &str = "blobs";

/// Source of wall-clock time for new annotations.
pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Utc::now()
    }
}

/// Deterministic clock: starts at a fixed instant and advances by a fixed
/// step on every reading. Used for reproducible logs.
#[derive(Debug)]
pub struct SteppingClock {
    next: Mutex<Timestamp>,
    step: Duration,
}

impl SteppingClock {
    pub fn new(start: Timestamp, step: Duration) -> Self {
        Self {
            next: Mutex::new(start),
            step,
        }
    }
}

impl Clock for SteppingClock {
    fn now(&self) -> Timestamp {
        let mut next = self.next.lock().expect("clock poisoned");
        let t = *next;
        *next = t + self.step;
        t
    }
}

#[derive(Debug, Error)]
pub enum WorkbenchError {
    #[error("the dataset has already been fused; the log holds its provenance")]
    AlreadyFused,
    #[error("nothing to fuse: no sources uploaded")]
    NoSources,
    #[error("source `{0}` was already uploaded")]
    DuplicateSource(String),
    #[error("unknown user `{0}`")]
    UnknownUser(String),
    #[error("annotation {0} is not a {1}")]
    WrongKind(AnnotationId, AnnotationKind),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Cleansing(#[from] CleansingError),
    #[error(transparent)]
    Exploration(#[from] ExplorationError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

pub type Result<T, E = WorkbenchError> = std::result::Result<T, E>;

/// An uploaded, parsed source waiting to be fused.
#[derive(Debug, Clone)]
struct PendingSource {
    values: Vec<SourceValue>,
}

#[derive(Debug, Clone, Serialize)]
pub struct UploadReport {
    pub source: String,
    pub values: usize,
    pub data_cells: usize,
    pub warnings: Vec<IngestWarning>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FuseReport {
    pub summary: FuseSummary,
    pub annotations: usize,
    pub warnings: Vec<String>,
}

/// A fused cell as seen by a client: the current value plus the provenance
/// recorded at fusion time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellView {
    pub cell: CellKey,
    pub value: Option<Scalar>,
    pub status: RedundancyStatus,
    pub fused_value: Option<Scalar>,
    pub sources: Vec<ProvenanceSource>,
    pub provenance_id: AnnotationId,
    pub resolution_id: Option<AnnotationId>,
    /// Edits that touched this cell, in log order.
    pub edits: Vec<AnnotationId>,
}

pub struct Workbench {
    users: UserRegistry,
    fusion: FusionConfig,
    pending: BTreeMap<String, PendingSource>,
    log: EventLog,
    base: Dataset,
    current: Dataset,
    blobs: BlobStore,
    clock: Box<dyn Clock>,
}

impl Workbench {
    /// Builds a workbench over an existing (possibly empty) log; the base and
    /// current datasets are reconstructed from it.
    pub fn new(
        users: UserRegistry,
        fusion: FusionConfig,
        log: EventLog,
        blobs: BlobStore,
        clock: Box<dyn Clock>,
    ) -> Result<Self> {
        let base = log.base_dataset();
        let current = log.current_dataset()?;
        Ok(Self {
            users,
            fusion,
            pending: BTreeMap::new(),
            log,
            base,
            current,
            blobs,
            clock,
        })
    }

    pub fn in_memory(users: UserRegistry, fusion: FusionConfig, clock: Box<dyn Clock>) -> Self {
        Self::new(users, fusion, EventLog::in_memory(), BlobStore::in_memory(), clock)
            .expect("empty log replays")
    }

    /// Opens `annotations.log` and `blobs/` inside `dir`.
    pub fn open_dir(
        dir: &Path,
        users: UserRegistry,
        fusion: FusionConfig,
        clock: Box<dyn Clock>,
    ) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|error| StoreError::Io {
            path: dir.to_path_buf(),
            error,
        })?;
        let log = EventLog::open(dir.join(LOG_FILE))?;
        let blobs = BlobStore::open(dir.join(BLOB_DIR))?;
        Self::new(users, fusion, log, blobs, clock)
    }

    pub fn users(&self) -> &UserRegistry {
        &self.users
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn base(&self) -> &Dataset {
        &self.base
    }

    pub fn current(&self) -> &Dataset {
        &self.current
    }

    pub fn blobs(&self) -> &BlobStore {
        &self.blobs
    }

    pub fn is_fused(&self) -> bool {
        self.log
            .events()
            .iter()
            .any(|e| e.annotation.kind() == AnnotationKind::Provenance)
    }

    fn require_user(&self, user_id: &str) -> Result<()> {
        match self.users.get(user_id) {
            Some(_) => Ok(()),
            None => Err(WorkbenchError::UnknownUser(user_id.to_string())),
        }
    }

    /// Parses CSV for one source and keeps it for the next fusion run.
    pub fn add_source(&mut self, descriptor: &SourceDescriptor, csv: &[u8]) -> Result<UploadReport> {
        if self.is_fused() {
            return Err(WorkbenchError::AlreadyFused);
        }
        if self.pending.contains_key(&descriptor.name) {
            return Err(WorkbenchError::DuplicateSource(descriptor.name.clone()));
        }
        let parsed = parse_source_from(descriptor, csv)?;
        let report = UploadReport {
            source: descriptor.name.clone(),
            values: parsed.values.len(),
            data_cells: parsed.data_cells,
            warnings: parsed.warnings,
        };
        self.pending.insert(
            descriptor.name.clone(),
            PendingSource {
                values: parsed.values,
            },
        );
        Ok(report)
    }

    /// Adds already parsed values (e.g. from files read in parallel).
    pub fn add_values(&mut self, name: &str, values: Vec<SourceValue>) -> Result<()> {
        if self.is_fused() {
            return Err(WorkbenchError::AlreadyFused);
        }
        if self.pending.contains_key(name) {
            return Err(WorkbenchError::DuplicateSource(name.to_string()));
        }
        self.pending.insert(name.to_string(), PendingSource { values });
        Ok(())
    }

    /// Fuses every uploaded source and appends the Provenance and Resolution
    /// annotations. A dataset is fused once.
    pub fn fuse(&mut self) -> Result<FuseReport> {
        if self.is_fused() {
            return Err(WorkbenchError::AlreadyFused);
        }
        if self.pending.is_empty() {
            return Err(WorkbenchError::NoSources);
        }
        let values: Vec<SourceValue> = self
            .pending
            .values()
            .flat_map(|p| p.values.iter().cloned())
            .collect();
        let result = fuse(&values, &self.fusion.hierarchies, &self.fusion.tolerance);
        let at = self.clock.now();
        for a in &result.annotations {
            self.log.check(a)?;
        }
        for a in result.annotations.iter().cloned() {
            self.log.append(a, at)?;
        }
        self.base = result.dataset();
        self.current = self.base.clone();
        self.pending.clear();
        Ok(FuseReport {
            summary: result.summary(),
            annotations: result.annotations.len(),
            warnings: result.warnings,
        })
    }

    /// Applies and records a manual edit.
    pub fn edit(&mut self, request: &EditRequest) -> Result<(AnnotationId, Edit)> {
        let at = self.clock.now();
        let mut next = self.current.clone();
        let edit = apply_edit(&mut next, &self.users, request, at)?;
        let id = self.log.append(Annotation::Edit(edit.clone()), at)?;
        self.current = next;
        Ok((id, edit))
    }

    /// Runs a correction rule and records one edit per affected run.
    pub fn rule_edit(&mut self, rule: &CorrectionRule, author: &str) -> Result<Vec<(AnnotationId, Edit)>> {
        let at = self.clock.now();
        let mut next = self.current.clone();
        let edits = apply_rule_edit(&mut next, &self.users, rule, author, at)?;
        for e in &edits {
            self.log.check(&Annotation::Edit(e.clone()))?;
        }
        let mut out = Vec::with_capacity(edits.len());
        for e in edits {
            let id = self.log.append(Annotation::Edit(e.clone()), at)?;
            out.push((id, e));
        }
        self.current = next;
        Ok(out)
    }

    /// An expert's verdict on an edit.
    pub fn vote_edit(&mut self, edit: AnnotationId, verdict: Verdict, user_id: &str) -> Result<(AnnotationId, Vote)> {
        let at = self.clock.now();
        Ok(cleansing::validate_edit(&mut self.log, &self.users, edit, verdict, user_id, at)?)
    }

    /// An expert's verdict on a finding.
    pub fn vote_finding(&mut self, finding: AnnotationId, verdict: Verdict, user_id: &str) -> Result<(AnnotationId, Vote)> {
        self.require_user(user_id)?;
        if let Some(e) = self.log.get(finding) {
            if e.annotation.kind() != AnnotationKind::Finding {
                return Err(WorkbenchError::WrongKind(finding, AnnotationKind::Finding));
            }
        }
        self.vote(finding, verdict, user_id)
    }

    /// An expert's verdict on any votable annotation.
    pub fn vote(&mut self, target: AnnotationId, verdict: Verdict, user_id: &str) -> Result<(AnnotationId, Vote)> {
        let at = self.clock.now();
        Ok(exploration::vote(&mut self.log, &self.users, target, verdict, user_id, at)?)
    }

    /// Records a finding whose data references are fingerprinted against the
    /// current dataset.
    pub fn finding(
        &mut self,
        text: &str,
        snapshot_png: Vec<u8>,
        visible_cells: Vec<CellKey>,
        author: &str,
        allow_empty_refs: bool,
    ) -> Result<(AnnotationId, Finding)> {
        let snapshot = SnapshotBlob::png(snapshot_png)?;
        let at = self.clock.now();
        let request = FindingRequest {
            text: text.to_string(),
            snapshot,
            visible_cells,
            author: author.to_string(),
            allow_empty_refs,
        };
        Ok(exploration::record_finding(
            &mut self.log,
            &self.users,
            &self.blobs,
            &self.current,
            request,
            at,
        )?)
    }

    pub fn comment(&mut self, target: AnnotationId, text: &str, author: &str) -> Result<(AnnotationId, Comment)> {
        let at = self.clock.now();
        Ok(exploration::comment(&mut self.log, &self.users, target, text, author, at)?)
    }

    pub fn feed(&self, include_edits: bool) -> Vec<AnnotationView> {
        annotation_feed(&self.log, &self.users, include_edits)
    }

    /// Step query, optionally narrowed to annotations in the given states.
    /// With a state filter only findings and edits can match.
    pub fn query(
        &self,
        step: Step,
        predicate: &EventPredicate,
        states: Option<&BTreeSet<LifecycleState>>,
    ) -> Vec<&AnnotationEvent> {
        let events = self.log.query(step, predicate);
        match states {
            None => events,
            Some(wanted) => exploration::separate(&self.log, events, wanted),
        }
    }

    /// Fused cells of one entity (or all entities), in key order.
    pub fn cells(&self, entity: Option<&str>, dimension: Option<&str>) -> Vec<CellView> {
        let mut views: BTreeMap<CellKey, CellView> = BTreeMap::new();
        let wanted = |c: &CellKey| {
            entity.is_none_or(|e| c.entity_id == e) && dimension.is_none_or(|d| c.dimension == d)
        };
        for e in self.log.events() {
            match &e.annotation {
                Annotation::Provenance(p) if wanted(&p.cell) => {
                    views.insert(
                        p.cell.clone(),
                        CellView {
                            cell: p.cell.clone(),
                            value: self.current.get(&p.cell).cloned(),
                            status: p.status,
                            fused_value: p.chosen.clone(),
                            sources: p.sources.clone(),
                            provenance_id: e.id(),
                            resolution_id: None,
                            edits: Vec::new(),
                        },
                    );
                }
                Annotation::Resolution(r) => {
                    if let Some(v) = views.get_mut(&r.cell) {
                        v.resolution_id = Some(e.id());
                    }
                }
                Annotation::Edit(edit) => {
                    for c in &edit.changes {
                        if let Some(v) = views.get_mut(&c.cell) {
                            if v.edits.last() != Some(&e.id()) {
                                v.edits.push(e.id());
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        views.into_values().collect()
    }
}
