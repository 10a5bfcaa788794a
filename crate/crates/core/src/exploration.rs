//! Findings, comments, validation votes and the annotation feed.
//!
//! A finding keeps three things: the analyst's text, a snapshot of the
//! visualization (stored as a content-addressed blob), and references to the
//! cells that were on screen, each with a fingerprint of its value at that
//! moment. The fingerprints let [`stale_refs`] report which referenced data
//! changed afterwards.
//!
//! Lifecycle state is never stored; it is derived from the vote annotations
//! each time it is read.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::model::{
    annotation_state, value_fingerprint, Annotation, AnnotationId, AnnotationKind, BlobId,
    CellKey, Comment, DataRef, Finding, LifecycleState, ModelError, Qualification, Timestamp,
    UserRegistry, Verdict, Vote,
};
use crate::store::{AnnotationEvent, EventLog, StoreError};

pub const PNG_MEDIA_TYPE: &str = "image/png";
const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

#[derive(Debug, Error)]
pub enum ExplorationError {
    #[error("{0} must not be empty")]
    EmptyText(&'static str),
    #[error("unknown user `{0}`")]
    UnknownUser(String),
    #[error("unknown target annotation {0}")]
    UnknownTarget(AnnotationId),
    #[error("target not votable: annotation {0} is a {1}")]
    NotVotable(AnnotationId, AnnotationKind),
    #[error("insufficient qualification: user `{0}` is not an expert")]
    InsufficientQualification(String),
    #[error("a finding must reference at least one visible cell")]
    NoDataRefs,
    #[error("invalid snapshot: {0}")]
    InvalidSnapshot(String),
    #[error("snapshot blob {0} not found")]
    BlobNotFound(BlobId),
    #[error("blob store i/o error on {path}: {error}")]
    Io {
        path: PathBuf,
        error: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A stored visualization snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotBlob {
    pub blob_id: BlobId,
    pub media_type: String,
    #[serde(skip)]
    pub payload: Vec<u8>,
}

impl SnapshotBlob {
    /// Wraps PNG bytes; the id is the SHA-256 of the payload.
    pub fn png(payload: Vec<u8>) -> Result<Self, ExplorationError> {
        if payload.is_empty() {
            return Err(ExplorationError::InvalidSnapshot("empty payload".into()));
        }
        if !payload.starts_with(&PNG_SIGNATURE) {
            return Err(ExplorationError::InvalidSnapshot("payload is not a PNG image".into()));
        }
        Ok(Self {
            blob_id: BlobId::of_payload(&payload),
            media_type: PNG_MEDIA_TYPE.into(),
            payload,
        })
    }
}

/// Content-addressed snapshot storage: one file per blob, named by its id.
#[derive(Debug)]
pub struct BlobStore {
    dir: Option<PathBuf>,
    memory: RwLock<HashMap<BlobId, Vec<u8>>>,
}

impl BlobStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, ExplorationError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|error| ExplorationError::Io {
            path: dir.clone(),
            error,
        })?;
        Ok(Self {
            dir: Some(dir),
            memory: RwLock::default(),
        })
    }

    pub fn in_memory() -> Self {
        Self {
            dir: None,
            memory: RwLock::default(),
        }
    }

    /// Stores a blob. Storing the same bytes twice is a no-op.
    pub fn put(&self, blob: &SnapshotBlob) -> Result<(), ExplorationError> {
        debug_assert_eq!(blob.blob_id, BlobId::of_payload(&blob.payload));
        match &self.dir {
            None => {
                self.memory
                    .write()
                    .expect("blob map poisoned")
                    .insert(blob.blob_id.clone(), blob.payload.clone());
                Ok(())
            }
            Some(dir) => {
                let path = dir.join(blob.blob_id.as_str());
                if path.exists() {
                    return Ok(());
                }
                let io = |error| ExplorationError::Io {
                    path: path.clone(),
                    error,
                };
                let tmp = dir.join(format!(".{}.tmp", blob.blob_id));
                let mut f = std::fs::File::create(&tmp).map_err(io)?;
                f.write_all(&blob.payload).map_err(io)?;
                f.sync_all().map_err(io)?;
                std::fs::rename(&tmp, &path).map_err(io)
            }
        }
    }

    pub fn get(&self, id: &BlobId) -> Result<Vec<u8>, ExplorationError> {
        match &self.dir {
            None => self
                .memory
                .read()
                .expect("blob map poisoned")
                .get(id)
                .cloned()
                .ok_or_else(|| ExplorationError::BlobNotFound(id.clone())),
            Some(dir) => match std::fs::read(dir.join(id.as_str())) {
                Ok(bytes) => Ok(bytes),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                    Err(ExplorationError::BlobNotFound(id.clone()))
                }
                Err(error) => Err(ExplorationError::Io {
                    path: dir.join(id.as_str()),
                    error,
                }),
            },
        }
    }

    pub fn contains(&self, id: &BlobId) -> bool {
        match &self.dir {
            None => self.memory.read().expect("blob map poisoned").contains_key(id),
            Some(dir) => dir.join(id.as_str()).is_file(),
        }
    }
}

/// Input for [`record_finding`].
#[derive(Debug, Clone)]
pub struct FindingRequest {
    pub text: String,
    pub snapshot: SnapshotBlob,
    pub visible_cells: Vec<CellKey>,
    pub author: String,
    /// Permit a finding that references no cells.
    pub allow_empty_refs: bool,
}

/// Stores the snapshot and appends a finding.
pub fn record_finding(
    log: &mut EventLog,
    users: &UserRegistry,
    blobs: &BlobStore,
    dataset: &Dataset,
    request: FindingRequest,
    at: Timestamp,
) -> Result<(AnnotationId, Finding), ExplorationError> {
    if request.text.trim().is_empty() {
        return Err(ExplorationError::EmptyText("finding text"));
    }
    if users.get(&request.author).is_none() {
        return Err(ExplorationError::UnknownUser(request.author));
    }
    if request.visible_cells.is_empty() && !request.allow_empty_refs {
        return Err(ExplorationError::NoDataRefs);
    }
    blobs.put(&request.snapshot)?;
    let data_refs = request
        .visible_cells
        .into_iter()
        .map(|cell| DataRef {
            fingerprint: dataset.get(&cell).map(|v| value_fingerprint(&cell.dimension, v)),
            cell,
        })
        .collect();
    let finding = Finding {
        text: request.text,
        snapshot_ref: request.snapshot.blob_id,
        data_refs,
        author: request.author,
        created_at: at,
    };
    let id = log.append(Annotation::Finding(finding.clone()), at)?;
    Ok((id, finding))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Staleness {
    /// The cell still exists with a different value.
    Changed,
    /// The cell had a value and now has none.
    Removed,
    /// The cell had no value and now has one.
    Appeared,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaleRef {
    pub cell: CellKey,
    pub staleness: Staleness,
}

/// Data references whose current value differs from the one seen when the
/// finding was recorded.
pub fn stale_refs(finding: &Finding, dataset: &Dataset) -> Vec<StaleRef> {
    finding
        .data_refs
        .iter()
        .filter_map(|r| {
            let now = dataset
                .get(&r.cell)
                .map(|v| value_fingerprint(&r.cell.dimension, v));
            let staleness = match (&r.fingerprint, &now) {
                (Some(a), Some(b)) if a != b => Staleness::Changed,
                (Some(_), None) => Staleness::Removed,
                (None, Some(_)) => Staleness::Appeared,
                _ => return None,
            };
            Some(StaleRef {
                cell: r.cell.clone(),
                staleness,
            })
        })
        .collect()
}

/// Appends a comment. Any annotation, including another comment, can be
/// commented on.
pub fn comment(
    log: &mut EventLog,
    users: &UserRegistry,
    target: AnnotationId,
    text: &str,
    author: &str,
    at: Timestamp,
) -> Result<(AnnotationId, Comment), ExplorationError> {
    if text.trim().is_empty() {
        return Err(ExplorationError::EmptyText("comment text"));
    }
    if users.get(author).is_none() {
        return Err(ExplorationError::UnknownUser(author.to_string()));
    }
    if log.get(target).is_none() {
        return Err(ExplorationError::UnknownTarget(target));
    }
    let c = Comment {
        target,
        text: text.to_string(),
        author: author.to_string(),
        created_at: at,
    };
    let id = log.append(Annotation::Comment(c.clone()), at)?;
    Ok((id, c))
}

/// Appends an expert's verdict on a finding or edit.
pub fn vote(
    log: &mut EventLog,
    users: &UserRegistry,
    target: AnnotationId,
    verdict: Verdict,
    author: &str,
    at: Timestamp,
) -> Result<(AnnotationId, Vote), ExplorationError> {
    let user = users
        .get(author)
        .ok_or_else(|| ExplorationError::UnknownUser(author.to_string()))?;
    let kind = log
        .get(target)
        .ok_or(ExplorationError::UnknownTarget(target))?
        .annotation
        .kind();
    if !kind.is_votable() {
        return Err(ExplorationError::NotVotable(target, kind));
    }
    let v = Vote::cast(target, verdict, user, at).map_err(|e| match e {
        ModelError::InsufficientQualification(u) => ExplorationError::InsufficientQualification(u),
        other => other.into(),
    })?;
    let id = log.append(Annotation::Vote(v.clone()), at)?;
    Ok((id, v))
}

/// Derived state of an annotation, or `None` if it has no lifecycle.
pub fn state_of(log: &EventLog, id: AnnotationId) -> Option<LifecycleState> {
    let event = log.get(id)?;
    event
        .annotation
        .kind()
        .is_votable()
        .then(|| annotation_state(id, log.votes_for(id)))
}

/// Keeps the annotations whose derived state is wanted, preserving order.
/// Annotations without a lifecycle are never kept.
pub fn separate<'a>(
    log: &EventLog,
    annotations: impl IntoIterator<Item = &'a AnnotationEvent>,
    wanted: &BTreeSet<LifecycleState>,
) -> Vec<&'a AnnotationEvent> {
    let states = vote_states(log);
    annotations
        .into_iter()
        .filter(|e| {
            e.annotation.kind().is_votable()
                && wanted.contains(&states.get(&e.id()).copied().unwrap_or(LifecycleState::Unvalidated))
        })
        .collect()
}

/// State per voted-on annotation, computed in one pass over the log.
fn vote_states(log: &EventLog) -> HashMap<AnnotationId, LifecycleState> {
    let mut by_target: BTreeMap<AnnotationId, Vec<&Vote>> = BTreeMap::new();
    for e in log.events() {
        if let Annotation::Vote(v) = &e.annotation {
            by_target.entry(v.target()).or_default().push(v);
        }
    }
    by_target
        .into_iter()
        .map(|(id, votes)| (id, annotation_state(id, votes)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorProfile {
    pub user_id: String,
    pub display_name: String,
    /// Absent when the author is no longer in the registry.
    pub qualification: Option<Qualification>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub confirms: usize,
    pub rejects: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommentView {
    pub id: AnnotationId,
    pub target: AnnotationId,
    pub author: AuthorProfile,
    pub text: String,
    pub created_at: Timestamp,
}

/// One card of the annotation feed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationView {
    pub id: AnnotationId,
    pub kind: AnnotationKind,
    pub author: AuthorProfile,
    pub thumbnail: Option<BlobId>,
    pub text: String,
    pub data_refs: Vec<CellKey>,
    pub state: LifecycleState,
    pub tally: Tally,
    /// The whole comment thread below this annotation, in sequence order.
    pub comments: Vec<CommentView>,
    pub created_at: Timestamp,
}

fn profile(users: &UserRegistry, user_id: &str) -> AuthorProfile {
    match users.get(user_id) {
        Some(u) => AuthorProfile {
            user_id: u.user_id.clone(),
            display_name: u.display_name.clone(),
            qualification: Some(u.qualification),
        },
        None => AuthorProfile {
            user_id: user_id.to_string(),
            display_name: user_id.to_string(),
            qualification: None,
        },
    }
}

/// Builds the view of a single finding or edit.
pub fn annotation_view(log: &EventLog, users: &UserRegistry, id: AnnotationId) -> Option<AnnotationView> {
    let event = log.get(id)?;
    let (author, thumbnail, text, data_refs, created_at) = match &event.annotation {
        Annotation::Finding(f) => (
            &f.author,
            Some(f.snapshot_ref.clone()),
            f.text.clone(),
            f.data_refs.iter().map(|r| r.cell.clone()).collect(),
            f.created_at,
        ),
        Annotation::Edit(e) => (
            &e.author,
            None,
            e.rationale.clone(),
            e.changes.iter().map(|c| c.cell.clone()).collect(),
            e.created_at,
        ),
        _ => return None,
    };

    let mut tally = Tally::default();
    let mut thread: BTreeSet<AnnotationId> = BTreeSet::from([id]);
    let mut comments = Vec::new();
    for e in &log.events()[event.seq as usize..] {
        match &e.annotation {
            Annotation::Vote(v) if v.target() == id => match v.verdict() {
                Verdict::Confirm => tally.confirms += 1,
                Verdict::Reject => tally.rejects += 1,
            },
            Annotation::Comment(c) if thread.contains(&c.target) => {
                thread.insert(e.id());
                comments.push(CommentView {
                    id: e.id(),
                    target: c.target,
                    author: profile(users, &c.author),
                    text: c.text.clone(),
                    created_at: c.created_at,
                });
            }
            _ => {}
        }
    }
    Some(AnnotationView {
        id,
        kind: event.annotation.kind(),
        author: profile(users, author),
        thumbnail,
        text,
        data_refs,
        state: annotation_state(id, log.votes_for(id)),
        tally,
        comments,
        created_at,
    })
}

/// All findings (and edits, if asked) newest first.
pub fn annotation_feed(log: &EventLog, users: &UserRegistry, include_edits: bool) -> Vec<AnnotationView> {
    log.events()
        .iter()
        .rev()
        .filter(|e| match e.annotation.kind() {
            AnnotationKind::Finding => true,
            AnnotationKind::Edit => include_edits,
            _ => false,
        })
        .filter_map(|e| annotation_view(log, users, e.id()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Scalar, User};
    use chrono::{TimeZone, Utc};

    fn ts(day: u32) -> Timestamp {
        Utc.with_ymd_and_hms(2019, 3, day, 10, 0, 0).unwrap()
    }

    fn key(entity: &str, day: u32) -> CellKey {
        CellKey::new(entity, "va", ts(day)).unwrap()
    }

    fn png(tag: &[u8]) -> SnapshotBlob {
        let mut bytes = PNG_SIGNATURE.to_vec();
        bytes.extend_from_slice(tag);
        SnapshotBlob::png(bytes).unwrap()
    }

    fn users() -> UserRegistry {
        UserRegistry::new([
            User::new("ana", "Ana", Qualification::Analyst),
            User::new("eve", "Eve", Qualification::Expert),
            User::new("eli", "Eli", Qualification::Expert),
        ])
        .unwrap()
    }

    fn dataset() -> Dataset {
        (1..=3)
            .map(|d| (key("P1", d), Scalar::numeric(0.1 * d as f64).unwrap()))
            .collect()
    }

    fn request(text: &str, cells: Vec<CellKey>) -> FindingRequest {
        FindingRequest {
            text: text.into(),
            snapshot: png(text.as_bytes()),
            visible_cells: cells,
            author: "ana".into(),
            allow_empty_refs: false,
        }
    }

    struct Fixture {
        log: EventLog,
        users: UserRegistry,
        blobs: BlobStore,
        data: Dataset,
    }

    impl Fixture {
        fn new() -> Self {
            Self {
                log: EventLog::in_memory(),
                users: users(),
                blobs: BlobStore::in_memory(),
                data: dataset(),
            }
        }

        fn finding(&mut self, text: &str) -> AnnotationId {
            let cells = vec![key("P1", 1), key("P1", 2), key("P1", 3)];
            record_finding(&mut self.log, &self.users, &self.blobs, &self.data, request(text, cells), ts(10))
                .unwrap()
                .0
        }
    }

    #[test]
    fn snapshot_must_be_non_empty_png() {
        assert!(SnapshotBlob::png(vec![]).is_err());
        assert!(SnapshotBlob::png(b"GIF89a".to_vec()).is_err());
    }

    #[test]
    fn record_finding_keeps_refs_and_blob() {
        let mut f = Fixture::new();
        let req = request(
            "acuity drop after medication switch",
            vec![key("P1", 1), key("P1", 2), key("P1", 3)],
        );
        let blob = req.snapshot.clone();
        let (_, finding) =
            record_finding(&mut f.log, &f.users, &f.blobs, &f.data, req, ts(10)).unwrap();
        assert_eq!(finding.data_refs.len(), 3);
        assert_eq!(f.blobs.get(&finding.snapshot_ref).unwrap(), blob.payload);
    }

    #[test]
    fn record_finding_errors() {
        let mut f = Fixture::new();
        let empty = request(" ", vec![key("P1", 1)]);
        assert!(matches!(
            record_finding(&mut f.log, &f.users, &f.blobs, &f.data, empty, ts(1)),
            Err(ExplorationError::EmptyText(_))
        ));
        let mut stranger = request("x", vec![key("P1", 1)]);
        stranger.author = "zed".into();
        assert!(matches!(
            record_finding(&mut f.log, &f.users, &f.blobs, &f.data, stranger, ts(1)),
            Err(ExplorationError::UnknownUser(_))
        ));
        let no_refs = request("x", vec![]);
        assert!(matches!(
            record_finding(&mut f.log, &f.users, &f.blobs, &f.data, no_refs.clone(), ts(1)),
            Err(ExplorationError::NoDataRefs)
        ));
        let allowed = FindingRequest { allow_empty_refs: true, ..no_refs };
        assert!(record_finding(&mut f.log, &f.users, &f.blobs, &f.data, allowed, ts(1)).is_ok());
        assert_eq!(f.log.len(), 1);
    }

    #[test]
    fn stale_check_flags_edited_ref() {
        let mut f = Fixture::new();
        let id = f.finding("trend");
        let Annotation::Finding(finding) = &f.log.get(id).unwrap().annotation else {
            panic!()
        };
        assert!(stale_refs(finding, &f.data).is_empty());
        f.data.insert(key("P1", 2), Scalar::numeric(0.9).unwrap());
        // independent comparison: recompute each fingerprint by hand
        let changed: Vec<&CellKey> = finding
            .data_refs
            .iter()
            .filter(|r| r.fingerprint.as_deref() != f.data.get(&r.cell).map(|v| value_fingerprint("va", v)).as_deref())
            .map(|r| &r.cell)
            .collect();
        let stale = stale_refs(finding, &f.data);
        assert_eq!(stale.len(), 1);
        assert_eq!(changed, vec![&stale[0].cell]);
        assert_eq!(stale[0].staleness, Staleness::Changed);
    }

    #[test]
    fn comments_thread_and_reject_unknown_targets() {
        let mut f = Fixture::new();
        let id = f.finding("a");
        let (c1, c) = comment(&mut f.log, &f.users, id, "agree", "ana", ts(11)).unwrap();
        assert_eq!(c.target, id);
        let (c2, _) = comment(&mut f.log, &f.users, c1, "why?", "eve", ts(12)).unwrap();
        assert!(matches!(
            comment(&mut f.log, &f.users, AnnotationId(77), "x", "ana", ts(12)),
            Err(ExplorationError::UnknownTarget(_))
        ));
        let view = annotation_view(&f.log, &f.users, id).unwrap();
        let ids: Vec<_> = view.comments.iter().map(|c| c.id).collect();
        assert_eq!(ids, vec![c1, c2]);
        assert_eq!(state_of(&f.log, id), Some(LifecycleState::Unvalidated));
    }

    #[test]
    fn vote_examples() {
        let mut f = Fixture::new();
        let id = f.finding("a");
        vote(&mut f.log, &f.users, id, Verdict::Confirm, "eve", ts(11)).unwrap();
        assert_eq!(state_of(&f.log, id), Some(LifecycleState::Valid));

        let (cid, _) = comment(&mut f.log, &f.users, id, "note", "ana", ts(12)).unwrap();
        let err = vote(&mut f.log, &f.users, cid, Verdict::Confirm, "eve", ts(13)).unwrap_err();
        assert!(matches!(err, ExplorationError::NotVotable(_, AnnotationKind::Comment)));
        assert!(err.to_string().starts_with("target not votable"));

        let err = vote(&mut f.log, &f.users, id, Verdict::Reject, "ana", ts(13)).unwrap_err();
        assert!(matches!(err, ExplorationError::InsufficientQualification(_)));
        assert_eq!(state_of(&f.log, id), Some(LifecycleState::Valid));
    }

    #[test]
    fn interleaved_votes_of_two_experts_follow_latest_verdict() {
        // exhaustive: every verdict sequence of length <= 4, alternating authors
        for len in 0..=4u32 {
            for mask in 0..(1u32 << len) {
                let mut f = Fixture::new();
                let id = f.finding("a");
                let mut expected = LifecycleState::Unvalidated;
                for i in 0..len {
                    let verdict = if mask >> i & 1 == 1 { Verdict::Reject } else { Verdict::Confirm };
                    let author = if i % 2 == 0 { "eve" } else { "eli" };
                    vote(&mut f.log, &f.users, id, verdict, author, ts(11)).unwrap();
                    expected = match verdict {
                        Verdict::Confirm => LifecycleState::Valid,
                        Verdict::Reject => LifecycleState::Invalid,
                    };
                }
                assert_eq!(state_of(&f.log, id), Some(expected));
            }
        }
    }

    #[test]
    fn separate_examples() {
        let mut f = Fixture::new();
        // five findings with known histories
        let ids: Vec<AnnotationId> = (0..5).map(|i| f.finding(&format!("f{i}"))).collect();
        let history: [&[Verdict]; 5] = [
            &[],
            &[Verdict::Confirm],
            &[Verdict::Reject],
            &[Verdict::Confirm, Verdict::Reject],
            &[Verdict::Reject, Verdict::Confirm],
        ];
        for (id, votes) in ids.iter().zip(history) {
            for v in votes {
                vote(&mut f.log, &f.users, *id, *v, "eve", ts(12)).unwrap();
            }
        }
        let findings: Vec<&AnnotationEvent> = ids.iter().map(|id| f.log.get(*id).unwrap()).collect();
        let all: BTreeSet<_> = LifecycleState::ALL.into();
        let everything = separate(&f.log, findings.iter().copied(), &all);
        assert_eq!(everything, findings);
        assert!(separate(&f.log, findings.iter().copied(), &BTreeSet::new()).is_empty());

        let count = |s: LifecycleState| separate(&f.log, findings.iter().copied(), &[s].into()).len();
        // hand-derived: unvalidated {0}, valid {1, 4}, invalid {2, 3}
        assert_eq!(count(LifecycleState::Unvalidated), 1);
        assert_eq!(count(LifecycleState::Valid), 2);
        assert_eq!(count(LifecycleState::Invalid), 2);
        for id in &ids {
            let oracle = annotation_state(*id, f.log.votes_for(*id));
            assert_eq!(state_of(&f.log, *id), Some(oracle));
        }
    }

    #[test]
    fn feed_examples() {
        let mut f = Fixture::new();
        assert!(annotation_feed(&f.log, &f.users, false).is_empty());
        let first = f.finding("first");
        let second = f.finding("second");
        for (verdict, who) in [(Verdict::Confirm, "eve"), (Verdict::Reject, "eli"), (Verdict::Confirm, "eli")] {
            vote(&mut f.log, &f.users, first, verdict, who, ts(12)).unwrap();
        }
        let feed = annotation_feed(&f.log, &f.users, false);
        let order: Vec<_> = feed.iter().map(|v| v.id).collect();
        assert_eq!(order, vec![second, first]);
        assert_eq!(feed[1].tally, Tally { confirms: 2, rejects: 1 });
        assert_eq!(feed[1].state, LifecycleState::Valid);
        assert_eq!(feed[1].author.display_name, "Ana");
        assert!(feed[1].thumbnail.is_some());
    }

    #[test]
    fn blob_store_on_disk_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let store = BlobStore::open(dir.path().join("blobs")).unwrap();
        let blob = png(b"payload");
        store.put(&blob).unwrap();
        store.put(&blob).unwrap();
        assert!(store.contains(&blob.blob_id));
        assert_eq!(store.get(&blob.blob_id).unwrap(), blob.payload);
        let missing = BlobId::of_payload(b"nope");
        assert!(matches!(store.get(&missing), Err(ExplorationError::BlobNotFound(_))));
    }
}
