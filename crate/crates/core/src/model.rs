//! Shared domain vocabulary: cells, observed values, annotations, users and
//! the derived validation lifecycle.
//!
//! Everything here is a plain value type. Constructors validate invariants and
//! deserialization goes through the same checks, so an instance that exists is
//! an instance that is well-formed.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub type Timestamp = DateTime<Utc>;

/// Default relative tolerance for numeric value comparison.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("numeric value must be finite, got {0}")]
    NonFinite(f64),
    #[error("schema mismatch: cannot compare {left} with {right}")]
    SchemaMismatch { left: String, right: String },
    #[error("hierarchy for `{dimension}` lists source `{source_name}` more than once")]
    DuplicateSource { dimension: String, source_name: String },
    #[error("duplicate user id `{0}`")]
    DuplicateUser(String),
    #[error("insufficient qualification: user `{0}` is not an expert")]
    InsufficientQualification(String),
    #[error("interval start {from} is after end {to}")]
    InvertedInterval { from: Timestamp, to: Timestamp },
    #[error("invalid blob id `{0}`")]
    InvalidBlobId(String),
    #[error("edit must change at least one cell")]
    EmptyEdit,
    #[error("{0}")]
    Invalid(String),
}

/// Identifies one data point: an entity's dimension at a point in time.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawCellKey")]
pub struct CellKey {
    pub entity_id: String,
    pub dimension: String,
    pub observed_at: Timestamp,
}

#[derive(Deserialize)]
struct RawCellKey {
    entity_id: String,
    dimension: String,
    observed_at: Timestamp,
}

impl TryFrom<RawCellKey> for CellKey {
    type Error = ModelError;
    fn try_from(raw: RawCellKey) -> Result<Self, Self::Error> {
        CellKey::new(raw.entity_id, raw.dimension, raw.observed_at)
    }
}

impl CellKey {
    /// Builds a key; the timestamp is truncated to whole seconds.
    pub fn new(
        entity_id: impl Into<String>,
        dimension: impl Into<String>,
        observed_at: Timestamp,
    ) -> Result<Self, ModelError> {
        let entity_id = entity_id.into();
        let dimension = dimension.into();
        if entity_id.is_empty() {
            return Err(ModelError::Empty("entity_id"));
        }
        if dimension.is_empty() {
            return Err(ModelError::Empty("dimension"));
        }
        Ok(Self {
            entity_id,
            dimension,
            observed_at: observed_at.trunc_subsecs(0),
        })
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}@{}",
            self.entity_id,
            self.dimension,
            self.observed_at.format("%Y-%m-%dT%H:%M:%SZ")
        )
    }
}

/// A single observed value: a finite number with an optional unit tag, or a
/// categorical label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "RawScalar")]
pub enum Scalar {
    Numeric {
        value: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        unit: Option<String>,
    },
    Categorical {
        value: String,
    },
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RawScalar {
    Numeric {
        value: f64,
        #[serde(default)]
        unit: Option<String>,
    },
    Categorical {
        value: String,
    },
}

impl TryFrom<RawScalar> for Scalar {
    type Error = ModelError;
    fn try_from(raw: RawScalar) -> Result<Self, Self::Error> {
        match raw {
            RawScalar::Numeric { value, unit } => Scalar::numeric_with_unit(value, unit),
            RawScalar::Categorical { value } => Ok(Scalar::Categorical { value }),
        }
    }
}

/// The two value kinds; a dimension holds values of one kind only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Numeric,
    Categorical,
}

impl Scalar {
    pub fn numeric(value: f64) -> Result<Self, ModelError> {
        Self::numeric_with_unit(value, None)
    }

    pub fn numeric_with_unit(value: f64, unit: Option<String>) -> Result<Self, ModelError> {
        if !value.is_finite() {
            return Err(ModelError::NonFinite(value));
        }
        Ok(Scalar::Numeric { value, unit })
    }

    pub fn categorical(value: impl Into<String>) -> Self {
        Scalar::Categorical {
            value: value.into(),
        }
    }

    pub fn kind(&self) -> ValueKind {
        match self {
            Scalar::Numeric { .. } => ValueKind::Numeric,
            Scalar::Categorical { .. } => ValueKind::Categorical,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Scalar::Numeric { value, .. } => Some(*value),
            Scalar::Categorical { .. } => None,
        }
    }

    pub fn unit(&self) -> Option<&str> {
        match self {
            Scalar::Numeric { unit, .. } => unit.as_deref(),
            Scalar::Categorical { .. } => None,
        }
    }

    fn describe_kind(&self) -> String {
        match self {
            Scalar::Numeric { unit: Some(u), .. } => format!("numeric[{u}]"),
            Scalar::Numeric { unit: None, .. } => "numeric".to_string(),
            Scalar::Categorical { .. } => "categorical".to_string(),
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Numeric { value, unit: None } => write!(f, "{value}"),
            Scalar::Numeric {
                value,
                unit: Some(u),
            } => write!(f, "{value} {u}"),
            Scalar::Categorical { value } => f.write_str(value),
        }
    }
}

/// Compares two values of the same kind.
///
/// Categorical values match exactly (case-sensitive). Numeric values match
/// when `|a - b| <= tol * max(|a|, |b|, 1)`. Numeric values carrying different
/// unit tags are a schema mismatch, as are mixed kinds.
pub fn values_equal(a: &Scalar, b: &Scalar, tol: f64) -> Result<bool, ModelError> {
    match (a, b) {
        (Scalar::Categorical { value: x }, Scalar::Categorical { value: y }) => Ok(x == y),
        (Scalar::Numeric { value: x, unit: ux }, Scalar::Numeric { value: y, unit: uy })
            if ux == uy =>
        {
            let scale = x.abs().max(y.abs()).max(1.0);
            Ok((x - y).abs() <= tol * scale)
        }
        _ => Err(ModelError::SchemaMismatch {
            left: a.describe_kind(),
            right: b.describe_kind(),
        }),
    }
}

/// Per-dimension numeric tolerance with a global default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    #[serde(default = "default_tolerance")]
    pub default: f64,
    #[serde(default)]
    pub per_dimension: BTreeMap<String, f64>,
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            default: DEFAULT_TOLERANCE,
            per_dimension: BTreeMap::new(),
        }
    }
}

impl Tolerance {
    pub fn uniform(tol: f64) -> Self {
        Self {
            default: tol,
            per_dimension: BTreeMap::new(),
        }
    }

    pub fn for_dimension(&self, dimension: &str) -> f64 {
        self.per_dimension
            .get(dimension)
            .copied()
            .unwrap_or(self.default)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reliability {
    Primary,
    Secondary,
}

/// One source's reading of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceValue {
    pub cell: CellKey,
    pub value: Scalar,
    pub source: String,
    pub recorded_at: Timestamp,
    pub reliability: Reliability,
}

impl SourceValue {
    pub fn new(
        cell: CellKey,
        value: Scalar,
        source: impl Into<String>,
        recorded_at: Timestamp,
        reliability: Reliability,
    ) -> Result<Self, ModelError> {
        let source = source.into();
        if source.is_empty() {
            return Err(ModelError::Empty("source"));
        }
        Ok(Self {
            cell,
            value,
            source,
            recorded_at: recorded_at.trunc_subsecs(0),
            reliability,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RedundancyStatus {
    SingleSource,
    RedundantConsistent,
    Discrepant,
}

impl RedundancyStatus {
    pub fn label(self) -> &'static str {
        match self {
            RedundancyStatus::SingleSource => "single-source",
            RedundancyStatus::RedundantConsistent => "redundant",
            RedundancyStatus::Discrepant => "discrepant",
        }
    }
}

/// The fused view of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedCell {
    pub cell: CellKey,
    pub chosen: Option<Scalar>,
    /// Source the chosen value was taken from.
    pub chosen_source: Option<String>,
    pub status: RedundancyStatus,
    pub contributing: Vec<SourceValue>,
    /// True when a source hierarchy decided a discrepancy.
    pub resolved_by_hierarchy: bool,
}

impl FusedCell {
    pub fn check_invariants(&self) -> Result<(), ModelError> {
        let fail = |msg: &str| Err(ModelError::Invalid(format!("fused cell {}: {msg}", self.cell)));
        if self.contributing.is_empty() {
            return fail("no contributing values");
        }
        if self.contributing.iter().any(|v| v.cell != self.cell) {
            return fail("contributing value for a different cell");
        }
        match self.status {
            RedundancyStatus::SingleSource if self.contributing.len() != 1 => {
                return fail("single-source cell with several contributions")
            }
            RedundancyStatus::Discrepant => {
                if self.chosen.is_some() != self.resolved_by_hierarchy {
                    return fail("discrepant cell has a value iff a hierarchy resolved it");
                }
            }
            _ if self.chosen.is_none() => return fail("non-discrepant cell without a value"),
            _ => {}
        }
        if let Some(chosen) = &self.chosen {
            if !self.contributing.iter().any(|v| &v.value == chosen) {
                return fail("chosen value is not one of the contributions");
            }
        }
        Ok(())
    }
}

/// Per-dimension source priority, highest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawHierarchy")]
pub struct SourceHierarchy {
    pub dimension: String,
    pub priority: Vec<String>,
}

#[derive(Deserialize)]
struct RawHierarchy {
    dimension: String,
    priority: Vec<String>,
}

impl TryFrom<RawHierarchy> for SourceHierarchy {
    type Error = ModelError;
    fn try_from(raw: RawHierarchy) -> Result<Self, Self::Error> {
        SourceHierarchy::new(raw.dimension, raw.priority)
    }
}

impl SourceHierarchy {
    pub fn new(dimension: impl Into<String>, priority: Vec<String>) -> Result<Self, ModelError> {
        let dimension = dimension.into();
        if dimension.is_empty() {
            return Err(ModelError::Empty("hierarchy dimension"));
        }
        if priority.is_empty() {
            return Err(ModelError::Empty("hierarchy priority"));
        }
        for (i, s) in priority.iter().enumerate() {
            if priority[..i].contains(s) {
                return Err(ModelError::DuplicateSource {
                    dimension,
                    source_name: s.clone(),
                });
            }
        }
        Ok(Self {
            dimension,
            priority,
        })
    }

    /// Position of `source` in the priority list; lower is better.
    pub fn rank(&self, source: &str) -> Option<usize> {
        self.priority.iter().position(|s| s == source)
    }

    /// Human-readable rule, e.g. `resolved by hierarchy va: a > b`.
    pub fn rule_text(&self) -> String {
        format!(
            "resolved by hierarchy {}: {}",
            self.dimension,
            self.priority.join(" > ")
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Qualification {
    Analyst,
    Expert,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct User {
    pub user_id: String,
    pub display_name: String,
    pub qualification: Qualification,
}

impl User {
    pub fn new(
        user_id: impl Into<String>,
        display_name: impl Into<String>,
        qualification: Qualification,
    ) -> Self {
        Self {
            user_id: user_id.into(),
            display_name: display_name.into(),
            qualification,
        }
    }

    pub fn is_expert(&self) -> bool {
        self.qualification == Qualification::Expert
    }
}

/// Static set of known users, keyed by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UserRegistry {
    users: BTreeMap<String, User>,
}

impl UserRegistry {
    pub fn new(users: impl IntoIterator<Item = User>) -> Result<Self, ModelError> {
        let mut map = BTreeMap::new();
        for user in users {
            if user.user_id.is_empty() {
                return Err(ModelError::Empty("user_id"));
            }
            if map.contains_key(&user.user_id) {
                return Err(ModelError::DuplicateUser(user.user_id));
            }
            map.insert(user.user_id.clone(), user);
        }
        Ok(Self { users: map })
    }

    /// Reads a JSON array of users, or an object with a `users` array.
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum File {
            List(Vec<User>),
            Wrapped { users: Vec<User> },
        }
        let file: File = serde_json::from_str(text)
            .map_err(|e| ModelError::Invalid(format!("user registry: {e}")))?;
        match file {
            File::List(users) | File::Wrapped { users } => Self::new(users),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ModelError::Invalid(format!("cannot read user registry {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    pub fn get(&self, user_id: &str) -> Option<&User> {
        self.users.get(user_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &User> {
        self.users.values()
    }
}

/// Annotation identifier. Equal to the sequence number the log assigned.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct AnnotationId(pub u64);

impl fmt::Display for AnnotationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for AnnotationId {
    type Err = std::num::ParseIntError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(AnnotationId)
    }
}

/// Content address of a snapshot blob: lowercase hex SHA-256 of the payload.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct BlobId(String);

impl BlobId {
    pub fn of_payload(payload: &[u8]) -> Self {
        BlobId(hex::encode(Sha256::digest(payload)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for BlobId {
    type Error = ModelError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        let ok = s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        if ok {
            Ok(BlobId(s))
        } else {
            Err(ModelError::InvalidBlobId(s))
        }
    }
}

impl From<BlobId> for String {
    fn from(id: BlobId) -> Self {
        id.0
    }
}

impl fmt::Display for BlobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Which part of the dataset an edit touches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scope", rename_all = "snake_case")]
pub enum EditScope {
    SingleCell {
        cell: CellKey,
    },
    DimensionRange {
        entity_id: String,
        dimension: String,
        from: Timestamp,
        to: Timestamp,
    },
    EntityWide {
        entity_id: String,
    },
}

impl EditScope {
    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            EditScope::SingleCell { .. } => Ok(()),
            EditScope::DimensionRange {
                entity_id,
                dimension,
                from,
                to,
            } => {
                if entity_id.is_empty() {
                    return Err(ModelError::Empty("entity_id"));
                }
                if dimension.is_empty() {
                    return Err(ModelError::Empty("dimension"));
                }
                if from > to {
                    return Err(ModelError::InvertedInterval {
                        from: *from,
                        to: *to,
                    });
                }
                Ok(())
            }
            EditScope::EntityWide { entity_id } if entity_id.is_empty() => {
                Err(ModelError::Empty("entity_id"))
            }
            EditScope::EntityWide { .. } => Ok(()),
        }
    }

    pub fn contains(&self, cell: &CellKey) -> bool {
        match self {
            EditScope::SingleCell { cell: c } => c == cell,
            EditScope::DimensionRange {
                entity_id,
                dimension,
                from,
                to,
            } => {
                &cell.entity_id == entity_id
                    && &cell.dimension == dimension
                    && cell.observed_at >= *from
                    && cell.observed_at <= *to
            }
            EditScope::EntityWide { entity_id } => &cell.entity_id == entity_id,
        }
    }
}

/// Before/after value of one cell touched by an edit. `old` is absent when
/// the edit created the cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellChange {
    pub cell: CellKey,
    pub old: Option<Scalar>,
    pub new: Scalar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceSource {
    pub source: String,
    pub value: Scalar,
    pub recorded_at: Timestamp,
    pub reliability: Reliability,
}

/// Automatic record of which sources fed a cell and how they relate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub cell: CellKey,
    pub status: RedundancyStatus,
    /// Value the fused dataset starts from; absent for unresolved discrepancies.
    pub chosen: Option<Scalar>,
    pub sources: Vec<ProvenanceSource>,
}

/// Automatic record of the hierarchy rule that picked a discrepant cell's value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub cell: CellKey,
    pub chosen_source: String,
    pub chosen_value: Scalar,
    pub hierarchy_snapshot: SourceHierarchy,
    pub rule_text: String,
}

/// A manual or rule-driven correction with a full before/after snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edit {
    pub scope: EditScope,
    pub changes: Vec<CellChange>,
    pub author: String,
    pub rationale: String,
    /// Description of the automatic rule; absent for manual edits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_set: Option<String>,
    pub created_at: Timestamp,
}

impl Edit {
    pub fn is_automatic(&self) -> bool {
        self.rule_set.is_some()
    }

    pub fn old_values(&self) -> impl Iterator<Item = Option<&Scalar>> {
        self.changes.iter().map(|c| c.old.as_ref())
    }

    pub fn new_values(&self) -> impl Iterator<Item = &Scalar> {
        self.changes.iter().map(|c| &c.new)
    }
}

/// Reference to a data point visible when a finding was recorded, with a
/// fingerprint of its value at that time (absent if the cell had no value).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataRef {
    pub cell: CellKey,
    pub fingerprint: Option<String>,
}

/// Externalized insight: verbalization, visualization snapshot and data refs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub text: String,
    pub snapshot_ref: BlobId,
    pub data_refs: Vec<DataRef>,
    pub author: String,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comment {
    pub target: AnnotationId,
    pub text: String,
    pub author: String,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Confirm,
    Reject,
}

/// A validation verdict. Only experts can cast one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    target: AnnotationId,
    verdict: Verdict,
    author: String,
    created_at: Timestamp,
}

impl Vote {
    pub fn cast(
        target: AnnotationId,
        verdict: Verdict,
        author: &User,
        created_at: Timestamp,
    ) -> Result<Self, ModelError> {
        if !author.is_expert() {
            return Err(ModelError::InsufficientQualification(
                author.user_id.clone(),
            ));
        }
        Ok(Self {
            target,
            verdict,
            author: author.user_id.clone(),
            created_at,
        })
    }

    pub fn target(&self) -> AnnotationId {
        self.target
    }

    pub fn verdict(&self) -> Verdict {
        self.verdict
    }

    pub fn author(&self) -> &str {
        &self.author
    }

    pub fn created_at(&self) -> Timestamp {
        self.created_at
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Annotation {
    Provenance(Provenance),
    Resolution(Resolution),
    Edit(Edit),
    Finding(Finding),
    Comment(Comment),
    Vote(Vote),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationKind {
    Provenance,
    Resolution,
    Edit,
    Finding,
    Comment,
    Vote,
}

impl AnnotationKind {
    /// Edits and findings carry a validation lifecycle.
    pub fn is_votable(self) -> bool {
        matches!(self, AnnotationKind::Edit | AnnotationKind::Finding)
    }
}

impl fmt::Display for AnnotationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AnnotationKind::Provenance => "provenance",
            AnnotationKind::Resolution => "resolution",
            AnnotationKind::Edit => "edit",
            AnnotationKind::Finding => "finding",
            AnnotationKind::Comment => "comment",
            AnnotationKind::Vote => "vote",
        };
        f.write_str(s)
    }
}

impl Annotation {
    pub fn kind(&self) -> AnnotationKind {
        match self {
            Annotation::Provenance(_) => AnnotationKind::Provenance,
            Annotation::Resolution(_) => AnnotationKind::Resolution,
            Annotation::Edit(_) => AnnotationKind::Edit,
            Annotation::Finding(_) => AnnotationKind::Finding,
            Annotation::Comment(_) => AnnotationKind::Comment,
            Annotation::Vote(_) => AnnotationKind::Vote,
        }
    }

    /// The annotation this one is about, for comments and votes.
    pub fn target(&self) -> Option<AnnotationId> {
        match self {
            Annotation::Comment(c) => Some(c.target),
            Annotation::Vote(v) => Some(v.target),
            _ => None,
        }
    }

    pub fn author(&self) -> Option<&str> {
        match self {
            Annotation::Edit(e) => Some(&e.author),
            Annotation::Finding(f) => Some(&f.author),
            Annotation::Comment(c) => Some(&c.author),
            Annotation::Vote(v) => Some(&v.author),
            _ => None,
        }
    }

    /// Checks the per-variant invariants that do not need the log.
    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            Annotation::Provenance(p) => {
                if p.sources.is_empty() {
                    return Err(ModelError::Empty("provenance sources"));
                }
                if p.status == RedundancyStatus::SingleSource && p.sources.len() != 1 {
                    return Err(ModelError::Invalid(
                        "single-source provenance must list exactly one source".into(),
                    ));
                }
                if p.status != RedundancyStatus::Discrepant && p.chosen.is_none() {
                    return Err(ModelError::Invalid(
                        "non-discrepant provenance must carry the chosen value".into(),
                    ));
                }
                Ok(())
            }
            Annotation::Resolution(r) => {
                if r.hierarchy_snapshot.rank(&r.chosen_source).is_none() {
                    return Err(ModelError::Invalid(format!(
                        "chosen source `{}` is not in the hierarchy",
                        r.chosen_source
                    )));
                }
                if r.hierarchy_snapshot.dimension != r.cell.dimension {
                    return Err(ModelError::Invalid(
                        "hierarchy dimension differs from the cell's".into(),
                    ));
                }
                Ok(())
            }
            Annotation::Edit(e) => {
                e.scope.validate()?;
                if e.changes.is_empty() {
                    return Err(ModelError::EmptyEdit);
                }
                if e.author.is_empty() {
                    return Err(ModelError::Empty("author"));
                }
                match &e.rule_set {
                    Some(rule) if rule.trim().is_empty() => Err(ModelError::Empty("rule_set")),
                    None if e.rationale.trim().is_empty() => Err(ModelError::Empty("rationale")),
                    _ => Ok(()),
                }?;
                if let Some(c) = e.changes.iter().find(|c| !e.scope.contains(&c.cell)) {
                    return Err(ModelError::Invalid(format!(
                        "changed cell {} lies outside the edit scope",
                        c.cell
                    )));
                }
                Ok(())
            }
            Annotation::Finding(f) => {
                if f.text.trim().is_empty() {
                    return Err(ModelError::Empty("finding text"));
                }
                if f.author.is_empty() {
                    return Err(ModelError::Empty("author"));
                }
                Ok(())
            }
            Annotation::Comment(c) => {
                if c.text.trim().is_empty() {
                    return Err(ModelError::Empty("comment text"));
                }
                if c.author.is_empty() {
                    return Err(ModelError::Empty("author"));
                }
                Ok(())
            }
            Annotation::Vote(v) => {
                if v.author.is_empty() {
                    return Err(ModelError::Empty("author"));
                }
                Ok(())
            }
        }
    }
}

/// Validation state of an edit or finding, always derived from its votes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleState {
    Unvalidated,
    Valid,
    Invalid,
}

impl LifecycleState {
    pub const ALL: [LifecycleState; 3] = [
        LifecycleState::Unvalidated,
        LifecycleState::Valid,
        LifecycleState::Invalid,
    ];

    pub fn label(self) -> &'static str {
        match self {
            LifecycleState::Unvalidated => "unvalidated",
            LifecycleState::Valid => "valid",
            LifecycleState::Invalid => "invalid",
        }
    }
}

impl FromStr for LifecycleState {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unvalidated" => Ok(LifecycleState::Unvalidated),
            "valid" => Ok(LifecycleState::Valid),
            "invalid" => Ok(LifecycleState::Invalid),
            other => Err(ModelError::Invalid(format!("unknown state `{other}`"))),
        }
    }
}

/// Derives the lifecycle state of `target` from votes given in sequence
/// order. Votes for other targets are ignored; the latest verdict wins.
pub fn annotation_state<'a>(
    target: AnnotationId,
    votes: impl IntoIterator<Item = &'a Vote>,
) -> LifecycleState {
    votes
        .into_iter()
        .filter(|v| v.target == target)
        .last()
        .map_or(LifecycleState::Unvalidated, |v| match v.verdict {
            Verdict::Confirm => LifecycleState::Valid,
            Verdict::Reject => LifecycleState::Invalid,
        })
}

/// Fingerprint of a value as seen in a given dimension. Used by findings to
/// detect later changes without keeping copies of the data.
pub fn value_fingerprint(dimension: &str, value: &Scalar) -> String {
    let mut hasher = Sha256::new();
    hasher.update(dimension.as_bytes());
    hasher.update([0]);
    match value {
        Scalar::Numeric { value, unit } => {
            hasher.update(b"n");
            hasher.update(value.to_bits().to_be_bytes());
            hasher.update(unit.as_deref().unwrap_or("").as_bytes());
        }
        Scalar::Categorical { value } => {
            hasher.update(b"c");
            hasher.update(value.as_bytes());
        }
    }
    hex::encode(&Sha256::digest(hasher.finalize())[..16])
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn ts(h: u32) -> Timestamp {
        Utc.with_ymd_and_hms(2019, 3, 1, h, 0, 0).unwrap()
    }

    fn expert(id: &str) -> User {
        User::new(id, id, Qualification::Expert)
    }

    fn vote(verdict: Verdict, target: u64) -> Vote {
        Vote::cast(AnnotationId(target), verdict, &expert("e"), ts(1)).unwrap()
    }

    #[test]
    fn cell_key_rejects_empty_fields() {
        assert_eq!(
            CellKey::new("", "va", ts(0)),
            Err(ModelError::Empty("entity_id"))
        );
        assert!(CellKey::new("P1", "", ts(0)).is_err());
        let json = r#"{"entity_id":"","dimension":"va","observed_at":"2019-03-01T00:00:00Z"}"#;
        assert!(serde_json::from_str::<CellKey>(json).is_err());
    }

    #[test]
    fn cell_key_truncates_to_seconds() {
        let t = ts(10) + chrono::Duration::milliseconds(750);
        let k = CellKey::new("P1", "va", t).unwrap();
        assert_eq!(k.observed_at, ts(10));
    }

    #[test]
    fn numeric_must_be_finite() {
        assert!(Scalar::numeric(f64::NAN).is_err());
        assert!(Scalar::numeric(f64::INFINITY).is_err());
        assert!(Scalar::numeric(0.8).is_ok());
    }

    #[test]
    fn values_equal_examples() {
        let a = Scalar::numeric(0.8).unwrap();
        let b = Scalar::numeric(0.5).unwrap();
        assert!(!values_equal(&a, &b, 1e-9).unwrap());
        assert!(values_equal(&a, &a, 1e-9).unwrap());
        let x = Scalar::categorical("AMD");
        let y = Scalar::categorical("amd");
        assert!(!values_equal(&x, &y, 0.5).unwrap());
        assert!(!values_equal(&x, &y, 1e9).unwrap());
    }

    #[test]
    fn values_equal_mixed_kinds_is_schema_mismatch() {
        let a = Scalar::numeric(1.0).unwrap();
        let b = Scalar::categorical("1.0");
        assert!(matches!(
            values_equal(&a, &b, 1e-9),
            Err(ModelError::SchemaMismatch { .. })
        ));
        let m = Scalar::numeric_with_unit(1.0, Some("logmar".into())).unwrap();
        assert!(values_equal(&a, &m, 1e-9).is_err());
    }

    #[test]
    fn values_equal_uses_unit_floor_for_small_magnitudes() {
        let a = Scalar::numeric(0.0).unwrap();
        let b = Scalar::numeric(1e-10).unwrap();
        assert!(values_equal(&a, &b, 1e-9).unwrap());
        let c = Scalar::numeric(1e-8).unwrap();
        assert!(!values_equal(&a, &c, 1e-9).unwrap());
    }

    #[test]
    fn hierarchy_rejects_duplicates_and_empty() {
        assert!(SourceHierarchy::new("va", vec![]).is_err());
        let dup = SourceHierarchy::new("va", vec!["a".into(), "b".into(), "a".into()]);
        assert!(matches!(dup, Err(ModelError::DuplicateSource { .. })));
        let h = SourceHierarchy::new("va", vec!["device_export".into(), "doctoral_letter".into()])
            .unwrap();
        assert_eq!(h.rank("doctoral_letter"), Some(1));
        assert_eq!(
            h.rule_text(),
            "resolved by hierarchy va: device_export > doctoral_letter"
        );
    }

    #[test]
    fn registry_rejects_duplicate_ids() {
        let u = expert("e1");
        assert!(matches!(
            UserRegistry::new([u.clone(), u]),
            Err(ModelError::DuplicateUser(_))
        ));
        let reg = UserRegistry::from_json(
            r#"{"users":[{"user_id":"a","display_name":"A","qualification":"analyst"}]}"#,
        )
        .unwrap();
        assert_eq!(reg.get("a").unwrap().qualification, Qualification::Analyst);
    }

    #[test]
    fn analyst_vote_is_rejected_at_construction() {
        let analyst = User::new("a", "A", Qualification::Analyst);
        assert_eq!(
            Vote::cast(AnnotationId(1), Verdict::Confirm, &analyst, ts(0)),
            Err(ModelError::InsufficientQualification("a".into()))
        );
    }

    #[test]
    fn state_examples() {
        let f = AnnotationId(7);
        assert_eq!(annotation_state(f, []), LifecycleState::Unvalidated);
        assert_eq!(
            annotation_state(f, &[vote(Verdict::Confirm, 7)]),
            LifecycleState::Valid
        );
        let seq = [
            vote(Verdict::Confirm, 7),
            vote(Verdict::Reject, 7),
            vote(Verdict::Confirm, 7),
        ];
        assert_eq!(annotation_state(f, &seq), LifecycleState::Valid);
        // votes for another target do not count
        let other = [vote(Verdict::Reject, 8)];
        assert_eq!(annotation_state(f, &other), LifecycleState::Unvalidated);
    }

    #[test]
    fn state_matches_enumerated_oracle_up_to_length_three() {
        // Oracle: scan for the last verdict explicitly.
        fn oracle(seq: &[Verdict]) -> LifecycleState {
            let mut state = LifecycleState::Unvalidated;
            for v in seq {
                state = if *v == Verdict::Confirm {
                    LifecycleState::Valid
                } else {
                    LifecycleState::Invalid
                };
            }
            state
        }
        for len in 0..=3u32 {
            for mask in 0..(1u32 << len) {
                let verdicts: Vec<Verdict> = (0..len)
                    .map(|i| {
                        if mask >> i & 1 == 1 {
                            Verdict::Reject
                        } else {
                            Verdict::Confirm
                        }
                    })
                    .collect();
                let votes: Vec<Vote> = verdicts.iter().map(|v| vote(*v, 1)).collect();
                assert_eq!(annotation_state(AnnotationId(1), &votes), oracle(&verdicts));
            }
        }
    }

    #[test]
    fn edit_scope_interval_order() {
        let s = EditScope::DimensionRange {
            entity_id: "P1".into(),
            dimension: "va".into(),
            from: ts(5),
            to: ts(1),
        };
        assert!(matches!(
            s.validate(),
            Err(ModelError::InvertedInterval { .. })
        ));
    }

    #[test]
    fn fused_cell_invariants() {
        let cell = CellKey::new("P1", "va", ts(0)).unwrap();
        let sv = |src: &str, v: f64| {
            SourceValue::new(
                cell.clone(),
                Scalar::numeric(v).unwrap(),
                src,
                ts(1),
                Reliability::Primary,
            )
            .unwrap()
        };
        let mut fc = FusedCell {
            cell: cell.clone(),
            chosen: None,
            chosen_source: None,
            status: RedundancyStatus::Discrepant,
            contributing: vec![sv("a", 0.8), sv("b", 0.5)],
            resolved_by_hierarchy: false,
        };
        assert!(fc.check_invariants().is_ok());
        fc.chosen = Some(Scalar::numeric(0.5).unwrap());
        assert!(fc.check_invariants().is_err());
        fc.resolved_by_hierarchy = true;
        assert!(fc.check_invariants().is_ok());
        fc.chosen = Some(Scalar::numeric(0.6).unwrap());
        assert!(fc.check_invariants().is_err());
    }

    #[test]
    fn blob_id_validation() {
        let id = BlobId::of_payload(b"abc");
        assert_eq!(id.as_str().len(), 64);
        assert!(BlobId::try_from("XYZ".to_string()).is_err());
        assert!(BlobId::try_from(id.as_str().to_uppercase()).is_err());
    }

    #[test]
    fn annotation_serializes_with_variant_tag() {
        let a = Annotation::Vote(vote(Verdict::Reject, 3));
        let json = serde_json::to_value(&a).unwrap();
        assert_eq!(json["type"], "vote");
        assert_eq!(json["verdict"], "reject");
        let back: Annotation = serde_json::from_value(json).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn fingerprint_depends_on_dimension_and_value() {
        let v = Scalar::numeric(0.8).unwrap();
        assert_ne!(value_fingerprint("a", &v), value_fingerprint("b", &v));
        assert_ne!(
            value_fingerprint("a", &v),
            value_fingerprint("a", &Scalar::numeric(0.5).unwrap())
        );
        assert_eq!(value_fingerprint("a", &v), value_fingerprint("a", &v.clone()));
    }

    fn arb_scalar() -> impl Strategy<Value = Scalar> {
        prop_oneof![
            (-1e6f64..1e6).prop_map(|v| Scalar::numeric(v).unwrap()),
            "[a-zA-Z]{0,4}".prop_map(Scalar::categorical),
        ]
    }

    proptest! {
        #[test]
        fn values_equal_reflexive_and_symmetric(a in arb_scalar(), b in arb_scalar(), tol in 0.0f64..1e-3) {
            prop_assert!(values_equal(&a, &a, 0.0).unwrap());
            match (values_equal(&a, &b, tol), values_equal(&b, &a, tol)) {
                (Ok(x), Ok(y)) => prop_assert_eq!(x, y),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "asymmetric error"),
            }
        }

        #[test]
        fn appending_expert_confirm_yields_valid(bits in proptest::collection::vec(any::<bool>(), 0..8)) {
            let mut votes: Vec<Vote> = bits
                .iter()
                .map(|b| vote(if *b { Verdict::Confirm } else { Verdict::Reject }, 1))
                .collect();
            votes.push(vote(Verdict::Confirm, 1));
            prop_assert_eq!(annotation_state(AnnotationId(1), &votes), LifecycleState::Valid);
        }
    }
}
