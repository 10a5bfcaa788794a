//! Manual and rule-based edits of the fused dataset, plausibility checks,
//! and validation of edits.
//!
//! Every edit produces an [`Edit`] annotation holding the full before/after
//! value of each cell it touched, so the log alone can rebuild the dataset
//! ([`replay_edit`]) and a reverse edit is just another edit. Raw source
//! values are never touched; edits apply to the fused dataset only.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetRecord};
use crate::model::{
    AnnotationId, Annotation, AnnotationKind, CellChange, CellKey, Edit, EditScope, ModelError,
    Scalar, Timestamp, UserRegistry, ValueKind, Verdict, Vote,
};
use crate::store::{EventLog, StoreError};

#[derive(Debug, Error)]
pub enum CleansingError {
    #[error("empty edit scope")]
    EmptyScope,
    #[error("unknown user `{0}`")]
    UnknownUser(String),
    #[error("rationale is required for manual edits")]
    EmptyRationale,
    #[error("value kind mismatch for {cell}: dimension holds {expected:?} values, got {got:?}")]
    KindMismatch {
        cell: CellKey,
        expected: ValueKind,
        got: ValueKind,
    },
    #[error("per-cell values do not match the cells in scope: {0}")]
    ValueMapMismatch(String),
    #[error("invalid correction rule: {0}")]
    InvalidRule(String),
    #[error("insufficient qualification: user `{0}` is not an expert")]
    InsufficientQualification(String),
    #[error("unknown target annotation {0}")]
    UnknownTarget(AnnotationId),
    #[error("annotation {0} is a {1}, not an edit")]
    NotAnEdit(AnnotationId, AnnotationKind),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("configuration error: {0}")]
    Config(String),
}

/// New value(s) for an edit: one value for every cell in scope, or an
/// explicit value per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NewValue {
    Uniform(Scalar),
    PerCell(Vec<DatasetRecord>),
}

/// A requested manual edit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRequest {
    pub scope: EditScope,
    pub new_value: NewValue,
    pub author: String,
    pub rationale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_set: Option<String>,
}

/// Applies an edit in place and returns its annotation.
///
/// A single-cell scope may name a missing cell, which the edit then creates.
/// Range and entity scopes must match at least one existing cell. Nothing
/// changes when an error is returned.
pub fn apply_edit(
    dataset: &mut Dataset,
    users: &UserRegistry,
    request: &EditRequest,
    at: Timestamp,
) -> Result<Edit, CleansingError> {
    if users.get(&request.author).is_none() {
        return Err(CleansingError::UnknownUser(request.author.clone()));
    }
    request.scope.validate()?;
    match &request.rule_set {
        Some(r) if r.trim().is_empty() => return Err(ModelError::Empty("rule_set").into()),
        None if request.rationale.trim().is_empty() => return Err(CleansingError::EmptyRationale),
        _ => {}
    }

    let mut targets: Vec<(CellKey, Option<Scalar>)> = dataset
        .cells_in(&request.scope)
        .map(|(k, v)| (k.clone(), Some(v.clone())))
        .collect();
    if targets.is_empty() {
        match &request.scope {
            EditScope::SingleCell { cell } => targets.push((cell.clone(), None)),
            _ => return Err(CleansingError::EmptyScope),
        }
    }

    let changes = match &request.new_value {
        NewValue::Uniform(v) => targets
            .into_iter()
            .map(|(cell, old)| CellChange {
                cell,
                old,
                new: v.clone(),
            })
            .collect::<Vec<_>>(),
        NewValue::PerCell(records) => {
            let mut by_cell: BTreeMap<&CellKey, &Scalar> = BTreeMap::new();
            for r in records {
                if by_cell.insert(&r.cell, &r.value).is_some() {
                    return Err(CleansingError::ValueMapMismatch(format!(
                        "{} given twice",
                        r.cell
                    )));
                }
            }
            let wanted: BTreeSet<&CellKey> = targets.iter().map(|(c, _)| c).collect();
            if let Some(extra) = by_cell.keys().find(|k| !wanted.contains(*k)) {
                return Err(CleansingError::ValueMapMismatch(format!("{extra} is out of scope")));
            }
            let mut changes = Vec::with_capacity(targets.len());
            for (cell, old) in targets {
                let new = by_cell.get(&cell).map(|v| (*v).clone()).ok_or_else(|| {
                    CleansingError::ValueMapMismatch(format!("no value for {cell}"))
                })?;
                changes.push(CellChange { cell, old, new });
            }
            changes
        }
    };

    for c in &changes {
        check_kind(dataset, &c.cell, &c.new)?;
    }

    let edit = Edit {
        scope: request.scope.clone(),
        changes,
        author: request.author.clone(),
        rationale: request.rationale.clone(),
        rule_set: request.rule_set.clone(),
        created_at: at,
    };
    Annotation::Edit(edit.clone()).validate()?;
    for c in &edit.changes {
        dataset.insert(c.cell.clone(), c.new.clone());
    }
    Ok(edit)
}

fn check_kind(dataset: &Dataset, cell: &CellKey, value: &Scalar) -> Result<(), CleansingError> {
    match dataset.dimension_kind(&cell.dimension) {
        Some(expected) if expected != value.kind() => Err(CleansingError::KindMismatch {
            cell: cell.clone(),
            expected,
            got: value.kind(),
        }),
        _ => Ok(()),
    }
}

/// Why an edit could not be replayed.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayFault {
    #[error("edit references unknown cell {0}")]
    UnknownCell(CellKey),
    #[error("edit creates {0}, which already exists")]
    AlreadyExists(CellKey),
    #[error("cell {} holds {}, edit expected {}", .0.cell, .0.found, .0.expected)]
    Diverged(Box<Divergence>),
    #[error("events out of order, expected seq {expected}")]
    OutOfOrder { expected: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub cell: CellKey,
    pub expected: Scalar,
    pub found: Scalar,
}

/// Re-applies a recorded edit. Each change's recorded old value must match
/// the dataset; a change without an old value creates its cell.
pub fn replay_edit(dataset: &mut Dataset, edit: &Edit) -> Result<(), ReplayFault> {
    for c in &edit.changes {
        match (&c.old, dataset.get(&c.cell)) {
            (None, None) => {}
            (None, Some(_)) => return Err(ReplayFault::AlreadyExists(c.cell.clone())),
            (Some(_), None) => return Err(ReplayFault::UnknownCell(c.cell.clone())),
            (Some(expected), Some(found)) if expected != found => {
                return Err(ReplayFault::Diverged(Box::new(Divergence {
                    cell: c.cell.clone(),
                    expected: expected.clone(),
                    found: found.clone(),
                })))
            }
            _ => {}
        }
    }
    for c in &edit.changes {
        dataset.insert(c.cell.clone(), c.new.clone());
    }
    Ok(())
}

/// The fixed catalog of automatic corrections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum CorrectionRule {
    /// Moves numeric values outside `[min, max]` to the nearest bound.
    ClampToRange { dimension: String, min: f64, max: f64 },
    /// Multiplies numeric values inside `[applies_from, applies_to]` by
    /// `factor`. The rescaled range must not overlap the matched range, so a
    /// second pass finds nothing to do.
    UnitRescale {
        dimension: String,
        factor: f64,
        applies_from: f64,
        applies_to: f64,
    },
    /// Fills interior gaps of a dimension with the preceding value. Gaps are
    /// entity observation times, taken from any dimension, that fall between
    /// the dimension's first and last observation but have no cell.
    FillForwardMissing { dimension: String },
}

impl CorrectionRule {
    pub fn dimension(&self) -> &str {
        match self {
            CorrectionRule::ClampToRange { dimension, .. }
            | CorrectionRule::UnitRescale { dimension, .. }
            | CorrectionRule::FillForwardMissing { dimension } => dimension,
        }
    }

    pub fn validate(&self) -> Result<(), CleansingError> {
        let bad = |m: String| Err(CleansingError::InvalidRule(m));
        match *self {
            CorrectionRule::ClampToRange { min, max, .. } => {
                if !(min.is_finite() && max.is_finite()) || min > max {
                    return bad(format!("clamp range [{min}, {max}] is invalid"));
                }
            }
            CorrectionRule::UnitRescale {
                factor,
                applies_from,
                applies_to,
                ..
            } => {
                if !factor.is_finite() || factor == 0.0 {
                    return bad(format!("rescale factor {factor} is invalid"));
                }
                if !(applies_from.is_finite() && applies_to.is_finite()) || applies_from > applies_to {
                    return bad(format!("rescale range [{applies_from}, {applies_to}] is invalid"));
                }
                let (a, b) = (applies_from * factor, applies_to * factor);
                let (lo, hi) = (a.min(b), a.max(b));
                if hi >= applies_from && lo <= applies_to {
                    return bad(format!(
                        "rescaled range [{lo}, {hi}] overlaps [{applies_from}, {applies_to}]"
                    ));
                }
            }
            CorrectionRule::FillForwardMissing { .. } => {}
        }
        if self.dimension().is_empty() {
            return bad("rule has no dimension".into());
        }
        Ok(())
    }

    /// Stored in the `rule_set` field of the edits this rule produces.
    pub fn describe(&self) -> String {
        match self {
            CorrectionRule::ClampToRange { dimension, min, max } => {
                format!("clamp-to-range {dimension} [{min}, {max}]")
            }
            CorrectionRule::UnitRescale {
                dimension,
                factor,
                applies_from,
                applies_to,
            } => format!(
                "unit-rescale {dimension} x{factor} for values in [{applies_from}, {applies_to}]"
            ),
            CorrectionRule::FillForwardMissing { dimension } => {
                format!("fill-forward-missing {dimension}")
            }
        }
    }

    /// Changes the rule would make, keyed by cell.
    fn plan(&self, dataset: &Dataset) -> BTreeMap<CellKey, CellChange> {
        let mut out = BTreeMap::new();
        let dim = self.dimension();
        match *self {
            CorrectionRule::ClampToRange { min, max, .. } => {
                for (k, v) in dataset.iter().filter(|(k, _)| k.dimension == dim) {
                    if let Scalar::Numeric { value, unit } = v {
                        if *value < min || *value > max {
                            let new = Scalar::Numeric {
                                value: value.clamp(min, max),
                                unit: unit.clone(),
                            };
                            out.insert(k.clone(), change(k, Some(v), new));
                        }
                    }
                }
            }
            CorrectionRule::UnitRescale {
                factor,
                applies_from,
                applies_to,
                ..
            } => {
                for (k, v) in dataset.iter().filter(|(k, _)| k.dimension == dim) {
                    if let Scalar::Numeric { value, unit } = v {
                        if (applies_from..=applies_to).contains(value) {
                            let new = Scalar::Numeric {
                                value: value * factor,
                                unit: unit.clone(),
                            };
                            out.insert(k.clone(), change(k, Some(v), new));
                        }
                    }
                }
            }
            CorrectionRule::FillForwardMissing { .. } => {
                let entities: BTreeSet<&str> = dataset
                    .iter()
                    .filter(|(k, _)| k.dimension == dim)
                    .map(|(k, _)| k.entity_id.as_str())
                    .collect();
                for entity in entities {
                    let timeline: Vec<(&CellKey, &Scalar)> = dataset.timeline(entity, dim).collect();
                    let (Some(first), Some(last)) = (timeline.first(), timeline.last()) else {
                        continue;
                    };
                    let (start, end) = (first.0.observed_at, last.0.observed_at);
                    for t in dataset.entity_times(entity) {
                        if t <= start || t >= end {
                            continue;
                        }
                        let key = CellKey::new(entity, dim, t).expect("non-empty key parts");
                        if dataset.contains(&key) {
                            continue;
                        }
                        let prev = timeline
                            .iter()
                            .rev()
                            .find(|(k, _)| k.observed_at < t)
                            .map(|(_, v)| (*v).clone())
                            .expect("start precedes t");
                        out.insert(key.clone(), change(&key, None, prev));
                    }
                }
            }
        }
        out
    }
}

fn change(cell: &CellKey, old: Option<&Scalar>, new: Scalar) -> CellChange {
    CellChange {
        cell: cell.clone(),
        old: old.cloned(),
        new,
    }
}

/// Runs an automatic correction and applies it in place. Affected cells are
/// grouped into contiguous runs per entity and dimension; each run becomes
/// one edit annotation carrying the rule description. Re-running the same
/// rule on the result yields no edits.
pub fn apply_rule_edit(
    dataset: &mut Dataset,
    users: &UserRegistry,
    rule: &CorrectionRule,
    author: &str,
    at: Timestamp,
) -> Result<Vec<Edit>, CleansingError> {
    if users.get(author).is_none() {
        return Err(CleansingError::UnknownUser(author.to_string()));
    }
    rule.validate()?;
    let planned = rule.plan(dataset);
    if planned.is_empty() {
        return Ok(Vec::new());
    }

    // Group by (entity, dimension) over the post-edit timeline.
    let mut runs: Vec<Vec<CellChange>> = Vec::new();
    let groups: BTreeSet<(&str, &str)> = planned
        .keys()
        .map(|k| (k.entity_id.as_str(), k.dimension.as_str()))
        .collect();
    for (entity, dim) in groups {
        let mut times: BTreeSet<Timestamp> =
            dataset.timeline(entity, dim).map(|(k, _)| k.observed_at).collect();
        times.extend(
            planned
                .keys()
                .filter(|k| k.entity_id == entity && k.dimension == dim)
                .map(|k| k.observed_at),
        );
        let mut current: Vec<CellChange> = Vec::new();
        for t in times {
            let key = CellKey::new(entity, dim, t).expect("non-empty key parts");
            match planned.get(&key) {
                Some(c) => current.push(c.clone()),
                None if !current.is_empty() => runs.push(std::mem::take(&mut current)),
                None => {}
            }
        }
        if !current.is_empty() {
            runs.push(current);
        }
    }

    let description = rule.describe();
    let mut edits = Vec::with_capacity(runs.len());
    for changes in runs {
        let scope = if changes.len() == 1 {
            EditScope::SingleCell {
                cell: changes[0].cell.clone(),
            }
        } else {
            let first = &changes[0].cell;
            EditScope::DimensionRange {
                entity_id: first.entity_id.clone(),
                dimension: first.dimension.clone(),
                from: first.observed_at,
                to: changes.last().expect("non-empty run").cell.observed_at,
            }
        };
        edits.push(Edit {
            scope,
            changes,
            author: author.to_string(),
            rationale: format!("automatic correction: {description}"),
            rule_set: Some(description.clone()),
            created_at: at,
        });
    }
    for c in edits.iter().flat_map(|e| &e.changes) {
        dataset.insert(c.cell.clone(), c.new.clone());
    }
    Ok(edits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increasing,
    Decreasing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleKind {
    Range { min: f64, max: f64 },
    Required,
    Monotone { direction: Direction },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlausibilityRule {
    pub rule_id: String,
    pub dimension: String,
    #[serde(flatten)]
    pub kind: RuleKind,
    #[serde(default)]
    pub description: String,
}

impl PlausibilityRule {
    pub fn validate(&self) -> Result<(), CleansingError> {
        if self.rule_id.is_empty() {
            return Err(CleansingError::InvalidRule("empty rule id".into()));
        }
        if let RuleKind::Range { min, max } = self.kind {
            if min.partial_cmp(&max).is_none_or(|o| o.is_gt()) {
                return Err(CleansingError::InvalidRule(format!(
                    "rule `{}`: range [{min}, {max}] is invalid",
                    self.rule_id
                )));
            }
        }
        Ok(())
    }
}

/// What a violation points at: a present cell, or a missing one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "at", rename_all = "snake_case")]
pub enum ViolationTarget {
    Cell { cell: CellKey },
    Missing { cell: CellKey },
}

impl ViolationTarget {
    pub fn cell(&self) -> &CellKey {
        match self {
            ViolationTarget::Cell { cell } | ViolationTarget::Missing { cell } => cell,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub target: ViolationTarget,
    pub rule_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleansingReport {
    pub violations: Vec<Violation>,
    /// Draft edits for the violations that have an obvious fix. The author
    /// field is empty and must be filled in before submission.
    pub suggestions: Vec<EditRequest>,
    pub warnings: Vec<String>,
}

/// Checks the dataset against plausibility rules. Rules on dimensions the
/// dataset does not contain are skipped with a warning.
pub fn check_plausibility(dataset: &Dataset, rules: &[PlausibilityRule]) -> CleansingReport {
    let mut report = CleansingReport::default();
    let dims = dataset.dimensions();
    for rule in rules {
        if let Err(e) = rule.validate() {
            report.warnings.push(format!("rule skipped: {e}"));
            continue;
        }
        if !dims.contains(rule.dimension.as_str()) {
            report.warnings.push(format!(
                "rule `{}` skipped: unknown dimension `{}`",
                rule.rule_id, rule.dimension
            ));
            continue;
        }
        let flag = |report: &mut CleansingReport, target: ViolationTarget| {
            report.violations.push(Violation {
                target,
                rule_id: rule.rule_id.clone(),
            })
        };
        match rule.kind {
            RuleKind::Range { min, max } => {
                for (k, v) in dataset.iter().filter(|(k, _)| k.dimension == rule.dimension) {
                    let Some(x) = v.as_f64() else { continue };
                    if x < min || x > max {
                        flag(&mut report, ViolationTarget::Cell { cell: k.clone() });
                        let clamped = Scalar::Numeric {
                            value: x.clamp(min, max),
                            unit: v.unit().map(str::to_string),
                        };
                        report.suggestions.push(EditRequest {
                            scope: EditScope::SingleCell { cell: k.clone() },
                            new_value: NewValue::Uniform(clamped),
                            author: String::new(),
                            rationale: format!("outside plausible range [{min}, {max}] (rule {})", rule.rule_id),
                            rule_set: None,
                        });
                    }
                }
            }
            RuleKind::Required => {
                for entity in dataset.entities() {
                    for t in dataset.entity_times(entity) {
                        let key = CellKey::new(entity, &rule.dimension, t).expect("non-empty");
                        if dataset.contains(&key) {
                            continue;
                        }
                        flag(&mut report, ViolationTarget::Missing { cell: key.clone() });
                        let prev = dataset
                            .timeline(entity, &rule.dimension)
                            .filter(|(k, _)| k.observed_at < t)
                            .last()
                            .map(|(_, v)| v.clone());
                        if let Some(prev) = prev {
                            report.suggestions.push(EditRequest {
                                scope: EditScope::SingleCell { cell: key },
                                new_value: NewValue::Uniform(prev),
                                author: String::new(),
                                rationale: format!("missing value carried forward (rule {})", rule.rule_id),
                                rule_set: None,
                            });
                        }
                    }
                }
            }
            RuleKind::Monotone { direction } => {
                for entity in dataset.entities() {
                    let timeline: Vec<(&CellKey, f64)> = dataset
                        .timeline(entity, &rule.dimension)
                        .filter_map(|(k, v)| v.as_f64().map(|x| (k, x)))
                        .collect();
                    for pair in timeline.windows(2) {
                        let (prev, next) = (pair[0].1, pair[1].1);
                        let broken = match direction {
                            Direction::Increasing => next < prev,
                            Direction::Decreasing => next > prev,
                        };
                        if broken {
                            flag(&mut report, ViolationTarget::Cell { cell: pair[1].0.clone() });
                        }
                    }
                }
            }
        }
    }
    report
}

/// Plausibility rules and correction rules read from one JSON file:
///
/// ```json
/// {
///   "plausibility": [
///     { "rule_id": "va-range", "dimension": "visual_acuity", "kind": "range", "min": 0.0, "max": 2.0 }
///   ],
///   "corrections": [
///     { "rule": "clamp_to_range", "dimension": "visual_acuity", "min": 0.0, "max": 2.0 }
///   ]
/// }
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleansingConfig {
    #[serde(default)]
    pub plausibility: Vec<PlausibilityRule>,
    #[serde(default)]
    pub corrections: Vec<CorrectionRule>,
}

impl CleansingConfig {
    pub fn load<R: Read>(reader: R) -> Result<Self, CleansingError> {
        let cfg: CleansingConfig =
            serde_json::from_reader(reader).map_err(|e| CleansingError::Config(e.to_string()))?;
        let mut ids = BTreeSet::new();
        for r in &cfg.plausibility {
            r.validate()?;
            if !ids.insert(r.rule_id.as_str()) {
                return Err(CleansingError::Config(format!("duplicate rule id `{}`", r.rule_id)));
            }
        }
        for c in &cfg.corrections {
            c.validate()?;
        }
        Ok(cfg)
    }
}

/// Records an expert's verdict on an edit.
pub fn validate_edit(
    log: &mut EventLog,
    users: &UserRegistry,
    edit: AnnotationId,
    verdict: Verdict,
    user_id: &str,
    at: Timestamp,
) -> Result<(AnnotationId, Vote), CleansingError> {
    let user = users
        .get(user_id)
        .ok_or_else(|| CleansingError::UnknownUser(user_id.to_string()))?;
    let target = log.get(edit).ok_or(CleansingError::UnknownTarget(edit))?;
    let kind = target.annotation.kind();
    if kind != AnnotationKind::Edit {
        return Err(CleansingError::NotAnEdit(edit, kind));
    }
    let vote = Vote::cast(edit, verdict, user, at).map_err(|e| match e {
        ModelError::InsufficientQualification(u) => CleansingError::InsufficientQualification(u),
        other => other.into(),
    })?;
    let id = log.append(Annotation::Vote(vote.clone()), at)?;
    Ok((id, vote))
}
