//! Tabular reports over an annotation log: discrepancies per dimension and
//! source, edits per author or rule, findings per lifecycle state.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use serde::Serialize;

use crate::fusion::FuseSummary;
use crate::model::{annotation_state, Annotation, AnnotationId, LifecycleState, RedundancyStatus, Vote};
use crate::store::AnnotationEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    Discrepancies,
    Edits,
    Findings,
}

impl FromStr for ReportKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "discrepancies" => Ok(Self::Discrepancies),
            "edits" => Ok(Self::Edits),
            "findings" => Ok(Self::Findings),
            other => Err(format!("unknown report kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Format {
    #[default]
    Text,
    Ndjson,
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Self::Text),
            "ndjson" => Ok(Self::Ndjson),
            other => Err(format!("unknown format `{other}` (expected text or ndjson)")),
        }
    }
}

/// Discrepant cells a source contributed to, per dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiscrepancyRow {
    pub dimension: String,
    pub source: String,
    pub discrepant: usize,
    /// Cells where the hierarchy picked this source.
    pub chosen: usize,
    pub unresolved: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EditGroup {
    Author,
    Rule,
}

/// Edits grouped by author (manual) or rule set (automatic).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EditRow {
    pub group: EditGroup,
    pub key: String,
    pub edits: usize,
    pub cells: usize,
    pub unvalidated: usize,
    pub valid: usize,
    pub invalid: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FindingRow {
    pub state: LifecycleState,
    pub findings: usize,
    pub data_refs: usize,
    pub comments: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Report {
    Discrepancies(Vec<DiscrepancyRow>),
    Edits(Vec<EditRow>),
    Findings(Vec<FindingRow>),
}

fn votes_by_target(events: &[AnnotationEvent]) -> BTreeMap<AnnotationId, Vec<&Vote>> {
    let mut out: BTreeMap<AnnotationId, Vec<&Vote>> = BTreeMap::new();
    for e in events {
        if let Annotation::Vote(v) = &e.annotation {
            out.entry(v.target()).or_default().push(v);
        }
    }
    out
}

pub fn discrepancies(events: &[AnnotationEvent]) -> Vec<DiscrepancyRow> {
    let mut chosen_by_cell = BTreeMap::new();
    for e in events {
        if let Annotation::Resolution(r) = &e.annotation {
            chosen_by_cell.insert(&r.cell, r.chosen_source.as_str());
        }
    }
    let mut rows: BTreeMap<(&str, &str), DiscrepancyRow> = BTreeMap::new();
    for e in events {
        let Annotation::Provenance(p) = &e.annotation else {
            continue;
        };
        if p.status != RedundancyStatus::Discrepant {
            continue;
        }
        let sources: BTreeSet<&str> = p.sources.iter().map(|s| s.source.as_str()).collect();
        for source in sources {
            let row = rows
                .entry((p.cell.dimension.as_str(), source))
                .or_insert_with(|| DiscrepancyRow {
                    dimension: p.cell.dimension.clone(),
                    source: source.to_string(),
                    discrepant: 0,
                    chosen: 0,
                    unresolved: 0,
                });
            row.discrepant += 1;
            if chosen_by_cell.get(&p.cell) == Some(&source) {
                row.chosen += 1;
            }
            if p.chosen.is_none() {
                row.unresolved += 1;
            }
        }
    }
    rows.into_values().collect()
}

pub fn edits(events: &[AnnotationEvent]) -> Vec<EditRow> {
    let votes = votes_by_target(events);
    let mut rows: BTreeMap<(EditGroup, &str), EditRow> = BTreeMap::new();
    for e in events {
        let Annotation::Edit(edit) = &e.annotation else {
            continue;
        };
        let (group, key) = match &edit.rule_set {
            Some(rule) => (EditGroup::Rule, rule.as_str()),
            None => (EditGroup::Author, edit.author.as_str()),
        };
        let row = rows.entry((group, key)).or_insert_with(|| EditRow {
            group,
            key: key.to_string(),
            edits: 0,
            cells: 0,
            unvalidated: 0,
            valid: 0,
            invalid: 0,
        });
        row.edits += 1;
        row.cells += edit.changes.len();
        let state = annotation_state(
            e.id(),
            votes.get(&e.id()).into_iter().flatten().copied(),
        );
        match state {
            LifecycleState::Unvalidated => row.unvalidated += 1,
            LifecycleState::Valid => row.valid += 1,
            LifecycleState::Invalid => row.invalid += 1,
        }
    }
    rows.into_values().collect()
}

pub fn findings(events: &[AnnotationEvent]) -> Vec<FindingRow> {
    let votes = votes_by_target(events);
    let mut comments: BTreeMap<AnnotationId, usize> = BTreeMap::new();
    for e in events {
        if let Annotation::Comment(c) = &e.annotation {
            *comments.entry(c.target).or_default() += 1;
        }
    }
    let mut rows: BTreeMap<LifecycleState, FindingRow> = BTreeMap::new();
    for e in events {
        let Annotation::Finding(f) = &e.annotation else {
            continue;
        };
        let state = annotation_state(e.id(), votes.get(&e.id()).into_iter().flatten().copied());
        let row = rows.entry(state).or_insert(FindingRow {
            state,
            findings: 0,
            data_refs: 0,
            comments: 0,
        });
        row.findings += 1;
        row.data_refs += f.data_refs.len();
        row.comments += comments.get(&e.id()).copied().unwrap_or(0);
    }
    rows.into_values().collect()
}

impl Report {
    pub fn build(kind: ReportKind, events: &[AnnotationEvent]) -> Self {
        match kind {
            ReportKind::Discrepancies => Self::Discrepancies(discrepancies(events)),
            ReportKind::Edits => Self::Edits(edits(events)),
            ReportKind::Findings => Self::Findings(findings(events)),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Discrepancies(r) => r.len(),
            Self::Edits(r) => r.len(),
            Self::Findings(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn table(&self) -> Table {
        match self {
            Self::Discrepancies(rows) => Table::new(
                &["dimension", "source", "discrepant", "chosen", "unresolved"],
                rows.iter().map(|r| {
                    vec![
                        r.dimension.clone(),
                        r.source.clone(),
                        r.discrepant.to_string(),
                        r.chosen.to_string(),
                        r.unresolved.to_string(),
                    ]
                }),
            ),
            Self::Edits(rows) => Table::new(
                &["group", "key", "edits", "cells", "unvalidated", "valid", "invalid"],
                rows.iter().map(|r| {
                    vec![
                        match r.group {
                            EditGroup::Author => "author".to_string(),
                            EditGroup::Rule => "rule".to_string(),
                        },
                        r.key.clone(),
                        r.edits.to_string(),
                        r.cells.to_string(),
                        r.unvalidated.to_string(),
                        r.valid.to_string(),
                        r.invalid.to_string(),
                    ]
                }),
            ),
            Self::Findings(rows) => Table::new(
                &["state", "findings", "data_refs", "comments"],
                rows.iter().map(|r| {
                    vec![
                        r.state.label().to_string(),
                        r.findings.to_string(),
                        r.data_refs.to_string(),
                        r.comments.to_string(),
                    ]
                }),
            ),
        }
    }

    /// Writes the report. An empty report writes nothing.
    pub fn write<W: Write + ?Sized>(&self, format: Format, out: &mut W) -> io::Result<()> {
        if self.is_empty() {
            return Ok(());
        }
        match format {
            Format::Text => write!(out, "{}", self.table()),
            Format::Ndjson => match self {
                Self::Discrepancies(rows) => write_ndjson(out, rows),
                Self::Edits(rows) => write_ndjson(out, rows),
                Self::Findings(rows) => write_ndjson(out, rows),
            },
        }
    }
}

fn write_ndjson<W: Write + ?Sized, T: Serialize>(out: &mut W, rows: &[T]) -> io::Result<()> {
    for r in rows {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes the post-fusion summary.
pub fn write_fuse_summary<W: Write + ?Sized>(summary: &FuseSummary, format: Format, out: &mut W) -> io::Result<()> {
    match format {
        Format::Text => {
            let table = Table::new(
                &["metric", "count"],
                summary.rows().iter().map(|(k, v)| vec![k.to_string(), v.to_string()]),
            );
            write!(out, "{table}")?;
            writeln!(out, "{summary}")
        }
        Format::Ndjson => write_ndjson(out, std::slice::from_ref(summary)),
    }
}

/// Fixed-width text table; text columns left-aligned, numbers right-aligned.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: rows.collect(),
        }
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let widths: Vec<usize> = (0..self.header.len())
            .map(|c| {
                self.rows
                    .iter()
                    .map(|r| r[c].chars().count())
                    .chain([self.header[c].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let numeric: Vec<bool> = (0..self.header.len())
            .map(|c| !self.rows.is_empty() && self.rows.iter().all(|r| r[c].parse::<u64>().is_ok()))
            .collect();
        let line = |f: &mut fmt::Formatter<'_>, cells: &[String]| -> fmt::Result {
            let parts: Vec<String> = cells
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if numeric[i] {
                        format!("{c:>w$}", w = widths[i])
                    } else {
                        format!("{c:<w$}", w = widths[i])
                    }
                })
                .collect();
            writeln!(f, "{}", parts.join("  ").trim_end())
        };
        line(f, &self.header)?;
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        writeln!(f, "{}", rule.join("  "))?;
        for r in &self.rows {
            line(f, r)?;
        }
        Ok(())
    }
}
