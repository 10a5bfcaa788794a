//! Reading per-source CSV exports into [`SourceValue`]s, and loading source
//! hierarchy configuration.
//!
//! A [`SourceDescriptor`] tells the parser which columns hold the entity, the
//! observation time and the values. Two layouts are supported:
//!
//! * **long**: one row per observation, with a dimension-name column and a
//!   value column;
//! * **wide**: one row per entity and time, with one column per dimension.
//!
//! Bad entries never abort a run. Every data cell yields either a value or an
//! [`IngestWarning`] carrying its row and column, so
//! `values + warnings == data cells` always holds. Only a missing file or a
//! header that does not match the descriptor is fatal.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    CellKey, Reliability, Scalar, SourceHierarchy, SourceValue, Timestamp, Tolerance, ValueKind,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("source `{source_name}`: cannot read {path}: {error}")]
    Io {
        source_name: String,
        path: PathBuf,
        error: std::io::Error,
    },
    #[error("source `{source_name}`: malformed header: {reason}")]
    Header { source_name: String, reason: String },
    #[error("source `{source_name}`: invalid descriptor: {reason}")]
    Descriptor { source_name: String, reason: String },
    #[error("source name `{0}` used more than once")]
    DuplicateSource(String),
    #[error("configuration error: {0}")]
    Config(String),
}

/// Column layout of a source file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case")]
pub enum Layout {
    Long {
        entity: String,
        dimension: String,
        value: String,
        timestamp: String,
        /// Column with the time the source recorded the value. Defaults to
        /// the observation timestamp.
        #[serde(default)]
        recorded_at: Option<String>,
    },
    Wide {
        entity: String,
        timestamp: String,
        /// Dimension columns; each column header is the dimension name.
        dimensions: Vec<String>,
        #[serde(default)]
        recorded_at: Option<String>,
    },
}

/// How to read one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDescriptor {
    pub name: String,
    /// File to read. Relative paths in descriptor files resolve against the
    /// descriptor's directory. Absent when the data arrives as a stream.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub layout: Layout,
    /// Reliability class for each dimension this source provides.
    pub reliability: BTreeMap<String, Reliability>,
    #[serde(default)]
    pub units: BTreeMap<String, String>,
    /// Dimensions holding categorical values; all others are numeric.
    #[serde(default)]
    pub categorical: BTreeSet<String>,
}

impl SourceDescriptor {
    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |reason: String| IngestError::Descriptor {
            source_name: self.name.clone(),
            reason,
        };
        if self.name.is_empty() {
            return Err(bad("source name is empty".into()));
        }
        if let Layout::Wide { dimensions, .. } = &self.layout {
            if dimensions.is_empty() {
                return Err(bad("wide layout declares no dimension columns".into()));
            }
            if let Some(d) = dimensions.iter().find(|d| !self.reliability.contains_key(*d)) {
                return Err(bad(format!("dimension `{d}` has no reliability class")));
            }
        }
        Ok(())
    }

    fn kind_of(&self, dimension: &str) -> ValueKind {
        if self.categorical.contains(dimension) {
            ValueKind::Categorical
        } else {
            ValueKind::Numeric
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningKind {
    EmptyCell,
    UnparseableNumeric,
    UnparseableTimestamp,
    MissingEntity,
    UnknownDimension,
    MalformedRow,
}

/// A skipped data cell. `row` is 1-based over data rows (the header is row 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestWarning {
    pub source: String,
    pub row: usize,
    pub column: String,
    pub kind: WarningKind,
    pub message: String,
}

impl fmt::Display for IngestWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} row {} column `{}`: {}",
            self.source, self.row, self.column, self.message
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedSource {
    pub values: Vec<SourceValue>,
    pub warnings: Vec<IngestWarning>,
    /// Number of data cells considered (rows for long layout, rows times
    /// dimension columns for wide layout).
    pub data_cells: usize,
}

/// Parses the file named by the descriptor.
pub fn parse_source(descriptor: &SourceDescriptor) -> Result<ParsedSource, IngestError> {
    let path = descriptor.path.as_ref().ok_or_else(|| IngestError::Descriptor {
        source_name: descriptor.name.clone(),
        reason: "no file path".into(),
    })?;
    let file = std::fs::File::open(path).map_err(|error| IngestError::Io {
        source_name: descriptor.name.clone(),
        path: path.clone(),
        error,
    })?;
    parse_source_from(descriptor, file)
}

/// Parses CSV from any reader using the descriptor's layout.
pub fn parse_source_from<R: Read>(
    descriptor: &SourceDescriptor,
    reader: R,
) -> Result<ParsedSource, IngestError> {
    descriptor.validate()?;
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header_err = |reason: String| IngestError::Header {
        source_name: descriptor.name.clone(),
        reason,
    };
    let headers = csv
        .headers()
        .map_err(|e| header_err(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect::<Vec<_>>();
    if headers.iter().all(|h| h.is_empty()) {
        return Err(header_err("empty header row".into()));
    }
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| header_err(format!("missing column `{name}`")))
    };

    let plan = match &descriptor.layout {
        Layout::Long {
            entity,
            dimension,
            value,
            timestamp,
            recorded_at,
        } => ColumnPlan {
            entity: column(entity)?,
            timestamp: column(timestamp)?,
            recorded_at: recorded_at.as_deref().map(column).transpose()?,
            cells: CellColumns::Long {
                dimension: column(dimension)?,
                value: column(value)?,
            },
        },
        Layout::Wide {
            entity,
            timestamp,
            dimensions,
            recorded_at,
        } => ColumnPlan {
            entity: column(entity)?,
            timestamp: column(timestamp)?,
            recorded_at: recorded_at.as_deref().map(column).transpose()?,
            cells: CellColumns::Wide(
                dimensions
                    .iter()
                    .map(|d| column(d).map(|i| (d.clone(), i)))
                    .collect::<Result<_, _>>()?,
            ),
        },
    };

    let mut out = ParsedSource::default();
    for (idx, record) in csv.records().enumerate() {
        let row = idx + 1;
        plan.parse_row(descriptor, &headers, row, record, &mut out);
    }
    Ok(out)
}

struct ColumnPlan {
    entity: usize,
    timestamp: usize,
    recorded_at: Option<usize>,
    cells: CellColumns,
}

enum CellColumns {
    Long { dimension: usize, value: usize },
    Wide(Vec<(String, usize)>),
}

struct RowContext {
    entity: String,
    observed_at: Timestamp,
    recorded_at: Timestamp,
}

impl ColumnPlan {
    fn cell_count(&self) -> usize {
        match &self.cells {
            CellColumns::Long { .. } => 1,
            CellColumns::Wide(cols) => cols.len(),
        }
    }

    fn parse_row(
        &self,
        descriptor: &SourceDescriptor,
        headers: &[String],
        row: usize,
        record: Result<csv::StringRecord, csv::Error>,
        out: &mut ParsedSource,
    ) {
        out.data_cells += self.cell_count();
        let warn = |out: &mut ParsedSource, column: usize, kind: WarningKind, message: String| {
            out.warnings.push(IngestWarning {
                source: descriptor.name.clone(),
                row,
                column: headers.get(column).cloned().unwrap_or_default(),
                kind,
                message,
            });
        };
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                for _ in 0..self.cell_count() {
                    warn(out, 0, WarningKind::MalformedRow, format!("malformed row: {e}"));
                }
                return;
            }
        };
        let field = |i: usize| record.get(i).map(str::trim).unwrap_or("");

        // Cells of the row, as (column index, dimension name).
        let cells: Vec<(usize, String)> = match &self.cells {
            CellColumns::Long { dimension, value } => vec![(*value, field(*dimension).to_string())],
            CellColumns::Wide(cols) => cols.iter().map(|(d, i)| (*i, d.clone())).collect(),
        };

        let context = self.row_context(&field);
        for (col, dimension) in cells {
            let raw = field(col);
            if raw.is_empty() {
                warn(out, col, WarningKind::EmptyCell, "empty value".into());
                continue;
            }
            let ctx = match &context {
                Ok(ctx) => ctx,
                Err((c, kind, msg)) => {
                    warn(out, *c, *kind, msg.clone());
                    continue;
                }
            };
            if let CellColumns::Long { dimension: dcol, .. } = &self.cells {
                if dimension.is_empty() {
                    warn(out, *dcol, WarningKind::UnknownDimension, "empty dimension name".into());
                    continue;
                }
            }
            let Some(reliability) = descriptor.reliability.get(&dimension).copied() else {
                warn(
                    out,
                    col,
                    WarningKind::UnknownDimension,
                    format!("dimension `{dimension}` has no reliability class"),
                );
                continue;
            };
            let value = match descriptor.kind_of(&dimension) {
                ValueKind::Categorical => Scalar::categorical(raw),
                ValueKind::Numeric => {
                    let unit = descriptor.units.get(&dimension).cloned();
                    match raw.parse::<f64>().ok().map(|v| Scalar::numeric_with_unit(v, unit)) {
                        Some(Ok(v)) => v,
                        _ => {
                            warn(
                                out,
                                col,
                                WarningKind::UnparseableNumeric,
                                format!("unparseable numeric `{raw}`"),
                            );
                            continue;
                        }
                    }
                }
            };
            let cell = match CellKey::new(ctx.entity.clone(), dimension, ctx.observed_at) {
                Ok(c) => c,
                Err(e) => {
                    warn(out, col, WarningKind::MalformedRow, e.to_string());
                    continue;
                }
            };
            let sv = SourceValue::new(cell, value, &descriptor.name, ctx.recorded_at, reliability)
                .expect("descriptor name validated non-empty");
            out.values.push(sv);
        }
    }

    fn row_context<'a>(
        &self,
        field: &impl Fn(usize) -> &'a str,
    ) -> Result<RowContext, (usize, WarningKind, String)> {
        let entity = field(self.entity);
        if entity.is_empty() {
            return Err((self.entity, WarningKind::MissingEntity, "empty entity id".into()));
        }
        let observed_at = parse_timestamp(field(self.timestamp)).ok_or_else(|| {
            (
                self.timestamp,
                WarningKind::UnparseableTimestamp,
                format!("unparseable timestamp `{}`", field(self.timestamp)),
            )
        })?;
        let recorded_at = match self.recorded_at {
            Some(c) if !field(c).is_empty() => parse_timestamp(field(c)).ok_or_else(|| {
                (
                    c,
                    WarningKind::UnparseableTimestamp,
                    format!("unparseable timestamp `{}`", field(c)),
                )
            })?,
            _ => observed_at,
        };
        Ok(RowContext {
            entity: entity.to_string(),
            observed_at,
            recorded_at,
        })
    }
}

/// Parses an ISO-8601 timestamp. Values without an offset are taken as UTC;
/// a bare date means midnight UTC.
pub fn parse_timestamp(raw: &str) -> Option<Timestamp> {
    let raw = raw.trim();
    if let Ok(t) = chrono::DateTime::parse_from_rfc3339(raw) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(t.and_utc());
        }
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| t.and_utc())
}

/// Parses several sources, in parallel, and concatenates their output
/// ordered by source name then row.
pub fn parse_sources(descriptors: &[SourceDescriptor]) -> Result<ParsedSource, IngestError> {
    let mut seen = BTreeSet::new();
    for d in descriptors {
        if !seen.insert(d.name.as_str()) {
            return Err(IngestError::DuplicateSource(d.name.clone()));
        }
    }
    let mut ordered: Vec<&SourceDescriptor> = descriptors.iter().collect();
    ordered.sort_by(|a, b| a.name.cmp(&b.name));
    let results: Vec<Result<ParsedSource, IngestError>> = std::thread::scope(|s| {
        let handles: Vec<_> = ordered
            .iter()
            .map(|d| s.spawn(move || parse_source(d)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("parser thread panicked"))
            .collect()
    });
    let mut merged = ParsedSource::default();
    for r in results {
        let p = r?;
        merged.values.extend(p.values);
        merged.warnings.extend(p.warnings);
        merged.data_cells += p.data_cells;
    }
    Ok(merged)
}

/// Reads descriptor JSON (one object or an array). Relative file paths are
/// resolved against the descriptor file's directory.
pub fn load_descriptors(path: &Path) -> Result<Vec<SourceDescriptor>, IngestError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(Box<SourceDescriptor>),
        Many(Vec<SourceDescriptor>),
    }
    let text = std::fs::read_to_string(path).map_err(|e| {
        IngestError::Config(format!("cannot read descriptor {}: {e}", path.display()))
    })?;
    let parsed: OneOrMany = serde_json::from_str(&text)
        .map_err(|e| IngestError::Config(format!("descriptor {}: {e}", path.display())))?;
    let mut list = match parsed {
        OneOrMany::One(d) => vec![*d],
        OneOrMany::Many(v) => v,
    };
    let base = path.parent().unwrap_or(Path::new("."));
    for d in &mut list {
        if let Some(p) = &d.path {
            if p.is_relative() {
                d.path = Some(base.join(p));
            }
        }
    }
    Ok(list)
}

/// Fusion settings read from the hierarchy configuration file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FusionConfig {
    pub hierarchies: Vec<SourceHierarchy>,
    pub tolerance: Tolerance,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    hierarchies: Vec<RawHierarchyEntry>,
    #[serde(default)]
    tolerance: Option<Tolerance>,
}

#[derive(Deserialize)]
struct RawHierarchyEntry {
    dimension: String,
    priority: Vec<String>,
}

/// Reads the hierarchy configuration:
///
/// ```json
/// {
///   "hierarchies": [
///     { "dimension": "visual_acuity", "priority": ["device_export", "doctoral_letter"] }
///   ],
///   "tolerance": { "default": 1e-9, "per_dimension": { "iop": 1e-6 } }
/// }
/// ```
///
/// An empty document is an empty configuration.
pub fn load_fusion_config<R: Read>(mut reader: R) -> Result<FusionConfig, IngestError> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| IngestError::Config(e.to_string()))?;
    if text.trim().is_empty() {
        return Ok(FusionConfig::default());
    }
    let file: ConfigFile =
        serde_json::from_str(&text).map_err(|e| IngestError::Config(e.to_string()))?;
    let mut seen = BTreeSet::new();
    let mut hierarchies = Vec::with_capacity(file.hierarchies.len());
    for entry in file.hierarchies {
        if !seen.insert(entry.dimension.clone()) {
            return Err(IngestError::Config(format!(
                "dimension `{}` listed more than once",
                entry.dimension
            )));
        }
        hierarchies.push(
            SourceHierarchy::new(entry.dimension, entry.priority)
                .map_err(|e| IngestError::Config(e.to_string()))?,
        );
    }
    Ok(FusionConfig {
        hierarchies,
        tolerance: file.tolerance.unwrap_or_default(),
    })
}

pub fn load_hierarchies<R: Read>(reader: R) -> Result<Vec<SourceHierarchy>, IngestError> {
    load_fusion_config(reader).map(|c| c.hierarchies)
}

pub fn load_fusion_config_file(path: &Path) -> Result<FusionConfig, IngestError> {
    let file = std::fs::File::open(path)
        .map_err(|e| IngestError::Config(format!("cannot read {}: {e}", path.display())))?;
    load_fusion_config(file)
}
