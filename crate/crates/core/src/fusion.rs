//! Merging source values per cell, classifying redundancy, and resolving
//! discrepancies by source hierarchy.
//!
//! Fusion is pure and deterministic. Values are grouped by [`CellKey`]; each
//! group is put into a canonical order (source name, then recording time,
//! then value) before any decision, so input order never matters. Every cell
//! gets one [`Provenance`] annotation. Every discrepancy a hierarchy settles
//! gets one [`Resolution`] annotation. Annotations come out in cell-key
//! order, which fixes the sequence numbers the log will assign.
//!
//! Resolution selects one of the observed values. It never averages.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::model::{
    values_equal, Annotation, CellKey, FusedCell, Provenance, ProvenanceSource, RedundancyStatus,
    Resolution, Scalar, SourceHierarchy, SourceValue, Tolerance,
};

/// Classifies a group of values recorded for the same cell.
///
/// Values of different kinds or units never count as equal, so such a
/// group is discrepant.
///
/// # Panics
///
/// Panics if `values` is empty.
pub fn classify(values: &[SourceValue], tol: f64) -> RedundancyStatus {
    assert!(!values.is_empty(), "classify needs at least one value");
    if values.len() == 1 {
        return RedundancyStatus::SingleSource;
    }
    let all_equal = values.iter().enumerate().all(|(i, a)| {
        values[i + 1..]
            .iter()
            .all(|b| values_equal(&a.value, &b.value, tol).unwrap_or(false))
    });
    if all_equal {
        RedundancyStatus::RedundantConsistent
    } else {
        RedundancyStatus::Discrepant
    }
}

/// Outcome of resolving one discrepant cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved<'a> {
    pub chosen: Option<&'a SourceValue>,
    pub resolution: Option<Resolution>,
    pub warning: Option<String>,
}

/// Picks the value of the highest-priority source present.
///
/// Several values from that source are decided by latest `recorded_at`,
/// then by input order. Without a hierarchy, or with one that names none of
/// the contributing sources, nothing is chosen.
///
/// # Panics
///
/// Panics if `values` is empty.
pub fn resolve<'a>(values: &'a [SourceValue], hierarchy: Option<&SourceHierarchy>) -> Resolved<'a> {
    assert!(!values.is_empty(), "resolve needs at least one value");
    let cell = &values[0].cell;
    let Some(hierarchy) = hierarchy else {
        return Resolved {
            chosen: None,
            resolution: None,
            warning: None,
        };
    };
    match pick_by_hierarchy(values, hierarchy) {
        Some(chosen) => Resolved {
            chosen: Some(chosen),
            resolution: Some(Resolution {
                cell: cell.clone(),
                chosen_source: chosen.source.clone(),
                chosen_value: chosen.value.clone(),
                hierarchy_snapshot: hierarchy.clone(),
                rule_text: hierarchy.rule_text(),
            }),
            warning: None,
        },
        None => Resolved {
            chosen: None,
            resolution: None,
            warning: Some(format!(
                "hierarchy for `{}` covers none of the sources of {cell}",
                hierarchy.dimension
            )),
        },
    }
}

fn pick_by_hierarchy<'a>(
    values: &'a [SourceValue],
    hierarchy: &SourceHierarchy,
) -> Option<&'a SourceValue> {
    let best_rank = values.iter().filter_map(|v| hierarchy.rank(&v.source)).min()?;
    let mut best: Option<&SourceValue> = None;
    for v in values {
        if hierarchy.rank(&v.source) != Some(best_rank) {
            continue;
        }
        // strictly later wins, so equal times keep the earlier input
        if best.is_none_or(|b| v.recorded_at > b.recorded_at) {
            best = Some(v);
        }
    }
    best
}

fn earliest(values: &[SourceValue]) -> &SourceValue {
    let mut best = &values[0];
    for v in &values[1..] {
        if v.recorded_at < best.recorded_at {
            best = v;
        }
    }
    best
}

/// Total order on values used for canonical listing.
pub(crate) fn scalar_order(a: &Scalar, b: &Scalar) -> Ordering {
    match (a, b) {
        (Scalar::Numeric { value: x, unit: ux }, Scalar::Numeric { value: y, unit: uy }) => {
            ux.cmp(uy).then(x.total_cmp(y))
        }
        (Scalar::Categorical { value: x }, Scalar::Categorical { value: y }) => x.cmp(y),
        (Scalar::Numeric { .. }, Scalar::Categorical { .. }) => Ordering::Less,
        (Scalar::Categorical { .. }, Scalar::Numeric { .. }) => Ordering::Greater,
    }
}

fn canonical_order(a: &SourceValue, b: &SourceValue) -> Ordering {
    a.source
        .cmp(&b.source)
        .then(a.recorded_at.cmp(&b.recorded_at))
        .then_with(|| scalar_order(&a.value, &b.value))
        .then(a.reliability.cmp(&b.reliability))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FusionResult {
    pub cells: BTreeMap<CellKey, FusedCell>,
    /// Provenance and Resolution annotations in cell-key order.
    pub annotations: Vec<Annotation>,
    /// Discrepant cells left without a value.
    pub unresolved: Vec<CellKey>,
    pub warnings: Vec<String>,
}

/// Counts printed after a fusion run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuseSummary {
    pub cells: usize,
    pub single_source: usize,
    pub redundant: usize,
    pub discrepant: usize,
    pub auto_resolved: usize,
    pub unresolved: usize,
}

impl FuseSummary {
    /// Tallies fusion outcomes from a sequence of provenance/resolution
    /// annotations (e.g. a log scan).
    pub fn from_annotations<'a>(annotations: impl IntoIterator<Item = &'a Annotation>) -> Self {
        let mut s = FuseSummary::default();
        for a in annotations {
            match a {
                Annotation::Provenance(p) => {
                    s.cells += 1;
                    match p.status {
                        RedundancyStatus::SingleSource => s.single_source += 1,
                        RedundancyStatus::RedundantConsistent => s.redundant += 1,
                        RedundancyStatus::Discrepant => {
                            s.discrepant += 1;
                            if p.chosen.is_none() {
                                s.unresolved += 1;
                            }
                        }
                    }
                }
                Annotation::Resolution(_) => s.auto_resolved += 1,
                _ => {}
            }
        }
        s
    }

    pub fn rows(&self) -> [(&'static str, usize); 6] {
        [
            ("cells", self.cells),
            ("single-source", self.single_source),
            ("redundant", self.redundant),
            ("discrepant", self.discrepant),
            ("auto-resolved", self.auto_resolved),
            ("unresolved", self.unresolved),
        ]
    }
}

impl std::fmt::Display for FuseSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self
            .rows()
            .iter()
            .map(|(k, v)| format!("{k}: {v}"))
            .collect();
        f.write_str(&parts.join(", "))
    }
}

impl FusionResult {
    /// The fused dataset: every cell that received a value.
    pub fn dataset(&self) -> Dataset {
        self.cells
            .values()
            .filter_map(|c| c.chosen.clone().map(|v| (c.cell.clone(), v)))
            .collect()
    }

    pub fn summary(&self) -> FuseSummary {
        FuseSummary::from_annotations(&self.annotations)
    }
}

/// Fuses all values into one cell each.
pub fn fuse(
    values: &[SourceValue],
    hierarchies: &[SourceHierarchy],
    tolerance: &Tolerance,
) -> FusionResult {
    let by_dimension: BTreeMap<&str, &SourceHierarchy> = hierarchies
        .iter()
        .map(|h| (h.dimension.as_str(), h))
        .collect();

    let mut groups: BTreeMap<&CellKey, Vec<SourceValue>> = BTreeMap::new();
    for v in values {
        groups.entry(&v.cell).or_default().push(v.clone());
    }

    let mut result = FusionResult::default();
    for (cell, mut group) in groups {
        group.sort_by(canonical_order);
        let hierarchy = by_dimension.get(cell.dimension.as_str()).copied();
        let status = classify(&group, tolerance.for_dimension(&cell.dimension));

        let mut resolution = None;
        let chosen: Option<SourceValue> = match status {
            RedundancyStatus::SingleSource => Some(group[0].clone()),
            RedundancyStatus::RedundantConsistent => Some(
                hierarchy
                    .and_then(|h| pick_by_hierarchy(&group, h))
                    .unwrap_or_else(|| earliest(&group))
                    .clone(),
            ),
            RedundancyStatus::Discrepant => {
                let r = resolve(&group, hierarchy);
                if let Some(w) = r.warning {
                    result.warnings.push(w);
                }
                resolution = r.resolution;
                r.chosen.cloned()
            }
        };
        if status == RedundancyStatus::Discrepant && chosen.is_none() {
            result.unresolved.push(cell.clone());
        }

        result.annotations.push(Annotation::Provenance(Provenance {
            cell: cell.clone(),
            status,
            chosen: chosen.as_ref().map(|c| c.value.clone()),
            sources: group
                .iter()
                .map(|v| ProvenanceSource {
                    source: v.source.clone(),
                    value: v.value.clone(),
                    recorded_at: v.recorded_at,
                    reliability: v.reliability,
                })
                .collect(),
        }));
        let resolved_by_hierarchy = resolution.is_some();
        if let Some(r) = resolution {
            result.annotations.push(Annotation::Resolution(r));
        }
        result.cells.insert(
            cell.clone(),
            FusedCell {
                cell: cell.clone(),
                chosen_source: chosen.as_ref().map(|c| c.source.clone()),
                chosen: chosen.map(|c| c.value),
                status,
                contributing: group,
                resolved_by_hierarchy,
            },
        );
    }
    result
}
