//! The working dataset: one value per cell, ordered by key.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{CellKey, EditScope, Scalar, Timestamp, ValueKind};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    cells: BTreeMap<CellKey, Scalar>,
}

/// One line of a dataset snapshot file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub cell: CellKey,
    pub value: Scalar,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, cell: &CellKey) -> Option<&Scalar> {
        self.cells.get(cell)
    }

    pub fn contains(&self, cell: &CellKey) -> bool {
        self.cells.contains_key(cell)
    }

    /// Sets a cell, returning the previous value.
    pub fn insert(&mut self, cell: CellKey, value: Scalar) -> Option<Scalar> {
        self.cells.insert(cell, value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CellKey, &Scalar)> {
        self.cells.iter()
    }

    pub fn cells_in<'a>(&'a self, scope: &'a EditScope) -> impl Iterator<Item = (&'a CellKey, &'a Scalar)> {
        self.cells.iter().filter(move |(k, _)| scope.contains(k))
    }

    /// Value kind of a dimension, taken from its first cell.
    pub fn dimension_kind(&self, dimension: &str) -> Option<ValueKind> {
        self.cells
            .iter()
            .find(|(k, _)| k.dimension == dimension)
            .map(|(_, v)| v.kind())
    }

    pub fn dimensions(&self) -> BTreeSet<&str> {
        self.cells.keys().map(|k| k.dimension.as_str()).collect()
    }

    pub fn entities(&self) -> BTreeSet<&str> {
        self.cells.keys().map(|k| k.entity_id.as_str()).collect()
    }

    /// All observation times of an entity across every dimension. This is the
    /// grid against which missing cells are judged.
    pub fn entity_times(&self, entity_id: &str) -> BTreeSet<Timestamp> {
        self.cells
            .keys()
            .filter(|k| k.entity_id == entity_id)
            .map(|k| k.observed_at)
            .collect()
    }

    /// Cells of one entity and dimension in time order.
    pub fn timeline<'a>(
        &'a self,
        entity_id: &'a str,
        dimension: &'a str,
    ) -> impl Iterator<Item = (&'a CellKey, &'a Scalar)> {
        self.cells
            .iter()
            .filter(move |(k, _)| k.entity_id == entity_id && k.dimension == dimension)
    }

    pub fn records(&self) -> impl Iterator<Item = DatasetRecord> + '_ {
        self.cells.iter().map(|(cell, value)| DatasetRecord {
            cell: cell.clone(),
            value: value.clone(),
        })
    }
}

impl FromIterator<(CellKey, Scalar)> for Dataset {
    fn from_iter<I: IntoIterator<Item = (CellKey, Scalar)>>(iter: I) -> Self {
        Self {
            cells: iter.into_iter().collect(),
        }
    }
}

impl FromIterator<DatasetRecord> for Dataset {
    fn from_iter<I: IntoIterator<Item = DatasetRecord>>(iter: I) -> Self {
        iter.into_iter().map(|r| (r.cell, r.value)).collect()
    }
}
