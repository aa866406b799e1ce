use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::schema::{AttributeKind, AttributeSpec, SchemaMetadata};
use crate::error::{Error, Result};

/// One cell of a record: a category index or a real value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Cat(u32),
    Num(f64),
}

impl Cell {
    pub fn as_cat(self) -> Option<u32> {
        match self {
            Cell::Cat(c) => Some(c),
            Cell::Num(_) => None,
        }
    }

    pub fn as_num(self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(v),
            Cell::Cat(_) => None,
        }
    }

    /// Numeric encoding used by tree learners: category index or raw value.
    pub fn to_f64(self) -> f64 {
        match self {
            Cell::Cat(c) => c as f64,
            Cell::Num(v) => v,
        }
    }

    /// Hashable key; continuous cells compare by bit pattern.
    pub fn key(self) -> u64 {
        match self {
            Cell::Cat(c) => c as u64,
            Cell::Num(v) => v.to_bits(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record(pub Vec<Cell>);

impl Record {
    pub fn new(cells: Vec<Cell>) -> Self {
        Record(cells)
    }

    pub fn cells(&self) -> &[Cell] {
        &self.0
    }

    pub fn get(&self, idx: usize) -> Cell {
        self.0[idx]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Partial view with attribute `hidden` unknown.
    pub fn without(&self, hidden: usize) -> PartialRecord {
        PartialRecord(
            self.0
                .iter()
                .enumerate()
                .map(|(i, c)| (i != hidden).then_some(*c))
                .collect(),
        )
    }

    pub fn conforms_to(&self, schema: &SchemaMetadata) -> bool {
        self.0.len() == schema.len()
            && self.0.iter().zip(schema.attributes()).all(|(cell, spec)| match (cell, &spec.kind) {
                (Cell::Cat(c), AttributeKind::Categorical { categories }) => (*c as usize) < categories.len(),
                (Cell::Num(v), AttributeKind::Continuous { .. }) => v.is_finite(),
                _ => false,
            })
    }
}

/// Record with some cells unknown to an adversary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialRecord(pub Vec<Option<Cell>>);

impl PartialRecord {
    pub fn matches(&self, record: &Record) -> bool {
        self.0
            .iter()
            .zip(record.cells())
            .all(|(probe, cell)| probe.is_none_or(|p| p == *cell))
    }

    pub fn known(&self) -> impl Iterator<Item = (usize, Cell)> + '_ {
        self.0.iter().enumerate().filter_map(|(i, c)| c.map(|c| (i, c)))
    }
}

impl From<&Record> for PartialRecord {
    fn from(r: &Record) -> Self {
        PartialRecord(r.0.iter().copied().map(Some).collect())
    }
}

/// Ordered records conforming to a shared schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Arc<SchemaMetadata>,
    records: Vec<Record>,
}

impl Dataset {
    pub fn new(schema: Arc<SchemaMetadata>, records: Vec<Record>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if !r.conforms_to(&schema) {
                return Err(Error::ParseError {
                    row: i,
                    message: "record does not conform to schema".into(),
                });
            }
        }
        Ok(Dataset { schema, records })
    }

    /// Skips conformance checks; callers guarantee records were built against `schema`.
    pub(crate) fn from_trusted(schema: Arc<SchemaMetadata>, records: Vec<Record>) -> Self {
        debug_assert!(records.iter().all(|r| r.conforms_to(&schema)));
        Dataset { schema, records }
    }

    pub fn empty(schema: Arc<SchemaMetadata>) -> Self {
        Dataset {
            schema,
            records: Vec::new(),
        }
    }

    pub fn schema(&self) -> &SchemaMetadata {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<SchemaMetadata> {
        &self.schema
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn into_records(self) -> Vec<Record> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, idx: usize) -> &Record {
        &self.records[idx]
    }

    pub fn column(&self, idx: usize) -> impl Iterator<Item = Cell> + '_ {
        self.records.iter().map(move |r| r.get(idx))
    }

    pub fn numeric_column(&self, idx: usize) -> Vec<f64> {
        self.column(idx).map(Cell::to_f64).collect()
    }

    /// Category counts of a categorical column over the full category list.
    pub fn category_counts(&self, idx: usize) -> Vec<usize> {
        let k = self.schema.attribute(idx).cardinality();
        let mut counts = vec![0usize; k];
        for c in self.column(idx) {
            if let Cell::Cat(c) = c {
                counts[c as usize] += 1;
            }
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    pub fn with_records(&self, records: Vec<Record>) -> Dataset {
        Dataset::from_trusted(self.schema.clone(), records)
    }

    pub fn contains(&self, record: &Record) -> bool {
        self.records.iter().any(|r| r == record)
    }

    pub fn same_schema(&self, other: &Dataset) -> bool {
        Arc::ptr_eq(&self.schema, &other.schema) || *self.schema == *other.schema
    }

    /// Renders a cell as its CSV string.
    pub fn format_cell(&self, attr: usize, cell: Cell) -> String {
        format_cell(self.schema.attribute(attr), cell)
    }
}

pub(crate) fn format_cell(spec: &AttributeSpec, cell: Cell) -> String {
    match (cell, &spec.kind) {
        (Cell::Cat(c), AttributeKind::Categorical { categories }) => categories[c as usize].clone(),
        (Cell::Num(v), _) => format!("{v}"),
        (Cell::Cat(c), _) => c.to_string(),
    }
}

/// Metadata learned from the data itself.
///
/// This is the privacy-unsafe path: any algorithm consuming the result depends on
/// the exact records (including rare categories and extreme values) in `dataset`.
pub fn derive_metadata(dataset: &Dataset, pad_fraction: f64) -> Result<SchemaMetadata> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(pad_fraction >= 0.0 && pad_fraction.is_finite()) {
        return Err(Error::InvalidConfig(format!("pad_fraction must be >= 0, got {pad_fraction}")));
    }
    let schema = dataset.schema();
    let mut attrs = Vec::with_capacity(schema.len());
    for (idx, spec) in schema.attributes().iter().enumerate() {
        let kind = match &spec.kind {
            AttributeKind::Categorical { categories } => {
                let counts = dataset.category_counts(idx);
                AttributeKind::Categorical {
                    categories: categories
                        .iter()
                        .zip(&counts)
                        .filter(|(_, &n)| n > 0)
                        .map(|(c, _)| c.clone())
                        .collect(),
                }
            }
            AttributeKind::Continuous { bins, .. } => {
                let (lo, hi) = dataset
                    .column(idx)
                    .map(Cell::to_f64)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                let span = hi - lo;
                let (min, max) = if span > 0.0 {
                    (lo - pad_fraction * span, hi + pad_fraction * span)
                } else {
                    // a constant column still needs a non-empty range
                    (lo - 0.5, hi + 0.5)
                };
                AttributeKind::Continuous { min, max, bins: *bins }
            }
        };
        attrs.push(AttributeSpec {
            name: spec.name.clone(),
            kind,
        });
    }
    SchemaMetadata::new(attrs, schema.quasi_identifiers().to_vec())
}
