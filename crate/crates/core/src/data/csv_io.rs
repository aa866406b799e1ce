use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::dataset::{format_cell, Cell, Dataset, Record};
use super::schema::{AttributeKind, SchemaMetadata};
use crate::error::{Error, Result};

/// What to do with continuous values outside the schema range.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RangePolicy {
    #[default]
    Reject,
    Clamp,
}

pub fn load_csv(path: impl AsRef<Path>, schema: Arc<SchemaMetadata>, policy: RangePolicy) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema, policy)
}

/// Parses CSV with a header row; columns may appear in any order.
pub fn read_csv<R: Read>(reader: R, schema: Arc<SchemaMetadata>, policy: RangePolicy) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut column_of = Vec::with_capacity(schema.len());
    for name in schema.names() {
        let pos = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        column_of.push(pos);
    }

    let mut records = Vec::new();
    for (row, result) in rdr.records().enumerate() {
        let raw = result.map_err(|e| Error::ParseError {
            row,
            message: e.to_string(),
        })?;
        let mut cells = Vec::with_capacity(schema.len());
        for (spec, &col) in schema.attributes().iter().zip(&column_of) {
            let text = raw.get(col).ok_or_else(|| Error::ParseError {
                row,
                message: format!("missing field for `{}`", spec.name),
            })?;
            if text.is_empty() {
                return Err(Error::ParseError {
                    row,
                    message: format!("empty cell for `{}`", spec.name),
                });
            }
            let cell = match &spec.kind {
                AttributeKind::Categorical { categories } => {
                    let idx = categories.iter().position(|c| c == text).ok_or_else(|| Error::UnknownCategory {
                        attribute: spec.name.clone(),
                        value: text.to_string(),
                        row,
                    })?;
                    Cell::Cat(idx as u32)
                }
                AttributeKind::Continuous { min, max, .. } => {
                    let v: f64 = text.parse().map_err(|_| Error::ParseError {
                        row,
                        message: format!("`{text}` is not a number ({})", spec.name),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::ParseError {
                            row,
                            message: format!("non-finite value for `{}`", spec.name),
                        });
                    }
                    if v < *min || v > *max {
                        match policy {
                            RangePolicy::Reject => {
                                return Err(Error::OutOfRange {
                                    attribute: spec.name.clone(),
                                    row,
                                })
                            }
                            RangePolicy::Clamp => Cell::Num(v.clamp(*min, *max)),
                        }
                    } else {
                        Cell::Num(v)
                    }
                }
            };
            cells.push(cell);
        }
        records.push(Record::new(cells));
    }
    Ok(Dataset::from_trusted(schema, records))
}

pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let schema = dataset.schema();
    wtr.write_record(schema.names())?;
    for r in dataset.records() {
        wtr.write_record(
            r.cells()
                .iter()
                .zip(schema.attributes())
                .map(|(cell, spec)| format_cell(spec, *cell)),
        )?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(dataset, std::io::BufWriter::new(file))
}
