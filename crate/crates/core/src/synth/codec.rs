//! Translation between dataset cells and the discrete codes a model is fitted on.

use rand::Rng;

use crate::data::{bin_in_range, AttributeKind, Cell, Dataset, Record, SchemaMetadata};
use crate::error::{Error, Result};

use super::ViolationPolicy;

#[derive(Debug, Clone)]
enum AttrCodec {
    Categorical {
        /// data-schema index -> model code
        to_model: Vec<Option<u32>>,
        /// model code -> data-schema index
        to_data: Vec<u32>,
    },
    Continuous {
        min: f64,
        max: f64,
        bins: usize,
    },
}

/// Discretisation of a data schema under model metadata: categories are matched by
/// name, continuous attributes are cut into `nbins` uniform bins over the metadata range.
#[derive(Debug, Clone)]
pub(crate) struct Codec {
    attrs: Vec<(String, AttrCodec)>,
}

impl Codec {
    pub fn new(data_schema: &SchemaMetadata, metadata: &SchemaMetadata, nbins: usize) -> Result<Self> {
        if !data_schema.same_layout(metadata) {
            return Err(Error::InvalidConfig("metadata attributes do not match the data schema".into()));
        }
        let mut attrs = Vec::with_capacity(metadata.len());
        for (data_spec, meta_spec) in data_schema.attributes().iter().zip(metadata.attributes()) {
            let codec = match (&data_spec.kind, &meta_spec.kind) {
                (AttributeKind::Categorical { categories: data_cats }, AttributeKind::Categorical { categories }) => {
                    let to_data = categories
                        .iter()
                        .map(|c| {
                            data_spec.category_index(c).map(|i| i as u32).ok_or_else(|| {
                                Error::InvalidConfig(format!("metadata category `{c}` of `{}` is not in the data schema", meta_spec.name))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let mut to_model = vec![None; data_cats.len()];
                    for (code, &d) in to_data.iter().enumerate() {
                        to_model[d as usize] = Some(code as u32);
                    }
                    AttrCodec::Categorical { to_model, to_data }
                }
                (AttributeKind::Continuous { .. }, AttributeKind::Continuous { min, max, .. }) => AttrCodec::Continuous {
                    min: *min,
                    max: *max,
                    bins: nbins,
                },
                _ => unreachable!("same_layout checked kinds"),
            };
            attrs.push((meta_spec.name.clone(), codec));
        }
        Ok(Codec { attrs })
    }

    pub fn len(&self) -> usize {
        self.attrs.len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.attrs
            .iter()
            .map(|(_, a)| match a {
                AttrCodec::Categorical { to_data, .. } => to_data.len(),
                AttrCodec::Continuous { bins, .. } => *bins,
            })
            .collect()
    }

    /// Column-major codes for every record kept under `policy`.
    pub fn encode(&self, data: &Dataset, policy: ViolationPolicy) -> Result<Vec<Vec<u32>>> {
        let mut columns: Vec<Vec<u32>> = vec![Vec::with_capacity(data.len()); self.len()];
        'records: for record in data.records() {
            let mut row = Vec::with_capacity(self.len());
            for ((name, codec), cell) in self.attrs.iter().zip(record.cells()) {
                let code = match (codec, cell) {
                    (AttrCodec::Categorical { to_model, .. }, Cell::Cat(c)) => match to_model[*c as usize] {
                        Some(code) => code,
                        None => match policy {
                            ViolationPolicy::Reject => return Err(Error::MetadataViolation(name.clone())),
                            ViolationPolicy::Clamp => continue 'records,
                        },
                    },
                    (AttrCodec::Continuous { min, max, bins }, Cell::Num(v)) => {
                        if (*v < *min || *v > *max) && policy == ViolationPolicy::Reject {
                            return Err(Error::MetadataViolation(name.clone()));
                        }
                        bin_in_range(*v, *min, *max, *bins) as u32
                    }
                    _ => unreachable!("dataset conforms to its schema"),
                };
                row.push(code);
            }
            for (col, code) in columns.iter_mut().zip(row) {
                col.push(code);
            }
        }
        Ok(columns)
    }

    /// Record for a code vector; continuous codes become a uniform draw inside their bin.
    pub fn decode<R: Rng + ?Sized>(&self, codes: &[u32], rng: &mut R) -> Record {
        let cells = self
            .attrs
            .iter()
            .zip(codes)
            .map(|((_, codec), &code)| match codec {
                AttrCodec::Categorical { to_data, .. } => Cell::Cat(to_data[code as usize]),
                AttrCodec::Continuous { min, max, bins } => {
                    let width = (max - min) / *bins as f64;
                    let lo = min + width * code as f64;
                    let v = lo + width * rng.gen::<f64>();
                    Cell::Num(v.clamp(*min, *max))
                }
            })
            .collect();
        Record::new(cells)
    }
}
