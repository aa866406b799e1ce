//! Dataset-level feature extractors for the membership-inference distinguisher.
//!
//! Every extractor maps a whole dataset to a vector whose length depends only on the
//! schema, so vectors from different synthetic datasets line up.

use serde::{Deserialize, Serialize};

use crate::data::{bin_index, AttributeKind, Cell, Dataset, SchemaMetadata};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSet {
    Naive,
    Hist,
    Corr,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 3] = [FeatureSet::Naive, FeatureSet::Hist, FeatureSet::Corr];

    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::Naive => "naive",
            FeatureSet::Hist => "hist",
            FeatureSet::Corr => "corr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureVector {
    pub set_id: FeatureSet,
    pub values: Vec<f64>,
}

pub fn extract(set: FeatureSet, data: &Dataset) -> Result<FeatureVector> {
    match set {
        FeatureSet::Naive => f_naive(data),
        FeatureSet::Hist => f_hist(data),
        FeatureSet::Corr => f_corr(data),
    }
}

/// Vector length of `set` for `schema`.
pub fn feature_len(schema: &SchemaMetadata, set: FeatureSet) -> usize {
    match set {
        FeatureSet::Naive => 3 * schema.len(),
        FeatureSet::Hist => schema.attributes().iter().map(|a| a.cardinality()).sum(),
        FeatureSet::Corr => {
            let cols = corr_columns(schema);
            cols * cols.saturating_sub(1) / 2
        }
    }
}

fn corr_columns(schema: &SchemaMetadata) -> usize {
    schema
        .attributes()
        .iter()
        .map(|a| match &a.kind {
            AttributeKind::Categorical { categories } => categories.len(),
            AttributeKind::Continuous { .. } => 1,
        })
        .sum()
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Per numeric attribute: mean, median, population variance. Per categorical
/// attribute: number of distinct categories, most and least frequent observed
/// category (ties toward the lowest index).
pub fn f_naive(data: &Dataset) -> Result<FeatureVector> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let schema = data.schema();
    let mut values = Vec::with_capacity(feature_len(schema, FeatureSet::Naive));
    for (idx, spec) in schema.attributes().iter().enumerate() {
        if spec.is_categorical() {
            let counts = data.category_counts(idx);
            let observed: Vec<(usize, usize)> = counts.iter().copied().enumerate().filter(|&(_, n)| n > 0).collect();
            let mut most = observed[0];
            let mut least = observed[0];
            for &(i, n) in &observed[1..] {
                if n > most.1 {
                    most = (i, n);
                }
                if n < least.1 {
                    least = (i, n);
                }
            }
            values.extend([observed.len() as f64, most.0 as f64, least.0 as f64]);
        } else {
            let mut col = data.numeric_column(idx);
            let mu = mean(&col);
            let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / col.len() as f64;
            let med = median(&mut col);
            values.extend([mu, med, var]);
        }
    }
    Ok(FeatureVector {
        set_id: FeatureSet::Naive,
        values,
    })
}

/// Normalised per-attribute histograms: categories for categorical attributes, schema
/// bins for continuous ones.
pub fn f_hist(data: &Dataset) -> Result<FeatureVector> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let schema = data.schema();
    let n = data.len() as f64;
    let mut values = Vec::with_capacity(feature_len(schema, FeatureSet::Hist));
    for (idx, spec) in schema.attributes().iter().enumerate() {
        let mut block = vec![0.0; spec.cardinality()];
        for cell in data.column(idx) {
            let b = match cell {
                Cell::Cat(c) => c as usize,
                Cell::Num(v) => bin_index(v, spec),
            };
            block[b] += 1.0;
        }
        values.extend(block.into_iter().map(|c| c / n));
    }
    Ok(FeatureVector {
        set_id: FeatureSet::Hist,
        values,
    })
}

/// Upper triangle (row-major, no diagonal) of the Pearson correlation matrix over
/// numeric columns and one-hot indicators of every schema category. Pairs involving a
/// zero-variance column are 0.
pub fn f_corr(data: &Dataset) -> Result<FeatureVector> {
    if data.len() < 2 {
        return Err(Error::TooFewRecords {
            needed: 2,
            got: data.len(),
        });
    }
    let schema = data.schema();
    let n = data.len() as f64;
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(corr_columns(schema));
    for (idx, spec) in schema.attributes().iter().enumerate() {
        match &spec.kind {
            AttributeKind::Categorical { categories } => {
                for c in 0..categories.len() as u32 {
                    columns.push(data.column(idx).map(|cell| f64::from(cell == Cell::Cat(c))).collect());
                }
            }
            AttributeKind::Continuous { .. } => columns.push(data.numeric_column(idx)),
        }
    }
    let centred: Vec<(Vec<f64>, f64)> = columns
        .into_iter()
        .map(|col| {
            let mu = col.iter().sum::<f64>() / n;
            let c: Vec<f64> = col.into_iter().map(|v| v - mu).collect();
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            (c, norm)
        })
        .collect();
    let mut values = Vec::with_capacity(feature_len(schema, FeatureSet::Corr));
    for i in 0..centred.len() {
        for j in i + 1..centred.len() {
            let (a, na) = &centred[i];
            let (b, nb) = &centred[j];
            let r = if *na <= 1e-12 || *nb <= 1e-12 {
                0.0
            } else {
                (a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)).clamp(-1.0, 1.0)
            };
            values.push(r);
        }
    }
    Ok(FeatureVector {
        set_id: FeatureSet::Corr,
        values,
    })
}
