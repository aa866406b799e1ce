//! Deterministic row-level sanitisation: category grouping, rare-category removal,
//! quantile capping and k-anonymity by suppression.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::data::{bin_index, Cell, Dataset, PartialRecord, Record};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SanitiserConfig {
    /// Rows holding any category seen fewer than this many times are dropped.
    #[serde(default)]
    pub rare_category_threshold: usize,
    /// attribute -> (category -> replacement category)
    #[serde(default)]
    pub grouping_map: BTreeMap<String, BTreeMap<String, String>>,
    #[serde(default = "default_quantile_cap")]
    pub quantile_cap: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub quasi_identifiers: Vec<String>,
}

fn default_quantile_cap() -> f64 {
    0.95
}

fn default_k() -> usize {
    10
}

impl Default for SanitiserConfig {
    fn default() -> Self {
        SanitiserConfig {
            rare_category_threshold: 0,
            grouping_map: BTreeMap::new(),
            quantile_cap: default_quantile_cap(),
            k: default_k(),
            quasi_identifiers: Vec::new(),
        }
    }
}

impl SanitiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("sanitiser k must be >= 1".into()));
        }
        if !(self.quantile_cap > 0.0 && self.quantile_cap <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "quantile_cap must lie in (0, 1], got {}",
                self.quantile_cap
            )));
        }
        Ok(())
    }
}

/// Nearest-rank quantile: the smallest value with at least `q * n` values at or below it.
pub fn nearest_rank_quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[rank - 1])
}

pub fn sanitise(data: &Dataset, config: &SanitiserConfig) -> Result<Dataset> {
    config.validate()?;
    let schema = data.schema();

    let mut grouping: Vec<Option<Vec<u32>>> = vec![None; schema.len()];
    for (attr, table) in &config.grouping_map {
        let idx = schema
            .index_of(attr)
            .ok_or_else(|| Error::UnknownAttributeInConfig(attr.clone()))?;
        let spec = schema.attribute(idx);
        if !spec.is_categorical() {
            return Err(Error::InvalidConfig(format!("grouping applies to categorical attributes, `{attr}` is continuous")));
        }
        let mut remap: Vec<u32> = (0..spec.cardinality() as u32).collect();
        for (from, to) in table {
            let f = spec
                .category_index(from)
                .ok_or_else(|| Error::InvalidConfig(format!("`{attr}` has no category `{from}`")))?;
            let t = spec
                .category_index(to)
                .ok_or_else(|| Error::InvalidConfig(format!("`{attr}` has no category `{to}`")))?;
            remap[f] = t as u32;
        }
        grouping[idx] = Some(remap);
    }
    let qi: Vec<usize> = config
        .quasi_identifiers
        .iter()
        .map(|q| schema.index_of(q).ok_or_else(|| Error::UnknownAttributeInConfig(q.clone())))
        .collect::<Result<_>>()?;

    // (1) grouping
    let mut rows: Vec<Record> = data
        .records()
        .iter()
        .map(|r| {
            Record::new(
                r.cells()
                    .iter()
                    .zip(&grouping)
                    .map(|(cell, remap)| match (cell, remap) {
                        (Cell::Cat(c), Some(remap)) => Cell::Cat(remap[*c as usize]),
                        _ => *cell,
                    })
                    .collect(),
            )
        })
        .collect();

    // (2) rare categories, counted after grouping
    if config.rare_category_threshold > 0 {
        let grouped = data.with_records(rows);
        let counts: Vec<Option<Vec<usize>>> = (0..schema.len())
            .map(|i| schema.attribute(i).is_categorical().then(|| grouped.category_counts(i)))
            .collect();
        rows = grouped
            .into_records()
            .into_iter()
            .filter(|r| {
                r.cells().iter().zip(&counts).all(|(cell, counts)| match (cell, counts) {
                    (Cell::Cat(c), Some(counts)) => counts[*c as usize] >= config.rare_category_threshold,
                    _ => true,
                })
            })
            .collect();
    }

    // (3) cap continuous values at the input's quantile
    for idx in 0..schema.len() {
        if schema.attribute(idx).is_categorical() {
            continue;
        }
        let Some(cap) = nearest_rank_quantile(&data.numeric_column(idx), config.quantile_cap) else {
            continue;
        };
        for r in rows.iter_mut() {
            if let Cell::Num(v) = r.0[idx] {
                if v > cap {
                    r.0[idx] = Cell::Num(cap);
                }
            }
        }
    }

    // (4) suppress quasi-identifier classes smaller than k
    if !qi.is_empty() && config.k > 1 {
        let class_key = |r: &Record| -> Vec<u64> {
            qi.iter()
                .map(|&i| match r.get(i) {
                    Cell::Cat(c) => c as u64,
                    Cell::Num(v) => bin_index(v, schema.attribute(i)) as u64,
                })
                .collect()
        };
        let mut sizes: HashMap<Vec<u64>, usize> = HashMap::new();
        for r in &rows {
            *sizes.entry(class_key(r)).or_default() += 1;
        }
        rows.retain(|r| sizes[&class_key(r)] >= config.k);
    }

    Ok(data.with_records(rows))
}

/// Row indices whose cells equal every known cell of `probe`.
pub fn literal_link(data: &Dataset, probe: &PartialRecord) -> Vec<usize> {
    data.records()
        .iter()
        .enumerate()
        .filter(|(_, r)| probe.matches(r))
        .map(|(i, _)| i)
        .collect()
}
