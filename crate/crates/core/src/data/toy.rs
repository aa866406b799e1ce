//! Desk-scale synthetic populations with controllable structure and planted outliers.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{Cell, Dataset, Record};
use super::schema::{AttributeKind, AttributeSpec, SchemaMetadata, DEFAULT_BINS};
use crate::error::{Error, Result};
use crate::rng::sample_weighted;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPopulationConfig {
    pub attributes: Vec<ToyAttribute>,
    #[serde(default)]
    pub couplings: Vec<Coupling>,
    /// Rows written verbatim (apart from unspecified cells) over the last rows of the sample.
    #[serde(default)]
    pub outliers: Vec<BTreeMap<String, serde_json::Value>>,
    #[serde(default)]
    pub quasi_identifiers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ToyAttribute {
    Categorical {
        name: String,
        categories: Vec<String>,
        /// Zero weights are allowed: such categories only occur through planted outliers.
        weights: Vec<f64>,
    },
    Continuous {
        name: String,
        min: f64,
        max: f64,
        #[serde(default = "default_bins")]
        bins: usize,
        components: Vec<MixtureComponent>,
    },
}

fn default_bins() -> usize {
    DEFAULT_BINS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

/// With probability `strength` the child follows its categorical parent: a categorical
/// child takes the parent's index (modulo its sampleable categories), a continuous child
/// draws from the mixture component with the parent's index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub parent: String,
    pub child: String,
    pub strength: f64,
}

impl ToyAttribute {
    pub fn name(&self) -> &str {
        match self {
            ToyAttribute::Categorical { name, .. } | ToyAttribute::Continuous { name, .. } => name,
        }
    }
}

impl ToyPopulationConfig {
    pub fn schema(&self) -> Result<SchemaMetadata> {
        let attrs = self
            .attributes
            .iter()
            .map(|a| match a {
                ToyAttribute::Categorical { name, categories, .. } => AttributeSpec::categorical(name.clone(), categories.clone()),
                ToyAttribute::Continuous { name, min, max, bins, .. } => AttributeSpec::continuous(name.clone(), *min, *max, *bins),
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        SchemaMetadata::new(attrs, self.quasi_identifiers.clone()).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    fn validate(&self, schema: &SchemaMetadata) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        for a in &self.attributes {
            let weights: Vec<f64> = match a {
                ToyAttribute::Categorical { categories, weights, .. } => {
                    if weights.len() != categories.len() {
                        return bad(format!("`{}`: weights and categories differ in length", a.name()));
                    }
                    weights.clone()
                }
                ToyAttribute::Continuous { components, .. } => {
                    if components.iter().any(|c| !(c.sd >= 0.0 && c.sd.is_finite() && c.mean.is_finite())) {
                        return bad(format!("`{}`: mixture components need finite mean and sd >= 0", a.name()));
                    }
                    components.iter().map(|c| c.weight).collect()
                }
            };
            if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
                return bad(format!("`{}`: weights must be non-negative with a positive sum", a.name()));
            }
        }
        for c in &self.couplings {
            let p = schema.index_of(&c.parent);
            let ch = schema.index_of(&c.child);
            match (p, ch) {
                (Some(p), Some(ch)) if p < ch && schema.attribute(p).is_categorical() => {}
                _ => return bad(format!("coupling {} -> {}: parent must be an earlier categorical attribute", c.parent, c.child)),
            }
            if !(0.0..=1.0).contains(&c.strength) {
                return bad(format!("coupling {} -> {}: strength must lie in [0, 1]", c.parent, c.child));
            }
        }
        for o in &self.outliers {
            for name in o.keys() {
                if schema.index_of(name).is_none() {
                    return bad(format!("outlier references unknown attribute `{name}`"));
                }
            }
        }
        Ok(())
    }

    fn planted_cell(&self, spec: &AttributeSpec, value: &serde_json::Value) -> Result<Cell> {
        match (&spec.kind, value) {
            (AttributeKind::Categorical { .. }, serde_json::Value::String(s)) => spec
                .category_index(s)
                .map(|i| Cell::Cat(i as u32))
                .ok_or_else(|| Error::InvalidConfig(format!("outlier category `{s}` not in `{}`", spec.name))),
            (AttributeKind::Continuous { min, max, .. }, v) => {
                let x = v
                    .as_f64()
                    .ok_or_else(|| Error::InvalidConfig(format!("outlier value for `{}` must be a number", spec.name)))?;
                if x < *min || x > *max {
                    return Err(Error::InvalidConfig(format!("outlier value {x} outside range of `{}`", spec.name)));
                }
                Ok(Cell::Num(x))
            }
            _ => Err(Error::InvalidConfig(format!("outlier value for `{}` has the wrong type", spec.name))),
        }
    }
}

/// Draws `n` records. Planted outliers (if any) occupy the last rows.
pub fn sample_toy_population<R: Rng + ?Sized>(config: &ToyPopulationConfig, n: usize, rng: &mut R) -> Result<Dataset> {
    let schema = config.schema()?;
    config.validate(&schema)?;
    if n == 0 || n < config.outliers.len() {
        return Err(Error::InvalidConfig(format!(
            "population size {n} must be >= 1 and cover {} planted outliers",
            config.outliers.len()
        )));
    }

    let parent_of: Vec<Option<(usize, f64)>> = schema
        .names()
        .map(|name| {
            config
                .couplings
                .iter()
                .find(|c| c.child == name)
                .map(|c| (schema.index_of(&c.parent).unwrap(), c.strength))
        })
        .collect();
    let normals: Vec<Vec<Normal<f64>>> = config
        .attributes
        .iter()
        .map(|a| match a {
            ToyAttribute::Continuous { components, .. } => components
                .iter()
                .map(|c| Normal::new(c.mean, c.sd).expect("validated"))
                .collect(),
            ToyAttribute::Categorical { .. } => Vec::new(),
        })
        .collect();

    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let mut cells: Vec<Cell> = Vec::with_capacity(schema.len());
        for (idx, attr) in config.attributes.iter().enumerate() {
            let coupled = parent_of[idx].and_then(|(p, strength)| {
                let follow = rng.gen::<f64>() < strength;
                follow.then(|| cells[p].as_cat().expect("categorical parent") as usize)
            });
            let cell = match attr {
                ToyAttribute::Categorical { weights, .. } => {
                    let i = match coupled {
                        Some(p) => {
                            let live: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
                            live[p % live.len()]
                        }
                        None => sample_weighted(weights, rng),
                    };
                    Cell::Cat(i as u32)
                }
                ToyAttribute::Continuous { min, max, components, .. } => {
                    let comp = match coupled {
                        Some(p) => p % components.len(),
                        None => sample_weighted(&components.iter().map(|c| c.weight).collect::<Vec<_>>(), rng),
                    };
                    Cell::Num(normals[idx][comp].sample(rng).clamp(*min, *max))
                }
            };
            cells.push(cell);
        }
        records.push(Record::new(cells));
    }

    let first_planted = n - config.outliers.len();
    for (k, planted) in config.outliers.iter().enumerate() {
        let row = &mut records[first_planted + k];
        for (name, value) in planted {
            let idx = schema.index_of(name).expect("validated");
            row.0[idx] = config.planted_cell(schema.attribute(idx), value)?;
        }
    }
    Ok(Dataset::from_trusted(Arc::new(schema), records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn single_cat(weights: Vec<f64>) -> ToyPopulationConfig {
        ToyPopulationConfig {
            attributes: vec![ToyAttribute::Categorical {
                name: "c".into(),
                categories: (0..weights.len()).map(|i| ["A", "B", "C"][i].to_string()).collect(),
                weights,
            }],
            couplings: vec![],
            outliers: vec![],
            quasi_identifiers: vec![],
        }
    }

    #[test]
    fn degenerate_weights() {
        let ds = sample_toy_population(&single_cat(vec![1.0]), 4, &mut rng_from_seed(0)).unwrap();
        assert_eq!(ds.len(), 4);
        assert!(ds.records().iter().all(|r| r.get(0) == Cell::Cat(0)));
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = single_cat(vec![0.5, 0.3, 0.2]);
        let a = sample_toy_population(&cfg, 50, &mut rng_from_seed(9)).unwrap();
        let b = sample_toy_population(&cfg, 50, &mut rng_from_seed(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn frequency_within_binomial_band() {
        let ds = sample_toy_population(&single_cat(vec![0.9, 0.1]), 10_000, &mut rng_from_seed(3)).unwrap();
        let freq = ds.category_counts(0)[0] as f64 / 10_000.0;
        assert!((0.88..=0.92).contains(&freq), "{freq}");
    }

    #[test]
    fn invalid_weights() {
        assert!(sample_toy_population(&single_cat(vec![0.0, 0.0]), 4, &mut rng_from_seed(0)).is_err());
        assert!(sample_toy_population(&single_cat(vec![-1.0, 2.0]), 4, &mut rng_from_seed(0)).is_err());
        assert!(sample_toy_population(&single_cat(vec![1.0]), 0, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn planted_outliers_and_coupling() {
        let cfg: ToyPopulationConfig = serde_json::from_value(serde_json::json!({
            "attributes": [
                {"kind": "categorical", "name": "c", "categories": ["A", "B", "Z"], "weights": [0.5, 0.5, 0.0]},
                {"kind": "categorical", "name": "d", "categories": ["x", "y"], "weights": [0.5, 0.5]},
                {"kind": "continuous", "name": "v", "min": 0.0, "max": 100.0, "bins": 10,
                 "components": [{"weight": 1.0, "mean": 20.0, "sd": 2.0}]}
            ],
            "couplings": [{"parent": "c", "child": "d", "strength": 1.0}],
            "outliers": [{"c": "Z", "v": 99.0}]
        }))
        .unwrap();
        let ds = sample_toy_population(&cfg, 200, &mut rng_from_seed(5)).unwrap();
        let last = ds.record(199);
        assert_eq!(last.get(0), Cell::Cat(2));
        assert_eq!(last.get(2), Cell::Num(99.0));
        assert_eq!(ds.category_counts(0)[2], 1);
        for r in &ds.records()[..199] {
            assert_eq!(r.get(0).as_cat(), r.get(1).as_cat());
        }
    }
}
