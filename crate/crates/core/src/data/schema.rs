use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-attribute domain description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAttribute", into = "RawAttribute")]
pub struct AttributeSpec {
    pub name: String,
    pub kind: AttributeKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttributeKind {
    Categorical { categories: Vec<String> },
    Continuous { min: f64, max: f64, bins: usize },
}

impl AttributeSpec {
    pub fn categorical<S: Into<String>>(name: impl Into<String>, categories: impl IntoIterator<Item = S>) -> Result<Self> {
        let spec = AttributeSpec {
            name: name.into(),
            kind: AttributeKind::Categorical {
                categories: categories.into_iter().map(Into::into).collect(),
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn continuous(name: impl Into<String>, min: f64, max: f64, bins: usize) -> Result<Self> {
        let spec = AttributeSpec {
            name: name.into(),
            kind: AttributeKind::Continuous { min, max, bins },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            AttributeKind::Categorical { categories } => {
                if categories.is_empty() {
                    return Err(Error::InvalidSchema(format!("`{}` has no categories", self.name)));
                }
                let mut seen = HashSet::new();
                for c in categories {
                    if !seen.insert(c.as_str()) {
                        return Err(Error::InvalidSchema(format!("`{}` repeats category `{c}`", self.name)));
                    }
                }
            }
            AttributeKind::Continuous { min, max, bins } => {
                if !(min.is_finite() && max.is_finite() && min < max) {
                    return Err(Error::InvalidSchema(format!("`{}` needs finite min < max", self.name)));
                }
                if *bins == 0 {
                    return Err(Error::InvalidSchema(format!("`{}` needs bins >= 1", self.name)));
                }
            }
        }
        Ok(())
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, AttributeKind::Categorical { .. })
    }

    pub fn categories(&self) -> Option<&[String]> {
        match &self.kind {
            AttributeKind::Categorical { categories } => Some(categories),
            AttributeKind::Continuous { .. } => None,
        }
    }

    pub fn category_index(&self, value: &str) -> Option<usize> {
        self.categories()?.iter().position(|c| c == value)
    }

    pub fn range(&self) -> Option<(f64, f64)> {
        match self.kind {
            AttributeKind::Continuous { min, max, .. } => Some((min, max)),
            AttributeKind::Categorical { .. } => None,
        }
    }

    /// Number of categories, or number of histogram bins for continuous attributes.
    pub fn cardinality(&self) -> usize {
        match &self.kind {
            AttributeKind::Categorical { categories } => categories.len(),
            AttributeKind::Continuous { bins, .. } => *bins,
        }
    }
}

/// Uniform-width bin of `value` over `[min, max]`; out-of-range values clamp to the
/// first or last bin and `max` itself belongs to the last bin.
pub fn bin_in_range(value: f64, min: f64, max: f64, bins: usize) -> usize {
    debug_assert!(bins >= 1 && min < max);
    if value.is_nan() || value <= min {
        return 0;
    }
    if value >= max {
        return bins - 1;
    }
    let idx = ((value - min) / (max - min) * bins as f64).floor() as usize;
    idx.min(bins - 1)
}

/// Bin index of a continuous value under the attribute's schema bins.
///
/// Panics if `spec` is categorical.
pub fn bin_index(value: f64, spec: &AttributeSpec) -> usize {
    match spec.kind {
        AttributeKind::Continuous { min, max, bins } => bin_in_range(value, min, max, bins),
        AttributeKind::Categorical { .. } => panic!("bin_index called on categorical attribute `{}`", spec.name),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawAttribute {
    name: String,
    kind: RawKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    categories: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bins: Option<usize>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RawKind {
    Categorical,
    Continuous,
}

impl TryFrom<RawAttribute> for AttributeSpec {
    type Error = Error;

    fn try_from(raw: RawAttribute) -> Result<Self> {
        let missing = |field: &str| Error::InvalidSchema(format!("`{}` is missing `{field}`", raw.name));
        let kind = match raw.kind {
            RawKind::Categorical => AttributeKind::Categorical {
                categories: raw.categories.clone().ok_or_else(|| missing("categories"))?,
            },
            RawKind::Continuous => AttributeKind::Continuous {
                min: raw.min.ok_or_else(|| missing("min"))?,
                max: raw.max.ok_or_else(|| missing("max"))?,
                bins: raw.bins.unwrap_or(DEFAULT_BINS),
            },
        };
        let spec = AttributeSpec { name: raw.name, kind };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<AttributeSpec> for RawAttribute {
    fn from(spec: AttributeSpec) -> Self {
        match spec.kind {
            AttributeKind::Categorical { categories } => RawAttribute {
                name: spec.name,
                kind: RawKind::Categorical,
                categories: Some(categories),
                min: None,
                max: None,
                bins: None,
            },
            AttributeKind::Continuous { min, max, bins } => RawAttribute {
                name: spec.name,
                kind: RawKind::Continuous,
                categories: None,
                min: Some(min),
                max: Some(max),
                bins: Some(bins),
            },
        }
    }
}

/// Histogram resolution used when a schema file omits `bins`.
pub const DEFAULT_BINS: usize = 25;

/// Attribute list plus the quasi-identifier set used by the sanitiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema")]
pub struct SchemaMetadata {
    attributes: Vec<AttributeSpec>,
    #[serde(default)]
    quasi_identifiers: Vec<String>,
}

#[derive(Deserialize)]
struct RawSchema {
    attributes: Vec<AttributeSpec>,
    #[serde(default)]
    quasi_identifiers: Vec<String>,
}

impl TryFrom<RawSchema> for SchemaMetadata {
    type Error = Error;

    fn try_from(raw: RawSchema) -> Result<Self> {
        SchemaMetadata::new(raw.attributes, raw.quasi_identifiers)
    }
}

impl SchemaMetadata {
    pub fn new(attributes: Vec<AttributeSpec>, quasi_identifiers: Vec<String>) -> Result<Self> {
        let mut names = HashSet::new();
        for a in &attributes {
            a.validate()?;
            if !names.insert(a.name.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate attribute `{}`", a.name)));
            }
        }
        for q in &quasi_identifiers {
            if !names.contains(q.as_str()) {
                return Err(Error::InvalidSchema(format!("quasi-identifier `{q}` is not an attribute")));
            }
        }
        Ok(SchemaMetadata {
            attributes,
            quasi_identifiers,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serialises")
    }

    pub fn attributes(&self) -> &[AttributeSpec] {
        &self.attributes
    }

    pub fn quasi_identifiers(&self) -> &[String] {
        &self.quasi_identifiers
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn attribute(&self, idx: usize) -> &AttributeSpec {
        &self.attributes[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn require_index(&self, name: &str) -> Result<usize> {
        self.index_of(name).ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.name.as_str())
    }

    /// Same attribute names, kinds and order.
    pub fn same_layout(&self, other: &SchemaMetadata) -> bool {
        self.attributes.len() == other.attributes.len()
            && self
                .attributes
                .iter()
                .zip(&other.attributes)
                .all(|(a, b)| a.name == b.name && a.is_categorical() == b.is_categorical())
    }

    pub fn with_quasi_identifiers(mut self, qis: Vec<String>) -> Result<Self> {
        self.quasi_identifiers = qis;
        SchemaMetadata::new(self.attributes, self.quasi_identifiers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cont(min: f64, max: f64, bins: usize) -> AttributeSpec {
        AttributeSpec::continuous("x", min, max, bins).unwrap()
    }

    #[test]
    fn bin_edges() {
        let spec = cont(0.0, 1.0, 10);
        assert_eq!(bin_index(0.0, &spec), 0);
        assert_eq!(bin_index(1.0, &spec), 9);
        assert_eq!(bin_index(-5.0, &spec), 0);
        assert_eq!(bin_index(7.0, &spec), 9);
        // floor((4.2 - 0) / 2) = 2
        assert_eq!(bin_index(4.2, &cont(0.0, 10.0, 5)), 2);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(AttributeSpec::categorical("c", Vec::<String>::new()).is_err());
        assert!(AttributeSpec::categorical("c", ["a", "a"]).is_err());
        assert!(AttributeSpec::continuous("x", 1.0, 1.0, 3).is_err());
        assert!(AttributeSpec::continuous("x", 0.0, 1.0, 0).is_err());
        let a = AttributeSpec::categorical("c", ["a"]).unwrap();
        assert!(SchemaMetadata::new(vec![a.clone(), a.clone()], vec![]).is_err());
        assert!(SchemaMetadata::new(vec![a], vec!["nope".into()]).is_err());
    }

    #[test]
    fn schema_json_round_trip() {
        let text = r#"{
            "attributes": [
                {"name": "age", "kind": "continuous", "min": 0, "max": 100, "bins": 10},
                {"name": "sex", "kind": "categorical", "categories": ["F", "M"]}
            ],
            "quasi_identifiers": ["age"]
        }"#;
        let schema = SchemaMetadata::from_json_str(text).unwrap();
        assert_eq!(schema.len(), 2);
        assert_eq!(schema.attribute(0).range(), Some((0.0, 100.0)));
        let again = SchemaMetadata::from_json_str(&schema.to_json_string()).unwrap();
        assert_eq!(schema, again);
    }

    #[test]
    fn schema_json_validates() {
        let text = r#"{"attributes": [{"name": "x", "kind": "continuous", "min": 5, "max": 1}]}"#;
        assert!(SchemaMetadata::from_json_str(text).is_err());
    }
}
