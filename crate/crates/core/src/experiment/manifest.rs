//! Expected-property manifests: JSON pointers into a report with a comparison bound.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "==")]
    Eq,
}

impl Comparator {
    pub fn holds(self, actual: f64, bound: f64) -> bool {
        match self {
            Comparator::Lt => actual < bound,
            Comparator::Le => actual <= bound,
            Comparator::Gt => actual > bound,
            Comparator::Ge => actual >= bound,
            Comparator::Eq => actual == bound,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Eq => "==",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// JSON pointer into `report.json`.
    pub metric_path: String,
    pub comparator: Comparator,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestCheck {
    pub metric_path: String,
    pub comparator: Comparator,
    pub bound: f64,
    /// `None` when the pointer does not resolve to a number.
    pub actual: Option<f64>,
    pub passed: bool,
}

/// Escapes a key for use as one JSON-pointer segment.
pub fn pointer_segment(key: &str) -> String {
    key.replace('~', "~0").replace('/', "~1")
}

pub fn check_manifest(report: &serde_json::Value, manifest: &[ManifestEntry]) -> Vec<ManifestCheck> {
    manifest
        .iter()
        .map(|entry| {
            let actual = report.pointer(&entry.metric_path).and_then(serde_json::Value::as_f64);
            ManifestCheck {
                metric_path: entry.metric_path.clone(),
                comparator: entry.comparator,
                bound: entry.bound,
                actual,
                passed: actual.is_some_and(|a| entry.comparator.holds(a, entry.bound)),
            }
        })
        .collect()
}
