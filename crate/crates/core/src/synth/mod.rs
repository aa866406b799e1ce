//! Generative models: independent histograms, greedy Bayesian networks (plain and
//! differentially private) and a bridge to external generator processes.
//!
//! A [`TrainedGenerator`] only exposes sampling. Models are fitted on a discretised
//! view of the data described by *metadata*: category lists and numeric ranges.
//! In [`MetadataMode::Provided`] the metadata is an independent input; in
//! [`MetadataMode::Learned`] it is read off the training data, which leaks
//! information outside of any differential-privacy guarantee.

mod codec;
mod external;
mod network;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{derive_metadata, Dataset, SchemaMetadata};
use crate::dp::{privbayes_mi_sensitivity, PrivacyBudget};
use crate::error::{Error, Result};
use crate::rng::sample_weighted;

use codec::Codec;
pub use external::{fit_sample_external, ExternalOptions};
pub use network::{BayesNet, ConditionalTable};
use network::{fit_tables, learn_structure, Privacy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeneratorKind {
    IndHist,
    BayNet,
    PrivBay,
    External,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetadataMode {
    #[default]
    Provided,
    Learned,
}

/// Handling of training values outside provided metadata.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViolationPolicy {
    /// Fail with [`Error::MetadataViolation`].
    #[default]
    Reject,
    /// Clip numeric values into range and drop records with unknown categories.
    Clamp,
}

pub const DEFAULT_NBINS: usize = 25;
pub const DEFAULT_DEGREE: usize = 1;

fn default_nbins() -> usize {
    DEFAULT_NBINS
}

fn default_degree() -> usize {
    DEFAULT_DEGREE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    #[serde(default = "default_nbins")]
    pub nbins: usize,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<PrivacyBudget>,
    #[serde(default)]
    pub metadata_mode: MetadataMode,
    /// Padding applied to learned numeric ranges, as a fraction of the observed span.
    #[serde(default)]
    pub metadata_pad: f64,
    #[serde(default)]
    pub on_violation: ViolationPolicy,
    /// Override for the mutual-information sensitivity used in private structure
    /// selection; defaults to the PrivBayes bound for the training-set size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mi_sensitivity: Option<f64>,
    /// Shell command template for [`GeneratorKind::External`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_cmd: Option<String>,
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind) -> Self {
        GeneratorSpec {
            kind,
            nbins: DEFAULT_NBINS,
            degree: DEFAULT_DEGREE,
            budget: None,
            metadata_mode: MetadataMode::Provided,
            metadata_pad: 0.0,
            on_violation: ViolationPolicy::Reject,
            mi_sensitivity: None,
            external_cmd: None,
        }
    }

    pub fn ind_hist() -> Self {
        Self::new(GeneratorKind::IndHist)
    }

    pub fn bay_net() -> Self {
        Self::new(GeneratorKind::BayNet)
    }

    pub fn priv_bay(epsilon: f64) -> Self {
        GeneratorSpec {
            budget: Some(PrivacyBudget {
                epsilon_total: epsilon,
                structure_fraction: crate::dp::DEFAULT_STRUCTURE_FRACTION,
            }),
            ..Self::new(GeneratorKind::PrivBay)
        }
    }

    pub fn external(cmd: impl Into<String>) -> Self {
        GeneratorSpec {
            external_cmd: Some(cmd.into()),
            ..Self::new(GeneratorKind::External)
        }
    }

    pub fn with_metadata_mode(mut self, mode: MetadataMode) -> Self {
        self.metadata_mode = mode;
        self
    }

    pub fn with_degree(mut self, degree: usize) -> Self {
        self.degree = degree;
        self
    }

    pub fn with_nbins(mut self, nbins: usize) -> Self {
        self.nbins = nbins;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.nbins == 0 {
            return Err(Error::InvalidConfig("nbins must be >= 1".into()));
        }
        if self.degree == 0 {
            return Err(Error::InvalidConfig("degree must be >= 1".into()));
        }
        if !(self.metadata_pad >= 0.0 && self.metadata_pad.is_finite()) {
            return Err(Error::InvalidConfig("metadata_pad must be >= 0".into()));
        }
        if let Some(s) = self.mi_sensitivity {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidSensitivity(s));
            }
        }
        match self.kind {
            GeneratorKind::PrivBay => self
                .budget
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("PrivBay requires a privacy budget".into()))?
                .validate(),
            GeneratorKind::External if self.external_cmd.is_none() => {
                Err(Error::InvalidConfig("External generator requires external_cmd".into()))
            }
            _ => Ok(()),
        }
    }

    /// Short human-readable label, e.g. `PrivBay(eps=0.1)`.
    pub fn label(&self) -> String {
        let base = match (self.kind, &self.budget) {
            (GeneratorKind::PrivBay, Some(b)) => format!("PrivBay(eps={})", b.epsilon_total),
            (kind, _) => format!("{kind:?}"),
        };
        match self.metadata_mode {
            MetadataMode::Provided => base,
            MetadataMode::Learned => format!("{base}[learned-metadata]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum LearnedDistribution {
    /// One marginal per attribute.
    Marginals(Vec<Vec<f64>>),
    Network(BayesNet),
}

/// Fit-time facts recorded for reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitProvenance {
    pub spec: GeneratorSpec,
    pub training_records: usize,
    pub dropped_records: usize,
    /// Metadata was learned from the training data.
    pub leaky_metadata: bool,
    pub mi_sensitivity: Option<f64>,
}

/// A fitted model. Immutable; sampling only needs a random stream.
#[derive(Debug, Clone)]
pub struct TrainedGenerator {
    schema: Arc<SchemaMetadata>,
    metadata: SchemaMetadata,
    codec: Codec,
    distribution: LearnedDistribution,
    provenance: FitProvenance,
}

impl TrainedGenerator {
    pub fn distribution(&self) -> &LearnedDistribution {
        &self.distribution
    }

    pub fn network(&self) -> Option<&BayesNet> {
        match &self.distribution {
            LearnedDistribution::Network(net) => Some(net),
            LearnedDistribution::Marginals(_) => None,
        }
    }

    pub fn marginals(&self) -> Option<&[Vec<f64>]> {
        match &self.distribution {
            LearnedDistribution::Marginals(m) => Some(m),
            LearnedDistribution::Network(_) => None,
        }
    }

    /// Metadata the model was fitted under.
    pub fn metadata(&self) -> &SchemaMetadata {
        &self.metadata
    }

    pub fn schema(&self) -> &SchemaMetadata {
        &self.schema
    }

    pub fn provenance(&self) -> &FitProvenance {
        &self.provenance
    }

    pub fn is_leaky(&self) -> bool {
        self.provenance.leaky_metadata
    }

    /// `m` i.i.d. records in the training data's schema.
    pub fn sample<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Dataset {
        let mut records = Vec::with_capacity(m);
        let d = self.codec.len();
        let mut codes = vec![0u32; d];
        for _ in 0..m {
            match &self.distribution {
                LearnedDistribution::Marginals(marginals) => {
                    for (code, marginal) in codes.iter_mut().zip(marginals) {
                        *code = sample_weighted(marginal, rng) as u32;
                    }
                }
                LearnedDistribution::Network(net) => codes = net.sample_codes(rng),
            }
            records.push(self.codec.decode(&codes, rng));
        }
        Dataset::from_trusted(self.schema.clone(), records)
    }
}

/// Fits a built-in generator on `data`.
///
/// `metadata` is used in provided mode and ignored in learned mode, where it is
/// recomputed from `data`.
pub fn fit<R: Rng + ?Sized>(spec: &GeneratorSpec, data: &Dataset, metadata: &SchemaMetadata, rng: &mut R) -> Result<TrainedGenerator> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if spec.kind == GeneratorKind::External {
        return Err(Error::InvalidConfig("external generators are run through fit_sample_external".into()));
    }
    let (metadata, leaky) = match spec.metadata_mode {
        MetadataMode::Provided => (metadata.clone(), false),
        MetadataMode::Learned => (derive_metadata(data, spec.metadata_pad)?, true),
    };
    let codec = Codec::new(data.schema(), &metadata, spec.nbins)?;
    let columns = codec.encode(data, spec.on_violation)?;
    let kept = columns.first().map_or(0, Vec::len);
    if kept == 0 {
        return Err(Error::EmptyDataset);
    }
    let cards = codec.cardinalities();
    let mut mi_sensitivity = None;

    let distribution = match spec.kind {
        GeneratorKind::IndHist => {
            let marginals = columns
                .iter()
                .zip(&cards)
                .map(|(col, &k)| {
                    let mut hist = vec![0.0; k];
                    for &c in col {
                        hist[c as usize] += 1.0;
                    }
                    hist.iter_mut().for_each(|h| *h /= kept as f64);
                    hist
                })
                .collect();
            LearnedDistribution::Marginals(marginals)
        }
        GeneratorKind::BayNet => {
            let structure = learn_structure(&columns, &cards, spec.degree, Privacy::None, rng)?;
            LearnedDistribution::Network(fit_tables(&columns, &cards, &structure, Privacy::None, rng)?)
        }
        GeneratorKind::PrivBay => {
            let budget = spec.budget.expect("validated");
            let sensitivity = spec.mi_sensitivity.unwrap_or_else(|| privbayes_mi_sensitivity(kept));
            mi_sensitivity = Some(sensitivity);
            let privacy = Privacy::Private {
                structure_epsilon: budget.structure_epsilon(),
                tables_epsilon: budget.tables_epsilon(),
                sensitivity,
            };
            let structure = learn_structure(&columns, &cards, spec.degree, privacy, rng)?;
            LearnedDistribution::Network(fit_tables(&columns, &cards, &structure, privacy, rng)?)
        }
        GeneratorKind::External => unreachable!(),
    };

    Ok(TrainedGenerator {
        schema: data.schema_arc().clone(),
        metadata,
        codec,
        distribution,
        provenance: FitProvenance {
            spec: spec.clone(),
            training_records: data.len(),
            dropped_records: data.len() - kept,
            leaky_metadata: leaky,
            mi_sensitivity,
        },
    })
}

/// Fits and samples in one step, dispatching external generators to the subprocess bridge.
pub fn fit_sample<R: Rng + ?Sized>(
    spec: &GeneratorSpec,
    data: &Dataset,
    metadata: &SchemaMetadata,
    m: usize,
    rng: &mut R,
    external: &ExternalOptions,
) -> Result<Dataset> {
    if m == 0 {
        return Err(Error::InvalidConfig("synthetic size m must be >= 1".into()));
    }
    match spec.kind {
        GeneratorKind::External => fit_sample_external(spec, data, metadata, m, rng, external),
        _ => Ok(fit(spec, data, metadata, rng)?.sample(m, rng)),
    }
}
