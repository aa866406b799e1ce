//! Release mechanisms a data holder may apply before publishing.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SchemaMetadata};
use crate::error::{Error, Result};
use crate::sanitiser::{sanitise, SanitiserConfig};
use crate::synth::{self, ExternalOptions, GeneratorKind, GeneratorSpec};

/// How the published dataset relates to the raw one; decides the adversary's strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PublishedKind {
    Raw,
    Sanitised,
    Synthetic,
}

#[derive(Debug, Clone)]
pub enum Mechanism {
    /// Fit a generator and publish `m` sampled records. `metadata` is used in provided
    /// mode.
    Generator {
        spec: GeneratorSpec,
        metadata: Arc<SchemaMetadata>,
    },
    Sanitiser(SanitiserConfig),
    Raw,
}

impl Mechanism {
    pub fn generator(spec: GeneratorSpec, metadata: Arc<SchemaMetadata>) -> Self {
        Mechanism::Generator { spec, metadata }
    }

    pub fn kind(&self) -> PublishedKind {
        match self {
            Mechanism::Generator { .. } => PublishedKind::Synthetic,
            Mechanism::Sanitiser(_) => PublishedKind::Sanitised,
            Mechanism::Raw => PublishedKind::Raw,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Mechanism::Generator { spec, .. } => spec.label(),
            Mechanism::Sanitiser(cfg) => format!("San(k={})", cfg.k),
            Mechanism::Raw => "Raw".to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Mechanism::Generator { spec, .. } => spec.validate(),
            Mechanism::Sanitiser(cfg) => cfg.validate(),
            Mechanism::Raw => Ok(()),
        }
    }

    pub fn publish<R: Rng + ?Sized>(&self, raw: &Dataset, m: usize, rng: &mut R, external: &ExternalOptions) -> Result<Dataset> {
        Ok(self.publish_many(raw, m, 1, rng, external)?.remove(0))
    }

    /// `count` publications of the same raw dataset. Built-in generators are fitted
    /// once and sampled `count` times.
    pub fn publish_many<R: Rng + ?Sized>(
        &self,
        raw: &Dataset,
        m: usize,
        count: usize,
        rng: &mut R,
        external: &ExternalOptions,
    ) -> Result<Vec<Dataset>> {
        if count == 0 {
            return Err(Error::InvalidConfig("publication count must be >= 1".into()));
        }
        match self {
            Mechanism::Raw => Ok(vec![raw.clone(); count]),
            Mechanism::Sanitiser(cfg) => Ok(vec![sanitise(raw, cfg)?; count]),
            Mechanism::Generator { spec, metadata } if spec.kind == GeneratorKind::External => (0..count)
                .map(|_| synth::fit_sample(spec, raw, metadata, m, rng, external))
                .collect(),
            Mechanism::Generator { spec, metadata } => {
                if m == 0 {
                    return Err(Error::InvalidConfig("synthetic size m must be >= 1".into()));
                }
                let model = synth::fit(spec, raw, metadata, rng)?;
                Ok((0..count).map(|_| model.sample(m, rng)).collect())
            }
        }
    }
}
