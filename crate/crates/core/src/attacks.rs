//! Adversaries: a shadow-model membership-inference distinguisher and an attribute
//! inference attacker that tries literal linkage before falling back to a model.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{AttributeKind, Cell, Dataset, PartialRecord, Record};
use crate::error::{Error, Result};
use crate::features::{extract, feature_len, FeatureSet};
use crate::learners::{fit_forest, fit_linear, Forest, ForestParams, LinearAttackModel, SIGMA_FLOOR};
use crate::mechanism::{Mechanism, PublishedKind};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sanitiser::literal_link;
use crate::synth::ExternalOptions;

/// What the adversary knows: a reference sample from the population, the release
/// mechanism and the dataset sizes.
#[derive(Debug, Clone)]
pub struct PriorKnowledge {
    pub reference: Dataset,
    pub mechanism: Mechanism,
    pub n: usize,
    pub m: usize,
}

/// How shadow raw sets are built.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShadowSets {
    /// n records either way: n-1 drawn plus a filler (label 0) or the target (label 1),
    /// the same shape the challenger uses.
    #[default]
    Mirrored,
    /// n drawn records (label 0) against the same n plus the target (label 1).
    Augmented,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowConfig {
    #[serde(default = "default_shadows")]
    pub n_shadows: usize,
    #[serde(default = "default_synth_per_shadow")]
    pub synth_per_shadow: usize,
    #[serde(default)]
    pub forest: ForestParams,
    #[serde(default)]
    pub sets: ShadowSets,
}

fn default_shadows() -> usize {
    10
}

fn default_synth_per_shadow() -> usize {
    5
}

impl Default for ShadowConfig {
    fn default() -> Self {
        ShadowConfig {
            n_shadows: default_shadows(),
            synth_per_shadow: default_synth_per_shadow(),
            forest: ForestParams::default(),
            sets: ShadowSets::Mirrored,
        }
    }
}

/// Trained membership distinguisher for one target.
#[derive(Debug, Clone)]
pub struct MiaAttacker {
    pub target: Record,
    pub feature_set: FeatureSet,
    pub shadow: ShadowConfig,
    forest: Forest,
    training_labels: (usize, usize),
}

impl MiaAttacker {
    /// Number of (label 0, label 1) training vectors.
    pub fn training_labels(&self) -> (usize, usize) {
        self.training_labels
    }

    /// Classifier decision on a published dataset.
    pub fn classify(&self, published: &Dataset) -> u8 {
        let features = features_or_zero(self.feature_set, published);
        self.forest.predict(&features) as u8
    }
}

/// Feature vector of `data`, or zeros of the schema-determined length when the
/// dataset is too small for the extractor (e.g. fully suppressed by a sanitiser).
pub fn features_or_zero(set: FeatureSet, data: &Dataset) -> Vec<f64> {
    match extract(set, data) {
        Ok(v) => v.values,
        Err(_) => vec![0.0; feature_len(data.schema(), set)],
    }
}

/// Draws `count - 1` distinct records from `pool`, skipping records equal to
/// `target`, plus one more distinct record used as filler.
pub fn draw_without_target<R: Rng + ?Sized>(pool: &Dataset, target: &Record, count: usize, rng: &mut R) -> Result<(Vec<Record>, Record)> {
    if count == 0 {
        return Err(Error::InvalidConfig("raw dataset size n must be >= 1".into()));
    }
    let eligible: Vec<usize> = (0..pool.len()).filter(|&i| pool.record(i) != target).collect();
    if eligible.len() < count {
        return Err(Error::ReferenceTooSmall {
            needed: count,
            available: eligible.len(),
        });
    }
    let picks = sample(rng, eligible.len(), count).into_vec();
    let mut base: Vec<Record> = picks.iter().map(|&p| pool.record(eligible[p]).clone()).collect();
    let filler = base.pop().expect("count >= 1");
    Ok((base, filler))
}

fn with_extra(base: &[Record], extra: &Record) -> Vec<Record> {
    let mut rows = Vec::with_capacity(base.len() + 1);
    rows.extend_from_slice(base);
    rows.push(extra.clone());
    rows
}

/// Raw shadow sets without (label 0) and with (label 1) the target.
fn shadow_raw_sets(base: &[Record], filler: &Record, target: &Record, sets: ShadowSets) -> [Vec<Record>; 2] {
    match sets {
        ShadowSets::Mirrored => [with_extra(base, filler), with_extra(base, target)],
        ShadowSets::Augmented => {
            let full = with_extra(base, filler);
            let plus = with_extra(&full, target);
            [full, plus]
        }
    }
}

/// Labelled shadow feature vectors: per shadow, a raw set without the target
/// (label 0) and one with it (label 1), shaped by [`ShadowSets`] and published
/// `synth_per_shadow` times each.
pub fn shadow_examples(
    target: &Record,
    prior: &PriorKnowledge,
    feature_set: FeatureSet,
    shadow: &ShadowConfig,
    seed: u64,
    external: &ExternalOptions,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let per_shadow: Vec<Result<Vec<(Vec<f64>, usize)>>> = (0..shadow.n_shadows)
        .into_par_iter()
        .map(|i| {
            let shadow_seed = derive_seed(seed, i as u64);
            let mut rng = rng_from_seed(derive_seed(shadow_seed, 0));
            let (base, filler) = draw_without_target(&prior.reference, target, prior.n, &mut rng)?;
            let mut out = Vec::with_capacity(2 * shadow.synth_per_shadow);
            for (label, rows) in shadow_raw_sets(&base, &filler, target, shadow.sets).into_iter().enumerate() {
                let raw = prior.reference.with_records(rows);
                let mut mech_rng = rng_from_seed(derive_seed(shadow_seed, 1 + label as u64));
                for published in prior.mechanism.publish_many(&raw, prior.m, shadow.synth_per_shadow, &mut mech_rng, external)? {
                    out.push((features_or_zero(feature_set, &published), label));
                }
            }
            Ok(out)
        })
        .collect();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for chunk in per_shadow {
        for (f, l) in chunk? {
            x.push(f);
            y.push(l);
        }
    }
    Ok((x, y))
}

pub fn train_mia<R: Rng + ?Sized>(
    target: &Record,
    prior: &PriorKnowledge,
    feature_set: FeatureSet,
    shadow: &ShadowConfig,
    rng: &mut R,
    external: &ExternalOptions,
) -> Result<MiaAttacker> {
    if shadow.n_shadows < 2 {
        return Err(Error::InvalidConfig("n_shadows must be >= 2".into()));
    }
    if shadow.synth_per_shadow == 0 {
        return Err(Error::InvalidConfig("synth_per_shadow must be >= 1".into()));
    }
    let seed: u64 = rng.gen();
    let (x, y) = shadow_examples(target, prior, feature_set, shadow, seed, external)?;
    let ones = y.iter().filter(|&&l| l == 1).count();
    let mut forest_rng = rng_from_seed(derive_seed(seed, u64::MAX));
    let forest = fit_forest(&x, &y, &shadow.forest, &mut forest_rng)?;
    Ok(MiaAttacker {
        target: target.clone(),
        feature_set,
        shadow: shadow.clone(),
        forest,
        training_labels: (y.len() - ones, ones),
    })
}

/// Classification accuracy of `attacker` on freshly generated shadow examples.
pub fn holdout_accuracy<R: Rng + ?Sized>(
    attacker: &MiaAttacker,
    prior: &PriorKnowledge,
    n_shadows: usize,
    rng: &mut R,
    external: &ExternalOptions,
) -> Result<f64> {
    let cfg = ShadowConfig {
        n_shadows,
        ..attacker.shadow.clone()
    };
    let (x, y) = shadow_examples(&attacker.target, prior, attacker.feature_set, &cfg, rng.gen(), external)?;
    let correct = x.iter().zip(&y).filter(|(f, l)| attacker.forest.predict(f) == **l).count();
    Ok(correct as f64 / y.len() as f64)
}

/// Membership guess. Raw data: 1 iff the target is present. Sanitised data: 1 on a
/// unique literal match, classifier otherwise. Synthetic data: classifier.
pub fn mia_guess(attacker: &MiaAttacker, published: &Dataset, kind: PublishedKind) -> u8 {
    let probe = PartialRecord::from(&attacker.target);
    match kind {
        PublishedKind::Raw => u8::from(!literal_link(published, &probe).is_empty()),
        PublishedKind::Sanitised if literal_link(published, &probe).len() == 1 => 1,
        _ => attacker.classify(published),
    }
}

/// How an attribute guess was produced.
#[derive(Debug, Clone)]
pub enum AttrMethod {
    Linked,
    Classifier { degenerate: bool },
    Regression(LinearAttackModel),
    /// Published data unusable for model fitting.
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct AttrGuess {
    pub value: Option<Cell>,
    pub method: AttrMethod,
}

impl AttrGuess {
    /// Probability-of-success credit for the true value: exact match for linked and
    /// categorical guesses; for regression the posterior density at the truth relative
    /// to the density at the predicted mode.
    pub fn success(&self, truth: Cell) -> f64 {
        match (&self.method, self.value, truth) {
            (AttrMethod::Failed(_), _, _) | (_, None, _) => 0.0,
            (AttrMethod::Regression(model), Some(Cell::Num(mu)), Cell::Num(t)) => {
                let var = model.sigma_hat_sq.max(SIGMA_FLOOR);
                (-(t - mu).powi(2) / (2.0 * var)).exp()
            }
            (_, Some(v), t) => f64::from(u8::from(v == t)),
        }
    }
}

/// Encodes the known attributes of a record: categorical cells as dummies (first
/// category dropped) for regression, or as raw indices for trees.
fn encode_known(cells: impl Iterator<Item = (usize, Cell)>, data: &Dataset, one_hot: bool) -> Vec<f64> {
    let mut out = Vec::new();
    for (i, cell) in cells {
        match (&data.schema().attribute(i).kind, cell, one_hot) {
            (AttributeKind::Categorical { categories }, Cell::Cat(c), true) => {
                out.extend((1..categories.len() as u32).map(|k| f64::from(u8::from(c == k))));
            }
            _ => out.push(cell.to_f64()),
        }
    }
    out
}

pub fn attr_inference_guess<R: Rng + ?Sized>(
    partial: &PartialRecord,
    published: &Dataset,
    kind: PublishedKind,
    sensitive: usize,
    forest: &ForestParams,
    rng: &mut R,
) -> Result<AttrGuess> {
    let schema = published.schema();
    if sensitive >= schema.len() {
        return Err(Error::UnknownAttribute(format!("#{sensitive}")));
    }
    if kind != PublishedKind::Synthetic {
        let links = literal_link(published, partial);
        if links.len() == 1 {
            return Ok(AttrGuess {
                value: Some(published.record(links[0]).get(sensitive)),
                method: AttrMethod::Linked,
            });
        }
    }
    let known = |r: &Record| r.cells().iter().copied().enumerate().filter(|(i, _)| *i != sensitive).collect::<Vec<_>>();
    let probe: Vec<(usize, Cell)> = partial.known().filter(|(i, _)| *i != sensitive).collect();
    if schema.attribute(sensitive).is_categorical() {
        if published.len() < 2 {
            return Ok(AttrGuess {
                value: None,
                method: AttrMethod::Failed(format!("{} published rows", published.len())),
            });
        }
        let x: Vec<Vec<f64>> = published
            .records()
            .iter()
            .map(|r| encode_known(known(r).into_iter(), published, false))
            .collect();
        let y: Vec<usize> = published.column(sensitive).map(|c| c.as_cat().expect("categorical") as usize).collect();
        let model = fit_forest(&x, &y, forest, rng)?;
        let pred = model.predict(&encode_known(probe.into_iter(), published, false));
        Ok(AttrGuess {
            value: Some(Cell::Cat(pred as u32)),
            method: AttrMethod::Classifier {
                degenerate: model.degenerate(),
            },
        })
    } else {
        let x: Vec<Vec<f64>> = published
            .records()
            .iter()
            .map(|r| encode_known(known(r).into_iter(), published, true))
            .collect();
        let y = published.numeric_column(sensitive);
        let model = fit_linear(&x, &y)?;
        let mu = model.predict(&encode_known(probe.into_iter(), published, true));
        Ok(AttrGuess {
            value: Some(Cell::Num(mu)),
            method: AttrMethod::Regression(model),
        })
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::data::{AttributeSpec, SchemaMetadata};
    use crate::rng::rng_from_seed;

    fn schema() -> Arc<SchemaMetadata> {
        Arc::new(
            SchemaMetadata::new(
                vec![
                    AttributeSpec::categorical("c", ["A", "B", "C"]).unwrap(),
                    AttributeSpec::continuous("x", 0.0, 100.0, 10).unwrap(),
                ],
                vec![],
            )
            .unwrap(),
        )
    }

    fn rows(pairs: &[(u32, f64)]) -> Dataset {
        Dataset::new(schema(), pairs.iter().map(|&(c, x)| Record::new(vec![Cell::Cat(c), Cell::Num(x)])).collect()).unwrap()
    }

    #[test]
    fn draw_excludes_target_and_is_distinct() {
        let pool = rows(&(0..30).map(|i| ((i % 3) as u32, i as f64)).collect::<Vec<_>>());
        let target = pool.record(4).clone();
        let (base, filler) = draw_without_target(&pool, &target, 29, &mut rng_from_seed(1)).unwrap();
        assert_eq!(base.len(), 28);
        assert!(!base.contains(&target) && filler != target && !base.contains(&filler));
        assert!(matches!(
            draw_without_target(&pool, &target, 30, &mut rng_from_seed(1)),
            Err(Error::ReferenceTooSmall { needed: 30, available: 29 })
        ));
    }

    #[test]
    fn shadow_set_shapes() {
        let d = rows(&[(0, 1.0), (1, 2.0), (2, 3.0)]);
        let (base, filler, target) = (&d.records()[..1], d.record(1), d.record(2));
        let [out, inn] = shadow_raw_sets(base, filler, target, ShadowSets::Mirrored);
        assert_eq!((out.len(), inn.len()), (2, 2));
        assert_eq!(out[..1], inn[..1]);
        assert!(!out.contains(target) && inn.contains(target));
        let [out, inn] = shadow_raw_sets(base, filler, target, ShadowSets::Augmented);
        assert_eq!((out.len(), inn.len()), (2, 3));
        assert_eq!(out[..], inn[..2]);
        assert_eq!(&inn[2], target);
    }

    #[test]
    fn unique_link_returns_linked_value() {
        let d = rows(&[(0, 1.0), (1, 2.0), (2, 3.0)]);
        let partial = Record::new(vec![Cell::Cat(1), Cell::Num(2.0)]).without(0);
        let g = attr_inference_guess(&partial, &d, PublishedKind::Raw, 0, &ForestParams::with_trees(5), &mut rng_from_seed(0)).unwrap();
        assert!(matches!(g.method, AttrMethod::Linked));
        assert_eq!(g.success(Cell::Cat(1)), 1.0);
    }

    #[test]
    fn ambiguous_link_falls_through_to_model() {
        let d = rows(&[(0, 2.0), (1, 2.0), (2, 3.0), (2, 4.0)]);
        let partial = Record::new(vec![Cell::Cat(1), Cell::Num(2.0)]).without(0);
        let g = attr_inference_guess(&partial, &d, PublishedKind::Raw, 0, &ForestParams::with_trees(5), &mut rng_from_seed(0)).unwrap();
        assert!(matches!(g.method, AttrMethod::Classifier { .. }));
    }

    #[test]
    fn noiseless_linear_path() {
        let s = Arc::new(
            SchemaMetadata::new(
                vec![
                    AttributeSpec::continuous("a", -10.0, 10.0, 5).unwrap(),
                    AttributeSpec::continuous("s", -30.0, 30.0, 5).unwrap(),
                ],
                vec![],
            )
            .unwrap(),
        );
        let recs = (0..12).map(|i| Record::new(vec![Cell::Num(i as f64 - 5.5), Cell::Num(3.0 * (i as f64 - 5.5))])).collect();
        let d = Dataset::new(s, recs).unwrap();
        let target = Record::new(vec![Cell::Num(1.25), Cell::Num(3.75)]);
        let g = attr_inference_guess(&target.without(1), &d, PublishedKind::Synthetic, 1, &ForestParams::default(), &mut rng_from_seed(0)).unwrap();
        assert!((g.value.unwrap().to_f64() - 3.75).abs() < 1e-6);
        assert!(g.success(Cell::Num(3.75)) > 0.999_999);
    }

    #[test]
    fn raw_guess_is_membership_indicator() {
        let d = rows(&[(0, 1.0), (1, 2.0)]);
        let pool = rows(&(0..20).map(|i| ((i % 3) as u32, i as f64)).collect::<Vec<_>>());
        let prior = PriorKnowledge {
            reference: pool,
            mechanism: Mechanism::Raw,
            n: 5,
            m: 5,
        };
        for (target, expect) in [(Record::new(vec![Cell::Cat(1), Cell::Num(2.0)]), 1), (Record::new(vec![Cell::Cat(2), Cell::Num(2.0)]), 0)] {
            let shadow = ShadowConfig {
                n_shadows: 2,
                synth_per_shadow: 1,
                forest: ForestParams::with_trees(3),
                sets: ShadowSets::Mirrored,
            };
            let attacker = train_mia(&target, &prior, FeatureSet::Naive, &shadow, &mut rng_from_seed(3), &ExternalOptions::default()).unwrap();
            assert_eq!(attacker.training_labels(), (2, 2));
            assert_eq!(mia_guess(&attacker, &d, PublishedKind::Raw), expect);
        }
    }
}
