//! Monte-Carlo privacy and utility games.
//!
//! Each game iteration draws a raw dataset of size n from the population: n−1
//! records other than the target, plus either the target (s_t = 1) or a filler
//! record (s_t = 0). In stratified sampling, iteration j of both arms shares the draw
//! and the mechanism's random stream, so the arms differ only by the target/filler
//! swap. Every iteration runs on its own derived seed, so results do not depend on
//! thread scheduling.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{attr_inference_guess, draw_without_target, mia_guess, AttrMethod, MiaAttacker};
use crate::data::{bin_index, Cell, Dataset, Record};
use crate::error::{Error, Result};
use crate::features::{mean, median};
use crate::learners::{fit_forest, ForestParams};
use crate::mechanism::{Mechanism, PublishedKind};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sanitiser::nearest_rank_quantile;
use crate::synth::ExternalOptions;

pub const MIN_ITERATIONS: usize = 20;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// ⌈iters/2⌉ iterations with s_t = 1 and ⌊iters/2⌋ with s_t = 0, matched pairwise.
    #[default]
    Stratified,
    /// Fair coins for s_t and (linkability only) for publishing raw or processed data.
    Coin,
}

#[derive(Debug, Clone)]
pub struct ChallengerConfig {
    pub population: Dataset,
    pub n: usize,
    pub m: usize,
    pub mechanism: Mechanism,
    pub external: ExternalOptions,
}

impl ChallengerConfig {
    pub fn new(population: Dataset, n: usize, m: usize, mechanism: Mechanism) -> Self {
        ChallengerConfig {
            population,
            n,
            m,
            mechanism,
            external: ExternalOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > self.population.len() {
            return Err(Error::InvalidConfig(format!(
                "n = {} must lie in 1..={} (population size)",
                self.n,
                self.population.len()
            )));
        }
        if self.m == 0 {
            return Err(Error::InvalidConfig("m must be >= 1".into()));
        }
        self.mechanism.validate()
    }

    /// Raw dataset for one iteration.
    fn draw_raw(&self, target: &Record, s_t: u8, seed: u64) -> Result<Dataset> {
        let mut rng = rng_from_seed(derive_seed(seed, 0));
        let (mut rows, filler) = draw_without_target(&self.population, target, self.n, &mut rng)?;
        rows.push(if s_t == 1 { target.clone() } else { filler });
        Ok(self.population.with_records(rows))
    }

    fn publish(&self, raw: &Dataset, seed: u64) -> Result<Dataset> {
        let mut rng = rng_from_seed(derive_seed(seed, 1));
        self.mechanism.publish(raw, self.m, &mut rng, &self.external)
    }
}

/// One game iteration as seen by the challenger.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GameOutcome {
    pub iteration: usize,
    pub s_t: u8,
    /// 1 when the processed dataset was published, 0 for the raw dataset.
    pub b: u8,
    /// Bit, category index or real value, depending on the game.
    pub guess: Option<f64>,
    /// Success credit in [0, 1]; 0/1 except for continuous attribute inference.
    pub success: f64,
    pub correct: bool,
    /// Whether the published data contained a category that only the target carries
    /// in the population; `None` if the target has no such category.
    pub unique_category_published: Option<bool>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageEstimate {
    pub p_success_given_1: f64,
    pub p_success_given_0: f64,
    pub n1: usize,
    pub n0: usize,
    pub advantage: f64,
    pub std_error: f64,
}

fn mean_and_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    (mu, var)
}

impl AdvantageEstimate {
    fn build(succ1: &[f64], succ0: &[f64], linkage: bool) -> Result<Self> {
        if succ1.is_empty() || succ0.is_empty() {
            return Err(Error::InsufficientIterations {
                needed: 1,
                got: succ1.len().min(succ0.len()),
            });
        }
        let (p1, v1) = mean_and_var(succ1);
        let (p0, v0) = mean_and_var(succ0);
        let advantage = if linkage { p1 + p0 - 1.0 } else { p1 - p0 };
        Ok(AdvantageEstimate {
            p_success_given_1: p1,
            p_success_given_0: p0,
            n1: succ1.len(),
            n0: succ0.len(),
            advantage,
            std_error: (v1 / succ1.len() as f64 + v0 / succ0.len() as f64).sqrt(),
        })
    }

    /// Linkage advantage Pr[guess 1 | s=1] − Pr[guess 1 | s=0], written in terms of
    /// the per-arm success rates as p1 + p0 − 1.
    pub fn linkage(succ1: &[f64], succ0: &[f64]) -> Result<Self> {
        Self::build(succ1, succ0, true)
    }

    /// Plain difference of per-arm success rates p1 − p0.
    pub fn difference(succ1: &[f64], succ0: &[f64]) -> Result<Self> {
        Self::build(succ1, succ0, false)
    }

    fn from_outcomes<'a>(outcomes: impl Iterator<Item = &'a GameOutcome>, linkage: bool) -> Result<Self> {
        let (mut s1, mut s0) = (Vec::new(), Vec::new());
        for o in outcomes {
            if o.s_t == 1 {
                s1.push(o.success);
            } else {
                s0.push(o.success);
            }
        }
        Self::build(&s1, &s0, linkage)
    }
}

/// (iteration, s_t, b, seed) for every iteration of a game.
fn schedule<R: Rng + ?Sized>(iters: usize, sampling: Sampling, rng: &mut R) -> Result<Vec<(usize, u8, u8, u64)>> {
    if iters < MIN_ITERATIONS {
        return Err(Error::InsufficientIterations {
            needed: MIN_ITERATIONS,
            got: iters,
        });
    }
    let master: u64 = rng.gen();
    Ok(match sampling {
        Sampling::Stratified => {
            let ones = iters.div_ceil(2);
            (0..ones)
                .map(|j| (j, 1u8, 1u8, derive_seed(master, j as u64)))
                .chain((0..iters / 2).map(|j| (ones + j, 0, 1, derive_seed(master, j as u64))))
                .collect()
        }
        Sampling::Coin => (0..iters)
            .map(|j| {
                let seed = derive_seed(master, j as u64);
                let mut coin = rng_from_seed(derive_seed(seed, 2));
                (j, coin.gen_range(0..2u8), coin.gen_range(0..2u8), seed)
            })
            .collect(),
    })
}

/// Categorical cells of `target` that occur in `population` only in copies of the target.
pub fn unique_categories(population: &Dataset, target: &Record) -> Vec<(usize, u32)> {
    target
        .cells()
        .iter()
        .enumerate()
        .filter_map(|(i, cell)| {
            let c = cell.as_cat()?;
            let elsewhere = population.records().iter().any(|r| r.get(i) == Cell::Cat(c) && r != target);
            (!elsewhere).then_some((i, c))
        })
        .collect()
}

fn contains_any(data: &Dataset, cells: &[(usize, u32)]) -> bool {
    data.records().iter().any(|r| cells.iter().any(|&(i, c)| r.get(i) == Cell::Cat(c)))
}

#[derive(Debug, Clone, Serialize)]
pub struct LinkabilityResult {
    /// Adversary advantage on the processed publication.
    pub estimate: AdvantageEstimate,
    /// 1 − Adv(S); raw publication has advantage 1.
    pub privacy_gain: f64,
    pub outcomes: Vec<GameOutcome>,
}

pub fn run_linkability<R: Rng + ?Sized>(
    target: &Record,
    cfg: &ChallengerConfig,
    attacker: &MiaAttacker,
    iters: usize,
    sampling: Sampling,
    rng: &mut R,
) -> Result<LinkabilityResult> {
    cfg.validate()?;
    let plan = schedule(iters, sampling, rng)?;
    let unique = unique_categories(&cfg.population, target);
    let outcomes: Vec<GameOutcome> = plan
        .into_par_iter()
        .map(|(iteration, s_t, b, seed)| {
            let raw = cfg.draw_raw(target, s_t, seed)?;
            let (published, kind) = if b == 1 {
                (cfg.publish(&raw, seed)?, cfg.mechanism.kind())
            } else {
                (raw, PublishedKind::Raw)
            };
            let guess = mia_guess(attacker, &published, kind);
            let correct = guess == s_t;
            Ok(GameOutcome {
                iteration,
                s_t,
                b,
                guess: Some(guess as f64),
                success: f64::from(u8::from(correct)),
                correct,
                unique_category_published: (!unique.is_empty()).then(|| contains_any(&published, &unique)),
                note: None,
            })
        })
        .collect::<Result<_>>()?;
    let estimate = AdvantageEstimate::from_outcomes(outcomes.iter().filter(|o| o.b == 1), true)?;
    Ok(LinkabilityResult {
        privacy_gain: 1.0 - estimate.advantage,
        estimate,
        outcomes,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AttributeResult {
    pub raw: AdvantageEstimate,
    pub published: AdvantageEstimate,
    /// Adv(R) − Adv(S) over the same iterations.
    pub privacy_gain: f64,
    pub privacy_gain_se: f64,
    pub outcomes: Vec<GameOutcome>,
}

/// Attribute inference: the adversary knows the target's other attributes and guesses
/// its `sensitive` value from the raw data (b = 0) and from the processed data
/// (b = 1) of each iteration. Continuous success credit is the posterior density at
/// the truth relative to the density at the predicted mode.
pub fn run_attribute_inference<R: Rng + ?Sized>(
    target: &Record,
    cfg: &ChallengerConfig,
    sensitive: usize,
    iters: usize,
    sampling: Sampling,
    forest: &ForestParams,
    rng: &mut R,
) -> Result<AttributeResult> {
    run_attribute_inference_with(target, cfg, sensitive, iters, sampling, forest, SensitiveAssignment::Lookup, rng)
}

/// Where the target's sensitive value comes from in each iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitiveAssignment {
    /// The target record's own value.
    #[default]
    Lookup,
    /// A fresh draw per iteration from the population records that agree with the
    /// target on every other attribute (continuous values compared by bin); the
    /// whole population when none do.
    Conditional,
}

fn conditional_pool(population: &Dataset, target: &Record, sensitive: usize) -> Vec<Cell> {
    let schema = population.schema();
    let key = |r: &Record, i: usize| match r.get(i) {
        Cell::Num(v) => bin_index(v, schema.attribute(i)) as u64,
        c => c.key(),
    };
    let agrees = |r: &Record| (0..schema.len()).filter(|&i| i != sensitive).all(|i| key(r, i) == key(target, i));
    let pool: Vec<Cell> = population.records().iter().filter(|r| agrees(r)).map(|r| r.get(sensitive)).collect();
    if pool.is_empty() {
        population.column(sensitive).collect()
    } else {
        pool
    }
}

#[allow(clippy::too_many_arguments)]
pub fn run_attribute_inference_with<R: Rng + ?Sized>(
    target: &Record,
    cfg: &ChallengerConfig,
    sensitive: usize,
    iters: usize,
    sampling: Sampling,
    forest: &ForestParams,
    assignment: SensitiveAssignment,
    rng: &mut R,
) -> Result<AttributeResult> {
    cfg.validate()?;
    if sensitive >= cfg.population.schema().len() {
        return Err(Error::UnknownAttribute(format!("#{sensitive}")));
    }
    let plan = schedule(iters, sampling, rng)?;
    let partial = target.without(sensitive);
    let pool = match assignment {
        SensitiveAssignment::Lookup => Vec::new(),
        SensitiveAssignment::Conditional => conditional_pool(&cfg.population, target, sensitive),
    };
    let kind = cfg.mechanism.kind();
    let per_iter: Vec<[GameOutcome; 2]> = plan
        .into_par_iter()
        .map(|(iteration, s_t, _, seed)| {
            let assigned;
            let target = if pool.is_empty() {
                target
            } else {
                let value = pool[rng_from_seed(derive_seed(seed, 5)).gen_range(0..pool.len())];
                let mut cells = target.cells().to_vec();
                cells[sensitive] = value;
                assigned = Record::new(cells);
                &assigned
            };
            let truth = target.get(sensitive);
            let raw = cfg.draw_raw(target, s_t, seed)?;
            let published = cfg.publish(&raw, seed)?;
            let guess_on = |data: &Dataset, kind: PublishedKind, b: u8| -> Result<GameOutcome> {
                // same forest stream on both arms, so a raw release scores exactly zero gain
                let mut rng = rng_from_seed(derive_seed(seed, 3));
                let (guess, note) = match attr_inference_guess(&partial, data, kind, sensitive, forest, &mut rng) {
                    Ok(g) => {
                        let note = match &g.method {
                            AttrMethod::Failed(why) => Some(why.clone()),
                            AttrMethod::Classifier { degenerate: true } => Some("degenerate labels".to_string()),
                            _ => None,
                        };
                        (Some(g), note)
                    }
                    Err(e @ (Error::InsufficientRows { .. } | Error::TooFewRecords { .. } | Error::RankDeficient)) => (None, Some(e.to_string())),
                    Err(e) => return Err(e),
                };
                let success = guess.as_ref().map_or(0.0, |g| g.success(truth));
                Ok(GameOutcome {
                    iteration,
                    s_t,
                    b,
                    guess: guess.and_then(|g| g.value).map(Cell::to_f64),
                    success,
                    correct: success >= 0.5,
                    unique_category_published: None,
                    note,
                })
            };
            Ok([guess_on(&raw, PublishedKind::Raw, 0)?, guess_on(&published, kind, 1)?])
        })
        .collect::<Result<_>>()?;
    let outcomes: Vec<GameOutcome> = per_iter.into_iter().flatten().collect();
    let raw_est = AdvantageEstimate::from_outcomes(outcomes.iter().filter(|o| o.b == 0), false)?;
    let pub_est = AdvantageEstimate::from_outcomes(outcomes.iter().filter(|o| o.b == 1), false)?;
    Ok(AttributeResult {
        privacy_gain: raw_est.advantage - pub_est.advantage,
        privacy_gain_se: (raw_est.std_error.powi(2) + pub_est.std_error.powi(2)).sqrt(),
        raw: raw_est,
        published: pub_est,
        outcomes,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct UtilityResult {
    /// Adv^U: accuracy on the test record with the target present minus without.
    pub estimate: AdvantageEstimate,
    /// Iterations where the analyst's labels were all one class.
    pub degenerate_fits: usize,
    pub outcomes: Vec<GameOutcome>,
}

fn predictors(record: &Record, skip: usize) -> Vec<f64> {
    record
        .cells()
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != skip)
        .map(|(_, c)| c.to_f64())
        .collect()
}

/// Fits a forest predicting categorical attribute `predict` from all other
/// attributes. `None` when fewer than two rows are available.
pub fn fit_analyst<R: Rng + ?Sized>(
    data: &Dataset,
    predict: usize,
    forest: &ForestParams,
    rng: &mut R,
) -> Result<Option<crate::learners::Forest>> {
    if data.len() < 2 {
        return Ok(None);
    }
    let x: Vec<Vec<f64>> = data.records().iter().map(|r| predictors(r, predict)).collect();
    let y: Vec<usize> = data
        .column(predict)
        .map(|c| c.as_cat().map(|c| c as usize).ok_or_else(|| Error::InvalidConfig("utility target attribute must be categorical".into())))
        .collect::<Result<_>>()?;
    Ok(Some(fit_forest(&x, &y, forest, rng)?))
}

#[allow(clippy::too_many_arguments)]
pub fn run_utility_game<R: Rng + ?Sized>(
    target: &Record,
    test_record: &Record,
    cfg: &ChallengerConfig,
    predict: usize,
    iters: usize,
    sampling: Sampling,
    forest: &ForestParams,
    rng: &mut R,
) -> Result<UtilityResult> {
    cfg.validate()?;
    if !cfg.population.schema().attribute(predict).is_categorical() {
        return Err(Error::InvalidConfig("utility target attribute must be categorical".into()));
    }
    let plan = schedule(iters, sampling, rng)?;
    let truth = test_record.get(predict).as_cat().expect("categorical") as usize;
    let probe = predictors(test_record, predict);
    let outcomes: Vec<GameOutcome> = plan
        .into_par_iter()
        .map(|(iteration, s_t, _, seed)| {
            let raw = cfg.draw_raw(target, s_t, seed)?;
            let published = cfg.publish(&raw, seed)?;
            let mut rng = rng_from_seed(derive_seed(seed, 5));
            let (guess, note) = match fit_analyst(&published, predict, forest, &mut rng)? {
                Some(model) => (Some(model.predict(&probe)), model.degenerate().then(|| "degenerate labels".to_string())),
                None => (None, Some(format!("{} published rows", published.len()))),
            };
            let correct = guess == Some(truth);
            Ok(GameOutcome {
                iteration,
                s_t,
                b: 1,
                guess: guess.map(|g| g as f64),
                success: f64::from(u8::from(correct)),
                correct,
                unique_category_published: None,
                note,
            })
        })
        .collect::<Result<_>>()?;
    let degenerate_fits = outcomes.iter().filter(|o| o.note.as_deref() == Some("degenerate labels")).count();
    Ok(UtilityResult {
        estimate: AdvantageEstimate::from_outcomes(outcomes.iter(), false)?,
        degenerate_fits,
        outcomes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateUtility {
    pub accuracy_raw: f64,
    pub accuracy_published: f64,
    /// |mean_raw − mean_published| per continuous attribute.
    pub mean_discrepancy: BTreeMap<String, f64>,
    pub median_discrepancy: BTreeMap<String, f64>,
    /// L1 distance of category frequencies per categorical attribute.
    pub marginal_l1: BTreeMap<String, f64>,
}

fn holdout_accuracy(model: Option<&crate::learners::Forest>, holdout: &Dataset, predict: usize) -> f64 {
    let Some(model) = model else { return 0.0 };
    let correct = holdout
        .records()
        .iter()
        .filter(|r| Some(model.predict(&predictors(r, predict)) as u32) == r.get(predict).as_cat())
        .count();
    correct as f64 / holdout.len().max(1) as f64
}

fn frequencies(data: &Dataset, idx: usize) -> Vec<f64> {
    let n = data.len().max(1) as f64;
    data.category_counts(idx).into_iter().map(|c| c as f64 / n).collect()
}

pub fn aggregate_utility(raw: &Dataset, published: &Dataset, holdout: &Dataset, predict: usize, forest: &ForestParams, seed: u64) -> Result<AggregateUtility> {
    if !raw.same_schema(published) || !raw.same_schema(holdout) {
        return Err(Error::SchemaMismatch);
    }
    let schema = raw.schema();
    let raw_model = fit_analyst(raw, predict, forest, &mut rng_from_seed(seed))?;
    let pub_model = fit_analyst(published, predict, forest, &mut rng_from_seed(seed))?;
    let mut out = AggregateUtility {
        accuracy_raw: holdout_accuracy(raw_model.as_ref(), holdout, predict),
        accuracy_published: holdout_accuracy(pub_model.as_ref(), holdout, predict),
        mean_discrepancy: BTreeMap::new(),
        median_discrepancy: BTreeMap::new(),
        marginal_l1: BTreeMap::new(),
    };
    for (idx, spec) in schema.attributes().iter().enumerate() {
        if spec.is_categorical() {
            let l1 = frequencies(raw, idx)
                .iter()
                .zip(frequencies(published, idx))
                .map(|(a, b)| (a - b).abs())
                .sum();
            out.marginal_l1.insert(spec.name.clone(), l1);
        } else if !raw.is_empty() && !published.is_empty() {
            let mut a = raw.numeric_column(idx);
            let mut b = published.numeric_column(idx);
            out.mean_discrepancy.insert(spec.name.clone(), (mean(&a) - mean(&b)).abs());
            out.median_discrepancy.insert(spec.name.clone(), (median(&mut a) - median(&mut b)).abs());
        }
    }
    Ok(out)
}

/// Per-record outlier scores: one point per categorical value whose population
/// frequency falls below the 5th percentile (nearest rank) of that attribute's
/// per-record category frequencies, one per continuous value above the attribute's
/// 95% quantile.
pub fn outlier_scores(population: &Dataset) -> Vec<usize> {
    let schema = population.schema();
    let mut scores = vec![0usize; population.len()];
    for (idx, spec) in schema.attributes().iter().enumerate() {
        if spec.is_categorical() {
            let counts = population.category_counts(idx);
            let per_record: Vec<f64> = population.column(idx).map(|c| counts[c.as_cat().unwrap() as usize] as f64).collect();
            let Some(p5) = nearest_rank_quantile(&per_record, 0.05) else { continue };
            for (s, f) in scores.iter_mut().zip(&per_record) {
                *s += usize::from(*f < p5);
            }
        } else {
            let col = population.numeric_column(idx);
            let Some(q95) = nearest_rank_quantile(&col, 0.95) else { continue };
            for (s, v) in scores.iter_mut().zip(&col) {
                *s += usize::from(*v > q95);
            }
        }
    }
    scores
}

/// The `count` highest-scoring records, ties broken by row index.
pub fn select_outlier_targets(population: &Dataset, count: usize) -> Result<Vec<usize>> {
    if count > population.len() {
        return Err(Error::TooFewRecords {
            needed: count,
            got: population.len(),
        });
    }
    let scores = outlier_scores(population);
    let mut order: Vec<usize> = (0..population.len()).collect();
    order.sort_by(|&a, &b| scores[b].cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(count);
    Ok(order)
}
