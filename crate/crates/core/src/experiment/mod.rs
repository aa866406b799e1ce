//! End-to-end experiments: a JSON config names a population, targets, mechanisms
//! and games; running it produces `report.json`, `outcomes.csv`, `plotdata/*.csv`
//! and `provenance.json`.
//!
//! Every experiment cell (target × mechanism × attack × game) runs on seeds derived
//! from the master seed and the cell's identity, so output bytes do not depend on
//! the worker count. Game seeds are keyed by target only, which makes the raw
//! datasets drawn for a target identical across mechanisms and attacks.

mod config;
mod manifest;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::Serialize;

pub use config::{
    load_experiment, parse_experiment, validate_config_file, validate_experiment, AggregateGame, AttributeGame, Diagnostic, ExperimentConfig,
    ExperimentFile, GamesConfig, Level, LinkabilityGame, MechanismEntry, MetadataSource, Plan, PopulationSource, ResolvedMechanism,
    ResolvedTarget, TargetSpec, UtilityGame, UtilityPair, DEFAULT_ITERS, LEAKY_WARNING, NON_PRIVATE_EPSILON,
};
pub use manifest::{check_manifest, pointer_segment, Comparator, ManifestCheck, ManifestEntry};

use crate::attacks::{train_mia, PriorKnowledge, ShadowSets};
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::games::{
    aggregate_utility, run_attribute_inference_with, run_linkability, run_utility_game, AdvantageEstimate, AggregateUtility, ChallengerConfig,
    GameOutcome, SensitiveAssignment,
};
use crate::learners::ForestParams;
use crate::rng::{derive_seed_str, rng_from_seed};
use crate::synth::ExternalOptions;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; the global pool when unset.
    pub jobs: Option<usize>,
    pub keep_workdirs: bool,
    pub seed: Option<u64>,
    /// Overrides the config's `output_dir`.
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct UniqueCategoryCounts {
    /// Processed publications containing the target-only category, per secret arm.
    pub s1_published: usize,
    pub s0_published: usize,
    pub s1_iterations: usize,
    pub s0_iterations: usize,
}

/// One experiment cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub game: String,
    pub mechanism: String,
    /// Feature set (linkability), sensitive attribute (attribute inference) or
    /// `forest` (utility).
    pub attack: String,
    pub target: usize,
    pub group: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_record: Option<usize>,
    pub status: CellStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Advantage on the processed publication (Adv^U for the utility game).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<AdvantageEstimate>,
    /// Attribute inference only: advantage on the raw data of the same iterations.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_estimate: Option<AdvantageEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub privacy_gain: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub privacy_gain_se: Option<f64>,
    /// Privacy gain clipped to [0, 1] for display.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub privacy_gain_display: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unique_category: Option<UniqueCategoryCounts>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degenerate_fits: Option<usize>,
}

impl ResultRow {
    fn new(game: &str, mechanism: &str, attack: &str, target: &ResolvedTarget) -> Self {
        ResultRow {
            game: game.to_string(),
            mechanism: mechanism.to_string(),
            attack: attack.to_string(),
            target: target.index,
            group: target.group.to_string(),
            test_record: None,
            status: CellStatus::Ok,
            error: None,
            estimate: None,
            raw_estimate: None,
            privacy_gain: None,
            privacy_gain_se: None,
            privacy_gain_display: None,
            unique_category: None,
            degenerate_fits: None,
        }
    }

    fn fail(mut self, e: Error) -> Self {
        self.status = CellStatus::Failed;
        self.error = Some(e.to_string());
        self
    }

    pub fn key(&self) -> String {
        format!("{}|{}|{}", self.game, self.mechanism, self.attack)
    }

    /// The summarised quantity: privacy gain, or Adv^U for the utility game.
    fn metric(&self) -> Option<(f64, f64)> {
        match (self.privacy_gain, self.privacy_gain_se, &self.estimate) {
            (Some(pg), Some(se), _) => Some((pg, se)),
            (None, _, Some(e)) => Some((e.advantage, e.std_error)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStat {
    pub count: usize,
    pub mean: f64,
    /// sqrt(Σ se²) / count.
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Disparity {
    /// mean(random) − mean(outlier).
    pub difference: f64,
    pub se: f64,
    pub z: f64,
}

/// Statistics over the rows sharing a (game, mechanism, attack) key.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryEntry {
    pub game: String,
    pub mechanism: String,
    pub attack: String,
    /// `privacy_gain` or `utility_advantage`.
    pub metric: String,
    pub cells: usize,
    pub failed: usize,
    pub mean: f64,
    pub mean_se: f64,
    pub min: f64,
    pub max: f64,
    pub max_abs: f64,
    /// min over cells of value + 3·SE.
    pub min_plus_3se: f64,
    /// max over cells of value − 3·SE.
    pub max_minus_3se: f64,
    pub groups: BTreeMap<String, GroupStat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disparity: Option<Disparity>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unique_category: Option<UniqueCategoryCounts>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub repetitions: usize,
    pub status: CellStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<AggregateUtility>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub seed: u64,
    pub failed_cells: usize,
    pub rows: Vec<ResultRow>,
    pub summary: BTreeMap<String, SummaryEntry>,
    pub aggregate_utility: BTreeMap<String, AggregateRow>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn row(&self, game: &str, mechanism: &str, attack: &str, target: usize) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.game == game && r.mechanism == mechanism && r.attack == attack && r.target == target)
    }
}

/// Everything produced by a run, before it is written to disk.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Report,
    /// Outcomes per row of `report.rows`.
    pub outcomes: Vec<Vec<GameOutcome>>,
    pub provenance: serde_json::Value,
    pub plan: Plan,
}

impl RunOutput {
    pub fn exit_code(&self) -> i32 {
        let failed = self.report.failed_cells + self.report.aggregate_utility.values().filter(|a| a.status == CellStatus::Failed).count();
        if failed > 0 {
            2
        } else {
            0
        }
    }
}

enum Task {
    Link { target: usize, mech: usize, set: FeatureSet },
    Attr { target: usize, mech: usize, sensitive: usize },
    Util { pair: usize, mech: usize },
}

fn trees(base: &ForestParams, n: Option<usize>) -> ForestParams {
    match n {
        Some(n_trees) => ForestParams { n_trees, ..base.clone() },
        None => base.clone(),
    }
}

fn unique_counts(outcomes: &[GameOutcome]) -> Option<UniqueCategoryCounts> {
    let mut c = UniqueCategoryCounts::default();
    let mut any = false;
    for o in outcomes.iter().filter(|o| o.b == 1) {
        let Some(seen) = o.unique_category_published else { continue };
        any = true;
        if o.s_t == 1 {
            c.s1_iterations += 1;
            c.s1_published += usize::from(seen);
        } else {
            c.s0_iterations += 1;
            c.s0_published += usize::from(seen);
        }
    }
    any.then_some(c)
}

struct Runner<'a> {
    config: &'a ExperimentConfig,
    plan: &'a Plan,
    seed: u64,
    external: ExternalOptions,
}

impl Runner<'_> {
    fn challenger(&self, mech: usize) -> ChallengerConfig {
        ChallengerConfig {
            population: self.plan.population.clone(),
            n: self.config.n,
            m: self.config.m,
            mechanism: self.plan.mechanisms[mech].mechanism.clone(),
            external: self.external.clone(),
        }
    }

    fn run(&self, task: &Task) -> (ResultRow, Vec<GameOutcome>) {
        match *task {
            Task::Link { target, mech, set } => {
                let t = &self.plan.targets[target];
                let name = &self.plan.mechanisms[mech].name;
                let row = ResultRow::new("linkability", name, set.name(), t);
                match self.linkability(t, mech, set) {
                    Ok((mut row_out, outcomes)) => {
                        row_out.game = row.game;
                        row_out.mechanism = row.mechanism;
                        row_out.attack = row.attack;
                        (row_out, outcomes)
                    }
                    Err(e) => (row.fail(e), Vec::new()),
                }
            }
            Task::Attr { target, mech, sensitive } => {
                let t = &self.plan.targets[target];
                let (attr_name, attr) = &self.plan.sensitive[sensitive];
                let mut row = ResultRow::new("attribute_inference", &self.plan.mechanisms[mech].name, attr_name, t);
                let forest = trees(&self.config.forest, self.config.games.attribute_inference.as_ref().and_then(|a| a.trees));
                let mut rng = rng_from_seed(derive_seed_str(self.seed, &format!("attr|{attr_name}|{}", t.index)));
                let assignment = self.config.games.attribute_inference.as_ref().map(|a| a.assignment).unwrap_or_default();
                match run_attribute_inference_with(&t.record, &self.challenger(mech), *attr, self.config.iters, self.config.sampling, &forest, assignment, &mut rng) {
                    Ok(res) => {
                        row.privacy_gain = Some(res.privacy_gain);
                        row.privacy_gain_se = Some(res.privacy_gain_se);
                        row.privacy_gain_display = Some(res.privacy_gain.clamp(0.0, 1.0));
                        row.estimate = Some(res.published);
                        row.raw_estimate = Some(res.raw);
                        (row, res.outcomes)
                    }
                    Err(e) => (row.fail(e), Vec::new()),
                }
            }
            Task::Util { pair, mech } => {
                let (predict, pairs) = self.plan.utility.as_ref().expect("utility configured");
                let (ti, si) = pairs[pair];
                let test = self.plan.test_population.as_ref().expect("resolved").record(si);
                let target = ResolvedTarget {
                    index: ti,
                    group: "pair",
                    record: self.plan.population.record(ti).clone(),
                };
                let mut row = ResultRow::new("utility", &self.plan.mechanisms[mech].name, "forest", &target);
                row.test_record = Some(si);
                let forest = trees(&self.config.forest, self.config.games.utility.as_ref().and_then(|u| u.trees));
                let mut rng = rng_from_seed(derive_seed_str(self.seed, &format!("util|{ti}|{si}")));
                match run_utility_game(&target.record, test, &self.challenger(mech), *predict, self.config.iters, self.config.sampling, &forest, &mut rng) {
                    Ok(res) => {
                        row.estimate = Some(res.estimate);
                        row.degenerate_fits = Some(res.degenerate_fits);
                        (row, res.outcomes)
                    }
                    Err(e) => (row.fail(e), Vec::new()),
                }
            }
        }
    }

    fn linkability(&self, t: &ResolvedTarget, mech: usize, set: FeatureSet) -> Result<(ResultRow, Vec<GameOutcome>)> {
        let m = &self.plan.mechanisms[mech];
        let prior = PriorKnowledge {
            reference: self.plan.reference.clone(),
            mechanism: m.mechanism.clone(),
            n: self.config.n,
            m: self.config.m,
        };
        let mut train_rng = rng_from_seed(derive_seed_str(self.seed, &format!("mia|{}|{}|{}", m.name, set.name(), t.index)));
        let attacker = train_mia(&t.record, &prior, set, &self.plan.shadow, &mut train_rng, &self.external)?;
        let mut game_rng = rng_from_seed(derive_seed_str(self.seed, &format!("link|{}", t.index)));
        let res = run_linkability(&t.record, &self.challenger(mech), &attacker, self.config.iters, self.config.sampling, &mut game_rng)?;
        let mut row = ResultRow::new("", "", "", t);
        row.privacy_gain = Some(res.privacy_gain);
        row.privacy_gain_se = Some(res.estimate.std_error);
        row.privacy_gain_display = Some(res.privacy_gain.clamp(0.0, 1.0));
        row.unique_category = unique_counts(&res.outcomes);
        row.estimate = Some(res.estimate);
        Ok((row, res.outcomes))
    }

    fn aggregate(&self, mech: usize, spec: &AggregateGame, predict: usize) -> AggregateRow {
        let result = (0..spec.repetitions)
            .map(|rep| -> Result<AggregateUtility> {
                let seed = derive_seed_str(self.seed, &format!("aggregate|{rep}"));
                let mut rng = rng_from_seed(seed);
                let pop = &self.plan.population;
                let raw_idx = sample(&mut rng, pop.len(), self.config.n).into_vec();
                let raw = pop.subset(&raw_idx);
                let holdout = match &self.plan.test_population {
                    Some(test) => {
                        let k = spec.holdout.min(test.len());
                        test.subset(&sample(&mut rng, test.len(), k).into_vec())
                    }
                    None => {
                        let rest: Vec<usize> = (0..pop.len()).filter(|i| !raw_idx.contains(i)).collect();
                        let k = spec.holdout.min(rest.len());
                        let pick: Vec<usize> = sample(&mut rng, rest.len(), k).into_iter().map(|j| rest[j]).collect();
                        pop.subset(&pick)
                    }
                };
                let mut mech_rng = rng_from_seed(derive_seed_str(seed, &self.plan.mechanisms[mech].name));
                let published = self.plan.mechanisms[mech].mechanism.publish(&raw, self.config.m, &mut mech_rng, &self.external)?;
                aggregate_utility(&raw, &published, &holdout, predict, &trees(&self.config.forest, spec.trees), seed)
            })
            .collect::<Result<Vec<_>>>();
        match result {
            Ok(reps) => AggregateRow {
                repetitions: reps.len(),
                status: CellStatus::Ok,
                error: None,
                mean: Some(average_utility(&reps)),
            },
            Err(e) => AggregateRow {
                repetitions: spec.repetitions,
                status: CellStatus::Failed,
                error: Some(e.to_string()),
                mean: None,
            },
        }
    }
}

fn average_utility(reps: &[AggregateUtility]) -> AggregateUtility {
    let k = reps.len() as f64;
    let avg_map = |get: fn(&AggregateUtility) -> &BTreeMap<String, f64>| {
        let mut out: BTreeMap<String, f64> = BTreeMap::new();
        for r in reps {
            for (key, v) in get(r) {
                *out.entry(key.clone()).or_default() += v / k;
            }
        }
        out
    };
    AggregateUtility {
        accuracy_raw: reps.iter().map(|r| r.accuracy_raw).sum::<f64>() / k,
        accuracy_published: reps.iter().map(|r| r.accuracy_published).sum::<f64>() / k,
        mean_discrepancy: avg_map(|r| &r.mean_discrepancy),
        median_discrepancy: avg_map(|r| &r.median_discrepancy),
        marginal_l1: avg_map(|r| &r.marginal_l1),
    }
}

fn summarise(rows: &[ResultRow]) -> BTreeMap<String, SummaryEntry> {
    let mut by_key: BTreeMap<String, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        by_key.entry(r.key()).or_default().push(r);
    }
    let mut out = BTreeMap::new();
    for (key, group) in by_key {
        let ok: Vec<(&ResultRow, f64, f64)> = group
            .iter()
            .filter(|r| r.status == CellStatus::Ok)
            .filter_map(|r| r.metric().map(|(v, se)| (*r, v, se)))
            .collect();
        let first = group[0];
        let k = ok.len().max(1) as f64;
        let mut groups: BTreeMap<String, (usize, f64, f64)> = BTreeMap::new();
        for (r, v, se) in &ok {
            let g = groups.entry(r.group.clone()).or_default();
            g.0 += 1;
            g.1 += v;
            g.2 += se * se;
        }
        let groups: BTreeMap<String, GroupStat> = groups
            .into_iter()
            .map(|(name, (count, sum, sq))| {
                (
                    name,
                    GroupStat {
                        count,
                        mean: sum / count as f64,
                        se: sq.sqrt() / count as f64,
                    },
                )
            })
            .collect();
        let disparity = match (groups.get("random"), groups.get("outlier")) {
            (Some(r), Some(o)) => {
                let se = (r.se.powi(2) + o.se.powi(2)).sqrt();
                let difference = r.mean - o.mean;
                Some(Disparity {
                    difference,
                    se,
                    z: if se > 0.0 { difference / se } else { difference.signum() * f64::MAX },
                })
            }
            _ => None,
        };
        let unique_category = group.iter().filter_map(|r| r.unique_category).reduce(|a, b| UniqueCategoryCounts {
            s1_published: a.s1_published + b.s1_published,
            s0_published: a.s0_published + b.s0_published,
            s1_iterations: a.s1_iterations + b.s1_iterations,
            s0_iterations: a.s0_iterations + b.s0_iterations,
        });
        let fold = |init: f64, f: fn(f64, f64) -> f64, g: &dyn Fn(f64, f64) -> f64| ok.iter().map(|(_, v, se)| g(*v, *se)).fold(init, f);
        let entry = SummaryEntry {
            game: first.game.clone(),
            mechanism: first.mechanism.clone(),
            attack: first.attack.clone(),
            metric: if first.game == "utility" { "utility_advantage" } else { "privacy_gain" }.to_string(),
            cells: group.len(),
            failed: group.len() - ok.len(),
            mean: ok.iter().map(|x| x.1).sum::<f64>() / k,
            mean_se: ok.iter().map(|x| x.2 * x.2).sum::<f64>().sqrt() / k,
            min: fold(f64::INFINITY, f64::min, &|v, _| v),
            max: fold(f64::NEG_INFINITY, f64::max, &|v, _| v),
            max_abs: fold(0.0, f64::max, &|v, _| v.abs()),
            min_plus_3se: fold(f64::INFINITY, f64::min, &|v, se| v + 3.0 * se),
            max_minus_3se: fold(f64::NEG_INFINITY, f64::max, &|v, se| v - 3.0 * se),
            groups,
            disparity,
            unique_category,
        };
        out.insert(key, entry);
    }
    out
}

fn provenance(config: &ExperimentConfig, plan: &Plan, seed: u64) -> serde_json::Value {
    let mut effective = config.clone();
    effective.seed = seed;
    serde_json::json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "config": effective,
        "resolved": {
            "population_size": plan.population.len(),
            "test_population_size": plan.test_population.as_ref().map(|t| t.len()),
            "reference_size": plan.reference.len(),
            "targets": plan.targets.iter().map(|t| serde_json::json!({"index": t.index, "group": t.group})).collect::<Vec<_>>(),
            "mechanisms": plan.mechanisms.iter().map(|m| serde_json::json!({"name": m.name, "label": m.mechanism.label()})).collect::<Vec<_>>(),
        },
        "defaults": {
            "privbay_budget_split": "structure fraction 0.5 of epsilon, spread evenly over the d-1 greedy steps; tables get the rest, epsilon/d each",
            "privbay_mi_sensitivity": "(2/n) ln((n+1)/2) + ((n-1)/n) ln((n+1)/(n-1)) unless mi_sensitivity is set",
            "privbay_table_noise": "Laplace(2d/(n epsilon_tables)) on the normalised joint, clip at 0, renormalise, uniform fallback",
            "structure_search": "root = first attribute in schema order; candidates (child, parent subset) enumerated in schema order; first maximum wins",
            "mutual_information": "empirical, natural log, observed cells only",
            "binning": "continuous attributes use uniform bins over the metadata range (nbins, default 25); sampling is uniform within the bin",
            "forest": {
                "n_trees": config.forest.n_trees,
                "criterion": "gini",
                "max_features": config.forest.max_features.map_or_else(|| "floor(sqrt(d)), at least 1".to_string(), |f| f.to_string()),
                "bootstrap": config.forest.bootstrap,
                "max_depth": config.forest.max_depth,
                "min_samples_leaf": config.forest.min_samples_leaf,
                "thresholds": "midpoints between sorted distinct values",
                "vote_ties": "lowest class index",
            },
            "linear_model": "centred features and response, normal equations with 1e-9 ridge, sigma^2 = RSS/(n-p), floored at 1e-12",
            "linkage_advantage": "Pr[guess 1 | s=1] - Pr[guess 1 | s=0] on the processed publication; raw publication advantage is 1",
            "attribute_advantage": "P(success | s=1) - P(success | s=0); privacy gain = Adv(raw) - Adv(processed) over matched iterations",
            "continuous_success": "posterior density at the true value over density at the posterior mode",
            "attribute_assignment": match config.games.attribute_inference.as_ref().map(|a| a.assignment).unwrap_or_default() {
                SensitiveAssignment::Lookup => "sensitive value looked up from the target record",
                SensitiveAssignment::Conditional => "sensitive value drawn per iteration from population records agreeing with the target elsewhere (continuous by bin), whole population if none",
            },
            "sampling": config.sampling,
            "iterations_per_arm": [config.iters.div_ceil(2), config.iters / 2],
            "shadow_sets": match config.shadow_sets {
                ShadowSets::Mirrored => "n-1 reference records without replacement (target excluded) plus filler or target",
                ShadowSets::Augmented => "n reference records without replacement (target excluded), with or without the target appended",
            },
            "standard_error": "sqrt(v1/n1 + v0/n0) with per-arm population variance of the success credit",
            "outlier_score": "categorical values rarer than the 5th percentile (nearest rank) of per-record category frequencies, plus continuous values above the 95% quantile",
            "quantiles": "nearest rank",
            "features": {
                "naive": "mean, median, population variance; distinct count, most and least frequent category (lowest index on ties)",
                "hist": "normalised schema bins and categories",
                "corr": "Pearson upper triangle over raw numeric columns and one-hot categories, zero-variance pairs 0",
            },
        },
    })
}

/// Runs an experiment in memory.
pub fn execute(file: &ExperimentFile, opts: &RunOptions) -> Result<RunOutput> {
    let config = &file.config;
    let seed = opts.seed.unwrap_or(config.seed);
    let mut config_eff = config.clone();
    config_eff.seed = seed;
    let plan = config_eff.resolve(&file.base_dir)?;
    let runner = Runner {
        config: &config_eff,
        plan: &plan,
        seed,
        external: ExternalOptions {
            keep_workdirs: opts.keep_workdirs,
            workdir_root: None,
        },
    };

    let mut tasks = Vec::new();
    if config_eff.games.linkability.is_some() {
        for target in 0..plan.targets.len() {
            for mech in 0..plan.mechanisms.len() {
                for &set in &config_eff.feature_sets {
                    tasks.push(Task::Link { target, mech, set });
                }
            }
        }
    }
    for target in 0..plan.targets.len() {
        for mech in 0..plan.mechanisms.len() {
            for sensitive in 0..plan.sensitive.len() {
                tasks.push(Task::Attr { target, mech, sensitive });
            }
        }
    }
    if let Some((_, pairs)) = &plan.utility {
        for pair in 0..pairs.len() {
            for mech in 0..plan.mechanisms.len() {
                tasks.push(Task::Util { pair, mech });
            }
        }
    }

    let work = || {
        let results: Vec<(ResultRow, Vec<GameOutcome>)> = tasks.par_iter().map(|t| runner.run(t)).collect();
        let aggregate: BTreeMap<String, AggregateRow> = match (&config_eff.games.aggregate_utility, plan.aggregate_predict) {
            (Some(spec), Some(predict)) => (0..plan.mechanisms.len())
                .into_par_iter()
                .map(|mech| (plan.mechanisms[mech].name.clone(), runner.aggregate(mech, spec, predict)))
                .collect::<Vec<_>>()
                .into_iter()
                .collect(),
            _ => BTreeMap::new(),
        };
        (results, aggregate)
    };
    let (results, aggregate) = match opts.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };

    let (rows, outcomes): (Vec<ResultRow>, Vec<Vec<GameOutcome>>) = results.into_iter().unzip();
    for r in rows.iter().filter(|r| r.status == CellStatus::Failed) {
        log::warn!("cell {} target {} failed: {}", r.key(), r.target, r.error.as_deref().unwrap_or(""));
    }
    let report = Report {
        seed,
        failed_cells: rows.iter().filter(|r| r.status == CellStatus::Failed).count(),
        summary: summarise(&rows),
        rows,
        aggregate_utility: aggregate,
    };
    Ok(RunOutput {
        provenance: provenance(&config_eff, &plan, seed),
        report,
        outcomes,
        plan,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `report.json`, `outcomes.csv`, `provenance.json` and `plotdata/*.csv`.
pub fn write_outputs(output: &RunOutput, dir: &Path) -> Result<()> {
    let plot = dir.join("plotdata");
    fs::create_dir_all(&plot).map_err(|e| Error::io(&plot, e))?;
    let report_path = dir.join("report.json");
    fs::write(&report_path, output.report.to_json()).map_err(|e| Error::io(&report_path, e))?;
    let prov_path = dir.join("provenance.json");
    fs::write(&prov_path, serde_json::to_string_pretty(&output.provenance).expect("json")).map_err(|e| Error::io(&prov_path, e))?;

    let rows = &output.report.rows;
    write_rows(
        &dir.join("outcomes.csv"),
        &["game", "mechanism", "attack", "target", "test_record", "iteration", "s_t", "b", "guess", "success", "correct", "unique_category_published", "note"],
        rows.iter().zip(&output.outcomes).flat_map(|(r, outs)| {
            outs.iter().map(move |o| {
                vec![
                    r.game.clone(),
                    r.mechanism.clone(),
                    r.attack.clone(),
                    r.target.to_string(),
                    r.test_record.map(|t| t.to_string()).unwrap_or_default(),
                    o.iteration.to_string(),
                    o.s_t.to_string(),
                    o.b.to_string(),
                    fmt_opt(o.guess),
                    o.success.to_string(),
                    o.correct.to_string(),
                    o.unique_category_published.map(|u| u.to_string()).unwrap_or_default(),
                    o.note.clone().unwrap_or_default(),
                ]
            })
        }),
    )?;

    let status = |r: &ResultRow| match r.status {
        CellStatus::Ok => "ok".to_string(),
        CellStatus::Failed => "failed".to_string(),
    };
    write_rows(
        &plot.join("linkability_gain.csv"),
        &["mechanism", "attack", "target", "group", "privacy_gain", "std_error", "status"],
        rows.iter().filter(|r| r.game == "linkability").map(|r| {
            vec![
                r.mechanism.clone(),
                r.attack.clone(),
                r.target.to_string(),
                r.group.clone(),
                fmt_opt(r.privacy_gain),
                fmt_opt(r.privacy_gain_se),
                status(r),
            ]
        }),
    )?;
    write_rows(
        &plot.join("attribute_gain.csv"),
        &["mechanism", "sensitive", "target", "group", "advantage_raw", "advantage_published", "privacy_gain", "std_error", "status"],
        rows.iter().filter(|r| r.game == "attribute_inference").map(|r| {
            vec![
                r.mechanism.clone(),
                r.attack.clone(),
                r.target.to_string(),
                r.group.clone(),
                fmt_opt(r.raw_estimate.as_ref().map(|e| e.advantage)),
                fmt_opt(r.estimate.as_ref().map(|e| e.advantage)),
                fmt_opt(r.privacy_gain),
                fmt_opt(r.privacy_gain_se),
                status(r),
            ]
        }),
    )?;
    write_rows(
        &plot.join("attribute_success.csv"),
        &["mechanism", "sensitive", "target", "group", "data", "s_t", "mean_success"],
        rows.iter().filter(|r| r.game == "attribute_inference" && r.status == CellStatus::Ok).flat_map(|r| {
            let mut out = Vec::new();
            for (data, est) in [("raw", &r.raw_estimate), ("published", &r.estimate)] {
                if let Some(e) = est {
                    for (s, p) in [(1, e.p_success_given_1), (0, e.p_success_given_0)] {
                        out.push(vec![
                            r.mechanism.clone(),
                            r.attack.clone(),
                            r.target.to_string(),
                            r.group.clone(),
                            data.to_string(),
                            s.to_string(),
                            p.to_string(),
                        ]);
                    }
                }
            }
            out
        }),
    )?;
    write_rows(
        &plot.join("utility_advantage.csv"),
        &["mechanism", "target", "test_record", "utility_advantage", "std_error", "status"],
        rows.iter().filter(|r| r.game == "utility").map(|r| {
            vec![
                r.mechanism.clone(),
                r.target.to_string(),
                r.test_record.map(|t| t.to_string()).unwrap_or_default(),
                fmt_opt(r.estimate.as_ref().map(|e| e.advantage)),
                fmt_opt(r.estimate.as_ref().map(|e| e.std_error)),
                status(r),
            ]
        }),
    )?;
    let agg: Vec<(&String, &AggregateUtility)> = output
        .report
        .aggregate_utility
        .iter()
        .filter_map(|(k, v)| v.mean.as_ref().map(|m| (k, m)))
        .collect();
    write_rows(
        &plot.join("ml_accuracy.csv"),
        &["mechanism", "accuracy_raw", "accuracy_published"],
        agg.iter().map(|(k, a)| vec![k.to_string(), a.accuracy_raw.to_string(), a.accuracy_published.to_string()]),
    )?;
    write_rows(
        &plot.join("summary_stats.csv"),
        &["mechanism", "attribute", "statistic", "discrepancy"],
        agg.iter().flat_map(|(k, a)| {
            a.mean_discrepancy
                .iter()
                .map(move |(attr, v)| vec![k.to_string(), attr.clone(), "mean".to_string(), v.to_string()])
                .chain(
                    a.median_discrepancy
                        .iter()
                        .map(move |(attr, v)| vec![k.to_string(), attr.clone(), "median".to_string(), v.to_string()]),
                )
        }),
    )?;
    write_rows(
        &plot.join("marginals.csv"),
        &["mechanism", "attribute", "l1_distance"],
        agg.iter()
            .flat_map(|(k, a)| a.marginal_l1.iter().map(move |(attr, v)| vec![k.to_string(), attr.clone(), v.to_string()])),
    )?;
    Ok(())
}

/// Output directory for a run: the override, the config's `output_dir` (relative to
/// the config file), or `privgain-out` in the working directory.
pub fn output_dir(file: &ExperimentFile, opts: &RunOptions) -> PathBuf {
    if let Some(dir) = &opts.output_dir {
        return dir.clone();
    }
    match &file.config.output_dir {
        Some(d) if d.is_absolute() => d.clone(),
        Some(d) => file.base_dir.join(d),
        None => PathBuf::from("privgain-out"),
    }
}

/// Loads, runs and writes an experiment; checks its manifest when present.
pub fn run_experiment(path: impl AsRef<Path>, opts: &RunOptions) -> Result<(RunOutput, Option<Vec<ManifestCheck>>, PathBuf)> {
    let file = load_experiment(path)?;
    let output = execute(&file, opts)?;
    let dir = output_dir(&file, opts);
    write_outputs(&output, &dir)?;
    let checks = file.manifest.as_ref().map(|m| {
        let value = serde_json::to_value(&output.report).expect("report serialises");
        check_manifest(&value, m)
    });
    if let Some(checks) = &checks {
        let path = dir.join("manifest_check.json");
        fs::write(&path, serde_json::to_string_pretty(checks).expect("json")).map_err(|e| Error::io(&path, e))?;
    }
    Ok((output, checks, dir))
}
