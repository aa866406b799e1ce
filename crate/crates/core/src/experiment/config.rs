use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::index::sample;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::attacks::{ShadowConfig, ShadowSets};
use crate::data::{derive_metadata, load_csv, sample_toy_population, Dataset, RangePolicy, Record, SchemaMetadata, ToyPopulationConfig};
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::games::{select_outlier_targets, Sampling, SensitiveAssignment, MIN_ITERATIONS};
use crate::learners::ForestParams;
use crate::mechanism::Mechanism;
use crate::rng::{derive_seed_str, rng_from_seed};
use crate::sanitiser::SanitiserConfig;
use crate::synth::{GeneratorKind, GeneratorSpec, MetadataMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub population: PopulationSource,
    /// Disjoint population for utility test records and aggregate-utility holdouts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_population: Option<PopulationSource>,
    #[serde(default)]
    pub targets: Vec<TargetSpec>,
    pub mechanisms: Vec<MechanismEntry>,
    #[serde(default = "default_feature_sets")]
    pub feature_sets: Vec<FeatureSet>,
    pub games: GamesConfig,
    pub n: usize,
    pub m: usize,
    /// Size of the adversary's reference sample; the whole population when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(default = "default_shadows")]
    pub n_shadows: usize,
    #[serde(default = "default_synth_per_shadow")]
    pub synth_per_shadow: usize,
    #[serde(default)]
    pub shadow_sets: ShadowSets,
    /// Game iterations across both secret arms.
    #[serde(default = "default_iters")]
    pub iters: usize,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub forest: ForestParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_feature_sets() -> Vec<FeatureSet> {
    FeatureSet::ALL.to_vec()
}

fn default_shadows() -> usize {
    10
}

fn default_synth_per_shadow() -> usize {
    5
}

pub const DEFAULT_ITERS: usize = 400;

fn default_iters() -> usize {
    DEFAULT_ITERS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PopulationSource {
    Toy { size: usize, spec: ToyPopulationConfig },
    Csv { path: PathBuf, schema: PathBuf },
}

/// A row index (negative counts from the end) or a selector `outlier:k` / `random:k`.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    Index(i64),
    Outliers(usize),
    Random(usize),
}

impl fmt::Display for TargetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetSpec::Index(i) => write!(f, "{i}"),
            TargetSpec::Outliers(k) => write!(f, "outlier:{k}"),
            TargetSpec::Random(k) => write!(f, "random:{k}"),
        }
    }
}

impl Serialize for TargetSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TargetSpec::Index(i) => s.serialize_i64(*i),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for TargetSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(i64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Index(i) => Ok(TargetSpec::Index(i)),
            Raw::Text(t) => {
                let parse = |k: &str| k.parse::<usize>().map_err(|_| serde::de::Error::custom(format!("bad count in `{t}`")));
                match t.split_once(':') {
                    Some(("outlier", k)) => Ok(TargetSpec::Outliers(parse(k)?)),
                    Some(("random", k)) => Ok(TargetSpec::Random(parse(k)?)),
                    _ => Err(serde::de::Error::custom(format!("target `{t}` is not an index, `outlier:k` or `random:k`"))),
                }
            }
        }
    }
}

/// One release mechanism. Exactly one of `generator`, `sanitiser` or `raw` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sanitiser: Option<SanitiserConfig>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub raw: bool,
    /// Source of provided-mode generator metadata.
    #[serde(default)]
    pub metadata: MetadataSource,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetadataSource {
    /// The population's schema.
    #[default]
    Schema,
    /// Read off the population with every target record removed.
    PopulationExcludingTargets {
        #[serde(default)]
        pad: f64,
    },
}

impl MechanismEntry {
    pub fn display_name(&self) -> String {
        if let Some(name) = &self.name {
            return name.clone();
        }
        match (&self.generator, &self.sanitiser) {
            (Some(g), _) => g.label(),
            (_, Some(s)) => format!("San(k={})", s.k),
            _ => "Raw".to_string(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GamesConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linkability: Option<LinkabilityGame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute_inference: Option<AttributeGame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility: Option<UtilityGame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate_utility: Option<AggregateGame>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkabilityGame {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeGame {
    pub sensitive: Vec<String>,
    /// Trees for the categorical attribute classifier; `forest.n_trees` when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trees: Option<usize>,
    #[serde(default)]
    pub assignment: SensitiveAssignment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityGame {
    pub predict: String,
    pub pairs: Vec<UtilityPair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trees: Option<usize>,
}

/// `target` indexes the population, `test` the test population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityPair {
    pub target: i64,
    pub test: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateGame {
    pub predict: String,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Holdout size drawn from the test population (or the population when none is
    /// configured).
    #[serde(default = "default_holdout")]
    pub holdout: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trees: Option<usize>,
}

fn default_repetitions() -> usize {
    3
}

fn default_holdout() -> usize {
    500
}

/// Experiment file: either a bare config or `{"config": ..., "manifest": [...]}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentFile {
    pub config: ExperimentConfig,
    pub manifest: Option<Vec<super::manifest::ManifestEntry>>,
    pub description: Option<String>,
    /// Directory relative paths in the config resolve against.
    pub base_dir: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Wrapped {
    #[serde(default)]
    description: Option<String>,
    config: ExperimentConfig,
    #[serde(default)]
    manifest: Vec<super::manifest::ManifestEntry>,
}

pub fn parse_experiment(text: &str, origin: &str, base_dir: PathBuf) -> Result<ExperimentFile> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::config(origin, e.to_string()))?;
    let wrapped = value.get("config").is_some();
    let path_err = |e: serde_path_to_error::Error<serde_json::Error>| {
        let inner = e.path().to_string();
        let path = if wrapped { format!("config.{inner}") } else { inner };
        Error::config(path, e.into_inner().to_string())
    };
    if wrapped {
        let w: Wrapped = serde_path_to_error::deserialize(value).map_err(path_err)?;
        Ok(ExperimentFile {
            config: w.config,
            manifest: Some(w.manifest),
            description: w.description,
            base_dir,
        })
    } else {
        let config: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(path_err)?;
        Ok(ExperimentFile {
            config,
            manifest: None,
            description: None,
            base_dir,
        })
    }
}

pub fn load_experiment(path: impl AsRef<Path>) -> Result<ExperimentFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_experiment(&text, &path.display().to_string(), base)
}

/// A target after selection.
#[derive(Debug, Clone)]
pub struct ResolvedTarget {
    pub index: usize,
    pub group: &'static str,
    pub record: Record,
}

#[derive(Debug, Clone)]
pub struct ResolvedMechanism {
    pub name: String,
    pub mechanism: Mechanism,
}

/// Everything an experiment needs, loaded and checked.
#[derive(Debug, Clone)]
pub struct Plan {
    pub population: Dataset,
    pub test_population: Option<Dataset>,
    pub reference: Dataset,
    pub targets: Vec<ResolvedTarget>,
    pub mechanisms: Vec<ResolvedMechanism>,
    pub shadow: ShadowConfig,
    pub sensitive: Vec<(String, usize)>,
    pub utility: Option<(usize, Vec<(usize, usize)>)>,
    pub aggregate_predict: Option<usize>,
}

fn resolve_index(i: i64, len: usize, path: &str) -> Result<usize> {
    let idx = if i < 0 { len as i64 + i } else { i };
    if idx < 0 || idx as usize >= len {
        return Err(Error::config(path, format!("index {i} out of range for {len} records")));
    }
    Ok(idx as usize)
}

fn load_population(source: &PopulationSource, base: &Path, seed: u64, path: &str) -> Result<Dataset> {
    match source {
        PopulationSource::Toy { size, spec } => {
            sample_toy_population(spec, *size, &mut rng_from_seed(seed)).map_err(|e| Error::config(format!("{path}.toy"), e.to_string()))
        }
        PopulationSource::Csv { path: csv, schema } => {
            let schema_path = base.join(schema);
            let schema = SchemaMetadata::from_json_file(&schema_path).map_err(|e| Error::config(format!("{path}.csv.schema"), e.to_string()))?;
            load_csv(base.join(csv), Arc::new(schema), RangePolicy::Reject).map_err(|e| Error::config(format!("{path}.csv.path"), e.to_string()))
        }
    }
}

fn attribute(schema: &SchemaMetadata, name: &str, path: &str) -> Result<usize> {
    schema
        .index_of(name)
        .ok_or_else(|| Error::config(path, format!("unknown attribute `{name}`")))
}

impl ExperimentConfig {
    /// Checks that need no data.
    pub fn check_static(&self) -> Result<()> {
        if self.mechanisms.is_empty() {
            return Err(Error::config("mechanisms", "at least one mechanism is required"));
        }
        if self.n == 0 {
            return Err(Error::config("n", "must be >= 1"));
        }
        if self.m == 0 {
            return Err(Error::config("m", "must be >= 1"));
        }
        if self.iters < MIN_ITERATIONS {
            return Err(Error::config("iters", format!("must be >= {MIN_ITERATIONS}")));
        }
        if self.n_shadows < 2 {
            return Err(Error::config("n_shadows", "must be >= 2"));
        }
        if self.synth_per_shadow == 0 {
            return Err(Error::config("synth_per_shadow", "must be >= 1"));
        }
        if let Some(l) = self.l {
            if l < self.n {
                return Err(Error::config("l", format!("reference size {l} is smaller than n = {}", self.n)));
            }
        }
        self.forest.validate().map_err(|e| Error::config("forest", e.to_string()))?;
        if self.games.linkability.is_some() && self.feature_sets.is_empty() {
            return Err(Error::config("feature_sets", "linkability needs at least one feature set"));
        }
        let mut names = std::collections::BTreeSet::new();
        for (i, entry) in self.mechanisms.iter().enumerate() {
            let path = format!("mechanisms[{i}]");
            let set = usize::from(entry.generator.is_some()) + usize::from(entry.sanitiser.is_some()) + usize::from(entry.raw);
            if set != 1 {
                return Err(Error::config(path, "exactly one of `generator`, `sanitiser`, `raw` must be given"));
            }
            if let Some(g) = &entry.generator {
                g.validate().map_err(|e| Error::config(format!("{path}.generator"), e.to_string()))?;
            }
            if let Some(s) = &entry.sanitiser {
                s.validate().map_err(|e| Error::config(format!("{path}.sanitiser"), e.to_string()))?;
            }
            let name = entry.display_name();
            if name.contains('/') || name.contains('|') {
                return Err(Error::config(format!("{path}.name"), "mechanism names may not contain `/` or `|`"));
            }
            if !names.insert(name.clone()) {
                return Err(Error::config(format!("{path}.name"), format!("duplicate mechanism name `{name}`")));
            }
        }
        Ok(())
    }

    /// Loads populations and resolves names, targets and metadata.
    pub fn resolve(&self, base: &Path) -> Result<Plan> {
        self.check_static()?;
        let population = load_population(&self.population, base, derive_seed_str(self.seed, "population"), "population")?;
        let schema = population.schema_arc().clone();
        let test_population = match &self.test_population {
            Some(src) => {
                let t = load_population(src, base, derive_seed_str(self.seed, "test_population"), "test_population")?;
                if *t.schema() != *schema {
                    return Err(Error::config("test_population", "schema differs from the population's"));
                }
                Some(population.with_records(t.into_records()))
            }
            None => None,
        };
        if self.n > population.len() {
            return Err(Error::config("n", format!("n = {} exceeds the population size {}", self.n, population.len())));
        }

        let mut chosen: Vec<(usize, &'static str)> = Vec::new();
        let mut target_rng = rng_from_seed(derive_seed_str(self.seed, "targets"));
        for (i, t) in self.targets.iter().enumerate() {
            let path = format!("targets[{i}]");
            match t {
                TargetSpec::Index(idx) => chosen.push((resolve_index(*idx, population.len(), &path)?, "explicit")),
                TargetSpec::Outliers(k) => {
                    let picks = select_outlier_targets(&population, population.len()).map_err(|e| Error::config(&path, e.to_string()))?;
                    let fresh: Vec<usize> = picks.into_iter().filter(|p| !chosen.iter().any(|c| c.0 == *p)).take(*k).collect();
                    if fresh.len() < *k {
                        return Err(Error::config(path, "not enough records for outlier selection"));
                    }
                    chosen.extend(fresh.into_iter().map(|p| (p, "outlier")));
                }
                TargetSpec::Random(k) => {
                    let free: Vec<usize> = (0..population.len()).filter(|p| !chosen.iter().any(|c| c.0 == *p)).collect();
                    if free.len() < *k {
                        return Err(Error::config(path, "not enough records for random selection"));
                    }
                    let mut picks: Vec<usize> = sample(&mut target_rng, free.len(), *k).into_iter().map(|j| free[j]).collect();
                    picks.sort_unstable();
                    chosen.extend(picks.into_iter().map(|p| (p, "random")));
                }
            }
        }
        let mut targets: Vec<ResolvedTarget> = chosen
            .into_iter()
            .map(|(index, group)| ResolvedTarget {
                index,
                group,
                record: population.record(index).clone(),
            })
            .collect();

        let utility = match &self.games.utility {
            Some(u) => {
                let predict = attribute(&schema, &u.predict, "games.utility.predict")?;
                if !schema.attribute(predict).is_categorical() {
                    return Err(Error::config("games.utility.predict", "must name a categorical attribute"));
                }
                let test = test_population
                    .as_ref()
                    .ok_or_else(|| Error::config("test_population", "the utility game needs a test population"))?;
                let mut pairs = Vec::new();
                for (i, p) in u.pairs.iter().enumerate() {
                    let t = resolve_index(p.target, population.len(), &format!("games.utility.pairs[{i}].target"))?;
                    let s = resolve_index(p.test, test.len(), &format!("games.utility.pairs[{i}].test"))?;
                    pairs.push((t, s));
                }
                Some((predict, pairs))
            }
            None => None,
        };
        let sensitive = match &self.games.attribute_inference {
            Some(a) => a
                .sensitive
                .iter()
                .enumerate()
                .map(|(i, name)| Ok((name.clone(), attribute(&schema, name, &format!("games.attribute_inference.sensitive[{i}]"))?)))
                .collect::<Result<_>>()?,
            None => Vec::new(),
        };
        let aggregate_predict = match &self.games.aggregate_utility {
            Some(a) => {
                let idx = attribute(&schema, &a.predict, "games.aggregate_utility.predict")?;
                if !schema.attribute(idx).is_categorical() {
                    return Err(Error::config("games.aggregate_utility.predict", "must name a categorical attribute"));
                }
                if a.repetitions == 0 || a.holdout == 0 {
                    return Err(Error::config("games.aggregate_utility", "repetitions and holdout must be >= 1"));
                }
                Some(idx)
            }
            None => None,
        };

        // records that are targets anywhere in the experiment
        let mut target_records: Vec<Record> = targets.iter().map(|t| t.record.clone()).collect();
        if let Some((_, pairs)) = &utility {
            target_records.extend(pairs.iter().map(|(t, _)| population.record(*t).clone()));
        }
        let mut mechanisms = Vec::new();
        for (i, entry) in self.mechanisms.iter().enumerate() {
            let path = format!("mechanisms[{i}]");
            let mechanism = if let Some(spec) = &entry.generator {
                let metadata = match &entry.metadata {
                    MetadataSource::Schema => schema.clone(),
                    MetadataSource::PopulationExcludingTargets { pad } => {
                        let rest: Vec<Record> = population.records().iter().filter(|r| !target_records.contains(r)).cloned().collect();
                        let meta = derive_metadata(&population.with_records(rest), *pad).map_err(|e| Error::config(format!("{path}.metadata"), e.to_string()))?;
                        Arc::new(meta)
                    }
                };
                Mechanism::generator(spec.clone(), metadata)
            } else if let Some(s) = &entry.sanitiser {
                for (j, q) in s.quasi_identifiers.iter().enumerate() {
                    attribute(&schema, q, &format!("{path}.sanitiser.quasi_identifiers[{j}]"))?;
                }
                for attr in s.grouping_map.keys() {
                    attribute(&schema, attr, &format!("{path}.sanitiser.grouping_map"))?;
                }
                Mechanism::Sanitiser(s.clone())
            } else {
                Mechanism::Raw
            };
            mechanisms.push(ResolvedMechanism {
                name: entry.display_name(),
                mechanism,
            });
        }

        let l = self.l.unwrap_or(population.len());
        if l > population.len() {
            return Err(Error::config("l", format!("reference size {l} exceeds the population size {}", population.len())));
        }
        let mut ref_rng = rng_from_seed(derive_seed_str(self.seed, "reference"));
        let mut ref_idx = sample(&mut ref_rng, population.len(), l).into_vec();
        ref_idx.sort_unstable();
        let reference = population.subset(&ref_idx);

        targets.sort_by_key(|t| (group_rank(t.group), t.index));
        Ok(Plan {
            population,
            test_population,
            reference,
            targets,
            mechanisms,
            shadow: ShadowConfig {
                n_shadows: self.n_shadows,
                synth_per_shadow: self.synth_per_shadow,
                sets: self.shadow_sets,
                forest: self.forest.clone(),
            },
            sensitive,
            utility,
            aggregate_predict,
        })
    }
}

fn group_rank(group: &str) -> u8 {
    match group {
        "outlier" => 0,
        "random" => 1,
        _ => 2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub level: Level,
    pub path: String,
    pub message: String,
}

pub const LEAKY_WARNING: &str = "metadata learned from training data violates DP assumptions";
pub const NON_PRIVATE_EPSILON: f64 = 1e6;

fn from_error(e: Error) -> Diagnostic {
    match e {
        Error::ConfigError { path, message } => Diagnostic {
            level: Level::Error,
            path,
            message,
        },
        other => Diagnostic {
            level: Level::Error,
            path: String::new(),
            message: other.to_string(),
        },
    }
}

/// Static validation; never runs a game.
pub fn validate_experiment(file: &ExperimentFile) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let cfg = &file.config;
    for (i, entry) in cfg.mechanisms.iter().enumerate() {
        if let Some(g) = &entry.generator {
            if g.metadata_mode == MetadataMode::Learned {
                out.push(Diagnostic {
                    level: Level::Warning,
                    path: format!("mechanisms[{i}].generator.metadata_mode"),
                    message: LEAKY_WARNING.to_string(),
                });
            }
            if g.kind == GeneratorKind::PrivBay {
                if let Some(b) = g.budget {
                    if b.epsilon_total >= NON_PRIVATE_EPSILON {
                        out.push(Diagnostic {
                            level: Level::Warning,
                            path: format!("mechanisms[{i}].generator.budget.epsilon_total"),
                            message: format!("epsilon {} is effectively non-private", b.epsilon_total),
                        });
                    }
                }
            }
        }
        if let Some(s) = &entry.sanitiser {
            if let Err(e) = s.validate() {
                out.push(Diagnostic {
                    level: Level::Error,
                    path: format!("mechanisms[{i}].sanitiser"),
                    message: e.to_string(),
                });
            }
        }
    }
    if !out.iter().any(|d| d.level == Level::Error) {
        if let Err(e) = cfg.resolve(&file.base_dir) {
            out.push(from_error(e));
        }
    }
    out
}

pub fn validate_config_file(path: impl AsRef<Path>) -> Vec<Diagnostic> {
    match load_experiment(path) {
        Ok(file) => validate_experiment(&file),
        Err(e) => vec![from_error(e)],
    }
}
