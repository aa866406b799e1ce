use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestParams {
    #[serde(default = "default_trees")]
    pub n_trees: usize,
    /// Features tried per split; `None` means floor(sqrt(d)), at least 1.
    #[serde(default)]
    pub max_features: Option<usize>,
    #[serde(default = "default_true")]
    pub bootstrap: bool,
    /// `None` grows trees until leaves are pure.
    #[serde(default)]
    pub max_depth: Option<usize>,
    #[serde(default = "default_min_leaf")]
    pub min_samples_leaf: usize,
}

fn default_trees() -> usize {
    100
}

fn default_true() -> bool {
    true
}

fn default_min_leaf() -> usize {
    1
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: default_trees(),
            max_features: None,
            bootstrap: true,
            max_depth: None,
            min_samples_leaf: default_min_leaf(),
        }
    }
}

impl ForestParams {
    pub fn with_trees(n_trees: usize) -> Self {
        ForestParams {
            n_trees,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidConfig("forest needs at least one tree".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidConfig("min_samples_leaf must be >= 1".into()));
        }
        if self.max_features == Some(0) {
            return Err(Error::InvalidConfig("max_features must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(usize),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(class) => return class,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

/// Random-forest classifier. A forest fitted on a single class is a constant
/// classifier with `degenerate` set.
#[derive(Debug, Clone)]
pub struct Forest {
    trees: Vec<Tree>,
    n_classes: usize,
    n_features: usize,
    constant: Option<usize>,
}

impl Forest {
    pub fn degenerate(&self) -> bool {
        self.constant.is_some()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Per-class fraction of tree votes.
    pub fn vote_fractions(&self, x: &[f64]) -> Vec<f64> {
        let mut votes = vec![0.0; self.n_classes];
        if let Some(c) = self.constant {
            votes[c] = 1.0;
            return votes;
        }
        for t in &self.trees {
            votes[t.predict(x)] += 1.0;
        }
        let total = self.trees.len() as f64;
        votes.iter_mut().for_each(|v| *v /= total);
        votes
    }

    /// Majority vote; ties go to the lowest class index.
    pub fn predict(&self, x: &[f64]) -> usize {
        if let Some(c) = self.constant {
            return c;
        }
        let mut votes = vec![0usize; self.n_classes];
        for t in &self.trees {
            votes[t.predict(x)] += 1;
        }
        argmax_first(&votes)
    }
}

fn argmax_first(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

pub fn fit_forest<R: Rng + ?Sized>(x: &[Vec<f64>], y: &[usize], params: &ForestParams, rng: &mut R) -> Result<Forest> {
    params.validate()?;
    if x.len() != y.len() {
        return Err(Error::InvalidConfig(format!("{} rows but {} labels", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::TooFewRecords { needed: 2, got: x.len() });
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidConfig("ragged feature matrix".into()));
    }
    let n_classes = y.iter().max().map_or(1, |m| m + 1);
    let first = y[0];
    if y.iter().all(|&l| l == first) {
        log::warn!("forest fitted on a single class; using a constant classifier");
        return Ok(Forest {
            trees: Vec::new(),
            n_classes,
            n_features: d,
            constant: Some(first),
        });
    }
    let master: u64 = rng.gen();
    let mtry = params.max_features.unwrap_or(((d as f64).sqrt().floor() as usize).max(1)).min(d.max(1));
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(master, t as u64));
            let sample: Vec<usize> = if params.bootstrap {
                (0..x.len()).map(|_| rng.gen_range(0..x.len())).collect()
            } else {
                (0..x.len()).collect()
            };
            let mut builder = TreeBuilder {
                x,
                y,
                n_classes,
                mtry,
                params,
                nodes: Vec::new(),
            };
            builder.grow(sample, 0, &mut rng);
            Tree { nodes: builder.nodes }
        })
        .collect();
    Ok(Forest {
        trees,
        n_classes,
        n_features: d,
        constant: None,
    })
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    mtry: usize,
    params: &'a ForestParams,
    nodes: Vec<Node>,
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

impl TreeBuilder<'_> {
    fn grow<R: Rng + ?Sized>(&mut self, idx: Vec<usize>, depth: usize, rng: &mut R) -> usize {
        let at = self.nodes.len();
        let mut counts = vec![0usize; self.n_classes];
        for &i in &idx {
            counts[self.y[i]] += 1;
        }
        let majority = argmax_first(&counts);
        self.nodes.push(Node::Leaf(majority));
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_capped = self.params.max_depth.is_some_and(|m| depth >= m);
        if pure || depth_capped || idx.len() < 2 * self.params.min_samples_leaf {
            return at;
        }
        let Some((feature, threshold)) = self.best_split(&idx, &counts, rng) else {
            return at;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[at] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        at
    }

    /// Scans features in random order; stops once `mtry` features have been tried and a
    /// valid split exists, otherwise keeps going through the remaining features.
    fn best_split<R: Rng + ?Sized>(&self, idx: &[usize], counts: &[usize], rng: &mut R) -> Option<(usize, f64)> {
        let d = self.x[idx[0]].len();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(rng);
        let n = idx.len();
        let min_leaf = self.params.min_samples_leaf;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
        for (tried, &f) in features.iter().enumerate() {
            if tried >= self.mtry && best.is_some() {
                break;
            }
            order.clear();
            order.extend(idx.iter().map(|&i| (self.x[i][f], self.y[i])));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            if order[0].0 == order[n - 1].0 {
                continue;
            }
            let mut left = vec![0usize; self.n_classes];
            let mut right = counts.to_vec();
            for k in 0..n - 1 {
                let (v, label) = order[k];
                left[label] += 1;
                right[label] -= 1;
                let next = order[k + 1].0;
                let nl = k + 1;
                if v == next || nl < min_leaf || n - nl < min_leaf {
                    continue;
                }
                let score = (nl as f64 * gini(&left, nl) + (n - nl) as f64 * gini(&right, n - nl)) / n as f64;
                if best.map_or(true, |(s, _, _)| score < s) {
                    best = Some((score, f, 0.5 * (v + next)));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}
