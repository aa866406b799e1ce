//! Greedy Bayesian-network learning over discretised columns, with optional
//! differentially private structure selection and table noise.

use rand::Rng;
use serde::Serialize;

use crate::dp::{exponential_mechanism, laplace_noise};
use crate::error::Result;
use crate::rng::sample_weighted;

/// Conditional distribution of one attribute given its parents.
///
/// `joint` holds P(parents, child) laid out parent-configuration-major; `conditional`
/// holds the rows P(child | parents) in the same layout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalTable {
    pub child: usize,
    pub parents: Vec<usize>,
    pub child_card: usize,
    pub parent_cards: Vec<usize>,
    pub joint: Vec<f64>,
    pub conditional: Vec<f64>,
}

impl ConditionalTable {
    pub fn parent_configs(&self) -> usize {
        self.parent_cards.iter().product()
    }

    pub fn row(&self, parent_config: usize) -> &[f64] {
        let k = self.child_card;
        &self.conditional[parent_config * k..(parent_config + 1) * k]
    }

    fn config_index(&self, codes: &[u32]) -> usize {
        self.parents
            .iter()
            .zip(&self.parent_cards)
            .fold(0, |acc, (&p, &card)| acc * card + codes[p] as usize)
    }

    /// Total-variation distance between the joint tables P(parents, child) of two
    /// tables over the same variables; `None` if their shapes differ.
    pub fn joint_total_variation(&self, other: &ConditionalTable) -> Option<f64> {
        if self.child != other.child || self.parents != other.parents || self.joint.len() != other.joint.len() {
            return None;
        }
        Some(0.5 * self.joint.iter().zip(&other.joint).map(|(a, b)| (a - b).abs()).sum::<f64>())
    }
}

/// Learned network: attributes in sampling order, each with its table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BayesNet {
    pub order: Vec<usize>,
    /// Indexed by attribute.
    pub tables: Vec<ConditionalTable>,
}

impl BayesNet {
    pub fn sample_codes<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u32> {
        let mut codes = vec![0u32; self.tables.len()];
        for &attr in &self.order {
            let table = &self.tables[attr];
            let row = table.row(table.config_index(&codes));
            codes[attr] = sample_weighted(row, rng) as u32;
        }
        codes
    }

    pub fn parents_of(&self, attr: usize) -> &[usize] {
        &self.tables[attr].parents
    }
}

/// How structure and tables are chosen.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Privacy {
    /// Arg-max structure, exact tables.
    None,
    Private {
        structure_epsilon: f64,
        tables_epsilon: f64,
        sensitivity: f64,
    },
}

fn joint_counts(columns: &[Vec<u32>], cards: &[usize], parents: &[usize], child: usize) -> Vec<f64> {
    let k = cards[child];
    let configs: usize = parents.iter().map(|&p| cards[p]).product();
    let mut counts = vec![0.0; configs * k];
    for row in 0..columns[child].len() {
        let cfg = parents.iter().fold(0, |acc, &p| acc * cards[p] + columns[p][row] as usize);
        counts[cfg * k + columns[child][row] as usize] += 1.0;
    }
    counts
}

/// Empirical mutual information (nats) between `child` and the joint of `parents`.
pub(crate) fn mutual_information(columns: &[Vec<u32>], cards: &[usize], parents: &[usize], child: usize) -> f64 {
    let n = columns[child].len() as f64;
    if n == 0.0 || parents.is_empty() {
        return 0.0;
    }
    let k = cards[child];
    let counts = joint_counts(columns, cards, parents, child);
    let configs = counts.len() / k;
    let mut child_marg = vec![0.0; k];
    let mut parent_marg = vec![0.0; configs];
    for c in 0..configs {
        for x in 0..k {
            let v = counts[c * k + x];
            child_marg[x] += v;
            parent_marg[c] += v;
        }
    }
    let mut mi = 0.0;
    for c in 0..configs {
        for x in 0..k {
            let v = counts[c * k + x];
            if v > 0.0 {
                // only observed cells contribute, so no smoothing is needed
                mi += (v / n) * ((v * n) / (parent_marg[c] * child_marg[x])).ln();
            }
        }
    }
    mi.max(0.0)
}

/// All `size`-subsets of `pool` in lexicographic order of positions.
fn combinations(pool: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(size);
    fn rec(pool: &[usize], size: usize, start: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == size {
            out.push(current.clone());
            return;
        }
        for i in start..pool.len() {
            current.push(pool[i]);
            rec(pool, size, i + 1, current, out);
            current.pop();
        }
    }
    rec(pool, size, 0, &mut current, &mut out);
    out
}

/// Greedy structure search. The first attribute in schema order is the root; each
/// step adds the (child, parent set) candidate with the highest mutual information,
/// parent sets ranging over all `min(degree, added)`-subsets of the added attributes.
/// Candidates are enumerated by child in schema order, then parent subsets, and
/// ties keep the earliest candidate.
pub(crate) fn learn_structure<R: Rng + ?Sized>(
    columns: &[Vec<u32>],
    cards: &[usize],
    degree: usize,
    privacy: Privacy,
    rng: &mut R,
) -> Result<Vec<(usize, Vec<usize>)>> {
    let d = cards.len();
    let mut added = vec![0usize];
    let mut structure = vec![(0usize, Vec::new())];
    let mut is_added = vec![false; d];
    is_added[0] = true;
    while added.len() < d {
        let mut pool = added.clone();
        pool.sort_unstable();
        let subsets = combinations(&pool, degree.min(added.len()));
        let mut candidates = Vec::new();
        let mut scores = Vec::new();
        for child in (0..d).filter(|&c| !is_added[c]) {
            for parents in &subsets {
                scores.push(mutual_information(columns, cards, parents, child));
                candidates.push((child, parents.clone()));
            }
        }
        let pick = match privacy {
            Privacy::None => {
                let mut best = 0;
                for (i, s) in scores.iter().enumerate() {
                    if *s > scores[best] {
                        best = i;
                    }
                }
                best
            }
            Privacy::Private {
                structure_epsilon,
                sensitivity,
                ..
            } => {
                let step_epsilon = structure_epsilon / (d - 1) as f64;
                exponential_mechanism(&scores, sensitivity, step_epsilon, rng)?
            }
        };
        let (child, parents) = candidates.swap_remove(pick);
        is_added[child] = true;
        added.push(child);
        structure.push((child, parents));
    }
    Ok(structure)
}

/// Normalised joint tables for the given structure; private mode adds Laplace noise
/// (budget split equally across tables), clips negatives and renormalises.
pub(crate) fn fit_tables<R: Rng + ?Sized>(
    columns: &[Vec<u32>],
    cards: &[usize],
    structure: &[(usize, Vec<usize>)],
    privacy: Privacy,
    rng: &mut R,
) -> Result<BayesNet> {
    let d = cards.len();
    let n = columns.first().map_or(0, Vec::len).max(1) as f64;
    let mut tables: Vec<Option<ConditionalTable>> = vec![None; d];
    for (child, parents) in structure {
        let mut joint: Vec<f64> = joint_counts(columns, cards, parents, *child)
            .into_iter()
            .map(|c| c / n)
            .collect();
        if let Privacy::Private { tables_epsilon, .. } = privacy {
            // a normalised histogram has L1 sensitivity 2/n; each of the d tables gets epsilon/d
            let scale = 2.0 * d as f64 / (n * tables_epsilon);
            for v in joint.iter_mut() {
                *v = (*v + laplace_noise(scale, rng)?).max(0.0);
            }
        }
        normalise_or_uniform(&mut joint);
        let k = cards[*child];
        let mut conditional = joint.clone();
        for row in conditional.chunks_mut(k) {
            normalise_or_uniform(row);
        }
        tables[*child] = Some(ConditionalTable {
            child: *child,
            parents: parents.clone(),
            child_card: k,
            parent_cards: parents.iter().map(|&p| cards[p]).collect(),
            joint,
            conditional,
        });
    }
    Ok(BayesNet {
        order: structure.iter().map(|(c, _)| *c).collect(),
        tables: tables.into_iter().map(|t| t.expect("every attribute placed")).collect(),
    })
}

pub(crate) fn normalise_or_uniform(values: &mut [f64]) {
    let total: f64 = values.iter().sum();
    if total > 0.0 && total.is_finite() {
        values.iter_mut().for_each(|v| *v /= total);
    } else {
        let u = 1.0 / values.len() as f64;
        values.iter_mut().for_each(|v| *v = u);
    }
}
