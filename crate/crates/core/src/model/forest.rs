//! Random forest of CART classification trees.
//!
//! Each tree is grown on a bootstrap resample of the training rows. At every
//! node the feature order is shuffled and features are examined until
//! `features_per_split` non-constant ones have been scored; the split with
//! the lowest weighted Gini impurity wins. Leaves keep raw class counts, and
//! forest probabilities are the mean of per-tree leaf frequencies.
//!
//! Tree `i` draws all of its randomness from `SplitMix64::derive(seed, i)`,
//! so the fitted forest is identical whether trees are grown in parallel or
//! one after another.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ModelError, Prediction};
use crate::rng::SplitMix64;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// How many candidate features are scored at each node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    Sqrt,
    All,
    Fixed(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (n_features as f64).sqrt().floor() as usize,
            MaxFeatures::All => n_features,
            MaxFeatures::Fixed(k) => k,
        };
        k.clamp(1, n_features.max(1))
    }
}

impl std::str::FromStr for MaxFeatures {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sqrt" => Ok(MaxFeatures::Sqrt),
            "all" => Ok(MaxFeatures::All),
            n => n
                .parse::<usize>()
                .ok()
                .filter(|&k| k >= 1)
                .map(MaxFeatures::Fixed)
                .ok_or_else(|| format!("expected sqrt, all or a positive integer, got {n:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows trees until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub features_per_split: MaxFeatures,
    pub seed: u64,
    /// Grow trees on the rayon pool. Does not change the result.
    #[serde(default = "default_parallel", skip_serializing)]
    pub parallel: bool,
}

fn default_parallel() -> bool {
    true
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            features_per_split: MaxFeatures::Sqrt,
            seed: 0,
            parallel: true,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_trees == 0 {
            return Err(ModelError::InvalidConfig("n_trees must be >= 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(ModelError::InvalidConfig(
                "min_samples_leaf must be >= 1".into(),
            ));
        }
        if self.max_depth == Some(0) {
            return Err(ModelError::InvalidConfig("max_depth must be >= 1".into()));
        }
        if self.features_per_split == MaxFeatures::Fixed(0) {
            return Err(ModelError::InvalidConfig(
                "features_per_split must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One node of a fitted tree. Leaves have `feature == None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub feature: Option<usize>,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    /// Bootstrap class counts reaching this node.
    pub counts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn leaf_for(&self, x: &[f64]) -> &Node {
        let mut node = &self.nodes[0];
        while let Some(f) = node.feature {
            node = if x[f] <= node.threshold {
                &self.nodes[node.left]
            } else {
                &self.nodes[node.right]
            };
        }
        node
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i].feature {
                None => 0,
                Some(_) => 1 + go(t, t.nodes[i].left).max(go(t, t.nodes[i].right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub format_version: u32,
    pub n_features: usize,
    pub n_classes: usize,
    pub config: ForestConfig,
    pub trees: Vec<Tree>,
}

struct Split {
    feature: usize,
    threshold: f64,
    /// Number of samples routed left once sorted by the feature.
    n_left: usize,
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    mtry: usize,
    cfg: &'a ForestConfig,
    rng: SplitMix64,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<u32> {
        let mut c = vec![0u32; self.n_classes];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    fn best_split(&mut self, idx: &[usize], counts: &[u32]) -> Option<Split> {
        let n_features = self.x[0].len();
        let mut order: Vec<usize> = (0..n_features).collect();
        self.rng.shuffle(&mut order);

        let m = idx.len();
        let min_leaf = self.cfg.min_samples_leaf;
        let mut best: Option<(f64, Split)> = None;
        let mut scored = 0;
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(m);
        let mut left = vec![0f64; self.n_classes];

        for &f in &order {
            if scored >= self.mtry {
                break;
            }
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (self.x[i][f], self.y[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            if pairs[0].0 == pairs[m - 1].0 {
                continue;
            }
            scored += 1;

            // maximise sum_c l_c^2 / n_l + sum_c r_c^2 / n_r, i.e. minimise weighted Gini
            left.iter_mut().for_each(|v| *v = 0.0);
            for pos in 1..m {
                left[pairs[pos - 1].1] += 1.0;
                if pairs[pos - 1].0 == pairs[pos].0 || pos < min_leaf || m - pos < min_leaf {
                    continue;
                }
                let (nl, nr) = (pos as f64, (m - pos) as f64);
                let mut score = 0.0;
                for (c, &l) in left.iter().enumerate() {
                    let r = counts[c] as f64 - l;
                    score += l * l / nl + r * r / nr;
                }
                if best.as_ref().is_none_or(|(s, _)| score > *s) {
                    let (a, b) = (pairs[pos - 1].0, pairs[pos].0);
                    let mut threshold = a + (b - a) / 2.0;
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some((
                        score,
                        Split {
                            feature: f,
                            threshold,
                            n_left: pos,
                        },
                    ));
                }
            }
        }
        best.map(|(_, s)| s)
    }

    fn grow(&mut self, root: Vec<usize>) {
        self.nodes.clear();
        let mut stack = vec![(0usize, root, 0usize)];
        self.nodes.push(Node {
            feature: None,
            threshold: 0.0,
            left: 0,
            right: 0,
            counts: Vec::new(),
        });
        while let Some((id, idx, depth)) = stack.pop() {
            let counts = self.counts(&idx);
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            let too_small = idx.len() < 2 * self.cfg.min_samples_leaf || idx.len() < 2;
            let too_deep = self.cfg.max_depth.is_some_and(|d| depth >= d);
            let split = if pure || too_small || too_deep {
                None
            } else {
                self.best_split(&idx, &counts)
            };
            match split {
                None => {
                    self.nodes[id].counts = counts;
                }
                Some(s) => {
                    let (l, r): (Vec<usize>, Vec<usize>) = idx
                        .iter()
                        .partition(|&&i| self.x[i][s.feature] <= s.threshold);
                    debug_assert_eq!(l.len(), s.n_left);
                    let left_id = self.nodes.len();
                    let right_id = left_id + 1;
                    for _ in 0..2 {
                        self.nodes.push(Node {
                            feature: None,
                            threshold: 0.0,
                            left: 0,
                            right: 0,
                            counts: Vec::new(),
                        });
                    }
                    let node = &mut self.nodes[id];
                    node.feature = Some(s.feature);
                    node.threshold = s.threshold;
                    node.left = left_id;
                    node.right = right_id;
                    node.counts = counts;
                    // right first so the left subtree is expanded first
                    stack.push((right_id, r, depth + 1));
                    stack.push((left_id, l, depth + 1));
                }
            }
        }
    }
}

fn check_matrix(x: &[Vec<f64>]) -> Result<usize, ModelError> {
    let d = x.first().map_or(0, |r| r.len());
    if d == 0 {
        return Err(ModelError::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    for row in x {
        if row.len() != d {
            return Err(ModelError::DimensionMismatch {
                expected: d,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteFeature);
        }
    }
    Ok(d)
}

/// Fits a forest; the number of classes is `max(y) + 1`.
pub fn train_forest(x: &[Vec<f64>], y: &[usize], cfg: &ForestConfig) -> Result<Forest, ModelError> {
    let n_classes = y.iter().max().map_or(0, |m| m + 1);
    train_forest_with_classes(x, y, n_classes, cfg)
}

/// Fits a forest over a fixed label space `0..n_classes`, which may include
/// classes absent from `y`.
pub fn train_forest_with_classes(
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    cfg: &ForestConfig,
) -> Result<Forest, ModelError> {
    cfg.validate()?;
    if x.len() != y.len() {
        return Err(ModelError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(ModelError::TooFewSamples(x.len()));
    }
    let n_features = check_matrix(x)?;
    if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(ModelError::InvalidLabel(bad));
    }
    let distinct = {
        let mut seen = vec![false; n_classes];
        y.iter().for_each(|&c| seen[c] = true);
        seen.into_iter().filter(|&s| s).count()
    };
    if distinct < 2 {
        return Err(ModelError::DegenerateLabels);
    }

    let mtry = cfg.features_per_split.resolve(n_features);
    let grow_tree = |t: usize| {
        let mut rng = SplitMix64::derive(cfg.seed, t as u64);
        let n = x.len();
        let bootstrap: Vec<usize> = (0..n).map(|_| rng.below(n)).collect();
        let mut builder = TreeBuilder {
            x,
            y,
            n_classes,
            mtry,
            cfg,
            rng,
            nodes: Vec::new(),
        };
        builder.grow(bootstrap);
        Tree {
            nodes: builder.nodes,
        }
    };
    let trees: Vec<Tree> = if cfg.parallel {
        (0..cfg.n_trees).into_par_iter().map(grow_tree).collect()
    } else {
        (0..cfg.n_trees).map(grow_tree).collect()
    };
    Ok(Forest {
        format_version: MODEL_FORMAT_VERSION,
        n_features,
        n_classes,
        config: *cfg,
        trees,
    })
}

impl Forest {
    pub fn predict_proba(&self, x: &[f64]) -> Result<Prediction, ModelError> {
        if x.len() != self.n_features {
            return Err(ModelError::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let mut probs = vec![0.0; self.n_classes];
        for tree in &self.trees {
            let leaf = tree.leaf_for(x);
            let total: u32 = leaf.counts.iter().sum();
            for (p, &c) in probs.iter_mut().zip(&leaf.counts) {
                *p += c as f64 / total as f64;
            }
        }
        let n = self.trees.len() as f64;
        probs.iter_mut().for_each(|p| *p /= n);
        Ok(Prediction::from_probs(probs))
    }

    pub fn predict_many(&self, x: &[Vec<f64>]) -> Result<Vec<Prediction>, ModelError> {
        x.iter().map(|row| self.predict_proba(row)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let forest: Forest =
            serde_json::from_str(text).map_err(|e| ModelError::Serialization(e.to_string()))?;
        if forest.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Serialization(format!(
                "unsupported model format version {}",
                forest.format_version
            )));
        }
        for tree in &forest.trees {
            let n = tree.nodes.len();
            let ok = n > 0
                && tree
                    .nodes
                    .iter()
                    .enumerate()
                    .all(|(i, node)| match node.feature {
                        // children always follow their parent, which rules out cycles
                        Some(f) => {
                            f < forest.n_features
                                && node.left > i
                                && node.right > i
                                && node.left < n
                                && node.right < n
                        }
                        None => {
                            node.counts.len() == forest.n_classes
                                && node.counts.iter().any(|&c| c > 0)
                        }
                    });
            if !ok {
                return Err(ModelError::Serialization("malformed tree".into()));
            }
        }
        Ok(forest)
    }
}
