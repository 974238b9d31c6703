//! Random forest of CART classification trees over the seven breath
//! features.
//!
//! Each tree is grown on a bootstrap sample drawn from its own ChaCha8
//! stream seeded with `seed ^ tree_index`, so serial and parallel training
//! produce bit-identical models. Splits maximise Gini impurity reduction
//! over `mtry` randomly chosen features; thresholds sit at the midpoint of
//! adjacent distinct values and samples with `x <= threshold` go left.
//!
//! Trees are stored as flat node arrays (root at index 0, children always
//! after their parent), which is also the on-disk layout.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FEATURE_NAMES, N_FEATURES};
use crate::mode::{VentMode, CLASSES, N_CLASSES};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Features considered per split.
    pub mtry: usize,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 30,
            mtry: 2,
            min_samples_leaf: 1,
            max_depth: None,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidConfig("n_trees must be at least 1".into()));
        }
        if !(1..=N_FEATURES).contains(&self.mtry) {
            return Err(Error::InvalidConfig(format!("mtry must be in 1..={N_FEATURES}")));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidConfig("min_samples_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        /// Bootstrap-weighted training counts per class.
        class_counts: [u32; N_CLASSES],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    /// Majority class of the leaf reached by `x`; ties go to the lowest index.
    pub fn vote(&self, x: &[f64; N_FEATURES]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                TreeNode::Leaf { class_counts } => return majority(class_counts),
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }

    fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::ModelFormat("tree has no nodes".into()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if *feature >= N_FEATURES || !threshold.is_finite() {
                        return Err(Error::ModelFormat(format!("node {i}: invalid split")));
                    }
                    for c in [left, right] {
                        if *c <= i || *c >= self.nodes.len() {
                            return Err(Error::ModelFormat(format!("node {i}: child index {c} out of order")));
                        }
                    }
                }
                TreeNode::Leaf { class_counts } => {
                    if class_counts.iter().all(|c| *c == 0) {
                        return Err(Error::ModelFormat(format!("node {i}: empty leaf")));
                    }
                }
            }
        }
        Ok(())
    }
}

fn majority<T: PartialOrd + Copy>(counts: &[T]) -> usize {
    let mut best = 0;
    for (i, c) in counts.iter().enumerate() {
        if *c > counts[best] {
            best = i;
        }
    }
    best
}

/// A per-breath prediction with the per-class vote tally.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    pub mode: VentMode,
    pub votes: [u32; N_CLASSES],
}

impl Prediction {
    pub fn from_votes(votes: [u32; N_CLASSES]) -> Self {
        let mode = CLASSES[majority(&votes)];
        Self { mode, votes }
    }

    /// Vote fractions; the integer votes sum to the number of voters.
    pub fn fractions(&self) -> [f64; N_CLASSES] {
        let total: u32 = self.votes.iter().sum();
        self.votes.map(|v| f64::from(v) / f64::from(total.max(1)))
    }
}

/// Anything that labels one breath from its feature vector.
pub trait BreathClassifier: Sync {
    fn classify(&self, features: &[f64; N_FEATURES]) -> Result<Prediction>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub format_version: u32,
    pub config: ForestConfig,
    pub features: Vec<String>,
    pub classes: Vec<VentMode>,
    pub trees: Vec<DecisionTree>,
}

impl RandomForestModel {
    pub fn predict(&self, x: &[f64; N_FEATURES]) -> Result<Prediction> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: 0 });
        }
        let mut votes = [0u32; N_CLASSES];
        for t in &self.trees {
            votes[t.vote(x)] += 1;
        }
        Ok(Prediction::from_votes(votes))
    }
}

impl BreathClassifier for RandomForestModel {
    fn classify(&self, features: &[f64; N_FEATURES]) -> Result<Prediction> {
        self.predict(features)
    }
}

pub fn predict(model: &RandomForestModel, x: &[f64; N_FEATURES]) -> Result<Prediction> {
    model.predict(x)
}

fn check_inputs(x: &[[f64; N_FEATURES]], labels: &[VentMode]) -> Result<Vec<u8>> {
    if x.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if x.len() != labels.len() {
        return Err(Error::InvalidConfig(format!(
            "{} feature rows but {} labels",
            x.len(),
            labels.len()
        )));
    }
    if let Some(row) = x.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite { row });
    }
    labels
        .iter()
        .map(|m| {
            m.class_index()
                .map(|c| c as u8)
                .ok_or_else(|| Error::UntrainableLabel(m.to_string()))
        })
        .collect()
}

/// Train with trees grown in parallel when the `parallel` feature is on.
pub fn train_forest(
    x: &[[f64; N_FEATURES]],
    labels: &[VentMode],
    config: &ForestConfig,
) -> Result<RandomForestModel> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        train_with(x, labels, config, |y| {
            (0..config.n_trees)
                .into_par_iter()
                .map(|t| grow_tree(x, y, config, t))
                .collect()
        })
    }
    #[cfg(not(feature = "parallel"))]
    train_forest_serial(x, labels, config)
}

pub fn train_forest_serial(
    x: &[[f64; N_FEATURES]],
    labels: &[VentMode],
    config: &ForestConfig,
) -> Result<RandomForestModel> {
    train_with(x, labels, config, |y| {
        (0..config.n_trees).map(|t| grow_tree(x, y, config, t)).collect()
    })
}

fn train_with(
    x: &[[f64; N_FEATURES]],
    labels: &[VentMode],
    config: &ForestConfig,
    grow: impl FnOnce(&[u8]) -> Vec<DecisionTree>,
) -> Result<RandomForestModel> {
    config.validate()?;
    let y = check_inputs(x, labels)?;
    Ok(RandomForestModel {
        format_version: FORMAT_VERSION,
        config: *config,
        features: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        classes: CLASSES.to_vec(),
        trees: grow(&y),
    })
}

fn grow_tree(x: &[[f64; N_FEATURES]], y: &[u8], config: &ForestConfig, tree_index: usize) -> DecisionTree {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ tree_index as u64);
    let n = x.len();
    let mut weight = vec![0u32; n];
    for _ in 0..n {
        weight[rng.random_range(0..n)] += 1;
    }
    let idx: Vec<u32> = (0..n as u32).filter(|i| weight[*i as usize] > 0).collect();
    TreeBuilder {
        x,
        y,
        weight: &weight,
        config,
        rng,
        nodes: Vec::new(),
        scratch: Vec::new(),
    }
    .build(idx)
}

struct TreeBuilder<'a> {
    x: &'a [[f64; N_FEATURES]],
    y: &'a [u8],
    weight: &'a [u32],
    config: &'a ForestConfig,
    rng: ChaCha8Rng,
    nodes: Vec<TreeNode>,
    scratch: Vec<(f64, u8, u32)>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl TreeBuilder<'_> {
    fn build(mut self, mut idx: Vec<u32>) -> DecisionTree {
        // (node slot, start, end, depth)
        let mut stack = vec![(0usize, 0usize, idx.len(), 0usize)];
        self.nodes.push(TreeNode::Leaf {
            class_counts: [0; N_CLASSES],
        });
        while let Some((slot, start, end, depth)) = stack.pop() {
            let counts = self.class_counts(&idx[start..end]);
            let split = self.best_split(&idx[start..end], &counts, depth);
            let Some(split) = split else {
                self.nodes[slot] = TreeNode::Leaf { class_counts: counts };
                continue;
            };
            let mid = partition(&mut idx[start..end], |i| self.x[i as usize][split.feature] <= split.threshold);
            let left = self.nodes.len();
            let right = left + 1;
            self.nodes.push(TreeNode::Leaf {
                class_counts: [0; N_CLASSES],
            });
            self.nodes.push(TreeNode::Leaf {
                class_counts: [0; N_CLASSES],
            });
            self.nodes[slot] = TreeNode::Split {
                feature: split.feature,
                threshold: split.threshold,
                left,
                right,
            };
            // right pushed first so the left subtree is grown first
            stack.push((right, start + mid, end, depth + 1));
            stack.push((left, start, start + mid, depth + 1));
        }
        DecisionTree { nodes: self.nodes }
    }

    fn class_counts(&self, idx: &[u32]) -> [u32; N_CLASSES] {
        let mut c = [0u32; N_CLASSES];
        for &i in idx {
            c[self.y[i as usize] as usize] += self.weight[i as usize];
        }
        c
    }

    fn best_split(&mut self, idx: &[u32], counts: &[u32; N_CLASSES], depth: usize) -> Option<SplitChoice> {
        let total: u32 = counts.iter().sum();
        let min_leaf = self.config.min_samples_leaf as u32;
        let pure = counts.iter().filter(|c| **c > 0).count() <= 1;
        if pure || total < 2 * min_leaf || self.config.max_depth.is_some_and(|d| depth >= d) {
            return None;
        }

        let mut order: [usize; N_FEATURES] = std::array::from_fn(|i| i);
        order.shuffle(&mut self.rng);

        let mut best: Option<SplitChoice> = None;
        let mut informative = 0;
        for &f in &order {
            if informative == self.config.mtry {
                break;
            }
            self.scratch.clear();
            self.scratch.extend(idx.iter().map(|&i| {
                let i = i as usize;
                (self.x[i][f], self.y[i], self.weight[i])
            }));
            self.scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (lo, hi) = (self.scratch[0].0, self.scratch[self.scratch.len() - 1].0);
            if lo == hi {
                continue;
            }
            informative += 1;

            let mut left = [0u32; N_CLASSES];
            let mut n_left = 0u32;
            for j in 0..self.scratch.len() - 1 {
                let (v, c, w) = self.scratch[j];
                left[c as usize] += w;
                n_left += w;
                let next = self.scratch[j + 1].0;
                if v == next {
                    continue;
                }
                let n_right = total - n_left;
                if n_left < min_leaf || n_right < min_leaf {
                    continue;
                }
                // maximising Σ l²/n_l + Σ r²/n_r minimises weighted Gini
                let mut score = 0.0;
                let (mut sl, mut sr) = (0.0, 0.0);
                for k in 0..N_CLASSES {
                    let l = f64::from(left[k]);
                    let r = f64::from(counts[k] - left[k]);
                    sl += l * l;
                    sr += r * r;
                }
                score += sl / f64::from(n_left) + sr / f64::from(n_right);
                if best.as_ref().is_none_or(|b| score > b.score) {
                    let mut threshold = v / 2.0 + next / 2.0;
                    if threshold >= next {
                        threshold = v;
                    }
                    best = Some(SplitChoice {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best
    }
}

/// Stable-order-agnostic in-place partition; returns the count satisfying `pred`.
fn partition(idx: &mut [u32], pred: impl Fn(u32) -> bool) -> usize {
    let mut mid = 0;
    for j in 0..idx.len() {
        if pred(idx[j]) {
            idx.swap(mid, j);
            mid += 1;
        }
    }
    mid
}

pub fn serialize_model<W: Write>(model: &RandomForestModel, mut sink: W) -> Result<()> {
    serde_json::to_writer(&mut sink, model)?;
    sink.write_all(b"\n")?;
    sink.flush()?;
    Ok(())
}

pub fn deserialize_model<R: Read>(source: R) -> Result<RandomForestModel> {
    let value: serde_json::Value =
        serde_json::from_reader(source).map_err(|e| Error::ModelFormat(e.to_string()))?;
    let found = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::ModelFormat("missing format_version".into()))?;
    if found != u64::from(FORMAT_VERSION) {
        return Err(Error::IncompatibleModel {
            found: u32::try_from(found).unwrap_or(u32::MAX),
            expected: FORMAT_VERSION,
        });
    }
    let model: RandomForestModel =
        serde_json::from_value(value).map_err(|e| Error::ModelFormat(e.to_string()))?;
    model.config.validate()?;
    if model.classes != CLASSES {
        return Err(Error::ModelFormat(format!("unexpected class list {:?}", model.classes)));
    }
    if model.features.len() != N_FEATURES {
        return Err(Error::ModelFormat(format!("expected {N_FEATURES} features")));
    }
    if model.trees.len() != model.config.n_trees {
        return Err(Error::ModelFormat(format!(
            "{} trees stored but config says {}",
            model.trees.len(),
            model.config.n_trees
        )));
    }
    for t in &model.trees {
        t.validate()?;
    }
    Ok(model)
}
