//! The task model whose recommendations and explanations are shown to
//! decision makers: a bootstrap random forest with Gini splits, plus a
//! logistic model used as an analytic reference in explainer tests.

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::rng;

/// Anything that maps a feature vector to P(y = +1).
pub trait ProbabilisticModel: Sync {
    fn feature_dim(&self) -> usize;

    /// Probability of +1 without input validation.
    fn prob(&self, x: &[f64]) -> f64;

    /// Validated prediction; the label follows [`Label::from_prob`].
    fn predict(&self, x: &[f64]) -> Result<(Label, f64)> {
        check_dim("model input", x.len(), self.feature_dim())?;
        check_finite("model input", x)?;
        let p = self.prob(x);
        Ok((Label::from_prob(p), p))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticModel {
    pub fn new(weights: Vec<f64>, bias: f64) -> Result<Self> {
        check_finite("logistic weights", &weights)?;
        check_finite("logistic bias", &[bias])?;
        Ok(LogisticModel { weights, bias })
    }

    /// Pre-sigmoid linear score.
    pub fn score(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

impl ProbabilisticModel for LogisticModel {
    fn feature_dim(&self) -> usize {
        self.weights.len()
    }

    fn prob(&self, x: &[f64]) -> f64 {
        sigmoid(self.score(x))
    }
}

/// Tree node stored in a flat array; children are indices into the same array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        negatives: usize,
        positives: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    /// Majority vote of the leaf reached by `x`; ties vote +1.
    pub fn vote(&self, x: &[f64]) -> Label {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf {
                    negatives,
                    positives,
                } => {
                    return if positives >= negatives {
                        Label::Positive
                    } else {
                        Label::Negative
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub num_trees: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            num_trees: 100,
            max_depth: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<DecisionTree>,
    pub num_trees: usize,
    pub max_depth: usize,
    pub feature_dim: usize,
    pub train_seed: u64,
}

impl ProbabilisticModel for ForestModel {
    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Fraction of trees voting +1.
    fn prob(&self, x: &[f64]) -> f64 {
        let pos = self
            .trees
            .iter()
            .filter(|t| t.vote(x) == Label::Positive)
            .count();
        pos as f64 / self.trees.len() as f64
    }
}

impl ForestModel {
    pub fn validate(&self) -> Result<()> {
        if self.trees.is_empty() || self.trees.len() != self.num_trees {
            return Err(Error::contract("forest tree count mismatch"));
        }
        for tree in &self.trees {
            for node in &tree.nodes {
                match node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        if *feature >= self.feature_dim
                            || !threshold.is_finite()
                            || *left >= tree.nodes.len()
                            || *right >= tree.nodes.len()
                        {
                            return Err(Error::contract("malformed split node"));
                        }
                    }
                    Node::Leaf {
                        negatives,
                        positives,
                    } => {
                        if negatives + positives == 0 {
                            return Err(Error::contract("empty leaf"));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Size of the random feature subset considered at each split.
pub fn features_per_split(n: usize) -> usize {
    ((n as f64).sqrt().ceil() as usize).clamp(1, n.max(1))
}

struct TreeBuilder<'a> {
    xs: &'a [Vec<f64>],
    ys: &'a [Label],
    max_depth: usize,
    mtry: usize,
    nodes: Vec<Node>,
}

fn gini(neg: usize, pos: usize) -> f64 {
    let total = (neg + pos) as f64;
    if total == 0.0 {
        return 0.0;
    }
    let p = pos as f64 / total;
    2.0 * p * (1.0 - p)
}

fn counts(ys: &[Label], idx: &[usize]) -> (usize, usize) {
    let pos = idx.iter().filter(|&&i| ys[i] == Label::Positive).count();
    (idx.len() - pos, pos)
}

impl TreeBuilder<'_> {
    fn build(&mut self, idx: Vec<usize>, depth: usize, rng: &mut rng::Rng) -> usize {
        let (neg, pos) = counts(self.ys, &idx);
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf {
            negatives: neg,
            positives: pos,
        });
        if depth >= self.max_depth || neg == 0 || pos == 0 || idx.len() < 2 {
            return me;
        }
        let Some((feature, threshold)) = self.best_split(&idx, neg, pos, rng) else {
            return me;
        };
        let (l, r): (Vec<usize>, Vec<usize>) =
            idx.into_iter().partition(|&i| self.xs[i][feature] <= threshold);
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[me] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }

    fn best_split(
        &self,
        idx: &[usize],
        neg: usize,
        pos: usize,
        rng: &mut rng::Rng,
    ) -> Option<(usize, f64)> {
        let n = self.xs[0].len();
        let parent = gini(neg, pos);
        let total = idx.len() as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut candidates = sample(rng, n, self.mtry).into_vec();
        candidates.sort_unstable();
        let mut order = idx.to_vec();
        for f in candidates {
            order.sort_by(|&a, &b| self.xs[a][f].total_cmp(&self.xs[b][f]));
            let (mut ln, mut lp) = (0usize, 0usize);
            for k in 0..order.len() - 1 {
                match self.ys[order[k]] {
                    Label::Positive => lp += 1,
                    Label::Negative => ln += 1,
                }
                let here = self.xs[order[k]][f];
                let next = self.xs[order[k + 1]][f];
                if here == next {
                    continue;
                }
                let left = (ln + lp) as f64;
                let impurity = (left * gini(ln, lp)
                    + (total - left) * gini(neg - ln, pos - lp))
                    / total;
                let gain = parent - impurity;
                if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, 0.5 * (here + next)));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

fn train_tree(
    xs: &[Vec<f64>],
    ys: &[Label],
    max_depth: usize,
    seed: u64,
) -> DecisionTree {
    let mut rng = rng::rng_from(seed);
    let m = xs.len();
    let boot: Vec<usize> = (0..m).map(|_| rng.random_range(0..m)).collect();
    let mut builder = TreeBuilder {
        xs,
        ys,
        max_depth,
        mtry: features_per_split(xs[0].len()),
        nodes: Vec::new(),
    };
    builder.build(boot, 0, &mut rng);
    DecisionTree {
        nodes: builder.nodes,
    }
}

/// Trains a bootstrap forest. Each tree draws from its own derived seed, so
/// the result does not depend on the rayon thread count.
pub fn train_forest(train: &Dataset, config: &ForestConfig) -> Result<ForestModel> {
    if train.is_empty() {
        return Err(Error::contract("cannot train a forest on an empty dataset"));
    }
    if config.num_trees == 0 || config.max_depth == 0 {
        return Err(Error::contract("num_trees and max_depth must be at least 1"));
    }
    let xs = train.feature_matrix();
    let ys: Vec<Label> = train.instances.iter().map(|i| i.label).collect();
    let (neg, pos) = counts(&ys, &(0..ys.len()).collect::<Vec<_>>());
    if neg == 0 || pos == 0 {
        log::warn!("single-class training set; the forest will predict a constant");
    }
    let trees = (0..config.num_trees)
        .into_par_iter()
        .map(|t| {
            train_tree(
                &xs,
                &ys,
                config.max_depth,
                rng::derive_seed(config.seed, &[rng::tag("tree"), t as u64]),
            )
        })
        .collect();
    Ok(ForestModel {
        trees,
        num_trees: config.num_trees,
        max_depth: config.max_depth,
        feature_dim: train.n,
        train_seed: config.seed,
    })
}

/// Fraction of instances whose predicted label equals the ground truth.
pub fn accuracy<M: ProbabilisticModel + ?Sized>(model: &M, data: &Dataset) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let hits = data
        .instances
        .iter()
        .filter(|i| Label::from_prob(model.prob(&i.features)) == i.label)
        .count();
    hits as f64 / data.len() as f64
}

/// Ridge-regularized logistic regression by Newton iterations. Used to
/// recover a reference linear rule from loaded data.
pub fn fit_logistic(data: &Dataset, ridge: f64, iterations: usize) -> Result<LogisticModel> {
    if data.is_empty() {
        return Err(Error::contract("cannot fit a logistic model on an empty dataset"));
    }
    let n = data.n;
    let p = n + 1;
    let mut beta = vec![0.0; p];
    for _ in 0..iterations {
        let mut a = vec![vec![0.0; p + 1]; p];
        for inst in &data.instances {
            let xi: Vec<f64> = std::iter::once(1.0).chain(inst.features.iter().copied()).collect();
            let z: f64 = beta.iter().zip(&xi).map(|(b, v)| b * v).sum();
            let mu = sigmoid(z);
            let w = (mu * (1.0 - mu)).max(1e-10);
            let resid = inst.label.as_target() - mu;
            for r in 0..p {
                for c in 0..p {
                    a[r][c] += w * xi[r] * xi[c];
                }
                a[r][p] += xi[r] * resid;
            }
        }
        for (r, row) in a.iter_mut().enumerate() {
            row[r] += ridge;
            if r > 0 {
                row[p] -= ridge * beta[r];
            }
        }
        let step = crate::explain::solve_augmented(a)
            .ok_or_else(|| Error::contract("logistic Newton system is singular"))?;
        let mut biggest: f64 = 0.0;
        for (b, s) in beta.iter_mut().zip(&step) {
            *b += s;
            biggest = biggest.max(s.abs());
        }
        if biggest < 1e-10 {
            break;
        }
    }
    LogisticModel::new(beta[1..].to_vec(), beta[0])
}
