//! Synthetic task suites shaped after the four decision tasks (income,
//! recidivism, media bias, toxicity). Features are already in [0, 1]; labels
//! come from a known linear rule with a task-specific flip rate.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label, Normalization, TaskInstance, TaskKind};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSuite {
    pub kind: TaskKind,
    pub feature_names: Vec<String>,
    /// Weights of the label rule `sign(w · (x − 0.5))`.
    pub weights: Vec<f64>,
    /// Probability that a label is flipped after the rule is applied.
    pub flip_rate: f64,
    /// Index of the binary feature that encodes the group, if the group is
    /// visible in `x`. Value 1 means the first vocabulary entry.
    pub group_feature: Option<usize>,
}

impl TaskSuite {
    pub fn for_kind(kind: TaskKind) -> TaskSuite {
        let (names, weights, flip, group): (&[&str], &[f64], f64, Option<usize>) = match kind {
            TaskKind::Census => (
                &["male", "age", "education", "marital", "occupation", "workclass", "hours"],
                &[0.8, 1.2, 1.8, 1.0, 0.8, -0.5, 1.1],
                0.17,
                Some(0),
            ),
            TaskKind::Recidivism => (
                &[
                    "black",
                    "sex",
                    "age",
                    "priors",
                    "juv_misd",
                    "juv_fel",
                    "charge_issue",
                    "charge_degree",
                ],
                &[0.4, 0.5, -1.4, 1.8, 0.7, 0.9, 0.6, 0.8],
                0.33,
                Some(0),
            ),
            TaskKind::Bias => (
                &["enc0", "enc1", "enc2", "enc3", "enc4", "enc5", "enc6", "enc7"],
                &[1.5, -1.2, 1.0, 0.8, -0.9, 1.3, 0.6, -0.7],
                0.15,
                None,
            ),
            TaskKind::Toxicity => (
                &["enc0", "enc1", "enc2", "enc3", "enc4", "enc5", "enc6", "enc7"],
                &[2.0, 1.6, -1.4, 1.2, 1.0, -0.8, 1.5, 0.9],
                0.09,
                None,
            ),
            TaskKind::Synthetic => (
                &["f0", "f1", "f2", "f3", "f4", "f5"],
                &[1.5, -1.0, 1.2, 0.8, -0.6, 1.0],
                0.15,
                Some(0),
            ),
        };
        TaskSuite {
            kind,
            feature_names: names.iter().map(|s| s.to_string()).collect(),
            weights: weights.to_vec(),
            flip_rate: flip,
            group_feature: group,
        }
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    /// Noise-free label rule.
    pub fn clean_label(&self, x: &[f64]) -> Label {
        Label::from_score(self.weights.iter().zip(x).map(|(w, v)| w * (v - 0.5)).sum())
    }

    pub fn generate(&self, count: usize, seed: u64) -> Result<Dataset> {
        if self.feature_names.len() != self.weights.len() {
            return Err(Error::contract("task suite names and weights differ in length"));
        }
        if !(0.0..=0.5).contains(&self.flip_rate) {
            return Err(Error::contract("flip_rate must lie in [0, 0.5]"));
        }
        let vocab = self.kind.default_vocab();
        let mut r = rng::derived_rng(seed, &[rng::tag("synth"), rng::tag(self.kind.name())]);
        let n = self.n();
        let instances = (0..count)
            .map(|i| {
                let first_group = r.random_bool(0.5);
                let mut x: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
                if let Some(g) = self.group_feature {
                    x[g] = if first_group { 1.0 } else { 0.0 };
                }
                let mut label = self.clean_label(&x);
                if r.random_bool(self.flip_rate) {
                    label = label.flip();
                }
                TaskInstance {
                    id: format!("{}-{i:05}", self.kind.name()),
                    features: x,
                    label,
                    group: vocab[if first_group { 0 } else { 1 }].clone(),
                    task_kind: self.kind,
                }
            })
            .collect();
        let mut ds = Dataset::new(instances, n, vocab, self.kind, self.feature_names.clone())?;
        ds.normalization = Some(Normalization {
            columns: self.feature_names.clone(),
            mins: vec![0.0; n],
            maxs: vec![1.0; n],
        });
        Ok(ds)
    }
}
