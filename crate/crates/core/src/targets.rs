//! Target decisions for manipulation: group-biased adversarial targets and
//! benign targets from a human–AI combination model.

use serde::{Deserialize, Serialize};

use crate::data::{GroupRoles, Label, TaskInstance};
use crate::error::{Error, Result};

/// +1 for the role's positive group, −1 for its negative group.
pub fn adversarial_target(instance: &TaskInstance, roles: &GroupRoles) -> Result<Label> {
    if instance.group == roles.positive_group {
        Ok(Label::Positive)
    } else if instance.group == roles.negative_group {
        Ok(Label::Negative)
    } else {
        Err(Error::Vocabulary {
            value: instance.group.clone(),
            allowed: vec![roles.positive_group.clone(), roles.negative_group.clone()],
        })
    }
}

/// One calibration row: ground truth, independent human decision, AI decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub truth: Label,
    pub human: Label,
    pub ai: Label,
}

/// Naive-Bayes combination of an independent human decision and the AI
/// recommendation. Confusion rows are indexed `[truth][decision]` with
/// index 0 for −1 and 1 for +1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombineModel {
    pub prior_positive: f64,
    pub human_confusion: [[f64; 2]; 2],
    pub model_confusion: [[f64; 2]; 2],
    pub smoothing: f64,
}

fn idx(l: Label) -> usize {
    match l {
        Label::Negative => 0,
        Label::Positive => 1,
    }
}

impl CombineModel {
    pub fn validate(&self) -> Result<()> {
        let ok_p = |p: f64| p > 0.0 && p < 1.0;
        if !ok_p(self.prior_positive) {
            return Err(Error::contract("combiner prior must lie in (0, 1)"));
        }
        for m in [&self.human_confusion, &self.model_confusion] {
            for row in m {
                if !row.iter().all(|&p| ok_p(p)) || ((row[0] + row[1]) - 1.0).abs() > 1e-9 {
                    return Err(Error::contract("combiner confusion rows must be stochastic"));
                }
            }
        }
        Ok(())
    }

    /// Unnormalized posterior weight of `truth`.
    fn joint(&self, truth: Label, human: Label, ai: Label) -> f64 {
        let prior = match truth {
            Label::Positive => self.prior_positive,
            Label::Negative => 1.0 - self.prior_positive,
        };
        prior * self.human_confusion[idx(truth)][idx(human)] * self.model_confusion[idx(truth)][idx(ai)]
    }

    pub fn posterior_positive(&self, human: Label, ai: Label) -> f64 {
        let pos = self.joint(Label::Positive, human, ai);
        let neg = self.joint(Label::Negative, human, ai);
        pos / (pos + neg)
    }
}

/// Estimates the prior and both confusion matrices with add-α smoothing.
pub fn fit_combiner(rows: &[CalibrationRow], alpha: f64) -> Result<CombineModel> {
    if rows.is_empty() {
        return Err(Error::contract("combiner calibration set is empty"));
    }
    if !(alpha > 0.0) {
        return Err(Error::contract("combiner smoothing must be positive"));
    }
    let mut human = [[0.0; 2]; 2];
    let mut model = [[0.0; 2]; 2];
    let mut class = [0.0; 2];
    for r in rows {
        class[idx(r.truth)] += 1.0;
        human[idx(r.truth)][idx(r.human)] += 1.0;
        model[idx(r.truth)][idx(r.ai)] += 1.0;
    }
    let smooth = |counts: [[f64; 2]; 2]| {
        let mut out = [[0.0; 2]; 2];
        for t in 0..2 {
            for d in 0..2 {
                out[t][d] = (counts[t][d] + alpha) / (class[t] + 2.0 * alpha);
            }
        }
        out
    };
    let cm = CombineModel {
        prior_positive: (class[1] + alpha) / (rows.len() as f64 + 2.0 * alpha),
        human_confusion: smooth(human),
        model_confusion: smooth(model),
        smoothing: alpha,
    };
    cm.validate()?;
    Ok(cm)
}

/// Posterior argmax; an exact tie resolves to the AI recommendation.
pub fn combine(cm: &CombineModel, human: Label, ai: Label) -> Label {
    let pos = cm.joint(Label::Positive, human, ai);
    let neg = cm.joint(Label::Negative, human, ai);
    if pos > neg {
        Label::Positive
    } else if neg > pos {
        Label::Negative
    } else {
        ai
    }
}

/// Log-odds weighted vote of two voters; ties resolve to the AI recommendation.
pub fn weighted_vote_baseline(human: Label, ai: Label, human_acc: f64, model_acc: f64) -> Result<Label> {
    for a in [human_acc, model_acc] {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::contract("voter accuracies must lie in (0, 1)"));
        }
    }
    let w = |a: f64| (a / (1.0 - a)).ln();
    let score = w(human_acc) * human.as_f64() + w(model_acc) * ai.as_f64();
    Ok(if score > 0.0 {
        Label::Positive
    } else if score < 0.0 {
        Label::Negative
    } else {
        ai
    })
}
