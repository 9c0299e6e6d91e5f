//! Group fairness and reliance metrics, confidence intervals and a
//! permutation test for comparing conditions.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{GroupRoles, Label};
use crate::error::{Error, Result};
use crate::rng;

/// One decision with everything needed to score it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub truth: Label,
    pub ai: Label,
    pub human: Label,
    pub group: String,
}

/// A rate that may be undefined for lack of a denominator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rate {
    Defined(f64),
    Undefined(String),
}

impl Rate {
    pub fn value(&self) -> Option<f64> {
        match self {
            Rate::Defined(v) => Some(*v),
            Rate::Undefined(_) => None,
        }
    }

    fn ratio(num: usize, den: usize, reason: impl FnOnce() -> String) -> Rate {
        if den == 0 {
            Rate::Undefined(reason())
        } else {
            Rate::Defined(num as f64 / den as f64)
        }
    }

    fn minus(&self, other: &Rate) -> Rate {
        match (self, other) {
            (Rate::Defined(a), Rate::Defined(b)) => Rate::Defined(a - b),
            (Rate::Undefined(r), _) | (_, Rate::Undefined(r)) => Rate::Undefined(r.clone()),
        }
    }
}

/// False positive and false negative rates of the human decisions within `group`.
pub fn fpr_fnr(decisions: &[Decision], group: &str) -> (Rate, Rate) {
    let (mut fp, mut tn, mut fneg, mut tp) = (0, 0, 0, 0);
    for d in decisions.iter().filter(|d| d.group == group) {
        match (d.truth, d.human) {
            (Label::Negative, Label::Positive) => fp += 1,
            (Label::Negative, Label::Negative) => tn += 1,
            (Label::Positive, Label::Negative) => fneg += 1,
            (Label::Positive, Label::Positive) => tp += 1,
        }
    }
    (
        Rate::ratio(fp, fp + tn, || format!("no negative instances in group `{group}`")),
        Rate::ratio(fneg, fneg + tp, || format!("no positive instances in group `{group}`")),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessDiff {
    pub fprd: Rate,
    pub fnrd: Rate,
}

/// `rate(negative_group) − rate(positive_group)` for FPR and FNR.
pub fn fairness_diff(decisions: &[Decision], roles: &GroupRoles) -> FairnessDiff {
    let (fpr_n, fnr_n) = fpr_fnr(decisions, &roles.negative_group);
    let (fpr_p, fnr_p) = fpr_fnr(decisions, &roles.positive_group);
    FairnessDiff {
        fprd: fpr_n.minus(&fpr_p),
        fnrd: fnr_n.minus(&fnr_p),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reliance {
    pub accuracy: f64,
    /// Agreement with the AI among tasks where the AI was wrong.
    pub overreliance: Rate,
    /// Disagreement with the AI among tasks where the AI was right.
    pub underreliance: Rate,
}

pub fn reliance(decisions: &[Decision]) -> Result<Reliance> {
    if decisions.is_empty() {
        return Err(Error::contract("reliance needs at least one decision"));
    }
    let correct = decisions.iter().filter(|d| d.human == d.truth).count();
    let ai_wrong: Vec<&Decision> = decisions.iter().filter(|d| d.ai != d.truth).collect();
    let ai_right: Vec<&Decision> = decisions.iter().filter(|d| d.ai == d.truth).collect();
    Ok(Reliance {
        accuracy: correct as f64 / decisions.len() as f64,
        overreliance: Rate::ratio(
            ai_wrong.iter().filter(|d| d.human == d.ai).count(),
            ai_wrong.len(),
            || "the AI was never wrong".into(),
        ),
        underreliance: Rate::ratio(
            ai_right.iter().filter(|d| d.human != d.ai).count(),
            ai_right.len(),
            || "the AI was never right".into(),
        ),
    })
}

/// Mean with a 95% normal-approximation confidence interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub count: usize,
}

pub fn mean_ci(values: &[f64]) -> Option<MeanCi> {
    if values.is_empty() {
        return None;
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let half = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
        1.96 * (var / k).sqrt()
    } else {
        0.0
    };
    Some(MeanCi {
        mean,
        ci_low: mean - half,
        ci_high: mean + half,
        count: values.len(),
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Two-sided permutation p-value for the difference in means, with the
/// `(1 + hits) / (1 + num_perms)` correction.
pub fn permutation_test(a: &[f64], b: &[f64], num_perms: usize, seed: u64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::contract("permutation test needs two nonempty samples"));
    }
    if num_perms < 1000 {
        return Err(Error::contract("permutation test needs at least 1000 permutations"));
    }
    let observed = (mean(a) - mean(b)).abs();
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut r = rng::derived_rng(seed, &[rng::tag("permutation")]);
    let tol = 1e-12 * observed.max(1.0);
    let mut hits = 0usize;
    for _ in 0..num_perms {
        pooled.shuffle(&mut r);
        let (pa, pb) = pooled.split_at(a.len());
        if (mean(pa) - mean(pb)).abs() >= observed - tol {
            hits += 1;
        }
    }
    Ok((1 + hits) as f64 / (1 + num_perms) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn d(truth: i64, ai: i64, human: i64, group: &str) -> Decision {
        Decision {
            truth: Label::try_from(truth).unwrap(),
            ai: Label::try_from(ai).unwrap(),
            human: Label::try_from(human).unwrap(),
            group: group.into(),
        }
    }

    #[test]
    fn fpr_examples() {
        let rows = vec![
            d(-1, 1, 1, "f"),
            d(-1, 1, 1, "f"),
            d(-1, -1, -1, "f"),
            d(-1, -1, -1, "f"),
            d(1, 1, 1, "f"),
        ];
        let (fpr, fnr) = fpr_fnr(&rows, "f");
        assert_eq!(fpr, Rate::Defined(0.5));
        assert_eq!(fnr, Rate::Defined(0.0));
        let pos_only = vec![d(1, 1, 1, "m")];
        assert!(matches!(fpr_fnr(&pos_only, "m").0, Rate::Undefined(_)));
        let perfect = vec![d(1, 1, 1, "g"), d(-1, 1, -1, "g")];
        assert_eq!(fpr_fnr(&perfect, "g"), (Rate::Defined(0.0), Rate::Defined(0.0)));
    }

    #[test]
    fn fairness_order_and_antisymmetry() {
        // female FPR 0.5, male FPR 0.25
        let mut rows = vec![d(-1, 1, 1, "female"), d(-1, 1, -1, "female")];
        rows.extend([d(-1, 1, 1, "male"), d(-1, 1, -1, "male"), d(-1, 1, -1, "male"), d(-1, 1, -1, "male")]);
        rows.extend([d(1, 1, 1, "female"), d(1, 1, 1, "male")]);
        let roles = crate::data::TaskKind::Census.default_roles();
        let fd = fairness_diff(&rows, &roles);
        assert_eq!(fd.fprd, Rate::Defined(0.25));
        assert_eq!(fd.fnrd, Rate::Defined(0.0));
        let swapped = GroupRoles {
            positive_group: roles.negative_group.clone(),
            negative_group: roles.positive_group.clone(),
        };
        assert_eq!(fairness_diff(&rows, &swapped).fprd, Rate::Defined(-0.25));
    }

    #[test]
    fn reliance_examples() {
        let rows = vec![d(1, 1, 1, "a"), d(-1, 1, 1, "a"), d(-1, -1, -1, "a")];
        let r = reliance(&rows).unwrap();
        assert_eq!(r.overreliance, Rate::Defined(1.0));
        assert_eq!(r.underreliance, Rate::Defined(0.0));
        let perfect_human = vec![d(1, 1, 1, "a"), d(-1, 1, -1, "a"), d(1, -1, 1, "a")];
        let r = reliance(&perfect_human).unwrap();
        assert_eq!(r.overreliance, Rate::Defined(0.0));
        assert_eq!(r.underreliance, Rate::Defined(0.0));
        assert_eq!(r.accuracy, 1.0);
        let ai_always_right = vec![d(1, 1, -1, "a")];
        assert!(matches!(reliance(&ai_always_right).unwrap().overreliance, Rate::Undefined(_)));
        assert!(reliance(&[]).is_err());
    }

    #[test]
    fn permutation_examples() {
        let a = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(permutation_test(&a, &a, 2000, 1).unwrap(), 1.0);
        let mut r = rng::rng_from(5);
        let lo: Vec<f64> = (0..30).map(|_| r.random::<f64>() * 0.1).collect();
        let hi: Vec<f64> = (0..30).map(|_| 1.0 + r.random::<f64>() * 0.1).collect();
        let p = permutation_test(&lo, &hi, 10_000, 3).unwrap();
        assert!(p <= 0.001, "p = {p}");
        assert_eq!(p, permutation_test(&lo, &hi, 10_000, 3).unwrap());
        assert!(permutation_test(&a, &a, 999, 1).is_err());
    }

    #[test]
    fn ci_brackets_mean() {
        let m = mean_ci(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.mean, 2.0);
        assert!((m.ci_high - m.mean - 1.96 * (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!(mean_ci(&[]).is_none());
    }
}
