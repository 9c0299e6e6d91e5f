//! Gradient search for an explanation that drives the behavior model toward
//! a target decision while its attribution sum keeps supporting the AI's
//! recommendation.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::behavior::{bce_from_logit, encode_raw, BehaviorModel};
use crate::data::{Explanation, ExplanationKind, Label};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::model::sigmoid;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ManipulationConfig {
    pub step_size: f64,
    pub tradeoff: f64,
    pub threshold: f64,
    pub max_rounds: usize,
    pub restarts: usize,
    pub init_low: f64,
    pub init_high: f64,
    pub hinge_margin: f64,
    pub seed: u64,
}

impl Default for ManipulationConfig {
    fn default() -> Self {
        ManipulationConfig {
            step_size: 0.01,
            tradeoff: 0.01,
            threshold: 0.1,
            max_rounds: 100,
            restarts: 5,
            init_low: -1.0,
            init_high: 1.0,
            hinge_margin: 0.05,
            seed: 0,
        }
    }
}

impl ManipulationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: &str| Err(Error::config(format!("manipulation.{f}"), m));
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step_size", "must be positive");
        }
        if !(self.tradeoff >= 0.0 && self.tradeoff.is_finite()) {
            return bad("tradeoff", "must be non-negative");
        }
        if !(self.threshold > 0.0) {
            return bad("threshold", "must be positive");
        }
        if self.max_rounds == 0 {
            return bad("max_rounds", "must be at least 1");
        }
        if self.restarts == 0 {
            return bad("restarts", "must be at least 1");
        }
        if !(self.init_low < self.init_high) || !self.init_low.is_finite() || !self.init_high.is_finite() {
            return bad("init_low", "must be finite and below init_high");
        }
        if !(self.hinge_margin >= 0.0) {
            return bad("hinge_margin", "must be non-negative");
        }
        Ok(())
    }
}

/// 0 when the sign of the attribution sum equals the recommendation, 1
/// otherwise. A zero sum supports neither label and counts as inconsistent.
pub fn consistency_loss(attributions: &[f64], ai_label: Label) -> u8 {
    let s: f64 = attributions.iter().sum();
    let consistent = match ai_label {
        Label::Positive => s > 0.0,
        Label::Negative => s < 0.0,
    };
    u8::from(!consistent)
}

/// Hinge relaxation `max(0, margin - y_m * sum(e))` of [`consistency_loss`].
pub fn consistency_surrogate(attributions: &[f64], ai_label: Label, margin: f64) -> f64 {
    let s: f64 = attributions.iter().sum();
    (margin - ai_label.as_f64() * s).max(0.0)
}

/// Subgradient of the hinge surrogate; zero on the flat side and at the kink.
fn surrogate_grad(attributions: &[f64], ai_label: Label, margin: f64) -> f64 {
    if consistency_surrogate(attributions, ai_label, margin) > 0.0 {
        -ai_label.as_f64()
    } else {
        0.0
    }
}

/// Cross-entropy of the behavior model's prediction against `target`, with
/// its gradient with respect to the explanation.
pub fn behavior_loss_and_grad(
    model: &BehaviorModel,
    x: &[f64],
    ai_label: Label,
    target: Label,
    e: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let n = x.len();
    let v = encode_raw(x, ai_label, e)?;
    let (z, gv) = model.logit_and_input_grad(&v);
    let t = target.as_target();
    let dz = sigmoid(z) - t;
    let grad = (0..n)
        .map(|i| dz * (gv[n + 1 + i] + gv[2 * n + 1 + i] * x[i]))
        .collect();
    Ok((bce_from_logit(z, t), grad))
}

/// Composite objective `L_behavior + λ · surrogate` and its gradient.
pub fn objective_and_grad(
    model: &BehaviorModel,
    x: &[f64],
    ai_label: Label,
    target: Label,
    e: &[f64],
    config: &ManipulationConfig,
) -> Result<(f64, Vec<f64>)> {
    let (loss, mut grad) = behavior_loss_and_grad(model, x, ai_label, target, e)?;
    let sg = config.tradeoff * surrogate_grad(e, ai_label, config.hinge_margin);
    grad.iter_mut().for_each(|g| *g += sg);
    let obj = loss + config.tradeoff * consistency_surrogate(e, ai_label, config.hinge_margin);
    Ok((obj, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartOutcome {
    pub explanation: Vec<f64>,
    /// Behavior loss at the start of each round.
    pub loss_trace: Vec<f64>,
    pub rounds_used: usize,
    pub final_loss: f64,
    pub converged: bool,
    pub feasible: bool,
    pub aborted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulationResult {
    pub explanation: Explanation,
    /// Exact consistency check on the returned explanation.
    pub feasible: bool,
    /// Behavior loss of the pooled explanation before display rescaling.
    pub final_behavior_loss: f64,
    /// Behavior loss of the returned (rescaled) explanation.
    pub display_behavior_loss: f64,
    pub restarts_feasible: usize,
    pub restarts_converged: usize,
    pub restarts: Vec<RestartOutcome>,
}

impl ManipulationResult {
    pub fn rounds_used(&self) -> usize {
        self.restarts.iter().map(|r| r.rounds_used).sum()
    }
}

fn run_restart(
    model: &BehaviorModel,
    x: &[f64],
    ai_label: Label,
    target: Label,
    config: &ManipulationConfig,
    restart: usize,
) -> Result<RestartOutcome> {
    let n = x.len();
    let mut r = rng::derived_rng(config.seed, &[rng::tag("restart"), restart as u64]);
    let mut e: Vec<f64> = (0..n)
        .map(|_| r.random_range(config.init_low..config.init_high))
        .collect();
    let mut trace = Vec::with_capacity(config.max_rounds);
    let mut converged = false;
    let mut prev_obj: Option<(f64, bool)> = None;
    for _ in 0..config.max_rounds {
        let (loss, _) = behavior_loss_and_grad(model, x, ai_label, target, &e)?;
        let (obj, grad) = objective_and_grad(model, x, ai_label, target, &e, config)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Optimization(format!(
                "non-finite gradient in restart {restart}"
            )));
        }
        let inactive = consistency_surrogate(&e, ai_label, config.hinge_margin) == 0.0;
        if let Some((p, was_inactive)) = prev_obj {
            if inactive && was_inactive && obj > p + 1e-6 {
                log::warn!(
                    "objective rose from {p} to {obj} in restart {restart}; step size {} may be too large",
                    config.step_size
                );
            }
        }
        prev_obj = Some((obj, inactive));
        trace.push(loss);
        if loss < config.threshold {
            converged = true;
            break;
        }
        for (ei, g) in e.iter_mut().zip(&grad) {
            *ei -= config.step_size * g;
        }
    }
    let (final_loss, _) = behavior_loss_and_grad(model, x, ai_label, target, &e)?;
    Ok(RestartOutcome {
        feasible: consistency_loss(&e, ai_label) == 0,
        rounds_used: trace.len(),
        loss_trace: trace,
        final_loss,
        converged,
        explanation: e,
        aborted: false,
    })
}

/// Runs `config.restarts` independent descents from uniform random starts,
/// averages the feasible outputs and rescales the average to max-abs 1.
/// When no restart is feasible the lowest-loss output is returned with
/// `feasible = false`.
pub fn manipulate(
    model: &BehaviorModel,
    x: &[f64],
    ai_label: Label,
    target: Label,
    config: &ManipulationConfig,
) -> Result<ManipulationResult> {
    config.validate()?;
    check_dim("manipulation input", crate::behavior::encoded_dim(x.len()), model.input_dim)?;
    check_finite("manipulation input", x)?;

    let outcomes: Vec<RestartOutcome> = (0..config.restarts)
        .into_par_iter()
        .map(|k| match run_restart(model, x, ai_label, target, config, k) {
            Ok(o) => o,
            Err(err) => {
                log::warn!("restart {k} aborted: {err}");
                RestartOutcome {
                    explanation: Vec::new(),
                    loss_trace: Vec::new(),
                    rounds_used: 0,
                    final_loss: f64::INFINITY,
                    converged: false,
                    feasible: false,
                    aborted: true,
                }
            }
        })
        .collect();
    if outcomes.iter().all(|o| o.aborted) {
        return Err(Error::Optimization("every restart was aborted".into()));
    }

    let feasible: Vec<&RestartOutcome> = outcomes.iter().filter(|o| o.feasible).collect();
    let pooled: Vec<f64> = if feasible.is_empty() {
        outcomes
            .iter()
            .filter(|o| !o.aborted)
            .min_by(|a, b| a.final_loss.total_cmp(&b.final_loss))
            .map(|o| o.explanation.clone())
            .unwrap_or_default()
    } else {
        let mut mean = vec![0.0; x.len()];
        for o in &feasible {
            for (m, v) in mean.iter_mut().zip(&o.explanation) {
                *m += v;
            }
        }
        let k = feasible.len() as f64;
        mean.iter_mut().for_each(|m| *m /= k);
        mean
    };
    let (final_behavior_loss, _) = behavior_loss_and_grad(model, x, ai_label, target, &pooled)?;
    let display = Explanation::new(pooled, ExplanationKind::Manipulated)?.rescaled_max_abs();
    let (display_behavior_loss, _) =
        behavior_loss_and_grad(model, x, ai_label, target, &display.attributions)?;
    Ok(ManipulationResult {
        feasible: consistency_loss(&display.attributions, ai_label) == 0,
        explanation: display,
        final_behavior_loss,
        display_behavior_loss,
        restarts_feasible: feasible.len(),
        restarts_converged: outcomes.iter().filter(|o| o.converged).count(),
        restarts: outcomes,
    })
}

/// A behavior model whose logit is `gain · Σ x_i e_i`, built from two
/// mirrored ReLU units reading the `x ⊙ e` block. Used as an analytic
/// target for the optimizer.
pub fn planted_model(n: usize, gain: f64) -> BehaviorModel {
    let mut m = BehaviorModel::zeros(n, 2);
    let d = m.input_dim;
    for i in 0..n {
        m.w1[2 * n + 1 + i] = 1.0;
        m.w1[d + 2 * n + 1 + i] = -1.0;
    }
    m.w2 = vec![gain, -gain];
    m
}
