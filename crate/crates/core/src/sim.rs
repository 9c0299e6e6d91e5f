//! Simulated decision makers. Each one has a private linear decision rule,
//! a baseline propensity to adopt the AI recommendation, and a sensitivity
//! to how plausible the shown explanation looks against its own rule.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{BehaviorRecord, Explanation, ExplanationKind, Label, TaskInstance};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::explain::{augment, AugmentConfig};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDM {
    pub id: String,
    pub own_weights: Vec<f64>,
    /// Added to `own_weights · x` so the private score is centered on the data.
    pub offset: f64,
    pub noise_sd: f64,
    pub anchor_weight: f64,
    pub explanation_sensitivity: f64,
    pub attention_k: usize,
    pub seed: u64,
}

impl SimDM {
    pub fn validate(&self) -> Result<()> {
        check_finite("dm weights", &self.own_weights)?;
        check_finite(
            "dm parameters",
            &[self.offset, self.noise_sd, self.anchor_weight, self.explanation_sensitivity],
        )?;
        if !(0.0..=1.0).contains(&self.anchor_weight) {
            return Err(Error::contract("anchor_weight must lie in [0, 1]"));
        }
        if self.noise_sd < 0.0 || self.explanation_sensitivity < 0.0 {
            return Err(Error::contract("noise_sd and sensitivity must be non-negative"));
        }
        if self.attention_k == 0 || self.attention_k > self.own_weights.len() {
            return Err(Error::contract("attention_k must lie in [1, n]"));
        }
        Ok(())
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.offset + self.own_weights.iter().zip(x).map(|(u, v)| u * v).sum::<f64>()
    }

    /// Decision without AI assistance. The noise draw is fixed by
    /// `(seed, instance id)`.
    pub fn independent_decision(&self, instance: &TaskInstance) -> Label {
        let mut r = rng::derived_rng(self.seed, &[rng::tag("independent"), rng::tag(&instance.id)]);
        let noise = if self.noise_sd > 0.0 {
            Normal::new(0.0, self.noise_sd)
                .expect("noise_sd validated")
                .sample(&mut r)
        } else {
            0.0
        };
        Label::from_score(self.score(&instance.features) + noise)
    }

    /// Agreement in [0, 1] between the explanation and the private weights on
    /// the `attention_k` most salient attributions. 0.5 when either side is zero.
    pub fn plausibility(&self, e: &[f64]) -> f64 {
        let mut order: Vec<usize> = (0..e.len()).collect();
        order.sort_by(|&a, &b| e[b].abs().total_cmp(&e[a].abs()).then(a.cmp(&b)));
        let top = &order[..self.attention_k.min(e.len())];
        let (mut dot, mut ne, mut nu) = (0.0, 0.0, 0.0);
        for &i in top {
            dot += e[i] * self.own_weights[i];
            ne += e[i] * e[i];
            nu += self.own_weights[i] * self.own_weights[i];
        }
        if ne == 0.0 || nu == 0.0 {
            return 0.5;
        }
        let cos = (dot / (ne * nu).sqrt()).clamp(-1.0, 1.0);
        0.5 * (cos + 1.0)
    }

    pub fn adoption_probability(&self, plausibility: f64) -> f64 {
        (self.anchor_weight + self.explanation_sensitivity * (plausibility - 0.5)).clamp(0.0, 1.0)
    }

    /// Decision after seeing the AI recommendation and an explanation: adopt
    /// `ai_label` with the adoption probability, otherwise decide alone.
    pub fn assisted_decision(&self, instance: &TaskInstance, ai_label: Label, e: &Explanation) -> Result<Label> {
        check_dim("dm explanation", e.len(), self.own_weights.len())?;
        check_dim("dm features", instance.features.len(), self.own_weights.len())?;
        let pi = self.adoption_probability(self.plausibility(&e.attributions));
        let mut r = rng::derived_rng(self.seed, &[rng::tag("adopt"), rng::tag(&instance.id)]);
        let coin: f64 = r.random();
        Ok(if coin < pi {
            ai_label
        } else {
            self.independent_decision(instance)
        })
    }
}

/// Distribution from which a population of decision makers is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub weight_distortion_sd: f64,
    pub noise_sd: f64,
    pub anchor_low: f64,
    pub anchor_high: f64,
    pub sensitivity_low: f64,
    pub sensitivity_high: f64,
    /// Defaults to ⌈n/2⌉ when absent.
    pub attention_k: Option<usize>,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            weight_distortion_sd: 0.5,
            noise_sd: 0.3,
            anchor_low: 0.2,
            anchor_high: 0.6,
            sensitivity_low: 0.5,
            sensitivity_high: 1.5,
            attention_k: None,
        }
    }
}

/// Draws `count` decision makers around `true_weights`, each centered on
/// `feature_means`.
pub fn sample_population(
    count: usize,
    true_weights: &[f64],
    feature_means: &[f64],
    config: &PopulationConfig,
    seed: u64,
    id_prefix: &str,
) -> Result<Vec<SimDM>> {
    let n = true_weights.len();
    check_dim("population feature means", feature_means.len(), n)?;
    if n == 0 {
        return Err(Error::contract("population needs at least one feature"));
    }
    if !(config.anchor_low <= config.anchor_high && config.sensitivity_low <= config.sensitivity_high) {
        return Err(Error::config("population", "low bounds must not exceed high bounds"));
    }
    let distortion = Normal::new(0.0, config.weight_distortion_sd)
        .map_err(|e| Error::config("population.weight_distortion_sd", e.to_string()))?;
    let k = config.attention_k.unwrap_or(n.div_ceil(2));
    (0..count)
        .map(|i| {
            let dm_seed = rng::derive_seed(seed, &[rng::tag(id_prefix), i as u64]);
            let mut r = rng::derived_rng(dm_seed, &[rng::tag("params")]);
            let own_weights: Vec<f64> = true_weights
                .iter()
                .map(|w| w + distortion.sample(&mut r))
                .collect();
            let offset = -own_weights
                .iter()
                .zip(feature_means)
                .map(|(u, m)| u * m)
                .sum::<f64>();
            let uniform = |r: &mut rng::Rng, lo: f64, hi: f64| if hi > lo { r.random_range(lo..hi) } else { lo };
            let anchor_weight = uniform(&mut r, config.anchor_low, config.anchor_high);
            let explanation_sensitivity = uniform(&mut r, config.sensitivity_low, config.sensitivity_high);
            let dm = SimDM {
                id: format!("{id_prefix}{i:04}"),
                own_weights,
                offset,
                noise_sd: config.noise_sd,
                anchor_weight,
                explanation_sensitivity,
                attention_k: k,
                seed: dm_seed,
            };
            dm.validate()?;
            Ok(dm)
        })
        .collect()
}

/// An instance with the AI's recommendation and its display-scaled
/// explanations precomputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedInstance {
    pub instance: TaskInstance,
    pub ai_label: Label,
    pub ai_prob: f64,
    pub shapley: Explanation,
    pub lime: Explanation,
}

/// Proportions of participants receiving each explanation kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainerMix {
    pub shapley: f64,
    pub lime: f64,
    pub augmented: f64,
}

impl Default for ExplainerMix {
    fn default() -> Self {
        ExplainerMix {
            shapley: 1.0 / 3.0,
            lime: 1.0 / 3.0,
            augmented: 1.0 / 3.0,
        }
    }
}

impl ExplainerMix {
    fn pick(&self, u: f64) -> Result<ExplanationKind> {
        let total = self.shapley + self.lime + self.augmented;
        if !(total > 0.0) || [self.shapley, self.lime, self.augmented].iter().any(|p| *p < 0.0) {
            return Err(Error::config("logs.mix", "proportions must be non-negative with a positive sum"));
        }
        let u = u * total;
        Ok(if u < self.shapley {
            ExplanationKind::Shapley
        } else if u < self.shapley + self.lime {
            ExplanationKind::Lime
        } else {
            ExplanationKind::Augmented
        })
    }
}

/// Picks `count` pool indices, cycling through (group, label) cells so each
/// participant sees a balanced set. Returns the whole pool when `count`
/// covers it.
pub fn assign_tasks(pool: &[TaskInstance], count: usize, seed: u64) -> Vec<usize> {
    if count >= pool.len() {
        return (0..pool.len()).collect();
    }
    let mut cells: std::collections::BTreeMap<(&str, Label), Vec<usize>> = Default::default();
    for (i, inst) in pool.iter().enumerate() {
        cells.entry((inst.group.as_str(), inst.label)).or_default().push(i);
    }
    let mut r = rng::derived_rng(seed, &[rng::tag("tasks")]);
    let mut cells: Vec<Vec<usize>> = cells.into_values().collect();
    for c in &mut cells {
        c.shuffle(&mut r);
    }
    cells.shuffle(&mut r);
    let mut picked = Vec::with_capacity(count);
    let mut depth = 0;
    while picked.len() < count {
        for c in &cells {
            if picked.len() < count && depth < c.len() {
                picked.push(c[depth]);
            }
        }
        depth += 1;
    }
    picked.sort_unstable();
    picked
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogConfig {
    pub tasks_per_dm: usize,
    pub mix: ExplainerMix,
    pub augment: AugmentConfig,
}

impl Default for LogConfig {
    fn default() -> Self {
        LogConfig {
            tasks_per_dm: 15,
            mix: ExplainerMix::default(),
            augment: AugmentConfig::default(),
        }
    }
}

/// Simulated data collection: every participant receives one explanation
/// kind and decides `tasks_per_dm` instances from the pool.
pub fn generate_logs(
    population: &[SimDM],
    pool: &[PreparedInstance],
    config: &LogConfig,
    seed: u64,
) -> Result<Vec<BehaviorRecord>> {
    if population.is_empty() {
        return Err(Error::contract("empty decision-maker population"));
    }
    let instances: Vec<TaskInstance> = pool.iter().map(|p| p.instance.clone()).collect();
    let per_dm: Vec<Vec<BehaviorRecord>> = population
        .par_iter()
        .map(|dm| -> Result<Vec<BehaviorRecord>> {
            let dm_seed = rng::derive_seed(seed, &[rng::tag(&dm.id)]);
            let mut r = rng::derived_rng(dm_seed, &[rng::tag("kind")]);
            let kind = config.mix.pick(r.random())?;
            assign_tasks(&instances, config.tasks_per_dm, dm_seed)
                .into_iter()
                .map(|i| {
                    let p = &pool[i];
                    let explanation = match kind {
                        ExplanationKind::Shapley => p.shapley.clone(),
                        ExplanationKind::Lime => p.lime.clone(),
                        _ => {
                            let aug_seed = rng::derive_seed(dm_seed, &[rng::tag(&p.instance.id)]);
                            let base = if aug_seed & 1 == 0 { &p.shapley } else { &p.lime };
                            augment(base, &config.augment, aug_seed)?.rescaled_max_abs()
                        }
                    };
                    let human_label = dm.assisted_decision(&p.instance, p.ai_label, &explanation)?;
                    Ok(BehaviorRecord {
                        instance: p.instance.clone(),
                        ai_label: p.ai_label,
                        explanation,
                        human_label,
                        participant: dm.id.clone(),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_dm.into_iter().flatten().collect())
}
