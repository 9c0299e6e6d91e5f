//! The experiment stages as pure functions from configuration and upstream
//! results to downstream results. Persistence lives in `pipeline`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::behavior::{self, BehaviorModel, CvReport, TrainReport};
use crate::config::{Config, Recipe};
use crate::data::{self, BehaviorRecord, Dataset, Explanation, ExplanationKind, GroupRoles, Label, TaskInstance};
use crate::error::{Error, Result};
use crate::explain::{background_means, background_sample, forest_shapley, lime_explain};
use crate::manipulate::manipulate;
use crate::metrics::{self, Decision, MeanCi};
use crate::model::{self, fit_logistic, train_forest, ForestConfig, ForestModel, ProbabilisticModel};
use crate::rng;
use crate::sim::{assign_tasks, generate_logs, sample_population, LogConfig, PreparedInstance, SimDM};
use crate::synth::TaskSuite;
use crate::targets::{adversarial_target, combine, fit_combiner, CalibrationRow, CombineModel};

fn stage_seed(seed: u64, stage: &str) -> u64 {
    rng::derive_seed(seed, &[rng::tag(stage)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskData {
    pub train: Dataset,
    pub calibration: Dataset,
    pub eval: Dataset,
    /// Linear rule around which simulated decision makers are drawn.
    pub reference_weights: Vec<f64>,
    pub roles: GroupRoles,
}

pub fn prepare_data(cfg: &Config, seed: u64) -> Result<TaskData> {
    let s = stage_seed(seed, "data");
    let (dataset, suite_weights) = match &cfg.task.csv {
        Some(src) => {
            if src.schema.task_kind != cfg.task.kind {
                return Err(Error::config("task.csv.schema.task_kind", "must equal task.kind"));
            }
            (data::load_csv(&src.path, &src.schema)?, None)
        }
        None => {
            let suite = TaskSuite::for_kind(cfg.task.kind);
            (suite.generate(cfg.task.num_instances, s)?, Some(suite.weights))
        }
    };
    let roles = cfg.roles();
    for g in [&roles.positive_group, &roles.negative_group] {
        if !dataset.group_vocab.contains(g) {
            return Err(Error::Vocabulary {
                value: g.clone(),
                allowed: dataset.group_vocab.clone(),
            });
        }
    }
    let splits = data::split(&dataset, cfg.split, s)?;
    let reference_weights = match suite_weights {
        Some(w) => w,
        None => fit_logistic(&splits.train, 1e-3, 50)?.weights,
    };
    Ok(TaskData {
        train: splits.train,
        calibration: splits.calibration,
        eval: splits.eval,
        reference_weights,
        roles,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AiModel {
    pub forest: ForestModel,
    pub train_accuracy: f64,
    pub eval_accuracy: f64,
}

pub fn train_ai(cfg: &Config, data: &TaskData, seed: u64) -> Result<AiModel> {
    let forest = train_forest(
        &data.train,
        &ForestConfig {
            num_trees: cfg.forest.num_trees,
            max_depth: cfg.forest.max_depth,
            seed: stage_seed(seed, "train-ai"),
        },
    )?;
    Ok(AiModel {
        train_accuracy: model::accuracy(&forest, &data.train),
        eval_accuracy: model::accuracy(&forest, &data.eval),
        forest,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainedPools {
    pub background_means: Vec<f64>,
    pub calibration: Vec<PreparedInstance>,
    pub eval: Vec<PreparedInstance>,
}

fn prepare_instance(
    cfg: &Config,
    forest: &ForestModel,
    background: &[Vec<f64>],
    means: &[f64],
    inst: &TaskInstance,
    seed: u64,
) -> Result<PreparedInstance> {
    let (ai_label, ai_prob) = forest.predict(&inst.features)?;
    let n = inst.features.len();
    if n > cfg.explain.max_shapley_features {
        return Err(Error::TooManyFeatures {
            n,
            max_n: cfg.explain.max_shapley_features,
        });
    }
    let shapley = forest_shapley(forest, &inst.features, background)?;
    let lime = lime_explain(
        forest,
        &inst.features,
        means,
        &cfg.explain.lime,
        rng::derive_seed(seed, &[rng::tag(&inst.id)]),
    )?;
    Ok(PreparedInstance {
        instance: inst.clone(),
        ai_label,
        ai_prob,
        shapley: shapley.rescaled_max_abs(),
        lime: lime.rescaled_max_abs(),
    })
}

/// AI recommendation plus display-scaled Shapley and LIME explanations for
/// every calibration and evaluation instance.
pub fn explain_pools(cfg: &Config, data: &TaskData, ai: &AiModel, seed: u64) -> Result<ExplainedPools> {
    let s = stage_seed(seed, "explain");
    let background = background_sample(&data.train, cfg.explain.background_rows, s);
    let means = background_means(&background);
    let run = |ds: &Dataset| -> Result<Vec<PreparedInstance>> {
        ds.instances
            .par_iter()
            .map(|inst| prepare_instance(cfg, &ai.forest, &background, &means, inst, s))
            .collect()
    };
    Ok(ExplainedPools {
        calibration: run(&data.calibration)?,
        eval: run(&data.eval)?,
        background_means: means,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLogs {
    pub population: Vec<SimDM>,
    pub records: Vec<BehaviorRecord>,
}

pub fn simulate_logs(cfg: &Config, data: &TaskData, pools: &ExplainedPools, seed: u64) -> Result<SimLogs> {
    let s = stage_seed(seed, "sim-log");
    let population = sample_population(
        cfg.logs.num_participants,
        &data.reference_weights,
        &data.train.feature_means(),
        &cfg.population,
        s,
        "log-",
    )?;
    let log_cfg = LogConfig {
        tasks_per_dm: cfg.logs.tasks_per_participant,
        mix: cfg.logs.mix,
        augment: cfg.logs.augment,
    };
    let records = generate_logs(&population, &pools.calibration, &log_cfg, s)?;
    Ok(SimLogs { population, records })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedBehavior {
    pub model: BehaviorModel,
    pub report: TrainReport,
    pub cv: CvReport,
}

pub fn train_behavior(cfg: &Config, logs: &SimLogs, seed: u64) -> Result<TrainedBehavior> {
    let tc = cfg.behavior.train_config(stage_seed(seed, "train-behavior"));
    let cv = behavior::cross_validate(&logs.records, cfg.behavior.cv_folds, &tc)?;
    let (model, report) = behavior::train(&logs.records, &tc)?;
    Ok(TrainedBehavior { model, report, cv })
}

/// Majority of the panel's independent decisions; an exact tie goes to +1.
pub fn panel_majority(panel: &[SimDM], instance: &TaskInstance) -> Label {
    let votes: f64 = panel.iter().map(|dm| dm.independent_decision(instance).as_f64()).sum();
    Label::from_score(votes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinerCheck {
    pub combine_accuracy: f64,
    pub human_accuracy: f64,
    pub ai_accuracy: f64,
    pub instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetAssignment {
    pub instance_id: String,
    pub ai_label: Label,
    pub human_label: Label,
    pub target: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    pub recipe: Recipe,
    pub combiner: CombineModel,
    /// Accuracy of the combiner, the human panel and the AI on the evaluation split.
    pub check: CombinerCheck,
    pub assignments: Vec<TargetAssignment>,
}

/// Targets for the evaluation pool. The combiner is always fitted on the
/// calibration pool so its held-out accuracy is reported for both recipes;
/// the adversarial recipe ignores it when assigning targets.
pub fn assign_targets(cfg: &Config, data: &TaskData, pools: &ExplainedPools, logs: &SimLogs) -> Result<Targets> {
    let panel = &logs.population;
    let rows: Vec<CalibrationRow> = pools
        .calibration
        .par_iter()
        .map(|p| CalibrationRow {
            truth: p.instance.label,
            human: panel_majority(panel, &p.instance),
            ai: p.ai_label,
        })
        .collect();
    let combiner = fit_combiner(&rows, cfg.combiner.smoothing)?;
    let human: Vec<Label> = pools.eval.par_iter().map(|p| panel_majority(panel, &p.instance)).collect();
    let assignments = pools
        .eval
        .iter()
        .zip(&human)
        .map(|(p, &h)| {
            let target = match cfg.recipe {
                Recipe::Adversarial => adversarial_target(&p.instance, &data.roles)?,
                Recipe::Benign => combine(&combiner, h, p.ai_label),
            };
            Ok(TargetAssignment {
                instance_id: p.instance.id.clone(),
                ai_label: p.ai_label,
                human_label: h,
                target,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let count = |f: &dyn Fn(&PreparedInstance, Label) -> Label| {
        pools
            .eval
            .iter()
            .zip(&human)
            .filter(|(p, &h)| f(p, h) == p.instance.label)
            .count() as f64
            / pools.eval.len().max(1) as f64
    };
    let check = CombinerCheck {
        combine_accuracy: count(&|p, h| combine(&combiner, h, p.ai_label)),
        human_accuracy: count(&|_, h| h),
        ai_accuracy: count(&|p, _| p.ai_label),
        instances: pools.eval.len(),
    };
    Ok(Targets {
        recipe: cfg.recipe,
        combiner,
        check,
        assignments,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulatedInstance {
    pub instance_id: String,
    pub ai_label: Label,
    pub target: Label,
    pub explanation: Explanation,
    pub feasible: bool,
    pub final_behavior_loss: f64,
    pub display_behavior_loss: f64,
    pub restarts_feasible: usize,
    pub restarts_converged: usize,
    pub rounds_used: usize,
    /// Behavior loss per round, one trace per restart.
    pub loss_traces: Vec<Vec<f64>>,
}

pub fn manipulate_pool(
    cfg: &Config,
    pools: &ExplainedPools,
    targets: &Targets,
    behavior: &TrainedBehavior,
    seed: u64,
) -> Result<Vec<ManipulatedInstance>> {
    let s = stage_seed(seed, "manipulate");
    if targets.assignments.len() != pools.eval.len() {
        return Err(Error::contract("targets do not cover the evaluation pool"));
    }
    pools
        .eval
        .par_iter()
        .zip(&targets.assignments)
        .map(|(p, t)| {
            if p.instance.id != t.instance_id {
                return Err(Error::contract(format!(
                    "target for `{}` found where `{}` was expected",
                    t.instance_id, p.instance.id
                )));
            }
            let mcfg = cfg
                .manipulation
                .manipulation_config(rng::derive_seed(s, &[rng::tag(&p.instance.id)]));
            let r = manipulate(&behavior.model, &p.instance.features, p.ai_label, t.target, &mcfg)?;
            Ok(ManipulatedInstance {
                instance_id: p.instance.id.clone(),
                ai_label: p.ai_label,
                target: t.target,
                rounds_used: r.rounds_used(),
                loss_traces: r.restarts.iter().map(|o| o.loss_trace.clone()).collect(),
                explanation: r.explanation,
                feasible: r.feasible,
                final_behavior_loss: r.final_behavior_loss,
                display_behavior_loss: r.display_behavior_loss,
                restarts_feasible: r.restarts_feasible,
                restarts_converged: r.restarts_converged,
            })
        })
        .collect()
}

pub const CONDITIONS: [ExplanationKind; 3] = [
    ExplanationKind::Shapley,
    ExplanationKind::Lime,
    ExplanationKind::Manipulated,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDecision {
    pub participant: String,
    pub condition: ExplanationKind,
    pub instance_id: String,
    pub group: String,
    pub truth: Label,
    pub ai: Label,
    pub human: Label,
}

/// Per-participant metrics; `None` marks an undefined rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantMetrics {
    pub participant: String,
    pub condition: ExplanationKind,
    pub tasks: usize,
    pub accuracy: f64,
    pub overreliance: Option<f64>,
    pub underreliance: Option<f64>,
    pub fprd: Option<f64>,
    pub fnrd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub decisions: Vec<EvalDecision>,
    pub participants: Vec<ParticipantMetrics>,
}

fn participant_metrics(
    id: &str,
    condition: ExplanationKind,
    decisions: &[EvalDecision],
    roles: &GroupRoles,
) -> Result<ParticipantMetrics> {
    let ds: Vec<Decision> = decisions
        .iter()
        .map(|d| Decision {
            truth: d.truth,
            ai: d.ai,
            human: d.human,
            group: d.group.clone(),
        })
        .collect();
    let rel = metrics::reliance(&ds)?;
    let fair = metrics::fairness_diff(&ds, roles);
    Ok(ParticipantMetrics {
        participant: id.to_string(),
        condition,
        tasks: ds.len(),
        accuracy: rel.accuracy,
        overreliance: rel.overreliance.value(),
        underreliance: rel.underreliance.value(),
        fprd: fair.fprd.value(),
        fnrd: fair.fnrd.value(),
    })
}

/// A fresh oracle population per condition decides balanced task sets
/// from the evaluation pool with that condition's explanations. Where no
/// sign-consistent manipulation was found, the manipulated condition shows
/// the Shapley explanation instead.
pub fn evaluate(
    cfg: &Config,
    data: &TaskData,
    pools: &ExplainedPools,
    manipulated: &[ManipulatedInstance],
    seed: u64,
) -> Result<Evaluation> {
    let s = stage_seed(seed, "evaluate");
    if manipulated.len() != pools.eval.len() {
        return Err(Error::contract("manipulated explanations do not cover the evaluation pool"));
    }
    let instances: Vec<TaskInstance> = pools.eval.iter().map(|p| p.instance.clone()).collect();
    let means = data.train.feature_means();
    let mut decisions = Vec::new();
    let mut participants = Vec::new();
    for condition in CONDITIONS {
        let population = sample_population(
            cfg.evaluation.participants_per_condition,
            &data.reference_weights,
            &means,
            &cfg.population,
            rng::derive_seed(s, &[rng::tag("population"), rng::tag(condition.name())]),
            &format!("eval-{}-", condition.name()),
        )?;
        let per_dm: Vec<(Vec<EvalDecision>, ParticipantMetrics)> = population
            .par_iter()
            .map(|dm| {
                let task_seed = rng::derive_seed(dm.seed, &[rng::tag("eval-tasks")]);
                let ds = assign_tasks(&instances, cfg.evaluation.tasks_per_participant, task_seed)
                    .into_iter()
                    .map(|i| {
                        let p = &pools.eval[i];
                        let e = match condition {
                            ExplanationKind::Shapley => &p.shapley,
                            ExplanationKind::Lime => &p.lime,
                            _ if manipulated[i].feasible => &manipulated[i].explanation,
                            _ => &p.shapley,
                        };
                        Ok(EvalDecision {
                            participant: dm.id.clone(),
                            condition,
                            instance_id: p.instance.id.clone(),
                            group: p.instance.group.clone(),
                            truth: p.instance.label,
                            ai: p.ai_label,
                            human: dm.assisted_decision(&p.instance, p.ai_label, e)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let m = participant_metrics(&dm.id, condition, &ds, &data.roles)?;
                Ok((ds, m))
            })
            .collect::<Result<_>>()?;
        for (ds, m) in per_dm {
            decisions.extend(ds);
            participants.push(m);
        }
    }
    Ok(Evaluation {
        decisions,
        participants,
    })
}

pub const METRICS: [&str; 5] = ["accuracy", "overreliance", "underreliance", "fprd", "fnrd"];

impl ParticipantMetrics {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "accuracy" => Some(self.accuracy),
            "overreliance" => self.overreliance,
            "underreliance" => self.underreliance,
            "fprd" => self.fprd,
            "fnrd" => self.fnrd,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub ci: Option<MeanCi>,
    /// Participants for whom the metric was undefined.
    pub undefined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub condition: String,
    pub baseline: String,
    pub mean_difference: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulationStats {
    pub instances: usize,
    pub feasible_fraction: f64,
    pub below_threshold_fraction: f64,
    pub mean_final_behavior_loss: f64,
    pub mean_display_behavior_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub task: String,
    pub recipe: Recipe,
    pub ai_train_accuracy: f64,
    pub ai_eval_accuracy: f64,
    pub behavior_cv_accuracy: f64,
    pub behavior_cv_folds: Vec<f64>,
    pub behavior_final_loss: f64,
    pub combiner: CombinerCheck,
    pub manipulation: ManipulationStats,
    /// condition → metric → summary
    pub conditions: BTreeMap<String, BTreeMap<String, MetricSummary>>,
    pub comparisons: Vec<Comparison>,
}

pub fn metric_values(eval: &Evaluation, condition: ExplanationKind, metric: &str) -> (Vec<f64>, usize) {
    let mut values = Vec::new();
    let mut undefined = 0;
    for p in eval.participants.iter().filter(|p| p.condition == condition) {
        match p.metric(metric) {
            Some(v) => values.push(v),
            None => undefined += 1,
        }
    }
    (values, undefined)
}

pub fn manipulation_stats(cfg: &Config, manipulated: &[ManipulatedInstance]) -> ManipulationStats {
    let k = manipulated.len().max(1) as f64;
    ManipulationStats {
        instances: manipulated.len(),
        feasible_fraction: manipulated.iter().filter(|m| m.feasible).count() as f64 / k,
        below_threshold_fraction: manipulated
            .iter()
            .filter(|m| m.final_behavior_loss < cfg.manipulation.threshold)
            .count() as f64
            / k,
        mean_final_behavior_loss: manipulated.iter().map(|m| m.final_behavior_loss).sum::<f64>() / k,
        mean_display_behavior_loss: manipulated.iter().map(|m| m.display_behavior_loss).sum::<f64>() / k,
    }
}

#[allow(clippy::too_many_arguments)]
pub fn summarize(
    cfg: &Config,
    seed: u64,
    ai: &AiModel,
    behavior: &TrainedBehavior,
    targets: &Targets,
    manipulated: &[ManipulatedInstance],
    eval: &Evaluation,
) -> Result<Summary> {
    let s = stage_seed(seed, "report");
    let mut conditions = BTreeMap::new();
    for c in CONDITIONS {
        let mut per_metric = BTreeMap::new();
        for m in METRICS {
            let (values, undefined) = metric_values(eval, c, m);
            per_metric.insert(
                m.to_string(),
                MetricSummary {
                    ci: metrics::mean_ci(&values),
                    undefined,
                },
            );
        }
        conditions.insert(c.name().to_string(), per_metric);
    }
    let mut comparisons = Vec::new();
    for baseline in [ExplanationKind::Shapley, ExplanationKind::Lime] {
        for m in METRICS {
            let (a, _) = metric_values(eval, ExplanationKind::Manipulated, m);
            let (b, _) = metric_values(eval, baseline, m);
            let (mean_difference, p_value) = if a.is_empty() || b.is_empty() {
                (None, None)
            } else {
                let p = metrics::permutation_test(
                    &a,
                    &b,
                    cfg.evaluation.num_perms,
                    rng::derive_seed(s, &[rng::tag(m), rng::tag(baseline.name())]),
                )?;
                let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
                (Some(mean(&a) - mean(&b)), Some(p))
            };
            comparisons.push(Comparison {
                metric: m.to_string(),
                condition: ExplanationKind::Manipulated.name().to_string(),
                baseline: baseline.name().to_string(),
                mean_difference,
                p_value,
            });
        }
    }
    Ok(Summary {
        task: cfg.task.kind.name().to_string(),
        recipe: cfg.recipe,
        ai_train_accuracy: ai.train_accuracy,
        ai_eval_accuracy: ai.eval_accuracy,
        behavior_cv_accuracy: behavior.cv.mean_accuracy,
        behavior_cv_folds: behavior.cv.fold_accuracies.clone(),
        behavior_final_loss: behavior.report.final_loss,
        combiner: targets.check.clone(),
        manipulation: manipulation_stats(cfg, manipulated),
        conditions,
        comparisons,
    })
}

impl Summary {
    pub fn mean(&self, condition: &str, metric: &str) -> Option<f64> {
        self.conditions
            .get(condition)?
            .get(metric)?
            .ci
            .as_ref()
            .map(|c| c.mean)
    }

    pub fn comparison(&self, metric: &str, baseline: &str) -> Option<&Comparison> {
        self.comparisons
            .iter()
            .find(|c| c.metric == metric && c.baseline == baseline)
    }
}

/// Every stage's output from one in-memory run.
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub data: TaskData,
    pub ai: AiModel,
    pub pools: ExplainedPools,
    pub logs: SimLogs,
    pub behavior: TrainedBehavior,
    pub targets: Targets,
    pub manipulated: Vec<ManipulatedInstance>,
    pub evaluation: Evaluation,
    pub summary: Summary,
}

pub fn run_in_memory(cfg: &Config, seed: u64) -> Result<RunOutputs> {
    cfg.validate()?;
    let data = prepare_data(cfg, seed)?;
    let ai = train_ai(cfg, &data, seed)?;
    let pools = explain_pools(cfg, &data, &ai, seed)?;
    let logs = simulate_logs(cfg, &data, &pools, seed)?;
    let behavior = train_behavior(cfg, &logs, seed)?;
    let targets = assign_targets(cfg, &data, &pools, &logs)?;
    let manipulated = manipulate_pool(cfg, &pools, &targets, &behavior, seed)?;
    let evaluation = evaluate(cfg, &data, &pools, &manipulated, seed)?;
    let summary = summarize(cfg, seed, &ai, &behavior, &targets, &manipulated, &evaluation)?;
    Ok(RunOutputs {
        data,
        ai,
        pools,
        logs,
        behavior,
        targets,
        manipulated,
        evaluation,
        summary,
    })
}
