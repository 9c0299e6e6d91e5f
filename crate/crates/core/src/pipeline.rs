//! Persisted, stage-by-stage execution of an experiment under a run
//! directory keyed by configuration hash and seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::experiment::{self, *};

pub const FORMAT_VERSION: u32 = 1;

/// Every stage, in pipeline order, named after the subcommand that runs it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GenData,
    TrainAi,
    Explain,
    SimLog,
    TrainBehavior,
    Manipulate,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::GenData,
        Stage::TrainAi,
        Stage::Explain,
        Stage::SimLog,
        Stage::TrainBehavior,
        Stage::Manipulate,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::TrainAi => "train-ai",
            Stage::Explain => "explain",
            Stage::SimLog => "sim-log",
            Stage::TrainBehavior => "train-behavior",
            Stage::Manipulate => "manipulate",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

/// JSON wrapper that ties an artifact to the run that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub format: String,
    pub config_hash: String,
    pub seed: u64,
    pub payload: T,
}

struct Artifact {
    file: &'static str,
    kind: &'static str,
    producer: Stage,
}

const DATA: Artifact = Artifact {
    file: "data.json",
    kind: "task-data",
    producer: Stage::GenData,
};
const AI_MODEL: Artifact = Artifact {
    file: "ai_model.json",
    kind: "ai-model",
    producer: Stage::TrainAi,
};
const EXPLANATIONS: Artifact = Artifact {
    file: "explanations.json",
    kind: "explanations",
    producer: Stage::Explain,
};
const LOGS: Artifact = Artifact {
    file: "behavior_logs.json",
    kind: "behavior-logs",
    producer: Stage::SimLog,
};
const BEHAVIOR: Artifact = Artifact {
    file: "behavior_model.json",
    kind: "behavior-model",
    producer: Stage::TrainBehavior,
};
const TARGETS: Artifact = Artifact {
    file: "targets.json",
    kind: "targets",
    producer: Stage::Manipulate,
};
const MANIPULATED: Artifact = Artifact {
    file: "manipulated.json",
    kind: "manipulated-explanations",
    producer: Stage::Manipulate,
};
const EVALUATION: Artifact = Artifact {
    file: "evaluation.json",
    kind: "evaluation",
    producer: Stage::Evaluate,
};
const SUMMARY: Artifact = Artifact {
    file: "summary.json",
    kind: "summary",
    producer: Stage::Report,
};

fn format_tag(kind: &str) -> String {
    format!("xnudge/{kind}/v{FORMAT_VERSION}")
}

#[derive(Debug, Clone)]
pub struct Run {
    pub config: Config,
    pub seed: u64,
    pub hash: String,
    pub dir: PathBuf,
}

impl Run {
    /// Opens (creating if needed) the run directory for `config` and `seed`
    /// under `out_dir`, and records the resolved configuration there.
    pub fn open(config: Config, seed: u64, out_dir: &Path) -> Result<Run> {
        config.validate()?;
        let hash = config.hash();
        let dir = out_dir.join(format!("run-{}-s{seed}", &hash[..12]));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut resolved = config.clone();
        resolved.seed = seed;
        let path = dir.join("config.toml");
        std::fs::write(&path, resolved.to_toml_string()).map_err(|e| Error::io(&path, e))?;
        Ok(Run {
            config,
            seed,
            hash,
            dir,
        })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    fn write_text(&self, file: &str, text: &str) -> Result<()> {
        let path = self.path(file);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    fn write<T: Serialize>(&self, art: &Artifact, payload: &T) -> Result<()> {
        let env = Envelope {
            format: format_tag(art.kind),
            config_hash: self.hash.clone(),
            seed: self.seed,
            payload,
        };
        let mut text = serde_json::to_string_pretty(&env)?;
        text.push('\n');
        self.write_text(art.file, &text)
    }

    fn read<T: DeserializeOwned>(&self, art: &Artifact) -> Result<T> {
        let path = self.path(art.file);
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path,
                producer: art.producer.name().to_string(),
            });
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let env: Envelope<T> = serde_json::from_str(&text)?;
        if env.format != format_tag(art.kind) {
            return Err(Error::Schema(format!(
                "{} has format `{}`, expected `{}`",
                path.display(),
                env.format,
                format_tag(art.kind)
            )));
        }
        if env.config_hash != self.hash || env.seed != self.seed {
            return Err(Error::MissingArtifact {
                path,
                producer: art.producer.name().to_string(),
            });
        }
        Ok(env.payload)
    }

    fn csv_prefix(&self, kind: &str) -> [String; 3] {
        [format_tag(kind), self.hash.clone(), self.seed.to_string()]
    }

    fn write_csv(&self, file: &str, kind: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let path = self.path(file);
        let mut w = csv::Writer::from_path(&path)?;
        let mut head = vec!["format", "config_hash", "seed"];
        head.extend_from_slice(header);
        w.write_record(&head)?;
        let prefix = self.csv_prefix(kind);
        for row in rows {
            w.write_record(prefix.iter().chain(row.iter()))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    /// Runs one stage, reading its inputs from and writing its outputs to
    /// the run directory. Errors are wrapped with the stage name and a
    /// `failure.json` is left next to the partial artifacts.
    pub fn stage(&self, stage: Stage) -> Result<()> {
        log::info!("stage {} in {}", stage.name(), self.dir.display());
        let failure = self.path("failure.json");
        match self.stage_inner(stage) {
            Ok(()) => {
                if failure.exists() {
                    std::fs::remove_file(&failure).map_err(|e| Error::io(&failure, e))?;
                }
                Ok(())
            }
            Err(err) => {
                let report = serde_json::json!({
                    "stage": stage.name(),
                    "error": err.to_string(),
                });
                let text = serde_json::to_string_pretty(&report)?;
                std::fs::write(&failure, text + "\n").map_err(|e| Error::io(&failure, e))?;
                Err(Error::Stage {
                    stage: stage.name().to_string(),
                    source: Box::new(err),
                })
            }
        }
    }

    fn stage_inner(&self, stage: Stage) -> Result<()> {
        let (cfg, seed) = (&self.config, self.seed);
        match stage {
            Stage::GenData => {
                let data = prepare_data(cfg, seed)?;
                self.write(&DATA, &data)?;
                self.write_dataset_csv(&data)
            }
            Stage::TrainAi => {
                let data: TaskData = self.read(&DATA)?;
                self.write(&AI_MODEL, &train_ai(cfg, &data, seed)?)
            }
            Stage::Explain => {
                let data: TaskData = self.read(&DATA)?;
                let ai: AiModel = self.read(&AI_MODEL)?;
                self.write(&EXPLANATIONS, &explain_pools(cfg, &data, &ai, seed)?)
            }
            Stage::SimLog => {
                let data: TaskData = self.read(&DATA)?;
                let pools: ExplainedPools = self.read(&EXPLANATIONS)?;
                let logs = simulate_logs(cfg, &data, &pools, seed)?;
                self.write(&LOGS, &logs)?;
                self.write_logs_csv(&logs)
            }
            Stage::TrainBehavior => {
                let logs: SimLogs = self.read(&LOGS)?;
                self.write(&BEHAVIOR, &train_behavior(cfg, &logs, seed)?)
            }
            Stage::Manipulate => {
                let behavior: TrainedBehavior = self.read(&BEHAVIOR)?;
                let data: TaskData = self.read(&DATA)?;
                let pools: ExplainedPools = self.read(&EXPLANATIONS)?;
                let logs: SimLogs = self.read(&LOGS)?;
                let targets = assign_targets(cfg, &data, &pools, &logs)?;
                self.write(&TARGETS, &targets)?;
                let manipulated = manipulate_pool(cfg, &pools, &targets, &behavior, seed)?;
                self.write(&MANIPULATED, &manipulated)
            }
            Stage::Evaluate => {
                let data: TaskData = self.read(&DATA)?;
                let pools: ExplainedPools = self.read(&EXPLANATIONS)?;
                let manipulated: Vec<ManipulatedInstance> = self.read(&MANIPULATED)?;
                let eval = evaluate(cfg, &data, &pools, &manipulated, seed)?;
                self.write(&EVALUATION, &eval)?;
                self.write_metrics_csv(&eval)
            }
            Stage::Report => {
                let ai: AiModel = self.read(&AI_MODEL)?;
                let behavior: TrainedBehavior = self.read(&BEHAVIOR)?;
                let targets: Targets = self.read(&TARGETS)?;
                let manipulated: Vec<ManipulatedInstance> = self.read(&MANIPULATED)?;
                let eval: Evaluation = self.read(&EVALUATION)?;
                let summary = summarize(cfg, seed, &ai, &behavior, &targets, &manipulated, &eval)?;
                self.write(&SUMMARY, &summary)?;
                self.write_plot_csv(&summary)
            }
        }
    }

    /// Runs every stage in order.
    pub fn run_all(&self) -> Result<Summary> {
        for stage in Stage::ALL {
            self.stage(stage)?;
        }
        self.summary()
    }

    pub fn summary(&self) -> Result<Summary> {
        self.read(&SUMMARY)
    }

    fn write_dataset_csv(&self, data: &TaskData) -> Result<()> {
        let n = data.train.n;
        let mut header = vec!["split", "id", "group", "label"];
        let names: Vec<&str> = data.train.feature_names.iter().map(String::as_str).collect();
        header.extend(names);
        let mut rows = Vec::new();
        for (split, ds) in [("train", &data.train), ("calibration", &data.calibration), ("eval", &data.eval)] {
            for inst in &ds.instances {
                let mut row = vec![
                    split.to_string(),
                    inst.id.clone(),
                    inst.group.clone(),
                    inst.label.to_string(),
                ];
                row.extend(inst.features.iter().take(n).map(|v| v.to_string()));
                rows.push(row);
            }
        }
        self.write_csv("dataset.csv", "dataset", &header, &rows)
    }

    fn write_logs_csv(&self, logs: &SimLogs) -> Result<()> {
        let rows: Vec<Vec<String>> = logs
            .records
            .iter()
            .map(|r| {
                vec![
                    r.participant.clone(),
                    r.instance.id.clone(),
                    r.ai_label.to_string(),
                    r.explanation.kind.name().to_string(),
                    r.human_label.to_string(),
                ]
            })
            .collect();
        self.write_csv(
            "behavior_logs.csv",
            "behavior-logs",
            &["participant", "instance_id", "ai_label", "explanation_kind", "human_label"],
            &rows,
        )
    }

    fn write_metrics_csv(&self, eval: &Evaluation) -> Result<()> {
        let opt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| v.to_string());
        let rows: Vec<Vec<String>> = eval
            .participants
            .iter()
            .map(|p| {
                vec![
                    self.config.task.kind.name().to_string(),
                    recipe_name(&self.config),
                    p.participant.clone(),
                    p.condition.name().to_string(),
                    p.tasks.to_string(),
                    p.accuracy.to_string(),
                    opt(p.overreliance),
                    opt(p.underreliance),
                    opt(p.fprd),
                    opt(p.fnrd),
                ]
            })
            .collect();
        self.write_csv(
            "metrics.csv",
            "participant-metrics",
            &[
                "task",
                "recipe",
                "participant",
                "condition",
                "tasks",
                "accuracy",
                "overreliance",
                "underreliance",
                "fprd",
                "fnrd",
            ],
            &rows,
        )
    }

    fn write_plot_csv(&self, summary: &Summary) -> Result<()> {
        let mut rows = Vec::new();
        for (condition, metrics) in &summary.conditions {
            for (metric, m) in metrics {
                let (mean, lo, hi, count) = match &m.ci {
                    Some(ci) => (ci.mean.to_string(), ci.ci_low.to_string(), ci.ci_high.to_string(), ci.count),
                    None => ("undefined".into(), "undefined".into(), "undefined".into(), 0),
                };
                rows.push(vec![
                    summary.task.clone(),
                    recipe_name(&self.config),
                    condition.clone(),
                    metric.clone(),
                    mean,
                    lo,
                    hi,
                    count.to_string(),
                    m.undefined.to_string(),
                ]);
            }
        }
        self.write_csv(
            "plot.csv",
            "plot-long",
            &[
                "task",
                "recipe",
                "condition",
                "metric",
                "mean",
                "ci_low",
                "ci_high",
                "count",
                "undefined",
            ],
            &rows,
        )
    }
}

fn recipe_name(cfg: &Config) -> String {
    match cfg.recipe {
        crate::config::Recipe::Adversarial => "adversarial".into(),
        crate::config::Recipe::Benign => "benign".into(),
    }
}

/// Plain-text table of a summary for terminal output.
pub fn render_summary(summary: &Summary) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "task {}  recipe {}", summary.task, match summary.recipe {
        crate::config::Recipe::Adversarial => "adversarial",
        crate::config::Recipe::Benign => "benign",
    });
    let _ = writeln!(
        out,
        "AI accuracy {:.3} (train {:.3})  behavior CV accuracy {:.3}",
        summary.ai_eval_accuracy, summary.ai_train_accuracy, summary.behavior_cv_accuracy
    );
    let c = &summary.combiner;
    let _ = writeln!(
        out,
        "combiner {:.3}  human panel {:.3}  AI {:.3}",
        c.combine_accuracy, c.human_accuracy, c.ai_accuracy
    );
    let m = &summary.manipulation;
    let _ = writeln!(
        out,
        "manipulated {} instances: feasible {:.3}, below threshold {:.3}",
        m.instances, m.feasible_fraction, m.below_threshold_fraction
    );
    let _ = writeln!(out);
    let _ = write!(out, "{:<14}", "metric");
    for cond in experiment::CONDITIONS {
        let _ = write!(out, "{:>26}", cond.name());
    }
    let _ = writeln!(out);
    for metric in METRICS {
        let _ = write!(out, "{metric:<14}");
        for cond in experiment::CONDITIONS {
            let cell = summary
                .conditions
                .get(cond.name())
                .and_then(|m| m.get(metric))
                .and_then(|m| m.ci.as_ref())
                .map_or_else(
                    || "undefined".to_string(),
                    |ci| format!("{:.3} [{:.3}, {:.3}]", ci.mean, ci.ci_low, ci.ci_high),
                );
            let _ = write!(out, "{cell:>26}");
        }
        let _ = writeln!(out);
    }
    let _ = writeln!(out);
    for cmp in &summary.comparisons {
        let diff = cmp.mean_difference.map_or_else(|| "undefined".into(), |d| format!("{d:+.3}"));
        let p = cmp.p_value.map_or_else(|| "undefined".into(), |p| format!("{p:.4}"));
        let _ = writeln!(
            out,
            "{} vs {:<8} {:<14} diff {:>9}  p {}",
            cmp.condition, cmp.baseline, cmp.metric, diff, p
        );
    }
    out
}

/// Runs `f` on a dedicated pool with `threads` workers, or on the global
/// pool when `threads` is `None`.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::config("threads", "must be at least 1")),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::config("threads", e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}
