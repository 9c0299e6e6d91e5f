//! Experiment configuration: a versioned TOML document whose defaults are
//! the reference hyperparameters.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{CsvSchema, GroupRoles, SplitFractions, TaskKind};
use crate::error::{Error, Result};
use crate::explain::{AugmentConfig, LimeConfig, DEFAULT_MAX_SHAPLEY_FEATURES, MAX_BACKGROUND_ROWS};
use crate::sim::{ExplainerMix, PopulationConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    Adversarial,
    Benign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    pub schema: CsvSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub kind: TaskKind,
    /// Instances generated for synthetic suites; ignored for CSV input.
    pub num_instances: usize,
    pub csv: Option<CsvSource>,
    /// Overrides the task kind's group roles.
    pub roles: Option<GroupRoles>,
}

impl Default for TaskSection {
    fn default() -> Self {
        TaskSection {
            kind: TaskKind::Census,
            num_instances: 2000,
            csv: None,
            roles: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestSection {
    pub num_trees: usize,
    pub max_depth: usize,
}

impl Default for ForestSection {
    fn default() -> Self {
        ForestSection {
            num_trees: 100,
            max_depth: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    pub background_rows: usize,
    pub max_shapley_features: usize,
    pub lime: LimeConfig,
}

impl Default for ExplainSection {
    fn default() -> Self {
        ExplainSection {
            background_rows: MAX_BACKGROUND_ROWS,
            max_shapley_features: DEFAULT_MAX_SHAPLEY_FEATURES,
            lime: LimeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogSection {
    pub num_participants: usize,
    pub tasks_per_participant: usize,
    pub mix: ExplainerMix,
    pub augment: AugmentConfig,
}

impl Default for LogSection {
    fn default() -> Self {
        LogSection {
            num_participants: 80,
            tasks_per_participant: 15,
            mix: ExplainerMix::default(),
            augment: AugmentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub hidden_dim: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub cv_folds: usize,
}

impl Default for BehaviorSection {
    fn default() -> Self {
        let t = crate::behavior::TrainConfig::default();
        BehaviorSection {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            hidden_dim: t.hidden_dim,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            cv_folds: 5,
        }
    }
}

impl BehaviorSection {
    pub fn train_config(&self, seed: u64) -> crate::behavior::TrainConfig {
        crate::behavior::TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            hidden_dim: self.hidden_dim,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManipulationSection {
    pub step_size: f64,
    pub tradeoff: f64,
    pub threshold: f64,
    pub max_rounds: usize,
    pub restarts: usize,
    pub init_low: f64,
    pub init_high: f64,
    pub hinge_margin: f64,
}

impl Default for ManipulationSection {
    fn default() -> Self {
        let m = crate::manipulate::ManipulationConfig::default();
        ManipulationSection {
            step_size: m.step_size,
            tradeoff: m.tradeoff,
            threshold: m.threshold,
            max_rounds: m.max_rounds,
            restarts: m.restarts,
            init_low: m.init_low,
            init_high: m.init_high,
            hinge_margin: m.hinge_margin,
        }
    }
}

impl ManipulationSection {
    pub fn manipulation_config(&self, seed: u64) -> crate::manipulate::ManipulationConfig {
        crate::manipulate::ManipulationConfig {
            step_size: self.step_size,
            tradeoff: self.tradeoff,
            threshold: self.threshold,
            max_rounds: self.max_rounds,
            restarts: self.restarts,
            init_low: self.init_low,
            init_high: self.init_high,
            hinge_margin: self.hinge_margin,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CombinerSection {
    pub smoothing: f64,
}

impl Default for CombinerSection {
    fn default() -> Self {
        CombinerSection { smoothing: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub participants_per_condition: usize,
    pub tasks_per_participant: usize,
    pub num_perms: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            participants_per_condition: 60,
            tasks_per_participant: 15,
            num_perms: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    pub seed: u64,
    pub recipe: Recipe,
    pub task: TaskSection,
    pub split: SplitFractions,
    pub forest: ForestSection,
    pub explain: ExplainSection,
    pub population: PopulationConfig,
    pub logs: LogSection,
    pub behavior: BehaviorSection,
    pub manipulation: ManipulationSection,
    pub combiner: CombinerSection,
    pub evaluation: EvaluationSection,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            recipe: Recipe::Adversarial,
            task: TaskSection::default(),
            split: SplitFractions::default(),
            forest: ForestSection::default(),
            explain: ExplainSection::default(),
            population: PopulationConfig::default(),
            logs: LogSection::default(),
            behavior: BehaviorSection::default(),
            manipulation: ManipulationSection::default(),
            combiner: CombinerSection::default(),
            evaluation: EvaluationSection::default(),
        }
    }
}

impl Config {
    /// A default configuration for one task kind and recipe.
    pub fn recipe(kind: TaskKind, recipe: Recipe) -> Config {
        Config {
            recipe,
            task: TaskSection {
                kind,
                ..TaskSection::default()
            },
            ..Config::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Config> {
        let cfg: Config = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| format!("bytes {}..{}", s.start, s.end))
                .unwrap_or_else(|| "document".into());
            Error::config(field, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Config::from_toml_str(&text)?;
        if let Some(csv) = cfg.task.csv.as_mut() {
            if csv.path.is_relative() {
                if let Some(dir) = path.parent() {
                    csv.path = dir.join(&csv.path);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to toml")
    }

    pub fn roles(&self) -> GroupRoles {
        self.task
            .roles
            .clone()
            .unwrap_or_else(|| self.task.kind.default_roles())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: &str| Err(Error::config(f, m));
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        if self.task.csv.is_none() && self.task.num_instances < 20 {
            return bad("task.num_instances", "must be at least 20");
        }
        if let Some(roles) = &self.task.roles {
            if roles.positive_group == roles.negative_group {
                return bad("task.roles", "positive_group and negative_group must differ");
            }
        }
        let f = &self.split;
        for (name, v) in [("train", f.train), ("calibration", f.calibration), ("eval", f.eval)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::config(format!("split.{name}"), "must lie in (0, 1)"));
            }
        }
        if ((f.train + f.calibration + f.eval) - 1.0).abs() > 1e-9 {
            return bad("split", "fractions must sum to 1");
        }
        if self.forest.num_trees == 0 {
            return bad("forest.num_trees", "must be at least 1");
        }
        if self.forest.max_depth == 0 {
            return bad("forest.max_depth", "must be at least 1");
        }
        if self.explain.background_rows == 0 || self.explain.background_rows > MAX_BACKGROUND_ROWS {
            return Err(Error::config(
                "explain.background_rows",
                format!("must lie in [1, {MAX_BACKGROUND_ROWS}]"),
            ));
        }
        if self.explain.max_shapley_features == 0 || self.explain.max_shapley_features > 20 {
            return bad("explain.max_shapley_features", "must lie in [1, 20]");
        }
        let lime = &self.explain.lime;
        if lime.num_samples < 2 {
            return bad("explain.lime.num_samples", "must be at least 2");
        }
        if !(lime.kernel_width > 0.0) {
            return bad("explain.lime.kernel_width", "must be positive");
        }
        if !(lime.ridge > 0.0) {
            return bad("explain.lime.ridge", "must be positive");
        }
        let p = &self.population;
        if !(p.weight_distortion_sd >= 0.0) {
            return bad("population.weight_distortion_sd", "must be non-negative");
        }
        if !(p.noise_sd >= 0.0) {
            return bad("population.noise_sd", "must be non-negative");
        }
        if !(0.0 <= p.anchor_low && p.anchor_low <= p.anchor_high && p.anchor_high <= 1.0) {
            return bad("population.anchor_low", "need 0 <= anchor_low <= anchor_high <= 1");
        }
        if !(0.0 <= p.sensitivity_low && p.sensitivity_low <= p.sensitivity_high) {
            return bad("population.sensitivity_low", "need 0 <= sensitivity_low <= sensitivity_high");
        }
        if p.attention_k == Some(0) {
            return bad("population.attention_k", "must be at least 1");
        }
        if self.logs.num_participants == 0 {
            return bad("logs.num_participants", "must be at least 1");
        }
        if self.logs.tasks_per_participant == 0 {
            return bad("logs.tasks_per_participant", "must be at least 1");
        }
        let m = &self.logs.mix;
        if [m.shapley, m.lime, m.augmented].iter().any(|v| !(*v >= 0.0)) || !(m.shapley + m.lime + m.augmented > 0.0) {
            return bad("logs.mix", "proportions must be non-negative with a positive sum");
        }
        let a = &self.logs.augment;
        let fracs = [a.mask_frac, a.amp_frac, a.flip_frac];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) || fracs.iter().sum::<f64>() > 1.0 {
            return bad("logs.augment", "mask_frac, amp_frac and flip_frac must lie in [0, 1] and sum to at most 1");
        }
        self.behavior.train_config(0).validate()?;
        if self.behavior.cv_folds < 2 {
            return bad("behavior.cv_folds", "must be at least 2");
        }
        self.manipulation.manipulation_config(0).validate()?;
        if !(self.combiner.smoothing > 0.0) {
            return bad("combiner.smoothing", "must be positive");
        }
        let e = &self.evaluation;
        if e.participants_per_condition < 2 {
            return bad("evaluation.participants_per_condition", "must be at least 2");
        }
        if e.tasks_per_participant == 0 {
            return bad("evaluation.tasks_per_participant", "must be at least 1");
        }
        if e.num_perms < 1000 {
            return bad("evaluation.num_perms", "must be at least 1000");
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, with the seed left out so
    /// that one configuration can be run under many seeds.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes to json");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("seed");
        }
        let canonical = serde_json::to_string(&value).expect("json value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn short_hash(&self) -> String {
        self.hash()[..12].to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_reference_hyperparameters() {
        let c = Config::default();
        assert_eq!(c.manipulation.step_size, 0.01);
        assert_eq!(c.manipulation.tradeoff, 0.01);
        assert_eq!(c.manipulation.threshold, 0.1);
        assert_eq!(c.manipulation.max_rounds, 100);
        assert_eq!(c.manipulation.restarts, 5);
        assert_eq!(c.behavior.learning_rate, 1e-4);
        assert_eq!(c.behavior.batch_size, 128);
        assert_eq!(c.behavior.epochs, 10);
        c.validate().unwrap();
    }

    #[test]
    fn empty_document_is_default() {
        assert_eq!(Config::from_toml_str("").unwrap(), Config::default());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = Config::recipe(TaskKind::Recidivism, Recipe::Benign);
        c.seed = 11;
        c.population.attention_k = Some(3);
        let back = Config::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let c = Config::from_toml_str("recipe = \"benign\"\n[manipulation]\nstep_size = 0.05\n").unwrap();
        assert_eq!(c.recipe, Recipe::Benign);
        assert_eq!(c.manipulation.step_size, 0.05);
        assert_eq!(c.manipulation.restarts, 5);
    }

    #[test]
    fn errors_name_the_field() {
        let err = Config::from_toml_str("[manipulation]\nstep_size = -1.0\n").unwrap_err();
        assert!(err.to_string().contains("manipulation.step_size"), "{err}");
        let err = Config::from_toml_str("[evaluation]\nnum_perms = 10\n").unwrap_err();
        assert!(err.to_string().contains("evaluation.num_perms"), "{err}");
        let err = Config::from_toml_str("schema_version = 9\n").unwrap_err();
        assert!(err.to_string().contains("schema_version"), "{err}");
        let err = Config::from_toml_str("[forest]\nnum_tres = 3\n").unwrap_err();
        assert!(err.to_string().contains("num_tres"), "{err}");
        let err = Config::from_toml_str("[split]\ntrain = 0.5\ncalibration = 0.2\neval = 0.2\n").unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn hash_ignores_seed_only() {
        let a = Config::default();
        let mut b = a.clone();
        b.seed = 99;
        assert_eq!(a.hash(), b.hash());
        b.manipulation.tradeoff = 0.02;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
