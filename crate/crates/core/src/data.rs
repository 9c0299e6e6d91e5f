//! Domain types, CSV ingestion, normalization and stratified splitting.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::rng;

/// A binary decision in {-1, +1}.
///
/// Serialized as the integer `-1` or `1`; every other encoding is rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn value(self) -> i8 {
        match self {
            Label::Negative => -1,
            Label::Positive => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.value())
    }

    /// Threshold rule shared by every probabilistic predictor: `p >= 0.5` is +1.
    pub fn from_prob(p: f64) -> Label {
        if p >= 0.5 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    /// Sign of a score with the same tie rule as [`Label::from_prob`]: 0 maps to +1.
    pub fn from_score(score: f64) -> Label {
        if score >= 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn flip(self) -> Label {
        match self {
            Label::Negative => Label::Positive,
            Label::Positive => Label::Negative,
        }
    }

    /// Maps to the {0, 1} target used by cross-entropy.
    pub fn as_target(self) -> f64 {
        match self {
            Label::Negative => 0.0,
            Label::Positive => 1.0,
        }
    }
}

impl TryFrom<i64> for Label {
    type Error = Error;

    fn try_from(v: i64) -> Result<Label> {
        match v {
            -1 => Ok(Label::Negative),
            1 => Ok(Label::Positive),
            other => Err(Error::InvalidLabel(other.to_string())),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:+}", self.value())
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i8(self.value())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Label, D::Error> {
        let v = i64::deserialize(d)?;
        Label::try_from(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Census,
    Recidivism,
    Bias,
    Toxicity,
    Synthetic,
}

/// Which group an adversary targets with positive decisions and which with
/// negative ones. Fairness differences are reported as
/// `rate(negative_group) - rate(positive_group)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupRoles {
    pub positive_group: String,
    pub negative_group: String,
}

impl TaskKind {
    pub fn default_vocab(self) -> Vec<String> {
        let v: &[&str] = match self {
            TaskKind::Census => &["male", "female"],
            TaskKind::Recidivism => &["black", "white"],
            TaskKind::Bias => &["dem", "rep"],
            TaskKind::Toxicity => &["white", "black"],
            TaskKind::Synthetic => &["A", "B"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }

    /// Fixed group roles for the four named tasks; synthetic tasks default to
    /// A → +1, B → −1 and may be overridden by configuration.
    pub fn default_roles(self) -> GroupRoles {
        let (pos, neg) = match self {
            TaskKind::Census => ("male", "female"),
            TaskKind::Recidivism => ("black", "white"),
            TaskKind::Bias => ("dem", "rep"),
            TaskKind::Toxicity => ("white", "black"),
            TaskKind::Synthetic => ("A", "B"),
        };
        GroupRoles {
            positive_group: pos.into(),
            negative_group: neg.into(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Census => "census",
            TaskKind::Recidivism => "recidivism",
            TaskKind::Bias => "bias",
            TaskKind::Toxicity => "toxicity",
            TaskKind::Synthetic => "synthetic",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<TaskKind> {
        match s {
            "census" => Ok(TaskKind::Census),
            "recidivism" => Ok(TaskKind::Recidivism),
            "bias" => Ok(TaskKind::Bias),
            "toxicity" => Ok(TaskKind::Toxicity),
            "synthetic" => Ok(TaskKind::Synthetic),
            other => Err(Error::Vocabulary {
                value: other.into(),
                allowed: ["census", "recidivism", "bias", "toxicity", "synthetic"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub features: Vec<f64>,
    pub label: Label,
    pub group: String,
    pub task_kind: TaskKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplanationKind {
    Shapley,
    Lime,
    Augmented,
    Manipulated,
}

impl ExplanationKind {
    pub fn name(self) -> &'static str {
        match self {
            ExplanationKind::Shapley => "shapley",
            ExplanationKind::Lime => "lime",
            ExplanationKind::Augmented => "augmented",
            ExplanationKind::Manipulated => "manipulated",
        }
    }
}

/// Signed per-feature contributions toward a +1 decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub attributions: Vec<f64>,
    pub kind: ExplanationKind,
}

impl Explanation {
    pub fn new(attributions: Vec<f64>, kind: ExplanationKind) -> Result<Self> {
        check_finite("explanation", &attributions)?;
        Ok(Explanation { attributions, kind })
    }

    pub fn len(&self) -> usize {
        self.attributions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributions.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.attributions.iter().sum()
    }

    /// Rescales so the largest absolute attribution is 1. The zero vector is
    /// returned unchanged.
    pub fn rescaled_max_abs(&self) -> Explanation {
        let m = self
            .attributions
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        let attributions = if m > 0.0 {
            self.attributions.iter().map(|v| v / m).collect()
        } else {
            self.attributions.clone()
        };
        Explanation {
            attributions,
            kind: self.kind,
        }
    }
}

/// One observed decision episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorRecord {
    pub instance: TaskInstance,
    pub ai_label: Label,
    pub explanation: Explanation,
    pub human_label: Label,
    #[serde(default)]
    pub participant: String,
}

impl BehaviorRecord {
    pub fn validate(&self) -> Result<()> {
        check_dim(
            "behavior record explanation",
            self.explanation.len(),
            self.instance.features.len(),
        )
    }
}

/// Per-column min-max parameters over the encoded feature columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub columns: Vec<String>,
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl Normalization {
    pub fn fit(columns: Vec<String>, rows: &[Vec<f64>]) -> Normalization {
        let n = columns.len();
        let mut mins = vec![f64::INFINITY; n];
        let mut maxs = vec![f64::NEG_INFINITY; n];
        for row in rows {
            for (j, &v) in row.iter().enumerate() {
                mins[j] = mins[j].min(v);
                maxs[j] = maxs[j].max(v);
            }
        }
        if rows.is_empty() {
            mins.iter_mut().for_each(|m| *m = 0.0);
            maxs.iter_mut().for_each(|m| *m = 0.0);
        }
        Normalization {
            columns,
            mins,
            maxs,
        }
    }

    /// Applies `(v - min) / (max - min)`; zero-range columns map to 0.
    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mins.iter().zip(&self.maxs))
            .map(|(&v, (&lo, &hi))| {
                let range = hi - lo;
                if range > 0.0 {
                    (v - lo) / range
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub instances: Vec<TaskInstance>,
    pub n: usize,
    pub group_vocab: Vec<String>,
    pub split_seed: u64,
    pub task_kind: TaskKind,
    pub feature_names: Vec<String>,
    #[serde(default)]
    pub normalization: Option<Normalization>,
}

impl Dataset {
    /// Builds a dataset, checking dimensions, finiteness, vocabulary and id uniqueness.
    pub fn new(
        instances: Vec<TaskInstance>,
        n: usize,
        group_vocab: Vec<String>,
        task_kind: TaskKind,
        feature_names: Vec<String>,
    ) -> Result<Dataset> {
        let ds = Dataset {
            instances,
            n,
            group_vocab,
            split_seed: 0,
            task_kind,
            feature_names,
            normalization: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("feature names", self.feature_names.len(), self.n)?;
        let mut ids = HashSet::with_capacity(self.instances.len());
        for inst in &self.instances {
            check_dim(&format!("instance {}", inst.id), inst.features.len(), self.n)?;
            check_finite(&format!("instance {}", inst.id), &inst.features)?;
            if !self.group_vocab.contains(&inst.group) {
                return Err(Error::Vocabulary {
                    value: inst.group.clone(),
                    allowed: self.group_vocab.clone(),
                });
            }
            if !ids.insert(inst.id.as_str()) {
                return Err(Error::contract(format!("duplicate instance id `{}`", inst.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn feature_matrix(&self) -> Vec<Vec<f64>> {
        self.instances.iter().map(|i| i.features.clone()).collect()
    }

    /// Column means of the feature matrix (zeros for an empty dataset).
    pub fn feature_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.n];
        if self.instances.is_empty() {
            return means;
        }
        for inst in &self.instances {
            for (m, v) in means.iter_mut().zip(&inst.features) {
                *m += v;
            }
        }
        let count = self.instances.len() as f64;
        means.iter_mut().for_each(|m| *m /= count);
        means
    }

    fn with_instances(&self, instances: Vec<TaskInstance>, split_seed: u64) -> Dataset {
        Dataset {
            instances,
            n: self.n,
            group_vocab: self.group_vocab.clone(),
            split_seed,
            task_kind: self.task_kind,
            feature_names: self.feature_names.clone(),
            normalization: self.normalization.clone(),
        }
    }

    pub fn to_json_file(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn from_json_file(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ds: Dataset = serde_json::from_str(&text)?;
        ds.validate()?;
        Ok(ds)
    }
}

/// How raw label cells map to {-1, +1}. Anything other than the literal
/// `-1`/`1` requires an explicit choice here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LabelEncoding {
    #[default]
    PlusMinusOne,
    ZeroOne,
    /// Cells equal to `positive` are +1, every other value is -1.
    Match { positive: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum FeatureColumn {
    Numeric {
        name: String,
    },
    /// One-hot encoded; `categories` fixes the column order. When empty the
    /// sorted distinct values in the file are used.
    Categorical {
        name: String,
        #[serde(default)]
        categories: Vec<String>,
    },
}

impl FeatureColumn {
    pub fn name(&self) -> &str {
        match self {
            FeatureColumn::Numeric { name } | FeatureColumn::Categorical { name, .. } => name,
        }
    }
}

/// Column layout of an input CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub task_kind: TaskKind,
    #[serde(default)]
    pub id_column: Option<String>,
    pub features: Vec<FeatureColumn>,
    pub label_column: String,
    #[serde(default)]
    pub label_encoding: LabelEncoding,
    pub group_column: String,
    /// Overrides the task kind's default group vocabulary.
    #[serde(default)]
    pub group_vocab: Option<Vec<String>>,
}

impl CsvSchema {
    fn parse_label(&self, cell: &str, row: usize) -> Result<Label> {
        let cell = cell.trim();
        let bad = || Error::Parse {
            row,
            column: self.label_column.clone(),
            value: cell.to_string(),
        };
        match &self.label_encoding {
            LabelEncoding::PlusMinusOne => {
                let v: f64 = cell.parse().map_err(|_| bad())?;
                if v == 1.0 {
                    Ok(Label::Positive)
                } else if v == -1.0 {
                    Ok(Label::Negative)
                } else {
                    Err(Error::InvalidLabel(cell.to_string()))
                }
            }
            LabelEncoding::ZeroOne => {
                let v: f64 = cell.parse().map_err(|_| bad())?;
                if v == 1.0 {
                    Ok(Label::Positive)
                } else if v == 0.0 {
                    Ok(Label::Negative)
                } else {
                    Err(Error::InvalidLabel(cell.to_string()))
                }
            }
            LabelEncoding::Match { positive } => Ok(if cell == positive {
                Label::Positive
            } else {
                Label::Negative
            }),
        }
    }
}

/// Reads a headed CSV, one-hot encodes categoricals and min-max normalizes
/// every encoded column. The fitted parameters are stored on the dataset.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_csv_reader(file, schema)
}

pub fn load_csv_reader<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
            })
    };
    let feature_idx: Vec<usize> = schema
        .features
        .iter()
        .map(|f| col(f.name()))
        .collect::<Result<_>>()?;
    let label_idx = col(&schema.label_column)?;
    let group_idx = col(&schema.group_column)?;
    let id_idx = schema.id_column.as_deref().map(col).transpose()?;

    let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;

    // Resolve category order before encoding.
    let mut categories: Vec<Vec<String>> = Vec::with_capacity(schema.features.len());
    for (f, &ci) in schema.features.iter().zip(&feature_idx) {
        categories.push(match f {
            FeatureColumn::Numeric { .. } => Vec::new(),
            FeatureColumn::Categorical { categories: c, .. } if !c.is_empty() => c.clone(),
            FeatureColumn::Categorical { .. } => records
                .iter()
                .map(|r| r[ci].to_string())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        });
    }
    let mut columns = Vec::new();
    for (f, cats) in schema.features.iter().zip(&categories) {
        match f {
            FeatureColumn::Numeric { name } => columns.push(name.clone()),
            FeatureColumn::Categorical { name, .. } => {
                columns.extend(cats.iter().map(|c| format!("{name}={c}")))
            }
        }
    }

    let vocab = schema
        .group_vocab
        .clone()
        .unwrap_or_else(|| schema.task_kind.default_vocab());

    let mut raw_rows = Vec::with_capacity(records.len());
    let mut meta = Vec::with_capacity(records.len());
    for (row, rec) in records.iter().enumerate() {
        let mut encoded = Vec::with_capacity(columns.len());
        for ((f, &ci), cats) in schema.features.iter().zip(&feature_idx).zip(&categories) {
            let cell = &rec[ci];
            match f {
                FeatureColumn::Numeric { name } => {
                    let v: f64 = cell.parse().map_err(|_| Error::Parse {
                        row,
                        column: name.clone(),
                        value: cell.to_string(),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Parse {
                            row,
                            column: name.clone(),
                            value: cell.to_string(),
                        });
                    }
                    encoded.push(v);
                }
                FeatureColumn::Categorical { .. } => {
                    if !cats.iter().any(|c| c == cell) {
                        return Err(Error::Vocabulary {
                            value: cell.to_string(),
                            allowed: cats.clone(),
                        });
                    }
                    encoded.extend(cats.iter().map(|c| if c == cell { 1.0 } else { 0.0 }));
                }
            }
        }
        let label = schema.parse_label(&rec[label_idx], row)?;
        let group = rec[group_idx].to_string();
        if !vocab.contains(&group) {
            return Err(Error::Vocabulary {
                value: group,
                allowed: vocab.clone(),
            });
        }
        let id = match id_idx {
            Some(i) => rec[i].to_string(),
            None => format!("row{row}"),
        };
        raw_rows.push(encoded);
        meta.push((id, label, group));
    }

    let norm = Normalization::fit(columns.clone(), &raw_rows);
    let instances = raw_rows
        .iter()
        .zip(meta)
        .map(|(raw, (id, label, group))| TaskInstance {
            id,
            features: norm.apply(raw),
            label,
            group,
            task_kind: schema.task_kind,
        })
        .collect();
    let mut ds = Dataset::new(instances, columns.len(), vocab, schema.task_kind, columns)?;
    ds.normalization = Some(norm);
    Ok(ds)
}

/// Fractions of a three-way split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub calibration: f64,
    pub eval: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.6,
            calibration: 0.2,
            eval: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub calibration: Dataset,
    pub eval: Dataset,
}

/// Largest-remainder allocation of `count` items over `fractions`.
fn allocate(count: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * count as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = e.floor() as usize;
    }
    let mut remaining = count - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        sizes[i] += 1;
        remaining -= 1;
    }
    sizes
}

/// Group-stratified, seeded partition into train / calibration / eval.
pub fn split(dataset: &Dataset, fractions: SplitFractions, seed: u64) -> Result<Splits> {
    let f = [fractions.train, fractions.calibration, fractions.eval];
    if f.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::contract("split fractions must be positive"));
    }
    let total: f64 = f.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!(
            "split fractions must sum to 1, got {total}"
        )));
    }

    let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, inst) in dataset.instances.iter().enumerate() {
        by_group.entry(inst.group.as_str()).or_default().push(i);
    }

    let mut parts: [Vec<usize>; 3] = Default::default();
    for (group, mut idx) in by_group {
        let mut rng = rng::derived_rng(seed, &[rng::tag("split"), rng::tag(group)]);
        idx.shuffle(&mut rng);
        let sizes = allocate(idx.len(), &f);
        if let Some(k) = sizes.iter().position(|&s| s == 0) {
            let name = ["train", "calibration", "eval"][k];
            return Err(Error::Stratification(format!(
                "group `{group}` has {} instances; the {name} split would receive none",
                idx.len()
            )));
        }
        let mut start = 0;
        for (part, size) in parts.iter_mut().zip(sizes) {
            part.extend_from_slice(&idx[start..start + size]);
            start += size;
        }
    }

    let take = |mut idx: Vec<usize>| {
        idx.sort_unstable();
        dataset.with_instances(
            idx.into_iter().map(|i| dataset.instances[i].clone()).collect(),
            seed,
        )
    };
    let [train, calibration, eval] = parts;
    Ok(Splits {
        train: take(train),
        calibration: take(calibration),
        eval: take(eval),
    })
}
