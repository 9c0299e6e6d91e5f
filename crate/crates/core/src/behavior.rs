//! Two-layer network predicting P(human decides +1) from the task features,
//! the AI recommendation, the explanation and their elementwise product.
//! Trained by maximum likelihood with Adam.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{BehaviorRecord, Explanation, Label};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::model::sigmoid;
use crate::rng;

/// Builds `[x, y_m, e, x ⊙ e]`.
pub fn encode(x: &[f64], ai_label: Label, e: &Explanation) -> Result<Vec<f64>> {
    encode_raw(x, ai_label, &e.attributions)
}

pub fn encode_raw(x: &[f64], ai_label: Label, e: &[f64]) -> Result<Vec<f64>> {
    check_dim("explanation vs features", e.len(), x.len())?;
    let mut v = Vec::with_capacity(3 * x.len() + 1);
    v.extend_from_slice(x);
    v.push(ai_label.as_f64());
    v.extend_from_slice(e);
    v.extend(x.iter().zip(e).map(|(a, b)| a * b));
    Ok(v)
}

pub fn encoded_dim(n: usize) -> usize {
    3 * n + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub hidden_dim: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 128,
            epochs: 10,
            hidden_dim: 64,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: &str| Err(Error::config(format!("behavior.{f}"), m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim", "must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1", "moment decays must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", "must be positive");
        }
        Ok(())
    }
}

/// `p = sigmoid(w2 · relu(W1 v + b1) + b2)`. `w1` is row-major
/// `hidden_dim × input_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorModel {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub activation: Activation,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub train_config: TrainConfig,
}

/// Gradient of a scalar with respect to every parameter, same layout as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl ParamGrad {
    fn zeros(m: &BehaviorModel) -> Self {
        ParamGrad {
            w1: vec![0.0; m.w1.len()],
            b1: vec![0.0; m.b1.len()],
            w2: vec![0.0; m.w2.len()],
            b2: 0.0,
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.w1.clone();
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.push(self.b2);
        v
    }
}

/// Numerically stable binary cross-entropy from a logit.
pub fn bce_from_logit(z: f64, target: f64) -> f64 {
    // softplus(z) - t z
    let softplus = if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    };
    softplus - target * z
}

impl BehaviorModel {
    /// PyTorch-style uniform initialization in ±1/√fan_in.
    pub fn init(n: usize, config: &TrainConfig) -> BehaviorModel {
        let input_dim = encoded_dim(n);
        let h = config.hidden_dim;
        let mut r = rng::derived_rng(config.seed, &[rng::tag("behavior-init")]);
        let b_in = 1.0 / (input_dim as f64).sqrt();
        let b_hid = 1.0 / (h as f64).sqrt();
        let mut uni = |b: f64, k: usize| -> Vec<f64> {
            (0..k).map(|_| r.random_range(-b..b)).collect()
        };
        let w1 = uni(b_in, h * input_dim);
        let b1 = uni(b_in, h);
        let w2 = uni(b_hid, h);
        let b2 = uni(b_hid, 1)[0];
        BehaviorModel {
            input_dim,
            hidden_dim: h,
            activation: Activation::Relu,
            w1,
            b1,
            w2,
            b2,
            train_config: config.clone(),
        }
    }

    /// Model whose every weight and bias is zero; it outputs 0.5 everywhere.
    pub fn zeros(n: usize, hidden_dim: usize) -> BehaviorModel {
        let input_dim = encoded_dim(n);
        BehaviorModel {
            input_dim,
            hidden_dim,
            activation: Activation::Relu,
            w1: vec![0.0; hidden_dim * input_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; hidden_dim],
            b2: 0.0,
            train_config: TrainConfig {
                hidden_dim,
                ..TrainConfig::default()
            },
        }
    }

    pub fn feature_dim(&self) -> usize {
        (self.input_dim - 1) / 3
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim % 3 != 1 {
            return Err(Error::contract("behavior input_dim must equal 3n+1"));
        }
        check_dim("w1", self.w1.len(), self.hidden_dim * self.input_dim)?;
        check_dim("b1", self.b1.len(), self.hidden_dim)?;
        check_dim("w2", self.w2.len(), self.hidden_dim)?;
        check_finite("behavior parameters", &self.flat_params())
    }

    fn hidden_pre(&self, v: &[f64]) -> Vec<f64> {
        self.w1
            .chunks_exact(self.input_dim)
            .zip(&self.b1)
            .map(|(row, b)| b + row.iter().zip(v).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    /// Output logit for an encoded input, without validation.
    pub fn logit(&self, v: &[f64]) -> f64 {
        let pre = self.hidden_pre(v);
        self.b2
            + pre
                .iter()
                .zip(&self.w2)
                .map(|(a, w)| w * a.max(0.0))
                .sum::<f64>()
    }

    /// P(y^h = +1) for an encoded input.
    pub fn forward(&self, encoded: &[f64]) -> Result<f64> {
        check_dim("behavior input", encoded.len(), self.input_dim)?;
        check_finite("behavior input", encoded)?;
        Ok(sigmoid(self.logit(encoded)))
    }

    pub fn predict_prob(&self, x: &[f64], ai_label: Label, e: &[f64]) -> Result<f64> {
        self.forward(&encode_raw(x, ai_label, e)?)
    }

    /// Logit and its gradient with respect to the encoded input. The ReLU
    /// derivative at 0 is taken as 0.
    pub fn logit_and_input_grad(&self, v: &[f64]) -> (f64, Vec<f64>) {
        let pre = self.hidden_pre(v);
        let mut z = self.b2;
        let mut grad = vec![0.0; self.input_dim];
        for ((a, w2), row) in pre.iter().zip(&self.w2).zip(self.w1.chunks_exact(self.input_dim)) {
            if *a > 0.0 {
                z += w2 * a;
                for (g, w) in grad.iter_mut().zip(row) {
                    *g += w2 * w;
                }
            }
        }
        (z, grad)
    }

    /// Adds the gradient of `scale * bce(logit(v), target)` to `acc` and returns the loss.
    fn accumulate(&self, v: &[f64], target: f64, scale: f64, acc: &mut ParamGrad) -> f64 {
        let pre = self.hidden_pre(v);
        let z = self.b2
            + pre
                .iter()
                .zip(&self.w2)
                .map(|(a, w)| w * a.max(0.0))
                .sum::<f64>();
        let dz = scale * (sigmoid(z) - target);
        acc.b2 += dz;
        for (j, a) in pre.iter().enumerate() {
            if *a > 0.0 {
                acc.w2[j] += dz * a;
                let dh = dz * self.w2[j];
                acc.b1[j] += dh;
                let row = &mut acc.w1[j * self.input_dim..(j + 1) * self.input_dim];
                for (g, x) in row.iter_mut().zip(v) {
                    *g += dh * x;
                }
            }
        }
        bce_from_logit(z, target)
    }

    /// Mean cross-entropy over `(encoded, target)` pairs and its parameter gradient.
    pub fn loss_and_grad(&self, batch: &[(&[f64], f64)]) -> (f64, ParamGrad) {
        let mut g = ParamGrad::zeros(self);
        let scale = 1.0 / batch.len().max(1) as f64;
        let loss = batch
            .iter()
            .map(|(v, t)| self.accumulate(v, *t, scale, &mut g))
            .sum::<f64>()
            * scale;
        (loss, g)
    }

    pub fn mean_loss(&self, data: &[(Vec<f64>, f64)]) -> f64 {
        data.iter()
            .map(|(v, t)| bce_from_logit(self.logit(v), *t))
            .sum::<f64>()
            / data.len().max(1) as f64
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = self.w1.clone();
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn set_flat_params(&mut self, p: &[f64]) {
        let (a, rest) = p.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, rest) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2 = rest[0];
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(size: usize) -> Self {
        Adam {
            m: vec![0.0; size],
            v: vec![0.0; size],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training-set loss after each epoch.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
    pub steps: usize,
    /// Every record carried the same human label.
    pub class_collapse: bool,
}

fn encode_records(records: &[BehaviorRecord]) -> Result<Vec<(Vec<f64>, f64)>> {
    let n = records
        .first()
        .ok_or_else(|| Error::contract("no behavior records"))?
        .instance
        .features
        .len();
    records
        .iter()
        .map(|r| {
            r.validate()?;
            check_dim("behavior record features", r.instance.features.len(), n)?;
            let v = encode(&r.instance.features, r.ai_label, &r.explanation)?;
            check_finite("behavior record", &v)?;
            Ok((v, r.human_label.as_target()))
        })
        .collect()
}

/// Fits a fresh model by minibatch Adam on mean cross-entropy.
pub fn train(records: &[BehaviorRecord], config: &TrainConfig) -> Result<(BehaviorModel, TrainReport)> {
    config.validate()?;
    let data = encode_records(records)?;
    let n = records[0].instance.features.len();
    let positives = data.iter().filter(|(_, t)| *t == 1.0).count();
    let class_collapse = positives == 0 || positives == data.len();
    if class_collapse {
        log::warn!("all behavior records carry the same human label; the model will collapse to one class");
    }

    let mut model = BehaviorModel::init(n, config);
    let mut params = model.flat_params();
    let mut adam = Adam::new(params.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = rng::derived_rng(config.seed, &[rng::tag("behavior-shuffle")]);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut steps = 0;
    for _epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[f64], f64)> = chunk
                .iter()
                .map(|&i| (data[i].0.as_slice(), data[i].1))
                .collect();
            let (_, grad) = model.loss_and_grad(&batch);
            adam.step(&mut params, &grad.flat(), config);
            model.set_flat_params(&params);
            steps += 1;
        }
        epoch_losses.push(model.mean_loss(&data));
    }
    let final_loss = *epoch_losses.last().unwrap_or(&f64::NAN);
    Ok((
        model,
        TrainReport {
            epoch_losses,
            final_loss,
            steps,
            class_collapse,
        },
    ))
}

/// Fraction of records whose thresholded prediction equals the human label.
pub fn accuracy(model: &BehaviorModel, records: &[BehaviorRecord]) -> Result<f64> {
    let data = encode_records(records)?;
    let hits = data
        .iter()
        .filter(|(v, t)| Label::from_prob(sigmoid(model.logit(v))).as_target() == *t)
        .count();
    Ok(hits as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub mean_accuracy: f64,
    pub fold_accuracies: Vec<f64>,
    pub fold_sizes: Vec<usize>,
}

/// Stratified fold assignment: records are grouped by human label, shuffled
/// within each class, concatenated and dealt round-robin.
pub fn stratified_folds(records: &[BehaviorRecord], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::contract("cross-validation needs k >= 2"));
    }
    if records.len() < k {
        return Err(Error::contract(format!(
            "{} records cannot fill {k} folds",
            records.len()
        )));
    }
    let mut r = rng::derived_rng(seed, &[rng::tag("cv-folds")]);
    let mut order = Vec::with_capacity(records.len());
    for label in [Label::Negative, Label::Positive] {
        let mut idx: Vec<usize> = (0..records.len())
            .filter(|&i| records[i].human_label == label)
            .collect();
        idx.shuffle(&mut r);
        order.extend(idx);
    }
    let mut folds = vec![Vec::new(); k];
    for (pos, i) in order.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    for (f, fold) in folds.iter_mut().enumerate() {
        fold.sort_unstable();
        let pos = fold
            .iter()
            .filter(|&&i| records[i].human_label == Label::Positive)
            .count();
        if pos == 0 || pos == fold.len() {
            return Err(Error::Stratification(format!(
                "fold {f} does not contain both human decisions"
            )));
        }
    }
    Ok(folds)
}

/// k-fold cross-validated accuracy; fold `f`'s model is trained on all other folds.
pub fn cross_validate(records: &[BehaviorRecord], k: usize, config: &TrainConfig) -> Result<CvReport> {
    let folds = stratified_folds(records, k, config.seed)?;
    let mut fold_accuracies = Vec::with_capacity(k);
    for (f, test_idx) in folds.iter().enumerate() {
        let train_set: Vec<BehaviorRecord> = folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, idx)| idx.iter().map(|&i| records[i].clone()))
            .collect();
        let test_set: Vec<BehaviorRecord> = test_idx.iter().map(|&i| records[i].clone()).collect();
        let fold_cfg = TrainConfig {
            seed: rng::derive_seed(config.seed, &[rng::tag("cv-train"), f as u64]),
            ..config.clone()
        };
        let (model, _) = train(&train_set, &fold_cfg)?;
        fold_accuracies.push(accuracy(&model, &test_set)?);
    }
    let mean_accuracy = fold_accuracies.iter().sum::<f64>() / k as f64;
    Ok(CvReport {
        mean_accuracy,
        fold_accuracies,
        fold_sizes: folds.iter().map(Vec::len).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ExplanationKind, TaskInstance, TaskKind};

    fn record(x: Vec<f64>, ym: Label, e: Vec<f64>, yh: Label, id: usize) -> BehaviorRecord {
        BehaviorRecord {
            instance: TaskInstance {
                id: format!("r{id}"),
                features: x,
                label: yh,
                group: "A".into(),
                task_kind: TaskKind::Synthetic,
            },
            ai_label: ym,
            explanation: Explanation {
                attributions: e,
                kind: ExplanationKind::Shapley,
            },
            human_label: yh,
            participant: String::new(),
        }
    }

    fn logistic_records(m: usize, n: usize, seed: u64) -> Vec<BehaviorRecord> {
        let mut r = rng::rng_from(seed);
        let w: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        (0..m)
            .map(|i| {
                let x: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
                let e: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
                let ym = if r.random_bool(0.5) { Label::Positive } else { Label::Negative };
                let score = 2.0 * ym.as_f64()
                    + x.iter().zip(&w).map(|(a, b)| (a - 0.5) * b).sum::<f64>()
                    + e.iter().sum::<f64>();
                let yh = if r.random::<f64>() < sigmoid(4.0 * score) {
                    Label::Positive
                } else {
                    Label::Negative
                };
                record(x, ym, e, yh, i)
            })
            .collect()
    }

    #[test]
    fn encode_example() {
        let e = Explanation::new(vec![0.5, -0.5], ExplanationKind::Shapley).unwrap();
        let v = encode(&[1.0, 0.0], Label::Positive, &e).unwrap();
        assert_eq!(v, vec![1.0, 0.0, 1.0, 0.5, -0.5, 0.5, 0.0]);
        assert_eq!(encoded_dim(7), 22);
        let zero = encode_raw(&[0.3, 0.9], Label::Negative, &[0.0, 0.0]).unwrap();
        assert_eq!(&zero[5..], &[0.0, 0.0]);
        assert!(encode_raw(&[0.3], Label::Negative, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_model_outputs_half() {
        let m = BehaviorModel::zeros(3, 8);
        let v = encode_raw(&[0.1, 0.2, 0.3], Label::Positive, &[1.0, -1.0, 0.5]).unwrap();
        assert_eq!(m.forward(&v).unwrap(), 0.5);
        assert!(m.forward(&v[1..]).is_err());
        let mut bad = v.clone();
        bad[0] = f64::NAN;
        assert!(m.forward(&bad).is_err());
    }

    #[test]
    fn output_is_strictly_inside_unit_interval() {
        let m = BehaviorModel::init(4, &TrainConfig::default());
        let mut r = rng::rng_from(8);
        for _ in 0..200 {
            let v: Vec<f64> = (0..13).map(|_| r.random_range(-5.0..5.0)).collect();
            let p = m.forward(&v).unwrap();
            assert!(p > 0.0 && p < 1.0);
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let cfg = TrainConfig {
            hidden_dim: 8,
            seed: 5,
            ..TrainConfig::default()
        };
        let m = BehaviorModel::init(3, &cfg);
        let mut r = rng::rng_from(2);
        let v: Vec<f64> = (0..10).map(|_| r.random_range(-1.0..1.0)).collect();
        let (_, g) = m.logit_and_input_grad(&v);
        let p = sigmoid(m.logit(&v));
        let h = 1e-6;
        for i in 0..v.len() {
            let mut up = v.clone();
            up[i] += h;
            let mut dn = v.clone();
            dn[i] -= h;
            let fd = (sigmoid(m.logit(&up)).ln() - sigmoid(m.logit(&dn)).ln()) / (2.0 * h);
            // d log p / dv = (1 - p) dz/dv
            assert!(rel_err((1.0 - p) * g[i], fd) < 1e-4, "coord {i}");
        }
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let cfg = TrainConfig {
            hidden_dim: 8,
            seed: 1,
            ..TrainConfig::default()
        };
        let records = logistic_records(6, 3, 3);
        let data = encode_records(&records).unwrap();
        let batch: Vec<(&[f64], f64)> = data.iter().map(|(v, t)| (v.as_slice(), *t)).collect();
        let mut m = BehaviorModel::init(3, &cfg);
        let (_, g) = m.loss_and_grad(&batch);
        let g = g.flat();
        let p0 = m.flat_params();
        let h = 1e-6;
        for i in 0..p0.len() {
            let mut p = p0.clone();
            p[i] += h;
            m.set_flat_params(&p);
            let up = m.loss_and_grad(&batch).0;
            p[i] -= 2.0 * h;
            m.set_flat_params(&p);
            let dn = m.loss_and_grad(&batch).0;
            let fd = (up - dn) / (2.0 * h);
            assert!(
                rel_err(g[i], fd) < 1e-4 || (g[i] - fd).abs() < 1e-9,
                "param {i}: {} vs {fd}",
                g[i]
            );
        }
    }

    #[test]
    fn step_count_follows_config() {
        let records = logistic_records(1280, 2, 4);
        let (_, report) = train(&records, &TrainConfig::default()).unwrap();
        assert_eq!(report.steps, 100);
        assert_eq!(report.epoch_losses.len(), 10);
        assert!(report.epoch_losses[9] <= report.epoch_losses[0]);
    }

    #[test]
    fn learns_logistic_generator() {
        let records = logistic_records(6000, 3, 6);
        let (train_set, test_set) = records.split_at(5000);
        let cfg = TrainConfig {
            seed: 3,
            ..TrainConfig::default()
        };
        let (m, _) = train(train_set, &cfg).unwrap();
        let acc = accuracy(&m, test_set).unwrap();
        assert!(acc >= 0.9, "held-out accuracy {acc}");
    }

    #[test]
    fn training_is_deterministic() {
        let records = logistic_records(300, 2, 7);
        let cfg = TrainConfig::default();
        assert_eq!(train(&records, &cfg).unwrap(), train(&records, &cfg).unwrap());
    }

    #[test]
    fn class_collapse_is_flagged() {
        let mut records = logistic_records(50, 2, 9);
        for r in &mut records {
            r.human_label = Label::Positive;
        }
        let (_, report) = train(&records, &TrainConfig::default()).unwrap();
        assert!(report.class_collapse);
    }

    #[test]
    fn folds_are_balanced() {
        let records = logistic_records(100, 2, 10);
        let folds = stratified_folds(&records, 5, 1).unwrap();
        assert!(folds.iter().all(|f| f.len() == 20));
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn shuffled_labels_give_chance_accuracy() {
        let mut records = logistic_records(2000, 3, 11);
        let mut r = rng::rng_from(12);
        for rec in &mut records {
            rec.human_label = if r.random_bool(0.5) { Label::Positive } else { Label::Negative };
        }
        let cv = cross_validate(&records, 5, &TrainConfig::default()).unwrap();
        assert!((cv.mean_accuracy - 0.5).abs() <= 0.05, "{}", cv.mean_accuracy);
    }

    #[test]
    fn fold_without_both_classes_is_rejected() {
        let mut records = logistic_records(20, 2, 13);
        for (i, r) in records.iter_mut().enumerate() {
            r.human_label = if i == 0 { Label::Positive } else { Label::Negative };
        }
        assert!(matches!(
            stratified_folds(&records, 5, 0),
            Err(Error::Stratification(_))
        ));
    }
}
