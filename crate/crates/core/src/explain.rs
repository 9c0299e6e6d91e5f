//! Feature-attribution explainers: exact interventional Shapley values,
//! a LIME-style weighted ridge surrogate, and random mask/amplify
//! augmentation of an existing explanation.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Explanation, ExplanationKind};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::model::{DecisionTree, ForestModel, Node, ProbabilisticModel};
use crate::rng;

pub const DEFAULT_MAX_SHAPLEY_FEATURES: usize = 15;
pub const MAX_BACKGROUND_ROWS: usize = 64;

/// Deterministic background sample of at most `cap` rows.
pub fn background_sample(data: &Dataset, cap: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rows = data.feature_matrix();
    if rows.len() > cap {
        let mut r = rng::derived_rng(seed, &[rng::tag("background")]);
        rows.shuffle(&mut r);
        rows.truncate(cap);
    }
    rows
}

/// Column means of a background sample.
pub fn background_means(background: &[Vec<f64>]) -> Vec<f64> {
    let n = background.first().map_or(0, Vec::len);
    let mut means = vec![0.0; n];
    for row in background {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    let count = background.len().max(1) as f64;
    means.iter_mut().for_each(|m| *m /= count);
    means
}

/// Exact Shapley values of `model` at `x` with interventional background
/// replacement.
pub fn exact_shapley<M: ProbabilisticModel + ?Sized>(
    model: &M,
    x: &[f64],
    background: &[Vec<f64>],
    max_n: usize,
) -> Result<Explanation> {
    check_dim("shapley input", x.len(), model.feature_dim())?;
    exact_shapley_with(|z| model.prob(z), x, background, max_n)
}

/// Shapley values for an arbitrary prediction function `f`, where the value
/// of coalition S is the mean of `f` over background rows with the features
/// in S taken from `x`.
pub fn exact_shapley_with<F: Fn(&[f64]) -> f64>(
    f: F,
    x: &[f64],
    background: &[Vec<f64>],
    max_n: usize,
) -> Result<Explanation> {
    let values = coalition_values(&f, x, background, max_n)?;
    let phi = shapley_from_values(x.len(), &values);
    Explanation::new(phi, ExplanationKind::Shapley)
}

/// v(S) for every coalition S, indexed by bitmask.
pub fn coalition_values<F: Fn(&[f64]) -> f64>(
    f: &F,
    x: &[f64],
    background: &[Vec<f64>],
    max_n: usize,
) -> Result<Vec<f64>> {
    let n = x.len();
    if n > max_n {
        return Err(Error::TooManyFeatures { n, max_n });
    }
    if background.is_empty() {
        return Err(Error::contract("shapley background is empty"));
    }
    check_finite("shapley input", x)?;
    for row in background {
        check_dim("background row", row.len(), n)?;
    }
    let mut z = vec![0.0; n];
    let values = (0..1usize << n)
        .map(|mask| {
            let total: f64 = background
                .iter()
                .map(|row| {
                    for j in 0..n {
                        z[j] = if mask >> j & 1 == 1 { x[j] } else { row[j] };
                    }
                    f(&z)
                })
                .sum();
            total / background.len() as f64
        })
        .collect();
    Ok(values)
}

/// Combines coalition values with the Shapley weights |S|!(n-|S|-1)!/n!.
pub fn shapley_from_values(n: usize, values: &[f64]) -> Vec<f64> {
    // weight[k] for |S| = k
    let mut fact = vec![1.0f64; n + 1];
    for k in 1..=n {
        fact[k] = fact[k - 1] * k as f64;
    }
    let weight: Vec<f64> = (0..n)
        .map(|k| fact[k] * fact[n - k - 1] / fact[n])
        .collect();
    (0..n)
        .map(|i| {
            let bit = 1usize << i;
            (0..1usize << n)
                .filter(|s| s & bit == 0)
                .map(|s| weight[s.count_ones() as usize] * (values[s | bit] - values[s]))
                .sum()
        })
        .collect()
}

/// Exact interventional Shapley values of a forest's vote fraction. Each
/// (tree, background row) pair is a sum of games "reach leaf L", and each
/// such game has a closed-form Shapley value given the features that must
/// come from `x` and those that must come from the background row.
pub fn forest_shapley(forest: &ForestModel, x: &[f64], background: &[Vec<f64>]) -> Result<Explanation> {
    let n = x.len();
    check_dim("shapley input", n, forest.feature_dim)?;
    check_finite("shapley input", x)?;
    if n > 64 {
        return Err(Error::TooManyFeatures { n, max_n: 64 });
    }
    if background.is_empty() {
        return Err(Error::contract("shapley background is empty"));
    }
    let mut fact = vec![1.0f64; n + 1];
    for k in 1..=n {
        fact[k] = fact[k - 1] * k as f64;
    }
    let mut phi = vec![0.0; n];
    for row in background {
        check_dim("background row", row.len(), n)?;
        for tree in &forest.trees {
            walk_paths(tree, 0, x, row, 0, 0, &fact, &mut phi);
        }
    }
    let scale = (forest.trees.len() * background.len()) as f64;
    phi.iter_mut().for_each(|p| *p /= scale);
    Explanation::new(phi, ExplanationKind::Shapley)
}

#[allow(clippy::too_many_arguments)]
fn walk_paths(tree: &DecisionTree, i: usize, x: &[f64], z: &[f64], from_x: u64, from_z: u64, fact: &[f64], phi: &mut [f64]) {
    match &tree.nodes[i] {
        Node::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            let bit = 1u64 << feature;
            let x_child = if x[*feature] <= *threshold { *left } else { *right };
            let z_child = if z[*feature] <= *threshold { *left } else { *right };
            if x_child == z_child {
                walk_paths(tree, x_child, x, z, from_x, from_z, fact, phi);
                return;
            }
            if from_z & bit == 0 {
                walk_paths(tree, x_child, x, z, from_x | bit, from_z, fact, phi);
            }
            if from_x & bit == 0 {
                walk_paths(tree, z_child, x, z, from_x, from_z | bit, fact, phi);
            }
        }
        Node::Leaf {
            negatives,
            positives,
        } => {
            if positives < negatives {
                return;
            }
            let a = from_x.count_ones() as usize;
            let b = from_z.count_ones() as usize;
            if a > 0 {
                let w = fact[a - 1] * fact[b] / fact[a + b];
                for_bits(from_x, |j| phi[j] += w);
            }
            if b > 0 {
                let w = fact[a] * fact[b - 1] / fact[a + b];
                for_bits(from_z, |j| phi[j] -= w);
            }
        }
    }
}

fn for_bits(mut mask: u64, mut f: impl FnMut(usize)) {
    while mask != 0 {
        let j = mask.trailing_zeros() as usize;
        f(j);
        mask &= mask - 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimeConfig {
    pub num_samples: usize,
    pub kernel_width: f64,
    pub ridge: f64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig {
            num_samples: 500,
            kernel_width: 0.75,
            ridge: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimeFit {
    pub explanation: Explanation,
    pub intercept: f64,
    /// Weighted R² of the surrogate on its own perturbation sample.
    pub r_squared: f64,
}

/// LIME-style attributions: coefficients of a kernel-weighted ridge fit of
/// the model probability on "feature kept" indicators, where dropped
/// features are replaced by their background mean.
pub fn lime_explain<M: ProbabilisticModel + ?Sized>(
    model: &M,
    x: &[f64],
    means: &[f64],
    config: &LimeConfig,
    seed: u64,
) -> Result<Explanation> {
    lime_fit(model, x, means, config, seed).map(|fit| fit.explanation)
}

pub fn lime_fit<M: ProbabilisticModel + ?Sized>(
    model: &M,
    x: &[f64],
    means: &[f64],
    config: &LimeConfig,
    seed: u64,
) -> Result<LimeFit> {
    let n = x.len();
    check_dim("lime input", n, model.feature_dim())?;
    check_dim("lime background means", means.len(), n)?;
    check_finite("lime input", x)?;
    if config.num_samples < 10 * n {
        return Err(Error::contract(format!(
            "lime needs at least {} samples for {n} features, got {}",
            10 * n,
            config.num_samples
        )));
    }
    if !(config.kernel_width > 0.0) {
        return Err(Error::contract("lime kernel width must be positive"));
    }

    let mut r = rng::rng_from(seed);
    let mut masks: Vec<Vec<f64>> = Vec::with_capacity(config.num_samples);
    let mut targets = Vec::with_capacity(config.num_samples);
    let mut weights = Vec::with_capacity(config.num_samples);
    let mut z = vec![0.0; n];
    for s in 0..config.num_samples {
        // first sample is the unperturbed instance
        let keep: Vec<f64> = (0..n)
            .map(|_| if s == 0 || r.random_bool(0.5) { 1.0 } else { 0.0 })
            .collect();
        for j in 0..n {
            z[j] = if keep[j] == 1.0 { x[j] } else { means[j] };
        }
        let dropped = keep.iter().filter(|&&k| k == 0.0).count();
        let d = dropped as f64 / n.max(1) as f64;
        weights.push((-(d * d) / (config.kernel_width * config.kernel_width)).exp());
        targets.push(model.prob(&z));
        masks.push(keep);
    }

    let mut ridge = config.ridge;
    let mut coef = None;
    for _attempt in 0..=3 {
        if let Some(c) = weighted_ridge(&masks, &targets, &weights, ridge) {
            coef = Some(c);
            break;
        }
        ridge *= 10.0;
    }
    let coef = coef.ok_or(Error::DegenerateDesign { attempts: 3 })?;
    let intercept = coef[0];
    let attributions = coef[1..].to_vec();

    let wsum: f64 = weights.iter().sum();
    let mean_y = weights.iter().zip(&targets).map(|(w, y)| w * y).sum::<f64>() / wsum;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for ((m, y), w) in masks.iter().zip(&targets).zip(&weights) {
        let pred = intercept + m.iter().zip(&attributions).map(|(a, b)| a * b).sum::<f64>();
        ss_res += w * (y - pred).powi(2);
        ss_tot += w * (y - mean_y).powi(2);
    }
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    log::debug!("lime surrogate R² = {r_squared:.4}");

    Ok(LimeFit {
        explanation: Explanation::new(attributions, ExplanationKind::Lime)?,
        intercept,
        r_squared,
    })
}

/// Solves the weighted ridge normal equations with an unpenalized
/// intercept. Returns `None` when a pivot collapses.
fn weighted_ridge(rows: &[Vec<f64>], y: &[f64], w: &[f64], ridge: f64) -> Option<Vec<f64>> {
    let p = rows.first().map_or(0, Vec::len) + 1;
    let mut a = vec![vec![0.0; p + 1]; p];
    for ((row, &yi), &wi) in rows.iter().zip(y).zip(w) {
        let xi: Vec<f64> = std::iter::once(1.0).chain(row.iter().copied()).collect();
        for r in 0..p {
            for c in 0..p {
                a[r][c] += wi * xi[r] * xi[c];
            }
            a[r][p] += wi * xi[r] * yi;
        }
    }
    for (d, row) in a.iter_mut().enumerate().skip(1) {
        row[d] += ridge;
    }
    solve_augmented(a)
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
pub(crate) fn solve_augmented(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let p = a.len();
    let scale = a
        .iter()
        .flat_map(|r| r[..p].iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    for col in 0..p {
        let piv = (col..p).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, piv);
        for r in 0..p {
            if r != col {
                let factor = a[r][col] / a[col][col];
                if factor != 0.0 {
                    for c in col..=p {
                        a[r][c] -= factor * a[col][c];
                    }
                }
            }
        }
    }
    Some((0..p).map(|i| a[i][p] / a[i][i]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub mask_frac: f64,
    pub amp_frac: f64,
    pub amp_factor: f64,
    /// Fraction of attributions, disjoint from the masked and amplified
    /// ones, whose sign is flipped. Off by default.
    #[serde(default)]
    pub flip_frac: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            mask_frac: 0.3,
            amp_frac: 0.2,
            amp_factor: 2.0,
            flip_frac: 0.0,
        }
    }
}

/// Zeroes a random `mask_frac` of the attributions, multiplies a disjoint
/// random `amp_frac` by `amp_factor` and negates a further `flip_frac`.
pub fn augment(e: &Explanation, config: &AugmentConfig, seed: u64) -> Result<Explanation> {
    let AugmentConfig {
        mask_frac,
        amp_frac,
        amp_factor,
        flip_frac,
    } = *config;
    if [mask_frac, amp_frac, flip_frac].iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::contract("mask_frac, amp_frac and flip_frac must lie in [0, 1]"));
    }
    if mask_frac + amp_frac + flip_frac > 1.0 {
        return Err(Error::contract("mask_frac + amp_frac + flip_frac must not exceed 1"));
    }
    if !amp_factor.is_finite() {
        return Err(Error::contract("amp_factor must be finite"));
    }
    let n = e.len();
    let n_mask = ((mask_frac * n as f64).round() as usize).min(n);
    let n_amp = ((amp_frac * n as f64).round() as usize).min(n - n_mask);
    let n_flip = ((flip_frac * n as f64).round() as usize).min(n - n_mask - n_amp);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng_from(seed));
    let mut out = augment_at(
        e,
        &order[..n_mask],
        &order[n_mask..n_mask + n_amp],
        amp_factor,
    );
    for &i in &order[n_mask + n_amp..n_mask + n_amp + n_flip] {
        out.attributions[i] = -out.attributions[i];
    }
    Ok(out)
}

/// Deterministic core of [`augment`] for explicit index sets.
pub fn augment_at(e: &Explanation, masked: &[usize], amplified: &[usize], factor: f64) -> Explanation {
    let mut attributions = e.attributions.clone();
    for &i in masked {
        attributions[i] = 0.0;
    }
    for &i in amplified {
        attributions[i] *= factor;
    }
    Explanation {
        attributions,
        kind: ExplanationKind::Augmented,
    }
}
