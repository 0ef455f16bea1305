//! Pairwise matrix-factorization training with an optional
//! disparate-relevance regularizer.
//!
//! The objective per batch is `(1 - lambda) * acc + lambda * reg`, where
//! `acc` is the mean pairwise logistic loss over (user, observed,
//! unobserved) triplets plus an L2 penalty on the embedding rows the
//! batch touches, and `reg` is the squared gap between the batch's
//! minority relevance share and the minority's catalog contribution.
//! Updates are sparse Adam steps; gradients flow through both the
//! numerator and the denominator of the regularizer's quotient.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{rank_top_k, Dataset, GroupStats, SensitiveRepresentation};
use crate::sampler::{Triplet, TripletSet};

/// User/item embedding matrices with a dot-product scoring function.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub num_users: usize,
    pub num_items: usize,
    pub dim: usize,
    /// Row-major num_users x dim.
    pub user_factors: Vec<f64>,
    /// Row-major num_items x dim.
    pub item_factors: Vec<f64>,
}

impl FactorModel {
    pub fn init_uniform(
        num_users: usize,
        num_items: usize,
        dim: usize,
        low: f64,
        high: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sample = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(low..high)).collect()
        };
        FactorModel {
            num_users,
            num_items,
            dim,
            user_factors: sample(num_users * dim),
            item_factors: sample(num_items * dim),
        }
    }

    #[inline]
    pub fn user(&self, u: usize) -> &[f64] {
        &self.user_factors[u * self.dim..(u + 1) * self.dim]
    }

    #[inline]
    pub fn item(&self, i: usize) -> &[f64] {
        &self.item_factors[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn score(&self, u: usize, i: usize) -> f64 {
        dot(self.user(u), self.item(i))
    }

    pub fn is_finite(&self) -> bool {
        self.user_factors.iter().all(|x| x.is_finite())
            && self.item_factors.iter().all(|x| x.is_finite())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ln(1 + e^x), overflow-safe
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Trade-off between the pairwise loss and the fairness regularizer.
    pub lambda: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub l2_weight: f64,
    pub seed: u64,
    pub init_low: f64,
    pub init_high: f64,
    /// Cutoff for the validation ranking metric.
    pub eval_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 100,
            batch_size: 1024,
            learning_rate: 0.01,
            lambda: 0.0,
            max_epochs: 100,
            patience: 5,
            l2_weight: 1e-5,
            seed: 0,
            init_low: 0.0,
            init_high: 1.0,
            eval_k: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig("lambda must lie in [0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.init_low >= self.init_high {
            return Err(Error::InvalidConfig("init_low must be < init_high".into()));
        }
        Ok(())
    }
}

/// SHA-256 over the JSON form of the config, for checkpoint headers and
/// manifests.
pub fn config_hash(cfg: &TrainConfig) -> [u8; 32] {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.into()
}

/// Mean pairwise logistic loss over the batch plus the L2 penalty on the
/// embedding rows the batch touches.
pub fn pairwise_loss(model: &FactorModel, batch: &[Triplet], l2_weight: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Train("empty batch".into()));
    }
    let mut sum = 0.0;
    for t in batch {
        let margin = model.score(t.user as usize, t.observed as usize)
            - model.score(t.user as usize, t.unobserved as usize);
        if !margin.is_finite() {
            return Err(Error::Train(format!(
                "non-finite score margin for triplet ({}, {}, {})",
                t.user, t.observed, t.unobserved
            )));
        }
        sum += softplus(-margin);
    }
    let mut loss = sum / batch.len() as f64;
    if l2_weight > 0.0 {
        let (users, items) = touched_rows(batch);
        let mut norm = 0.0;
        for &u in &users {
            norm += dot(model.user(u as usize), model.user(u as usize));
        }
        for &i in &items {
            norm += dot(model.item(i as usize), model.item(i as usize));
        }
        loss += l2_weight * norm;
    }
    Ok(loss)
}

fn touched_rows(batch: &[Triplet]) -> (Vec<u32>, Vec<u32>) {
    let mut users: Vec<u32> = batch.iter().map(|t| t.user).collect();
    users.sort_unstable();
    users.dedup();
    let mut items: Vec<u32> = batch
        .iter()
        .flat_map(|t| [t.observed, t.unobserved])
        .collect();
    items.sort_unstable();
    items.dedup();
    (users, items)
}

/// Value of the fairness regularizer on one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegOutcome {
    pub value: f64,
    /// True when the denominator guard fired and the term contributed 0.
    pub guarded: bool,
}

/// Squared gap between the batch minority relevance share and the
/// minority catalog contribution, using only each triplet's observed
/// item.
pub fn fairness_regularizer(
    model: &FactorModel,
    batch: &[Triplet],
    reprs: &[SensitiveRepresentation],
    minority_class: usize,
    c_min: f64,
) -> RegOutcome {
    let mut num = 0.0;
    let mut den = 0.0;
    for t in batch {
        let f = model.score(t.user as usize, t.observed as usize);
        num += f * reprs[t.observed as usize].share[minority_class];
        den += f;
    }
    if den.abs() < 1e-12 {
        return RegOutcome {
            value: 0.0,
            guarded: true,
        };
    }
    let gap = num / den - c_min;
    RegOutcome {
        value: gap * gap,
        guarded: false,
    }
}

/// Full batch objective: `(1 - lambda) * pairwise + lambda * regularizer`.
pub fn total_loss(
    model: &FactorModel,
    batch: &[Triplet],
    reprs: &[SensitiveRepresentation],
    minority_class: usize,
    c_min: f64,
    lambda: f64,
    l2_weight: f64,
) -> Result<f64> {
    let acc = pairwise_loss(model, batch, l2_weight)?;
    let reg = fairness_regularizer(model, batch, reprs, minority_class, c_min);
    Ok((1.0 - lambda) * acc + lambda * reg.value)
}

/// Sparse gradient of the batch objective, keyed by embedding row.
#[derive(Debug, Default)]
pub struct BatchGradient {
    pub user_rows: BTreeMap<u32, Vec<f64>>,
    pub item_rows: BTreeMap<u32, Vec<f64>>,
}

/// Loss bookkeeping produced alongside the gradient.
#[derive(Debug, Clone, Copy)]
pub struct BatchStats {
    pub loss: f64,
    pub reg_value: f64,
    pub guarded: bool,
}

/// Analytic gradient of [`total_loss`] with respect to every touched
/// embedding row.
pub fn batch_gradient(
    model: &FactorModel,
    batch: &[Triplet],
    reprs: &[SensitiveRepresentation],
    minority_class: usize,
    c_min: f64,
    lambda: f64,
    l2_weight: f64,
) -> Result<(BatchGradient, BatchStats)> {
    if batch.is_empty() {
        return Err(Error::Train("empty batch".into()));
    }
    let dim = model.dim;
    let batch_len = batch.len() as f64;
    let mut grad = BatchGradient::default();
    let mut acc_loss_sum = 0.0;

    // pairwise part
    for t in batch {
        let (u, i, j) = (t.user as usize, t.observed as usize, t.unobserved as usize);
        let margin = model.score(u, i) - model.score(u, j);
        if !margin.is_finite() {
            return Err(Error::Train(format!(
                "non-finite score margin for triplet ({}, {}, {})",
                t.user, t.observed, t.unobserved
            )));
        }
        acc_loss_sum += softplus(-margin);
        let g = -sigmoid(-margin) / batch_len * (1.0 - lambda);
        let gu = grad.user_rows.entry(t.user).or_insert_with(|| vec![0.0; dim]);
        let (wu, xi, xj) = (model.user(u), model.item(i), model.item(j));
        for d in 0..dim {
            gu[d] += g * (xi[d] - xj[d]);
        }
        let gi = grad
            .item_rows
            .entry(t.observed)
            .or_insert_with(|| vec![0.0; dim]);
        for d in 0..dim {
            gi[d] += g * wu[d];
        }
        let gj = grad
            .item_rows
            .entry(t.unobserved)
            .or_insert_with(|| vec![0.0; dim]);
        for d in 0..dim {
            gj[d] -= g * wu[d];
        }
    }

    // sparse L2 on touched rows
    if l2_weight > 0.0 {
        let scale = 2.0 * l2_weight * (1.0 - lambda);
        let (users, items) = touched_rows(batch);
        for u in users {
            let gu = grad.user_rows.entry(u).or_insert_with(|| vec![0.0; dim]);
            let wu = model.user(u as usize);
            for d in 0..dim {
                gu[d] += scale * wu[d];
            }
        }
        for i in items {
            let gi = grad.item_rows.entry(i).or_insert_with(|| vec![0.0; dim]);
            let xi = model.item(i as usize);
            for d in 0..dim {
                gi[d] += scale * xi[d];
            }
        }
    }

    // regularizer part: d reg / d f_t = 2 (q - C) (S_t - q) / den
    let reg = fairness_regularizer(model, batch, reprs, minority_class, c_min);
    if lambda > 0.0 && !reg.guarded {
        let mut num = 0.0;
        let mut den = 0.0;
        for t in batch {
            let f = model.score(t.user as usize, t.observed as usize);
            num += f * reprs[t.observed as usize].share[minority_class];
            den += f;
        }
        let q = num / den;
        let coeff = 2.0 * (q - c_min) / den * lambda;
        for t in batch {
            let (u, i) = (t.user as usize, t.observed as usize);
            let s = reprs[t.observed as usize].share[minority_class];
            let c = coeff * (s - q);
            let gu = grad.user_rows.entry(t.user).or_insert_with(|| vec![0.0; dim]);
            let xi = model.item(i);
            for d in 0..dim {
                gu[d] += c * xi[d];
            }
            let gi = grad
                .item_rows
                .entry(t.observed)
                .or_insert_with(|| vec![0.0; dim]);
            let wu = model.user(u);
            for d in 0..dim {
                gi[d] += c * wu[d];
            }
        }
    }

    let mut loss = (1.0 - lambda) * (acc_loss_sum / batch_len) + lambda * reg.value;
    if l2_weight > 0.0 {
        let (users, items) = touched_rows(batch);
        let mut norm = 0.0;
        for &u in &users {
            norm += dot(model.user(u as usize), model.user(u as usize));
        }
        for &i in &items {
            norm += dot(model.item(i as usize), model.item(i as usize));
        }
        loss += (1.0 - lambda) * l2_weight * norm;
    }

    Ok((
        grad,
        BatchStats {
            loss,
            reg_value: reg.value,
            guarded: reg.guarded,
        },
    ))
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct AdamState {
    m_user: Vec<f64>,
    v_user: Vec<f64>,
    m_item: Vec<f64>,
    v_item: Vec<f64>,
    step: u64,
}

impl AdamState {
    fn new(model: &FactorModel) -> Self {
        AdamState {
            m_user: vec![0.0; model.user_factors.len()],
            v_user: vec![0.0; model.user_factors.len()],
            m_item: vec![0.0; model.item_factors.len()],
            v_item: vec![0.0; model.item_factors.len()],
            step: 0,
        }
    }

    fn apply(&mut self, model: &mut FactorModel, grad: &BatchGradient, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let dim = model.dim;
        let update = |offset: usize,
                          row_grad: &[f64],
                          params: &mut [f64],
                          m: &mut [f64],
                          v: &mut [f64]| {
            for d in 0..dim {
                let idx = offset + d;
                let g = row_grad[d];
                m[idx] = ADAM_BETA1 * m[idx] + (1.0 - ADAM_BETA1) * g;
                v[idx] = ADAM_BETA2 * v[idx] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = m[idx] / bc1;
                let v_hat = v[idx] / bc2;
                params[idx] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        };
        for (&u, g) in &grad.user_rows {
            update(
                u as usize * dim,
                g,
                &mut model.user_factors,
                &mut self.m_user,
                &mut self.v_user,
            );
        }
        for (&i, g) in &grad.item_rows {
            update(
                i as usize * dim,
                g,
                &mut model.item_factors,
                &mut self.m_item,
                &mut self.v_item,
            );
        }
    }
}

/// One Adam step on a single batch; exposed for step-level tests.
pub fn adam_step_once(
    model: &mut FactorModel,
    batch: &[Triplet],
    reprs: &[SensitiveRepresentation],
    minority_class: usize,
    c_min: f64,
    lambda: f64,
    l2_weight: f64,
    lr: f64,
) -> Result<BatchStats> {
    let (grad, stats) = batch_gradient(model, batch, reprs, minority_class, c_min, lambda, l2_weight)?;
    let mut adam = AdamState::new(model);
    adam.apply(model, &grad, lr);
    Ok(stats)
}

/// Per-epoch training diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub epoch: usize,
    pub train_loss: f64,
    pub reg_value: f64,
    pub val_ndcg: f64,
    pub val_delta_r: f64,
    /// Batches whose regularizer denominator guard fired this epoch.
    pub guard_count: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub entries: Vec<TrainLogEntry>,
    pub best_epoch: usize,
}

impl TrainLog {
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(["epoch", "train_loss", "reg_value", "val_ndcg", "val_dR", "guard_count"])?;
        for e in &self.entries {
            w.write_record([
                e.epoch.to_string(),
                format!("{:.17e}", e.train_loss),
                format!("{:.17e}", e.reg_value),
                format!("{:.17e}", e.val_ndcg),
                format!("{:.17e}", e.val_delta_r),
                e.guard_count.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trains a factor model over the precomputed triplets with Adam and
/// validation-based early stopping; returns the best-validation
/// checkpoint.
pub fn train(
    train_data: &Dataset,
    validation: &[(u32, u32)],
    triplets: &TripletSet,
    cfg: &TrainConfig,
    reprs: &[SensitiveRepresentation],
    stats: &GroupStats,
) -> Result<(FactorModel, TrainLog)> {
    cfg.validate()?;
    if triplets.triplets.is_empty() {
        return Err(Error::Train("empty triplet set".into()));
    }
    let mut model = FactorModel::init_uniform(
        train_data.num_users,
        train_data.num_items,
        cfg.dim,
        cfg.init_low,
        cfg.init_high,
        cfg.seed,
    );
    let mut adam = AdamState::new(&model);
    // independent stream for batch-order shuffling
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);

    let a_min = stats.minority_class;
    let c_min = stats.catalog_minority_share();
    let exclude = train_data.user_item_sets();
    let mut val_truth: Vec<HashSet<u32>> = vec![HashSet::new(); train_data.num_users];
    for &(u, i) in validation {
        val_truth[u as usize].insert(i);
    }
    let has_validation = val_truth.iter().any(|s| !s.is_empty());

    let batch_count = triplets.triplets.len().div_ceil(cfg.batch_size);
    let mut batch_order: Vec<usize> = (0..batch_count).collect();

    let mut log = TrainLog::default();
    let mut best: Option<(f64, FactorModel, usize)> = None;
    let mut epochs_without_improvement = 0usize;

    for epoch in 0..cfg.max_epochs {
        batch_order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut reg_sum = 0.0;
        let mut guard_count = 0usize;
        for (batch_index, &b) in batch_order.iter().enumerate() {
            let start = b * cfg.batch_size;
            let end = (start + cfg.batch_size).min(triplets.triplets.len());
            let batch = &triplets.triplets[start..end];
            let (grad, bstats) =
                batch_gradient(&model, batch, reprs, a_min, c_min, cfg.lambda, cfg.l2_weight)
                    .map_err(|e| {
                        Error::Train(format!("epoch {epoch}, batch {batch_index}: {e}"))
                    })?;
            if !bstats.loss.is_finite() {
                return Err(Error::Train(format!(
                    "diverged at epoch {epoch}, batch {batch_index}: loss {}",
                    bstats.loss
                )));
            }
            adam.apply(&mut model, &grad, cfg.learning_rate);
            loss_sum += bstats.loss;
            reg_sum += bstats.reg_value;
            if bstats.guarded {
                guard_count += 1;
            }
        }
        if !model.is_finite() {
            return Err(Error::Train(format!(
                "diverged at epoch {epoch}: non-finite parameters"
            )));
        }

        let (val_ndcg, val_delta_r) = if has_validation {
            let lists = rank_top_k(
                |u, i| model.score(u, i),
                train_data.num_users,
                train_data.num_items,
                cfg.eval_k,
                &exclude,
            );
            let ndcg = metrics::ndcg_at_k(&lists, &val_truth, cfg.eval_k)?.value;
            let dr = metrics::disparate_relevance(&lists, reprs, a_min, c_min)?.value;
            (ndcg, dr)
        } else {
            (f64::NAN, f64::NAN)
        };

        log.entries.push(TrainLogEntry {
            epoch,
            train_loss: loss_sum / batch_count as f64,
            reg_value: reg_sum / batch_count as f64,
            val_ndcg,
            val_delta_r,
            guard_count,
        });

        if has_validation {
            let improved = best
                .as_ref()
                .map_or(true, |(best_ndcg, _, _)| val_ndcg > best_ndcg + 1e-12);
            if improved {
                best = Some((val_ndcg, model.clone(), epoch));
                epochs_without_improvement = 0;
            } else {
                epochs_without_improvement += 1;
                if epochs_without_improvement >= cfg.patience {
                    break;
                }
            }
        }
    }

    let (final_model, best_epoch) = match best {
        Some((_, m, e)) => (m, e),
        None => {
            let e = log.entries.len().saturating_sub(1);
            (model, e)
        }
    };
    log.best_epoch = best_epoch;
    Ok((final_model, log))
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"FRCK";
const CHECKPOINT_VERSION: u32 = 1;

/// Checkpoint file metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub num_users: u64,
    pub num_items: u64,
    pub dim: u64,
    pub seed: u64,
    pub config_hash: [u8; 32],
}

/// Writes the model as a versioned binary dump; scores reload bit-exactly.
pub fn save_checkpoint<P: AsRef<Path>>(
    model: &FactorModel,
    seed: u64,
    config_hash: [u8; 32],
    path: P,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    f.write_all(CHECKPOINT_MAGIC)?;
    f.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    f.write_all(&(model.num_users as u64).to_le_bytes())?;
    f.write_all(&(model.num_items as u64).to_le_bytes())?;
    f.write_all(&(model.dim as u64).to_le_bytes())?;
    f.write_all(&seed.to_le_bytes())?;
    f.write_all(&config_hash)?;
    for x in model.user_factors.iter().chain(&model.item_factors) {
        f.write_all(&x.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<(FactorModel, CheckpointHeader)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path.as_ref())?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Train("not a checkpoint file".into()));
    }
    let mut u32buf = [0u8; 4];
    f.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Train(format!("unsupported checkpoint version {version}")));
    }
    let mut u64buf = [0u8; 8];
    let mut read_u64 = |f: &mut std::io::BufReader<std::fs::File>| -> Result<u64> {
        f.read_exact(&mut u64buf)?;
        Ok(u64::from_le_bytes(u64buf))
    };
    let num_users = read_u64(&mut f)?;
    let num_items = read_u64(&mut f)?;
    let dim = read_u64(&mut f)?;
    let seed = read_u64(&mut f)?;
    let mut config_hash = [0u8; 32];
    f.read_exact(&mut config_hash)?;
    let read_matrix = |f: &mut std::io::BufReader<std::fs::File>, n: usize| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; n * 8];
        f.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let user_factors = read_matrix(&mut f, (num_users * dim) as usize)?;
    let item_factors = read_matrix(&mut f, (num_items * dim) as usize)?;
    Ok((
        FactorModel {
            num_users: num_users as usize,
            num_items: num_items as usize,
            dim: dim as usize,
            user_factors,
            item_factors,
        },
        CheckpointHeader {
            version,
            num_users,
            num_items,
            dim,
            seed,
            config_hash,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Provenance;

    fn triplet(user: u32, observed: u32, unobserved: u32) -> Triplet {
        Triplet {
            user,
            observed,
            unobserved,
            provenance: Provenance::Base,
        }
    }

    fn zero_model(num_users: usize, num_items: usize, dim: usize) -> FactorModel {
        FactorModel {
            num_users,
            num_items,
            dim,
            user_factors: vec![0.0; num_users * dim],
            item_factors: vec![0.0; num_items * dim],
        }
    }

    fn uniform_reprs(num_items: usize, minority: &[u32]) -> Vec<SensitiveRepresentation> {
        (0..num_items as u32)
            .map(|i| {
                let is_min = minority.contains(&i);
                SensitiveRepresentation {
                    counts: if is_min { vec![1, 0] } else { vec![0, 1] },
                    share: if is_min { vec![1.0, 0.0] } else { vec![0.0, 1.0] },
                }
            })
            .collect()
    }

    #[test]
    fn zero_margin_loss_is_ln2() {
        let model = zero_model(2, 3, 4);
        let batch = vec![triplet(0, 0, 1), triplet(1, 2, 0)];
        let loss = pairwise_loss(&model, &batch, 0.0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn saturated_margin_loss_vanishes() {
        let mut model = zero_model(1, 2, 2);
        model.user_factors = vec![100.0, 100.0];
        model.item_factors = vec![1.0, 1.0, -1.0, -1.0];
        let batch = vec![triplet(0, 0, 1)];
        let loss = pairwise_loss(&model, &batch, 0.0).unwrap();
        assert!(loss < 1e-12);
    }

    /// Straight-line scalar re-evaluation of the pairwise loss.
    fn pairwise_oracle(model: &FactorModel, batch: &[Triplet], l2: f64) -> f64 {
        let mut sum = 0.0;
        for t in batch {
            let mut fi = 0.0;
            let mut fj = 0.0;
            for d in 0..model.dim {
                fi += model.user_factors[t.user as usize * model.dim + d]
                    * model.item_factors[t.observed as usize * model.dim + d];
                fj += model.user_factors[t.user as usize * model.dim + d]
                    * model.item_factors[t.unobserved as usize * model.dim + d];
            }
            let sig = 1.0 / (1.0 + (-(fi - fj)).exp());
            sum += -sig.ln();
        }
        let mut users: Vec<u32> = batch.iter().map(|t| t.user).collect();
        users.sort();
        users.dedup();
        let mut items: Vec<u32> = batch
            .iter()
            .flat_map(|t| [t.observed, t.unobserved])
            .collect();
        items.sort();
        items.dedup();
        let mut norm = 0.0;
        for u in users {
            for d in 0..model.dim {
                norm += model.user_factors[u as usize * model.dim + d].powi(2);
            }
        }
        for i in items {
            for d in 0..model.dim {
                norm += model.item_factors[i as usize * model.dim + d].powi(2);
            }
        }
        sum / batch.len() as f64 + l2 * norm
    }

    #[test]
    fn pairwise_loss_matches_scalar_oracle() {
        let model = FactorModel::init_uniform(4, 6, 5, -0.5, 0.5, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let batch: Vec<Triplet> = (0..8)
            .map(|_| {
                let i = rng.gen_range(0..6u32);
                let mut j = rng.gen_range(0..6u32);
                while j == i {
                    j = rng.gen_range(0..6u32);
                }
                triplet(rng.gen_range(0..4), i, j)
            })
            .collect();
        let got = pairwise_loss(&model, &batch, 1e-4).unwrap();
        let want = pairwise_oracle(&model, &batch, 1e-4);
        assert!((got - want).abs() < 1e-10, "got {got}, want {want}");
    }

    #[test]
    fn regularizer_zero_when_fully_aligned() {
        let model = FactorModel::init_uniform(3, 4, 4, 0.1, 1.0, 5);
        let reprs = uniform_reprs(4, &[0, 1, 2, 3]);
        let batch = vec![triplet(0, 0, 1), triplet(1, 2, 3)];
        let reg = fairness_regularizer(&model, &batch, &reprs, 0, 1.0);
        assert!(reg.value < 1e-20);
        assert!(!reg.guarded);
    }

    #[test]
    fn regularizer_motivating_gap() {
        // engineered batch share 0.029 against contribution 0.060
        let model = zero_model(1, 2, 1);
        let mut model = model;
        model.user_factors = vec![1.0];
        model.item_factors = vec![0.029, 0.971];
        let reprs = uniform_reprs(2, &[0]);
        let batch = vec![triplet(0, 0, 1), triplet(0, 1, 0)];
        // f(0,0)=0.029 on minority, f(0,1)=0.971 on majority; share = 0.029
        let reg = fairness_regularizer(&model, &batch, &reprs, 0, 0.060);
        assert!((reg.value - (0.031f64).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn regularizer_guard_on_vanishing_denominator() {
        let model = zero_model(2, 2, 3);
        let reprs = uniform_reprs(2, &[0]);
        let batch = vec![triplet(0, 0, 1)];
        let reg = fairness_regularizer(&model, &batch, &reprs, 0, 0.5);
        assert_eq!(reg.value, 0.0);
        assert!(reg.guarded);
    }

    /// Central finite differences of the total loss on every coordinate
    /// of a small instance.
    fn finite_difference_check(lambda: f64) {
        let (num_users, num_items, dim) = (5usize, 6usize, 4usize);
        let model = FactorModel::init_uniform(num_users, num_items, dim, 0.05, 1.0, 42);
        let reprs = uniform_reprs(num_items, &[0, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let batch: Vec<Triplet> = (0..12)
            .map(|_| {
                let i = rng.gen_range(0..num_items as u32);
                let mut j = rng.gen_range(0..num_items as u32);
                while j == i {
                    j = rng.gen_range(0..num_items as u32);
                }
                triplet(rng.gen_range(0..num_users as u32), i, j)
            })
            .collect();
        let c_min = 0.35;
        let l2 = 1e-3;
        let (grad, _) = batch_gradient(&model, &batch, &reprs, 0, c_min, lambda, l2).unwrap();
        let step = 1e-5;
        let check = |is_user: bool, row: u32, d: usize, analytic: f64| {
            let mut plus = model.clone();
            let mut minus = model.clone();
            let idx = row as usize * dim + d;
            if is_user {
                plus.user_factors[idx] += step;
                minus.user_factors[idx] -= step;
            } else {
                plus.item_factors[idx] += step;
                minus.item_factors[idx] -= step;
            }
            let lp = total_loss(&plus, &batch, &reprs, 0, c_min, lambda, l2).unwrap();
            let lm = total_loss(&minus, &batch, &reprs, 0, c_min, lambda, l2).unwrap();
            let numeric = (lp - lm) / (2.0 * step);
            let denom = numeric.abs().max(analytic.abs()).max(1e-8);
            assert!(
                (numeric - analytic).abs() / denom < 1e-3,
                "lambda {lambda}: row {row} dim {d} (user={is_user}): numeric {numeric}, analytic {analytic}"
            );
        };
        for (&u, g) in &grad.user_rows {
            for d in 0..dim {
                check(true, u, d, g[d]);
            }
        }
        for (&i, g) in &grad.item_rows {
            for d in 0..dim {
                check(false, i, d, g[d]);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for lambda in [0.0, 0.5, 1.0] {
            finite_difference_check(lambda);
        }
    }

    #[test]
    fn one_small_step_decreases_loss() {
        let model = FactorModel::init_uniform(5, 6, 4, 0.0, 1.0, 11);
        let reprs = uniform_reprs(6, &[1]);
        let batch = vec![triplet(0, 1, 2), triplet(1, 3, 4), triplet(2, 0, 5)];
        let before = total_loss(&model, &batch, &reprs, 0, 0.2, 0.3, 1e-5).unwrap();
        let mut stepped = model.clone();
        adam_step_once(&mut stepped, &batch, &reprs, 0, 0.2, 0.3, 1e-5, 1e-4).unwrap();
        let after = total_loss(&stepped, &batch, &reprs, 0, 0.2, 0.3, 1e-5).unwrap();
        assert!(after < before, "loss {before} -> {after}");
    }

    #[test]
    fn lambda_zero_and_tiny_lambda_trajectories_agree() {
        let ds = crate::synth::generate(&crate::synth::SynthConfig {
            num_users: 30,
            num_items: 12,
            num_interactions: 120,
            catalog_block: vec![0.3, 0.7],
            observation_block: vec![0.3, 0.7],
            popularity_scale: 1.0,
            seed: 8,
        })
        .unwrap();
        let reprs = crate::model::build_sensitive_representation(&ds).unwrap();
        let stats = crate::model::compute_group_stats(&ds, &reprs).unwrap();
        let triplets = crate::sampler::build_triplets(&ds, 3, 1).unwrap();
        let run = |lambda: f64| -> FactorModel {
            let cfg = TrainConfig {
                dim: 8,
                batch_size: 64,
                max_epochs: 1,
                lambda,
                seed: 3,
                ..TrainConfig::default()
            };
            train(&ds, &[], &triplets, &cfg, &reprs, &stats).unwrap().0
        };
        let a = run(0.0);
        let b = run(1e-30);
        let max_diff = a
            .user_factors
            .iter()
            .chain(&a.item_factors)
            .zip(b.user_factors.iter().chain(&b.item_factors))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff < 1e-6, "max diff {max_diff}");
    }

    #[test]
    fn training_is_deterministic() {
        let ds = crate::synth::generate(&crate::synth::SynthConfig {
            num_users: 40,
            num_items: 15,
            num_interactions: 200,
            catalog_block: vec![0.4, 0.6],
            observation_block: vec![0.4, 0.6],
            popularity_scale: 1.0,
            seed: 2,
        })
        .unwrap();
        let reprs = crate::model::build_sensitive_representation(&ds).unwrap();
        let stats = crate::model::compute_group_stats(&ds, &reprs).unwrap();
        let triplets = crate::sampler::build_triplets(&ds, 3, 5).unwrap();
        let val: Vec<(u32, u32)> = vec![(0, 1), (1, 2)];
        let cfg = TrainConfig {
            dim: 6,
            batch_size: 64,
            max_epochs: 4,
            seed: 17,
            ..TrainConfig::default()
        };
        let (a, _) = train(&ds, &val, &triplets, &cfg, &reprs, &stats).unwrap();
        let (b, _) = train(&ds, &val, &triplets, &cfg, &reprs, &stats).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let model = FactorModel::init_uniform(7, 9, 5, 0.0, 1.0, 23);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let hash = config_hash(&TrainConfig::default());
        save_checkpoint(&model, 23, hash, &path).unwrap();
        let (loaded, header) = load_checkpoint(&path).unwrap();
        assert_eq!(model, loaded);
        assert_eq!(header.seed, 23);
        assert_eq!(header.config_hash, hash);
        for u in 0..7 {
            for i in 0..9 {
                assert!(model.score(u, i).to_bits() == loaded.score(u, i).to_bits());
            }
        }
    }
}
