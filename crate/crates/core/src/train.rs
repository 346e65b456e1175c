//! Plain SGD over quota-balanced batches.
//!
//! Each step averages the per-pair parameter gradients of a batch in a fixed
//! order and moves the parameters by `-lr * grad`. The learning rate is
//! divided by `lr_decay_factor` every `decay_every_pairs` pairs.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddingModel, ModelGradients};
use crate::error::{check_dims, Error, Result};
use crate::loss::{binary_label_from_psi, LossConfig};
use crate::mining::{
    epoch_seed, Batch, BatchStrategy, EpochSchedule, GradedPairSet, DEFAULT_BATCH_SIZE,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    /// Binary labels from `psi > positive_threshold`.
    Cl,
    #[default]
    Gcl,
}

impl LossKind {
    pub fn default_lr(self) -> f64 {
        match self {
            LossKind::Cl => 0.01,
            LossKind::Gcl => 0.1,
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cl" => Ok(LossKind::Cl),
            "gcl" => Ok(LossKind::Gcl),
            other => Err(Error::invalid(format!("unknown loss '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub initial_lr: f64,
    pub lr_decay_factor: f64,
    pub decay_every_pairs: u64,
    pub batch_size: usize,
    pub margin_tau: f64,
    pub positive_threshold: f64,
    pub epochs: usize,
    pub seed: u64,
    pub strategy: BatchStrategy,
}

impl TrainConfig {
    pub fn new(loss_kind: LossKind) -> Self {
        let loss = LossConfig::default();
        Self {
            loss_kind,
            initial_lr: loss_kind.default_lr(),
            lr_decay_factor: 10.0,
            decay_every_pairs: 250_000,
            batch_size: DEFAULT_BATCH_SIZE,
            margin_tau: loss.margin_tau,
            positive_threshold: loss.positive_threshold,
            epochs: 1,
            seed: 0,
            strategy: BatchStrategy::default(),
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            margin_tau: self.margin_tau,
            positive_threshold: self.positive_threshold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_config().validate()?;
        if !(self.initial_lr >= 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::invalid(
                "learning rate must be finite and non-negative",
            ));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            return Err(Error::invalid(
                "learning-rate decay factor must be positive",
            ));
        }
        if self.decay_every_pairs == 0 {
            return Err(Error::invalid("decay interval must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::new(LossKind::Gcl)
    }
}

/// `initial_lr / decay^floor(pairs_seen / decay_every_pairs)`
pub fn lr_at(pairs_seen: u64, cfg: &TrainConfig) -> f64 {
    let steps = (pairs_seen / cfg.decay_every_pairs) as i32;
    cfg.initial_lr / cfg.lr_decay_factor.powi(steps)
}

/// Row-major feature vectors keyed by image id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f64>,
    index: HashMap<String, usize>,
}

impl FeatureStore {
    pub fn new(dim: usize, ids: Vec<String>, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        check_dims(ids.len() * dim, data.len())?;
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate feature id '{id}'")));
            }
        }
        Ok(Self {
            dim,
            ids,
            data,
            index,
        })
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        for r in rows {
            check_dims(dim, r.len())?;
        }
        Self::new(dim, ids, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.row(i))
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.data.chunks_exact(self.dim))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchRecord {
    pub batch: usize,
    /// Pairs seen after this batch.
    pub pairs_seen: u64,
    pub lr: f64,
    /// Mean pair loss, evaluated before the update.
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub trace: Vec<BatchRecord>,
    pub pairs_seen: u64,
    pub model: EmbeddingModel,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.loss).collect()
    }

    pub fn lr_history(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.lr).collect()
    }
}

/// Target similarity fed to the loss: `psi` itself for GCL, the binary label
/// for CL. The generalized loss with `psi ∈ {0, 1}` is exactly the binary one.
pub fn training_target(psi: f64, cfg: &TrainConfig) -> f64 {
    match cfg.loss_kind {
        LossKind::Gcl => psi,
        LossKind::Cl => {
            if binary_label_from_psi(psi, &cfg.loss_config()) {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Mean loss and mean parameter gradient of one batch, pairs reduced in
/// batch order.
pub fn batch_gradient(
    model: &EmbeddingModel,
    batch: &Batch,
    pairs: &GradedPairSet,
    features: &FeatureStore,
    cfg: &TrainConfig,
) -> Result<(f64, ModelGradients)> {
    let loss_cfg = cfg.loss_config();
    let mut acc = ModelGradients::zeros_like(model);
    let mut total = 0.0;
    for p in &batch.items {
        let q = pairs.query_id(p.query);
        let m = pairs.map_id(p.map);
        let a = features
            .get(q)
            .ok_or_else(|| Error::UnknownId(q.to_string()))?;
        let b = features
            .get(m)
            .ok_or_else(|| Error::UnknownId(m.to_string()))?;
        total += model.accumulate_pair(a, b, training_target(p.psi, cfg), &loss_cfg, &mut acc)?;
    }
    let n = batch.len().max(1) as f64;
    acc.scale(1.0 / n);
    Ok((total / n, acc))
}

fn check_resolvable(
    pairs: &GradedPairSet,
    features: &FeatureStore,
    model: &EmbeddingModel,
) -> Result<()> {
    check_dims(model.input_dim(), features.dim())?;
    for id in pairs.query_ids().iter().chain(pairs.map_ids()) {
        if features.get(id).is_none() {
            return Err(Error::UnknownId(format!("'{id}' has no feature vector")));
        }
    }
    Ok(())
}

pub fn train(
    model: EmbeddingModel,
    pairs: &GradedPairSet,
    features: &FeatureStore,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    train_with_callback(model, pairs, features, cfg, |_, _| Ok(()))
}

/// Like [`train`], calling `on_batch` after every parameter update.
pub fn train_with_callback(
    mut model: EmbeddingModel,
    pairs: &GradedPairSet,
    features: &FeatureStore,
    cfg: &TrainConfig,
    mut on_batch: impl FnMut(&BatchRecord, &EmbeddingModel) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    model.validate()?;
    let mut trace = Vec::new();
    let mut pairs_seen = 0u64;
    if cfg.epochs > 0 {
        check_resolvable(pairs, features, &model)?;
    }
    for epoch in 0..cfg.epochs {
        let schedule = EpochSchedule::new(
            pairs,
            cfg.strategy,
            cfg.batch_size,
            epoch_seed(cfg.seed, epoch),
        )?;
        for batch in schedule {
            let lr = lr_at(pairs_seen, cfg);
            let (loss, grads) = batch_gradient(&model, &batch, pairs, features, cfg)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss {loss} at batch {} (epoch {epoch})",
                    trace.len()
                )));
            }
            model.sgd_step(&grads, lr);
            pairs_seen += batch.len() as u64;
            let rec = BatchRecord {
                batch: trace.len(),
                pairs_seen,
                lr,
                loss,
            };
            on_batch(&rec, &model)?;
            trace.push(rec);
        }
    }
    Ok(TrainReport {
        trace,
        pairs_seen,
        model,
    })
}
