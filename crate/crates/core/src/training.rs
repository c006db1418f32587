//! Backpropagation through time, the weighted binary cross-entropy objective,
//! optimizers, and the k-fold split used for held-out alert evaluation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingTable, PAD_ID};
use crate::error::{Error, Result};
use crate::numerics::{dot, Vector};
use crate::preprocess::Label;
use crate::recurrent::{
    attend_backward, gru_backward, lstm_backward, CellParams, DirectionTrace, LayerParams, LayerTrace, ModelParams,
    RecurrentModel, StepCache,
};

/// Scores are clamped to `[EPS, 1 − EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

/// Examples per gradient-accumulation chunk. Chunks are reduced in index
/// order, so results do not depend on the thread count.
const CHUNK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Loss weight on alert examples; normal examples weigh 1.
    pub alert_weight: f64,
    /// Sequences longer than this keep their head.
    pub max_tokens: usize,
    pub width_scale: f64,
    pub clip_norm: f64,
    pub trainable_embedding: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 1,
            alert_weight: 1.0,
            max_tokens: crate::preprocess::DEFAULT_MAX_TOKENS,
            width_scale: 1.0,
            clip_norm: 5.0,
            trainable_embedding: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.alert_weight > 0.0) || !(self.clip_norm > 0.0) || !(self.width_scale > 0.0) {
            return Err(Error::invalid("alert weight, clip norm and width scale must be positive"));
        }
        if self.max_tokens == 0 {
            return Err(Error::invalid("max_tokens must be at least 1"));
        }
        Ok(())
    }
}

/// Weighted binary cross-entropy on a clamped score.
pub fn bce_loss(score: f64, label: Label, weight: f64) -> f64 {
    let s = score.clamp(EPS, 1.0 - EPS);
    let y = label.target();
    -weight * (y * s.ln() + (1.0 - y) * (1.0 - s).ln())
}

/// Derivative of [`bce_loss`] through the sigmoid, with respect to the logit.
/// Zero where the clamp is active.
fn bce_dlogit(score: f64, label: Label, weight: f64) -> f64 {
    if score <= EPS || score >= 1.0 - EPS {
        0.0
    } else {
        weight * (score - label.target())
    }
}

/// Parameter gradients, plus per-row embedding gradients when the embedding is trainable.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub params: ModelParams,
    pub embedding: Option<BTreeMap<usize, Vec<f64>>>,
}

impl Gradients {
    fn zeros_like(params: &ModelParams, trainable_embedding: bool) -> Self {
        Gradients {
            params: params.zeros_like(),
            embedding: trainable_embedding.then(BTreeMap::new),
        }
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.params.slices_mut().into_iter().zip(other.params.tensors()) {
            for (x, y) in a.iter_mut().zip(b.data) {
                *x += y;
            }
        }
        if let (Some(mine), Some(theirs)) = (&mut self.embedding, &other.embedding) {
            for (id, g) in theirs {
                let row = mine.entry(*id).or_insert_with(|| vec![0.0; g.len()]);
                row.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for sl in self.params.slices_mut() {
            sl.iter_mut().for_each(|v| *v *= s);
        }
        if let Some(e) = &mut self.embedding {
            e.values_mut().flatten().for_each(|v| *v *= s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        let p: f64 = self.params.tensors().iter().map(|t| dot(t.data, t.data)).sum();
        let e: f64 = self
            .embedding
            .iter()
            .flat_map(|m| m.values())
            .map(|g| dot(g, g))
            .sum();
        (p + e).sqrt()
    }

    /// Rescales to at most `max_norm`; returns the norm before clipping.
    pub fn clip(&mut self, max_norm: f64) -> f64 {
        let n = self.global_norm();
        if n > max_norm {
            self.scale(max_norm / n);
        }
        n
    }
}

/// Loss, score and gradients for one sequence.
#[derive(Clone, Debug)]
pub struct Backprop {
    pub loss: f64,
    pub score: f64,
    pub params: ModelParams,
    /// Gradient with respect to each input vector.
    pub inputs: Vec<Vector>,
}

fn backprop_direction(
    cell: &CellParams,
    trace: &DirectionTrace,
    reverse: bool,
    dout: &[Vec<f64>],
    offset: usize,
    grad: &mut CellParams,
    dinputs: &mut [Vec<f64>],
) {
    let n = trace.steps.len();
    let units = cell.units();
    let mut dh_next = vec![0.0; units];
    let mut dc_next = vec![0.0; units];
    for step in (0..n).rev() {
        let pos = if reverse { n - 1 - step } else { step };
        let dh: Vec<f64> = dout[pos][offset..offset + units]
            .iter()
            .zip(&dh_next)
            .map(|(a, b)| a + b)
            .collect();
        let mut dh_prev = vec![0.0; units];
        match (cell, grad as &mut CellParams, &trace.steps[step]) {
            (CellParams::Gru(p), CellParams::Gru(g), StepCache::Gru(c)) => {
                gru_backward(p, c, &dh, g, &mut dinputs[pos], &mut dh_prev);
            }
            (CellParams::Lstm(p), CellParams::Lstm(g), StepCache::Lstm(c)) => {
                let mut dc_prev = vec![0.0; units];
                lstm_backward(p, c, &dh, &dc_next, g, &mut dinputs[pos], &mut dh_prev, &mut dc_prev);
                dc_next = dc_prev;
            }
            _ => unreachable!("cell, gradient and cache kinds always agree"),
        }
        dh_next = dh_prev;
    }
}

fn backprop_layer(lp: &LayerParams, lt: &LayerTrace, dout: &[Vec<f64>], grad: &mut LayerParams) -> Vec<Vec<f64>> {
    let input_dim = lt.inputs[0].len();
    let mut dinputs = vec![vec![0.0; input_dim]; lt.inputs.len()];
    backprop_direction(&lp.forward, &lt.forward, false, dout, 0, &mut grad.forward, &mut dinputs);
    if let (Some(bp), Some(bt), Some(bg)) = (&lp.backward, &lt.backward, &mut grad.backward) {
        backprop_direction(bp, bt, true, dout, lp.forward.units(), bg, &mut dinputs);
    }
    dinputs
}

/// Exact reverse-mode gradients of the weighted BCE loss for one sequence.
///
/// An empty sequence has the constant score 0 and therefore zero gradients.
pub fn backward(model: &RecurrentModel, seq: &[Vector], label: Label, weight: f64) -> Result<Backprop> {
    let mut grads = model.params.zeros_like();
    if seq.is_empty() {
        return Ok(Backprop {
            loss: bce_loss(0.0, label, weight),
            score: 0.0,
            params: grads,
            inputs: Vec::new(),
        });
    }
    let dim = model.config().input_dim;
    let xs: Vec<Vec<f64>> = seq
        .iter()
        .map(|x| {
            if x.len() != dim {
                Err(Error::shape("backward", "x_t", dim, x.len()))
            } else {
                Ok(x.to_vec())
            }
        })
        .collect::<Result<_>>()?;
    let trace = model.trace(&xs);
    let params = &model.params;
    let dlogit = bce_dlogit(trace.score, label, weight);

    for (g, r) in grads.head_w.iter_mut().zip(&trace.representation) {
        *g += dlogit * r;
    }
    grads.head_b[0] += dlogit;
    let drep: Vec<f64> = params.head_w.iter().map(|w| dlogit * w).collect();

    let top = trace.layers.last().expect("at least one layer");
    let n = top.outputs.len();
    let width = top.outputs[0].len();
    let mut dout = vec![vec![0.0; width]; n];
    match (&params.attention, &trace.attention, &mut grads.attention) {
        (Some(ap), Some(cache), Some(ga)) => {
            attend_backward(ap, &top.outputs, cache, &drep, ga, &mut dout);
        }
        _ => {
            let units = params.layers.last().expect("layer").forward.units();
            for k in 0..units {
                dout[n - 1][k] += drep[k];
            }
            // the backward direction's final state sits at position 0
            for k in units..width {
                dout[0][k] += drep[k];
            }
        }
    }

    for (i, (lp, lt)) in params.layers.iter().zip(&trace.layers).enumerate().rev() {
        dout = backprop_layer(lp, lt, &dout, &mut grads.layers[i]);
    }

    Ok(Backprop {
        loss: bce_loss(trace.score, label, weight),
        score: trace.score,
        params: grads,
        inputs: dout.into_iter().map(Vector::from).collect(),
    })
}

/// A tokenized training example: vocabulary ids and its label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub ids: Vec<usize>,
    pub label: Label,
}

impl Example {
    /// Ids with PAD positions masked out and the head kept up to `max_tokens`.
    fn effective_ids(&self, max_tokens: usize) -> Vec<usize> {
        self.ids.iter().copied().filter(|&i| i != PAD_ID).take(max_tokens).collect()
    }
}

fn example_gradients(
    model: &RecurrentModel,
    table: &EmbeddingTable,
    ex: &Example,
    cfg: &TrainConfig,
) -> Result<(f64, Gradients)> {
    let ids = ex.effective_ids(cfg.max_tokens);
    let xs = table.embed_ids(&ids);
    let weight = match ex.label {
        Label::Alert => cfg.alert_weight,
        Label::Normal => 1.0,
    };
    let bp = backward(model, &xs, ex.label, weight)?;
    let embedding = cfg.trainable_embedding.then(|| {
        let mut rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (id, g) in ids.iter().zip(&bp.inputs) {
            let row = rows.entry(*id).or_insert_with(|| vec![0.0; g.len()]);
            row.iter_mut().zip(g.iter()).for_each(|(a, b)| *a += b);
        }
        rows
    });
    Ok((
        bp.loss,
        Gradients {
            params: bp.params,
            embedding,
        },
    ))
}

/// Sum of losses and gradients over a batch, reduced in a fixed order.
pub fn batch_gradients(
    model: &RecurrentModel,
    table: &EmbeddingTable,
    batch: &[&Example],
    cfg: &TrainConfig,
) -> Result<(f64, Gradients)> {
    let partials: Vec<Result<(f64, Gradients)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut loss = 0.0;
            let mut acc = Gradients::zeros_like(&model.params, cfg.trainable_embedding);
            for ex in chunk {
                let (l, g) = example_gradients(model, table, ex, cfg)?;
                loss += l;
                acc.add_assign(&g);
            }
            Ok((loss, acc))
        })
        .collect();
    let mut loss = 0.0;
    let mut total = Gradients::zeros_like(&model.params, cfg.trainable_embedding);
    for p in partials {
        let (l, g) = p?;
        loss += l;
        total.add_assign(&g);
    }
    Ok((loss, total))
}

/// First-order optimizer state.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Option<ModelParams>,
    v: Option<ModelParams>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: None,
            v: None,
        }
    }

    /// Applies one update. Embedding rows, when present, get plain SGD.
    pub fn apply(&mut self, params: &mut ModelParams, grads: &Gradients, table: Option<&mut EmbeddingTable>) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.slices_mut().into_iter().zip(grads.params.tensors()) {
                    p.iter_mut().zip(g.data).for_each(|(p, g)| *p -= self.lr * g);
                }
            }
            OptimizerKind::Adam => {
                let m = self.m.get_or_insert_with(|| params.zeros_like());
                let v = self.v.get_or_insert_with(|| params.zeros_like());
                let bc1 = 1.0 - self.beta1.powi(self.step);
                let bc2 = 1.0 - self.beta2.powi(self.step);
                let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
                let slices = params
                    .slices_mut()
                    .into_iter()
                    .zip(grads.params.tensors())
                    .zip(m.slices_mut())
                    .zip(v.slices_mut());
                for (((p, g), m), v) in slices {
                    for k in 0..p.len() {
                        let gk = g.data[k];
                        m[k] = b1 * m[k] + (1.0 - b1) * gk;
                        v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                        let mh = m[k] / bc1;
                        let vh = v[k] / bc2;
                        p[k] -= lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        if let (Some(table), Some(rows)) = (table, &grads.embedding) {
            for (&id, g) in rows {
                if let Some(row) = table.row_mut(id) {
                    row.iter_mut().zip(g).for_each(|(p, g)| *p -= self.lr * g);
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean weighted loss per example, measured during each epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean pre-clipping gradient norm per epoch.
    pub epoch_grad_norms: Vec<f64>,
}

pub(crate) fn check_both_classes<T>(items: &[T], label: impl Fn(&T) -> Label) -> Result<()> {
    let alerts = items.iter().filter(|e| label(e) == Label::Alert).count();
    if alerts == 0 {
        return Err(Error::SingleClass("normal only"));
    }
    if alerts == items.len() {
        return Err(Error::SingleClass("alert only"));
    }
    Ok(())
}

/// Trains `model` in place. Deterministic in `cfg.seed` for any thread count.
///
/// When `cfg.trainable_embedding` is set, `table` rows are updated as well;
/// otherwise it is only read.
pub fn train(
    model: &mut RecurrentModel,
    table: &mut EmbeddingTable,
    data: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    check_both_classes(data, |e| e.label)?;
    if table.dim() != model.config().input_dim {
        return Err(Error::shape(
            "train",
            "embedding dim",
            model.config().input_dim,
            table.dim(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut report = TrainReport {
        epoch_losses: Vec::with_capacity(cfg.epochs),
        epoch_grad_norms: Vec::with_capacity(cfg.epochs),
    };
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut norm_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, mut grads) = batch_gradients(model, table, &batch, cfg)?;
            epoch_loss += loss;
            grads.scale(1.0 / batch.len() as f64);
            norm_sum += grads.clip(cfg.clip_norm);
            batches += 1;
            let table_ref = cfg.trainable_embedding.then_some(&mut *table);
            opt.apply(&mut model.params, &grads, table_ref);
        }
        report.epoch_losses.push(epoch_loss / data.len() as f64);
        report.epoch_grad_norms.push(norm_sum / batches as f64);
    }
    Ok(report)
}

/// Seeded shuffle into `k` disjoint folds of `len / k` items; the last fold
/// also takes the remainder.
pub fn kfold_split<T: Clone>(items: &[T], k: usize, seed: u64) -> Result<Vec<Vec<T>>> {
    if k < 2 {
        return Err(Error::invalid(format!("k-fold needs k >= 2, got {k}")));
    }
    if items.len() < k {
        return Err(Error::invalid(format!("cannot split {} items into {k} folds", items.len())));
    }
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = items.len() / k;
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let end = if f + 1 == k { idx.len() } else { (f + 1) * base };
        folds.push(idx[f * base..end].iter().map(|&i| items[i].clone()).collect());
    }
    Ok(folds)
}
