//! Mini-batch Adam training with step decay and best-on-validation selection.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate_with, EvalSeq, Level, SeenSel, ShapeSel};
use crate::model::{loss_fn, IntentModel, Sequence};
use crate::numcore::{adam_step, AdamState, GradStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Sequences (or windows) per optimiser step.
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    /// Epochs between learning-rate decays.
    pub decay_every: usize,
    pub seed: u64,
    /// Split sequences into windows of this many frames; `None` keeps them whole.
    pub window_length: Option<usize>,
    /// Save a checkpoint every this many epochs (handled by the caller).
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 512,
            lr: 1e-3,
            lr_decay: 0.9,
            decay_every: 10,
            seed: 0,
            window_length: None,
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |path: &str, message: &str| {
            Err(Error::Config {
                path: format!("train.{path}"),
                message: message.into(),
            })
        };
        if self.epochs == 0 {
            return err("epochs", "must be positive");
        }
        if self.batch_size == 0 {
            return err("batch_size", "must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return err("lr", "must be finite and non-negative");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return err("lr_decay", "must be in (0, 1]");
        }
        if self.decay_every == 0 {
            return err("decay_every", "must be positive");
        }
        if self.window_length == Some(0) {
            return err("window_length", "must be positive");
        }
        if self.checkpoint_every == Some(0) {
            return err("checkpoint_every", "must be positive");
        }
        Ok(())
    }

    /// Learning rate of the zero-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub lr: f64,
    /// Mean over training sequences of their frame-averaged loss.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_goal_recall: Option<f64>,
    pub val_lane_recall: Option<f64>,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    let mut s = String::from("epoch,lr,train_loss,val_loss,val_goal_recall,val_lane_recall\n");
    for r in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.epoch,
            r.lr,
            r.train_loss,
            opt(r.val_loss),
            opt(r.val_goal_recall),
            opt(r.val_lane_recall)
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation goal recall (the last
    /// epoch when there is no validation set).
    pub best: IntentModel,
    pub best_epoch: usize,
    pub last: IntentModel,
    pub history: Vec<EpochRecord>,
}

/// Windows of at most `w` frames, each starting from zero state.
pub fn windows(items: &[EvalSeq], w: Option<usize>) -> Vec<Sequence> {
    let mut out = Vec::new();
    for it in items {
        let s = &it.seq;
        match w {
            None => out.push(s.clone()),
            Some(w) => {
                let mut t0 = 0;
                while t0 < s.len {
                    let len = w.min(s.len - t0);
                    let lw = s.n_lanes() * crate::features::LANE_FEATURE_DIM;
                    let gw = s.n_exits() * crate::features::GOAL_FEATURE_DIM;
                    out.push(Sequence {
                        topology: s.topology.clone(),
                        len,
                        lane_x: s.lane_x[t0 * lw..(t0 + len) * lw].to_vec(),
                        goal_x: s.goal_x[t0 * gw..(t0 + len) * gw].to_vec(),
                        label: s.label,
                    });
                    t0 += len;
                }
            }
        }
    }
    out
}

/// Mean loss and recalls of `model` on `items`.
pub fn validate(model: &IntentModel, items: &[EvalSeq]) -> Result<(f64, f64, Option<f64>)> {
    let mut loss = 0.0;
    let report = evaluate_with(model, items, &BTreeSet::new(), |it, ps| {
        let lab = it.seq.label.ok_or_else(|| Error::Label("validation needs labels".into()))?;
        let mut l = 0.0;
        for p in ps {
            l += loss_fn(p, lab, &model.config)?.total;
        }
        loss += l / ps.len() as f64;
        Ok(())
    })?;
    loss /= items.len() as f64;
    let goal = report.recall(Level::Goal, ShapeSel::All, SeenSel::All).unwrap_or(0.0);
    let lane = if report.lane_available {
        report.recall(Level::Lane, ShapeSel::All, SeenSel::All)
    } else {
        None
    };
    Ok((loss, goal, lane))
}

/// Sequences per forward/backward pass; larger batches are split and
/// their gradients summed, which bounds the memory held by the tapes.
pub const MICRO_BATCH: usize = 64;

/// Batch-mean loss and gradient from micro-batch means weighted by size.
pub(crate) fn accumulate<'a>(
    batch: &[&'a Sequence],
    mut f: impl FnMut(&[&'a Sequence]) -> Result<(f64, GradStore)>,
) -> Result<(f64, GradStore)> {
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut acc: Option<GradStore> = None;
    for micro in batch.chunks(MICRO_BATCH) {
        let (l, mut g) = f(micro)?;
        let w = micro.len() as f64 / n;
        loss += w * l;
        g.scale(w);
        match acc.as_mut() {
            Some(a) => a.add_assign(&g),
            None => acc = Some(g),
        }
    }
    Ok((loss, acc.ok_or(Error::Empty("batch"))?))
}

/// Trains `model` in place. `on_epoch` sees every record with the current
/// parameters (for logging and checkpoints).
pub fn train(
    mut model: IntentModel,
    train_items: &[EvalSeq],
    val_items: &[EvalSeq],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &IntentModel) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_items.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let data = windows(train_items, cfg.window_length);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&model.params);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, IntentModel)> = None;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sequence> = idx.iter().map(|&i| &data[i]).collect();
            let (loss, grads) = accumulate(&batch, |micro| model.loss_and_grad(micro).map(|(t, g)| (t.total, g)))
                .map_err(|e| match e {
                    Error::Divergence(m) => Error::Divergence(format!("epoch {}, batch {batches}: {m}", epoch + 1)),
                    e => e,
                })?;
            adam_step(&mut model.params, &grads, &mut adam, lr)?;
            total += loss * batch.len() as f64;
            batches += 1;
        }
        if !model.params.is_finite() {
            return Err(Error::Divergence(format!("non-finite parameters after epoch {}", epoch + 1)));
        }
        let mut rec = EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss: total / data.len() as f64,
            val_loss: None,
            val_goal_recall: None,
            val_lane_recall: None,
        };
        if !val_items.is_empty() {
            let (l, g, lane) = validate(&model, val_items)?;
            rec.val_loss = Some(l);
            rec.val_goal_recall = Some(g);
            rec.val_lane_recall = lane;
            if best.as_ref().is_none_or(|(b, _, _)| g > *b) {
                best = Some((g, epoch + 1, model.clone()));
            }
        }
        on_epoch(&rec, &model)?;
        history.push(rec);
    }
    let (best_epoch, best_model) = match best {
        Some((_, e, m)) => (e, m),
        None => (cfg.epochs, model.clone()),
    };
    Ok(TrainOutcome {
        best: best_model,
        best_epoch,
        last: model,
        history,
    })
}
