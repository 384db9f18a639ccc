//! Intention model: per-element GRU encoders with mutually auxiliary lane and
//! goal attention.

mod config;
mod net;
mod sequence;

use std::path::Path;

use serde::Serialize;

pub use config::{stl_train_mode, ModelConfig, Variant};
pub use net::LossTerms;
pub use sequence::{FrameLabel, MapTopology, SeqLabel, Sequence};

use crate::error::{Error, Result};
use crate::features::FeatureFrame;
use crate::map::IntersectionMap;
use crate::numcore::loss::{cross_entropy, sigmoid, softmax_in_place, weighted_bce};
use crate::numcore::weights::{self, WeightFile};
use crate::numcore::{GradStore, ParamStore, Tensor2};
use net::{FrameTape, Net, Packing};

/// Per-frame output over one intersection's lanes and exits.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Probability per lane, normalised over all lanes; empty for the
    /// goal-only variant.
    pub alpha: Vec<f64>,
    pub beta_scores: Vec<f64>,
    pub beta: Vec<f64>,
    pub goal_probs: Vec<f64>,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in v.iter().enumerate() {
        if best.is_none_or(|b| x > v[b]) {
            best = Some(i);
        }
    }
    best
}

impl Prediction {
    /// `alpha` must already be normalised; `beta_scores` are raw goal logits.
    pub fn from_parts(alpha: Vec<f64>, beta_scores: Vec<f64>) -> Self {
        let mut beta = beta_scores.clone();
        softmax_in_place(&mut beta);
        let goal_probs = beta_scores.iter().map(|&x| sigmoid(x)).collect();
        Self {
            alpha,
            beta_scores,
            beta,
            goal_probs,
        }
    }

    pub fn pred_lane(&self) -> Option<usize> {
        argmax(&self.alpha)
    }

    pub fn pred_exit(&self) -> usize {
        argmax(&self.beta_scores).expect("at least one exit")
    }

    /// One JSONL record keyed by map ids.
    pub fn to_json_line(&self, t: usize, map: &IntersectionMap) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            t: usize,
            alpha: serde_json::Map<String, serde_json::Value>,
            beta: serde_json::Map<String, serde_json::Value>,
            goal_probs: serde_json::Map<String, serde_json::Value>,
            pred_lane: Option<&'a str>,
            pred_exit: &'a str,
        }
        let keyed = |ids: &mut dyn Iterator<Item = &str>, vals: &[f64]| {
            ids.zip(vals).map(|(k, v)| (k.to_string(), serde_json::Value::from(*v))).collect()
        };
        let line = Line {
            t,
            alpha: keyed(&mut map.lanes.iter().map(|l| l.id.as_str()), &self.alpha),
            beta: keyed(&mut map.exits.iter().map(|e| e.id.as_str()), &self.beta),
            goal_probs: keyed(&mut map.exits.iter().map(|e| e.id.as_str()), &self.goal_probs),
            pred_lane: self.pred_lane().map(|i| map.lanes[i].id.as_str()),
            pred_exit: &map.exits[self.pred_exit()].id,
        };
        serde_json::to_string(&line).expect("prediction serialises")
    }
}

/// Hidden state of every lane and exit of one map.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub h_lane: Tensor2,
    pub h_goal: Tensor2,
}

/// Opaque per-frame activation record returned by [`IntentModel::step`].
#[derive(Debug, Clone)]
pub struct StepCache {
    tape: FrameTape,
}

impl StepCache {
    pub fn rows(&self) -> (usize, usize) {
        (self.tape.rows_l, self.tape.rows_g)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntentModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    net: Net,
}

impl IntentModel {
    /// Fresh model with seeded uniform initialisation.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let (net, params) = Net::build(&config, seed)?;
        Ok(Self { config, params, net })
    }

    /// Wraps existing parameters; names and shapes must match the config.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let (net, reference) = Net::build(&config, 0)?;
        let same = reference.len() == params.len()
            && reference
                .iter()
                .zip(params.iter())
                .all(|((a, ta), (b, tb))| a == b && ta.shape() == tb.shape());
        if !same {
            return Err(Error::Incompatible("parameter names or shapes do not match the model config".into()));
        }
        Ok(Self { config, params, net })
    }

    /// Same parameters under another variant (forward semantics change only).
    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            config: self.config.clone().with_variant(variant),
            ..self.clone()
        }
    }

    pub fn init_state(&self, topo: &MapTopology) -> ModelState {
        let hd = self.config.hidden_dim;
        ModelState {
            h_lane: Tensor2::zeros(topo.n_lanes(), hd),
            h_goal: Tensor2::zeros(topo.n_exits, hd),
        }
    }

    /// One frame on one map.
    pub fn step(
        &self,
        topo: &MapTopology,
        state: &ModelState,
        frame: &FeatureFrame,
    ) -> Result<(Prediction, ModelState, StepCache)> {
        let hd = self.config.hidden_dim;
        if state.h_lane.shape() != (topo.n_lanes(), hd) || state.h_goal.shape() != (topo.n_exits, hd) {
            return Err(Error::shape(
                "model state",
                format!("{}x{hd} / {}x{hd}", topo.n_lanes(), topo.n_exits),
                format!("{:?} / {:?}", state.h_lane.shape(), state.h_goal.shape()),
            ));
        }
        let seq = Sequence::new(topo.clone(), std::slice::from_ref(frame), None)?;
        let pk = Packing::new(&[&seq]);
        let tape = self.net.frame_forward(
            &self.config,
            &self.params,
            &pk,
            1,
            seq.lane_frame(0),
            seq.goal_frame(0),
            state.h_lane.data(),
            state.h_goal.data(),
        )?;
        let pred = Prediction::from_parts(tape.alpha.clone(), tape.goal_logits().to_vec());
        let next = ModelState {
            h_lane: if self.config.variant.has_lanes() {
                Tensor2::from_vec(topo.n_lanes(), hd, tape.h_lane().to_vec())?
            } else {
                state.h_lane.clone()
            },
            h_goal: if self.config.variant.has_goal_state() {
                Tensor2::from_vec(topo.n_exits, hd, tape.h_goal().to_vec())?
            } else {
                state.h_goal.clone()
            },
        };
        Ok((pred, next, StepCache { tape }))
    }

    pub fn predict_sequence(&self, map: &IntersectionMap, frames: &[FeatureFrame]) -> Result<Vec<Prediction>> {
        let seq = Sequence::from_map(map, frames, None)?;
        Ok(self.predict_batch(&[&seq])?.pop().unwrap())
    }

    /// Predictions for every frame of every sequence, in input order.
    pub fn predict_batch(&self, seqs: &[&Sequence]) -> Result<Vec<Vec<Prediction>>> {
        let mut out: Vec<Vec<Prediction>> = seqs.iter().map(|s| Vec::with_capacity(s.len)).collect();
        self.net.rollout(&self.config, &self.params, seqs, false, |pk, _t, tape| {
            let logits = tape.goal_logits();
            for b in 0..tape.active {
                let alpha = if tape.alpha.is_empty() {
                    Vec::new()
                } else {
                    tape.alpha[pk.lane_off[b]..pk.lane_off[b + 1]].to_vec()
                };
                let scores = logits[pk.goal_off[b]..pk.goal_off[b + 1]].to_vec();
                out[pk.order[b]].push(Prediction::from_parts(alpha, scores));
            }
            Ok(())
        })?;
        Ok(out)
    }

    /// Batch loss (mean over sequences of the per-frame mean).
    pub fn loss(&self, seqs: &[&Sequence]) -> Result<LossTerms> {
        Ok(self.net.loss_grad(&self.config, &self.params, seqs, false)?.0)
    }

    /// Batch loss and its exact gradient via backpropagation through time.
    pub fn loss_and_grad(&self, seqs: &[&Sequence]) -> Result<(LossTerms, GradStore)> {
        let (l, g) = self.net.loss_grad(&self.config, &self.params, seqs, true)?;
        Ok((l, g.expect("gradient requested")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        weights::save_weights(path, &self.config.to_json(), &self.params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        weights::encode_weights(&self.config.to_json(), &self.params)
    }

    pub fn from_weight_file(w: WeightFile) -> Result<Self> {
        let config = ModelConfig::from_json(&w.config_json).map_err(|e| Error::Incompatible(e.to_string()))?;
        Self::from_params(config, w.params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_weight_file(weights::load_weights(path)?)
    }

    /// Loads weights and requires their config hash to equal `expected`'s.
    pub fn load_expecting(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Self> {
        let w = weights::load_weights(path)?;
        let want = weights::config_hash(&expected.to_json());
        if w.config_hash != want {
            return Err(Error::Incompatible(format!(
                "config hash {} does not match expected {}",
                weights::hex(&w.config_hash),
                weights::hex(&want)
            )));
        }
        Self::from_weight_file(w)
    }
}

/// Loss of one frame's prediction against its label.
pub fn loss_fn(pred: &Prediction, label: SeqLabel, config: &ModelConfig) -> Result<LossTerms> {
    if label.exit >= pred.beta_scores.len() {
        return Err(Error::IndexOutOfRange {
            index: label.exit,
            len: pred.beta_scores.len(),
        });
    }
    let lane = if pred.alpha.is_empty() {
        0.0
    } else {
        cross_entropy(&pred.alpha, label.lane)?
    };
    let goal = pred
        .beta_scores
        .iter()
        .enumerate()
        .map(|(j, &x)| weighted_bce(x, j == label.exit, config.pos_weight))
        .sum();
    Ok(LossTerms {
        lane,
        goal,
        total: config.effective_w_lane() * lane + config.w_goal * goal,
    })
}
