//! Per-frame recall over lanes and goals, stratified by trajectory shape and
//! by whether the map was seen in training.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract_frame, extract_sequence};
use crate::map::{IntersectionMap, Pose};
use crate::model::{FrameLabel, IntentModel, Prediction, Sequence};
use crate::sim::{Shape, Split};

/// Anything that produces per-frame lane and goal distributions.
pub trait Scorer: Sync {
    fn name(&self) -> String;
    /// Predictions for every frame of every sequence, in input order.
    fn predict_batch(&self, seqs: &[&Sequence]) -> Result<Vec<Vec<Prediction>>>;
}

impl Scorer for IntentModel {
    fn name(&self) -> String {
        self.config.variant.name().to_string()
    }

    fn predict_batch(&self, seqs: &[&Sequence]) -> Result<Vec<Vec<Prediction>>> {
        IntentModel::predict_batch(self, seqs)
    }
}

fn one_hot(n: usize, k: usize) -> Vec<f64> {
    (0..n).map(|i| if i == k { 1.0 } else { 0.0 }).collect()
}

/// Predicts the label with certainty.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleScorer;

impl Scorer for OracleScorer {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn predict_batch(&self, seqs: &[&Sequence]) -> Result<Vec<Vec<Prediction>>> {
        seqs.iter()
            .map(|s| {
                let l = s.label.ok_or_else(|| Error::Label("oracle needs labels".into()))?;
                let scores = one_hot(s.n_exits(), l.exit).iter().map(|&x| if x > 0.0 { 50.0 } else { -50.0 }).collect::<Vec<_>>();
                Ok(vec![Prediction::from_parts(one_hot(s.n_lanes(), l.lane), scores); s.len])
            })
            .collect()
    }
}

/// Picks a uniformly random lane and exit every frame.
#[derive(Debug, Clone, Copy)]
pub struct UniformRandomScorer {
    pub seed: u64,
}

impl Scorer for UniformRandomScorer {
    fn name(&self) -> String {
        "uniform".into()
    }

    fn predict_batch(&self, seqs: &[&Sequence]) -> Result<Vec<Vec<Prediction>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok(seqs
            .iter()
            .map(|s| {
                (0..s.len)
                    .map(|_| {
                        let l = rng.random_range(0..s.n_lanes());
                        let e = rng.random_range(0..s.n_exits());
                        Prediction::from_parts(one_hot(s.n_lanes(), l), one_hot(s.n_exits(), e))
                    })
                    .collect()
            })
            .collect())
    }
}

/// A labelled trajectory converted to model input.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSeq {
    pub seq: Sequence,
    pub map_id: String,
    pub shape: Shape,
}

pub fn prepare_trajectory(map: &IntersectionMap, poses: &[Pose], label: &FrameLabel, shape: Shape) -> Result<EvalSeq> {
    let frames = extract_sequence(poses, map)?;
    let lab = label.resolve(map)?;
    Ok(EvalSeq {
        seq: Sequence::from_map(map, &frames, Some(lab))?,
        map_id: map.id.clone(),
        shape,
    })
}

/// Features and labels for every trajectory of a split.
pub fn prepare_split(split: &Split) -> Result<Vec<EvalSeq>> {
    split
        .trajectories
        .iter()
        .map(|t| {
            let map = split.map(&t.map_id).ok_or_else(|| Error::UnknownId {
                kind: "map",
                id: t.map_id.clone(),
            })?;
            let label = FrameLabel {
                true_lane: t.true_lane.clone(),
                true_exit: t.true_exit.clone(),
            };
            prepare_trajectory(map, &t.poses, &label, t.shape)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Goal,
    Lane,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeSel {
    Straight,
    Curved,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeenSel {
    Seen,
    Unseen,
    All,
}

/// Frames counted: every frame, or only the last [`FINAL_FRAMES`] of each
/// trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    All,
    Final,
}

pub const FINAL_FRAMES: usize = 25;

const LEVELS: [Level; 2] = [Level::Goal, Level::Lane];
const SHAPES: [ShapeSel; 3] = [ShapeSel::Straight, ShapeSel::Curved, ShapeSel::All];
const SEENS: [SeenSel; 3] = [SeenSel::Seen, SeenSel::Unseen, SeenSel::All];
const WINDOWS: [Window; 2] = [Window::All, Window::Final];
const N_CELLS: usize = 36;

fn cell_index(w: usize, l: usize, s: usize, n: usize) -> usize {
    ((w * 2 + l) * 3 + s) * 3 + n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub window: Window,
    pub level: Level,
    pub shape: ShapeSel,
    pub seen: SeenSel,
    pub frames: u64,
    pub tp: u64,
    /// Predicted candidates that are not the label.
    pub fp: u64,
    /// Labelled candidates that were not predicted.
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub lanes: usize,
    pub exits: usize,
    pub repeats: usize,
    pub median_us: f64,
    pub p99_us: f64,
    pub mean_us: f64,
    pub median_with_features_us: f64,
    pub p99_with_features_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scorer: String,
    pub trajectories: usize,
    pub frames: u64,
    /// False when the scorer produces no lane distribution.
    pub lane_available: bool,
    pub cells: Vec<Cell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyStats>,
}

impl EvalReport {
    pub fn cell(&self, window: Window, level: Level, shape: ShapeSel, seen: SeenSel) -> &Cell {
        self.cells
            .iter()
            .find(|c| c.window == window && c.level == level && c.shape == shape && c.seen == seen)
            .expect("every cell is present")
    }

    /// Recall over all frames.
    pub fn recall(&self, level: Level, shape: ShapeSel, seen: SeenSel) -> Option<f64> {
        self.cell(Window::All, level, shape, seen).recall
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    /// Checks cell arithmetic: shape and seen partitions sum to their
    /// totals, FP equals FN, and recall lies in `[0, 1]`.
    pub fn self_check(&self) -> std::result::Result<(), String> {
        for c in &self.cells {
            if c.fp != c.fn_ {
                return Err(format!("{c:?}: fp != fn"));
            }
            if c.tp + c.fp != c.frames {
                return Err(format!("{c:?}: tp + fp != frames"));
            }
            if let Some(r) = c.recall {
                if !(0.0..=1.0).contains(&r) || r != c.precision.unwrap_or(f64::NAN) {
                    return Err(format!("{c:?}: recall out of range or != precision"));
                }
            }
        }
        for w in WINDOWS {
            for l in LEVELS {
                for n in SEENS {
                    let a = self.cell(w, l, ShapeSel::All, n);
                    let s = self.cell(w, l, ShapeSel::Straight, n);
                    let c = self.cell(w, l, ShapeSel::Curved, n);
                    if a.tp != s.tp + c.tp || a.frames != s.frames + c.frames {
                        return Err(format!("{w:?}/{l:?}/{n:?}: shape cells do not sum"));
                    }
                }
                for s in SHAPES {
                    let a = self.cell(w, l, s, SeenSel::All);
                    let x = self.cell(w, l, s, SeenSel::Seen);
                    let y = self.cell(w, l, s, SeenSel::Unseen);
                    if a.tp != x.tp + y.tp || a.frames != x.frames + y.frames {
                        return Err(format!("{w:?}/{l:?}/{s:?}: seen cells do not sum"));
                    }
                }
            }
        }
        let total = self.cell(Window::All, Level::Goal, ShapeSel::All, SeenSel::All).frames;
        if total != self.frames {
            return Err(format!("goal frames {total} != report frames {}", self.frames));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    frames: u64,
    tp: u64,
    fp: u64,
    fn_: u64,
}

#[derive(Debug, Clone)]
struct Tally {
    cells: [Counts; N_CELLS],
    frames: u64,
    lane_available: bool,
}

impl Default for Tally {
    fn default() -> Self {
        Self {
            cells: [Counts::default(); N_CELLS],
            frames: 0,
            lane_available: true,
        }
    }
}

impl Tally {
    fn merge(&mut self, o: &Tally) {
        for (a, b) in self.cells.iter_mut().zip(&o.cells) {
            a.frames += b.frames;
            a.tp += b.tp;
            a.fp += b.fp;
            a.fn_ += b.fn_;
        }
        self.frames += o.frames;
        self.lane_available &= o.lane_available;
    }

    /// `pred` is the argmax index; `label` the true one; `n` the candidates.
    fn add(&mut self, window_final: bool, level: usize, shape: usize, seen: usize, pred: usize, label: usize, n: usize) {
        // Independent counters over the candidate set.
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for j in 0..n {
            match (j == pred, j == label) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let windows: &[usize] = if window_final { &[0, 1] } else { &[0] };
        for &w in windows {
            for s in [shape, 2] {
                for v in [seen, 2] {
                    let c = &mut self.cells[cell_index(w, level, s, v)];
                    c.frames += 1;
                    c.tp += tp;
                    c.fp += fp;
                    c.fn_ += fn_;
                }
            }
        }
    }

    fn add_sequence(&mut self, item: &EvalSeq, preds: &[Prediction], seen: bool) -> Result<()> {
        let label = item.seq.label.ok_or_else(|| Error::Label("evaluation needs labels".into()))?;
        if preds.len() != item.seq.len {
            return Err(Error::shape("predictions", item.seq.len, preds.len()));
        }
        let shape = match item.shape {
            Shape::Straight => 0,
            Shape::Curved => 1,
        };
        let seen = if seen { 0 } else { 1 };
        let len = preds.len();
        for (t, p) in preds.iter().enumerate() {
            let fin = t + FINAL_FRAMES >= len;
            let ne = item.seq.n_exits();
            if p.beta_scores.len() != ne {
                return Err(Error::Label(format!("prediction has {} exits, map has {ne}", p.beta_scores.len())));
            }
            self.add(fin, 0, shape, seen, p.pred_exit(), label.exit, ne);
            match p.pred_lane() {
                Some(l) => {
                    let nl = item.seq.n_lanes();
                    if p.alpha.len() != nl {
                        return Err(Error::Label(format!("prediction has {} lanes, map has {nl}", p.alpha.len())));
                    }
                    self.add(fin, 1, shape, seen, l, label.lane, nl);
                }
                None => self.lane_available = false,
            }
            self.frames += 1;
        }
        Ok(())
    }

    fn into_report(self, scorer: String, trajectories: usize) -> EvalReport {
        let mut cells = Vec::with_capacity(N_CELLS);
        for (wi, &window) in WINDOWS.iter().enumerate() {
            for (li, &level) in LEVELS.iter().enumerate() {
                for (si, &shape) in SHAPES.iter().enumerate() {
                    for (ni, &seen) in SEENS.iter().enumerate() {
                        let c = self.cells[cell_index(wi, li, si, ni)];
                        let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
                        cells.push(Cell {
                            window,
                            level,
                            shape,
                            seen,
                            frames: c.frames,
                            tp: c.tp,
                            fp: c.fp,
                            fn_: c.fn_,
                            recall: ratio(c.tp, c.tp + c.fn_),
                            precision: ratio(c.tp, c.tp + c.fp),
                        });
                    }
                }
            }
        }
        EvalReport {
            scorer,
            trajectories,
            frames: self.frames,
            lane_available: self.lane_available && self.frames > 0,
            cells,
            latency: None,
        }
    }
}

/// Sequences per scorer call.
pub const EVAL_BATCH: usize = 64;

fn tally_range<S: Scorer + ?Sized>(
    scorer: &S,
    items: &[EvalSeq],
    seen: &BTreeSet<String>,
    mut visit: impl FnMut(&EvalSeq, &[Prediction]) -> Result<()>,
) -> Result<Tally> {
    let mut tally = Tally::default();
    for chunk in items.chunks(EVAL_BATCH) {
        let refs: Vec<&Sequence> = chunk.iter().map(|e| &e.seq).collect();
        let preds = scorer.predict_batch(&refs)?;
        for (item, p) in chunk.iter().zip(&preds) {
            tally.add_sequence(item, p, seen.contains(&item.map_id))?;
            visit(item, p)?;
        }
    }
    Ok(tally)
}

/// Single-threaded [`evaluate`] that also hands every sequence's
/// predictions to `visit`.
pub fn evaluate_with<S: Scorer + ?Sized>(
    scorer: &S,
    items: &[EvalSeq],
    seen: &BTreeSet<String>,
    visit: impl FnMut(&EvalSeq, &[Prediction]) -> Result<()>,
) -> Result<EvalReport> {
    let tally = tally_range(scorer, items, seen, visit)?;
    Ok(tally.into_report(scorer.name(), items.len()))
}

/// Evaluates every frame of every item. `threads > 1` splits the items into
/// contiguous ranges; counters are integers so the report does not depend on
/// the thread count.
pub fn evaluate<S: Scorer + ?Sized>(scorer: &S, items: &[EvalSeq], seen: &BTreeSet<String>, threads: usize) -> Result<EvalReport> {
    let threads = threads.max(1).min(items.len().div_ceil(EVAL_BATCH).max(1));
    let tally = if threads == 1 {
        tally_range(scorer, items, seen, |_, _| Ok(()))?
    } else {
        let per = items.len().div_ceil(threads).div_ceil(EVAL_BATCH) * EVAL_BATCH;
        let parts: Vec<Result<Tally>> = std::thread::scope(|s| {
            let handles: Vec<_> = items
                .chunks(per)
                .map(|c| s.spawn(move || tally_range(scorer, c, seen, |_, _| Ok(()))))
                .collect();
            handles.into_iter().map(|h| h.join().expect("evaluation thread panicked")).collect()
        });
        let mut total = Tally::default();
        for p in parts {
            total.merge(&p?);
        }
        total
    };
    Ok(tally.into_report(scorer.name(), items.len()))
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let i = ((sorted.len() as f64 - 1.0) * q).round() as usize;
    sorted[i.min(sorted.len() - 1)]
}

pub const LATENCY_WARMUP: usize = 100;

/// Wall time of one model step on `map`, cycling through `poses`; the first
/// [`LATENCY_WARMUP`] calls are discarded.
pub fn latency_probe(model: &IntentModel, map: &IntersectionMap, poses: &[Pose], repeats: usize) -> Result<LatencyStats> {
    if poses.is_empty() || repeats == 0 {
        return Err(Error::Empty("latency probe input"));
    }
    let topo = crate::model::MapTopology::from_map(map)?;
    let frames = extract_sequence(poses, map)?;
    let mut state = model.init_state(&topo);
    let mut bare = Vec::with_capacity(repeats);
    for k in 0..LATENCY_WARMUP + repeats {
        let f = &frames[k % frames.len()];
        let t0 = Instant::now();
        let (_, next, _) = model.step(&topo, &state, f)?;
        let dt = t0.elapsed().as_secs_f64() * 1e6;
        state = next;
        if k >= LATENCY_WARMUP {
            bare.push(dt);
        }
    }
    let mut state = model.init_state(&topo);
    let mut full = Vec::with_capacity(repeats);
    for k in 0..LATENCY_WARMUP + repeats {
        let t = k % poses.len();
        let t0 = Instant::now();
        let f = extract_frame(poses, t, map)?;
        let (_, next, _) = model.step(&topo, &state, &f)?;
        let dt = t0.elapsed().as_secs_f64() * 1e6;
        state = next;
        if k >= LATENCY_WARMUP {
            full.push(dt);
        }
    }
    let mean = bare.iter().sum::<f64>() / bare.len() as f64;
    bare.sort_by(f64::total_cmp);
    full.sort_by(f64::total_cmp);
    Ok(LatencyStats {
        lanes: map.lanes.len(),
        exits: map.exits.len(),
        repeats,
        median_us: percentile(&bare, 0.5),
        p99_us: percentile(&bare, 0.99),
        mean_us: mean,
        median_with_features_us: percentile(&full, 0.5),
        p99_with_features_us: percentile(&full, 0.99),
    })
}
