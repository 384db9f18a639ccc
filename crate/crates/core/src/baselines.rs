//! Comparison scorers: k-nearest-neighbour ranking and a per-frame MLP with
//! batch normalisation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::{EvalSeq, Scorer};
use crate::features::{GOAL_FEATURE_DIM, LANE_FEATURE_DIM};
use crate::model::{Prediction, Sequence};
use crate::numcore::loss::{cross_entropy, cross_entropy_logit_grad, softmax_in_place, weighted_bce, weighted_bce_grad};
use crate::numcore::tensor::sum_rows_acc;
use crate::numcore::{adam_step, gemm, AdamState, GradStore, Linear, MatMut, MatRef, ParamId, ParamStore, Activation};
use crate::train::TrainConfig;

pub const KNN_K: usize = 9;
pub const KNN_MAX_POINTS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Neighbor {
    dist: f64,
    index: usize,
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, o: &Self) -> Ordering {
        self.dist.total_cmp(&o.dist).then(self.index.cmp(&o.index))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: Box<Node>, right: Box<Node> },
}

const LEAF_SIZE: usize = 16;

/// Labelled points with exact k-nearest-neighbour queries (squared
/// Euclidean distance, ties broken by insertion index).
#[derive(Debug, Clone)]
pub struct KnnIndex {
    pub dim: usize,
    pub k: usize,
    points: Vec<f64>,
    labels: Vec<bool>,
    /// Point indices permuted so every leaf is a contiguous range.
    perm: Vec<usize>,
    root: Node,
}

impl KnnIndex {
    pub fn build(dim: usize, points: Vec<f64>, labels: Vec<bool>, k: usize) -> Result<Self> {
        if dim == 0 || points.len() != labels.len() * dim {
            return Err(Error::shape("knn points", labels.len() * dim, points.len()));
        }
        if labels.is_empty() {
            return Err(Error::Empty("knn index"));
        }
        if k == 0 || k > labels.len() {
            return Err(Error::Config {
                path: "knn.k".into(),
                message: format!("k = {k} with {} stored points", labels.len()),
            });
        }
        let mut perm: Vec<usize> = (0..labels.len()).collect();
        let n = perm.len();
        let root = Self::build_node(&points, dim, &mut perm, 0, n);
        Ok(Self {
            dim,
            k,
            points,
            labels,
            perm,
            root,
        })
    }

    fn build_node(points: &[f64], dim: usize, perm: &mut [usize], start: usize, end: usize) -> Node {
        if end - start <= LEAF_SIZE {
            return Node::Leaf { start, end };
        }
        let slice = &mut perm[start..end];
        let spread = |d: usize| {
            let (lo, hi) = slice.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = points[i * dim + d];
                (lo.min(v), hi.max(v))
            });
            hi - lo
        };
        let axis = (0..dim).max_by(|&a, &b| spread(a).total_cmp(&spread(b)).then(b.cmp(&a))).unwrap();
        if spread(axis) == 0.0 {
            return Node::Leaf { start, end };
        }
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| {
            points[a * dim + axis].total_cmp(&points[b * dim + axis]).then(a.cmp(&b))
        });
        let value = points[slice[mid] * dim + axis];
        Node::Split {
            dim: axis,
            value,
            left: Box::new(Self::build_node(points, dim, perm, start, start + mid)),
            right: Box::new(Self::build_node(points, dim, perm, start + mid, end)),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn dist(&self, i: usize, q: &[f64]) -> f64 {
        self.points[i * self.dim..(i + 1) * self.dim]
            .iter()
            .zip(q)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    fn search(&self, node: &Node, q: &[f64], heap: &mut BinaryHeap<Neighbor>) {
        match node {
            Node::Leaf { start, end } => {
                for &i in &self.perm[*start..*end] {
                    let n = Neighbor { dist: self.dist(i, q), index: i };
                    if heap.len() < self.k {
                        heap.push(n);
                    } else if n < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(n);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[*dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, heap);
                // Points on the far side are at least |diff| away along this axis.
                if heap.len() < self.k || diff * diff <= heap.peek().unwrap().dist {
                    self.search(far, q, heap);
                }
            }
        }
    }

    /// Indices of the `k` nearest stored points, nearest first.
    pub fn neighbors(&self, q: &[f64]) -> Vec<usize> {
        let mut heap = BinaryHeap::with_capacity(self.k + 1);
        self.search(&self.root, q, &mut heap);
        heap.into_sorted_vec().into_iter().map(|n| n.index).collect()
    }

    /// Exhaustive reference for [`neighbors`](Self::neighbors).
    pub fn brute_force_neighbors(&self, q: &[f64]) -> Vec<usize> {
        let mut all: Vec<Neighbor> = (0..self.len()).map(|i| Neighbor { dist: self.dist(i, q), index: i }).collect();
        all.sort();
        all.truncate(self.k);
        all.into_iter().map(|n| n.index).collect()
    }

    /// Fraction of the `k` nearest points that are positive.
    pub fn score(&self, q: &[f64]) -> f64 {
        let pos = self.neighbors(q).into_iter().filter(|&i| self.labels[i]).count();
        pos as f64 / self.k as f64
    }
}

/// Normalised scores, or uniform when every score is zero.
fn normalise(scores: &[f64]) -> Vec<f64> {
    let s: f64 = scores.iter().sum();
    if s > 0.0 {
        scores.iter().map(|x| x / s).collect()
    } else {
        vec![1.0 / scores.len() as f64; scores.len()]
    }
}

/// Logit that maps to a KNN score under the sigmoid, clamped to stay finite.
fn score_logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

/// Two KNN classifiers ranking lanes and goals from current-frame features.
#[derive(Debug, Clone)]
pub struct KnnBaseline {
    pub lane: KnnIndex,
    pub goal: KnnIndex,
}

fn collect_points(items: &[EvalSeq], lanes: bool) -> Result<(Vec<f64>, Vec<bool>)> {
    let dim = if lanes { LANE_FEATURE_DIM } else { GOAL_FEATURE_DIM };
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for it in items {
        let s = &it.seq;
        let lab = s.label.ok_or_else(|| Error::Label("knn training needs labels".into()))?;
        let (n, x, pos) = if lanes {
            (s.n_lanes(), &s.lane_x, lab.lane)
        } else {
            (s.n_exits(), &s.goal_x, lab.exit)
        };
        pts.extend_from_slice(x);
        for _ in 0..s.len {
            labels.extend((0..n).map(|j| j == pos));
        }
        debug_assert_eq!(pts.len(), labels.len() * dim);
    }
    Ok((pts, labels))
}

fn subsample(dim: usize, pts: Vec<f64>, labels: Vec<bool>, max: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    if labels.len() <= max {
        return (pts, labels);
    }
    let mut keep = index::sample(rng, labels.len(), max).into_vec();
    keep.sort_unstable();
    let p = keep.iter().flat_map(|&i| pts[i * dim..(i + 1) * dim].iter().copied()).collect();
    let l = keep.iter().map(|&i| labels[i]).collect();
    (p, l)
}

impl KnnBaseline {
    /// One stored point per (frame, element) of the training set, uniformly
    /// subsampled to `max_points` per classifier.
    pub fn fit(items: &[EvalSeq], k: usize, max_points: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lp, ll) = collect_points(items, true)?;
        let (lp, ll) = subsample(LANE_FEATURE_DIM, lp, ll, max_points, &mut rng);
        let (gp, gl) = collect_points(items, false)?;
        let (gp, gl) = subsample(GOAL_FEATURE_DIM, gp, gl, max_points, &mut rng);
        Ok(Self {
            lane: KnnIndex::build(LANE_FEATURE_DIM, lp, ll, k)?,
            goal: KnnIndex::build(GOAL_FEATURE_DIM, gp, gl, k)?,
        })
    }
}

impl Scorer for KnnBaseline {
    fn name(&self) -> String {
        "knn".into()
    }

    fn predict_batch(&self, seqs: &[&Sequence]) -> Result<Vec<Vec<Prediction>>> {
        Ok(seqs
            .iter()
            .map(|s| {
                (0..s.len)
                    .map(|t| {
                        let lane: Vec<f64> = s.lane_frame(t).chunks_exact(LANE_FEATURE_DIM).map(|q| self.lane.score(q)).collect();
                        let goal: Vec<f64> = s.goal_frame(t).chunks_exact(GOAL_FEATURE_DIM).map(|q| self.goal.score(q)).collect();
                        Prediction::from_parts(normalise(&lane), goal.iter().map(|&p| score_logit(p)).collect())
                    })
                    .collect()
            })
            .collect())
    }
}

// ---------------------------------------------------------------------------
// MLP baseline

pub const MLP_HIDDEN: usize = 128;
pub const BN_EPS: f64 = 1e-8;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Affine → BN → ReLU, twice, then affine to one logit.
#[derive(Debug, Clone, PartialEq)]
pub struct BnMlp {
    pub input: usize,
    layers: [Linear; 3],
    gamma: [ParamId; 2],
    beta: [ParamId; 2],
    /// Running mean and (biased) variance per hidden layer.
    running: Option<[(Vec<f64>, Vec<f64>); 2]>,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    rows: usize,
    x: Vec<f64>,
    /// Per hidden layer: normalised pre-activation, 1/σ, post-ReLU output.
    xhat: [Vec<f64>; 2],
    inv_std: [Vec<f64>; 2],
    out: [Vec<f64>; 2],
    logits: Vec<f64>,
}

impl BnCache {
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }
}

/// Column means and biased variances of a `rows × cols` matrix.
pub fn column_stats(x: &[f64], rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; cols];
    for r in x.chunks_exact(cols) {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut var = vec![0.0; cols];
    for r in x.chunks_exact(cols) {
        var.iter_mut().zip(r).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m));
    }
    var.iter_mut().for_each(|s| *s /= rows as f64);
    (mean, var)
}

impl BnMlp {
    fn register(store: &mut ParamStore, prefix: &str, input: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let h = MLP_HIDDEN;
        let l0 = Linear::register(store, &format!("{prefix}.l0"), input, h, Activation::Identity, rng)?;
        let l1 = Linear::register(store, &format!("{prefix}.l1"), h, h, Activation::Identity, rng)?;
        let l2 = Linear::register(store, &format!("{prefix}.l2"), h, 1, Activation::Identity, rng)?;
        let ones = crate::numcore::Tensor2::row_vector(vec![1.0; h]);
        let zeros = crate::numcore::Tensor2::row_vector(vec![0.0; h]);
        let g0 = store.add(format!("{prefix}.bn0.gamma"), ones.clone())?;
        let b0 = store.add(format!("{prefix}.bn0.beta"), zeros.clone())?;
        let g1 = store.add(format!("{prefix}.bn1.gamma"), ones)?;
        let b1 = store.add(format!("{prefix}.bn1.beta"), zeros)?;
        Ok(Self {
            input,
            layers: [l0, l1, l2],
            gamma: [g0, g1],
            beta: [b0, b1],
            running: None,
        })
    }

    pub fn has_running_stats(&self) -> bool {
        self.running.is_some()
    }

    /// Forward over `rows` inputs. Train mode normalises with batch
    /// statistics and updates the running averages.
    pub fn forward(&mut self, params: &ParamStore, x: &[f64], rows: usize, mode: Mode) -> Result<BnCache> {
        if x.len() != rows * self.input {
            return Err(Error::shape("mlp baseline input", rows * self.input, x.len()));
        }
        if rows == 0 {
            return Err(Error::Empty("mlp baseline batch"));
        }
        if mode == Mode::Eval && self.running.is_none() {
            return Err(Error::NoRunningStats);
        }
        let h = MLP_HIDDEN;
        let mut input = x.to_vec();
        let mut xhat: [Vec<f64>; 2] = Default::default();
        let mut inv_std: [Vec<f64>; 2] = Default::default();
        let mut out: [Vec<f64>; 2] = Default::default();
        for l in 0..2 {
            let mut pre = vec![0.0; rows * h];
            self.layers[l].forward(params, &input, rows, &mut pre);
            let (mean, var) = match mode {
                Mode::Train => {
                    let (m, v) = column_stats(&pre, rows, h);
                    let run = self.running.get_or_insert_with(|| [(vec![0.0; h], vec![1.0; h]), (vec![0.0; h], vec![1.0; h])]);
                    let (rm, rv) = &mut run[l];
                    rm.iter_mut().zip(&m).for_each(|(r, b)| *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b);
                    rv.iter_mut().zip(&v).for_each(|(r, b)| *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b);
                    (m, v)
                }
                Mode::Eval => self.running.as_ref().unwrap()[l].clone(),
            };
            let is: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            let (g, b) = (params.get(self.gamma[l]).data(), params.get(self.beta[l]).data());
            let mut xh = pre;
            let mut y = vec![0.0; rows * h];
            for (xr, yr) in xh.chunks_exact_mut(h).zip(y.chunks_exact_mut(h)) {
                for j in 0..h {
                    xr[j] = (xr[j] - mean[j]) * is[j];
                    yr[j] = (g[j] * xr[j] + b[j]).max(0.0);
                }
            }
            xhat[l] = xh;
            inv_std[l] = is;
            input = y.clone();
            out[l] = y;
        }
        let mut logits = vec![0.0; rows];
        self.layers[2].forward(params, &input, rows, &mut logits);
        Ok(BnCache {
            rows,
            x: x.to_vec(),
            xhat,
            inv_std,
            out,
            logits,
        })
    }

    /// Backward of a train-mode forward; `dlogits` is `rows × 1`.
    pub fn backward(&self, params: &ParamStore, cache: &BnCache, dlogits: &[f64], grads: &mut GradStore) {
        let (rows, h) = (cache.rows, MLP_HIDDEN);
        let mut dy = dlogits.to_vec();
        let mut dx = vec![0.0; rows * h];
        self.layers[2].backward(params, &cache.out[1], &cache.logits, &mut dy, rows, grads, Some(&mut dx));
        for l in (0..2).rev() {
            let g = params.get(self.gamma[l]).data();
            let (xh, is) = (&cache.xhat[l], &cache.inv_std[l]);
            // ReLU then affine of BN.
            let mut dxh = vec![0.0; rows * h];
            let mut dg = vec![0.0; h];
            let mut db = vec![0.0; h];
            for i in 0..rows {
                for j in 0..h {
                    let k = i * h + j;
                    let d = if cache.out[l][k] > 0.0 { dx[k] } else { 0.0 };
                    dg[j] += d * xh[k];
                    db[j] += d;
                    dxh[k] = d * g[j];
                }
            }
            grads.get_mut(self.gamma[l]).data_mut().iter_mut().zip(&dg).for_each(|(a, b)| *a += b);
            grads.get_mut(self.beta[l]).data_mut().iter_mut().zip(&db).for_each(|(a, b)| *a += b);
            // Through batch statistics:
            // dpre = (1/σ)·(dxh − mean(dxh) − xhat·mean(dxh·xhat))
            let mut m1 = vec![0.0; h];
            let mut m2 = vec![0.0; h];
            for i in 0..rows {
                for j in 0..h {
                    m1[j] += dxh[i * h + j];
                    m2[j] += dxh[i * h + j] * xh[i * h + j];
                }
            }
            let n = rows as f64;
            let mut dpre = dxh;
            for i in 0..rows {
                for j in 0..h {
                    let k = i * h + j;
                    dpre[k] = is[j] * (dpre[k] - m1[j] / n - xh[k] * m2[j] / n);
                }
            }
            let input: &[f64] = if l == 0 { &cache.x } else { &cache.out[0] };
            let lin = &self.layers[l];
            gemm(
                MatRef::dense(input, rows, lin.input).t(),
                MatRef::dense(&dpre, rows, h),
                1.0,
                grads.get_mut(lin.w).into(),
            );
            sum_rows_acc(&dpre, h, grads.get_mut(lin.b).data_mut());
            if l == 1 {
                dx = vec![0.0; rows * lin.input];
                gemm(
                    MatRef::dense(&dpre, rows, h),
                    MatRef::from(params.get(lin.w)).t(),
                    0.0,
                    MatMut::dense(&mut dx, rows, lin.input),
                );
            }
        }
    }
}

/// Lane and goal scorers trained with the model's loss on single frames.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpBaseline {
    pub params: ParamStore,
    pub lane: BnMlp,
    pub goal: BnMlp,
    pub pos_weight: f64,
    pub w_lane: f64,
    pub w_goal: f64,
}

/// Row offsets of every frame's lanes and exits in a flattened batch.
struct FrameRows {
    lane_x: Vec<f64>,
    goal_x: Vec<f64>,
    /// (lane start, lane end, goal start, goal end, weight, lane label, exit label)
    frames: Vec<(usize, usize, usize, usize, f64, usize, usize)>,
}

fn flatten(seqs: &[&Sequence], n_seqs: f64) -> Result<FrameRows> {
    let mut fr = FrameRows {
        lane_x: Vec::new(),
        goal_x: Vec::new(),
        frames: Vec::new(),
    };
    for s in seqs {
        let lab = s.label.ok_or_else(|| Error::Label("training needs labels".into()))?;
        let w = 1.0 / (n_seqs * s.len as f64);
        for t in 0..s.len {
            let l0 = fr.lane_x.len() / LANE_FEATURE_DIM;
            let g0 = fr.goal_x.len() / GOAL_FEATURE_DIM;
            fr.lane_x.extend_from_slice(s.lane_frame(t));
            fr.goal_x.extend_from_slice(s.goal_frame(t));
            fr.frames.push((l0, l0 + s.n_lanes(), g0, g0 + s.n_exits(), w, lab.lane, lab.exit));
        }
    }
    Ok(fr)
}

impl MlpBaseline {
    pub fn new(seed: u64, pos_weight: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let lane = BnMlp::register(&mut params, "mlp_lane", LANE_FEATURE_DIM, &mut rng)?;
        let goal = BnMlp::register(&mut params, "mlp_goal", GOAL_FEATURE_DIM, &mut rng)?;
        Ok(Self {
            params,
            lane,
            goal,
            pos_weight,
            w_lane: 1.0,
            w_goal: 1.0,
        })
    }

    /// Loss (frame-averaged per sequence, then over sequences) and gradient
    /// of one train-mode batch.
    pub fn loss_and_grad(&mut self, seqs: &[&Sequence]) -> Result<(f64, GradStore)> {
        let fr = flatten(seqs, seqs.len() as f64)?;
        let (nl, ng) = (fr.lane_x.len() / LANE_FEATURE_DIM, fr.goal_x.len() / GOAL_FEATURE_DIM);
        let lc = self.lane.forward(&self.params, &fr.lane_x, nl, Mode::Train)?;
        let gc = self.goal.forward(&self.params, &fr.goal_x, ng, Mode::Train)?;
        let mut dl = vec![0.0; nl];
        let mut dg = vec![0.0; ng];
        let mut loss = 0.0;
        for &(l0, l1, g0, g1, w, ll, le) in &fr.frames {
            let mut p = lc.logits[l0..l1].to_vec();
            softmax_in_place(&mut p);
            loss += w * self.w_lane * cross_entropy(&p, ll)?;
            cross_entropy_logit_grad(&p, ll, &mut dl[l0..l1]);
            dl[l0..l1].iter_mut().for_each(|d| *d *= w * self.w_lane);
            for (j, g) in (g0..g1).enumerate() {
                let y = j == le;
                loss += w * self.w_goal * weighted_bce(gc.logits[g], y, self.pos_weight);
                dg[g] = w * self.w_goal * weighted_bce_grad(gc.logits[g], y, self.pos_weight);
            }
        }
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("mlp baseline loss {loss}")));
        }
        let mut grads = self.params.zero_grads();
        self.lane.backward(&self.params, &lc, &dl, &mut grads);
        self.goal.backward(&self.params, &gc, &dg, &mut grads);
        Ok((loss, grads))
    }

    /// Trains with the model's optimiser and schedule; returns the per-epoch
    /// mean training loss.
    pub fn fit(&mut self, items: &[EvalSeq], cfg: &TrainConfig) -> Result<Vec<f64>> {
        cfg.validate()?;
        if items.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..items.len()).collect();
        let mut adam = AdamState::new(&self.params);
        let mut history = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for idx in order.chunks(cfg.batch_size) {
                let batch: Vec<&Sequence> = idx.iter().map(|&i| &items[i].seq).collect();
                let (l, g) = crate::train::accumulate(&batch, |micro| self.loss_and_grad(micro))?;
                adam_step(&mut self.params, &g, &mut adam, cfg.lr_at(epoch))?;
                total += l * batch.len() as f64;
            }
            history.push(total / items.len() as f64);
        }
        Ok(history)
    }

    /// Eval-mode logits of one element type.
    fn eval_logits(&self, lanes: bool, x: &[f64], rows: usize) -> Result<Vec<f64>> {
        let mut net = if lanes { self.lane.clone() } else { self.goal.clone() };
        Ok(net.forward(&self.params, x, rows, Mode::Eval)?.logits)
    }
}

impl Scorer for MlpBaseline {
    fn name(&self) -> String {
        "mlp".into()
    }

    fn predict_batch(&self, seqs: &[&Sequence]) -> Result<Vec<Vec<Prediction>>> {
        let mut out = Vec::with_capacity(seqs.len());
        for s in seqs {
            let (nl, ne) = (s.n_lanes(), s.n_exits());
            let ll = self.eval_logits(true, &s.lane_x, s.len * nl)?;
            let gl = self.eval_logits(false, &s.goal_x, s.len * ne)?;
            out.push(
                (0..s.len)
                    .map(|t| {
                        let mut a = ll[t * nl..(t + 1) * nl].to_vec();
                        softmax_in_place(&mut a);
                        Prediction::from_parts(a, gl[t * ne..(t + 1) * ne].to_vec())
                    })
                    .collect(),
            );
        }
        Ok(out)
    }
}
