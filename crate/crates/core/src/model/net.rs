//! Packed forward and backward passes.
//!
//! A batch of sequences is sorted by length (longest first) so the sequences
//! still running at frame `t` form a prefix. Their lane rows and goal rows are
//! then prefixes of the batch-wide row arrays and one GEMM per layer covers
//! the whole batch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::sequence::Sequence;
use crate::error::{Error, Result};
use crate::features::{GOAL_FEATURE_DIM, LANE_FEATURE_DIM};
use crate::numcore::loss::{
    cross_entropy, cross_entropy_logit_grad, softmax_backward, softmax_in_place, weighted_bce, weighted_bce_grad,
};
use crate::numcore::tensor::sum_rows_acc;
use crate::numcore::{gemm, Activation, GradStore, GruCell, GruStep, Linear, MatMut, MatRef, Mlp, MlpCache, ParamStore};

/// Attention scorer: one split-input first layer followed by an MLP to one logit.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AttnHead {
    pub first: Linear,
    pub rest: Mlp,
}

impl AttnHead {
    fn register(store: &mut ParamStore, prefix: &str, input: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let act = |i: usize| if i + 2 < dims.len() { Activation::Relu } else { Activation::Identity };
        let first = Linear::register(store, &format!("{prefix}.l0"), dims[0], dims[1], act(0), rng)?;
        let rest = (1..dims.len() - 1)
            .map(|i| Linear::register(store, &format!("{prefix}.l{i}"), dims[i], dims[i + 1], act(i), rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            first,
            rest: Mlp { layers: rest },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Net {
    pub lane_embed: Mlp,
    pub goal_embed: Mlp,
    pub lane_gru: GruCell,
    pub goal_gru: GruCell,
    pub lane_attn: AttnHead,
    pub goal_attn: AttnHead,
}

impl Net {
    pub fn build(config: &ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (ed, hd) = (config.embed_dim, config.hidden_dim);
        let dims = |input: usize| {
            let mut d = vec![input];
            d.extend_from_slice(&config.embed_hidden);
            d.push(ed);
            d
        };
        let lane_embed = Mlp::register(&mut store, "lane_embed", &dims(LANE_FEATURE_DIM), &mut rng)?;
        let goal_embed = Mlp::register(&mut store, "goal_embed", &dims(GOAL_FEATURE_DIM), &mut rng)?;
        let lane_gru = GruCell::register(&mut store, "lane_gru", ed, hd, &mut rng)?;
        let goal_gru = GruCell::register(&mut store, "goal_gru", ed, hd, &mut rng)?;
        let lane_attn = AttnHead::register(&mut store, "lane_attn", 2 * hd + ed, &config.lane_attn_hidden, &mut rng)?;
        let goal_attn = AttnHead::register(&mut store, "goal_attn", 2 * hd, &config.goal_attn_hidden, &mut rng)?;
        Ok((
            Self {
                lane_embed,
                goal_embed,
                lane_gru,
                goal_gru,
                lane_attn,
                goal_attn,
            },
            store,
        ))
    }
}

/// Row layout of a packed batch.
#[derive(Debug, Clone)]
pub(crate) struct Packing {
    /// Packed position → caller's index.
    pub order: Vec<usize>,
    pub lens: Vec<usize>,
    pub lane_off: Vec<usize>,
    pub goal_off: Vec<usize>,
    /// Global goal row of every lane row.
    pub lane_goal: Vec<usize>,
    /// Number of running sequences at each frame.
    pub active: Vec<usize>,
}

impl Packing {
    pub fn new(seqs: &[&Sequence]) -> Self {
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(seqs[i].len));
        let mut lane_off = vec![0];
        let mut goal_off = vec![0];
        let mut lane_goal = Vec::new();
        for &i in &order {
            let s = seqs[i];
            let g0 = *goal_off.last().unwrap();
            lane_goal.extend(s.topology.lane_exit.iter().map(|&e| g0 + e));
            lane_off.push(lane_off.last().unwrap() + s.n_lanes());
            goal_off.push(g0 + s.n_exits());
        }
        let lens: Vec<usize> = order.iter().map(|&i| seqs[i].len).collect();
        let max_len = lens.first().copied().unwrap_or(0);
        let active = (0..max_len).map(|t| lens.iter().take_while(|&&l| l > t).count()).collect();
        Self {
            order,
            lens,
            lane_off,
            goal_off,
            lane_goal,
            active,
        }
    }

    pub fn max_len(&self) -> usize {
        self.active.len()
    }

    fn gather(&self, seqs: &[&Sequence], t: usize) -> (Vec<f64>, Vec<f64>) {
        let a = self.active[t];
        let mut xl = Vec::with_capacity(self.lane_off[a] * LANE_FEATURE_DIM);
        let mut xg = Vec::with_capacity(self.goal_off[a] * GOAL_FEATURE_DIM);
        for &i in &self.order[..a] {
            xl.extend_from_slice(seqs[i].lane_frame(t));
            xg.extend_from_slice(seqs[i].goal_frame(t));
        }
        (xl, xg)
    }
}

/// Everything one frame's backward pass needs.
#[derive(Debug, Clone)]
pub(crate) struct FrameTape {
    pub active: usize,
    pub rows_l: usize,
    pub rows_g: usize,
    pub lane_embed: Option<MlpCache>,
    pub lane_gru: Option<GruStep>,
    pub lane_first: Vec<f64>,
    pub lane_head: Option<MlpCache>,
    pub alpha: Vec<f64>,
    pub goal_embed: Option<MlpCache>,
    pub goal_gru: Option<GruStep>,
    pub p: Vec<f64>,
    pub goal_first: Vec<f64>,
    pub goal_head: MlpCache,
}

impl FrameTape {
    pub fn goal_logits(&self) -> &[f64] {
        self.goal_head.output()
    }

    pub fn h_lane(&self) -> &[f64] {
        self.lane_gru.as_ref().map_or(&[], |s| &s.h)
    }

    pub fn h_goal(&self) -> &[f64] {
        self.goal_gru.as_ref().map_or(&[], |s| &s.h)
    }
}

/// Per-frame loss seeds.
struct Seeds {
    lane: Vec<f64>,
    goal: Vec<f64>,
}

/// Loss split into its two terms, each averaged over frames then sequences.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    /// Lane cross-entropy (unweighted).
    pub lane: f64,
    /// Goal binary cross-entropy summed over exits (unweighted).
    pub goal: f64,
    /// `w_lane·lane + w_goal·goal` with the variant's effective weights.
    pub total: f64,
}

fn row_block(w: &[f64], cols: usize, r0: usize, r1: usize) -> MatRef<'_> {
    MatRef::dense(&w[r0 * cols..r1 * cols], r1 - r0, cols)
}

fn row_block_mut(w: &mut [f64], cols: usize, r0: usize, r1: usize) -> MatMut<'_> {
    MatMut::dense(&mut w[r0 * cols..r1 * cols], r1 - r0, cols)
}

impl Net {
    /// One packed frame. `h_*_prev` hold at least the active rows.
    #[allow(clippy::too_many_arguments)]
    pub fn frame_forward(
        &self,
        cfg: &ModelConfig,
        params: &ParamStore,
        pk: &Packing,
        active: usize,
        xl: &[f64],
        xg: &[f64],
        h_l_prev: &[f64],
        h_g_prev: &[f64],
    ) -> Result<FrameTape> {
        let v = cfg.variant;
        let (hd, ed) = (cfg.hidden_dim, cfg.embed_dim);
        let rows_l = pk.lane_off[active];
        let rows_g = pk.goal_off[active];

        let (goal_embed, goal_gru) = if v.has_goal_state() {
            let emb = self.goal_embed.forward(params, xg, rows_g)?;
            let gru = self.goal_gru.forward(params, emb.output(), &h_g_prev[..rows_g * hd], rows_g)?;
            (Some(emb), Some(gru))
        } else {
            (None, None)
        };
        let h_g: &[f64] = goal_gru.as_ref().map_or(&[], |s| &s.h);

        let mut lane_embed = None;
        let mut lane_gru = None;
        let mut lane_first = Vec::new();
        let mut lane_head = None;
        let mut alpha = Vec::new();
        let mut p = Vec::new();
        if v.has_lanes() {
            let emb = self.lane_embed.forward(params, xl, rows_l)?;
            let gru = self.lane_gru.forward(params, emb.output(), &h_l_prev[..rows_l * hd], rows_l)?;
            let first = &self.lane_attn.first;
            let a0 = first.output;
            let w = params.get(first.w).data();
            let mut pre = vec![0.0; rows_l * a0];
            gemm(
                MatRef::dense(&gru.h, rows_l, hd),
                row_block(w, a0, hd, 2 * hd),
                0.0,
                MatMut::dense(&mut pre, rows_l, a0),
            );
            gemm(
                MatRef::dense(emb.output(), rows_l, ed),
                row_block(w, a0, 2 * hd, 2 * hd + ed),
                1.0,
                MatMut::dense(&mut pre, rows_l, a0),
            );
            if v.lane_sees_goal() {
                let mut ag = vec![0.0; rows_g * a0];
                gemm(
                    MatRef::dense(h_g, rows_g, hd),
                    row_block(w, a0, 0, hd),
                    0.0,
                    MatMut::dense(&mut ag, rows_g, a0),
                );
                for (i, row) in pre.chunks_exact_mut(a0).enumerate() {
                    let g = pk.lane_goal[i];
                    row.iter_mut().zip(&ag[g * a0..(g + 1) * a0]).for_each(|(x, y)| *x += y);
                }
            }
            crate::numcore::tensor::add_row_bias(&mut pre, params.get(first.b).data());
            first.activation.apply(&mut pre);
            let head = self.lane_attn.rest.forward(params, &pre, rows_l)?;
            alpha = head.output().to_vec();
            for b in 0..active {
                softmax_in_place(&mut alpha[pk.lane_off[b]..pk.lane_off[b + 1]]);
            }
            if v.goal_sees_lanes() {
                p = vec![0.0; rows_g * hd];
                for i in 0..rows_l {
                    let g = pk.lane_goal[i];
                    let a = alpha[i];
                    p[g * hd..(g + 1) * hd]
                        .iter_mut()
                        .zip(&gru.h[i * hd..(i + 1) * hd])
                        .for_each(|(x, h)| *x += a * h);
                }
            }
            lane_embed = Some(emb);
            lane_gru = Some(gru);
            lane_first = pre;
            lane_head = Some(head);
        }

        let first = &self.goal_attn.first;
        let b0 = first.output;
        let w = params.get(first.w).data();
        let mut pre = vec![0.0; rows_g * b0];
        if v.goal_sees_goal() {
            gemm(
                MatRef::dense(h_g, rows_g, hd),
                row_block(w, b0, 0, hd),
                1.0,
                MatMut::dense(&mut pre, rows_g, b0),
            );
        }
        if v.goal_sees_lanes() {
            gemm(
                MatRef::dense(&p, rows_g, hd),
                row_block(w, b0, hd, 2 * hd),
                1.0,
                MatMut::dense(&mut pre, rows_g, b0),
            );
        }
        crate::numcore::tensor::add_row_bias(&mut pre, params.get(first.b).data());
        first.activation.apply(&mut pre);
        let goal_head = self.goal_attn.rest.forward(params, &pre, rows_g)?;

        Ok(FrameTape {
            active,
            rows_l,
            rows_g,
            lane_embed,
            lane_gru,
            lane_first: if v.has_lanes() { lane_first } else { Vec::new() },
            lane_head,
            alpha,
            goal_embed,
            goal_gru,
            p,
            goal_first: pre,
            goal_head,
        })
    }

    /// Backward through one packed frame. `carry_*` hold `dL/dh(t)` from later
    /// frames (zero-padded to the active rows) and are replaced by `dL/dh(t−1)`.
    #[allow(clippy::too_many_arguments)]
    fn frame_backward(
        &self,
        cfg: &ModelConfig,
        params: &ParamStore,
        pk: &Packing,
        tape: &FrameTape,
        h_l_prev: &[f64],
        h_g_prev: &[f64],
        seeds: &Seeds,
        carry_l: &mut Vec<f64>,
        carry_g: &mut Vec<f64>,
        grads: &mut GradStore,
    ) {
        let v = cfg.variant;
        let (hd, ed) = (cfg.hidden_dim, cfg.embed_dim);
        let (rows_l, rows_g) = (tape.rows_l, tape.rows_g);
        carry_l.resize(rows_l * hd, 0.0);
        carry_g.resize(rows_g * hd, 0.0);
        let h_g = tape.h_goal();
        let mut dh_g = std::mem::take(carry_g);

        // goal attention
        let first = &self.goal_attn.first;
        let b0 = first.output;
        let mut dpre = self
            .goal_attn
            .rest
            .backward(params, &tape.goal_head, &seeds.goal, grads, true)
            .expect("dx requested");
        first.activation.backward(&tape.goal_first, &mut dpre);
        sum_rows_acc(&dpre, b0, grads.get_mut(first.b).data_mut());
        if v.goal_sees_goal() {
            gemm(
                MatRef::dense(h_g, rows_g, hd).t(),
                MatRef::dense(&dpre, rows_g, b0),
                1.0,
                row_block_mut(grads.get_mut(first.w).data_mut(), b0, 0, hd),
            );
            gemm(
                MatRef::dense(&dpre, rows_g, b0),
                row_block(params.get(first.w).data(), b0, 0, hd).t(),
                1.0,
                MatMut::dense(&mut dh_g, rows_g, hd),
            );
        }
        let mut dp = Vec::new();
        if v.goal_sees_lanes() {
            gemm(
                MatRef::dense(&tape.p, rows_g, hd).t(),
                MatRef::dense(&dpre, rows_g, b0),
                1.0,
                row_block_mut(grads.get_mut(first.w).data_mut(), b0, hd, 2 * hd),
            );
            dp = vec![0.0; rows_g * hd];
            gemm(
                MatRef::dense(&dpre, rows_g, b0),
                row_block(params.get(first.w).data(), b0, hd, 2 * hd).t(),
                0.0,
                MatMut::dense(&mut dp, rows_g, hd),
            );
        }

        // lanes
        if v.has_lanes() {
            let gru = tape.lane_gru.as_ref().unwrap();
            let emb = tape.lane_embed.as_ref().unwrap();
            let h_l = &gru.h;
            let mut dh_l = std::mem::take(carry_l);
            let mut dalpha = vec![0.0; rows_l];
            if v.goal_sees_lanes() {
                for i in 0..rows_l {
                    let g = pk.lane_goal[i];
                    let dpg = &dp[g * hd..(g + 1) * hd];
                    let hl = &h_l[i * hd..(i + 1) * hd];
                    dalpha[i] = dpg.iter().zip(hl).map(|(a, b)| a * b).sum();
                    let a = tape.alpha[i];
                    dh_l[i * hd..(i + 1) * hd].iter_mut().zip(dpg).for_each(|(x, d)| *x += a * d);
                }
            }
            let mut dlogit = vec![0.0; rows_l];
            for b in 0..tape.active {
                let r = pk.lane_off[b]..pk.lane_off[b + 1];
                softmax_backward(&tape.alpha[r.clone()], &dalpha[r.clone()], &mut dlogit[r]);
            }
            if !seeds.lane.is_empty() {
                dlogit.iter_mut().zip(&seeds.lane).for_each(|(x, s)| *x += s);
            }
            let first = &self.lane_attn.first;
            let a0 = first.output;
            let mut dpre = self
                .lane_attn
                .rest
                .backward(params, tape.lane_head.as_ref().unwrap(), &dlogit, grads, true)
                .expect("dx requested");
            first.activation.backward(&tape.lane_first, &mut dpre);
            sum_rows_acc(&dpre, a0, grads.get_mut(first.b).data_mut());
            let w = params.get(first.w).data();
            let gw = grads.get_mut(first.w).data_mut();
            gemm(
                MatRef::dense(h_l, rows_l, hd).t(),
                MatRef::dense(&dpre, rows_l, a0),
                1.0,
                row_block_mut(gw, a0, hd, 2 * hd),
            );
            gemm(
                MatRef::dense(&dpre, rows_l, a0),
                row_block(w, a0, hd, 2 * hd).t(),
                1.0,
                MatMut::dense(&mut dh_l, rows_l, hd),
            );
            gemm(
                MatRef::dense(emb.output(), rows_l, ed).t(),
                MatRef::dense(&dpre, rows_l, a0),
                1.0,
                row_block_mut(gw, a0, 2 * hd, 2 * hd + ed),
            );
            let mut de = vec![0.0; rows_l * ed];
            gemm(
                MatRef::dense(&dpre, rows_l, a0),
                row_block(w, a0, 2 * hd, 2 * hd + ed).t(),
                0.0,
                MatMut::dense(&mut de, rows_l, ed),
            );
            if v.lane_sees_goal() {
                let mut dg = vec![0.0; rows_g * a0];
                for (i, row) in dpre.chunks_exact(a0).enumerate() {
                    let g = pk.lane_goal[i];
                    dg[g * a0..(g + 1) * a0].iter_mut().zip(row).for_each(|(x, y)| *x += y);
                }
                gemm(
                    MatRef::dense(h_g, rows_g, hd).t(),
                    MatRef::dense(&dg, rows_g, a0),
                    1.0,
                    row_block_mut(gw, a0, 0, hd),
                );
                gemm(
                    MatRef::dense(&dg, rows_g, a0),
                    row_block(w, a0, 0, hd).t(),
                    1.0,
                    MatMut::dense(&mut dh_g, rows_g, hd),
                );
            }
            let mut dx = vec![0.0; rows_l * ed];
            let mut dh_prev = vec![0.0; rows_l * hd];
            self.lane_gru.backward(
                params,
                emb.output(),
                &h_l_prev[..rows_l * hd],
                gru,
                &dh_l,
                grads,
                &mut dx,
                &mut dh_prev,
            );
            de.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
            self.lane_embed.backward(params, emb, &de, grads, false);
            *carry_l = dh_prev;
        }

        if v.has_goal_state() {
            let gru = tape.goal_gru.as_ref().unwrap();
            let emb = tape.goal_embed.as_ref().unwrap();
            let mut dx = vec![0.0; rows_g * ed];
            let mut dh_prev = vec![0.0; rows_g * hd];
            self.goal_gru.backward(
                params,
                emb.output(),
                &h_g_prev[..rows_g * hd],
                gru,
                &dh_g,
                grads,
                &mut dx,
                &mut dh_prev,
            );
            self.goal_embed.backward(params, emb, &dx, grads, false);
            *carry_g = dh_prev;
        }
    }
}

/// Result of rolling a packed batch forward.
pub(crate) struct Rollout {
    pub pk: Packing,
    /// Tapes of every frame when recorded, else only the last.
    pub tapes: Vec<FrameTape>,
}

impl Net {
    /// Runs a batch forward from zero state, calling `visit` after every frame.
    pub fn rollout(
        &self,
        cfg: &ModelConfig,
        params: &ParamStore,
        seqs: &[&Sequence],
        record: bool,
        mut visit: impl FnMut(&Packing, usize, &FrameTape) -> Result<()>,
    ) -> Result<Rollout> {
        let pk = Packing::new(seqs);
        let hd = cfg.hidden_dim;
        let zl = vec![0.0; pk.lane_off.last().copied().unwrap_or(0) * hd];
        let zg = vec![0.0; pk.goal_off.last().copied().unwrap_or(0) * hd];
        let mut tapes: Vec<FrameTape> = Vec::new();
        for t in 0..pk.max_len() {
            let (xl, xg) = pk.gather(seqs, t);
            let prev = tapes.last();
            let hl = prev.filter(|_| cfg.variant.has_lanes()).map_or(&zl[..], |p| p.h_lane());
            let hg = prev.filter(|_| cfg.variant.has_goal_state()).map_or(&zg[..], |p| p.h_goal());
            let tape = self.frame_forward(cfg, params, &pk, pk.active[t], &xl, &xg, hl, hg)?;
            visit(&pk, t, &tape)?;
            if !record {
                tapes.clear();
            }
            tapes.push(tape);
        }
        Ok(Rollout { pk, tapes })
    }

    /// Loss of a labelled batch, and optionally its gradient.
    pub fn loss_grad(
        &self,
        cfg: &ModelConfig,
        params: &ParamStore,
        seqs: &[&Sequence],
        want_grad: bool,
    ) -> Result<(LossTerms, Option<GradStore>)> {
        if seqs.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let labels: Vec<_> = seqs
            .iter()
            .map(|s| s.label.ok_or(Error::Label("sequence has no label".into())))
            .collect::<Result<_>>()?;
        let v = cfg.variant;
        let w_lane = cfg.effective_w_lane();
        let w_goal = cfg.w_goal;
        let n = seqs.len() as f64;
        let mut terms = LossTerms::default();
        let mut all_seeds: Vec<Seeds> = Vec::new();
        let roll = self.rollout(cfg, params, seqs, want_grad, |pk, _t, tape| {
            let mut seeds = Seeds {
                lane: if want_grad && v.has_lanes() { vec![0.0; tape.rows_l] } else { Vec::new() },
                goal: vec![0.0; tape.rows_g],
            };
            let logits = tape.goal_logits();
            for b in 0..tape.active {
                let lab = labels[pk.order[b]];
                let scale = 1.0 / (n * pk.lens[b] as f64);
                if v.has_lanes() {
                    let r = pk.lane_off[b]..pk.lane_off[b + 1];
                    terms.lane += scale * cross_entropy(&tape.alpha[r.clone()], lab.lane)?;
                    if want_grad && w_lane != 0.0 {
                        let out = &mut seeds.lane[r.clone()];
                        cross_entropy_logit_grad(&tape.alpha[r], lab.lane, out);
                        out.iter_mut().for_each(|x| *x *= w_lane * scale);
                    }
                }
                for j in 0..pk.goal_off[b + 1] - pk.goal_off[b] {
                    let g = pk.goal_off[b] + j;
                    let y = j == lab.exit;
                    terms.goal += scale * weighted_bce(logits[g], y, cfg.pos_weight);
                    seeds.goal[g] = w_goal * scale * weighted_bce_grad(logits[g], y, cfg.pos_weight);
                }
            }
            if want_grad {
                all_seeds.push(seeds);
            }
            Ok(())
        })?;
        terms.total = w_lane * terms.lane + w_goal * terms.goal;
        if !terms.total.is_finite() {
            return Err(Error::Divergence(format!("non-finite loss {}", terms.total)));
        }
        if !want_grad {
            return Ok((terms, None));
        }

        let hd = cfg.hidden_dim;
        let zl = vec![0.0; roll.pk.lane_off.last().unwrap() * hd];
        let zg = vec![0.0; roll.pk.goal_off.last().unwrap() * hd];
        let mut grads = params.zero_grads();
        let mut carry_l = Vec::new();
        let mut carry_g = Vec::new();
        for t in (0..roll.tapes.len()).rev() {
            let (hl, hg) = if t == 0 {
                (&zl[..], &zg[..])
            } else {
                let p = &roll.tapes[t - 1];
                (
                    if v.has_lanes() { p.h_lane() } else { &zl[..] },
                    if v.has_goal_state() { p.h_goal() } else { &zg[..] },
                )
            };
            self.frame_backward(
                cfg,
                params,
                &roll.pk,
                &roll.tapes[t],
                hl,
                hg,
                &all_seeds[t],
                &mut carry_l,
                &mut carry_g,
                &mut grads,
            );
        }
        if !grads.is_finite() {
            return Err(Error::Divergence("non-finite gradient".into()));
        }
        Ok((terms, Some(grads)))
    }
}
