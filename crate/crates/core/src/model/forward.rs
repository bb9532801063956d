use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    ActorPolylines, AttentionIds, LstmIds, PolylineAttentionTrace, PredictionSet, SocialAttention, Traces,
    WimpModel,
};
use crate::diff::{dropout_mask, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{nearest_index, normalization_frame_or_identity, Frame};
use crate::scenario::Scenario;
use crate::{AffineFrame, Point2};

const MASKED: f64 = -1e30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active, masks drawn from a generator seeded with `seed`.
    Train { seed: u64 },
}

/// A scenario in the focal frame, scaled, with actors in a fixed order
/// (focal first, then by id).
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedScene {
    pub actor_ids: Vec<String>,
    /// Maps world points into the focal frame (before scaling).
    pub frame: AffineFrame,
    pub scale: f64,
    pub observed: Vec<Vec<Point2>>,
    pub futures: Vec<Option<Vec<Point2>>>,
    pub polylines: Vec<Vec<Point2>>,
}

impl PreparedScene {
    pub fn len(&self) -> usize {
        self.actor_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actor_ids.is_empty()
    }

    pub fn to_world(&self, p: Point2) -> Point2 {
        self.frame.inverse().apply_point(p * self.scale)
    }

    /// Focal future in meters, focal frame.
    pub fn focal_future_m(&self) -> Option<Vec<Point2>> {
        self.futures[0].as_ref().map(|f| f.iter().map(|&p| p * self.scale).collect())
    }
}

/// Normalizes a scenario around its focal actor: origin at the last observed
/// point, +x along the observed displacement.
pub fn prepare(scenario: &Scenario, polylines: &ActorPolylines, cfg: &super::ModelConfig) -> Result<PreparedScene> {
    let focal = scenario
        .actors
        .get(&scenario.focal_id)
        .ok_or_else(|| Error::MissingFocalActor(scenario.focal_id.clone()))?;
    let obs_len = cfg.obs_len;
    if focal.observed.len() != obs_len {
        return Err(Error::LengthMismatch(focal.observed.len(), obs_len));
    }
    let heading = normalization_frame_or_identity(&focal.observed, obs_len - 1);
    let frame = Frame {
        translation: focal.observed[obs_len - 1],
        ..heading
    };
    let inv_scale = 1.0 / cfg.position_scale;
    let norm = |pts: &[Point2]| -> Vec<Point2> { pts.iter().map(|&p| frame.apply_point(p) * inv_scale).collect() };
    let mut ids = vec![scenario.focal_id.clone()];
    ids.extend(scenario.actors.keys().filter(|k| **k != scenario.focal_id).cloned());
    let mut prep = PreparedScene {
        actor_ids: Vec::with_capacity(ids.len()),
        frame,
        scale: cfg.position_scale,
        observed: Vec::new(),
        futures: Vec::new(),
        polylines: Vec::new(),
    };
    for id in ids {
        let track = &scenario.actors[&id];
        if track.observed.len() != obs_len {
            return Err(Error::LengthMismatch(track.observed.len(), obs_len));
        }
        let line = polylines.get(&id).ok_or_else(|| Error::MissingPolyline(id.clone()))?;
        prep.observed.push(norm(&track.observed));
        prep.futures.push(track.future.as_deref().map(norm));
        prep.polylines.push(norm(line.points()));
        prep.actor_ids.push(id);
    }
    Ok(prep)
}

/// Tape handles for one forward pass.
pub struct GraphOutput {
    /// `[M, 2 T_pred]` predicted positions in meters, focal frame,
    /// each row interleaving x and y.
    pub trajectories: Var,
    /// Mean L1 waypoint error in meters over actors with futures.
    pub waypoint_loss: Option<Var>,
    pub traces: Traces,
}

pub(crate) struct Attention {
    pub(crate) keys: Var,
    pub(crate) values: Var,
    q: Var,
}

fn points_tensor(pts: &[Point2]) -> Tensor<f64> {
    Tensor::from_fn(pts.len(), 2, |r, c| if c == 0 { pts[r].x } else { pts[r].y })
}

pub(crate) fn attention_setup(tape: &mut Tape<f64>, ids: &AttentionIds, pts: Tensor<f64>) -> Result<Attention> {
    let p = tape.input(pts);
    let (ew, eb) = (tape.param(ids.embed_w), tape.param(ids.embed_b));
    let e = tape.matmul(p, ew)?;
    let e = tape.add(e, eb)?;
    let e = tape.tanh(e);
    let (k, v) = (tape.param(ids.k), tape.param(ids.v));
    Ok(Attention {
        keys: tape.matmul(e, k)?,
        values: tape.matmul(e, v)?,
        q: tape.param(ids.q),
    })
}

/// Masked attention of each query row over its own `[lo, hi]` column range.
pub(crate) fn attend(tape: &mut Tape<f64>, att: &Attention, h_prev: Var, ranges: &[(usize, usize)]) -> Result<(Var, Var)> {
    let qh = tape.matmul(h_prev, att.q)?;
    let logits = tape.matmul_t(qh, att.keys)?;
    let hs = tape.value(qh).cols() as f64;
    let logits = tape.scale(logits, 1.0 / hs.sqrt());
    let cols = tape.value(logits).cols();
    let mask = Tensor::from_fn(ranges.len(), cols, |r, c| {
        let (lo, hi) = ranges[r];
        if c >= lo && c <= hi {
            0.0
        } else {
            MASKED
        }
    });
    let mask = tape.input(mask);
    let logits = tape.add(logits, mask)?;
    let w = tape.softmax(logits, 1)?;
    let s = tape.matmul(w, att.values)?;
    Ok((w, s))
}

fn attention_trace(tape: &Tape<f64>, w: Var, s: Var, row: usize, offset: usize, a: usize, b: usize) -> PolylineAttentionTrace {
    let (lo, hi) = (a.min(b), a.max(b));
    let wv = tape.value(w);
    PolylineAttentionTrace {
        current_index: a,
        goal_index: b,
        weights: (lo..=hi).map(|i| wv.get(row, offset + i)).collect(),
        context: tape.value(s).row_slice(row).to_vec(),
    }
}

struct Lstm {
    w_ih: Var,
    w_hh: Var,
    b: Var,
}

fn lstm_vars(tape: &mut Tape<f64>, ids: &LstmIds) -> Lstm {
    Lstm {
        w_ih: tape.param(ids.w_ih),
        w_hh: tape.param(ids.w_hh),
        b: tape.param(ids.b),
    }
}

/// One step through a stack of LSTM layers; dropout on the outputs of the
/// first `dropout_layers` layers.
#[allow(clippy::too_many_arguments)]
fn stack_step(
    tape: &mut Tape<f64>,
    layers: &[Lstm],
    input: Var,
    h: &mut [Var],
    c: &mut [Var],
    dropout: &mut Option<(ChaCha8Rng, f64, usize)>,
) -> Result<Var> {
    let mut x = input;
    for (l, lstm) in layers.iter().enumerate() {
        let out = tape.lstm_cell(x, h[l], c[l], lstm.w_ih, lstm.w_hh, lstm.b)?;
        let hs = tape.value(h[l]).cols();
        h[l] = tape.slice(out, 1, 0, hs)?;
        c[l] = tape.slice(out, 1, hs, hs)?;
        x = h[l];
        if let Some((rng, rate, n)) = dropout.as_mut() {
            if l < *n {
                let (r, cc) = (tape.value(x).rows(), tape.value(x).cols());
                let mask = dropout_mask(rng, r, cc, *rate);
                x = tape.dropout(x, &mask, *rate)?;
            }
        }
    }
    Ok(x)
}

/// Residual multi-head graph attention applied to every layer's hidden
/// states `[N, H]`. Also returns the top layer's per-head attention matrices.
pub fn social_fusion(tape: &mut Tape<f64>, model: &WimpModel, hs: &[Var]) -> Result<(Vec<Var>, Option<Vec<Var>>)> {
    let cfg = &model.config;
    if !cfg.use_social {
        return Ok((hs.to_vec(), None));
    }
    let n = tape.value(hs[0]).rows();
    let h = cfg.hidden_size;
    if n == 1 {
        return Ok((hs.iter().map(|&x| tape.elu(x)).collect(), None));
    }
    let ones = tape.input(Tensor::filled(n, 1, 1.0));
    let diag = tape.input(Tensor::from_fn(n, n, |r, c| if r == c { MASKED } else { 0.0 }));
    let heads: Vec<(Var, Var)> = model.ids.gat.iter().map(|&(w, a)| (tape.param(w), tape.param(a))).collect();
    let mut out = Vec::with_capacity(hs.len());
    let mut alphas = Vec::new();
    for &hl in hs {
        let mut total: Option<Var> = None;
        alphas.clear();
        for &(w, a) in &heads {
            let wh = tape.matmul(hl, w)?;
            let a1 = tape.slice(a, 0, 0, h)?;
            let a2 = tape.slice(a, 0, h, h)?;
            let f1 = tape.matmul(wh, a1)?;
            let f2 = tape.matmul(wh, a2)?;
            let own = tape.matmul_t(f1, ones)?;
            let other = tape.matmul_t(ones, f2)?;
            let logits = tape.add(own, other)?;
            let logits = tape.add(logits, diag)?;
            let alpha = tape.softmax(logits, 1)?;
            alphas.push(alpha);
            let agg = tape.matmul(alpha, wh)?;
            total = Some(match total {
                Some(t) => tape.add(t, agg)?,
                None => agg,
            });
        }
        let mean = tape.scale(total.expect("at least one head"), 1.0 / cfg.attention_heads as f64);
        let res = tape.add(hl, mean)?;
        out.push(tape.elu(res));
    }
    Ok((out, Some(alphas)))
}

/// Records the full network on `tape`.
pub fn build_graph(tape: &mut Tape<f64>, model: &WimpModel, prep: &PreparedScene, mode: Mode) -> Result<GraphOutput> {
    let cfg = &model.config;
    let ids = &model.ids;
    let (h, kh) = (cfg.hidden_size, cfg.kin_hidden);
    let n = prep.len();
    let t_obs = cfg.obs_len;
    let t_pred = cfg.pred_len;
    let m = cfg.mixtures;
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if prep.observed.iter().any(|o| o.len() != t_obs) {
        return Err(Error::LengthMismatch(prep.observed[0].len(), t_obs));
    }
    if prep.polylines.iter().any(|p| p.is_empty()) {
        return Err(Error::EmptyPolyline);
    }
    let mut dropout = match mode {
        Mode::Train { seed } if cfg.dropout_rate > 0.0 && cfg.dropout_layers > 0 => {
            Some((ChaCha8Rng::seed_from_u64(seed), cfg.dropout_rate, cfg.dropout_layers))
        }
        _ => None,
    };
    let mut traces = Traces::default();
    let xs: Vec<Var> = (0..t_obs)
        .map(|t| {
            let x = Tensor::from_fn(n, 2, |r, c| {
                let p = prep.observed[r][t];
                if c == 0 {
                    p.x
                } else {
                    p.y
                }
            });
            tape.input(x)
        })
        .collect();

    // polyline-blind kinematic stream and waypoints
    let mut waypoints: Vec<Vec<Point2>> = Vec::new();
    let mut waypoint_loss = None;
    if cfg.use_map {
        let kin = lstm_vars(tape, &ids.kin);
        let mut hk = tape.input(Tensor::zeros(n, kh));
        let mut ck = tape.input(Tensor::zeros(n, kh));
        let mut hks = Vec::with_capacity(t_obs);
        for &x in &xs {
            let out = tape.lstm_cell(x, hk, ck, kin.w_ih, kin.w_hh, kin.b)?;
            hk = tape.slice(out, 1, 0, kh)?;
            ck = tape.slice(out, 1, kh, kh)?;
            hks.push(hk);
        }
        let x_all = tape.concat(&xs, 0)?;
        let h_all = tape.concat(&hks, 0)?;
        let inp = tape.concat(&[x_all, h_all], 1)?;
        let (ww, wb) = (tape.param(ids.wp_w), tape.param(ids.wp_b));
        let wp = tape.matmul(inp, ww)?;
        let wp = tape.add(wp, wb)?;
        let wv = tape.value(wp);
        waypoints = (0..t_obs)
            .map(|t| (0..n).map(|i| Point2::new(wv.get(t * n + i, 0), wv.get(t * n + i, 1))).collect())
            .collect();

        let horizon = cfg.waypoint_horizon;
        let rows = t_obs * n;
        let mut target = Tensor::zeros(rows, 2);
        let mut weight = Tensor::zeros(rows, 1);
        let mut count = 0usize;
        for i in 0..n {
            let Some(fut) = prep.futures[i].as_ref() else { continue };
            for t in 0..t_obs {
                let j = t + horizon;
                let p = if j < t_obs {
                    prep.observed[i][j]
                } else if j - t_obs < fut.len() {
                    fut[j - t_obs]
                } else {
                    continue;
                };
                let r = t * n + i;
                target.set(r, 0, p.x);
                target.set(r, 1, p.y);
                weight.set(r, 0, 1.0);
                count += 1;
            }
        }
        if count > 0 {
            let target = tape.input(target);
            let weight = tape.input(weight);
            let d = tape.l1_distance(wp, target)?;
            let d = tape.mul(d, weight)?;
            let s = tape.sum(d);
            waypoint_loss = Some(tape.scale(s, cfg.position_scale / (2 * count) as f64));
        }
        let goal = waypoints[t_obs - 1][0];
        traces.waypoint = Some(prep.to_world(goal));
    }

    // encoder
    let enc_att = if cfg.use_map {
        let mut offsets = Vec::with_capacity(n);
        let mut all = Vec::new();
        for line in &prep.polylines {
            offsets.push(all.len());
            all.extend_from_slice(line);
        }
        Some((attention_setup(tape, &ids.enc_attn, points_tensor(&all))?, offsets))
    } else {
        None
    };
    let enc: Vec<Lstm> = ids.enc.iter().map(|l| lstm_vars(tape, l)).collect();
    let zeros_h = tape.input(Tensor::zeros(n, h));
    let mut hs = vec![zeros_h; cfg.encoder_layers];
    let mut cs = vec![zeros_h; cfg.encoder_layers];
    for t in 0..t_obs {
        let s = if let Some((att, offsets)) = &enc_att {
            let mut ranges = Vec::with_capacity(n);
            let mut ab = Vec::with_capacity(n);
            for i in 0..n {
                let line = &prep.polylines[i];
                let a = nearest_index(line, prep.observed[i][t]).expect("non-empty polyline");
                let b = nearest_index(line, waypoints[t][i]).expect("non-empty polyline");
                ranges.push((offsets[i] + a.min(b), offsets[i] + a.max(b)));
                ab.push((a, b));
            }
            let top = hs[cfg.encoder_layers - 1];
            let (w, s) = attend(tape, att, top, &ranges)?;
            traces.encoder.push(attention_trace(tape, w, s, 0, offsets[0], ab[0].0, ab[0].1));
            s
        } else {
            zeros_h
        };
        let inp = tape.concat(&[xs[t], s], 1)?;
        stack_step(tape, &enc, inp, &mut hs, &mut cs, &mut dropout)?;
    }

    // social fusion
    let (fused, alphas) = social_fusion(tape, model, &hs)?;
    if let Some(alphas) = alphas {
        traces.social = (1..n)
            .map(|j| SocialAttention {
                actor_id: prep.actor_ids[j].clone(),
                weights: alphas.iter().map(|&al| tape.value(al).get(0, j)).collect(),
            })
            .collect();
    }

    // decoder
    let ones_m = tape.input(Tensor::filled(m, 1, 1.0));
    let mut dh = Vec::with_capacity(cfg.decoder_layers);
    let mut dc = Vec::with_capacity(cfg.decoder_layers);
    for l in 0..cfg.decoder_layers {
        let fr = tape.slice(fused[l], 0, 0, 1)?;
        dh.push(tape.matmul(ones_m, fr)?);
        let cr = tape.slice(cs[l], 0, 0, 1)?;
        dc.push(tape.matmul(ones_m, cr)?);
    }
    let dec: Vec<Lstm> = ids.dec.iter().map(|l| lstm_vars(tape, l)).collect();
    let focal_line = &prep.polylines[0];
    let dec_att = if cfg.use_map {
        Some(attention_setup(tape, &ids.dec_attn, points_tensor(focal_line))?)
    } else {
        None
    };
    let goal = if cfg.use_map {
        nearest_index(focal_line, waypoints[t_obs - 1][0]).expect("non-empty polyline")
    } else {
        0
    };
    let head_w: Vec<Var> = ids.heads.iter().map(|&(w, _)| tape.param(w)).collect();
    let head_b: Vec<Var> = ids.heads.iter().map(|&(_, b)| tape.param(b)).collect();
    let head_w = tape.concat(&head_w, 1)?;
    let head_b = tape.concat(&head_b, 1)?;
    let block = tape.input(Tensor::from_fn(m, 2 * m, |r, c| if c / 2 == r { 1.0 } else { 0.0 }));
    let select = tape.input(Tensor::from_fn(2 * m, 2, |r, c| if r % 2 == c { 1.0 } else { 0.0 }));
    let zeros_mh = tape.input(Tensor::zeros(m, h));
    let mut y = tape.input(Tensor::zeros(m, 2));
    let mut steps = Vec::with_capacity(t_pred);
    traces.decoder = vec![Vec::new(); if cfg.use_map { m } else { 0 }];
    for _ in 0..t_pred {
        let s = if let Some(att) = &dec_att {
            let yv = tape.value(y);
            let cur: Vec<usize> = (0..m)
                .map(|r| nearest_index(focal_line, Point2::new(yv.get(r, 0), yv.get(r, 1))).expect("non-empty"))
                .collect();
            let ranges: Vec<(usize, usize)> = cur.iter().map(|&a| (a.min(goal), a.max(goal))).collect();
            let top = dh[cfg.decoder_layers - 1];
            let (w, s) = attend(tape, att, top, &ranges)?;
            for (r, &a) in cur.iter().enumerate() {
                let tr = attention_trace(tape, w, s, r, 0, a, goal);
                traces.decoder[r].push(tr);
            }
            s
        } else {
            zeros_mh
        };
        let inp = tape.concat(&[y, s], 1)?;
        let top = stack_step(tape, &dec, inp, &mut dh, &mut dc, &mut dropout)?;
        let raw = tape.matmul(top, head_w)?;
        let raw = tape.add(raw, head_b)?;
        let raw = tape.mul(raw, block)?;
        let delta = tape.matmul(raw, select)?;
        y = tape.add(y, delta)?;
        steps.push(y);
    }
    let traj = tape.concat(&steps, 1)?;
    let trajectories = tape.scale(traj, cfg.position_scale);
    Ok(GraphOutput {
        trajectories,
        waypoint_loss,
        traces,
    })
}

/// Rows of a `[M, 2T]` trajectory tensor as point lists.
pub(crate) fn rows_to_points(t: &Tensor<f64>) -> Vec<Vec<Point2>> {
    (0..t.rows())
        .map(|r| {
            let row = t.row_slice(r);
            row.chunks(2).map(|xy| Point2::new(xy[0], xy[1])).collect()
        })
        .collect()
}

pub(crate) fn predict_prepared(model: &WimpModel, prep: &PreparedScene) -> Result<PredictionSet> {
    let mut tape = Tape::new(&model.params);
    let out = build_graph(&mut tape, model, prep, Mode::Eval)?;
    let local = rows_to_points(tape.value(out.trajectories));
    let inv = prep.frame.inverse();
    let trajectories = local.into_iter().map(|traj| inv.apply(&traj)).collect();
    Ok(PredictionSet {
        trajectories,
        mixture_ranks: model.mixture_ranks.clone(),
        traces: out.traces,
    })
}
