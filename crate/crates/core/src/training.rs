//! Evolving winner-takes-all training with annealed M′ and learning rate,
//! validation-driven early stopping and mixture ranking.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{AdamConfig, Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::lane_graph::{LaneGraph, ProposalConfig};
use crate::model::{build_graph, condition_polylines, prepare, Mode, ModelConfig, PolylineQuery, PreparedScene, WimpModel};
use crate::scenario::generator::{Dataset, Split};
use crate::scenario::Scenario;
use crate::Point2;

/// Summed per-step L1 distance between each prediction and the truth.
pub fn l1_distances(preds: &[Vec<Point2>], truth: &[Point2]) -> Result<Vec<f64>> {
    if preds.is_empty() {
        return Err(Error::EmptyInput);
    }
    preds
        .iter()
        .map(|p| {
            if p.len() != truth.len() {
                return Err(Error::ShapeMismatch {
                    op: "l1_distances",
                    lhs: vec![p.len(), 2],
                    rhs: vec![truth.len(), 2],
                });
            }
            Ok(p.iter().zip(truth).map(|(a, b)| (a.x - b.x).abs() + (a.y - b.y).abs()).sum())
        })
        .collect()
}

/// Indices of the `m_prime` smallest values; ties go to the lower index.
pub fn select_lowest(dists: &[f64], m_prime: usize) -> Result<Vec<usize>> {
    if m_prime == 0 || m_prime > dists.len() {
        return Err(Error::InvalidMPrime {
            got: m_prime,
            max: dists.len(),
        });
    }
    let mut idx: Vec<usize> = (0..dists.len()).collect();
    idx.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
    idx.truncate(m_prime);
    Ok(idx)
}

pub fn wta_loss(preds: &[Vec<Point2>], truth: &[Point2]) -> Result<f64> {
    ewta_loss(preds, truth, 1)
}

/// Mean of the `m_prime` lowest per-mixture L1 distances.
pub fn ewta_loss(preds: &[Vec<Point2>], truth: &[Point2], m_prime: usize) -> Result<f64> {
    let d = l1_distances(preds, truth)?;
    let sel = select_lowest(&d, m_prime)?;
    Ok(sel.iter().map(|&i| d[i]).sum::<f64>() / m_prime as f64)
}

/// On-tape EWTA over a `[M, 2T]` trajectory tensor. Returns the loss and
/// the winning mixture.
pub fn ewta_on_tape(tape: &mut Tape<f64>, trajectories: Var, truth: &[Point2], m_prime: usize) -> Result<(Var, usize)> {
    let (m, cols) = (tape.value(trajectories).rows(), tape.value(trajectories).cols());
    if cols != 2 * truth.len() {
        return Err(Error::ShapeMismatch {
            op: "ewta_on_tape",
            lhs: vec![m, cols],
            rhs: vec![truth.len(), 2],
        });
    }
    let target = tape.input(Tensor::from_fn(m, cols, |_, c| {
        let p = truth[c / 2];
        if c % 2 == 0 {
            p.x
        } else {
            p.y
        }
    }));
    let d = tape.l1_distance(trajectories, target)?;
    let sel = select_lowest(tape.value(d).data(), m_prime)?;
    let mut total: Option<Var> = None;
    for &i in &sel {
        let row = tape.slice(d, 0, i, 1)?;
        total = Some(match total {
            Some(t) => tape.add(t, row)?,
            None => row,
        });
    }
    let loss = tape.scale(total.expect("m_prime >= 1"), 1.0 / m_prime as f64);
    Ok((loss, sel[0]))
}

/// M′ annealing: `max(1, initial - floor(epoch / decrement_every))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EwtaSchedule {
    pub initial: usize,
    pub decrement_every: usize,
}

impl EwtaSchedule {
    pub fn m_prime(&self, epoch: usize) -> usize {
        self.initial.saturating_sub(epoch / self.decrement_every.max(1)).max(1)
    }
}

pub fn schedule_lr(initial: f64, halve_every: usize, epoch: usize) -> f64 {
    initial / 2f64.powi((epoch / halve_every.max(1)) as i32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub lr_halve_every: usize,
    pub clip_norm: f64,
    pub val_every: usize,
    pub patience: usize,
    pub seed: u64,
    pub max_epochs: usize,
    pub ewta: EwtaSchedule,
    pub waypoint_weight: f64,
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 32,
            lr: 1e-3,
            lr_halve_every: 15,
            clip_norm: 1.0,
            val_every: 1,
            patience: 15,
            seed: 0,
            max_epochs: 40,
            ewta: EwtaSchedule {
                initial: 6,
                decrement_every: 5,
            },
            waypoint_weight: 1.0,
        }
    }

    pub fn paper() -> Self {
        TrainConfig {
            batch_size: 100,
            lr: 1e-4,
            lr_halve_every: 30,
            clip_norm: 1.0,
            val_every: 3,
            patience: 30,
            seed: 0,
            max_epochs: 300,
            ewta: EwtaSchedule {
                initial: 6,
                decrement_every: 10,
            },
            waypoint_weight: 1.0,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" | "tiny" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::InvalidConfig(format!("unknown preset `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.val_every == 0 || self.lr_halve_every == 0 || self.ewta.decrement_every == 0 {
            return Err(Error::InvalidConfig("batch size and periods must be positive".into()));
        }
        if !(self.lr > 0.0 && self.clip_norm > 0.0) {
            return Err(Error::InvalidConfig("lr and clip_norm must be positive".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        schedule_lr(self.lr, self.lr_halve_every, epoch)
    }
}

/// A prepared scene with the focal ground truth in meters, focal frame.
#[derive(Clone, Debug)]
pub struct Sample {
    pub scenario_id: String,
    pub scene: PreparedScene,
    pub truth: Vec<Point2>,
}

pub fn make_sample(
    scenario: &Scenario,
    graph: &LaneGraph,
    query: PolylineQuery,
    model: &ModelConfig,
    proposal: &ProposalConfig,
) -> Result<Sample> {
    let lines = condition_polylines(graph, scenario, query, proposal)?;
    let scene = prepare(scenario, &lines, model)?;
    let truth = scene.focal_future_m().ok_or(Error::MissingFuture)?;
    if truth.len() != model.pred_len {
        return Err(Error::LengthMismatch(truth.len(), model.pred_len));
    }
    Ok(Sample {
        scenario_id: scenario.id.clone(),
        scene,
        truth,
    })
}

/// Samples for every scenario of `split`.
pub fn samples_for_split(
    dataset: &Dataset,
    split: Split,
    query: PolylineQuery,
    model: &ModelConfig,
    proposal: &ProposalConfig,
) -> Result<Vec<Sample>> {
    dataset
        .split(split)
        .into_iter()
        .map(|sc| make_sample(sc, dataset.map_for(sc)?, query, model, proposal))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(rename = "val_minFDE")]
    pub val_min_fde: Option<f64>,
    pub m_prime: usize,
    pub lr: f64,
    pub winner_histogram: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: WimpModel,
    pub log: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_min_fde: f64,
}

/// Patience-based stopping on a validation metric where lower is better.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<(usize, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper { patience, best: None }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> StopDecision {
        match self.best {
            Some((e, b)) if value >= b => {
                if epoch - e > self.patience || self.patience == 0 {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, value));
                StopDecision::Improved
            }
        }
    }
}

fn derive_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    let mut z = seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Eval-mode focal trajectories `[M][T]` in meters, focal frame.
pub fn predict_local(model: &WimpModel, scene: &PreparedScene) -> Result<Vec<Vec<Point2>>> {
    let mut tape = Tape::new(&model.params);
    let out = build_graph(&mut tape, model, scene, Mode::Eval)?;
    let t = tape.value(out.trajectories);
    Ok((0..t.rows())
        .map(|r| t.row_slice(r).chunks(2).map(|xy| Point2::new(xy[0], xy[1])).collect())
        .collect())
}

/// Mean over samples of the best endpoint error among all M mixtures.
pub fn validation_min_fde(model: &WimpModel, val: &[Sample]) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for s in val {
        let preds = predict_local(model, &s.scene)?;
        total += crate::evaluation::min_fde(&preds, &s.truth)?;
    }
    Ok(total / val.len() as f64)
}

/// Loss and gradients of one training sample.
pub fn sample_gradients(
    model: &WimpModel,
    sample: &Sample,
    m_prime: usize,
    waypoint_weight: f64,
    mode: Mode,
) -> Result<(f64, usize, Gradients<f64>)> {
    let mut tape = Tape::new(&model.params);
    let out = build_graph(&mut tape, model, &sample.scene, mode)?;
    let (ewta, winner) = ewta_on_tape(&mut tape, out.trajectories, &sample.truth, m_prime)?;
    let mut loss = tape.scale(ewta, 1.0 / sample.truth.len() as f64);
    if let Some(w) = out.waypoint_loss {
        let w = tape.scale(w, waypoint_weight);
        loss = tape.add(loss, w)?;
    }
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    Ok((value, winner, grads))
}

/// Mini-batch Adam training. Returns the best-validation weights, ranked.
pub fn train(
    mut model: WimpModel,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    mut log_sink: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let m = model.config.mixtures;
    let adam = AdamConfig {
        clip_norm: Some(cfg.clip_norm),
        ..AdamConfig::default()
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best_params = None;
    for epoch in 0..cfg.max_epochs {
        let m_prime = cfg.ewta.m_prime(epoch).min(m);
        let lr = cfg.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch, usize::MAX));
        order.shuffle(&mut rng);
        let mut hist = vec![0usize; m];
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = Gradients::zeros_like(&model.params);
            for &i in batch {
                let mode = Mode::Train {
                    seed: derive_seed(cfg.seed, epoch, i),
                };
                let (loss, winner, g) = sample_gradients(&model, &train_set[i], m_prime, cfg.waypoint_weight, mode)?;
                if !g.is_finite() || !loss.is_finite() {
                    return Err(Error::InvalidTensor(format!("non-finite loss at epoch {epoch}")));
                }
                total += loss;
                hist[winner] += 1;
                acc.add(&g);
            }
            acc.scale(1.0 / batch.len() as f64);
            model.params.adam_step(&acc, lr, &adam)?;
        }
        let validate = (epoch + 1) % cfg.val_every == 0;
        let val = if validate { Some(validation_min_fde(&model, val_set)?) } else { None };
        let rec = EpochRecord {
            epoch,
            train_loss: total / train_set.len() as f64,
            val_min_fde: val,
            m_prime,
            lr,
            winner_histogram: hist,
        };
        log::info!(
            "epoch {epoch} loss {:.4} val {:?} m' {m_prime} lr {lr:e}",
            rec.train_loss,
            rec.val_min_fde
        );
        if let Some(w) = log_sink.as_deref_mut() {
            writeln!(w, "{}", serde_json::to_string(&rec)?)?;
        }
        log.push(rec);
        if let Some(v) = val {
            match stopper.observe(epoch, v) {
                StopDecision::Improved => best_params = Some(model.params.clone()),
                StopDecision::Continue => {}
                StopDecision::Stop => break,
            }
        }
    }
    let (best_epoch, best_val) = match (stopper.best(), best_params) {
        (Some((e, v)), Some(params)) => {
            model.params = params;
            (Some(e), v)
        }
        _ => (None, validation_min_fde(&model, val_set)?),
    };
    model.mixture_ranks = rank_mixtures(&model, val_set)?;
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_val_min_fde: best_val,
    })
}

/// Orders mixtures by validation wins (descending), then mean endpoint
/// error, then index.
pub fn rank_mixtures(model: &WimpModel, val: &[Sample]) -> Result<Vec<usize>> {
    if val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let preds: Vec<Vec<Vec<Point2>>> = val.iter().map(|s| predict_local(model, &s.scene)).collect::<Result<_>>()?;
    let truths: Vec<&[Point2]> = val.iter().map(|s| s.truth.as_slice()).collect();
    rank_from_predictions(&preds, &truths)
}

pub fn rank_from_predictions(preds: &[Vec<Vec<Point2>>], truths: &[&[Point2]]) -> Result<Vec<usize>> {
    let m = preds.first().ok_or(Error::EmptyDataset)?.len();
    let mut wins = vec![0usize; m];
    let mut fde = vec![0.0; m];
    for (p, t) in preds.iter().zip(truths) {
        let d = l1_distances(p, t)?;
        wins[select_lowest(&d, 1)?[0]] += 1;
        let end = *t.last().ok_or(Error::EmptyInput)?;
        for (k, traj) in p.iter().enumerate() {
            fde[k] += traj.last().ok_or(Error::EmptyInput)?.distance(end);
        }
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| wins[b].cmp(&wins[a]).then(fde[a].total_cmp(&fde[b])).then(a.cmp(&b)));
    Ok(order)
}
