//! Best-of-K displacement metrics, the blind-turn subset filter and the
//! map-disagreement statistic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::project_to_curvilinear;
use crate::lane_graph::{propose_polylines, LaneGraph, ProposalConfig};
use crate::model::{condition_polylines, PolylineQuery, WimpModel};
use crate::scenario::generator::{Dataset, Split};
use crate::scenario::Scenario;
use crate::{Point2, Polyline2};

pub const MISS_THRESHOLD: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss_rate: f64,
    pub n_scenarios: usize,
    pub subset: String,
}

fn check_lengths(preds: &[Vec<Point2>], truth: &[Point2]) -> Result<()> {
    if preds.is_empty() || truth.is_empty() {
        return Err(Error::EmptyInput);
    }
    for p in preds {
        if p.len() != truth.len() {
            return Err(Error::LengthMismatch(p.len(), truth.len()));
        }
    }
    Ok(())
}

/// Index of the prediction with the smallest endpoint error; ties go to the lowest index.
pub fn fde_winner(preds: &[Vec<Point2>], truth: &[Point2]) -> Result<usize> {
    check_lengths(preds, truth)?;
    let end = *truth.last().expect("non-empty");
    let mut best = (0, f64::INFINITY);
    for (i, p) in preds.iter().enumerate() {
        let d = p.last().expect("non-empty").distance(end);
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best.0)
}

pub fn min_fde(preds: &[Vec<Point2>], truth: &[Point2]) -> Result<f64> {
    let w = fde_winner(preds, truth)?;
    Ok(preds[w].last().expect("non-empty").distance(*truth.last().expect("non-empty")))
}

/// Mean displacement of the trajectory that wins on endpoint error.
pub fn min_ade(preds: &[Vec<Point2>], truth: &[Point2]) -> Result<f64> {
    let w = fde_winner(preds, truth)?;
    Ok(mean_displacement(&preds[w], truth))
}

pub fn mean_displacement(pred: &[Point2], truth: &[Point2]) -> f64 {
    pred.iter().zip(truth).map(|(a, b)| a.distance(*b)).sum::<f64>() / truth.len() as f64
}

/// Fraction of values strictly above `threshold`.
pub fn miss_rate(min_fdes: &[f64], threshold: f64) -> Result<f64> {
    if min_fdes.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(min_fdes.iter().filter(|&&v| v > threshold).count() as f64 / min_fdes.len() as f64)
}

/// Aggregates per-scenario (K predictions, truth) cases.
pub fn metrics_report(cases: &[(Vec<Vec<Point2>>, Vec<Point2>)], k: usize, subset: &str) -> Result<MetricsReport> {
    if cases.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut ade = 0.0;
    let mut fdes = Vec::with_capacity(cases.len());
    for (preds, truth) in cases {
        ade += min_ade(preds, truth)?;
        fdes.push(min_fde(preds, truth)?);
    }
    let n = cases.len() as f64;
    Ok(MetricsReport {
        k,
        min_ade: ade / n,
        min_fde: fdes.iter().sum::<f64>() / n,
        miss_rate: miss_rate(&fdes, MISS_THRESHOLD)?,
        n_scenarios: cases.len(),
        subset: subset.to_string(),
    })
}

/// Thresholds of the blind-turn filter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BtConfig {
    pub straight_max_deg: f64,
    pub lane_dev_m: f64,
    pub turn_min_deg: f64,
    pub lane_change_m: f64,
}

impl Default for BtConfig {
    fn default() -> Self {
        BtConfig {
            straight_max_deg: 15.0,
            lane_dev_m: 0.75,
            turn_min_deg: 30.0,
            lane_change_m: 3.0,
        }
    }
}

const MIN_CHORD: f64 = 0.5;

fn chord_angle(a: Point2, b: Point2, c: Point2, d: Point2) -> f64 {
    let (u, v) = (b - a, d - c);
    if u.norm() < MIN_CHORD || v.norm() < MIN_CHORD {
        return 0.0;
    }
    u.cross(v).atan2(u.dot(v)).abs().to_degrees()
}

/// Largest distance of any point from the total-least-squares line.
pub fn max_line_deviation(pts: &[Point2]) -> f64 {
    let n = pts.len() as f64;
    let c = pts.iter().fold(Point2::zero(), |acc, &p| acc + p) * (1.0 / n);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &p in pts {
        let d = p - c;
        sxx += d.x * d.x;
        syy += d.y * d.y;
        sxy += d.x * d.y;
    }
    let th = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let dir = Point2::new(th.cos(), th.sin());
    pts.iter().map(|&p| dir.cross(p - c).abs()).fold(0.0, f64::max)
}

/// Observed history straight and future turning or changing lanes.
pub fn bt_filter(scenario: &Scenario, cfg: &BtConfig) -> Result<bool> {
    let focal = scenario.focal();
    let fut = focal.future.as_ref().ok_or(Error::MissingFuture)?;
    let obs = &focal.observed;
    if fut.is_empty() || obs.len() < 2 {
        return Err(Error::MissingFuture);
    }
    let (first, last) = (obs[0], obs[obs.len() - 1]);
    let heading = last - first;
    if heading.norm() < MIN_CHORD {
        return Ok(false);
    }
    let mid = obs[obs.len() / 2];
    let obs_turn = chord_angle(first, mid, mid, last);
    if obs_turn >= cfg.straight_max_deg || max_line_deviation(obs) >= cfg.lane_dev_m {
        return Ok(false);
    }
    let tail_start = fut[(2 * fut.len()) / 3];
    let end = fut[fut.len() - 1];
    let fut_turn = chord_angle(first, last, tail_start, end);
    let dir = heading * (1.0 / heading.norm());
    let lateral = dir.cross(end - last).abs();
    Ok(fut_turn >= cfg.turn_min_deg || lateral >= cfg.lane_change_m)
}

/// Per-polyline fraction of endpoints farther than `threshold` from the
/// polyline in the normal direction. Items are (polyline key, polyline, endpoint).
pub fn disagreement_rate(items: &[(String, Polyline2, Point2)], threshold: f64) -> BTreeMap<String, f64> {
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (key, line, end) in items {
        let off = project_to_curvilinear(line, *end).normal.abs();
        let e = tally.entry(key.clone()).or_default();
        e.1 += 1;
        if off > threshold {
            e.0 += 1;
        }
    }
    tally
        .into_iter()
        .map(|(k, (hit, n))| (k, hit as f64 / n as f64))
        .collect()
}

/// Scenario subset scored by [`evaluate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    All,
    Bt,
}

impl Subset {
    pub fn name(self) -> &'static str {
        match self {
            Subset::All => "all",
            Subset::Bt => "bt",
        }
    }
}

/// `k` world-frame forecasts for the focal actor of `scenario`.
///
/// The focal actor is conditioned on each of its top `n_polylines` proposals
/// in turn; outputs alternate between polylines, taking mixtures in rank order.
pub fn forecast_top_k(
    model: &WimpModel,
    scenario: &Scenario,
    graph: &LaneGraph,
    k: usize,
    n_polylines: usize,
    proposal: &ProposalConfig,
) -> Result<Vec<Vec<Point2>>> {
    if k == 0 || n_polylines == 0 {
        return Err(Error::EmptyInput);
    }
    let mut lines = condition_polylines(graph, scenario, PolylineQuery::Observed, proposal)?;
    let focal = scenario.focal();
    let options = propose_polylines(graph, &focal.observed, n_polylines, proposal)?;
    let mut sets = Vec::with_capacity(options.len());
    for cand in options {
        lines.insert(scenario.focal_id.clone(), cand.points);
        sets.push(model.predict(scenario, &lines)?);
    }
    let mut out = Vec::with_capacity(k);
    'fill: for r in 0..model.config.mixtures {
        for set in &sets {
            if out.len() == k {
                break 'fill;
            }
            out.push(set.trajectories[set.mixture_ranks[r]].clone());
        }
    }
    Ok(out)
}

/// Metrics over one split of a dataset.
pub fn evaluate(
    model: &WimpModel,
    dataset: &Dataset,
    split: Split,
    k: usize,
    subset: Subset,
    n_polylines: usize,
    proposal: &ProposalConfig,
) -> Result<MetricsReport> {
    let bt = BtConfig::default();
    let mut cases = Vec::new();
    for sc in dataset.split(split) {
        if subset == Subset::Bt && !bt_filter(sc, &bt)? {
            continue;
        }
        let truth = sc.focal().future.clone().ok_or(Error::MissingFuture)?;
        let graph = dataset.map_for(sc)?;
        let preds = forecast_top_k(model, sc, graph, k, n_polylines, proposal)?;
        cases.push((preds, truth));
    }
    metrics_report(&cases, k, subset.name())
}

/// Disagreement of the top-ranked forecast with the focal actor's top
/// proposal, keyed by the proposal's lane ids joined with `>`.
pub fn map_disagreement<'a>(
    model: &WimpModel,
    scenes: impl IntoIterator<Item = (&'a Scenario, &'a LaneGraph)>,
    threshold: f64,
    proposal: &ProposalConfig,
) -> Result<BTreeMap<String, f64>> {
    let mut items = Vec::new();
    for (sc, graph) in scenes {
        let lines = condition_polylines(graph, sc, PolylineQuery::Observed, proposal)?;
        let best = propose_polylines(graph, &sc.focal().observed, 1, proposal)?
            .into_iter()
            .next()
            .ok_or(Error::EmptyResult(proposal.max_expansions))?;
        let ps = model.predict(sc, &lines)?;
        let end = *ps.top().last().ok_or(Error::EmptyInput)?;
        items.push((best.lane_ids.join(">"), best.points, end));
    }
    Ok(disagreement_rate(&items, threshold))
}
