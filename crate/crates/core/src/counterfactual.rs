//! Scene edits and paired baseline/edited forecasts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lane_graph::{LaneGraph, ProposalConfig};
use crate::model::{condition_polylines, PolylineQuery, PredictionSet, WimpModel};
use crate::scenario::{ActorTrack, Scenario};
use crate::{Point2, Polyline2};

/// Sampling interval of trajectories, seconds.
pub const DT: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum SceneEdit {
    /// Conditions the focal actor on this polyline instead of its proposal.
    ReplacePolyline { polyline: Vec<Point2> },
    InjectActor { id: String, trajectory: Vec<Point2> },
    RemoveActor { id: String },
    /// Freezes the actor at `observed[at_index]` from that index on.
    HaltActor { id: String, at_index: usize },
}

/// Applies edits left to right. Polyline replacements do not change the scene.
pub fn apply_edits(scenario: &Scenario, edits: &[SceneEdit]) -> Result<Scenario> {
    let mut out = scenario.clone();
    let obs_len = scenario.obs_len();
    for edit in edits {
        match edit {
            SceneEdit::ReplacePolyline { .. } => {}
            SceneEdit::InjectActor { id, trajectory } => {
                if out.actors.contains_key(id) {
                    return Err(Error::DuplicateInjectedId(id.clone()));
                }
                if trajectory.len() != obs_len {
                    return Err(Error::InvalidEdit(format!(
                        "injected trajectory has {} points, expected {obs_len}",
                        trajectory.len()
                    )));
                }
                if trajectory.iter().any(|p| !p.is_finite()) {
                    return Err(Error::InvalidEdit("injected trajectory is not finite".into()));
                }
                out.actors.insert(id.clone(), ActorTrack::observed_only(trajectory.clone()));
            }
            SceneEdit::RemoveActor { id } => {
                if *id == out.focal_id {
                    return Err(Error::FocalRemoval(id.clone()));
                }
                out.actors.remove(id).ok_or_else(|| Error::UnknownActor(id.clone()))?;
            }
            SceneEdit::HaltActor { id, at_index } => {
                let track = out.actors.get_mut(id).ok_or_else(|| Error::UnknownActor(id.clone()))?;
                if *at_index >= track.observed.len() {
                    return Err(Error::InvalidEdit(format!("halt index {at_index} outside observed window")));
                }
                let p = track.observed[*at_index];
                for q in &mut track.observed[*at_index..] {
                    *q = p;
                }
                if let Some(f) = track.future.as_mut() {
                    f.iter_mut().for_each(|q| *q = p);
                }
            }
        }
    }
    Ok(out)
}

/// The last polyline replacement in an edit list.
pub fn polyline_override(edits: &[SceneEdit]) -> Option<&[Point2]> {
    edits.iter().rev().find_map(|e| match e {
        SceneEdit::ReplacePolyline { polyline } => Some(polyline.as_slice()),
        _ => None,
    })
}

/// Speed over the final predicted step.
pub fn terminal_speed(traj: &[Point2]) -> f64 {
    match traj {
        [.., a, b] => a.distance(*b) / DT,
        _ => 0.0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureDelta {
    pub mixture: usize,
    pub endpoint_displacement: f64,
    pub baseline_terminal_speed: f64,
    pub edited_terminal_speed: f64,
    pub terminal_speed_change: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    /// Head order.
    pub per_mixture: Vec<MixtureDelta>,
    pub top_mixture: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counterfactual {
    pub baseline: PredictionSet,
    pub edited: PredictionSet,
    pub deltas: Deltas,
}

pub fn compute_deltas(baseline: &PredictionSet, edited: &PredictionSet) -> Deltas {
    let per_mixture = baseline
        .trajectories
        .iter()
        .zip(&edited.trajectories)
        .enumerate()
        .map(|(m, (b, e))| {
            let (vb, ve) = (terminal_speed(b), terminal_speed(e));
            MixtureDelta {
                mixture: m,
                endpoint_displacement: match (b.last(), e.last()) {
                    (Some(p), Some(q)) => p.distance(*q),
                    _ => 0.0,
                },
                baseline_terminal_speed: vb,
                edited_terminal_speed: ve,
                terminal_speed_change: ve - vb,
            }
        })
        .collect();
    Deltas {
        per_mixture,
        top_mixture: baseline.mixture_ranks[0],
    }
}

/// Forecasts the scene as given and after `edits`. An explicit
/// `override_polyline` wins over any `ReplacePolyline` edit.
pub fn counterfactual_predict(
    model: &WimpModel,
    graph: &LaneGraph,
    scenario: &Scenario,
    edits: &[SceneEdit],
    override_polyline: Option<&Polyline2>,
    proposal: &ProposalConfig,
) -> Result<Counterfactual> {
    let lines = condition_polylines(graph, scenario, PolylineQuery::Observed, proposal)?;
    let baseline = model.predict(scenario, &lines)?;
    let edited_scene = apply_edits(scenario, edits)?;
    let mut edited_lines = condition_polylines(graph, &edited_scene, PolylineQuery::Observed, proposal)?;
    let replacement = match (override_polyline, polyline_override(edits)) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(pts)) => Some(Polyline2::from_points_dedup(pts).map_err(|e| Error::InvalidEdit(e.to_string()))?),
        (None, None) => None,
    };
    if let Some(p) = replacement {
        edited_lines.insert(edited_scene.focal_id.clone(), p);
    }
    let edited = model.predict(&edited_scene, &edited_lines)?;
    let deltas = compute_deltas(&baseline, &edited);
    Ok(Counterfactual {
        baseline,
        edited,
        deltas,
    })
}
