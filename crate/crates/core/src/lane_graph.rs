//! Directed lane-segment graph and the reference-polyline proposal pipeline:
//! candidate lane search, chain construction, overlap pruning, point-in-polygon
//! and alignment ranking, and the alternating merge.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_in_polygon, project_to_curvilinear, trajectory_length};
use crate::{Point2, Polyline2};

#[derive(Clone, Debug, PartialEq)]
pub struct LaneSegment {
    pub id: String,
    pub centerline: Polyline2,
    /// Lane region as a closed ring (closing vertex optional).
    pub polygon: Vec<Point2>,
    pub successors: Vec<String>,
    pub predecessors: Vec<String>,
}

/// Immutable lane graph; segments are kept in id order.
#[derive(Clone, Debug, PartialEq)]
pub struct LaneGraph {
    segments: BTreeMap<String, LaneSegment>,
}

#[derive(Serialize, Deserialize)]
struct SegmentRecord {
    id: String,
    centerline: Vec<Point2>,
    polygon: Vec<Point2>,
    #[serde(default)]
    successors: Vec<String>,
    #[serde(default)]
    predecessors: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct MapRecord {
    segments: Vec<SegmentRecord>,
}

impl LaneGraph {
    /// Validates reference resolution and successor/predecessor symmetry.
    pub fn new(segments: Vec<LaneSegment>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for seg in segments {
            if seg.polygon.len() < 3 {
                return Err(Error::InvalidPolygon(seg.polygon.len()));
            }
            if let Some(dup) = map.insert(seg.id.clone(), seg) {
                return Err(Error::InvalidGraph(format!("duplicate segment id `{}`", dup.id)));
            }
        }
        for seg in map.values() {
            for s in &seg.successors {
                let other = map.get(s).ok_or_else(|| {
                    Error::InvalidGraph(format!("`{}` lists unknown successor `{s}`", seg.id))
                })?;
                if !other.predecessors.contains(&seg.id) {
                    return Err(Error::InvalidGraph(format!(
                        "`{s}` is a successor of `{}` but does not list it as predecessor",
                        seg.id
                    )));
                }
            }
            for p in &seg.predecessors {
                let other = map.get(p).ok_or_else(|| {
                    Error::InvalidGraph(format!("`{}` lists unknown predecessor `{p}`", seg.id))
                })?;
                if !other.successors.contains(&seg.id) {
                    return Err(Error::InvalidGraph(format!(
                        "`{p}` is a predecessor of `{}` but does not list it as successor",
                        seg.id
                    )));
                }
            }
        }
        Ok(LaneGraph { segments: map })
    }

    pub fn get(&self, id: &str) -> Option<&LaneSegment> {
        self.segments.get(id)
    }

    pub fn segments(&self) -> impl Iterator<Item = &LaneSegment> {
        self.segments.values()
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Axis-aligned bounds over all centerlines and polygons: (min, max).
    pub fn bounding_box(&self) -> (Point2, Point2) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for seg in self.segments.values() {
            for p in seg.centerline.points().iter().chain(&seg.polygon) {
                lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
                hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
            }
        }
        (lo, hi)
    }

    /// Applies a point map to every centerline and polygon vertex. The map must be rigid.
    pub fn map_points(&self, f: impl Fn(Point2) -> Point2) -> LaneGraph {
        let segments = self
            .segments
            .iter()
            .map(|(k, s)| {
                let centerline = Polyline2::new(s.centerline.points().iter().map(|&p| f(p)).collect())
                    .expect("rigid map keeps the centerline valid");
                let seg = LaneSegment {
                    centerline,
                    polygon: s.polygon.iter().map(|&p| f(p)).collect(),
                    ..s.clone()
                };
                (k.clone(), seg)
            })
            .collect();
        LaneGraph { segments }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(s)?;
        Self::from_json_value(&value)
    }

    pub fn from_json_value(value: &serde_json::Value) -> Result<Self> {
        let segs = value
            .get("segments")
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::schema("/segments", "missing segments array"))?;
        let mut out = Vec::with_capacity(segs.len());
        for (i, raw) in segs.iter().enumerate() {
            let rec: SegmentRecord = serde_json::from_value(raw.clone())
                .map_err(|e| Error::schema(format!("/segments/{i}"), e.to_string()))?;
            let centerline = Polyline2::new(rec.centerline)
                .map_err(|e| Error::schema(format!("/segments/{i}/centerline"), e.to_string()))?;
            out.push(LaneSegment {
                id: rec.id,
                centerline,
                polygon: rec.polygon,
                successors: rec.successors,
                predecessors: rec.predecessors,
            });
        }
        LaneGraph::new(out)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let rec = MapRecord {
            segments: self
                .segments
                .values()
                .map(|s| SegmentRecord {
                    id: s.id.clone(),
                    centerline: s.centerline.points().to_vec(),
                    polygon: s.polygon.clone(),
                    successors: s.successors.clone(),
                    predecessors: s.predecessors.clone(),
                })
                .collect(),
        };
        serde_json::to_value(rec).expect("map serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_json_value())?)?;
        Ok(())
    }
}

/// A reference polyline built from a directed chain of lane segments.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CandidatePolyline {
    #[serde(serialize_with = "serialize_polyline")]
    pub points: Polyline2,
    pub lane_ids: Vec<String>,
    pub pip_score: usize,
    pub alignment_score: f64,
}

fn serialize_polyline<S: serde::Serializer>(
    p: &Polyline2,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    p.points().serialize(s)
}

/// Tunables of the proposal pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalConfig {
    pub search_radius: f64,
    pub radius_growth: f64,
    pub max_expansions: usize,
    /// Chains extend until their length reaches this multiple of the query length.
    pub length_factor: f64,
    pub overlap_fraction: f64,
    pub overlap_distance: f64,
    pub max_candidates_per_seed: usize,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            search_radius: 2.5,
            radius_growth: 2.0,
            max_expansions: 10,
            length_factor: 2.0,
            overlap_fraction: 0.9,
            overlap_distance: 0.5,
            max_candidates_per_seed: 64,
        }
    }
}

/// Lanes with a centerline node near the last query point, widening the
/// radius geometrically until something is found. Returned in id order.
pub fn find_candidate_lanes(
    graph: &LaneGraph,
    query: &[Point2],
    cfg: &ProposalConfig,
) -> Result<Vec<String>> {
    if graph.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let last = *query.last().ok_or(Error::EmptyInput)?;
    // nearest node distance per lane, computed once
    let nearest: Vec<(&str, f64)> = graph
        .segments()
        .map(|s| {
            let d = s
                .centerline
                .points()
                .iter()
                .map(|p| p.distance(last))
                .fold(f64::INFINITY, f64::min);
            (s.id.as_str(), d)
        })
        .collect();
    let mut radius = cfg.search_radius;
    for _ in 0..=cfg.max_expansions {
        let found: Vec<String> = nearest
            .iter()
            .filter(|(_, d)| *d <= radius)
            .map(|(id, _)| id.to_string())
            .collect();
        if !found.is_empty() {
            return Ok(found);
        }
        radius *= cfg.radius_growth;
    }
    Err(Error::EmptyResult(cfg.max_expansions))
}

#[derive(Clone, Copy)]
enum Direction {
    Forward,
    Backward,
}

fn enumerate_chains(
    graph: &LaneGraph,
    seed: &str,
    threshold: f64,
    dir: Direction,
    cap: usize,
) -> Vec<Vec<String>> {
    fn walk(
        graph: &LaneGraph,
        current: &str,
        acc: f64,
        threshold: f64,
        dir: Direction,
        chain: &mut Vec<String>,
        visited: &mut BTreeSet<String>,
        out: &mut Vec<Vec<String>>,
        cap: usize,
    ) {
        if out.len() >= cap {
            return;
        }
        let seg = graph.get(current).expect("resolved id");
        let next = match dir {
            Direction::Forward => &seg.successors,
            Direction::Backward => &seg.predecessors,
        };
        let next: Vec<&String> = next.iter().filter(|n| !visited.contains(*n)).collect();
        if acc >= threshold || next.is_empty() {
            out.push(chain.clone());
            return;
        }
        for n in next {
            let len = graph.get(n).expect("resolved id").centerline.length();
            chain.push(n.clone());
            visited.insert(n.clone());
            walk(graph, n, acc + len, threshold, dir, chain, visited, out, cap);
            visited.remove(n);
            chain.pop();
        }
    }
    let mut out = Vec::new();
    let mut visited = BTreeSet::from([seed.to_string()]);
    walk(graph, seed, 0.0, threshold, dir, &mut Vec::new(), &mut visited, &mut out, cap);
    out
}

/// Concatenates centerlines of `lane_ids`, dropping repeated junction points.
pub fn concatenate_centerlines(graph: &LaneGraph, lane_ids: &[String]) -> Result<Polyline2> {
    let mut pts: Vec<Point2> = Vec::new();
    for id in lane_ids {
        let seg = graph.get(id).ok_or_else(|| Error::UnknownSeed(id.clone()))?;
        for &p in seg.centerline.points() {
            if pts.last().is_none_or(|q| q.distance(p) > 1e-9) {
                pts.push(p);
            }
        }
    }
    Polyline2::new(pts)
}

/// Cross product of predecessor and successor chains through `seed`, each
/// chain stopping once it is at least `length_factor * query_length` long.
/// Successor chains form the outer loop.
pub fn construct_polylines(
    graph: &LaneGraph,
    seed: &str,
    query_length: f64,
    cfg: &ProposalConfig,
) -> Result<Vec<CandidatePolyline>> {
    if graph.get(seed).is_none() {
        return Err(Error::UnknownSeed(seed.to_string()));
    }
    let threshold = cfg.length_factor * query_length;
    let cap = cfg.max_candidates_per_seed;
    let succ = enumerate_chains(graph, seed, threshold, Direction::Forward, cap);
    let pred = enumerate_chains(graph, seed, threshold, Direction::Backward, cap);
    let mut out = Vec::new();
    'outer: for s in &succ {
        for p in &pred {
            if out.len() >= cap {
                break 'outer;
            }
            let lane_ids: Vec<String> = p
                .iter()
                .rev()
                .cloned()
                .chain(std::iter::once(seed.to_string()))
                .chain(s.iter().cloned())
                .collect();
            let points = concatenate_centerlines(graph, &lane_ids)?;
            out.push(CandidatePolyline {
                points,
                lane_ids,
                pip_score: 0,
                alignment_score: 0.0,
            });
        }
    }
    Ok(out)
}

/// Fraction of `cand` points lying within `dist` of some point of `other`.
pub fn overlap_fraction(cand: &Polyline2, other: &Polyline2, dist: f64) -> f64 {
    let d2 = dist * dist;
    let hits = cand
        .points()
        .iter()
        .filter(|p| other.points().iter().any(|q| (**p - *q).dot(**p - *q) <= d2))
        .count();
    hits as f64 / cand.len() as f64
}

/// Drops candidates that mostly duplicate an earlier retained candidate.
pub fn remove_overlapping(
    cands: Vec<CandidatePolyline>,
    cfg: &ProposalConfig,
) -> Vec<CandidatePolyline> {
    let mut kept: Vec<CandidatePolyline> = Vec::new();
    for c in cands {
        let dup = kept.iter().any(|k| {
            overlap_fraction(&c.points, &k.points, cfg.overlap_distance) >= cfg.overlap_fraction
        });
        if !dup {
            kept.push(c);
        }
    }
    kept
}

/// Number of query points inside the union of the candidate's lane polygons.
pub fn pip_score(graph: &LaneGraph, cand: &CandidatePolyline, query: &[Point2]) -> usize {
    let polys: Vec<&[Point2]> = cand
        .lane_ids
        .iter()
        .filter_map(|id| graph.get(id))
        .map(|s| s.polygon.as_slice())
        .collect();
    query
        .iter()
        .filter(|&&q| polys.iter().any(|ring| point_in_polygon(ring, q).unwrap_or(false)))
        .count()
}

/// Maximum tangential coordinate reached by the query along the candidate.
pub fn alignment_score(cand: &CandidatePolyline, query: &[Point2]) -> f64 {
    query
        .iter()
        .map(|&q| project_to_curvilinear(&cand.points, q).tangential)
        .fold(0.0, f64::max)
}

/// Sort by descending point-in-polygon score, ties by lane ids.
pub fn sort_by_pip(cands: &mut [CandidatePolyline]) {
    cands.sort_by(|a, b| {
        b.pip_score
            .cmp(&a.pip_score)
            .then_with(|| a.lane_ids.cmp(&b.lane_ids))
    });
}

/// Sort by descending alignment score, ties by lane ids.
pub fn sort_by_alignment(cands: &mut [CandidatePolyline]) {
    cands.sort_by(|a, b| {
        b.alignment_score
            .total_cmp(&a.alignment_score)
            .then_with(|| a.lane_ids.cmp(&b.lane_ids))
    });
}

/// Draws alternately from the two rankings, starting with the PIP ranking,
/// skipping lane sequences already taken.
pub fn select_alternating(
    by_pip: &[CandidatePolyline],
    by_alignment: &[CandidatePolyline],
    k: usize,
) -> Vec<CandidatePolyline> {
    let mut out: Vec<CandidatePolyline> = Vec::new();
    let (mut i, mut j) = (0, 0);
    let mut from_pip = true;
    while out.len() < k && (i < by_pip.len() || j < by_alignment.len()) {
        let (list, idx) = if from_pip && i < by_pip.len() || j >= by_alignment.len() {
            (by_pip, &mut i)
        } else {
            (by_alignment, &mut j)
        };
        while *idx < list.len() {
            let c = &list[*idx];
            *idx += 1;
            if !out.iter().any(|o| o.lane_ids == c.lane_ids) {
                out.push(c.clone());
                break;
            }
        }
        from_pip = !from_pip;
    }
    out
}

/// Full proposal pipeline: ranked reference polylines for a query trajectory.
pub fn propose_polylines(
    graph: &LaneGraph,
    query: &[Point2],
    k: usize,
    cfg: &ProposalConfig,
) -> Result<Vec<CandidatePolyline>> {
    if k == 0 {
        return Err(Error::EmptyInput);
    }
    let seeds = find_candidate_lanes(graph, query, cfg)?;
    let qlen = trajectory_length(query);
    let mut all: Vec<CandidatePolyline> = Vec::new();
    for seed in &seeds {
        for c in construct_polylines(graph, seed, qlen, cfg)? {
            if !all.iter().any(|a| a.lane_ids == c.lane_ids) {
                all.push(c);
            }
        }
    }
    let mut filtered = remove_overlapping(all, cfg);
    for c in &mut filtered {
        c.pip_score = pip_score(graph, c, query);
        c.alignment_score = alignment_score(c, query);
    }
    let mut by_pip = filtered.clone();
    sort_by_pip(&mut by_pip);
    let mut by_alignment = filtered;
    sort_by_alignment(&mut by_alignment);
    Ok(select_alternating(&by_pip, &by_alignment, k))
}

/// Best proposal in hindsight, queried with observed + future positions.
pub fn oracle_polyline(
    graph: &LaneGraph,
    full_trajectory: &[Point2],
    cfg: &ProposalConfig,
) -> Result<CandidatePolyline> {
    propose_polylines(graph, full_trajectory, 1, cfg)?
        .into_iter()
        .next()
        .ok_or(Error::EmptyResult(cfg.max_expansions))
}

/// Rectangular lane region around a straight or gently curved centerline.
pub fn lane_polygon(centerline: &Polyline2, half_width: f64) -> Vec<Point2> {
    let pts = centerline.points();
    let n = pts.len();
    let normal_at = |i: usize| {
        let d = if i == 0 {
            pts[1] - pts[0]
        } else if i == n - 1 {
            pts[n - 1] - pts[n - 2]
        } else {
            let a = pts[i] - pts[i - 1];
            let b = pts[i + 1] - pts[i];
            a * (1.0 / a.norm()) + b * (1.0 / b.norm())
        };
        let d = d * (1.0 / d.norm());
        Point2::new(-d.y, d.x)
    };
    let left: Vec<Point2> = (0..n).map(|i| pts[i] + normal_at(i) * half_width).collect();
    let right: Vec<Point2> = (0..n).map(|i| pts[i] - normal_at(i) * half_width).collect();
    left.into_iter().chain(right.into_iter().rev()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    fn straight(id: &str, a: Point2, b: Point2, succ: &[&str], pred: &[&str]) -> LaneSegment {
        let line = Polyline2::new(vec![a, b]).unwrap().resample(1.0);
        LaneSegment {
            id: id.into(),
            polygon: lane_polygon(&line, 1.75),
            centerline: line,
            successors: succ.iter().map(|s| s.to_string()).collect(),
            predecessors: pred.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn chain_graph(lens: &[f64]) -> LaneGraph {
        let mut x = 0.0;
        let n = lens.len();
        let segs = lens
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let id = format!("s{i}");
                let succ: Vec<String> = if i + 1 < n { vec![format!("s{}", i + 1)] } else { vec![] };
                let pred: Vec<String> = if i > 0 { vec![format!("s{}", i - 1)] } else { vec![] };
                let line = Polyline2::new(vec![p(x, 0.0), p(x + l, 0.0)]).unwrap().resample(1.0);
                x += l;
                LaneSegment {
                    id,
                    polygon: lane_polygon(&line, 1.75),
                    centerline: line,
                    successors: succ,
                    predecessors: pred,
                }
            })
            .collect();
        LaneGraph::new(segs).unwrap()
    }

    #[test]
    fn rejects_asymmetric_edges() {
        let a = straight("a", p(0.0, 0.0), p(10.0, 0.0), &["b"], &[]);
        let b = straight("b", p(10.0, 0.0), p(20.0, 0.0), &[], &[]);
        assert!(matches!(LaneGraph::new(vec![a, b]), Err(Error::InvalidGraph(_))));
    }

    #[test]
    fn candidate_search_radius_expands() {
        let g = LaneGraph::new(vec![
            straight("near", p(0.0, 1.0), p(10.0, 1.0), &[], &[]),
            straight("far", p(0.0, 30.0), p(10.0, 30.0), &[], &[]),
        ])
        .unwrap();
        let cfg = ProposalConfig::default();
        let q = [p(4.0, -1.0), p(5.0, 0.0)];
        assert_eq!(find_candidate_lanes(&g, &q, &cfg).unwrap(), vec!["near"]);
        // nearest lane 7 m away: radii 2.5 and 5 miss, 10 hits
        let g = LaneGraph::new(vec![straight("l", p(0.0, 7.0), p(10.0, 7.0), &[], &[])]).unwrap();
        assert_eq!(find_candidate_lanes(&g, &[p(5.0, 0.0)], &cfg).unwrap(), vec!["l"]);
        let tight = ProposalConfig {
            max_expansions: 1,
            ..cfg.clone()
        };
        assert!(matches!(
            find_candidate_lanes(&g, &[p(5.0, 0.0)], &tight),
            Err(Error::EmptyResult(1))
        ));
        let single = LaneGraph::new(vec![straight("only", p(0.0, 0.0), p(1.0, 0.0), &[], &[])]).unwrap();
        assert_eq!(
            find_candidate_lanes(&single, &[p(500.0, 500.0)], &cfg).unwrap(),
            vec!["only"]
        );
        let empty = LaneGraph::new(vec![]).unwrap();
        assert!(matches!(find_candidate_lanes(&empty, &[p(0.0, 0.0)], &cfg), Err(Error::EmptyGraph)));
    }

    #[test]
    fn isolated_segment_yields_its_centerline() {
        let g = LaneGraph::new(vec![straight("x", p(0.0, 0.0), p(5.0, 0.0), &[], &[])]).unwrap();
        let c = construct_polylines(&g, "x", 10.0, &ProposalConfig::default()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].lane_ids, vec!["x"]);
        assert_eq!(c[0].points, g.get("x").unwrap().centerline);
        assert!(matches!(
            construct_polylines(&g, "nope", 1.0, &ProposalConfig::default()),
            Err(Error::UnknownSeed(_))
        ));
    }

    #[test]
    fn chain_traversal_stops_at_threshold() {
        // seed s2; query length 6 -> threshold 12. successors: s3 (5) < 12, s4 (8) -> 13 >= 12 stop.
        // predecessors: s1 (20) >= 12 stop.
        let g = chain_graph(&[10.0, 20.0, 4.0, 5.0, 8.0, 9.0]);
        let c = construct_polylines(&g, "s2", 6.0, &ProposalConfig::default()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].lane_ids, vec!["s1", "s2", "s3", "s4"]);
        assert!((c[0].points.length() - 37.0).abs() < 1e-9);
    }

    #[test]
    fn overlap_removal() {
        let g = chain_graph(&[10.0, 10.0, 10.0]);
        let cfg = ProposalConfig::default();
        let a = construct_polylines(&g, "s1", 5.0, &cfg).unwrap().remove(0);
        let out = remove_overlapping(vec![a.clone(), a.clone()], &cfg);
        assert_eq!(out.len(), 1);

        let far = LaneGraph::new(vec![
            straight("u", p(0.0, 0.0), p(10.0, 0.0), &[], &[]),
            straight("v", p(0.0, 50.0), p(10.0, 50.0), &[], &[]),
        ])
        .unwrap();
        let u = construct_polylines(&far, "u", 1.0, &cfg).unwrap().remove(0);
        let v = construct_polylines(&far, "v", 1.0, &cfg).unwrap().remove(0);
        assert_eq!(remove_overlapping(vec![u, v], &cfg).len(), 2);
    }

    #[test]
    fn forks_sharing_only_the_seed_are_kept() {
        // seed 10 m, two 10 m branches diverging at 90 degrees:
        // 11 + 10 points, 11 shared -> overlap 11/21 ~ 0.52
        let segs = vec![
            straight("a", p(0.0, 0.0), p(10.0, 0.0), &["b", "c"], &[]),
            straight("b", p(10.0, 0.0), p(20.0, 0.0), &[], &["a"]),
            straight("c", p(10.0, 0.0), p(10.0, 10.0), &[], &["a"]),
        ];
        let g = LaneGraph::new(segs).unwrap();
        let cfg = ProposalConfig::default();
        let cands = construct_polylines(&g, "a", 5.0, &cfg).unwrap();
        assert_eq!(cands.len(), 2);
        let frac = overlap_fraction(&cands[1].points, &cands[0].points, 0.5);
        assert!((frac - 11.0 / 21.0).abs() < 1e-12, "{frac}");
        assert_eq!(remove_overlapping(cands, &cfg).len(), 2);
    }

    #[test]
    fn pip_and_alignment_scores() {
        let g = chain_graph(&[10.0]);
        let cfg = ProposalConfig::default();
        let c = construct_polylines(&g, "s0", 1.0, &cfg).unwrap().remove(0);
        let inside: Vec<Point2> = (0..20).map(|i| p(i as f64 * 0.5, 0.3)).collect();
        assert_eq!(pip_score(&g, &c, &inside), 20);
        let outside: Vec<Point2> = (0..20).map(|i| p(i as f64 * 0.5, 9.0)).collect();
        assert_eq!(pip_score(&g, &c, &outside), 0);
        let along: Vec<Point2> = (0..=10).map(|i| p(i as f64, 0.0)).collect();
        assert!((alignment_score(&c, &along) - 10.0).abs() < 1e-12);
        assert_eq!(alignment_score(&c, &[p(0.0, 0.0)]), 0.0);
    }

    #[test]
    fn pip_monotone_under_appending() {
        let g = chain_graph(&[10.0, 10.0]);
        let cfg = ProposalConfig::default();
        let c = construct_polylines(&g, "s0", 5.0, &cfg).unwrap().remove(0);
        let mut q = vec![];
        let mut last = 0;
        for i in 0..30 {
            q.push(p(i as f64 * 0.9 - 3.0, (i as f64 * 0.7).sin() * 3.0));
            let s = pip_score(&g, &c, &q);
            assert!(s >= last);
            last = s;
        }
    }

    #[test]
    fn map_json_round_trip() {
        let g = chain_graph(&[10.0, 3.0]);
        let v = g.to_json_value();
        let back = LaneGraph::from_json_value(&v).unwrap();
        assert_eq!(g, back);
        let bad = serde_json::json!({"segments": [{"id": "a", "centerline": [[0,0]], "polygon": [[0,0],[1,0],[0,1]]}]});
        match LaneGraph::from_json_value(&bad) {
            Err(Error::SchemaViolation { pointer, .. }) => assert_eq!(pointer, "/segments/0/centerline"),
            other => panic!("{other:?}"),
        }
    }
}

/// Fork fixture: two predecessor chains (F-G, H-I) and two successor chains
/// (B-C, D-E) around seed lane A, with a query that comes in along H-I and
/// drifts towards D.
pub mod fixtures {
    use super::*;

    fn seg(id: &str, pts: &[(f64, f64)], polygon: Option<Vec<Point2>>, succ: &[&str], pred: &[&str]) -> LaneSegment {
        let line = Polyline2::new(pts.iter().map(|&(x, y)| Point2::new(x, y)).collect())
            .expect("fixture centerline")
            .resample(1.0);
        LaneSegment {
            id: id.into(),
            polygon: polygon.unwrap_or_else(|| lane_polygon(&line, 1.75)),
            centerline: line,
            successors: succ.iter().map(|s| s.to_string()).collect(),
            predecessors: pred.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn fork_graph() -> LaneGraph {
        let d_poly = [
            (4.5, 1.85),
            (9.0, 1.85),
            (10.0, -0.5),
            (11.2, -1.2),
            (17.2, 4.8),
            (14.8, 7.2),
            (9.0, 3.0),
            (4.5, 3.0),
        ]
        .iter()
        .map(|&(x, y)| Point2::new(x, y))
        .collect();
        LaneGraph::new(vec![
            seg("A", &[(0.0, 0.0), (10.0, 0.0)], None, &["B", "D"], &["G", "I"]),
            seg("B", &[(10.0, 0.0), (20.0, 0.0)], None, &["C"], &["A"]),
            seg("C", &[(20.0, 0.0), (30.0, 0.0)], None, &[], &["B"]),
            seg("D", &[(10.0, 0.0), (16.0, 6.0)], Some(d_poly), &["E"], &["A"]),
            seg("E", &[(16.0, 6.0), (23.0, 13.0)], None, &[], &["D"]),
            seg("F", &[(-20.0, 0.0), (-10.0, 0.0)], None, &["G"], &[]),
            seg("G", &[(-10.0, 0.0), (0.0, 0.0)], None, &["A"], &["F"]),
            seg("H", &[(-20.0, -6.0), (-10.0, -6.0)], None, &["I"], &[]),
            seg("I", &[(-10.0, -6.0), (0.0, 0.0)], None, &["A"], &["H"]),
        ])
        .expect("fork fixture is consistent")
    }

    pub fn fork_query() -> Vec<Point2> {
        let mut q: Vec<Point2> = (0..10).map(|i| Point2::new(-20.0 + i as f64, -6.0)).collect();
        q.extend((0..10).map(|i| Point2::new(-10.0 + i as f64, -6.0 + 0.6 * i as f64)));
        q.extend((0..5).map(|i| Point2::new(i as f64, 0.0)));
        q.push(Point2::new(5.0, 2.0));
        q.push(Point2::new(6.0, 2.2));
        q
    }

    /// Lane sequences L1..L4 in the fixture's naming.
    pub fn fork_lane_ids() -> [Vec<String>; 4] {
        let ids = |s: &str| s.split('-').map(String::from).collect::<Vec<_>>();
        [ids("F-G-A-B-C"), ids("H-I-A-B-C"), ids("F-G-A-D-E"), ids("H-I-A-D-E")]
    }
}

#[cfg(test)]
mod fork_tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn fork_candidates_and_merge() {
        let g = fork_graph();
        let q = fork_query();
        let cfg = ProposalConfig::default();
        assert_eq!(find_candidate_lanes(&g, &q, &cfg).unwrap(), vec!["A"]);
        let cands = construct_polylines(&g, "A", trajectory_length(&q), &cfg).unwrap();
        let ids: Vec<_> = cands.iter().map(|c| c.lane_ids.clone()).collect();
        let [l1, l2, l3, l4] = fork_lane_ids();
        assert_eq!(ids, vec![l1, l2.clone(), l3, l4.clone()]);
        let top = propose_polylines(&g, &q, 2, &cfg).unwrap();
        assert_eq!(top.iter().map(|c| c.lane_ids.clone()).collect::<Vec<_>>(), vec![l4.clone(), l2]);
        let one = propose_polylines(&g, &q, 1, &cfg).unwrap();
        assert_eq!(one[0].lane_ids, l4);
        let all = propose_polylines(&g, &q, 10, &cfg).unwrap();
        assert_eq!(all.len(), 4);
        for c in &all {
            for w in c.lane_ids.windows(2) {
                assert!(g.get(&w[0]).unwrap().successors.contains(&w[1]));
            }
        }
    }
}
