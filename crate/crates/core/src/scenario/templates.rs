//! Synthetic lane maps: a straight two-lane corridor, a four-way
//! intersection and a T-junction.
//!
//! Intersection arms are generated from one canonical west arm (traffic
//! enters heading +x) and rotated into place. Each arm has one inbound lane
//! per maneuver (left, through, right) and one outbound lane receiving each
//! maneuver, so a vehicle's lane identifies its route.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use crate::lane_graph::{lane_polygon, LaneGraph, LaneSegment};
use crate::{Point2, Polyline2};

pub const LANE_WIDTH: f64 = 3.5;
pub const BOX_HALF: f64 = 15.0;
pub const ARM_LENGTH: f64 = 70.0;
pub const CORRIDOR_X: (f64, f64) = (-60.0, 150.0);
pub const CORRIDOR_SEGMENT: f64 = 70.0;

pub const CORRIDOR: &str = "corridor";
pub const INTERSECTION: &str = "intersection";
pub const T_JUNCTION: &str = "t_junction";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Maneuver {
    Left,
    Through,
    Right,
}

impl Maneuver {
    pub const ALL: [Maneuver; 3] = [Maneuver::Left, Maneuver::Through, Maneuver::Right];

    fn tag(self) -> &'static str {
        match self {
            Maneuver::Left => "L",
            Maneuver::Through => "T",
            Maneuver::Right => "R",
        }
    }

    // lateral offset of the inbound (negative) and outbound (positive) lane
    fn offset(self) -> f64 {
        match self {
            Maneuver::Left => 0.5 * LANE_WIDTH,
            Maneuver::Through => 1.5 * LANE_WIDTH,
            Maneuver::Right => 2.5 * LANE_WIDTH,
        }
    }

    // heading change in quarter turns, counter-clockwise positive
    fn quarter_turns(self) -> i32 {
        match self {
            Maneuver::Left => 1,
            Maneuver::Through => 0,
            Maneuver::Right => -1,
        }
    }
}

/// Arm positions, named by the side of the box they attach to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Arm {
    W,
    S,
    E,
    N,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::W, Arm::S, Arm::E, Arm::N];

    fn index(self) -> i32 {
        match self {
            Arm::W => 0,
            Arm::S => 1,
            Arm::E => 2,
            Arm::N => 3,
        }
    }

    fn from_index(i: i32) -> Arm {
        Arm::ALL[i.rem_euclid(4) as usize]
    }

    /// Rotation taking the canonical west arm onto this arm. Traffic entering
    /// from the west heads east; from the south it heads north, and so on.
    pub fn rotation(self) -> f64 {
        self.index() as f64 * FRAC_PI_2
    }

    fn name(self) -> &'static str {
        match self {
            Arm::W => "W",
            Arm::S => "S",
            Arm::E => "E",
            Arm::N => "N",
        }
    }

    /// Arm a vehicle entering from `self` exits through.
    pub fn exit_for(self, m: Maneuver) -> Arm {
        // entering from W heading east: left exits N, through E, right S
        Arm::from_index(self.index() + 2 + m.quarter_turns())
    }
}

pub fn inbound_id(arm: Arm, m: Maneuver, seg: usize) -> String {
    format!("{}_in_{}_{}", arm.name(), m.tag(), seg)
}

pub fn outbound_id(arm: Arm, m: Maneuver, seg: usize) -> String {
    format!("{}_out_{}_{}", arm.name(), m.tag(), seg)
}

pub fn connector_id(arm: Arm, m: Maneuver) -> String {
    format!("{}_{}", arm.name(), m.tag())
}

fn straight_points(a: Point2, b: Point2) -> Vec<Point2> {
    let n = (a.distance(b) / 1.0).ceil().max(1.0) as usize;
    (0..=n)
        .map(|i| {
            let u = i as f64 / n as f64;
            a + (b - a) * u
        })
        .collect()
}

fn arc_points(center: Point2, radius: f64, from: f64, to: f64) -> Vec<Point2> {
    let n = ((to - from).abs() * radius).ceil().max(2.0) as usize;
    (0..=n)
        .map(|i| {
            let th = from + (to - from) * i as f64 / n as f64;
            center + Point2::new(th.cos(), th.sin()) * radius
        })
        .collect()
}

// canonical (west arm) geometry
fn canonical_inbound(m: Maneuver, seg: usize) -> Vec<Point2> {
    let y = -m.offset();
    let far = -BOX_HALF - ARM_LENGTH;
    let mid = -BOX_HALF - ARM_LENGTH / 2.0;
    match seg {
        0 => straight_points(Point2::new(far, y), Point2::new(mid, y)),
        _ => straight_points(Point2::new(mid, y), Point2::new(-BOX_HALF, y)),
    }
}

fn canonical_outbound(m: Maneuver, seg: usize) -> Vec<Point2> {
    let y = m.offset();
    let far = -BOX_HALF - ARM_LENGTH;
    let mid = -BOX_HALF - ARM_LENGTH / 2.0;
    match seg {
        0 => straight_points(Point2::new(-BOX_HALF, y), Point2::new(mid, y)),
        _ => straight_points(Point2::new(mid, y), Point2::new(far, y)),
    }
}

fn canonical_connector(m: Maneuver) -> Vec<Point2> {
    let y = -m.offset();
    match m {
        Maneuver::Through => straight_points(Point2::new(-BOX_HALF, y), Point2::new(BOX_HALF, y)),
        // centered on the NW box corner, sweeping from south to east of it
        Maneuver::Left => {
            let r = BOX_HALF + m.offset();
            arc_points(Point2::new(-BOX_HALF, BOX_HALF), r, -FRAC_PI_2, 0.0)
        }
        // centered on the SW box corner
        Maneuver::Right => {
            let r = BOX_HALF - m.offset();
            arc_points(Point2::new(-BOX_HALF, -BOX_HALF), r, FRAC_PI_2, 0.0)
        }
    }
}

struct Builder {
    segs: BTreeMap<String, (Vec<Point2>, Vec<String>, Vec<String>)>,
}

impl Builder {
    fn new() -> Self {
        Builder { segs: BTreeMap::new() }
    }

    fn add(&mut self, id: String, pts: Vec<Point2>) {
        self.segs.insert(id, (pts, vec![], vec![]));
    }

    fn link(&mut self, a: &str, b: &str) {
        self.segs.get_mut(a).expect("link source").1.push(b.to_string());
        self.segs.get_mut(b).expect("link target").2.push(a.to_string());
    }

    fn build(self) -> LaneGraph {
        let segs = self
            .segs
            .into_iter()
            .map(|(id, (pts, succ, pred))| {
                let centerline = Polyline2::from_points_dedup(&pts).expect("template centerline");
                LaneSegment {
                    polygon: lane_polygon(&centerline, LANE_WIDTH / 2.0),
                    centerline,
                    successors: succ,
                    predecessors: pred,
                    id,
                }
            })
            .collect();
        LaneGraph::new(segs).expect("template graph is consistent")
    }
}

/// Two eastbound lanes at y = 0 and y = 3.5.
pub fn corridor() -> LaneGraph {
    let mut b = Builder::new();
    let n = ((CORRIDOR_X.1 - CORRIDOR_X.0) / CORRIDOR_SEGMENT).round() as usize;
    for lane in 0..2 {
        let y = lane as f64 * LANE_WIDTH;
        for s in 0..n {
            let x0 = CORRIDOR_X.0 + s as f64 * CORRIDOR_SEGMENT;
            b.add(
                corridor_id(lane, s),
                straight_points(Point2::new(x0, y), Point2::new(x0 + CORRIDOR_SEGMENT, y)),
            );
        }
        for s in 1..n {
            b.link(&corridor_id(lane, s - 1), &corridor_id(lane, s));
        }
    }
    b.build()
}

pub fn corridor_id(lane: usize, seg: usize) -> String {
    format!("c{lane}_{seg}")
}

pub fn corridor_lane_ids(lane: usize) -> Vec<String> {
    let n = ((CORRIDOR_X.1 - CORRIDOR_X.0) / CORRIDOR_SEGMENT).round() as usize;
    (0..n).map(|s| corridor_id(lane, s)).collect()
}

fn junction(arms: &[Arm]) -> LaneGraph {
    let mut b = Builder::new();
    let rotate = |arm: Arm, pts: Vec<Point2>| -> Vec<Point2> {
        let th = arm.rotation();
        pts.into_iter().map(|p| p.rotate(th)).collect()
    };
    for &arm in arms {
        for m in Maneuver::ALL {
            let exit = arm.exit_for(m);
            if !arms.contains(&exit) {
                continue;
            }
            for seg in 0..2 {
                b.add(inbound_id(arm, m, seg), rotate(arm, canonical_inbound(m, seg)));
            }
            b.add(connector_id(arm, m), rotate(arm, canonical_connector(m)));
            for seg in 0..2 {
                b.add(outbound_id(exit, m, seg), rotate(exit, canonical_outbound(m, seg)));
            }
        }
    }
    for &arm in arms {
        for m in Maneuver::ALL {
            let exit = arm.exit_for(m);
            if !arms.contains(&exit) {
                continue;
            }
            b.link(&inbound_id(arm, m, 0), &inbound_id(arm, m, 1));
            b.link(&inbound_id(arm, m, 1), &connector_id(arm, m));
            b.link(&connector_id(arm, m), &outbound_id(exit, m, 0));
            b.link(&outbound_id(exit, m, 0), &outbound_id(exit, m, 1));
        }
    }
    b.build()
}

pub fn intersection() -> LaneGraph {
    junction(&Arm::ALL)
}

/// Intersection without the north arm.
pub fn t_junction() -> LaneGraph {
    junction(&[Arm::W, Arm::S, Arm::E])
}

/// Lane ids followed by a vehicle entering from `arm` and performing `m`.
pub fn route(arm: Arm, m: Maneuver) -> Vec<String> {
    let exit = arm.exit_for(m);
    vec![
        inbound_id(arm, m, 0),
        inbound_id(arm, m, 1),
        connector_id(arm, m),
        outbound_id(exit, m, 0),
        outbound_id(exit, m, 1),
    ]
}

/// Arms of a junction template that support maneuver `m`.
pub fn arms_with(map_id: &str, m: Maneuver) -> Vec<Arm> {
    let arms: &[Arm] = match map_id {
        INTERSECTION => &Arm::ALL,
        T_JUNCTION => &[Arm::W, Arm::S, Arm::E],
        _ => &[],
    };
    arms.iter().copied().filter(|a| arms.contains(&a.exit_for(m))).collect()
}

pub fn map_templates() -> BTreeMap<String, LaneGraph> {
    BTreeMap::from([
        (CORRIDOR.to_string(), corridor()),
        (INTERSECTION.to_string(), intersection()),
        (T_JUNCTION.to_string(), t_junction()),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::point_in_polygon;
    use crate::lane_graph::{concatenate_centerlines, propose_polylines, ProposalConfig};

    #[test]
    fn templates_are_valid() {
        for (id, g) in map_templates() {
            // rebuild from JSON to re-run validation
            let back = LaneGraph::from_json_value(&g.to_json_value()).unwrap();
            assert_eq!(back, g, "{id}");
            for s in g.segments() {
                for &p in s.centerline.points() {
                    assert!(point_in_polygon(&s.polygon, p).unwrap(), "{id}/{}", s.id);
                }
            }
        }
        assert_eq!(intersection().len(), 4 * 3 * 5);
        assert_eq!(t_junction().len(), 6 * 5);
    }

    #[test]
    fn routes_are_connected_and_smooth() {
        let g = intersection();
        for arm in Arm::ALL {
            for m in Maneuver::ALL {
                let ids = route(arm, m);
                let line = concatenate_centerlines(&g, &ids).unwrap();
                let pts = line.points();
                for w in pts.windows(2) {
                    let d = w[0].distance(w[1]);
                    assert!(d > 0.5 && d < 1.3, "{arm:?} {m:?} spacing {d}");
                }
            }
        }
        assert_eq!(Arm::W.exit_for(Maneuver::Left), Arm::N);
        assert_eq!(Arm::W.exit_for(Maneuver::Right), Arm::S);
        assert_eq!(Arm::S.exit_for(Maneuver::Left), Arm::W);
        assert_eq!(arms_with(T_JUNCTION, Maneuver::Left), vec![Arm::S, Arm::E]);
    }

    #[test]
    fn proposals_on_templates() {
        let cfg = ProposalConfig::default();
        // straight approach inside the through lane of the west arm, well before the box
        let y = -1.5 * LANE_WIDTH;
        let q: Vec<Point2> = (0..10).map(|i| Point2::new(-40.0 + i as f64, y)).collect();
        let g = intersection();
        let props = propose_polylines(&g, &q, 6, &cfg).unwrap();
        assert!(!props.is_empty());
        // through lane has a single route; the query end also sees no other lane within 2.5 m
        assert!(props.iter().all(|c| c.lane_ids.contains(&inbound_id(Arm::W, Maneuver::Through, 1))));

        // stopping at the box edge between the left and through lanes gives a fork
        let q: Vec<Point2> = (0..10).map(|i| Point2::new(-25.0 + i as f64, -3.5)).collect();
        let props = propose_polylines(&g, &q, 6, &cfg).unwrap();
        assert!(props.len() >= 2, "{}", props.len());

        let c = corridor();
        let q: Vec<Point2> = (0..10).map(|i| Point2::new(30.0 + i as f64, 0.1)).collect();
        let props = propose_polylines(&c, &q, 6, &cfg).unwrap();
        assert_eq!(props.len(), 1);
        assert_eq!(props[0].lane_ids, corridor_lane_ids(0));
    }
}
