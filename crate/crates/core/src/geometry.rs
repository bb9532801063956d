//! Planar geometry: points, polylines, rigid normalization frames,
//! curvilinear projection and point-in-polygon tests.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A planar point in meters. Serialized as `[x, y]`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point<S> {
    pub x: S,
    pub y: S,
}

impl<S: Scalar> Point<S> {
    #[inline]
    pub fn new(x: S, y: S) -> Self {
        Point { x, y }
    }

    #[inline]
    pub fn zero() -> Self {
        Point::new(S::zero(), S::zero())
    }

    #[inline]
    pub fn dot(self, other: Self) -> S {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product; positive when `other` lies to the left.
    #[inline]
    pub fn cross(self, other: Self) -> S {
        self.x * other.y - self.y * other.x
    }

    #[inline]
    pub fn norm(self) -> S {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn distance(self, other: Self) -> S {
        (self - other).norm()
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Counter-clockwise rotation by `angle` radians about the origin.
    #[inline]
    pub fn rotate(self, angle: S) -> Self {
        let (s, c) = angle.sin_cos();
        Point::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn cast<T: Scalar>(self) -> Point<T> {
        Point::new(T::lit(self.x.to_f64_lossy()), T::lit(self.y.to_f64_lossy()))
    }
}

impl<S: Scalar> Add for Point<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl<S: Scalar> Sub for Point<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl<S: Scalar> Mul<S> for Point<S> {
    type Output = Self;
    fn mul(self, k: S) -> Self {
        Point::new(self.x * k, self.y * k)
    }
}

impl<S: Scalar> Neg for Point<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Point::new(-self.x, -self.y)
    }
}

impl<S: Serialize> Serialize for Point<S> {
    fn serialize<Se: Serializer>(&self, serializer: Se) -> std::result::Result<Se::Ok, Se::Error> {
        (&self.x, &self.y).serialize(serializer)
    }
}

impl<'de, S: Deserialize<'de>> Deserialize<'de> for Point<S> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let (x, y) = <(S, S)>::deserialize(deserializer)?;
        Ok(Point { x, y })
    }
}

/// An ordered point sequence with at least two points, no repeated
/// consecutive points, and precomputed cumulative arclength.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyline<S> {
    points: Vec<Point<S>>,
    cumulative: Vec<S>,
}

impl<S: Scalar> Polyline<S> {
    pub fn new(points: Vec<Point<S>>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidPolyline(format!(
                "need at least 2 points, got {}",
                points.len()
            )));
        }
        let mut cumulative = Vec::with_capacity(points.len());
        cumulative.push(S::zero());
        for (i, w) in points.windows(2).enumerate() {
            if !w[1].is_finite() || !w[0].is_finite() {
                return Err(Error::InvalidPolyline(format!("non-finite point near index {i}")));
            }
            let d = w[0].distance(w[1]);
            if d <= S::zero() {
                return Err(Error::InvalidPolyline(format!(
                    "points {i} and {} coincide",
                    i + 1
                )));
            }
            cumulative.push(cumulative[i] + d);
        }
        Ok(Polyline { points, cumulative })
    }

    /// Builds a polyline after dropping consecutive duplicates.
    pub fn from_points_dedup(points: &[Point<S>]) -> Result<Self> {
        let mut out: Vec<Point<S>> = Vec::with_capacity(points.len());
        for &p in points {
            if out.last().is_none_or(|q| *q != p) {
                out.push(p);
            }
        }
        Polyline::new(out)
    }

    pub fn points(&self) -> &[Point<S>] {
        &self.points
    }

    pub fn cumulative_arclength(&self) -> &[S] {
        &self.cumulative
    }

    pub fn length(&self) -> S {
        *self.cumulative.last().expect("polyline has points")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Point<S>> {
        self.points
    }

    /// Point at arclength `s`, clamped to the polyline ends.
    pub fn interpolate(&self, s: S) -> Point<S> {
        if s <= S::zero() {
            return self.points[0];
        }
        if s >= self.length() {
            return *self.points.last().unwrap();
        }
        let i = match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&s).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => return self.points[i],
            Err(i) => i - 1,
        };
        let seg = self.cumulative[i + 1] - self.cumulative[i];
        let t = (s - self.cumulative[i]) / seg;
        self.points[i] + (self.points[i + 1] - self.points[i]) * t
    }

    /// Unit tangent at arclength `s`.
    pub fn tangent_at(&self, s: S) -> Point<S> {
        let n = self.points.len();
        let mut i = 0;
        while i + 2 < n && self.cumulative[i + 1] <= s {
            i += 1;
        }
        let d = self.points[i + 1] - self.points[i];
        d * (S::one() / d.norm())
    }

    /// Resamples at (approximately) uniform `spacing`, keeping both endpoints.
    pub fn resample(&self, spacing: S) -> Polyline<S> {
        let len = self.length();
        let n = (len / spacing).ceil().to_usize().unwrap_or(1).max(1);
        let step = len / S::lit(n as f64);
        let pts = (0..=n)
            .map(|i| self.interpolate(step * S::lit(i as f64)))
            .collect::<Vec<_>>();
        Polyline::from_points_dedup(&pts).expect("resampled polyline is valid")
    }
}

/// Whether a frame maps world coordinates into the local frame or back.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameDirection {
    Forward,
    Inverse,
}

/// Rigid transform parameterized by a heading angle and an origin.
///
/// The forward direction maps world points to the local frame,
/// `local = R(-angle) (p - translation)`; the inverse maps back.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame<S> {
    pub rotation_angle: S,
    pub translation: Point<S>,
    pub direction: FrameDirection,
}

impl<S: Scalar> Frame<S> {
    pub fn identity() -> Self {
        Frame {
            rotation_angle: S::zero(),
            translation: Point::zero(),
            direction: FrameDirection::Forward,
        }
    }

    pub fn inverse(&self) -> Self {
        Frame {
            direction: match self.direction {
                FrameDirection::Forward => FrameDirection::Inverse,
                FrameDirection::Inverse => FrameDirection::Forward,
            },
            ..*self
        }
    }

    #[inline]
    pub fn apply_point(&self, p: Point<S>) -> Point<S> {
        match self.direction {
            FrameDirection::Forward => (p - self.translation).rotate(-self.rotation_angle),
            FrameDirection::Inverse => p.rotate(self.rotation_angle) + self.translation,
        }
    }

    pub fn apply(&self, pts: &[Point<S>]) -> Vec<Point<S>> {
        pts.iter().map(|&p| self.apply_point(p)).collect()
    }

    /// Rigid motions keep consecutive points distinct, so the result is a valid polyline.
    pub fn apply_polyline(&self, line: &Polyline<S>) -> Polyline<S> {
        Polyline::new(self.apply(line.points())).expect("rigid transform preserves validity")
    }
}

/// Frame that puts `observed[0]` at the origin and `observed[heading_index]` on the +x axis.
pub fn build_normalization_frame<S: Scalar>(
    observed: &[Point<S>],
    heading_index: usize,
) -> Result<Frame<S>> {
    let (first, head) = match (observed.first(), observed.get(heading_index)) {
        (Some(a), Some(b)) => (*a, *b),
        _ => {
            return Err(Error::InvalidPolyline(format!(
                "heading index {heading_index} outside trajectory of {} points",
                observed.len()
            )))
        }
    };
    let d = head - first;
    if d.norm() <= S::lit(1e-9) {
        return Err(Error::DegenerateHeading);
    }
    Ok(Frame {
        rotation_angle: d.y.atan2(d.x),
        translation: first,
        direction: FrameDirection::Forward,
    })
}

/// Like [`build_normalization_frame`], falling back to a translation-only
/// frame when the actor has not moved.
pub fn normalization_frame_or_identity<S: Scalar>(
    observed: &[Point<S>],
    heading_index: usize,
) -> Frame<S> {
    match build_normalization_frame(observed, heading_index) {
        Ok(f) => f,
        Err(_) => Frame {
            rotation_angle: S::zero(),
            translation: observed.first().copied().unwrap_or_else(Point::zero),
            direction: FrameDirection::Forward,
        },
    }
}

/// Position relative to a reference polyline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Curvilinear<S> {
    /// Arclength of the closest point on the reference.
    pub tangential: S,
    /// Signed offset, positive to the left of the direction of travel.
    pub normal: S,
}

/// Closest-point projection of `p` onto `reference`; ties go to the lower-arclength segment.
pub fn project_to_curvilinear<S: Scalar>(reference: &Polyline<S>, p: Point<S>) -> Curvilinear<S> {
    let pts = reference.points();
    let cum = reference.cumulative_arclength();
    let mut best_d2 = S::infinity();
    let mut best = Curvilinear {
        tangential: S::zero(),
        normal: S::zero(),
    };
    for i in 0..pts.len() - 1 {
        let a = pts[i];
        let seg = pts[i + 1] - a;
        let len2 = seg.dot(seg);
        let t = ((p - a).dot(seg) / len2).max(S::zero()).min(S::one());
        let q = a + seg * t;
        let off = p - q;
        let d2 = off.dot(off);
        if d2 < best_d2 {
            best_d2 = d2;
            let seg_len = cum[i + 1] - cum[i];
            let dist = d2.sqrt();
            let side = seg.cross(off);
            best = Curvilinear {
                tangential: cum[i] + t * seg_len,
                normal: if side < S::zero() { -dist } else { dist },
            };
        }
    }
    best
}

fn on_segment<S: Scalar>(a: Point<S>, b: Point<S>, p: Point<S>) -> bool {
    let ab = b - a;
    let ap = p - a;
    let scale = ab.norm().max(S::one());
    if ab.cross(ap).abs() > S::lit(1e-12) * scale * scale {
        return false;
    }
    let t = ap.dot(ab);
    t >= S::zero() && t <= ab.dot(ab)
}

/// Even-odd ray casting; points on the boundary count as inside.
pub fn point_in_polygon<S: Scalar>(ring: &[Point<S>], p: Point<S>) -> Result<bool> {
    let ring = strip_closing_vertex(ring);
    if ring.len() < 3 {
        return Err(Error::InvalidPolygon(ring.len()));
    }
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if on_segment(a, b, p) {
            return Ok(true);
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    Ok(inside)
}

/// Drops a trailing vertex equal to the first (explicitly closed rings).
pub fn strip_closing_vertex<S: Scalar>(ring: &[Point<S>]) -> &[Point<S>] {
    if ring.len() > 1 && ring.first() == ring.last() {
        &ring[..ring.len() - 1]
    } else {
        ring
    }
}

/// Sum of consecutive segment lengths.
pub fn trajectory_length<S: Scalar>(pts: &[Point<S>]) -> S {
    pts.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// Index of the point closest to `p` (L2); ties resolve to the lowest index.
pub fn nearest_index<S: Scalar>(points: &[Point<S>], p: Point<S>) -> Option<usize> {
    let mut best: Option<(usize, S)> = None;
    for (i, q) in points.iter().enumerate() {
        let d = (*q - p).dot(*q - p);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Smallest absolute difference between two angles, in radians.
pub fn angle_between<S: Scalar>(a: Point<S>, b: Point<S>) -> S {
    a.cross(b).atan2(a.dot(b)).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    type P = Point<f64>;

    fn p(x: f64, y: f64) -> P {
        Point::new(x, y)
    }

    #[test]
    fn frame_on_axis_is_identity() {
        let pts: Vec<P> = (0..20).map(|i| p(i as f64, 0.0)).collect();
        let f = build_normalization_frame(&pts, 19).unwrap();
        assert_eq!(f.rotation_angle, 0.0);
        for q in &pts {
            assert_eq!(f.apply_point(*q), *q);
        }
    }

    #[test]
    fn frame_rotates_heading_onto_x() {
        let pts: Vec<P> = (0..=5).map(|i| p(0.0, i as f64)).collect();
        let f = build_normalization_frame(&pts, 5).unwrap();
        let last = f.apply_point(pts[5]);
        assert!((last.x - 5.0).abs() < 1e-12 && last.y.abs() < 1e-12);
        assert!(f.apply_point(pts[0]).norm() < 1e-12);
    }

    #[test]
    fn degenerate_heading_rejected() {
        let pts = vec![p(1.0, 1.0); 4];
        assert!(matches!(
            build_normalization_frame(&pts, 3),
            Err(Error::DegenerateHeading)
        ));
        let f = normalization_frame_or_identity(&pts, 3);
        assert_eq!(f.rotation_angle, 0.0);
        assert_eq!(f.apply_point(p(1.0, 1.0)), p(0.0, 0.0));
    }

    #[test]
    fn quarter_turn() {
        let f = Frame {
            rotation_angle: std::f64::consts::FRAC_PI_2,
            translation: P::zero(),
            direction: FrameDirection::Inverse,
        };
        let q = f.apply_point(p(1.0, 0.0));
        assert!((q.x).abs() < 1e-15 && (q.y - 1.0).abs() < 1e-15);
        assert_eq!(Frame::<f64>::identity().apply(&[p(2.0, 3.0)]), vec![p(2.0, 3.0)]);
    }

    #[test]
    fn projection_basics() {
        let line = Polyline::new(vec![p(0.0, 0.0), p(10.0, 0.0)]).unwrap();
        let c = project_to_curvilinear(&line, p(0.0, 0.0));
        assert_eq!((c.tangential, c.normal), (0.0, 0.0));
        let c = project_to_curvilinear(&line, p(3.0, 1.0));
        assert_eq!((c.tangential, c.normal), (3.0, 1.0));
        let c = project_to_curvilinear(&line, p(3.0, -2.0));
        assert_eq!((c.tangential, c.normal), (3.0, -2.0));
    }

    #[test]
    fn square_membership() {
        let sq = [p(0.0, 0.0), p(1.0, 0.0), p(1.0, 1.0), p(0.0, 1.0)];
        assert!(point_in_polygon(&sq, p(0.5, 0.5)).unwrap());
        assert!(!point_in_polygon(&sq, p(5.0, 5.0)).unwrap());
        assert!(point_in_polygon(&sq, p(1.0, 0.5)).unwrap());
        assert!(point_in_polygon(&sq, p(0.0, 0.0)).unwrap());
        assert!(matches!(
            point_in_polygon(&sq[..2], p(0.0, 0.0)),
            Err(Error::InvalidPolygon(2))
        ));
    }

    #[test]
    fn lengths() {
        assert_eq!(trajectory_length(&[p(0.0, 0.0), p(3.0, 0.0), p(3.0, 4.0)]), 7.0);
        assert_eq!(trajectory_length(&[p(0.0, 0.0), p(1.0, 0.0), p(4.0, 0.0)]), 4.0);
        let line = Polyline::new(vec![p(0.0, 0.0), p(3.0, 0.0), p(3.0, 4.0)]).unwrap();
        assert_eq!(line.length(), 7.0);
        assert_eq!(line.cumulative_arclength(), &[0.0, 3.0, 7.0]);
    }

    #[test]
    fn polyline_rejects_duplicates() {
        assert!(Polyline::new(vec![p(0.0, 0.0), p(0.0, 0.0), p(1.0, 0.0)]).is_err());
        assert!(Polyline::new(vec![p(0.0, 0.0)]).is_err());
        let l = Polyline::from_points_dedup(&[p(0.0, 0.0), p(0.0, 0.0), p(1.0, 0.0)]).unwrap();
        assert_eq!(l.len(), 2);
    }

    #[test]
    fn interpolation_and_resampling() {
        let line = Polyline::new(vec![p(0.0, 0.0), p(4.0, 0.0), p(4.0, 4.0)]).unwrap();
        assert_eq!(line.interpolate(6.0), p(4.0, 2.0));
        let r = line.resample(1.0);
        assert_eq!(r.len(), 9);
        assert!((r.length() - 8.0).abs() < 1e-12);
    }

    fn winding_number(ring: &[P], q: P) -> i32 {
        // Sunday's winding number; boundary detection handled separately.
        let n = ring.len();
        let mut wn = 0;
        for i in 0..n {
            let a = ring[i];
            let b = ring[(i + 1) % n];
            let is_left = (b.x - a.x) * (q.y - a.y) - (q.x - a.x) * (b.y - a.y);
            if a.y <= q.y {
                if b.y > q.y && is_left > 0.0 {
                    wn += 1;
                }
            } else if b.y <= q.y && is_left < 0.0 {
                wn -= 1;
            }
        }
        wn
    }

    #[test]
    fn pip_matches_winding_number_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        // star-shaped simple polygon
        let ring: Vec<P> = (0..9)
            .map(|i| {
                let a = i as f64 / 9.0 * std::f64::consts::TAU;
                let r = if i % 2 == 0 { 5.0 } else { 2.0 };
                p(r * a.cos(), r * a.sin())
            })
            .collect();
        for _ in 0..1000 {
            let q = p(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0));
            let expect = winding_number(&ring, q) != 0;
            assert_eq!(point_in_polygon(&ring, q).unwrap(), expect, "{q:?}");
        }
    }

    fn arb_points(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<P>> {
        prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64), n)
            .prop_map(|v| v.into_iter().map(|(x, y)| p(x, y)).collect())
    }

    proptest! {
        #[test]
        fn frame_round_trip_and_rigidity(pts in arb_points(3..30), ang in -3.2..3.2f64, tx in -100.0..100.0f64, ty in -100.0..100.0f64) {
            let f = Frame { rotation_angle: ang, translation: p(tx, ty), direction: FrameDirection::Forward };
            let local = f.apply(&pts);
            let back = f.inverse().apply(&local);
            for (a, b) in pts.iter().zip(&back) {
                prop_assert!(a.distance(*b) < 1e-9);
            }
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    let d0 = pts[i].distance(pts[j]);
                    let d1 = local[i].distance(local[j]);
                    prop_assert!((d0 - d1).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn normalization_maps_heading_to_positive_x(pts in arb_points(20..21)) {
            if let Ok(f) = build_normalization_frame(&pts, 19) {
                let a = f.apply_point(pts[0]);
                let b = f.apply_point(pts[19]);
                prop_assert!(a.norm() < 1e-9);
                prop_assert!(b.x > 0.0 && b.y.abs() < 1e-9);
            }
        }

        #[test]
        fn projection_matches_dense_sampling(pts in arb_points(2..6), q in (-60.0..60.0f64, -60.0..60.0f64)) {
            let Ok(line) = Polyline::new(pts) else { return Ok(()); };
            let q = p(q.0, q.1);
            let c = project_to_curvilinear(&line, q);
            // brute force over 1 mm sampling
            let n = (line.length() / 1e-3).ceil() as usize;
            let mut best = (f64::INFINITY, 0.0);
            for i in 0..=n {
                let s = line.length() * i as f64 / n as f64;
                let d = line.interpolate(s).distance(q);
                if d < best.0 { best = (d, s); }
            }
            prop_assert!((c.normal.abs() - best.0).abs() < 2e-3);
            // the tangential coordinate is only unique when the closest point is
            let alt = line.interpolate(c.tangential).distance(q);
            prop_assert!((alt - best.0).abs() < 2e-3);
            prop_assert!(c.tangential >= 0.0 && c.tangential <= line.length());
        }

        #[test]
        fn projection_idempotent(pts in arb_points(2..8), q in (-60.0..60.0f64, -60.0..60.0f64)) {
            let Ok(line) = Polyline::new(pts) else { return Ok(()); };
            let c = project_to_curvilinear(&line, p(q.0, q.1));
            let foot = line.interpolate(c.tangential);
            let c2 = project_to_curvilinear(&line, foot);
            prop_assert!(c2.normal.abs() < 1e-9);
        }

        #[test]
        fn length_is_direct_sum(pts in arb_points(2..40)) {
            let direct: f64 = (1..pts.len()).map(|i| ((pts[i].x - pts[i-1].x).powi(2) + (pts[i].y - pts[i-1].y).powi(2)).sqrt()).sum();
            prop_assert!((trajectory_length(&pts) - direct).abs() < 1e-9);
        }
    }
}
