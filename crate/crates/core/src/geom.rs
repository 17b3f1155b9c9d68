//! Planar geometry primitives shared by the metric teachers: poses, oriented
//! boxes, polygons, polylines, projections and collision tests.
//!
//! All types are immutable after construction and all operations are pure.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a % TAU;
    if r <= -PI {
        r += TAU;
    } else if r > PI {
        r -= TAU;
    }
    r
}

/// 2D vector helper used throughout the geometry code.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }

    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

/// Planar pose. Heading is stored wrapped into `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Pose {
            x,
            y,
            heading: wrap_angle(heading),
        }
    }

    pub fn identity() -> Self {
        Pose::new(0.0, 0.0, 0.0)
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.heading.is_finite()
    }
}

/// Rigid transform between two frames, applied as rotate-then-translate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            dx: 0.0,
            dy: 0.0,
            dtheta: 0.0,
        }
    }

    pub fn apply_point(&self, p: Vec2) -> Vec2 {
        p.rotate(self.dtheta) + Vec2::new(self.dx, self.dy)
    }

    pub fn apply_pose(&self, p: Pose) -> Pose {
        let q = self.apply_point(p.position());
        Pose::new(q.x, q.y, p.heading + self.dtheta)
    }

    /// Transform mapping coordinates in frame `from` to frame `to`, where both
    /// frame origins are given as poses in a common world frame.
    pub fn between(from: Pose, to: Pose) -> Self {
        let d = from.position() - to.position();
        let local = d.rotate(-to.heading);
        RigidTransform {
            dx: local.x,
            dy: local.y,
            dtheta: wrap_angle(from.heading - to.heading),
        }
    }
}

/// Axis-aligned-in-body rectangle with a world pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Pose,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedBox {
    pub fn new(center: Pose, half_length: f64, half_width: f64) -> Self {
        assert!(
            half_length > 0.0 && half_width > 0.0,
            "box extents must be positive"
        );
        OrientedBox {
            center,
            half_length,
            half_width,
        }
    }

    /// Longitudinal and lateral unit axes of the box.
    pub fn axes(&self) -> [Vec2; 2] {
        let (s, c) = self.center.heading.sin_cos();
        [Vec2::new(c, s), Vec2::new(-s, c)]
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let [u, v] = self.axes();
        let c = self.center.position();
        let l = u.scale(self.half_length);
        let w = v.scale(self.half_width);
        [c + l + w, c + l.scale(1.0) - w, (c - l) - w, (c - l) + w]
    }

    /// Front-center point of the box (used by the traffic-light check).
    pub fn front_bumper(&self) -> Vec2 {
        self.center.position() + self.axes()[0].scale(self.half_length)
    }

    pub fn contains_point(&self, p: Vec2) -> bool {
        let d = p - self.center.position();
        let [u, v] = self.axes();
        d.dot(u).abs() <= self.half_length && d.dot(v).abs() <= self.half_width
    }
}

/// Separating-axis overlap test on the 4 candidate axes of the two rectangles.
/// Touching boxes count as colliding.
pub fn obb_intersects(a: &OrientedBox, b: &OrientedBox) -> bool {
    let ca = a.corners();
    let cb = b.corners();
    let axes = [a.axes()[0], a.axes()[1], b.axes()[0], b.axes()[1]];
    for axis in axes {
        let (mut amin, mut amax) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &ca {
            let t = p.dot(axis);
            amin = amin.min(t);
            amax = amax.max(t);
        }
        let (mut bmin, mut bmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &cb {
            let t = p.dot(axis);
            bmin = bmin.min(t);
            bmax = bmax.max(t);
        }
        if amax < bmin || bmax < amin {
            return false;
        }
    }
    true
}

/// Simple counter-clockwise polygon.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Polygon {
    vertices: Vec<Vec2>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeomError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon must be counter-clockwise with positive area")]
    NotCounterClockwise,
    #[error("polygon is self-intersecting")]
    SelfIntersecting,
    #[error("polyline needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("polyline has duplicate consecutive points at index {0}")]
    DuplicatePoint(usize),
}

fn segments_properly_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = (b - a).cross(c - a);
    let d2 = (b - a).cross(d - a);
    let d3 = (d - c).cross(a - c);
    let d4 = (d - c).cross(b - c);
    (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0)
}

impl Polygon {
    pub fn new(vertices: Vec<Vec2>) -> Result<Self, GeomError> {
        if vertices.len() < 3 {
            return Err(GeomError::TooFewVertices(vertices.len()));
        }
        let n = vertices.len();
        let mut area2 = 0.0;
        for i in 0..n {
            area2 += vertices[i].cross(vertices[(i + 1) % n]);
        }
        if area2 <= 0.0 {
            return Err(GeomError::NotCounterClockwise);
        }
        // proper crossings between non-adjacent edges
        for i in 0..n {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            for j in (i + 1)..n {
                if j == i || (j + 1) % n == i || (i + 1) % n == j {
                    continue;
                }
                let (c, d) = (vertices[j], vertices[(j + 1) % n]);
                if segments_properly_intersect(a, b, c, d) {
                    return Err(GeomError::SelfIntersecting);
                }
            }
        }
        Ok(Polygon { vertices })
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    /// Rigid transforms preserve orientation and simplicity.
    pub fn transformed(&self, tf: &RigidTransform) -> Polygon {
        Polygon {
            vertices: self.vertices.iter().map(|v| tf.apply_point(*v)).collect(),
        }
    }

    pub fn centroid(&self) -> Vec2 {
        let n = self.vertices.len() as f64;
        let mut c = Vec2::new(0.0, 0.0);
        for v in &self.vertices {
            c = c + *v;
        }
        c.scale(1.0 / n)
    }
}

impl<'de> Deserialize<'de> for Polygon {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let vertices = Vec::<Vec2>::deserialize(d)?;
        Polygon::new(vertices).map_err(serde::de::Error::custom)
    }
}

const BOUNDARY_EPS: f64 = 1e-9;

fn point_on_segment(p: Vec2, a: Vec2, b: Vec2) -> bool {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((p - a).dot(ab) / len2).clamp(0.0, 1.0)
    };
    let closest = a + ab.scale(t);
    (p - closest).norm() <= BOUNDARY_EPS
}

/// Ray-casting point-in-polygon; boundary points count as inside.
pub fn point_in_polygon(p: Vec2, poly: &Polygon) -> bool {
    let vs = poly.vertices();
    let n = vs.len();
    for i in 0..n {
        if point_on_segment(p, vs[i], vs[(i + 1) % n]) {
            return true;
        }
    }
    let mut inside = false;
    for i in 0..n {
        let (a, b) = (vs[i], vs[(i + 1) % n]);
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

fn point_in_any(p: Vec2, polys: &[Polygon]) -> bool {
    polys.iter().any(|poly| point_in_polygon(p, poly))
}

/// Corner membership plus per-edge sampling against the union of `polys`.
pub fn box_in_polygons(b: &OrientedBox, polys: &[Polygon], samples_per_edge: usize) -> bool {
    let corners = b.corners();
    for c in &corners {
        if !point_in_any(*c, polys) {
            return false;
        }
    }
    for i in 0..4 {
        let (a, c) = (corners[i], corners[(i + 1) % 4]);
        for j in 1..=samples_per_edge {
            let t = j as f64 / (samples_per_edge + 1) as f64;
            let p = a + (c - a).scale(t);
            if !point_in_any(p, polys) {
                return false;
            }
        }
    }
    true
}

/// Directed polyline with cached cumulative arc lengths.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(into = "Vec<Vec2>")]
pub struct Polyline {
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
}

impl From<Polyline> for Vec<Vec2> {
    fn from(p: Polyline) -> Self {
        p.points
    }
}

impl<'de> Deserialize<'de> for Polyline {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let points = Vec::<Vec2>::deserialize(d)?;
        Polyline::new(points).map_err(serde::de::Error::custom)
    }
}

/// Result of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub arc_length: f64,
    pub lateral: f64,
    pub segment_index: usize,
    pub tangent: Vec2,
}

impl Polyline {
    pub fn new(points: Vec<Vec2>) -> Result<Self, GeomError> {
        if points.len() < 2 {
            return Err(GeomError::TooFewPoints(points.len()));
        }
        let mut cumulative = Vec::with_capacity(points.len());
        cumulative.push(0.0);
        for i in 1..points.len() {
            let d = (points[i] - points[i - 1]).norm();
            if d == 0.0 {
                return Err(GeomError::DuplicatePoint(i));
            }
            cumulative.push(cumulative[i - 1] + d);
        }
        Ok(Polyline { points, cumulative })
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn transformed(&self, tf: &RigidTransform) -> Polyline {
        Polyline::new(self.points.iter().map(|p| tf.apply_point(*p)).collect())
            .expect("rigid transform preserves polyline validity")
    }

    pub fn total_length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    /// Point at a given arc length, clamped to the ends.
    pub fn point_at(&self, arc: f64) -> Vec2 {
        let arc = arc.clamp(0.0, self.total_length());
        let idx = match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&arc).unwrap())
        {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.points.len() - 2),
        };
        let seg_len = self.cumulative[idx + 1] - self.cumulative[idx];
        let t = (arc - self.cumulative[idx]) / seg_len;
        self.points[idx] + (self.points[idx + 1] - self.points[idx]).scale(t)
    }

    /// Unit tangent of the segment hosting the given arc length.
    pub fn tangent_at(&self, arc: f64) -> Vec2 {
        let arc = arc.clamp(0.0, self.total_length());
        let idx = match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&arc).unwrap())
        {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.points.len() - 2),
        };
        let d = self.points[idx + 1] - self.points[idx];
        d.scale(1.0 / d.norm())
    }
}

/// Minimum-distance projection of `p` onto the polyline.
pub fn project_onto_polyline(p: Vec2, line: &Polyline) -> Projection {
    let pts = line.points();
    let mut best = Projection {
        arc_length: 0.0,
        lateral: f64::INFINITY,
        segment_index: 0,
        tangent: Vec2::new(1.0, 0.0),
    };
    for i in 0..pts.len() - 1 {
        let a = pts[i];
        let b = pts[i + 1];
        let ab = b - a;
        let len = ab.norm();
        let t = ((p - a).dot(ab) / (len * len)).clamp(0.0, 1.0);
        let closest = a + ab.scale(t);
        let dist = (p - closest).norm();
        if dist < best.lateral {
            best = Projection {
                arc_length: line.cumulative()[i] + t * len,
                lateral: dist,
                segment_index: i,
                tangent: ab.scale(1.0 / len),
            };
        }
    }
    best
}
