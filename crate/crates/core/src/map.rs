//! Intersection geometry: exits, virtual lanes, and the two map-centric
//! coordinate frames (lane curvilinear frame and exit goal frame).
//!
//! Maps are plain data. [`IntersectionMap::from_parts`] accepts anything so
//! that [`validate_map`] can report what is wrong with it; loaders call
//! [`IntersectionMap::validated`], which refuses maps with violations.

use std::collections::HashSet;
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum spacing between consecutive centerline points.
pub const MIN_POINT_SPACING: f64 = 1e-6;
/// Maximum distance from a lane's last point to its exit goal segment.
pub const MAX_LANE_END_OFFSET: f64 = 2.0;
const UNIT_NORM_TOL: f64 = 1e-12;
const ORIGIN_TOL: f64 = 1e-9;

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w += TAU;
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3-d cross product; positive when `o` is to the
    /// left of `self`.
    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point2) -> f64 {
        (self - o).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn from_angle(theta: f64) -> Self {
        Self::new(theta.cos(), theta.sin())
    }

    /// Rotates by +90°.
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn lerp(self, o: Point2, w: f64) -> Self {
        self + (o - self) * w
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }
}

/// Target vehicle state at one timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Point2,
    /// Radians, normalised to `(-π, π]`.
    pub heading: f64,
    /// Seconds.
    pub t: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64, t: f64) -> Self {
        Self {
            position: Point2::new(x, y),
            heading: wrap_angle(heading),
            t,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.heading.is_finite() && self.t.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exit {
    pub id: String,
    pub goal_segment: (Point2, Point2),
    /// Unit vector pointing out of the intersection.
    pub traffic_direction: Point2,
    /// Midpoint of `goal_segment`; origin of the goal frame.
    pub origin: Point2,
}

impl Exit {
    pub fn new(id: impl Into<String>, a: Point2, b: Point2, traffic_direction: Point2) -> Self {
        Self {
            id: id.into(),
            goal_segment: (a, b),
            traffic_direction,
            origin: a.lerp(b, 0.5),
        }
    }

    /// Distance from `p` to the goal segment.
    pub fn segment_distance(&self, p: Point2) -> f64 {
        let (a, b) = self.goal_segment;
        let ab = b - a;
        let len2 = ab.dot(ab);
        if len2 == 0.0 {
            return p.dist(a);
        }
        let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
        p.dist(a + ab * t)
    }
}

/// A synthetic centerline from one entrance to one exit.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualLane {
    pub id: String,
    pub exit_id: String,
    pub entrance_id: String,
    centerline: Vec<Point2>,
    cumulative: Vec<f64>,
}

impl VirtualLane {
    pub fn new(
        id: impl Into<String>,
        exit_id: impl Into<String>,
        entrance_id: impl Into<String>,
        centerline: Vec<Point2>,
    ) -> Self {
        let mut cumulative = Vec::with_capacity(centerline.len());
        let mut acc = 0.0;
        for (i, p) in centerline.iter().enumerate() {
            if i > 0 {
                acc += p.dist(centerline[i - 1]);
            }
            cumulative.push(acc);
        }
        Self {
            id: id.into(),
            exit_id: exit_id.into(),
            entrance_id: entrance_id.into(),
            centerline,
            cumulative,
        }
    }

    pub fn centerline(&self) -> &[Point2] {
        &self.centerline
    }

    /// Cumulative arclength at each centerline point.
    pub fn arclengths(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn length(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// Point and unit tangent at arclength `s`, clamped to `[0, length]`.
    pub fn point_at(&self, s: f64) -> (Point2, Point2) {
        let pts = &self.centerline;
        let cum = &self.cumulative;
        if pts.len() < 2 {
            return (pts.first().copied().unwrap_or_default(), Point2::new(1.0, 0.0));
        }
        let s = s.clamp(0.0, self.length());
        let mut i = match cum.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(pts.len() - 2),
            Err(i) => i.saturating_sub(1).min(pts.len() - 2),
        };
        // skip zero-length segments
        while i + 2 < pts.len() && cum[i + 1] - cum[i] <= 0.0 {
            i += 1;
        }
        let seg = cum[i + 1] - cum[i];
        let dir = pts[i + 1] - pts[i];
        let tangent = if seg > 0.0 { dir * (1.0 / seg) } else { Point2::new(1.0, 0.0) };
        let w = if seg > 0.0 { (s - cum[i]) / seg } else { 0.0 };
        (pts[i].lerp(pts[i + 1], w), tangent)
    }
}

/// Lane-relative coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvilinearCoord {
    pub s: f64,
    /// Signed offset, positive to the left of the direction of travel.
    pub d: f64,
    pub heading_rel: f64,
}

/// Coordinates in an exit's goal frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalCoord {
    pub x: f64,
    pub y: f64,
    pub heading_rel: f64,
    pub dist: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionMap {
    pub id: String,
    pub exits: Vec<Exit>,
    pub lanes: Vec<VirtualLane>,
    lane_exit: Vec<Option<usize>>,
}

impl IntersectionMap {
    /// Builds a map without checking invariants.
    pub fn from_parts(id: impl Into<String>, exits: Vec<Exit>, lanes: Vec<VirtualLane>) -> Self {
        let lane_exit = lanes
            .iter()
            .map(|l| exits.iter().position(|e| e.id == l.exit_id))
            .collect();
        Self {
            id: id.into(),
            exits,
            lanes,
            lane_exit,
        }
    }

    /// Builds a map and rejects it if [`validate_map`] reports anything.
    pub fn validated(id: impl Into<String>, exits: Vec<Exit>, lanes: Vec<VirtualLane>) -> Result<Self> {
        let map = Self::from_parts(id, exits, lanes);
        let report = validate_map(&map);
        if report.is_empty() {
            Ok(map)
        } else {
            Err(Error::InvalidMap {
                map: map.id.clone(),
                violations: report.iter().map(|v| v.to_string()).collect(),
            })
        }
    }

    /// Exit index of every lane. Only meaningful on a valid map.
    pub fn lane_exit_indices(&self) -> Result<Vec<usize>> {
        self.lane_exit
            .iter()
            .zip(&self.lanes)
            .map(|(e, l)| {
                e.ok_or_else(|| Error::UnknownId {
                    kind: "exit",
                    id: l.exit_id.clone(),
                })
            })
            .collect()
    }

    pub fn lane_index(&self, id: &str) -> Option<usize> {
        self.lanes.iter().position(|l| l.id == id)
    }

    pub fn exit_index(&self, id: &str) -> Option<usize> {
        self.exits.iter().position(|e| e.id == id)
    }

    pub fn exit_of_lane(&self, lane: usize) -> Option<usize> {
        self.lane_exit.get(lane).copied().flatten()
    }

    /// Applies a rigid motion to every geometric element.
    pub fn transformed(&self, tf: &Rigid2) -> Self {
        let exits = self
            .exits
            .iter()
            .map(|e| Exit {
                id: e.id.clone(),
                goal_segment: (tf.apply(e.goal_segment.0), tf.apply(e.goal_segment.1)),
                traffic_direction: tf.rotate(e.traffic_direction),
                origin: tf.apply(e.origin),
            })
            .collect();
        let lanes = self
            .lanes
            .iter()
            .map(|l| {
                VirtualLane::new(
                    l.id.clone(),
                    l.exit_id.clone(),
                    l.entrance_id.clone(),
                    l.centerline.iter().map(|&p| tf.apply(p)).collect(),
                )
            })
            .collect();
        Self::from_parts(self.id.clone(), exits, lanes)
    }
}

/// Rotation about the origin followed by a translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rigid2 {
    pub angle: f64,
    pub translation: Point2,
}

impl Rigid2 {
    pub fn new(angle: f64, translation: Point2) -> Self {
        Self { angle, translation }
    }

    pub fn rotate(&self, p: Point2) -> Point2 {
        let (s, c) = self.angle.sin_cos();
        Point2::new(c * p.x - s * p.y, s * p.x + c * p.y)
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        self.rotate(p) + self.translation
    }

    pub fn apply_pose(&self, pose: &Pose) -> Pose {
        Pose {
            position: self.apply(pose.position),
            heading: wrap_angle(pose.heading + self.angle),
            t: pose.t,
        }
    }
}

/// Projects a pose onto a lane centerline.
///
/// The closest point is found segment by segment (clamped to segment
/// endpoints); distances within [`TIE_TOLERANCE`] count as ties and resolve
/// to the smallest arclength. Poses past the
/// lane end clamp to the terminal point.
pub const TIE_TOLERANCE: f64 = 1e-9;

pub fn project_to_lane(pose: &Pose, lane: &VirtualLane) -> Result<CurvilinearCoord> {
    let pts = lane.centerline();
    let cum = lane.arclengths();
    if pts.len() < 2 || lane.length() <= 0.0 {
        return Err(Error::InvalidLane {
            lane: lane.id.clone(),
            reason: "degenerate centerline".into(),
        });
    }
    let q = pose.position;
    let mut best_dist = f64::INFINITY;
    let mut best = (0.0, Point2::default(), Point2::new(1.0, 0.0));
    for i in 0..pts.len() - 1 {
        let seg = cum[i + 1] - cum[i];
        if seg <= 0.0 {
            continue;
        }
        let u = (pts[i + 1] - pts[i]) * (1.0 / seg);
        let t = (q - pts[i]).dot(u).clamp(0.0, seg);
        let c = pts[i] + u * t;
        let r = q - c;
        let dist = r.norm();
        if dist < best_dist - TIE_TOLERANCE {
            best_dist = dist;
            best = (cum[i] + t, c, u);
        }
    }
    let (s, c, u) = best;
    let r = q - c;
    let dist = r.norm();
    // On the extension of the segment the side is undefined; call it left.
    let d = if u.cross(r) < -TIE_TOLERANCE { -dist } else { dist };
    Ok(CurvilinearCoord {
        s,
        d,
        heading_rel: wrap_angle(pose.heading - u.angle()),
    })
}

/// Expresses a pose in the exit's goal frame (first axis along the traffic
/// direction, second axis its left normal, origin at the goal midpoint).
pub fn to_goal_frame(pose: &Pose, exit: &Exit) -> GoalCoord {
    let dir = exit.traffic_direction;
    let rel = pose.position - exit.origin;
    let x = rel.dot(dir);
    let y = dir.cross(rel);
    GoalCoord {
        x,
        y,
        heading_rel: wrap_angle(pose.heading - dir.angle()),
        dist: x.hypot(y),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    TooFewExits,
    DuplicateId,
    ReferentialIntegrity,
    NonUnitDirection,
    DegenerateSegment,
    OriginMismatch,
    ExitWithoutLane,
    TooFewPoints,
    DuplicatePoint,
    LaneEndOffGoal,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub element: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} [{}]: {}", self.kind, self.element, self.message)
    }
}

/// Lists every invariant the map violates; empty iff the map is valid.
pub fn validate_map(map: &IntersectionMap) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |kind, element: &str, message: String| {
        out.push(Violation {
            kind,
            element: element.to_string(),
            message,
        })
    };

    if map.exits.len() < 2 {
        push(
            ViolationKind::TooFewExits,
            &map.id,
            format!("{} exits, need at least 2", map.exits.len()),
        );
    }

    let mut seen = HashSet::new();
    for e in &map.exits {
        if !seen.insert(e.id.as_str()) {
            push(ViolationKind::DuplicateId, &e.id, "duplicate exit id".into());
        }
    }
    let mut seen = HashSet::new();
    for l in &map.lanes {
        if !seen.insert(l.id.as_str()) {
            push(ViolationKind::DuplicateId, &l.id, "duplicate lane id".into());
        }
    }

    for e in &map.exits {
        let (a, b) = e.goal_segment;
        if !(a.is_finite() && b.is_finite() && e.traffic_direction.is_finite() && e.origin.is_finite()) {
            push(ViolationKind::NonFinite, &e.id, "non-finite exit geometry".into());
            continue;
        }
        let n = e.traffic_direction.norm();
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            push(
                ViolationKind::NonUnitDirection,
                &e.id,
                format!("traffic direction norm {n}"),
            );
        }
        if a.dist(b) <= 0.0 {
            push(ViolationKind::DegenerateSegment, &e.id, "goal segment has zero length".into());
        }
        let mid = a.lerp(b, 0.5);
        if mid.dist(e.origin) > ORIGIN_TOL {
            push(
                ViolationKind::OriginMismatch,
                &e.id,
                format!("origin is {} m from segment midpoint", mid.dist(e.origin)),
            );
        }
        if !map.lanes.iter().any(|l| l.exit_id == e.id) {
            push(ViolationKind::ExitWithoutLane, &e.id, "exit has no virtual lane".into());
        }
    }

    for (i, l) in map.lanes.iter().enumerate() {
        let pts = l.centerline();
        if pts.iter().any(|p| !p.is_finite()) {
            push(ViolationKind::NonFinite, &l.id, "non-finite centerline point".into());
            continue;
        }
        if pts.len() < 2 {
            push(
                ViolationKind::TooFewPoints,
                &l.id,
                format!("{} centerline points, need at least 2", pts.len()),
            );
        }
        if let Some(k) = pts.windows(2).position(|w| w[0].dist(w[1]) < MIN_POINT_SPACING) {
            push(
                ViolationKind::DuplicatePoint,
                &l.id,
                format!("points {k} and {} are closer than {MIN_POINT_SPACING} m", k + 1),
            );
        }
        match map.lane_exit[i] {
            None => push(
                ViolationKind::ReferentialIntegrity,
                &l.id,
                format!("references missing exit {}", l.exit_id),
            ),
            Some(e) => {
                if let Some(&last) = pts.last() {
                    let off = map.exits[e].segment_distance(last);
                    if off > MAX_LANE_END_OFFSET {
                        push(
                            ViolationKind::LaneEndOffGoal,
                            &l.id,
                            format!("lane ends {off:.3} m from its goal segment"),
                        );
                    }
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// JSON map file

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitRecord {
    pub id: String,
    pub segment: [Point2; 2],
    pub direction: Point2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneRecord {
    pub id: String,
    pub exit_id: String,
    pub entrance_id: String,
    pub centerline: Vec<Point2>,
}

/// On-disk representation of one intersection.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapFile {
    pub id: String,
    pub exits: Vec<ExitRecord>,
    pub lanes: Vec<LaneRecord>,
}

impl From<&IntersectionMap> for MapFile {
    fn from(m: &IntersectionMap) -> Self {
        MapFile {
            id: m.id.clone(),
            exits: m
                .exits
                .iter()
                .map(|e| ExitRecord {
                    id: e.id.clone(),
                    segment: [e.goal_segment.0, e.goal_segment.1],
                    direction: e.traffic_direction,
                })
                .collect(),
            lanes: m
                .lanes
                .iter()
                .map(|l| LaneRecord {
                    id: l.id.clone(),
                    exit_id: l.exit_id.clone(),
                    entrance_id: l.entrance_id.clone(),
                    centerline: l.centerline.clone(),
                })
                .collect(),
        }
    }
}

impl MapFile {
    /// Converts to a map without validation.
    pub fn into_map_unchecked(self) -> IntersectionMap {
        let exits = self
            .exits
            .into_iter()
            .map(|e| Exit::new(e.id, e.segment[0], e.segment[1], e.direction))
            .collect();
        let lanes = self
            .lanes
            .into_iter()
            .map(|l| VirtualLane::new(l.id, l.exit_id, l.entrance_id, l.centerline))
            .collect();
        IntersectionMap::from_parts(self.id, exits, lanes)
    }

    pub fn into_map(self) -> Result<IntersectionMap> {
        let m = self.into_map_unchecked();
        let report = validate_map(&m);
        if report.is_empty() {
            Ok(m)
        } else {
            Err(Error::InvalidMap {
                map: m.id.clone(),
                violations: report.iter().map(|v| v.to_string()).collect(),
            })
        }
    }
}

impl IntersectionMap {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&MapFile::from(self)).expect("map serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: MapFile = serde_json::from_str(s).map_err(|e| Error::Parse {
            path: "<map json>".into(),
            message: e.to_string(),
        })?;
        file.into_map()
    }
}
