//! Per-frame interaction features between the target and every map element.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::map::{project_to_lane, to_goal_frame, wrap_angle, Exit, IntersectionMap, Pose, VirtualLane};

pub const LANE_FEATURE_DIM: usize = 6;
pub const GOAL_FEATURE_DIM: usize = 8;

/// `[s, d, heading_rel, Δs, Δd, Δheading_rel]`
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LaneFeature(pub [f64; LANE_FEATURE_DIM]);

/// `[x, y, heading_rel, dist, Δx, Δy, Δheading_rel, Δdist]`
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GoalFeature(pub [f64; GOAL_FEATURE_DIM]);

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    pub t: usize,
    /// One per lane, in map order.
    pub lane_features: Vec<LaneFeature>,
    /// One per exit, in map order.
    pub goal_features: Vec<GoalFeature>,
}

pub fn lane_feature(curr: &Pose, prev: Option<&Pose>, lane: &VirtualLane) -> Result<LaneFeature> {
    let c = project_to_lane(curr, lane)?;
    let mut f = [c.s, c.d, c.heading_rel, 0.0, 0.0, 0.0];
    if let Some(prev) = prev {
        let p = project_to_lane(prev, lane)?;
        f[3] = c.s - p.s;
        f[4] = c.d - p.d;
        f[5] = wrap_angle(c.heading_rel - p.heading_rel);
    }
    Ok(LaneFeature(f))
}

pub fn goal_feature(curr: &Pose, prev: Option<&Pose>, exit: &Exit) -> GoalFeature {
    let c = to_goal_frame(curr, exit);
    let mut f = [c.x, c.y, c.heading_rel, c.dist, 0.0, 0.0, 0.0, 0.0];
    if let Some(prev) = prev {
        let p = to_goal_frame(prev, exit);
        f[4] = c.x - p.x;
        f[5] = c.y - p.y;
        f[6] = wrap_angle(c.heading_rel - p.heading_rel);
        f[7] = c.dist - p.dist;
    }
    GoalFeature(f)
}

/// Feature frame for `poses[t]`, with `poses[t-1]` as the previous pose.
pub fn extract_frame(poses: &[Pose], t: usize, map: &IntersectionMap) -> Result<FeatureFrame> {
    let curr = poses.get(t).ok_or(Error::IndexOutOfRange { index: t, len: poses.len() })?;
    let prev = t.checked_sub(1).map(|i| &poses[i]);
    let lane_features = map
        .lanes
        .iter()
        .map(|l| lane_feature(curr, prev, l))
        .collect::<Result<_>>()?;
    let goal_features = map.exits.iter().map(|e| goal_feature(curr, prev, e)).collect();
    Ok(FeatureFrame {
        t,
        lane_features,
        goal_features,
    })
}

pub fn extract_sequence(traj: &[Pose], map: &IntersectionMap) -> Result<Vec<FeatureFrame>> {
    if traj.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    (0..traj.len()).map(|t| extract_frame(traj, t, map)).collect()
}

#[derive(Serialize)]
struct FrameDump<'a> {
    t: usize,
    lanes: Vec<(&'a str, &'a [f64; LANE_FEATURE_DIM])>,
    goals: Vec<(&'a str, &'a [f64; GOAL_FEATURE_DIM])>,
}

/// Debug dump: one JSON object per frame, features keyed by element id.
pub fn frames_to_jsonl(frames: &[FeatureFrame], map: &IntersectionMap) -> String {
    let mut out = String::new();
    for f in frames {
        let dump = FrameDump {
            t: f.t,
            lanes: map.lanes.iter().zip(&f.lane_features).map(|(l, v)| (l.id.as_str(), &v.0)).collect(),
            goals: map.exits.iter().zip(&f.goal_features).map(|(e, v)| (e.id.as_str(), &v.0)).collect(),
        };
        out.push_str(&serde_json::to_string(&dump).expect("frame serialises"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::Point2;

    fn lane() -> VirtualLane {
        VirtualLane::new("l", "e", "n", vec![Point2::new(0.0, 0.0), Point2::new(50.0, 0.0)])
    }

    #[test]
    fn stationary_pose_has_zero_deltas() {
        let p = Pose::new(3.0, 1.0, 0.2, 0.0);
        let f = lane_feature(&p, Some(&p), &lane()).unwrap();
        assert_eq!(&f.0[3..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn tangential_motion() {
        let a = Pose::new(3.0, 0.0, 0.0, 0.0);
        let b = Pose::new(3.4, 0.0, 0.0, 0.04);
        let f = lane_feature(&b, Some(&a), &lane()).unwrap();
        assert!((f.0[3] - 0.4).abs() < 1e-12);
        assert_eq!(f.0[4], 0.0);
        assert_eq!(f.0[5], 0.0);
    }

    #[test]
    fn first_frame_goal_deltas_are_zero() {
        let e = Exit::new("e", Point2::new(0.0, -2.0), Point2::new(0.0, 2.0), Point2::new(1.0, 0.0));
        let g = goal_feature(&Pose::new(-4.0, 1.0, 0.3, 0.0), None, &e);
        assert_eq!(&g.0[4..], &[0.0; 4]);
    }

    #[test]
    fn axial_approach() {
        let e = Exit::new("e", Point2::new(0.0, -2.0), Point2::new(0.0, 2.0), Point2::new(1.0, 0.0));
        let a = Pose::new(-10.0, 0.0, 0.0, 0.0);
        let b = Pose::new(-9.0, 0.0, 0.0, 0.04);
        let g = goal_feature(&b, Some(&a), &e);
        assert_eq!(g.0[4], 1.0);
        assert_eq!(g.0[5], 0.0);
        assert_eq!(g.0[7], -1.0);
    }

    #[test]
    fn empty_trajectory_is_an_error() {
        let m = crate::fixtures::four_way_map();
        assert!(matches!(extract_sequence(&[], &m), Err(Error::Empty(_))));
    }

    #[test]
    fn single_pose_sequence() {
        let m = crate::fixtures::four_way_map();
        let frames = extract_sequence(&[Pose::new(1.0, -18.0, 1.5, 0.0)], &m).unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].lane_features.len(), m.lanes.len());
        assert_eq!(frames[0].goal_features.len(), m.exits.len());
        assert!(frames[0].lane_features.iter().all(|f| f.0[3..] == [0.0; 3]));
        assert!(frames[0].goal_features.iter().all(|f| f.0[4..] == [0.0; 4]));
    }

    #[test]
    fn jsonl_has_one_line_per_frame() {
        let m = crate::fixtures::four_way_map();
        let poses: Vec<_> = (0..5).map(|k| Pose::new(1.75, -20.0 + k as f64, 1.5, k as f64 * 0.04)).collect();
        let frames = extract_sequence(&poses, &m).unwrap();
        let s = frames_to_jsonl(&frames, &m);
        assert_eq!(s.lines().count(), 5);
        let v: serde_json::Value = serde_json::from_str(s.lines().next().unwrap()).unwrap();
        assert_eq!(v["lanes"].as_array().unwrap().len(), m.lanes.len());
    }
}
