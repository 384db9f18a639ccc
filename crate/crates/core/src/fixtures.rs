//! Small hand-built maps and trajectories used by tests, benches and examples.

use std::f64::consts::PI;

use rand::Rng;

use crate::map::{Exit, IntersectionMap, Point2, Pose, VirtualLane};

fn arm_exit(k: usize, angle: f64, radius: f64) -> Exit {
    let dir = Point2::from_angle(angle);
    let o = dir * radius;
    let n = dir.perp() * 3.5;
    Exit::new(format!("e{k}"), o - n, o + n, dir)
}

/// Entry point of arm `a` (right-hand traffic, inbound side).
fn arm_entry(e: &Exit) -> Point2 {
    e.origin + e.traffic_direction.perp() * 1.75
}

/// Outbound lane end at exit `e`.
fn arm_goal(e: &Exit) -> Point2 {
    e.origin - e.traffic_direction.perp() * 1.75
}

fn corner_lane(id: String, from: &Exit, to: &Exit, entrance: String) -> VirtualLane {
    VirtualLane::new(id, to.id.clone(), entrance, vec![arm_entry(from), Point2::default(), arm_goal(to)])
}

/// Regular four-way intersection with all 12 non-U-turn lanes.
pub fn four_way_map() -> IntersectionMap {
    let exits: Vec<_> = (0..4).map(|k| arm_exit(k, k as f64 * PI / 2.0, 20.0)).collect();
    let mut lanes = Vec::new();
    for a in 0..4 {
        for b in 0..4 {
            if a != b {
                lanes.push(corner_lane(format!("l{a}{b}"), &exits[a], &exits[b], format!("n{a}")));
            }
        }
    }
    IntersectionMap::from_parts("four_way", exits, lanes)
}

/// One exit, one lane. Fails validation (too few exits) but is a legal
/// model input.
pub fn single_lane_map() -> IntersectionMap {
    let e = arm_exit(0, 0.0, 20.0);
    let lane = VirtualLane::new("l0", "e0", "n0", vec![Point2::new(-20.0, -1.75), arm_goal(&e)]);
    IntersectionMap::from_parts("single", vec![e], vec![lane])
}

/// Random small map with the given exit and lane counts
/// (`n_lanes >= n_exits`, every exit gets at least one lane).
pub fn toy_map<R: Rng>(rng: &mut R, n_exits: usize, n_lanes: usize) -> IntersectionMap {
    assert!(n_exits >= 2 && n_lanes >= n_exits);
    let base = rng.random_range(0.0..2.0 * PI);
    let exits: Vec<_> = (0..n_exits)
        .map(|k| {
            let jitter = rng.random_range(-0.2..0.2);
            let r = rng.random_range(12.0..25.0);
            arm_exit(k, base + 2.0 * PI * k as f64 / n_exits as f64 + jitter, r)
        })
        .collect();
    let mut lanes = Vec::new();
    for l in 0..n_lanes {
        let to = if l < n_exits { l } else { rng.random_range(0..n_exits) };
        let from = (to + 1 + rng.random_range(0..n_exits - 1)) % n_exits;
        lanes.push(corner_lane(format!("l{l}"), &exits[from], &exits[to], format!("n{from}")));
    }
    IntersectionMap::from_parts(format!("toy{n_exits}x{n_lanes}"), exits, lanes)
}

/// Straight-line drive along a lane's centerline at constant speed.
pub fn drive_along(lane: &VirtualLane, s0: f64, speed: f64, frames: usize, fps: f64) -> Vec<Pose> {
    (0..frames)
        .map(|k| {
            let t = k as f64 / fps;
            let (p, tan) = lane.point_at(s0 + speed * t);
            Pose::new(p.x, p.y, tan.angle(), t)
        })
        .collect()
}

/// Random poses scattered around the map centre.
pub fn random_poses<R: Rng>(rng: &mut R, frames: usize, spread: f64) -> Vec<Pose> {
    let mut p = Point2::new(rng.random_range(-spread..spread), rng.random_range(-spread..spread));
    let mut h = rng.random_range(-PI..PI);
    (0..frames)
        .map(|k| {
            p = p + Point2::from_angle(h) * rng.random_range(0.0..0.6);
            h += rng.random_range(-0.1..0.1);
            Pose::new(p.x, p.y, h, k as f64 / 25.0)
        })
        .collect()
}
