//! Procedural intersections and labelled trajectories.

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{validate_map, wrap_angle, Exit, IntersectionMap, Point2, Pose, VirtualLane};

pub const FPS: f64 = 25.0;

/// Closed interval `[lo, hi]`, serialised as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }

    fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

impl From<[f64; 2]> for Range {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Range> for [f64; 2] {
    fn from(r: Range) -> Self {
        [r.lo, r.hi]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub seed: u64,
    /// Inclusive range of exit counts.
    pub n_exits: [usize; 2],
    pub min_exit_separation_deg: f64,
    /// Distance from the intersection centre to each exit goal (m).
    pub arm_length: Range,
    /// Full road width at an exit (m); lanes run at ±width/4.
    pub road_width: f64,
    /// Probability that an entrance→exit pair gets a lane.
    pub connectivity: f64,
    pub speed: Range,
    pub accel: Range,
    pub lateral_noise: f64,
    pub heading_noise: f64,
    pub lane_change_prob: f64,
    pub fps: f64,
    pub duration: Range,
    pub straight_threshold_deg: f64,
    /// Target share of straight trajectories per map; `None` keeps the
    /// natural mix.
    pub straight_fraction: Option<f64>,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_exits: [2, 6],
            min_exit_separation_deg: 35.0,
            arm_length: Range::new(15.0, 30.0),
            road_width: 7.0,
            connectivity: 0.8,
            speed: Range::new(3.0, 15.0),
            accel: Range::new(-1.5, 1.5),
            lateral_noise: 0.15,
            heading_noise: 0.01,
            lane_change_prob: 0.1,
            fps: FPS,
            duration: Range::new(3.0, 6.0),
            straight_threshold_deg: 30.0,
            straight_fraction: Some(0.8),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |path: &str, message: &str| {
            Err(Error::Config {
                path: format!("gen.{path}"),
                message: message.into(),
            })
        };
        if self.fps != FPS {
            return err("fps", "must be 25");
        }
        if self.n_exits[0] < 2 || self.n_exits[0] > self.n_exits[1] {
            return err("n_exits", "need 2 <= lo <= hi");
        }
        for (name, r) in [
            ("arm_length", self.arm_length),
            ("speed", self.speed),
            ("accel", self.accel),
            ("duration", self.duration),
        ] {
            if !r.is_valid() {
                return err(name, "range must be finite with lo <= hi");
            }
        }
        if self.arm_length.lo <= 0.0 || self.speed.lo <= 0.0 || self.duration.lo <= 0.0 {
            return err("arm_length/speed/duration", "must be positive");
        }
        if !(self.road_width > 0.0) {
            return err("road_width", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.connectivity) {
            return err("connectivity", "must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lane_change_prob) {
            return err("lane_change_prob", "must be in [0, 1]");
        }
        if !(self.lateral_noise >= 0.0 && self.heading_noise >= 0.0) {
            return err("lateral_noise", "noise must be non-negative");
        }
        if !(self.min_exit_separation_deg >= 0.0 && self.min_exit_separation_deg < 180.0) {
            return err("min_exit_separation_deg", "must be in [0, 180)");
        }
        if !(self.straight_threshold_deg > 0.0 && self.straight_threshold_deg < 180.0) {
            return err("straight_threshold_deg", "must be in (0, 180)");
        }
        if let Some(f) = self.straight_fraction {
            if !(0.0..=1.0).contains(&f) {
                return err("straight_fraction", "must be in [0, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Straight,
    Curved,
}

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::Straight => "straight",
            Shape::Curved => "curved",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTrajectory {
    pub map_id: String,
    pub poses: Vec<Pose>,
    pub true_lane: String,
    pub true_exit: String,
    pub shape: Shape,
}

fn circular_min_gap(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    (0..n)
        .map(|i| {
            let next = if i + 1 < n { sorted[i + 1] } else { sorted[0] + TAU };
            next - sorted[i]
        })
        .fold(f64::INFINITY, f64::min)
}

fn bezier(p: [Point2; 4], t: f64) -> Point2 {
    let u = 1.0 - t;
    p[0] * (u * u * u) + p[1] * (3.0 * u * u * t) + p[2] * (3.0 * u * t * t) + p[3] * (t * t * t)
}

/// Cubic Bézier resampled at equal arclength with spacing ≤ `max_step`.
fn bezier_polyline(p: [Point2; 4], max_step: f64) -> Vec<Point2> {
    const DENSE: usize = 512;
    let dense: Vec<Point2> = (0..=DENSE).map(|k| bezier(p, k as f64 / DENSE as f64)).collect();
    let mut cum = vec![0.0];
    for w in dense.windows(2) {
        cum.push(cum.last().unwrap() + w[0].dist(w[1]));
    }
    let total = *cum.last().unwrap();
    let n = ((total / max_step).ceil() as usize).max(1);
    let mut out = Vec::with_capacity(n + 1);
    let mut j = 0;
    for k in 0..=n {
        let s = total * k as f64 / n as f64;
        while j + 1 < DENSE && cum[j + 1] < s {
            j += 1;
        }
        let seg = cum[j + 1] - cum[j];
        let w = if seg > 0.0 { ((s - cum[j]) / seg).clamp(0.0, 1.0) } else { 0.0 };
        out.push(dense[j].lerp(dense[j + 1], w));
    }
    *out.last_mut().unwrap() = p[3];
    out[0] = p[0];
    out
}

/// Random intersection: arms at random angles, one exit per arm, Bézier
/// lanes from entrances to the exits of other arms.
pub fn generate_intersection<R: Rng>(rng: &mut R, config: &GenConfig, id: &str) -> Result<IntersectionMap> {
    config.validate()?;
    let n = rng.random_range(config.n_exits[0]..=config.n_exits[1]);
    let sep = config.min_exit_separation_deg.to_radians();
    if n as f64 * sep > TAU {
        return Err(Error::Infeasible(format!(
            "{n} arms cannot be {}° apart",
            config.min_exit_separation_deg
        )));
    }
    // Gaps are `sep` plus a uniform share of the remaining slack, which
    // samples separated layouts without rejection.
    let slack = TAU - n as f64 * sep;
    let mut angles = None;
    for _ in 0..1000 {
        let mut cuts: Vec<f64> = (0..n - 1).map(|_| rng.random_range(0.0..=1.0)).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.push(1.0);
        let start = rng.random_range(0.0..TAU);
        let mut prev = 0.0;
        let mut a = Vec::with_capacity(n);
        let mut acc = start;
        for &c in &cuts {
            a.push(acc.rem_euclid(TAU));
            acc += sep + slack * (c - prev);
            prev = c;
        }
        a.sort_by(f64::total_cmp);
        if circular_min_gap(&a) >= sep * (1.0 - 1e-12) {
            angles = Some(a);
            break;
        }
    }
    let angles = angles.ok_or_else(|| {
        Error::Infeasible(format!(
            "could not place {n} arms {}° apart in 1000 attempts",
            config.min_exit_separation_deg
        ))
    })?;

    let half = config.road_width / 2.0;
    let quarter = config.road_width / 4.0;
    let mut exits = Vec::with_capacity(n);
    let mut entries = Vec::with_capacity(n);
    let mut goals = Vec::with_capacity(n);
    for (k, &th) in angles.iter().enumerate() {
        let dir = Point2::from_angle(th);
        let o = dir * config.arm_length.sample(rng);
        let side = dir.perp();
        exits.push(Exit::new(format!("e{k}"), o - side * half, o + side * half, dir));
        // Right-hand traffic: inbound on the left of the outward direction.
        entries.push(o + side * quarter);
        goals.push(o - side * quarter);
    }

    let mut connected = vec![vec![false; n]; n];
    for (a, row) in connected.iter_mut().enumerate() {
        for (b, c) in row.iter_mut().enumerate() {
            *c = a != b && rng.random::<f64>() < config.connectivity;
        }
    }
    for b in 0..n {
        if !(0..n).any(|a| connected[a][b]) {
            let a = (b + 1 + rng.random_range(0..n - 1)) % n;
            connected[a][b] = true;
        }
    }
    for a in 0..n {
        if !connected[a].iter().any(|&c| c) {
            let b = (a + 1 + rng.random_range(0..n - 1)) % n;
            connected[a][b] = true;
        }
    }

    let mut lanes = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if !connected[a][b] {
                continue;
            }
            let (p0, p3) = (entries[a], goals[b]);
            let c = 0.4 * p0.dist(p3);
            let inward = exits[a].traffic_direction * -1.0;
            let pts = [p0, p0 + inward * c, p3 - exits[b].traffic_direction * c, p3];
            lanes.push(VirtualLane::new(
                format!("l{a}_{b}"),
                format!("e{b}"),
                format!("n{a}"),
                bezier_polyline(pts, 1.0),
            ));
        }
    }
    let map = IntersectionMap::from_parts(id, exits, lanes);
    let violations = validate_map(&map);
    if !violations.is_empty() {
        return Err(Error::InvalidMap {
            map: id.into(),
            violations: violations.iter().map(|v| v.to_string()).collect(),
        });
    }
    Ok(map)
}

fn truncated_normal<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let n = rand_distr::Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let z: f64 = rng.sample(n);
        if z.abs() <= 3.0 {
            return z * sigma;
        }
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Minimum number of frames in a generated trajectory (one second).
pub const MIN_FRAMES: usize = 25;

/// Samples one labelled trajectory on `map`.
pub fn generate_trajectory<R: Rng>(map: &IntersectionMap, rng: &mut R, config: &GenConfig) -> Result<LabeledTrajectory> {
    if map.lanes.is_empty() {
        return Err(Error::Empty("map lanes"));
    }
    let li = rng.random_range(0..map.lanes.len());
    let lane = &map.lanes[li];
    let len = lane.length();
    let dt = 1.0 / config.fps;

    // Longitudinal profile; resampled if the lane end truncates it too early.
    let mut s_path = Vec::new();
    for _ in 0..20 {
        let v0 = config.speed.sample(rng);
        let a = config.accel.sample(rng);
        let dur = config.duration.sample(rng);
        let s0 = rng.random_range(0.0..=0.2 * len);
        let frames = (dur * config.fps).floor() as usize + 1;
        let speed = |t: f64| (v0 + a * t).max(0.5);
        s_path.clear();
        let mut s = s0;
        for k in 0..frames {
            if k > 0 {
                let (t0, t1) = ((k - 1) as f64 * dt, k as f64 * dt);
                s += 0.5 * (speed(t0) + speed(t1)) * dt;
            }
            if s > len {
                break;
            }
            s_path.push(s);
        }
        if s_path.len() >= MIN_FRAMES {
            break;
        }
    }
    if s_path.len() < MIN_FRAMES {
        return Err(Error::Infeasible(format!(
            "lane {} ({len:.1} m) too short for {MIN_FRAMES} frames",
            lane.id
        )));
    }

    // Optional lane change: start on a sibling lane and blend into the
    // reference lane before the two separate by more than 4 m.
    let blend = if rng.random::<f64>() < config.lane_change_prob {
        let siblings: Vec<&VirtualLane> = map
            .lanes
            .iter()
            .filter(|l| l.entrance_id == lane.entrance_id && l.id != lane.id)
            .collect();
        if siblings.is_empty() {
            None
        } else {
            let sib = siblings[rng.random_range(0..siblings.len())];
            let s_first = s_path[0];
            let mut s_max = s_first;
            let mut s = s_first;
            while s <= s_path[s_path.len() - 1] {
                if sib.point_at(s).0.dist(lane.point_at(s).0) > 4.0 {
                    break;
                }
                s_max = s;
                s += 0.25;
            }
            if s_max - s_first > 2.0 {
                let start = rng.random_range(s_first..s_first + 0.5 * (s_max - s_first));
                let end = rng.random_range(start + 0.5 * (s_max - start)..=s_max);
                Some((sib, start, end))
            } else {
                None
            }
        }
    } else {
        None
    };

    let clean: Vec<Point2> = s_path
        .iter()
        .map(|&s| {
            let p = lane.point_at(s).0;
            match blend {
                Some((sib, s_a, s_b)) => {
                    let w = smoothstep((s - s_a) / (s_b - s_a));
                    sib.point_at(s).0.lerp(p, w)
                }
                None => p,
            }
        })
        .collect();
    let n = clean.len();
    let poses = (0..n)
        .map(|k| {
            let (i0, i1) = if k + 1 < n { (k, k + 1) } else { (k - 1, k) };
            let d = clean[i1] - clean[i0];
            let heading = if d.norm() > 0.0 { d.angle() } else { lane.point_at(s_path[k]).1.angle() };
            let p = clean[k] + Point2::from_angle(heading).perp() * truncated_normal(rng, config.lateral_noise);
            Pose::new(
                p.x,
                p.y,
                wrap_angle(heading + truncated_normal(rng, config.heading_noise)),
                k as f64 / config.fps,
            )
        })
        .collect::<Vec<_>>();
    let shape = classify_shape(&poses, config.straight_threshold_deg)?;
    Ok(LabeledTrajectory {
        map_id: map.id.clone(),
        poses,
        true_lane: lane.id.clone(),
        true_exit: lane.exit_id.clone(),
        shape,
    })
}

/// Angle (radians, absolute) between the displacement over the first and
/// last half second.
pub fn end_angle(poses: &[Pose]) -> Result<f64> {
    if poses.len() < 4 {
        return Err(Error::Empty("trajectory shorter than 4 poses"));
    }
    let n = poses.len();
    let dt = (poses[1].t - poses[0].t).abs();
    let w = if dt > 0.0 { (0.5 / dt).round() as usize } else { 1 };
    let w = w.clamp(1, n - 1);
    let first = poses[w].position - poses[0].position;
    let last = poses[n - 1].position - poses[n - 1 - w].position;
    if first.norm() == 0.0 || last.norm() == 0.0 {
        return Ok(0.0);
    }
    Ok(wrap_angle(last.angle() - first.angle()).abs())
}

pub fn classify_shape(poses: &[Pose], threshold_deg: f64) -> Result<Shape> {
    Ok(if end_angle(poses)? < threshold_deg.to_radians() {
        Shape::Straight
    } else {
        Shape::Curved
    })
}

/// Map and trajectory counts per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetCounts {
    pub train_maps: usize,
    pub val_maps: usize,
    pub test_maps: usize,
    pub trajectories_per_map: usize,
}

impl Default for DatasetCounts {
    fn default() -> Self {
        Self {
            train_maps: 12,
            val_maps: 4,
            test_maps: 4,
            trajectories_per_map: 200,
        }
    }
}

impl DatasetCounts {
    pub fn total_maps(&self) -> usize {
        self.train_maps + self.val_maps + self.test_maps
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    pub maps: Vec<IntersectionMap>,
    pub trajectories: Vec<LabeledTrajectory>,
}

impl Split {
    pub fn map(&self, id: &str) -> Option<&IntersectionMap> {
        self.maps.iter().find(|m| m.id == id)
    }

    pub fn shape_counts(&self) -> (usize, usize) {
        let s = self.trajectories.iter().filter(|t| t.shape == Shape::Straight).count();
        (s, self.trajectories.len() - s)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

impl Dataset {
    pub fn splits(&self) -> [(&'static str, &Split); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }
}

/// Per-map RNG, independent of generation order.
pub fn map_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

pub fn map_id(seed: u64, index: usize) -> String {
    format!("m{seed:x}_{index:03}")
}

/// One map and its trajectories. With a target straight share the two
/// shape buckets are filled by rejection; a bucket the map cannot fill
/// (e.g. no curved lane) is topped up with the other shape.
pub fn generate_map_with_trajectories(config: &GenConfig, index: usize, count: usize) -> Result<(IntersectionMap, Vec<LabeledTrajectory>)> {
    let mut rng = map_rng(config.seed, index);
    let map = generate_intersection(&mut rng, config, &map_id(config.seed, index))?;
    let mut out = Vec::with_capacity(count);
    match config.straight_fraction {
        None => {
            while out.len() < count {
                out.push(generate_trajectory(&map, &mut rng, config)?);
            }
        }
        Some(f) => {
            let want_s = (f * count as f64).round() as usize;
            let want_c = count - want_s;
            let (mut got_s, mut got_c) = (Vec::new(), Vec::new());
            let mut attempts = 0;
            let budget = 50 * count.max(1);
            while (got_s.len() < want_s || got_c.len() < want_c) && attempts < budget {
                attempts += 1;
                let t = generate_trajectory(&map, &mut rng, config)?;
                match t.shape {
                    Shape::Straight if got_s.len() < want_s => got_s.push(t),
                    Shape::Curved if got_c.len() < want_c => got_c.push(t),
                    _ => {}
                }
            }
            while got_s.len() + got_c.len() < count {
                got_s.push(generate_trajectory(&map, &mut rng, config)?);
            }
            // Interleave deterministically so shapes are mixed in file order.
            let mut si = got_s.into_iter();
            let mut ci = got_c.into_iter();
            let total = count;
            let mut cs = 0usize;
            for k in 0..total {
                let target_c = ((k + 1) * want_c).div_ceil(total.max(1));
                let t = if cs < target_c { ci.next().or_else(|| si.next()) } else { si.next().or_else(|| ci.next()) };
                if let Some(t) = t {
                    if t.shape == Shape::Curved {
                        cs += 1;
                    }
                    out.push(t);
                }
            }
        }
    }
    Ok((map, out))
}

/// Generates maps `0..M` and splits them by intersection.
pub fn generate_dataset(config: &GenConfig, counts: &DatasetCounts) -> Result<Dataset> {
    config.validate()?;
    if counts.total_maps() == 0 || counts.trajectories_per_map == 0 {
        return Err(Error::Config {
            path: "counts".into(),
            message: "counts must be positive".into(),
        });
    }
    let mut ds = Dataset::default();
    for i in 0..counts.total_maps() {
        let (map, trajs) = generate_map_with_trajectories(config, i, counts.trajectories_per_map)?;
        let split = if i < counts.train_maps {
            &mut ds.train
        } else if i < counts.train_maps + counts.val_maps {
            &mut ds.val
        } else {
            &mut ds.test
        };
        split.maps.push(map);
        split.trajectories.extend(trajs);
    }
    Ok(ds)
}

/// `count` maps disjoint from any dataset generated with a different seed.
pub fn generate_fresh_split(config: &GenConfig, n_maps: usize, per_map: usize) -> Result<Split> {
    let mut split = Split::default();
    for i in 0..n_maps {
        let (map, trajs) = generate_map_with_trajectories(config, i, per_map)?;
        split.maps.push(map);
        split.trajectories.extend(trajs);
    }
    Ok(split)
}
