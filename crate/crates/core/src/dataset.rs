//! On-disk dataset layout: a manifest, one JSON file per map and one JSONL
//! trajectory file per map.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{validate_map, IntersectionMap, MapFile, Pose, ViolationKind};
use crate::sim::{Dataset, DatasetCounts, GenConfig, LabeledTrajectory, Shape, Split};

pub const MANIFEST: &str = "manifest.json";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitEntry {
    pub maps: Vec<String>,
    pub map_files: Vec<String>,
    pub trajectory_files: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSummary {
    pub maps: usize,
    pub trajectories: usize,
    pub straight: usize,
    pub curved: usize,
    pub straight_ratio: f64,
}

impl SplitSummary {
    pub fn of(split: &Split) -> Self {
        let (straight, curved) = split.shape_counts();
        let n = split.trajectories.len();
        Self {
            maps: split.maps.len(),
            trajectories: n,
            straight,
            curved,
            straight_ratio: if n == 0 { 0.0 } else { straight as f64 / n as f64 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub train: SplitSummary,
    pub val: SplitSummary,
    pub test: SplitSummary,
}

impl Summary {
    pub fn of(ds: &Dataset) -> Self {
        Self {
            train: SplitSummary::of(&ds.train),
            val: SplitSummary::of(&ds.val),
            test: SplitSummary::of(&ds.test),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub gen: GenConfig,
    pub counts: DatasetCounts,
    pub train: SplitEntry,
    pub val: SplitEntry,
    pub test: SplitEntry,
    pub summary: Summary,
}

/// First record of each trajectory block in a JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryHeader {
    pub map_id: String,
    pub traj_id: usize,
    pub true_lane: String,
    pub true_exit: String,
    pub shape: Shape,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        Self {
            t: p.t,
            x: p.position.x,
            y: p.position.y,
            heading: p.heading,
        }
    }
}

impl From<PoseRecord> for Pose {
    fn from(r: PoseRecord) -> Self {
        Pose::new(r.x, r.y, r.heading, r.t)
    }
}

/// A trajectory read from JSONL; labels are absent for bare pose streams.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub header: Option<TrajectoryHeader>,
    pub poses: Vec<Pose>,
}

impl TrajectoryRecord {
    pub fn into_labeled(self) -> Option<LabeledTrajectory> {
        let h = self.header?;
        Some(LabeledTrajectory {
            map_id: h.map_id,
            poses: self.poses,
            true_lane: h.true_lane,
            true_exit: h.true_exit,
            shape: h.shape,
        })
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: Option<usize>, message: impl ToString) -> Error {
    let path = match line {
        Some(l) => PathBuf::from(format!("{}:{l}", path.display())),
        None => path.to_path_buf(),
    };
    Error::Parse {
        path,
        message: message.to_string(),
    }
}

/// JSONL text for trajectories sharing one map.
pub fn trajectories_to_jsonl(trajs: &[&LabeledTrajectory]) -> String {
    let mut out = String::new();
    for (i, t) in trajs.iter().enumerate() {
        let header = TrajectoryHeader {
            map_id: t.map_id.clone(),
            traj_id: i,
            true_lane: t.true_lane.clone(),
            true_exit: t.true_exit.clone(),
            shape: t.shape,
            n: t.poses.len(),
        };
        out.push_str(&serde_json::to_string(&header).expect("header serialises"));
        out.push('\n');
        for p in &t.poses {
            out.push_str(&serde_json::to_string(&PoseRecord::from(p)).expect("pose serialises"));
            out.push('\n');
        }
    }
    out
}

/// Parses header-delimited trajectory blocks. A file without headers is a
/// single unlabelled trajectory.
pub fn parse_trajectories(text: &str, path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let mut out: Vec<TrajectoryRecord> = Vec::new();
    let mut expected: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| parse_err(path, Some(i + 1), e))?;
        if value.get("map_id").is_some() {
            if let (Some(n), Some(last)) = (expected, out.last()) {
                if last.poses.len() != n {
                    return Err(parse_err(path, Some(i + 1), format!("expected {n} poses, found {}", last.poses.len())));
                }
            }
            let h: TrajectoryHeader = serde_json::from_value(value).map_err(|e| parse_err(path, Some(i + 1), e))?;
            expected = Some(h.n);
            out.push(TrajectoryRecord {
                header: Some(h),
                poses: Vec::new(),
            });
        } else {
            let r: PoseRecord = serde_json::from_value(value).map_err(|e| parse_err(path, Some(i + 1), e))?;
            let pose = Pose::from(r);
            if !pose.is_finite() {
                return Err(parse_err(path, Some(i + 1), "non-finite pose"));
            }
            if out.is_empty() {
                out.push(TrajectoryRecord {
                    header: None,
                    poses: Vec::new(),
                });
            }
            out.last_mut().unwrap().poses.push(pose);
        }
    }
    if let (Some(n), Some(last)) = (expected, out.last()) {
        if last.poses.len() != n {
            return Err(parse_err(path, None, format!("expected {n} poses, found {}", last.poses.len())));
        }
    }
    Ok(out)
}

pub fn read_trajectories(path: impl AsRef<Path>) -> Result<Vec<TrajectoryRecord>> {
    let path = path.as_ref();
    parse_trajectories(&read_file(path)?, path)
}

pub fn read_map(path: impl AsRef<Path>) -> Result<IntersectionMap> {
    let path = path.as_ref();
    let text = read_file(path)?;
    let file: MapFile = serde_json::from_str(&text).map_err(|e| parse_err(path, None, e))?;
    file.into_map()
}

/// Reads a map for prediction. Every validation rule applies except the
/// two-exit minimum: a single-exit map is a legal model input.
pub fn read_map_for_inference(path: impl AsRef<Path>) -> Result<IntersectionMap> {
    let path = path.as_ref();
    let text = read_file(path)?;
    let file: MapFile = serde_json::from_str(&text).map_err(|e| parse_err(path, None, e))?;
    let map = file.into_map_unchecked();
    let violations: Vec<String> = validate_map(&map)
        .iter()
        .filter(|v| !(v.kind == ViolationKind::TooFewExits && !map.exits.is_empty()))
        .map(|v| v.to_string())
        .collect();
    if violations.is_empty() {
        Ok(map)
    } else {
        Err(Error::InvalidMap {
            map: map.id.clone(),
            violations,
        })
    }
}

pub fn write_map(path: impl AsRef<Path>, map: &IntersectionMap) -> Result<()> {
    let mut s = serde_json::to_string_pretty(&MapFile::from(map)).expect("map serialises");
    s.push('\n');
    write_file(path.as_ref(), s.as_bytes())
}

fn write_split(dir: &Path, split: &Split) -> Result<SplitEntry> {
    let mut entry = SplitEntry {
        maps: Vec::new(),
        map_files: Vec::new(),
        trajectory_files: Vec::new(),
    };
    for map in &split.maps {
        let map_file = format!("maps/{}.json", map.id);
        let traj_file = format!("trajectories/{}.jsonl", map.id);
        write_map(dir.join(&map_file), map)?;
        let trajs: Vec<&LabeledTrajectory> = split.trajectories.iter().filter(|t| t.map_id == map.id).collect();
        write_file(&dir.join(&traj_file), trajectories_to_jsonl(&trajs).as_bytes())?;
        entry.maps.push(map.id.clone());
        entry.map_files.push(map_file);
        entry.trajectory_files.push(traj_file);
    }
    Ok(entry)
}

/// Writes the dataset under `dir` and returns its manifest.
pub fn write_dataset(dir: impl AsRef<Path>, ds: &Dataset, gen: &GenConfig, counts: &DatasetCounts) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        version: DATASET_VERSION,
        seed: gen.seed,
        gen: gen.clone(),
        counts: *counts,
        train: write_split(dir, &ds.train)?,
        val: write_split(dir, &ds.val)?,
        test: write_split(dir, &ds.test)?,
        summary: Summary::of(ds),
    };
    let mut s = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    s.push('\n');
    write_file(&dir.join(MANIFEST), s.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST);
    let text = read_file(&path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let m: Manifest = serde_path_to_error::deserialize(de).map_err(|e| parse_err(&path, None, e))?;
    if m.version != DATASET_VERSION {
        return Err(Error::Incompatible(format!(
            "dataset version {} (expected {DATASET_VERSION})",
            m.version
        )));
    }
    Ok(m)
}

fn read_split(dir: &Path, entry: &SplitEntry) -> Result<Split> {
    if entry.map_files.len() != entry.trajectory_files.len() || entry.maps.len() != entry.map_files.len() {
        return Err(parse_err(&dir.join(MANIFEST), None, "split lists differ in length"));
    }
    let mut split = Split::default();
    for ((id, mf), tf) in entry.maps.iter().zip(&entry.map_files).zip(&entry.trajectory_files) {
        let map = read_map(dir.join(mf))?;
        if &map.id != id {
            return Err(parse_err(&dir.join(mf), None, format!("map id {} (manifest says {id})", map.id)));
        }
        let tpath = dir.join(tf);
        for rec in read_trajectories(&tpath)? {
            let t = rec
                .into_labeled()
                .ok_or_else(|| parse_err(&tpath, None, "trajectory without header"))?;
            if &t.map_id != id {
                return Err(parse_err(&tpath, None, format!("trajectory for map {}", t.map_id)));
            }
            split.trajectories.push(t);
        }
        split.maps.push(map);
    }
    Ok(split)
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<(Manifest, Dataset)> {
    let dir = dir.as_ref();
    let m = read_manifest(dir)?;
    let ds = Dataset {
        train: read_split(dir, &m.train)?,
        val: read_split(dir, &m.val)?,
        test: read_split(dir, &m.test)?,
    };
    Ok((m, ds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::generate_dataset;

    fn small() -> (GenConfig, DatasetCounts) {
        (
            GenConfig {
                seed: 3,
                ..GenConfig::default()
            },
            DatasetCounts {
                train_maps: 2,
                val_maps: 1,
                test_maps: 1,
                trajectories_per_map: 5,
            },
        )
    }

    #[test]
    fn inference_reader_accepts_a_single_exit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.json");
        write_map(&p, &crate::fixtures::single_lane_map()).unwrap();
        assert!(matches!(read_map(&p), Err(Error::InvalidMap { .. })));
        assert_eq!(read_map_for_inference(&p).unwrap().exits.len(), 1);

        let mut m = crate::fixtures::single_lane_map();
        m.lanes[0].exit_id = "nowhere".into();
        write_map(&p, &m).unwrap();
        assert!(matches!(read_map_for_inference(&p), Err(Error::InvalidMap { .. })));
    }

    #[test]
    fn round_trip() {
        let (g, c) = small();
        let ds = generate_dataset(&g, &c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = write_dataset(dir.path(), &ds, &g, &c).unwrap();
        assert_eq!(m.summary.train.trajectories, 10);
        let (m2, back) = read_dataset(dir.path()).unwrap();
        assert_eq!(m, m2);
        assert_eq!(back, ds);
    }

    #[test]
    fn byte_identical_rewrites() {
        let (g, c) = small();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_dataset(a.path(), &generate_dataset(&g, &c).unwrap(), &g, &c).unwrap();
        write_dataset(b.path(), &generate_dataset(&g, &c).unwrap(), &g, &c).unwrap();
        let m = read_manifest(a.path()).unwrap();
        for f in m.train.map_files.iter().chain(&m.test.trajectory_files).chain([&MANIFEST.to_string()]) {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        }
    }

    #[test]
    fn bare_pose_stream() {
        let text = "{\"t\":0,\"x\":1,\"y\":2,\"heading\":0}\n{\"t\":0.04,\"x\":1.1,\"y\":2,\"heading\":0}\n";
        let r = parse_trajectories(text, Path::new("x")).unwrap();
        assert_eq!(r.len(), 1);
        assert!(r[0].header.is_none());
        assert_eq!(r[0].poses.len(), 2);
    }

    #[test]
    fn malformed_inputs() {
        let p = Path::new("x.jsonl");
        assert!(matches!(parse_trajectories("{\"t\":0}", p), Err(Error::Parse { .. })));
        let short = "{\"map_id\":\"m\",\"traj_id\":0,\"true_lane\":\"l\",\"true_exit\":\"e\",\"shape\":\"straight\",\"n\":2}\n{\"t\":0,\"x\":1,\"y\":2,\"heading\":0}\n";
        assert!(parse_trajectories(short, p).is_err());
        assert!(matches!(read_dataset("/nonexistent/dir"), Err(Error::Io { .. })));
    }
}
