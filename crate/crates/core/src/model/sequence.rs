use crate::error::{Error, Result};
use crate::features::{FeatureFrame, GOAL_FEATURE_DIM, LANE_FEATURE_DIM};
use crate::map::IntersectionMap;

/// Lane→exit incidence of one map, by declaration index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapTopology {
    pub lane_exit: Vec<usize>,
    pub n_exits: usize,
}

impl MapTopology {
    pub fn from_map(map: &IntersectionMap) -> Result<Self> {
        Ok(Self {
            lane_exit: map.lane_exit_indices()?,
            n_exits: map.exits.len(),
        })
    }

    pub fn n_lanes(&self) -> usize {
        self.lane_exit.len()
    }
}

/// Ground truth of one trajectory, by declaration index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqLabel {
    pub lane: usize,
    pub exit: usize,
}

/// Ground truth of one frame, by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameLabel {
    pub true_lane: String,
    pub true_exit: String,
}

impl FrameLabel {
    pub fn resolve(&self, map: &IntersectionMap) -> Result<SeqLabel> {
        let lane = map.lane_index(&self.true_lane).ok_or_else(|| Error::UnknownId {
            kind: "lane",
            id: self.true_lane.clone(),
        })?;
        let exit = map.exit_index(&self.true_exit).ok_or_else(|| Error::UnknownId {
            kind: "exit",
            id: self.true_exit.clone(),
        })?;
        if map.exit_of_lane(lane) != Some(exit) {
            return Err(Error::Label(format!(
                "lane {} does not lead to exit {}",
                self.true_lane, self.true_exit
            )));
        }
        Ok(SeqLabel { lane, exit })
    }
}

/// Feature tensor of one trajectory on one map, laid out frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub topology: MapTopology,
    pub len: usize,
    /// `len × n_lanes × 6`
    pub lane_x: Vec<f64>,
    /// `len × n_exits × 8`
    pub goal_x: Vec<f64>,
    pub label: Option<SeqLabel>,
}

impl Sequence {
    pub fn new(topology: MapTopology, frames: &[FeatureFrame], label: Option<SeqLabel>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Empty("sequence frames"));
        }
        let (nl, ne) = (topology.n_lanes(), topology.n_exits);
        if let Some(l) = label {
            if l.lane >= nl || l.exit >= ne || topology.lane_exit[l.lane] != l.exit {
                return Err(Error::Label(format!("label {l:?} inconsistent with topology")));
            }
        }
        let mut lane_x = Vec::with_capacity(frames.len() * nl * LANE_FEATURE_DIM);
        let mut goal_x = Vec::with_capacity(frames.len() * ne * GOAL_FEATURE_DIM);
        for f in frames {
            if f.lane_features.len() != nl || f.goal_features.len() != ne {
                return Err(Error::shape(
                    "feature frame",
                    format!("{nl} lanes / {ne} exits"),
                    format!("{} lanes / {} exits", f.lane_features.len(), f.goal_features.len()),
                ));
            }
            f.lane_features.iter().for_each(|l| lane_x.extend_from_slice(&l.0));
            f.goal_features.iter().for_each(|g| goal_x.extend_from_slice(&g.0));
        }
        Ok(Self {
            topology,
            len: frames.len(),
            lane_x,
            goal_x,
            label,
        })
    }

    pub fn from_map(map: &IntersectionMap, frames: &[FeatureFrame], label: Option<SeqLabel>) -> Result<Self> {
        Self::new(MapTopology::from_map(map)?, frames, label)
    }

    pub fn n_lanes(&self) -> usize {
        self.topology.n_lanes()
    }

    pub fn n_exits(&self) -> usize {
        self.topology.n_exits
    }

    pub fn lane_frame(&self, t: usize) -> &[f64] {
        let w = self.n_lanes() * LANE_FEATURE_DIM;
        &self.lane_x[t * w..(t + 1) * w]
    }

    pub fn goal_frame(&self, t: usize) -> &[f64] {
        let w = self.n_exits() * GOAL_FEATURE_DIM;
        &self.goal_x[t * w..(t + 1) * w]
    }

    /// First `len` frames.
    pub fn truncated(&self, len: usize) -> Self {
        let len = len.clamp(1, self.len);
        Self {
            topology: self.topology.clone(),
            len,
            lane_x: self.lane_x[..len * self.n_lanes() * LANE_FEATURE_DIM].to_vec(),
            goal_x: self.goal_x[..len * self.n_exits() * GOAL_FEATURE_DIM].to_vec(),
            label: self.label,
        }
    }
}
