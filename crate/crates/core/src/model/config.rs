use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{GOAL_FEATURE_DIM, LANE_FEATURE_DIM};

/// Architecture variant. Ablations drop information by zeroing slots of the
/// attention inputs, so every variant shares one parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    GoalOnly,
    LaneOnly,
    #[serde(rename = "l_gl")]
    LGl,
    #[serde(rename = "gl_l")]
    GlL,
    Stl,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::GoalOnly,
        Variant::LaneOnly,
        Variant::LGl,
        Variant::GlL,
        Variant::Stl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::GoalOnly => "goal_only",
            Variant::LaneOnly => "lane_only",
            Variant::LGl => "l_gl",
            Variant::GlL => "gl_l",
            Variant::Stl => "stl",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Self::ALL.into_iter().find(|v| v.name() == key || (key == "goalonly" && *v == Variant::GoalOnly))
    }

    /// Lane branch (embedding, GRU, lane attention) is evaluated.
    pub fn has_lanes(self) -> bool {
        self != Variant::GoalOnly
    }

    /// Goal branch (embedding, GRU) is evaluated.
    pub fn has_goal_state(self) -> bool {
        self != Variant::LaneOnly
    }

    /// Lane attention sees the goal hidden state.
    pub fn lane_sees_goal(self) -> bool {
        matches!(self, Variant::Full | Variant::Stl | Variant::LGl)
    }

    /// Goal attention sees the goal hidden state.
    pub fn goal_sees_goal(self) -> bool {
        matches!(self, Variant::Full | Variant::Stl | Variant::GlL | Variant::GoalOnly)
    }

    /// Goal attention sees the aggregated lane representation.
    pub fn goal_sees_lanes(self) -> bool {
        self != Variant::GoalOnly
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub lane_feat_dim: usize,
    pub goal_feat_dim: usize,
    pub embed_dim: usize,
    /// Hidden layer sizes of the feature embedding MLPs.
    pub embed_hidden: Vec<usize>,
    pub hidden_dim: usize,
    pub lane_attn_hidden: Vec<usize>,
    pub goal_attn_hidden: Vec<usize>,
    pub pos_weight: f64,
    pub w_lane: f64,
    pub w_goal: f64,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lane_feat_dim: LANE_FEATURE_DIM,
            goal_feat_dim: GOAL_FEATURE_DIM,
            embed_dim: 64,
            embed_hidden: vec![64],
            hidden_dim: 128,
            lane_attn_hidden: vec![64],
            goal_attn_hidden: vec![64],
            pos_weight: 4.0,
            w_lane: 1.0,
            w_goal: 1.0,
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// Small dimensions for exhaustive gradient checks.
    pub fn tiny() -> Self {
        Self {
            embed_dim: 4,
            embed_hidden: vec![3],
            hidden_dim: 5,
            lane_attn_hidden: vec![3],
            goal_attn_hidden: vec![3],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |path: &str, message: String| {
            Err(Error::Config {
                path: format!("model.{path}"),
                message,
            })
        };
        if self.lane_feat_dim != LANE_FEATURE_DIM {
            return err("lane_feat_dim", format!("must be {LANE_FEATURE_DIM}"));
        }
        if self.goal_feat_dim != GOAL_FEATURE_DIM {
            return err("goal_feat_dim", format!("must be {GOAL_FEATURE_DIM}"));
        }
        if self.embed_dim == 0 {
            return err("embed_dim", "must be positive".into());
        }
        if self.hidden_dim == 0 {
            return err("hidden_dim", "must be positive".into());
        }
        for (name, v) in [
            ("embed_hidden", &self.embed_hidden),
            ("lane_attn_hidden", &self.lane_attn_hidden),
            ("goal_attn_hidden", &self.goal_attn_hidden),
        ] {
            if v.contains(&0) {
                return err(name, "layer sizes must be positive".into());
            }
        }
        if !(self.pos_weight.is_finite() && self.pos_weight > 0.0) {
            return err("pos_weight", "must be positive".into());
        }
        for (name, w) in [("w_lane", self.w_lane), ("w_goal", self.w_goal)] {
            if !(w.is_finite() && w >= 0.0) {
                return err(name, "must be finite and non-negative".into());
            }
        }
        Ok(())
    }

    /// Lane-loss weight actually applied in training.
    pub fn effective_w_lane(&self) -> f64 {
        match self.variant {
            Variant::Stl | Variant::GoalOnly => 0.0,
            _ => self.w_lane,
        }
    }

    /// Canonical JSON; its hash is stored in weight files.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(s);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// STL baseline configuration: same architecture, goal loss only.
pub fn stl_train_mode(config: &ModelConfig) -> ModelConfig {
    ModelConfig {
        variant: Variant::Stl,
        ..config.clone()
    }
}
