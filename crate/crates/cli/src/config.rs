//! Run configuration: one JSON document covering generation, model,
//! training and baselines.

use std::path::Path;

use openintent_core::baselines::{KNN_K, KNN_MAX_POINTS};
use openintent_core::model::ModelConfig;
use openintent_core::sim::{DatasetCounts, GenConfig};
use openintent_core::train::TrainConfig;
use openintent_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Overrides `gen.seed` and `train.seed` when set.
pub const SEED_ENV: &str = "OPENINTENT_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub knn_k: usize,
    /// Stored points per element type; larger sets are subsampled.
    pub knn_max_points: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            knn_k: KNN_K,
            knn_max_points: KNN_MAX_POINTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub gen: GenConfig,
    pub counts: DatasetCounts,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub baselines: BaselineConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or returns the defaults when there is none.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_json(&text)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        let c = &self.counts;
        if c.trajectories_per_map == 0 {
            return Err(Error::Config {
                path: "counts.trajectories_per_map".into(),
                message: "must be positive".into(),
            });
        }
        if c.train_maps + c.val_maps + c.test_maps == 0 {
            return Err(Error::Config {
                path: "counts".into(),
                message: "at least one map is required".into(),
            });
        }
        if self.baselines.knn_k == 0 {
            return Err(Error::Config {
                path: "baselines.knn_k".into(),
                message: "must be positive".into(),
            });
        }
        if self.baselines.knn_max_points == 0 {
            return Err(Error::Config {
                path: "baselines.knn_max_points".into(),
                message: "must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.gen.seed = seed;
        self.train.seed = seed;
    }

    /// Applies the seed override: an explicit flag wins over the environment.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> Result<()> {
        if let Some(s) = flag {
            self.set_seed(s);
            return Ok(());
        }
        if let Ok(v) = std::env::var(SEED_ENV) {
            let s = v.trim().parse::<u64>().map_err(|_| Error::Config {
                path: SEED_ENV.into(),
                message: format!("not an unsigned integer: {v:?}"),
            })?;
            self.set_seed(s);
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.train.epochs = 3;
        c.counts.train_maps = 2;
        assert_eq!(RunConfig::from_json(&c.to_json_pretty()).unwrap(), c);
    }

    #[test]
    fn unknown_key_names_its_path() {
        let e = RunConfig::from_json(r#"{"train": {"epochs": 2, "momentum": 0.9}}"#).unwrap_err();
        match e {
            Error::Config { path, message } => {
                assert_eq!(path, "train.momentum");
                assert!(message.contains("momentum"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_value_names_its_field() {
        let e = RunConfig::from_json(r#"{"gen": {"fps": 0}}"#).unwrap_err();
        assert!(matches!(e, Error::Config { ref path, .. } if path == "gen.fps"), "{e:?}");
        let e = RunConfig::from_json(r#"{"counts": {"trajectories_per_map": 0}}"#).unwrap_err();
        assert!(matches!(e, Error::Config { ref path, .. } if path == "counts.trajectories_per_map"));
    }

    #[test]
    fn wrong_type_is_a_config_error() {
        let e = RunConfig::from_json(r#"{"model": {"hidden_dim": "big"}}"#).unwrap_err();
        assert!(matches!(e, Error::Config { ref path, .. } if path == "model.hidden_dim"), "{e:?}");
    }

    #[test]
    fn seed_flag_overrides_both_seeds() {
        let mut c = RunConfig::default();
        c.resolve_seed(Some(17)).unwrap();
        assert_eq!((c.gen.seed, c.train.seed), (17, 17));
    }
}
