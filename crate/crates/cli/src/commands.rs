//! Command implementations. Each returns the text destined for stdout.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use openintent_core::dataset::{read_dataset, read_map_for_inference, read_trajectories, write_dataset, Manifest};
use openintent_core::eval::{evaluate, latency_probe, prepare_split, EvalReport, EvalSeq, LatencyStats, OracleScorer};
use openintent_core::features::extract_sequence;
use openintent_core::fixtures::{drive_along, four_way_map, toy_map};
use openintent_core::map::{IntersectionMap, Pose};
use openintent_core::model::{IntentModel, ModelConfig, Variant};
use openintent_core::sim::{generate_dataset, Dataset, FPS};
use openintent_core::train::{history_csv, train, TrainOutcome};
use openintent_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ablate::{run_ablation, train_kind, ModelKind};
use crate::config::RunConfig;
use crate::{CliError, CliResult, Log};

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn json_line<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serialisable");
    s.push('\n');
    s
}

/// Generates a dataset under `out`; returns the split summary as JSON.
pub fn cmd_gen(cfg: &RunConfig, out: &Path, log: Log) -> Result<String> {
    let t0 = Instant::now();
    let ds = generate_dataset(&cfg.gen, &cfg.counts)?;
    let manifest = write_dataset(out, &ds, &cfg.gen, &cfg.counts)?;
    log.info(format!(
        "wrote {} maps and {} trajectories to {} in {:.1}s",
        ds.splits().iter().map(|(_, s)| s.maps.len()).sum::<usize>(),
        ds.splits().iter().map(|(_, s)| s.trajectories.len()).sum::<usize>(),
        out.display(),
        t0.elapsed().as_secs_f64()
    ));
    Ok(json_line(&manifest.summary))
}

pub struct Prepared {
    pub manifest: Manifest,
    pub dataset: Dataset,
    pub train: Vec<EvalSeq>,
    pub val: Vec<EvalSeq>,
    pub test: Vec<EvalSeq>,
}

impl Prepared {
    pub fn load(dir: &Path) -> Result<Self> {
        let (manifest, dataset) = read_dataset(dir)?;
        Ok(Self {
            train: prepare_split(&dataset.train)?,
            val: prepare_split(&dataset.val)?,
            test: prepare_split(&dataset.test)?,
            manifest,
            dataset,
        })
    }

    pub fn split(&self, name: &str) -> Result<&[EvalSeq]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::Config {
                path: "--split".into(),
                message: format!("unknown split {other:?} (train, val or test)"),
            }),
        }
    }

    pub fn train_map_ids(&self) -> BTreeSet<String> {
        self.manifest.train.maps.iter().cloned().collect()
    }
}

pub struct TrainArgs<'a> {
    pub data: &'a Path,
    pub out: &'a Path,
    pub history: Option<&'a Path>,
    pub variant: Option<Variant>,
}

/// `<out>.history.csv` unless given.
pub fn default_history_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".history.csv");
    PathBuf::from(s)
}

fn checkpoint_path(out: &Path, epoch: usize) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(format!(".epoch{epoch:03}"));
    PathBuf::from(s)
}

/// Trains and writes the best-on-validation weights and the history CSV.
pub fn cmd_train(cfg: &RunConfig, args: &TrainArgs, log: Log) -> Result<TrainOutcome> {
    let data = Prepared::load(args.data)?;
    let mut model_cfg = cfg.model.clone();
    if let Some(v) = args.variant {
        model_cfg.variant = v;
    }
    let model = IntentModel::new(model_cfg, cfg.train.seed)?;
    log.info(format!(
        "training {} on {} sequences ({} validation), {} epochs",
        model.config.variant.name(),
        data.train.len(),
        data.val.len(),
        cfg.train.epochs
    ));
    let t0 = Instant::now();
    let every = cfg.train.checkpoint_every;
    let out = train(model, &data.train, &data.val, &cfg.train, |rec, m| {
        log.debug(format!(
            "epoch {} lr {:.3e} train_loss {:.5} val_goal {} val_lane {} ({:.0}s)",
            rec.epoch,
            rec.lr,
            rec.train_loss,
            rec.val_goal_recall.map_or("-".into(), |x| format!("{x:.4}")),
            rec.val_lane_recall.map_or("-".into(), |x| format!("{x:.4}")),
            t0.elapsed().as_secs_f64()
        ));
        if every.is_some_and(|k| rec.epoch % k == 0) {
            m.save(checkpoint_path(args.out, rec.epoch))?;
        }
        Ok(())
    })?;
    out.best.save(args.out)?;
    let hist = args.history.map_or_else(|| default_history_path(args.out), Path::to_path_buf);
    write_text(&hist, &history_csv(&out.history))?;
    log.info(format!(
        "best epoch {} saved to {} ({:.0}s)",
        out.best_epoch,
        args.out.display(),
        t0.elapsed().as_secs_f64()
    ));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Knn,
    Mlp,
}

pub struct EvalArgs<'a> {
    pub data: &'a Path,
    pub weights: Option<&'a Path>,
    /// Check the weights against `cfg.model` (a config file was given).
    pub check_config: bool,
    pub split: &'a str,
    pub seen: Option<&'a Path>,
    pub oracle: bool,
    pub baseline: Option<Baseline>,
    pub self_check: bool,
    pub timing: bool,
    pub threads: usize,
}

/// Map ids, one per line; blank lines and `#` comments are skipped.
pub fn read_seen_ids(path: &Path) -> Result<BTreeSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

pub const TIMING_REPEATS: usize = 1000;

/// Evaluates one scorer on a split; the report is JSON.
pub fn cmd_eval(cfg: &RunConfig, args: &EvalArgs, log: Log) -> CliResult<EvalReport> {
    let data = Prepared::load(args.data)?;
    let items = data.split(args.split)?;
    let seen = match args.seen {
        Some(p) => read_seen_ids(p)?,
        None => data.train_map_ids(),
    };
    let load_model = || -> CliResult<IntentModel> {
        let w = args
            .weights
            .ok_or_else(|| CliError::Usage("--weights is required unless --oracle or --baseline is given".into()))?;
        Ok(if args.check_config {
            IntentModel::load_expecting(w, &cfg.model)?
        } else {
            IntentModel::load(w)?
        })
    };
    let report = if args.oracle {
        evaluate(&OracleScorer, items, &seen, args.threads)?
    } else if let Some(b) = args.baseline {
        let kind = match b {
            Baseline::Knn => ModelKind::Knn,
            Baseline::Mlp => ModelKind::Mlp,
        };
        let trained = train_kind(kind, cfg, &data.train, &data.val, log)?;
        evaluate(trained.scorer(), items, &seen, args.threads)?
    } else {
        let model = load_model()?;
        let mut r = evaluate(&model, items, &seen, args.threads)?;
        if args.timing {
            let first = data.dataset.test.trajectories.first().or(data.dataset.train.trajectories.first());
            if let Some(t) = first {
                let map = data
                    .dataset
                    .test
                    .map(&t.map_id)
                    .or_else(|| data.dataset.train.map(&t.map_id))
                    .ok_or_else(|| Error::UnknownId {
                        kind: "map",
                        id: t.map_id.clone(),
                    })?;
                r.latency = Some(latency_probe(&model, map, &t.poses, TIMING_REPEATS)?);
            }
        }
        r
    };
    if args.self_check {
        report.self_check().map_err(CliError::SelfCheck)?;
        log.info("self-check passed");
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictFormat {
    Jsonl,
    Csv,
}

pub struct PredictArgs<'a> {
    pub weights: &'a Path,
    pub map: &'a Path,
    pub trajectory: &'a Path,
    pub index: usize,
    pub format: PredictFormat,
}

fn check_poses(poses: &[Pose], path: &Path) -> Result<()> {
    for (i, p) in poses.iter().enumerate() {
        if !(p.position.x.is_finite() && p.position.y.is_finite() && p.heading.is_finite() && p.t.is_finite()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: format!("pose {i} is not finite"),
            });
        }
    }
    Ok(())
}

/// Per-frame predictions for one trajectory, one line per pose.
pub fn cmd_predict(args: &PredictArgs) -> Result<String> {
    let model = IntentModel::load(args.weights)?;
    let map = read_map_for_inference(args.map)?;
    let recs = read_trajectories(args.trajectory)?;
    let n = recs.len();
    let rec = recs.into_iter().nth(args.index).ok_or_else(|| Error::Config {
        path: "--index".into(),
        message: format!("{} has {n} trajectories", args.trajectory.display()),
    })?;
    check_poses(&rec.poses, args.trajectory)?;
    let frames = extract_sequence(&rec.poses, &map)?;
    let preds = model.predict_sequence(&map, &frames)?;
    let mut out = String::new();
    match args.format {
        PredictFormat::Jsonl => {
            for (t, p) in preds.iter().enumerate() {
                out.push_str(&p.to_json_line(t, &map));
                out.push('\n');
            }
        }
        PredictFormat::Csv => {
            out.push_str(&csv_header(&map, !model.config.variant.has_lanes()));
            for (t, p) in preds.iter().enumerate() {
                let _ = write!(out, "{t},{:.4}", rec.poses[t].t);
                for v in p.alpha.iter().chain(&p.beta).chain(&p.goal_probs) {
                    let _ = write!(out, ",{v}");
                }
                out.push('\n');
            }
        }
    }
    Ok(out)
}

fn csv_header(map: &IntersectionMap, goal_only: bool) -> String {
    let mut h = String::from("frame,time");
    if !goal_only {
        for l in &map.lanes {
            let _ = write!(h, ",alpha:{}", l.id);
        }
    }
    for prefix in ["beta", "goal_prob"] {
        for e in &map.exits {
            let _ = write!(h, ",{prefix}:{}", e.id);
        }
    }
    h.push('\n');
    h
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingPoint {
    pub lanes: usize,
    pub exits: usize,
    pub median_us: f64,
    pub p99_us: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LatencyReport {
    /// Regular four-way map, 4 exits and 12 lanes.
    pub reference: LatencyStats,
    pub scaling: Vec<ScalingPoint>,
}

pub const LATENCY_FRAMES: usize = 100;
pub const SCALING_EXITS: usize = 4;

/// Step latency on the four-way map and on random 4-exit maps of growing
/// lane count.
pub fn cmd_latency(model: &IntentModel, lane_counts: &[usize], repeats: usize, seed: u64) -> Result<LatencyReport> {
    let probe = |map: &IntersectionMap| {
        let poses = drive_along(&map.lanes[0], 0.0, 8.0, LATENCY_FRAMES, FPS);
        latency_probe(model, map, &poses, repeats)
    };
    let reference = probe(&four_way_map())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scaling = Vec::with_capacity(lane_counts.len());
    for &n in lane_counts {
        if n < SCALING_EXITS {
            return Err(Error::Config {
                path: "--lanes".into(),
                message: format!("{n} lanes cannot serve {SCALING_EXITS} exits"),
            });
        }
        let map = toy_map(&mut rng, SCALING_EXITS, n);
        let s = probe(&map)?;
        scaling.push(ScalingPoint {
            lanes: n,
            exits: SCALING_EXITS,
            median_us: s.median_us,
            p99_us: s.p99_us,
        });
    }
    Ok(LatencyReport { reference, scaling })
}

/// Loads weights, or builds an untrained default model (latency does not
/// depend on the parameter values).
pub fn latency_model(weights: Option<&Path>, cfg: &ModelConfig, seed: u64) -> Result<IntentModel> {
    match weights {
        Some(w) => IntentModel::load(w),
        None => IntentModel::new(cfg.clone(), seed),
    }
}

pub fn latency_json(r: &LatencyReport) -> String {
    json_line(r)
}

/// Trains `kinds` on the dataset and returns the comparison table as JSON.
pub fn cmd_ablate(cfg: &RunConfig, data_dir: &Path, kinds: &[ModelKind], threads: usize, log: Log) -> Result<String> {
    let data = Prepared::load(data_dir)?;
    let table = run_ablation(cfg, kinds, &data.train, &data.val, &data.test, &data.train_map_ids(), threads, log)?;
    eprint!("{}", table.render());
    let mut s = table.to_json();
    s.push('\n');
    Ok(s)
}

pub fn report_json(r: &EvalReport) -> String {
    let mut s = r.to_json();
    if !s.ends_with('\n') {
        s.push('\n');
    }
    s
}
