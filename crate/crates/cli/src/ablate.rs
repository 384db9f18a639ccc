//! Trains a list of models on one dataset and tabulates their test recall.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use openintent_core::baselines::{KnnBaseline, MlpBaseline};
use openintent_core::eval::{evaluate, EvalReport, EvalSeq, Level, Scorer, SeenSel, ShapeSel};
use openintent_core::model::{IntentModel, Variant};
use openintent_core::train::{train, TrainOutcome};
use openintent_core::{Error, Result};
use serde::Serialize;

use crate::config::RunConfig;
use crate::Log;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Net(Variant),
    Mlp,
    Knn,
}

impl ModelKind {
    /// Recurrent variants, then the two per-frame baselines.
    pub fn all() -> Vec<ModelKind> {
        let mut v: Vec<_> = Variant::ALL.iter().map(|&v| ModelKind::Net(v)).collect();
        v.extend([ModelKind::Mlp, ModelKind::Knn]);
        v
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Net(v) => v.name(),
            ModelKind::Mlp => "mlp",
            ModelKind::Knn => "knn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Some(ModelKind::Mlp),
            "knn" => Some(ModelKind::Knn),
            other => Variant::parse(other).map(ModelKind::Net),
        }
    }
}

pub enum Trained {
    Net(Box<TrainOutcome>),
    Mlp(Box<MlpBaseline>),
    Knn(Box<KnnBaseline>),
}

impl Trained {
    pub fn scorer(&self) -> &dyn Scorer {
        match self {
            Trained::Net(o) => &o.best,
            Trained::Mlp(m) => m.as_ref(),
            Trained::Knn(k) => k.as_ref(),
        }
    }
}

/// Fits one model; recurrent variants keep their best validation epoch.
pub fn train_kind(kind: ModelKind, cfg: &RunConfig, train_items: &[EvalSeq], val_items: &[EvalSeq], log: Log) -> Result<Trained> {
    let t0 = Instant::now();
    let out = match kind {
        ModelKind::Net(v) => {
            let model = IntentModel::new(cfg.model.clone().with_variant(v), cfg.train.seed)?;
            let outcome = train(model, train_items, val_items, &cfg.train, |rec, _| {
                log.debug(format!(
                    "[{}] epoch {} lr {:.3e} train_loss {:.5} val_loss {} val_goal {} val_lane {} ({:.0}s)",
                    kind.name(),
                    rec.epoch,
                    rec.lr,
                    rec.train_loss,
                    fmt_opt(rec.val_loss),
                    fmt_opt(rec.val_goal_recall),
                    fmt_opt(rec.val_lane_recall),
                    t0.elapsed().as_secs_f64()
                ));
                Ok(())
            })?;
            Trained::Net(Box::new(outcome))
        }
        ModelKind::Mlp => {
            let mut m = MlpBaseline::new(cfg.train.seed, cfg.model.pos_weight)?;
            let hist = m.fit(train_items, &cfg.train)?;
            for (i, l) in hist.iter().enumerate() {
                log.debug(format!("[mlp] epoch {} train_loss {l:.5}", i + 1));
            }
            Trained::Mlp(Box::new(m))
        }
        ModelKind::Knn => Trained::Knn(Box::new(KnnBaseline::fit(
            train_items,
            cfg.baselines.knn_k,
            cfg.baselines.knn_max_points,
            cfg.train.seed,
        )?)),
    };
    log.info(format!("[{}] trained in {:.0}s", kind.name(), t0.elapsed().as_secs_f64()));
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.4}"))
}

#[derive(Debug, Clone, Serialize)]
pub struct RecallRow {
    pub straight: Option<f64>,
    pub curved: Option<f64>,
    pub all: Option<f64>,
}

impl RecallRow {
    fn of(report: &EvalReport, level: Level) -> Self {
        let r = |s| report.recall(level, s, SeenSel::All);
        Self {
            straight: r(ShapeSel::Straight),
            curved: r(ShapeSel::Curved),
            all: r(ShapeSel::All),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub model: String,
    /// Selected epoch of recurrent models.
    pub best_epoch: Option<usize>,
    pub goal: RecallRow,
    /// Absent for models without lane outputs.
    pub lane: Option<RecallRow>,
    pub report: EvalReport,
}

impl AblationRow {
    pub fn new(model: &str, best_epoch: Option<usize>, report: EvalReport) -> Self {
        Self {
            model: model.into(),
            best_epoch,
            goal: RecallRow::of(&report, Level::Goal),
            lane: report.lane_available.then(|| RecallRow::of(&report, Level::Lane)),
            report,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, model: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serialises")
    }

    /// Fixed-width text table of goal and lane recall by shape.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
            "model", "goal/str", "goal/cur", "goal/all", "lane/str", "lane/cur", "lane/all"
        );
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        for r in &self.rows {
            let (ls, lc, la) = match &r.lane {
                Some(l) => (cell(l.straight), cell(l.curved), cell(l.all)),
                None => ("-".into(), "-".into(), "-".into()),
            };
            let _ = writeln!(
                s,
                "{:<10} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
                r.model,
                cell(r.goal.straight),
                cell(r.goal.curved),
                cell(r.goal.all),
                ls,
                lc,
                la
            );
        }
        s
    }
}

/// Trains every `kind` on `train_items` and evaluates it on `test_items`.
pub fn run_ablation(
    cfg: &RunConfig,
    kinds: &[ModelKind],
    train_items: &[EvalSeq],
    val_items: &[EvalSeq],
    test_items: &[EvalSeq],
    seen: &BTreeSet<String>,
    threads: usize,
    log: Log,
) -> Result<AblationTable> {
    if kinds.is_empty() {
        return Err(Error::Empty("model list"));
    }
    let mut rows = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let trained = train_kind(kind, cfg, train_items, val_items, log)?;
        let report = evaluate(trained.scorer(), test_items, seen, threads)?;
        let best_epoch = match &trained {
            Trained::Net(o) => Some(o.best_epoch),
            _ => None,
        };
        rows.push(AblationRow::new(kind.name(), best_epoch, report));
    }
    Ok(AblationTable { rows })
}
