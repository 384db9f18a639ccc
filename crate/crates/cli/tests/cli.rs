use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use openintent_core::dataset::write_map;
use openintent_core::fixtures::{drive_along, single_lane_map};
use openintent_core::model::{IntentModel, ModelConfig, Variant};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_openintent"));
    c.env_remove("OPENINTENT_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"{
  "gen": {"seed": 3, "duration": [2.0, 3.0]},
  "counts": {"train_maps": 4, "val_maps": 1, "test_maps": 1, "trajectories_per_map": 12},
  "model": {"embed_dim": 8, "embed_hidden": [8], "hidden_dim": 12, "lane_attn_hidden": [8], "goal_attn_hidden": [8]},
  "train": {"epochs": 2, "batch_size": 16},
  "baselines": {"knn_k": 3}
}"#;

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        fs::write(dir.path().join("small.json"), SMALL).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self) -> PathBuf {
        self.path("small.json")
    }

    fn gen(&self, name: &str) -> PathBuf {
        let out = self.path(name);
        ok(&["gen", "--config", s(&self.config()), "--out", s(&out)]);
        out
    }

    fn train(&self, data: &Path, name: &str, extra: &[&str]) -> PathBuf {
        let w = self.path(name);
        let cfg = self.config();
        let mut args = vec!["train", "--config", s(&cfg), "--data", s(data), "--out", s(&w)];
        args.extend_from_slice(extra);
        ok(&args);
        w
    }
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn gen_writes_every_map_and_prints_a_summary() {
    let f = Fixture::new();
    let out = f.path("ds");
    let o = ok(&["gen", "--config", s(&f.config()), "--out", s(&out)]);
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["train"]["maps"], 4);
    assert_eq!(summary["test"]["trajectories"], 12);
    assert_eq!(fs::read_dir(out.join("maps")).unwrap().count(), 6);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let listed: usize = ["train", "val", "test"]
        .iter()
        .map(|k| manifest[k]["maps"].as_array().unwrap().len())
        .sum();
    assert_eq!(listed, 6);
}

#[test]
fn gen_is_byte_reproducible() {
    let f = Fixture::new();
    let a = f.gen("a");
    let b = f.gen("b");
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn seed_flag_and_environment_change_the_output() {
    let f = Fixture::new();
    let base = f.gen("base");
    let flag = f.path("flag");
    ok(&["--seed", "99", "gen", "--config", s(&f.config()), "--out", s(&flag)]);
    assert_ne!(tree(&base), tree(&flag));
    let env = f.path("env");
    let o = bin()
        .args(["gen", "--config", s(&f.config()), "--out", s(&env)])
        .env("OPENINTENT_SEED", "99")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(tree(&flag), tree(&env));
}

#[test]
fn invalid_config_exits_2_with_field_path() {
    let f = Fixture::new();
    let bad = f.path("bad.json");
    fs::write(&bad, r#"{"gen": {"fps": 30}}"#).unwrap();
    let o = run(&["gen", "--config", s(&bad), "--out", s(&f.path("x"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("gen.fps"));

    fs::write(&bad, r#"{"train": {"epochz": 3}}"#).unwrap();
    let o = run(&["gen", "--config", s(&bad), "--out", s(&f.path("x"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("epochz"));

    let o = bin()
        .args(["gen", "--out", s(&f.path("x"))])
        .env("OPENINTENT_SEED", "seven")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_inputs_exit_3() {
    let f = Fixture::new();
    let o = run(&["train", "--data", s(&f.path("nowhere")), "--out", s(&f.path("w.bin"))]);
    assert_eq!(code(&o), 3);
    let o = run(&["gen", "--config", s(&f.path("missing.json")), "--out", s(&f.path("x"))]);
    assert_eq!(code(&o), 3);
}

#[test]
fn train_and_eval_are_byte_reproducible() {
    let f = Fixture::new();
    let data = f.gen("ds");
    let w1 = f.train(&data, "w1.bin", &[]);
    let w2 = f.train(&data, "w2.bin", &[]);
    assert_eq!(fs::read(&w1).unwrap(), fs::read(&w2).unwrap());
    let h1 = fs::read_to_string(f.path("w1.bin.history.csv")).unwrap();
    assert_eq!(h1, fs::read_to_string(f.path("w2.bin.history.csv")).unwrap());
    assert!(h1.starts_with("epoch,lr,train_loss,val_loss,val_goal_recall,val_lane_recall\n"));
    assert_eq!(h1.lines().count(), 3);

    let eval = || ok(&["eval", "--data", s(&data), "--weights", s(&w1), "--self-check"]).stdout;
    let (a, b) = (eval(), eval());
    assert_eq!(a, b);
    let report: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["trajectories"], 12);

    let threaded = ok(&["--threads", "3", "eval", "--data", s(&data), "--weights", s(&w1)]).stdout;
    assert_eq!(threaded, a);
}

#[test]
fn stl_flag_reaches_the_weight_file() {
    let f = Fixture::new();
    let data = f.gen("ds");
    let w = f.train(&data, "stl.bin", &["--variant", "stl", "--epochs", "1"]);
    assert_eq!(IntentModel::load(&w).unwrap().config.variant, Variant::Stl);
}

#[test]
fn oracle_scores_one_everywhere() {
    let f = Fixture::new();
    let data = f.gen("ds");
    let out = f.path("oracle.json");
    ok(&["eval", "--data", s(&data), "--oracle", "--self-check", "--out", s(&out)]);
    let report: Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    let cells = report["cells"].as_array().unwrap();
    assert!(!cells.is_empty());
    for c in cells {
        if c["frames"].as_u64().unwrap() > 0 {
            assert_eq!(c["recall"], 1.0, "{c}");
        }
    }
}

#[test]
fn baselines_evaluate() {
    let f = Fixture::new();
    let data = f.gen("ds");
    for b in ["knn", "mlp"] {
        let o = ok(&["eval", "--config", s(&f.config()), "--data", s(&data), "--baseline", b, "--self-check"]);
        let report: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(report["scorer"], b);
    }
}

#[test]
fn mismatched_config_exits_5() {
    let f = Fixture::new();
    let data = f.gen("ds");
    let w = f.train(&data, "w.bin", &["--epochs", "1"]);
    let other = f.path("other.json");
    fs::write(&other, SMALL.replace(r#""hidden_dim": 12"#, r#""hidden_dim": 10"#)).unwrap();
    let o = run(&["eval", "--config", s(&other), "--data", s(&data), "--weights", s(&w)]);
    assert_eq!(code(&o), 5, "{}", String::from_utf8_lossy(&o.stderr));
    ok(&["eval", "--config", s(&f.config()), "--data", s(&data), "--weights", s(&w)]);
}

#[test]
fn divergence_exits_4() {
    let f = Fixture::new();
    let data = f.gen("ds");
    let hot = f.path("hot.json");
    fs::write(&hot, SMALL.replace(r#""batch_size": 16"#, r#""batch_size": 16, "lr": 1e300"#)).unwrap();
    let o = run(&["train", "--config", s(&hot), "--data", s(&data), "--out", s(&f.path("w.bin"))]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("divergence"));
}

fn single_lane_inputs(f: &Fixture) -> (PathBuf, PathBuf, PathBuf, usize) {
    let map = single_lane_map();
    let map_path = f.path("one.json");
    write_map(&map_path, &map).unwrap();
    let poses = drive_along(&map.lanes[0], 0.0, 6.0, 40, 25.0);
    let lines: Vec<String> = poses
        .iter()
        .map(|p| {
            serde_json::json!({"t": p.t, "x": p.position.x, "y": p.position.y, "heading": p.heading}).to_string()
        })
        .collect();
    let traj = f.path("one.jsonl");
    fs::write(&traj, lines.join("\n") + "\n").unwrap();
    let w = f.path("w.bin");
    IntentModel::new(ModelConfig::tiny(), 4).unwrap().save(&w).unwrap();
    (w, map_path, traj, poses.len())
}

#[test]
fn predict_on_a_single_lane_map() {
    let f = Fixture::new();
    let (w, map, traj, n) = single_lane_inputs(&f);
    let o = ok(&["predict", "--weights", s(&w), "--map", s(&map), "--trajectory", s(&traj)]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), n);
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let alpha: f64 = v["alpha"].as_object().unwrap().values().map(|x| x.as_f64().unwrap()).sum();
        assert!((alpha - 1.0).abs() < 1e-9);
        for k in ["alpha", "beta"] {
            for x in v[k].as_object().unwrap().values() {
                assert_eq!(x.as_f64().unwrap(), 1.0);
            }
        }
    }
    let o = ok(&["predict", "--weights", s(&w), "--map", s(&map), "--trajectory", s(&traj), "--format", "csv"]);
    let csv = String::from_utf8(o.stdout).unwrap();
    assert_eq!(csv.lines().count(), n + 1);
    assert!(csv.starts_with("frame,time,alpha:"));
}

#[test]
fn predict_rejects_bad_inputs() {
    let f = Fixture::new();
    let (w, map, traj, _) = single_lane_inputs(&f);
    let broken = f.path("broken.jsonl");
    fs::write(&broken, "{\"t\": 0.0, \"x\": 1.0}\n").unwrap();
    let o = run(&["predict", "--weights", s(&w), "--map", s(&map), "--trajectory", s(&broken)]);
    assert_eq!(code(&o), 2);
    let bad_map = f.path("bad_map.json");
    fs::write(&bad_map, r#"{"id": "x", "lanes": []}"#).unwrap();
    let o = run(&["predict", "--weights", s(&w), "--map", s(&bad_map), "--trajectory", s(&traj)]);
    assert_eq!(code(&o), 2);
    let o = run(&["predict", "--weights", s(&f.path("none.bin")), "--map", s(&map), "--trajectory", s(&traj)]);
    assert_eq!(code(&o), 3);
}

#[test]
fn latency_reports_every_lane_count() {
    let o = ok(&["latency", "--repeats", "50", "--lanes", "4,8"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["reference"]["lanes"], 12);
    assert_eq!(v["reference"]["exits"], 4);
    let scaling = v["scaling"].as_array().unwrap();
    assert_eq!(scaling.len(), 2);
    assert_eq!(scaling[1]["lanes"], 8);
    assert!(v["reference"]["p99_us"].as_f64().unwrap() >= v["reference"]["median_us"].as_f64().unwrap());
}

#[test]
fn ablate_emits_one_row_per_model() {
    let f = Fixture::new();
    let data = f.gen("ds");
    let out = f.path("table.json");
    ok(&[
        "ablate",
        "--config",
        s(&f.config()),
        "--data",
        s(&data),
        "--models",
        "full,goal_only,knn",
        "--out",
        s(&out),
    ]);
    let v: Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    let rows = v["rows"].as_array().unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r["model"].as_str().unwrap()).collect();
    assert_eq!(names, ["full", "goal_only", "knn"]);
    assert!(rows[1]["lane"].is_null());
    assert!(rows[0]["lane"]["all"].as_f64().is_some());
}
