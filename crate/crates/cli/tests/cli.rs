use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

struct Env {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Env {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        let env = Self { _tmp: tmp, root };
        let data = env.path("data");
        env.ok(&[
            "synth", "--out", &data, "--videos", "8", "--frames", "36", "--dim", "8", "--events", "2", "--splits", "2",
            "--seed", "3",
        ]);
        env
    }

    fn path(&self, rel: &str) -> String {
        self.root.join(rel).to_str().unwrap().to_string()
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_sumsr"))
            .args(args)
            .current_dir(&self.root)
            .env("SUMSR_OUT", self.root.join("env-out"))
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "sumsr {args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    /// First stderr token of a failing command.
    fn err_code(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(!out.status.success(), "sumsr {args:?} unexpectedly succeeded");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.trim_end().lines().count(), 1, "multi-line error: {err}");
        err.split(':').next().unwrap().to_string()
    }

    fn config(&self, name: &str, extra: &str) -> String {
        let body = format!(
            r#"{{"manifest": "data/manifest.json", "splits": "data/splits.json", "d": 8, "d_h": 4, "epochs_per_stage": 2{extra}}}"#
        );
        fs::write(self.root.join(name), body).unwrap();
        self.path(name)
    }

    fn train(&self, config: &str, seed: &str, output: &str) -> Vec<PathBuf> {
        self.ok(&["train", "--config", config, "--seed", seed, "--output", output])
            .lines()
            .map(PathBuf::from)
            .collect()
    }
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn json(text: &str) -> Value {
    serde_json::from_str(text).unwrap()
}

#[test]
fn train_writes_one_run_per_split_and_is_deterministic() {
    let env = Env::new();
    let cfg = env.config("sepma.json", r#", "variant": "sepMa""#);
    let a = env.train(&cfg, "5", &env.path("a"));
    let b = env.train(&cfg, "5", &env.path("b"));
    assert_eq!(a.len(), 2);
    assert!(a[0].ends_with("sepMa/split0/seed5"), "{}", a[0].display());
    for (ra, rb) in a.iter().zip(&b) {
        for f in ["run.json", "metrics.csv", "selection.csv", "final.json", "final.bin"] {
            assert!(ra.join(f).is_file(), "missing {f}");
        }
        assert_eq!(snapshot(ra), snapshot(rb));
    }
    let other = env.train(&cfg, "6", &env.path("c"));
    assert_ne!(
        fs::read(a[0].join("final.bin")).unwrap(),
        fs::read(other[0].join("final.bin")).unwrap()
    );
}

#[test]
fn iter_marker_lists_every_iteration() {
    let env = Env::new();
    let cfg = env.config(
        "iter.json",
        r#", "variant": "iter", "iterations": 5, "epochs_per_stage": 1"#,
    );
    let runs = env.ok(&[
        "train",
        "--config",
        &cfg,
        "--seed",
        "1",
        "--split",
        "1",
        "--output",
        &env.path("o"),
    ]);
    let run = PathBuf::from(runs.trim());
    assert!(run.ends_with("iter/split1/seed1"));
    let marker = json(&fs::read_to_string(run.join("final.json")).unwrap());
    let iterations = marker["iterations"].as_array().unwrap();
    assert_eq!(iterations.len(), 5);
    let chosen = marker["final_iteration"].as_u64().unwrap() as usize;
    assert!((1..=5).contains(&chosen));
    let ckpt = iterations[chosen - 1]["checkpoint"].as_str().unwrap();
    assert_eq!(marker["checkpoint"].as_str().unwrap(), ckpt);
    assert_eq!(
        fs::read(run.join(ckpt)).unwrap(),
        fs::read(run.join("final.bin")).unwrap()
    );
    // ten stages of one epoch each
    assert_eq!(fs::read_to_string(run.join("metrics.csv")).unwrap().lines().count(), 11);
}

#[test]
fn config_errors_are_coded() {
    let env = Env::new();
    let bad = env.config("bad.json", r#", "variant": "sepXY""#);
    assert_eq!(env.err_code(&["train", "--config", &bad, "--seed", "1"]), "E_CONFIG");
    let unknown = env.config("unknown.json", r#", "variant": "sep", "learning_rat": 0.1"#);
    let out = env.run(&["train", "--config", &unknown, "--seed", "1"]);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("E_CONFIG") && err.contains("unknown.json:1"), "{err}");
    assert_eq!(
        env.err_code(&["train", "--config", &env.path("nope.json"), "--seed", "1"]),
        "E_IO"
    );
    assert_eq!(env.err_code(&["train", "--seed", "1"]), "E_USAGE");
    assert_eq!(env.run(&["train", "--seed", "1"]).status.code(), Some(2));
}

#[test]
fn summarize_respects_the_budget() {
    let env = Env::new();
    let cfg = env.config("sep.json", r#", "variant": "sep""#);
    let run = env.train(&cfg, "2", &env.path("o")).remove(0);
    let model = run.join("final.bin");
    let model = model.to_str().unwrap();
    let manifest = env.path("data/manifest.json");
    let summarize = |alpha: &str| {
        env.ok(&[
            "summarize",
            "--model",
            model,
            "--manifest",
            &manifest,
            "--video",
            "synth_003",
            "--alpha",
            alpha,
        ])
    };

    let first = summarize("0.15");
    assert_eq!(first, summarize("0.15"));
    let s = json(&first);
    assert_eq!(s["video_id"], "synth_003");
    let native: Vec<bool> = serde_json::from_value(s["native_mask"].clone()).unwrap();
    let budget = (0.15 * native.len() as f64 + 1e-9).floor() as u64;
    assert_eq!(s["budget"].as_u64().unwrap(), budget);
    let length = s["total_length"].as_u64().unwrap();
    assert!(length <= budget);
    assert_eq!(native.iter().filter(|v| **v).count() as u64, length);

    let wide = json(&summarize("0.99"));
    assert!(wide["total_length"].as_u64().unwrap() <= wide["budget"].as_u64().unwrap());

    let base = ["summarize", "--model", model, "--manifest", &manifest];
    assert_eq!(
        env.err_code(&[&base[..], &["--video", "synth_999"]].concat()),
        "E_LOOKUP"
    );
    assert_eq!(
        env.err_code(&[&base[..], &["--video", "synth_003", "--alpha", "1.5"]].concat()),
        "E_CONFIG"
    );
    let missing = env.path("missing.bin");
    assert_eq!(
        env.err_code(&[
            "summarize",
            "--model",
            &missing,
            "--manifest",
            &manifest,
            "--video",
            "synth_003"
        ]),
        "E_IO"
    );
}

#[test]
fn evaluate_reports_every_level_and_leaves_the_dataset_alone() {
    let env = Env::new();
    let before = snapshot(&env.root.join("data"));
    let cfg = env.config("sep.json", r#", "variant": "sep""#);
    let mut runs = env.train(&cfg, "1", &env.path("o"));
    runs.extend(env.train(&cfg, "2", &env.path("o")));
    let run_args: Vec<&str> = runs.iter().map(|r| r.to_str().unwrap()).collect();
    let out = env.path("report");
    let manifest = env.path("data/manifest.json");
    let args = [
        &["evaluate", "--manifest", &manifest, "--out", &out, "--runs"][..],
        &run_args,
    ]
    .concat();
    let table = env.ok(&args);
    assert!(table.contains("SUM-SR_sep "), "{table}");
    let csv = fs::read_to_string(env.root.join("report/eval.csv")).unwrap();
    let kinds: Vec<&str> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    let count = |k: &str| kinds.iter().filter(|x| **x == k).count();
    // 8 videos, 2 test videos per split
    assert_eq!(
        (count("video"), count("split"), count("seed"), count("aggregate")),
        (8, 4, 2, 1)
    );
    assert_eq!(
        fs::read_to_string(env.root.join("report/table.txt")).unwrap().trim(),
        table.trim()
    );
    assert_eq!(snapshot(&env.root.join("data")), before);

    let ghost = env.path("o/ghost");
    assert_eq!(
        env.err_code(&["evaluate", "--manifest", &manifest, "--runs", &ghost]),
        "E_LOOKUP"
    );
}

#[test]
fn curves_follow_selection_csv() {
    let env = Env::new();
    let cfg = env.config("sepma.json", r#", "variant": "sepMa", "epochs_per_stage": 4"#);
    let run = env.train(&cfg, "1", &env.path("o")).remove(0);
    let dir = run.to_str().unwrap();
    env.ok(&["curves", "--run", dir]);
    let csv = fs::read_to_string(run.join("curves.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let svg = fs::read_to_string(run.join("curves.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
    assert_eq!(env.err_code(&["curves", "--run", &env.path("o")]), "E_LOOKUP");
}

#[test]
fn parallel_splits_match_sequential_ones() {
    let env = Env::new();
    let cfg = env.config("sep.json", r#", "variant": "sep""#);
    let seq = env.train(&cfg, "3", &env.path("seq"));
    let par: Vec<PathBuf> = env
        .ok(&[
            "train",
            "--config",
            &cfg,
            "--seed",
            "3",
            "--jobs",
            "2",
            "--output",
            &env.path("par"),
        ])
        .lines()
        .map(PathBuf::from)
        .collect();
    assert_eq!(seq.len(), par.len());
    for (s, p) in seq.iter().zip(&par) {
        assert_eq!(snapshot(s), snapshot(p));
    }
}

#[test]
fn output_root_defaults_to_the_environment() {
    let env = Env::new();
    let cfg = env.config("sep.json", r#", "variant": "sep""#);
    let runs = env.ok(&["train", "--config", &cfg, "--seed", "1", "--split", "0"]);
    assert!(Path::new(runs.trim()).starts_with(env.root.join("env-out")), "{runs}");
    assert!(env.root.join("env-out/sep/split0/seed1/final.bin").is_file());
}
