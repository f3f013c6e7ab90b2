//! `evaluate`: test-set F-scores for finished runs, aggregated over splits and seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sumsr_core::checkpoint::read_checkpoint;
use sumsr_core::dataset::{load_dataset, load_splits, AggregationMode, Dataset};
use sumsr_core::evaluation::{aggregate_seeds, evaluate_split, EvalResult};
use sumsr_core::networks::Selector;
use sumsr_core::summarizer::SegmentedVideo;
use sumsr_core::training::Variant;
use sumsr_core::Error;

use crate::config::RunRecord;
use crate::train::FinalMarker;
use crate::write_file;

pub const EVAL_HEADER: &str = "dataset,variant,split,seed,video_id,fscore,std,kind";
pub const ITERATIONS_HEADER: &str = "dataset,variant,split,seed,iteration,fscore,best_so_far";

/// Test results of one (variant, split, seed) run.
#[derive(Clone, Debug)]
pub struct RunEval {
    pub dataset: String,
    pub variant: Variant,
    /// Method name as printed in the tables.
    pub method: String,
    pub split: usize,
    pub seed: u64,
    pub result: EvalResult,
    /// Split-mean F of each iteration's selected model.
    pub per_iteration: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub runs: Vec<RunEval>,
    pub eval_csv: String,
    pub iterations_csv: String,
    pub table: String,
    pub iteration_table: String,
}

pub fn method_name(variant: Variant, iterations: usize) -> String {
    match variant {
        Variant::Joint => "SUM-SR".into(),
        Variant::Iter => format!("SUM-SR_{iterations}iter"),
        v => format!("SUM-SR_{}", v.as_str()),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).map_err(|_| Error::Lookup(format!("missing run file {}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())).into())
}

fn load_selector(path: &Path) -> anyhow::Result<Selector> {
    let (_, state) = read_checkpoint(path)?;
    Ok(state
        .selector
        .ok_or_else(|| Error::Data(format!("{} holds no selector", path.display())))?)
}

fn dataset_name(manifest: &Path) -> String {
    manifest
        .canonicalize()
        .ok()
        .and_then(|p| {
            p.parent()
                .and_then(|d| d.file_name())
                .map(|n| n.to_string_lossy().into_owned())
        })
        .unwrap_or_else(|| "dataset".into())
}

fn evaluate_run(dir: &Path, dataset: &Dataset, name: &str, mode: Option<AggregationMode>) -> anyhow::Result<RunEval> {
    let record: RunRecord = read_json(&dir.join("run.json"))?;
    let marker: FinalMarker = read_json(&dir.join("final.json"))?;
    let splits = load_splits(&record.splits)?;
    let split = splits
        .iter()
        .find(|s| s.split_id == record.split_id)
        .ok_or_else(|| Error::Lookup(format!("split {} not in {}", record.split_id, record.splits.display())))?;
    let test = dataset.subset(&split.test_ids)?;
    let videos = SegmentedVideo::prepare_all(&test, &record.training.kts)?;
    let pairs: Vec<_> = videos.iter().zip(test.iter().map(|r| &r.references)).collect();
    let mode = mode.or(record.aggregation_mode);
    let alpha = record.training.alpha;
    let result = evaluate_split(&load_selector(&dir.join("final.bin"))?, &pairs, alpha, mode)?;
    let per_iteration = marker
        .iterations
        .iter()
        .map(|c| Ok(evaluate_split(&load_selector(&dir.join(&c.checkpoint))?, &pairs, alpha, mode)?.split_mean))
        .collect::<anyhow::Result<Vec<f64>>>()?;
    Ok(RunEval {
        dataset: name.to_string(),
        variant: record.training.variant,
        method: method_name(record.training.variant, per_iteration.len()),
        split: record.split_id,
        seed: record.training.seed,
        result,
        per_iteration,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn running_max(v: &[f64]) -> Vec<f64> {
    v.iter()
        .scan(f64::NEG_INFINITY, |best, &x| {
            *best = best.max(x);
            Some(*best)
        })
        .collect()
}

/// (dataset, variant order, method) groups, each with its runs.
fn groups(runs: &[RunEval]) -> BTreeMap<(String, usize, String), Vec<&RunEval>> {
    let mut out: BTreeMap<_, Vec<&RunEval>> = BTreeMap::new();
    for r in runs {
        let order = Variant::ALL.iter().position(|v| *v == r.variant).unwrap_or(0);
        out.entry((r.dataset.clone(), order, r.method.clone()))
            .or_default()
            .push(r);
    }
    out
}

/// Mean over splits for each seed, in seed order.
fn seed_means(runs: &[&RunEval]) -> BTreeMap<u64, f64> {
    let mut by_seed: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in runs {
        by_seed.entry(r.seed).or_default().push(r.result.split_mean);
    }
    by_seed.into_iter().map(|(s, v)| (s, mean(&v))).collect()
}

fn seed_aggregate(runs: &[&RunEval]) -> EvalResult {
    let per_seed: Vec<EvalResult> = seed_means(runs)
        .values()
        .map(|&m| EvalResult {
            split_mean: m,
            ..Default::default()
        })
        .collect();
    aggregate_seeds(&per_seed)
}

fn eval_csv(runs: &[RunEval]) -> String {
    let mut out = format!("{EVAL_HEADER}\n");
    for ((dataset, _, method), group) in groups(runs) {
        for r in &group {
            for (vid, f) in &r.result.per_video_f {
                let _ = writeln!(out, "{dataset},{method},{},{},{vid},{f},,video", r.split, r.seed);
            }
            let _ = writeln!(
                out,
                "{dataset},{method},{},{},,{},,split",
                r.split, r.seed, r.result.split_mean
            );
        }
        for (seed, m) in seed_means(&group) {
            let _ = writeln!(out, "{dataset},{method},,{seed},,{m},,seed");
        }
        let agg = seed_aggregate(&group);
        let _ = writeln!(
            out,
            "{dataset},{method},,,,{},{},aggregate",
            agg.split_mean, agg.seed_std
        );
    }
    out
}

fn iterations_csv(runs: &[RunEval]) -> String {
    let mut out = format!("{ITERATIONS_HEADER}\n");
    for ((dataset, _, method), group) in groups(runs) {
        for r in group {
            for (i, (f, best)) in r.per_iteration.iter().zip(running_max(&r.per_iteration)).enumerate() {
                let _ = writeln!(out, "{dataset},{method},{},{},{},{f},{best}", r.split, r.seed, i + 1);
            }
        }
    }
    out
}

/// Methods as rows, datasets as columns, cells `mean ± std` over seeds.
fn method_table(runs: &[RunEval]) -> String {
    let mut datasets: Vec<String> = runs.iter().map(|r| r.dataset.clone()).collect();
    datasets.sort();
    datasets.dedup();
    let mut rows: BTreeMap<(usize, String), BTreeMap<String, String>> = BTreeMap::new();
    for ((dataset, order, method), group) in groups(runs) {
        let agg = seed_aggregate(&group);
        rows.entry((order, method))
            .or_default()
            .insert(dataset, format!("{:.2} ± {:.2}", agg.split_mean, agg.seed_std));
    }
    let mut out = String::from("F-score (%)\n");
    let _ = write!(out, "{:<16}", "Method");
    for d in &datasets {
        let _ = write!(out, " | {d:<15}");
    }
    out.push('\n');
    let rule = format!("{}\n", "-".repeat(16 + 18 * datasets.len()));
    out.push_str(&rule);
    let iter_order = Variant::ALL.iter().position(|v| *v == Variant::Iter).unwrap();
    // the rule only separates the iterative method from the others
    let mut ruled = rows.keys().next().is_none_or(|(order, _)| *order == iter_order);
    for ((order, method), cells) in &rows {
        if *order == iter_order && !ruled {
            out.push_str(&rule);
            ruled = true;
        }
        let _ = write!(out, "{method:<16}");
        for d in &datasets {
            let _ = write!(out, " | {:<15}", cells.get(d).map(String::as_str).unwrap_or("-"));
        }
        out.push('\n');
    }
    out
}

/// For runs with several iterations: F per iteration per split (averaged
/// over seeds), their mean, and the best-so-far F averaged over runs.
fn iteration_table(runs: &[RunEval]) -> String {
    let mut out = String::new();
    for ((dataset, _, method), group) in groups(runs) {
        let n_iter = group.iter().map(|r| r.per_iteration.len()).max().unwrap_or(0);
        if n_iter < 2 {
            continue;
        }
        let mut splits: Vec<usize> = group.iter().map(|r| r.split).collect();
        splits.sort();
        splits.dedup();
        let _ = writeln!(out, "Per-iteration F-score (%), {dataset}, {method}");
        let _ = write!(out, "{:<9}", "iteration");
        for s in &splits {
            let _ = write!(out, " | split{s:<3}");
        }
        let _ = writeln!(out, " | {:<8} | best_so_far", "mean");
        let best: Vec<Vec<f64>> = group.iter().map(|r| running_max(&r.per_iteration)).collect();
        for it in 0..n_iter {
            let _ = write!(out, "{:<9}", it + 1);
            let mut all = Vec::new();
            for s in &splits {
                let vals: Vec<f64> = group
                    .iter()
                    .filter(|r| r.split == *s)
                    .filter_map(|r| r.per_iteration.get(it).copied())
                    .collect();
                all.extend(&vals);
                let _ = write!(out, " | {:<8.2}", mean(&vals));
            }
            let bests: Vec<f64> = best.iter().filter_map(|b| b.get(it).copied()).collect();
            let _ = writeln!(out, " | {:<8.2} | {:.2}", mean(&all), mean(&bests));
        }
        out.push('\n');
    }
    out
}

pub fn evaluate(
    run_dirs: &[PathBuf],
    manifest: &Path,
    mode: Option<AggregationMode>,
    out_dir: &Path,
) -> anyhow::Result<EvalReport> {
    if run_dirs.is_empty() {
        return Err(Error::Lookup("no run directories given".into()).into());
    }
    let dataset = load_dataset(manifest)?;
    let name = dataset_name(manifest);
    let runs = run_dirs
        .iter()
        .map(|d| evaluate_run(d, &dataset, &name, mode))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let report = EvalReport {
        eval_csv: eval_csv(&runs),
        iterations_csv: iterations_csv(&runs),
        table: method_table(&runs),
        iteration_table: iteration_table(&runs),
        runs,
    };
    write_file(&out_dir.join("eval.csv"), report.eval_csv.as_bytes())?;
    write_file(&out_dir.join("iterations.csv"), report.iterations_csv.as_bytes())?;
    write_file(
        &out_dir.join("table.txt"),
        format!("{}\n{}", report.table, report.iteration_table).as_bytes(),
    )?;
    Ok(report)
}
