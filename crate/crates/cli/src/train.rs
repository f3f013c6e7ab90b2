//! `train`: runs every configured split for one seed and writes the run directories.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};
use sumsr_core::checkpoint::{CheckpointKey, DirStore};
use sumsr_core::dataset::{load_dataset, load_splits, Dataset, SplitSpec};
use sumsr_core::selection::selection_diagnostics;
use sumsr_core::training::{run_variant, TrainingRunRecord};
use sumsr_core::Error;

use crate::config::{run_dir, RunConfig, RunRecord};
use crate::{write_file, Coded};

pub const SELECTION_HEADER: &str =
    "iteration,epoch,recon_mean,spar_mean,recon_norm,spar_norm,difference,chosen_epoch,chosen_iteration";

/// Checkpoint chosen in one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationChoice {
    pub iteration: usize,
    pub stage: String,
    pub selected_epoch: usize,
    pub reference_epoch: usize,
    pub val_recon: f64,
    /// Relative to the run directory.
    pub checkpoint: PathBuf,
}

/// Contents of `final.json`, the marker naming the selected model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalMarker {
    pub variant: String,
    pub final_iteration: usize,
    pub checkpoint: PathBuf,
    pub iterations: Vec<IterationChoice>,
}

fn checkpoint_path(key: CheckpointKey) -> PathBuf {
    Path::new("ckpt").join(key.relative_path())
}

pub fn selection_csv(run: &TrainingRunRecord) -> String {
    let mut out = format!("{SELECTION_HEADER}\n");
    for o in &run.iterations {
        for row in selection_diagnostics(&o.record) {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                o.iteration,
                row.epoch,
                row.recon_mean,
                row.spar_mean,
                row.recon_norm,
                row.spar_norm,
                row.difference,
                u8::from(row.epoch == o.selected_epoch),
                u8::from(o.iteration == run.final_iteration),
            ));
        }
    }
    out
}

pub fn final_marker(run: &TrainingRunRecord) -> FinalMarker {
    FinalMarker {
        variant: run.config.variant.as_str().to_string(),
        final_iteration: run.final_iteration,
        checkpoint: checkpoint_path(run.final_key),
        iterations: run
            .iterations
            .iter()
            .map(|o| IterationChoice {
                iteration: o.iteration,
                stage: o.stage.as_str().to_string(),
                selected_epoch: o.selected_epoch,
                reference_epoch: o.reference_epoch,
                val_recon: o.val_recon,
                checkpoint: checkpoint_path(o.key()),
            })
            .collect(),
    }
}

fn find_split(splits: &[SplitSpec], id: usize) -> Result<&SplitSpec, Error> {
    splits
        .iter()
        .find(|s| s.split_id == id)
        .ok_or_else(|| Error::Lookup(format!("split {id} not in split file")))
}

/// Trains one split and fills its run directory.
pub fn train_split(cfg: &RunConfig, dataset: &Dataset, split: &SplitSpec, root: &Path) -> anyhow::Result<PathBuf> {
    let dir = run_dir(root, &cfg.training, split.split_id);
    let ckpt = dir.join("ckpt");
    // stale checkpoints from an earlier, longer run would confuse later readers
    if ckpt.exists() {
        fs::remove_dir_all(&ckpt).with_context(|| format!("clearing {}", ckpt.display()))?;
    }
    let record = RunRecord {
        training: cfg.training.clone(),
        manifest: cfg.manifest.clone(),
        splits: cfg.splits.clone(),
        split_id: split.split_id,
        aggregation_mode: cfg.aggregation_mode,
    };
    write_file(&dir.join("run.json"), serde_json::to_string_pretty(&record)?.as_bytes())?;
    let mut store = DirStore::new(&ckpt);
    let run = run_variant(&cfg.training, dataset, split, &mut store)?;
    write_file(&dir.join("metrics.csv"), run.metrics_csv().as_bytes())?;
    write_file(&dir.join("selection.csv"), selection_csv(&run).as_bytes())?;
    let marker = final_marker(&run);
    write_file(
        &dir.join("final.json"),
        serde_json::to_string_pretty(&marker)?.as_bytes(),
    )?;
    let bytes = fs::read(dir.join(&marker.checkpoint)).with_context(|| "reading the selected checkpoint")?;
    write_file(&dir.join("final.bin"), &bytes)?;
    Ok(dir)
}

pub struct TrainArgs<'a> {
    pub config: &'a Path,
    pub seed: u64,
    pub jobs: usize,
    pub output: Option<&'a Path>,
    /// Restricts the run to one split; used for child processes.
    pub split: Option<usize>,
}

pub fn train(args: &TrainArgs) -> anyhow::Result<Vec<PathBuf>> {
    let mut cfg = RunConfig::load(args.config)?;
    cfg.training.seed = args.seed;
    let root = cfg.output_root(args.output);
    let splits = load_splits(&cfg.splits)?;
    let ids: Vec<usize> = match (args.split, &cfg.split_ids) {
        (Some(id), _) => vec![id],
        (None, Some(ids)) => ids.clone(),
        (None, None) => splits.iter().map(|s| s.split_id).collect(),
    };
    for &id in &ids {
        find_split(&splits, id)?;
    }
    if args.jobs > 1 && ids.len() > 1 {
        return train_in_children(args, &root, &ids);
    }
    let dataset = load_dataset(&cfg.manifest)?;
    ids.iter()
        .map(|&id| train_split(&cfg, &dataset, find_split(&splits, id)?, &root))
        .collect()
}

/// Runs each split as a separate child process, at most `jobs` at a time.
fn train_in_children(args: &TrainArgs, root: &Path, ids: &[usize]) -> anyhow::Result<Vec<PathBuf>> {
    let exe = std::env::current_exe()?;
    let spawn = |id: usize| -> anyhow::Result<Child> {
        let mut cmd = Command::new(&exe);
        cmd.arg("train")
            .arg("--config")
            .arg(args.config)
            .arg("--seed")
            .arg(args.seed.to_string())
            .arg("--split")
            .arg(id.to_string())
            .arg("--output")
            .arg(root)
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        Ok(cmd.spawn()?)
    };
    let mut dirs = Vec::new();
    for batch in ids.chunks(args.jobs) {
        let children = batch.iter().map(|&id| spawn(id)).collect::<anyhow::Result<Vec<_>>>()?;
        for child in children {
            let out = child.wait_with_output()?;
            if !out.status.success() {
                let line = String::from_utf8_lossy(&out.stderr)
                    .lines()
                    .next()
                    .unwrap_or("")
                    .to_string();
                return Err(match line.split_once(": ") {
                    Some((code, msg)) if code.starts_with("E_") => Coded::new(code, msg).into(),
                    _ => anyhow!("child process failed: {line}"),
                });
            }
            dirs.extend(String::from_utf8_lossy(&out.stdout).lines().map(PathBuf::from));
        }
    }
    Ok(dirs)
}
