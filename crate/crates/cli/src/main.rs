use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sumsr_cli::config::default_output_root;
use sumsr_cli::{curves, emit, error_line, evaluate, summarize, train};
use sumsr_core::dataset::{make_splits, save_dataset, save_splits, synth_generate, AggregationMode};

#[derive(Parser)]
#[command(
    name = "sumsr",
    version,
    about = "Unsupervised video summarization: train, summarize, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train every configured split for one seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Run splits as up to this many child processes.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output root; overrides the config file and $SUMSR_OUT.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Train only this split.
        #[arg(long)]
        split: Option<usize>,
    },
    /// Print the shot selection of one video as JSON.
    Summarize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        video: String,
        #[arg(long, default_value_t = 0.15)]
        alpha: f64,
    },
    /// Score finished runs on their test videos.
    Evaluate {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        /// max | mean | single; defaults to the run config, then each video's own mode.
        #[arg(long)]
        mode: Option<AggregationMode>,
        /// Where eval.csv and the tables go; defaults to $SUMSR_OUT.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Normalized loss curves of a run as CSV and SVG.
    Curves {
        #[arg(long)]
        run: PathBuf,
    },
    /// Write a planted-event synthetic dataset and a split file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        videos: usize,
        #[arg(long, default_value_t = 120)]
        frames: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 3)]
        events: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 5)]
        splits: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cmd: Cmd) -> anyhow::Result<()> {
    match cmd {
        Cmd::Train {
            config,
            seed,
            jobs,
            output,
            split,
        } => {
            let dirs = train::train(&train::TrainArgs {
                config: &config,
                seed,
                jobs: jobs.max(1),
                output: output.as_deref(),
                split,
            })?;
            let lines: Vec<String> = dirs.iter().map(|d| format!("{}\n", d.display())).collect();
            emit(&lines.concat())?;
        }
        Cmd::Summarize {
            model,
            manifest,
            video,
            alpha,
        } => {
            let export = summarize::summarize(&model, &manifest, &video, alpha)?;
            emit(&format!("{}\n", serde_json::to_string_pretty(&export)?))?;
        }
        Cmd::Evaluate {
            runs,
            manifest,
            mode,
            out,
        } => {
            let out = out.unwrap_or_else(default_output_root);
            let report = evaluate::evaluate(&runs, &manifest, mode, &out)?;
            let mut text = report.table.clone();
            if !report.iteration_table.is_empty() {
                text.push('\n');
                text.push_str(&report.iteration_table);
            }
            emit(&text)?;
        }
        Cmd::Curves { run } => {
            let points = curves::curves(&run)?;
            emit(&format!(
                "{} points written to {}\n",
                points.len(),
                run.join("curves.svg").display()
            ))?;
        }
        Cmd::Synth {
            out,
            videos,
            frames,
            dim,
            events,
            noise,
            splits,
            seed,
        } => {
            let data = synth_generate(videos, frames, dim, events, noise, seed)?.dataset;
            let manifest = save_dataset(&out, &data)?;
            let ids: Vec<String> = data.videos.iter().map(|v| v.sequence.video_id.clone()).collect();
            save_splits(&out.join("splits.json"), &make_splits(&ids, splits, 0.2, 0.2, seed)?)?;
            emit(&format!("{}\n", manifest.display()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // help and version requests
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let detail: Vec<&str> = text
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:"))
                .filter(|l| !l.is_empty() && !l.starts_with("For more information"))
                .collect();
            eprintln!("E_USAGE: {}", detail.join(" ").trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
