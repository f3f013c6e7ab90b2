//! Trains one variant on a synthetic planted-event dataset and compares the
//! test F-score with random shot selection.
//!
//! Usage: `cargo run --release --example synth_run -- [seed] [epochs] [lr] [variant]`

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sumsr_core::checkpoint::{decode_checkpoint, CheckpointStore, MemoryStore, StageKind};
use sumsr_core::dataset::{make_splits, synth_generate, ReferenceSummaries};
use sumsr_core::evaluation::{evaluate_split, video_fscore};
use sumsr_core::summarizer::{knapsack_select, SegmentedVideo};
use sumsr_core::training::{run_variant, TrainingConfig, TrainingRunRecord};

fn main() -> sumsr_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-4);
    let variant = args
        .get(4)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(sumsr_core::training::Variant::SepMa);

    let synth = synth_generate(20, 120, 32, 3, 0.1, seed)?;
    let ids = synth.dataset.ids();
    let split = make_splits(&ids, 1, 0.2, 0.2, seed)?.remove(0);
    let cfg = TrainingConfig {
        variant,
        iterations: 5,
        epochs_per_stage: epochs,
        learning_rate: lr,
        d: 32,
        d_h: 16,
        seed,
        alpha: std::env::var("SYNTH_ALPHA")
            .ok()
            .and_then(|a| a.parse().ok())
            .unwrap_or(0.15),
        ..TrainingConfig::default()
    };
    let start = Instant::now();
    let mut store = MemoryStore::new();
    let run = run_variant(&cfg, &synth.dataset, &split, &mut store)?;
    let selector = run.final_model.selector.as_ref().expect("selector");

    let records = synth.dataset.subset(&split.test_ids)?;
    let videos = SegmentedVideo::prepare_all(&records, &cfg.kts)?;
    let pairs: Vec<_> = videos.iter().zip(&records).map(|(v, r)| (v, &r.references)).collect();
    let eval = evaluate_split(selector, &pairs, cfg.alpha, None)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xBA5E);
    let mut baseline = 0.0;
    for (v, refs) in &pairs {
        let lengths = &v.segmentation.shot_lengths_native;
        let budget = sumsr_core::summarizer::budget_for(cfg.alpha, v.n_frames_original);
        let mut total = 0.0;
        for _ in 0..1000 {
            let values: Vec<f64> = (0..lengths.len()).map(|_| rng.random::<f64>()).collect();
            let chosen = knapsack_select(&values, lengths, budget)?;
            let mut mask = vec![false; v.n_frames_original];
            let mut pos = 0;
            for (k, &len) in lengths.iter().enumerate() {
                if chosen[k] {
                    mask[pos..pos + len].iter_mut().for_each(|f| *f = true);
                }
                pos += len;
            }
            total += video_fscore(&mask, refs)?;
        }
        baseline += total / 1000.0;
    }
    baseline /= pairs.len() as f64;
    if std::env::var_os("SYNTH_DIAG").is_some() {
        print_epoch_diagnostics(&run, &store, &videos, &pairs, cfg.alpha)?;
    }
    for o in &run.iterations {
        println!(
            "iter {} epoch {} val_recon {:.4}",
            o.iteration, o.selected_epoch, o.val_recon
        );
    }
    println!(
        "seed {seed} model F {:.2} random F {:.2} gap {:.2} ({:.1}s)",
        eval.split_mean,
        baseline,
        eval.split_mean - baseline,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

/// Per-epoch metrics, then test F and mean score of every ranked checkpoint.
fn print_epoch_diagnostics(
    run: &TrainingRunRecord,
    store: &MemoryStore,
    videos: &[SegmentedVideo],
    pairs: &[(&SegmentedVideo, &ReferenceSummaries)],
    alpha: f64,
) -> sumsr_core::Result<()> {
    for m in run.metrics() {
        println!("{}", m.csv_row());
    }
    for key in store.keys() {
        if key.stage != StageKind::Selector && key.stage != StageKind::Joint {
            continue;
        }
        let (_, state) = decode_checkpoint(&store.get(key)?)?;
        let s = state.selector.expect("selector");
        let e = evaluate_split(&s, pairs, alpha, None)?;
        let o = run.outcome(key.iteration).expect("outcome");
        let i = key.epoch - 1;
        let mut mean_p = 0.0;
        for v in videos {
            let sc = s.scores(&v.features)?;
            mean_p += sc.iter().sum::<f64>() / sc.len() as f64;
        }
        mean_p /= videos.len() as f64;
        println!(
            "it {} ep {:3} testF {:6.2} meanp {:.3} val_recon {:9.3} val_spar {:.4} diff {:+.3}",
            key.iteration,
            key.epoch,
            e.split_mean,
            mean_p,
            o.record.recon_mean[i],
            o.record.spar_mean[i],
            o.record.recon_norm[i] - o.record.spar_norm[i]
        );
    }
    Ok(())
}
