use std::fs;
use std::time::Instant;

use anyhow::{bail, Context};
use pcr::autotune::{log_to_csv, train_with_tuner};
use pcr::reader::IterOptions;
use pcr::sim::project_time_to_epoch;
use pcr::{fidelity_report, iterate, FidelityRequest, ImageDecoder, JpegDecoder, SimConfig};
use pcr::{TunePolicy, TuneSet};
use rayon::prelude::*;

use crate::{usage, with_threads, AutotuneArgs, BenchDecodeArgs, MssimArgs, SimulateArgs, SweepArgs};

pub fn bench_decode(args: &BenchDecodeArgs) -> anyhow::Result<()> {
    let g = args.group as usize;
    let mut corpus = Vec::new();
    for img in iterate(&args.path, FidelityRequest::new(g), IterOptions::from_env())? {
        corpus.push(img?.jpeg_bytes);
    }
    if corpus.is_empty() {
        bail!("no images under {}", args.path.display());
    }
    let n = corpus.len().max(args.min_images as usize);
    let start = Instant::now();
    let failures: usize = with_threads(args.threads as usize, || {
        (0..n)
            .into_par_iter()
            .map(|i| JpegDecoder.decode_rgb(&corpus[i % corpus.len()]).is_err() as usize)
            .sum()
    })?;
    let secs = start.elapsed().as_secs_f64();
    if failures > 0 {
        bail!("{failures} of {n} decodes failed");
    }
    let mean_bytes = corpus.iter().map(|c| c.len()).sum::<usize>() as f64 / corpus.len() as f64;
    println!("group,threads,images,seconds,images_per_sec,mean_bytes");
    println!("{g},{},{n},{secs:.6},{:.2},{mean_bytes:.1}", args.threads, n as f64 / secs);
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> anyhow::Result<()> {
    let (cfg, _) = SimConfig::from_file(&args.config)
        .with_context(|| args.config.display().to_string())?;
    let trace = pcr::simulate(&cfg)?;
    println!("images_per_sec   {:.3}", trace.images_per_sec);
    println!("stall_fraction   {:.6}", trace.stall_fraction);
    println!("virtual_seconds  {:.6}", trace.end_time as f64 / 1e9);
    println!("batches          {}", trace.batches.len());
    let epoch = project_time_to_epoch(&trace, cfg.epoch_images(&trace), 1.0);
    println!("epoch_seconds    {epoch:.3}");
    if !trace.settled {
        eprintln!("warning: run ended before the warm-up batches were done; throughput is not steady-state");
    }
    if let Some(path) = &args.trace {
        fs::write(path, trace.to_csv()).with_context(|| path.display().to_string())?;
    }
    Ok(())
}

pub fn sweep(args: &SweepArgs) -> anyhow::Result<()> {
    let (cfg, grid) = SimConfig::from_file(&args.config)
        .with_context(|| args.config.display().to_string())?;
    let Some(grid) = grid else {
        bail!("{} has no [sweep] table", args.config.display());
    };
    let result = pcr::sweep(&cfg, &grid);
    for (bw, g, e) in &result.errors {
        eprintln!("bandwidth {bw}, scan group {g}: {e}");
    }
    match &args.out {
        Some(p) => fs::write(p, result.to_csv()).with_context(|| p.display().to_string())?,
        None => print!("{}", result.to_csv()),
    }
    Ok(())
}

pub fn mssim(args: &MssimArgs) -> anyhow::Result<()> {
    let report = with_threads(args.threads, || {
        fidelity_report(&args.dataset, &JpegDecoder, args.max_images)
    })??;
    if report.groups.is_empty() {
        bail!("no images could be scored under {}", args.dataset.display());
    }
    if report.failures > 0 {
        eprintln!("{} of {} images had failed decodes or comparisons", report.failures, report.images);
    }
    print!("{}", report.to_csv());
    Ok(())
}

pub fn autotune(args: &AutotuneArgs) -> anyhow::Result<()> {
    if !(args.threshold > 0.0 && args.threshold <= 1.0) {
        return Err(usage("--threshold must be in (0, 1]"));
    }
    if !(args.lr > 0.0 && args.lr.is_finite()) {
        return Err(usage("--lr must be positive"));
    }
    let policy = TunePolicy {
        threshold: args.threshold,
        warmup_epochs: args.warmup,
        interval: args.interval as usize,
        budget: args.budget as usize,
        trials: args.trials as usize,
        seed: args.seed,
    };
    let set = TuneSet::from_records(&args.dataset, &JpegDecoder, args.max_images)?;
    if set.skipped > 0 {
        eprintln!("skipped {} unlabeled or undecodable images", set.skipped);
    }
    let (_, log) = train_with_tuner(&set, policy, args.epochs, args.lr)?;
    print!("{}", log_to_csv(&log));
    Ok(())
}
