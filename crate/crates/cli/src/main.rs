use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use pandaface::alignment::align_detailed;
use pandaface::config::{PipelineConfig, RunConfig};
use pandaface::dataset::{check_closed_set, Manifest};
use pandaface::evaluation::{export_report, leave_one_out, LooOptions};
use pandaface::recognition::{
    enroll, identify, load_gallery, save_gallery, score_probe, verify, Pipeline, ScoreVector,
};
use pandaface::synth::{generate, write_dataset, SynthConfig};
use pandaface::Image;

#[derive(Parser)]
#[command(name = "pandaface", version, about = "Giant panda face recognition toolkit")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker threads (default: all available cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Seed for the synthetic fixture generator.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one classifier per image of a manifest and write a gallery.
    Enroll {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Output gallery file.
        #[arg(long, value_name = "PATH")]
        gallery: PathBuf,
        /// Fail unless every identity has at least two images.
        #[arg(long)]
        require_closed_set: bool,
    },
    /// Score a probe image against a gallery and print the ranking.
    Identify {
        #[arg(long, value_name = "PATH")]
        gallery: PathBuf,
        probe: PathBuf,
    },
    /// Accept or reject a claimed identity for a probe image.
    Verify {
        #[arg(long, value_name = "PATH")]
        gallery: PathBuf,
        probe: PathBuf,
        /// Claimed identity.
        #[arg(long)]
        claim: String,
        /// Accept when the best score for the claimed identity reaches this value.
        #[arg(long, allow_hyphen_values = true)]
        threshold: f64,
    },
    /// Leave-one-out evaluation of a closed-set manifest.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Report directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Extra FAR operating points for the summary (repeatable).
        #[arg(long = "far", value_name = "REAL")]
        fars: Vec<f64>,
        /// Align every ordered image pair once and reuse it across folds.
        #[arg(long)]
        cache_alignments: bool,
    },
    /// Generate a synthetic dataset with a manifest.
    Synth {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        ids: usize,
        #[arg(long, default_value_t = 6)]
        per_id: usize,
        #[arg(long, default_value_t = 100)]
        width: usize,
        #[arg(long, default_value_t = 100)]
        height: usize,
    },
    /// Print the effective configuration as JSON, or write it to a file.
    Config {
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Dump the feature vector of one image (f32 little-endian plus a JSON layout).
    Extract {
        image: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Align one image onto another and write the warped result as PNG.
    Align {
        source: PathBuf,
        target: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PANDAFACE_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn effective_config(global: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if global.threads.is_some() {
        cfg.threads = global.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = effective_config(&cli.global)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Enroll {
            manifest,
            gallery,
            require_closed_set,
        } => cmd_enroll(&cfg, &manifest, &gallery, require_closed_set),
        Command::Identify { gallery, probe } => cmd_identify(&gallery, &probe),
        Command::Verify {
            gallery,
            probe,
            claim,
            threshold,
        } => cmd_verify(&gallery, &probe, &claim, threshold),
        Command::Evaluate {
            manifest,
            out,
            fars,
            cache_alignments,
        } => cmd_evaluate(&cfg, &manifest, &out, &fars, cache_alignments),
        Command::Synth {
            out,
            ids,
            per_id,
            width,
            height,
        } => cmd_synth(&cfg, &out, ids, per_id, width, height),
        Command::Config { out } => cmd_config(&cfg, out.as_deref()),
        Command::Extract { image, out } => cmd_extract(&cfg.pipeline, &image, &out),
        Command::Align { source, target, out } => cmd_align(&cfg.pipeline, &source, &target, &out),
    }
}

fn load_resized(path: &Path, face_height: usize) -> Result<Image> {
    let img = Image::load(path)?;
    Ok(if img.height() == face_height {
        img
    } else {
        img.resize_to_height(face_height)?
    })
}

fn cmd_enroll(cfg: &RunConfig, manifest: &Path, out: &Path, require_closed_set: bool) -> Result<()> {
    let manifest = Manifest::read(manifest)?;
    if require_closed_set {
        check_closed_set(manifest.entries.iter().map(|e| e.panda_id.as_str()))?;
    }
    let images = manifest.load_images(cfg.pipeline.face_height)?;
    let pipeline = Pipeline::new(&cfg.pipeline)?;
    let start = Instant::now();
    let gallery = enroll(&images, &pipeline)?;
    info!("enrolled {} images in {:.1?}", gallery.len(), start.elapsed());
    save_gallery(&gallery, out).with_context(|| format!("writing gallery {}", out.display()))?;
    println!("enrolled {} entries", gallery.len());
    for (id, n) in manifest.identity_counts() {
        println!("{id}\t{n}");
    }
    Ok(())
}

fn probe_scores(gallery_path: &Path, probe_path: &Path) -> Result<ScoreVector> {
    let gallery = load_gallery(gallery_path).with_context(|| format!("reading gallery {}", gallery_path.display()))?;
    let pipeline = Pipeline::new(gallery.config())?;
    let probe = load_resized(probe_path, gallery.config().face_height)?;
    let scores = score_probe(&probe, &gallery, &pipeline)?;
    for (entry, reason) in &scores.failures {
        info!("entry {entry}: {reason}");
    }
    Ok(scores)
}

fn cmd_identify(gallery: &Path, probe: &Path) -> Result<()> {
    let scores = probe_scores(gallery, probe)?;
    let id = identify(&scores)?;
    println!("{}", id.panda_id);
    for (panda, score) in &id.ranking {
        println!("{panda}\t{score:.6}");
    }
    Ok(())
}

fn cmd_verify(gallery: &Path, probe: &Path, claim: &str, threshold: f64) -> Result<()> {
    let scores = probe_scores(gallery, probe)?;
    let v = verify(&scores, claim, threshold)?;
    println!("{}\t{:.6}", if v.accept { "accept" } else { "reject" }, v.score);
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, manifest: &Path, out: &Path, fars: &[f64], cache: bool) -> Result<()> {
    if let Some(f) = fars.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        bail!("--far {f} is outside [0, 1]");
    }
    let manifest = Manifest::read(manifest)?;
    check_closed_set(manifest.entries.iter().map(|e| e.panda_id.as_str()))?;
    let start = Instant::now();
    let images = manifest.load_images(cfg.pipeline.face_height)?;
    let pipeline = Pipeline::new(&cfg.pipeline)?;
    let result = leave_one_out(
        &images,
        &pipeline,
        LooOptions {
            cache_alignments: cache,
        },
    )?;
    let elapsed = start.elapsed().as_secs_f64();
    export_report(&result, out, fars, &cfg.pipeline.hash())?;
    let timing = serde_json::json!({
        "seconds": elapsed,
        "threads": rayon::current_num_threads(),
        "cache_alignments": cache,
    });
    fs::write(out.join("timing.json"), format!("{timing:#}\n"))?;
    println!("probes: {}", result.probes.len());
    println!("TAR@1%FAR: {:.4}", result.tar_at_far_1pct);
    println!("rank-1: {:.4}", result.rank(1));
    info!("evaluation took {elapsed:.1} s");
    Ok(())
}

fn cmd_synth(cfg: &RunConfig, out: &Path, ids: usize, per_id: usize, width: usize, height: usize) -> Result<()> {
    let ds = generate(&SynthConfig {
        ids,
        per_id,
        seed: cfg.seed,
        width,
        height,
        ..SynthConfig::default()
    })?;
    let manifest = write_dataset(&ds, out)?;
    println!("wrote {} images, manifest {}", ds.samples.len(), manifest.display());
    Ok(())
}

fn cmd_config(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, cfg.to_json()).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{}", cfg.to_json()),
    }
    Ok(())
}

fn cmd_extract(cfg: &PipelineConfig, image: &Path, out: &Path) -> Result<()> {
    let pipeline = Pipeline::new(cfg)?;
    let img = load_resized(image, cfg.face_height)?;
    let features = pipeline.extractor().extract(&img)?;
    features.write_dump(out)?;
    println!("{} values", features.len());
    Ok(())
}

fn cmd_align(cfg: &PipelineConfig, source: &Path, target: &Path, out: &Path) -> Result<()> {
    let pipeline = Pipeline::new(cfg)?;
    let source = load_resized(source, cfg.face_height)?;
    let target = load_resized(target, cfg.face_height)?;
    let target_kp = pipeline.keypoints(&target)?;
    let a = align_detailed(&source, &target_kp, target.dims(), cfg.sobel_threshold, &cfg.cpd)?;
    a.warped.save_png(out)?;
    let t = &a.transform;
    println!("linear {:?} translation {:?}", t.linear, t.translation);
    println!(
        "iterations {} sigma2 {:.6e} converged {}",
        a.diagnostics.iterations, a.diagnostics.sigma2, a.diagnostics.converged
    );
    Ok(())
}
