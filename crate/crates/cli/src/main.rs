//! Batch driver: generate, corrupt, predict, estimate, eval, scale-sweep.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use normnet::io;
use normnet::pipeline::{self, SceneEstimate};
use normnet::predictor::{PointPredictor, StoredPredictions};
use normnet::scenegen::{self, LabeledScene};
use normnet::simtoreal::{MaskGenConfig, MaskSource};
use normnet::ObjectModel;

use config::CliConfig;

const SCENE_FILE: &str = "scene.json";
const TRANSFERRED_LABELS: &str = "transferred_labels.jsonl";

#[derive(Parser, Debug)]
#[command(name = "normnet", version, about = "Scale-normalized pose estimation pipeline driver")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Serialize)]
struct Common {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Scene-level worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug, Serialize)]
enum Command {
    /// Write the object catalog as JSON.
    Catalog {
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate labeled stacked scenes.
    Generate {
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply the Sim-to-Real corruption chain; outputs go beside each scene.
    Corrupt {
        #[arg(long)]
        scenes: PathBuf,
        /// Directory of fake depth images named `<scene id>.pfm` or `.pgm`.
        #[arg(long)]
        external_masks: Option<PathBuf>,
    },
    /// Dump oracle predictions as JSON lines, one file per scene.
    Predict {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = CloudSource::Synthetic)]
        cloud: CloudSource,
    },
    /// Recover instance poses for every scene.
    Estimate {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `oracle` or a directory of `<scene id>.jsonl` prediction files.
        #[arg(long, default_value = "oracle")]
        predictions: String,
        #[arg(long, value_enum)]
        sncs: Option<Switch>,
        #[arg(long, value_enum, default_value_t = CloudSource::Synthetic)]
        cloud: CloudSource,
    },
    /// Per-object AP and mAP.
    Eval {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        estimates: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fail when a scene with relevant instances has no estimates.
        #[arg(long)]
        strict: bool,
    },
    /// AP against object scale with normalization on and off.
    ScaleSweep {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
enum Switch {
    On,
    Off,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
enum CloudSource {
    Synthetic,
    Transferred,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Invariant(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Invariant(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Data(e) | Failure::Invariant(e) => e,
        }
    }
}

trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn data(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
    fn data(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Data(e.into()))
    }
}

fn invariant(ok: bool, what: impl FnOnce() -> String) -> Result<(), Failure> {
    if ok {
        Ok(())
    } else {
        Err(Failure::Invariant(anyhow!(what())))
    }
}

struct Context_ {
    config: CliConfig,
    catalog: Vec<ObjectModel>,
    workers: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match std::panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(f)) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
        Err(_) => ExitCode::from(3),
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let mut config = CliConfig::load(cli.common.config.as_deref()).usage()?;
    if let Some(seed) = cli.common.seed {
        config.pipeline.seed = seed;
    }
    if let Some(w) = cli.common.workers {
        config.workers = w;
    }
    if let Command::Estimate { sncs: Some(s), .. } = &cli.command {
        config.pipeline.normalize = *s == Switch::On;
    }
    config.validate().usage()?;
    let catalog = config::load_catalog(config.catalog.as_deref())
        .with_context(|| match &config.catalog {
            Some(p) => format!("loading catalog {}", p.display()),
            None => "building the built-in catalog".to_string(),
        })
        .usage()?;
    let ctx = Context_ {
        workers: config.workers.max(1),
        config,
        catalog,
    };
    match &cli.command {
        Command::Catalog { out } => {
            prepare_out(out)?;
            io::write_json(&out.join("catalog.json"), &ctx.catalog).data()?;
            write_manifest(out, "catalog", cli, &ctx.config)
        }
        Command::Generate { count, out } => cmd_generate(&ctx, *count, out, cli),
        Command::Corrupt { scenes, external_masks } => cmd_corrupt(&ctx, scenes, external_masks.as_deref(), cli),
        Command::Predict { scenes, out, cloud } => cmd_predict(&ctx, scenes, out, *cloud, cli),
        Command::Estimate {
            scenes,
            out,
            predictions,
            cloud,
            ..
        } => cmd_estimate(&ctx, scenes, out, predictions, *cloud, cli),
        Command::Eval {
            scenes,
            estimates,
            out,
            strict,
        } => cmd_eval(&ctx, scenes, estimates, out, *strict, cli),
        Command::ScaleSweep { out } => cmd_scale_sweep(&ctx, out, cli),
    }
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .data()
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    args: &'a Command,
    config: &'a CliConfig,
}

/// Records the resolved configuration next to a command's outputs.
fn write_manifest(dir: &Path, command: &str, cli: &Cli, config: &CliConfig) -> Result<(), Failure> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: config.pipeline.seed,
        args: &cli.command,
        config,
    };
    io::write_json(&dir.join(format!("manifest-{command}.json")), &manifest).data()?;
    let text = config.to_toml().map_err(Failure::Invariant)?;
    io::atomic_write(&dir.join(format!("config-{command}.toml")), text.as_bytes()).data()
}

/// Scene directories (those holding a `scene.json`), sorted by name.
fn scene_dirs(root: &Path) -> Result<Vec<PathBuf>, Failure> {
    let entries = std::fs::read_dir(root)
        .with_context(|| format!("reading scenes directory {}", root.display()))
        .data()?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.with_context(|| format!("listing {}", root.display())).data()?.path();
        if path.join(SCENE_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn load_scene(dir: &Path, cloud: CloudSource) -> normnet::Result<LabeledScene> {
    let mut scene = scenegen::load_scene(dir)?;
    if cloud == CloudSource::Transferred {
        scene.points = io::read_jsonl(&dir.join(TRANSFERRED_LABELS))?;
    }
    Ok(scene)
}

fn collect<T>(results: Vec<Result<T, Failure>>) -> Result<Vec<T>, Failure> {
    results.into_iter().collect()
}

fn cmd_generate(ctx: &Context_, count: usize, out: &Path, cli: &Cli) -> Result<(), Failure> {
    prepare_out(out)?;
    let indices: Vec<usize> = (0..count).collect();
    let results = pipeline::parallel_map(&indices, ctx.workers, |&i| -> Result<String, Failure> {
        let scene = pipeline::scene_for_index(&ctx.config.pipeline, &ctx.catalog, i).data()?;
        for w in &scene.warnings {
            warn!("{}: {w}", scene.id);
        }
        let depth = scene
            .render(&ctx.catalog, ctx.config.pipeline.scenegen.splat_radius)
            .data()?
            .depth;
        scenegen::save_scene(&out.join(&scene.id), &scene, Some(&depth)).data()?;
        Ok(scene.id)
    });
    let ids = collect(results)?;
    info!("generated {} scenes in {}", ids.len(), out.display());
    write_manifest(out, "generate", cli, &ctx.config)
}

fn cmd_corrupt(ctx: &Context_, root: &Path, external: Option<&Path>, cli: &Cli) -> Result<(), Failure> {
    let dirs = scene_dirs(root)?;
    let cfg = &ctx.config.pipeline;
    let results = pipeline::parallel_map(&dirs, ctx.workers, |dir| -> Result<(), Failure> {
        let scene = scenegen::load_scene(dir).data()?;
        let source = match external {
            Some(masks) => {
                let pfm = masks.join(format!("{}.pfm", scene.id));
                let path = if pfm.is_file() { pfm } else { masks.join(format!("{}.pgm", scene.id)) };
                MaskSource::External(path)
            }
            None => MaskSource::Parametric(MaskGenConfig {
                seed: pipeline::derive_seed(cfg.mask.seed, scene.seed),
                ..cfg.mask.clone()
            }),
        };
        let t = pipeline::transfer_scene(
            &scene,
            &ctx.catalog,
            &source,
            cfg.cloud_noise,
            pipeline::derive_seed(cfg.seed, scene.seed),
            cfg.scenegen.points_per_scene,
            cfg.scenegen.splat_radius,
        )
        .with_context(|| format!("corrupting {}", dir.display()))
        .data()?;
        for w in &t.scene.warnings {
            warn!("{}: {w}", scene.id);
        }
        t.scan.mask.write_pgm(&dir.join("mask.pgm")).data()?;
        io::write_pfm(&dir.join("transferred_depth.pfm"), &t.scan.depth).data()?;
        io::write_ply(&dir.join("transferred_cloud.ply"), &t.scan.cloud).data()?;
        io::write_jsonl(&dir.join(TRANSFERRED_LABELS), &t.scene.points).data()
    });
    collect(results)?;
    info!("corrupted {} scenes", dirs.len());
    write_manifest(root, "corrupt", cli, &ctx.config)
}

fn cmd_predict(ctx: &Context_, root: &Path, out: &Path, cloud: CloudSource, cli: &Cli) -> Result<(), Failure> {
    prepare_out(out)?;
    let n = pipeline::class_count(&ctx.catalog).usage()?;
    let dirs = scene_dirs(root)?;
    let results = pipeline::parallel_map(&dirs, ctx.workers, |dir| -> Result<(), Failure> {
        let scene = load_scene(dir, cloud).data()?;
        let preds = pipeline::scene_oracle(&scene, &ctx.config.pipeline, n).predict(&scene).data()?;
        io::write_jsonl(&out.join(format!("{}.jsonl", scene.id)), &preds).data()
    });
    collect(results)?;
    write_manifest(out, "predict", cli, &ctx.config)
}

fn cmd_estimate(
    ctx: &Context_,
    root: &Path,
    out: &Path,
    predictions: &str,
    cloud: CloudSource,
    cli: &Cli,
) -> Result<(), Failure> {
    prepare_out(out)?;
    let n = pipeline::class_count(&ctx.catalog).usage()?;
    let from_files = (predictions != "oracle").then(|| PathBuf::from(predictions));
    if let Some(dir) = &from_files {
        if !dir.is_dir() {
            return Err(Failure::Usage(anyhow!("predictions directory {} not found", dir.display())));
        }
    }
    let dirs = scene_dirs(root)?;
    let cfg = &ctx.config.pipeline;
    let results = pipeline::parallel_map(&dirs, ctx.workers, |dir| -> Result<(), Failure> {
        let scene = load_scene(dir, cloud).data()?;
        let estimate = match &from_files {
            Some(pdir) => {
                let path = pdir.join(format!("{}.jsonl", scene.id));
                let stored = StoredPredictions::load(&path).data()?;
                pipeline::run_scene(&scene, &stored, &ctx.catalog, cfg)
            }
            None => pipeline::run_scene(&scene, &pipeline::scene_oracle(&scene, cfg, n), &ctx.catalog, cfg),
        }
        .with_context(|| format!("estimating {}", scene.id))
        .data()?;
        for c in &estimate.categories {
            for e in &c.estimates {
                invariant(
                    (0.0..=1.0).contains(&e.confidence) && e.support >= cfg.aggregation.min_cluster_size,
                    || format!("{}: estimate with confidence {} and support {}", scene.id, e.confidence, e.support),
                )?;
            }
        }
        io::write_json(&out.join(format!("{}.json", scene.id)), &estimate).data()
    });
    collect(results)?;
    info!("estimated {} scenes", dirs.len());
    write_manifest(out, "estimate", cli, &ctx.config)
}

fn cmd_eval(ctx: &Context_, root: &Path, est_dir: &Path, out: &Path, strict: bool, cli: &Cli) -> Result<(), Failure> {
    prepare_out(out)?;
    let dirs = scene_dirs(root)?;
    let scenes = collect(
        pipeline::parallel_map(&dirs, ctx.workers, |d| scenegen::load_scene(d).data()),
    )?;
    let known: std::collections::BTreeSet<&str> = scenes.iter().map(|s| s.id.as_str()).collect();
    let mut stray = Vec::new();
    for entry in std::fs::read_dir(est_dir)
        .with_context(|| format!("reading estimates {}", est_dir.display()))
        .data()?
    {
        let path = entry.data()?.path();
        if path.extension().is_some_and(|e| e == "json") {
            let stem = path.file_stem().unwrap_or_default().to_string_lossy().to_string();
            if !stem.starts_with("manifest") && !known.contains(stem.as_str()) {
                stray.push(stem);
            }
        }
    }
    if !stray.is_empty() {
        return Err(Failure::Data(anyhow!("estimates for unknown scenes: {}", stray.join(", "))));
    }

    let matching = &ctx.config.pipeline.matching;
    let mut estimates = Vec::with_capacity(scenes.len());
    let mut lacking = Vec::new();
    for scene in &scenes {
        let path = est_dir.join(format!("{}.json", scene.id));
        let est: SceneEstimate = if path.is_file() {
            io::read_json(&path).data()?
        } else {
            SceneEstimate {
                scene_id: scene.id.clone(),
                categories: Vec::new(),
            }
        };
        let relevant = scene.instances.iter().any(|i| i.visibility > matching.relevance_visibility);
        let empty = est.categories.iter().all(|c| c.estimates.is_empty());
        if relevant && empty {
            lacking.push(scene.id.clone());
        }
        estimates.push(est);
    }
    if !lacking.is_empty() {
        warn!("scenes with relevant instances but no estimates: {}", lacking.join(", "));
    }
    let pairs: Vec<(&LabeledScene, &SceneEstimate)> = scenes.iter().zip(&estimates).collect();
    let report = pipeline::evaluate(&pairs, &ctx.catalog, matching).data()?;
    invariant((0.0..=1.0).contains(&report.map), || format!("mAP {} outside [0, 1]", report.map))?;

    io::write_json(&out.join("report.json"), &report).data()?;
    let mut ap = String::from("model_id,name,relevant,ap\n");
    let mut curves = String::from("model_id,rank,recall,precision\n");
    for o in &report.objects {
        let _ = writeln!(ap, "{},{},{},{}", o.model_id, o.name, o.relevant, o.ap);
        for (k, p) in o.curve.points.iter().enumerate() {
            let _ = writeln!(curves, "{},{},{},{}", o.model_id, k + 1, p.recall, p.precision);
        }
    }
    let _ = writeln!(ap, ",mAP,,{}", report.map);
    io::atomic_write(&out.join("ap.csv"), ap.as_bytes()).data()?;
    io::atomic_write(&out.join("pr_curves.csv"), curves.as_bytes()).data()?;
    write_manifest(out, "eval", cli, &ctx.config)?;
    println!("mAP {:.6}", report.map);
    for o in &report.objects {
        println!("  {:>3} {:<12} AP {:.6} ({} relevant)", o.model_id, o.name, o.ap, o.relevant);
    }
    if strict && !lacking.is_empty() {
        return Err(Failure::Data(anyhow!(
            "strict: {} scene(s) lack estimates: {}",
            lacking.len(),
            lacking.join(", ")
        )));
    }
    Ok(())
}

fn cmd_scale_sweep(ctx: &Context_, out: &Path, cli: &Cli) -> Result<(), Failure> {
    prepare_out(out)?;
    let rows = pipeline::scale_sweep(&ctx.catalog, &ctx.config.sweep, &ctx.config.pipeline).data()?;
    let mut csv = String::from("scale,ap_sncs_on,ap_sncs_off\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{}", r.scale, r.ap_sncs, r.ap_raw);
        println!("scale {:.3} m: on {:.4} off {:.4}", r.scale, r.ap_sncs, r.ap_raw);
    }
    io::atomic_write(&out.join("sweep.csv"), csv.as_bytes()).data()?;
    io::write_json(&out.join("sweep.json"), &rows).data()?;
    write_manifest(out, "scale-sweep", cli, &ctx.config)
}
