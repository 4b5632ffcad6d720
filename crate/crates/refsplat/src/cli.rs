//! Command-line entry points.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use refsplat_core::gaussian::init_from_points;
use refsplat_core::optim::Trainer;
use refsplat_core::{AccumulationMode, RenderSettings};

use crate::checkpoint;
use crate::config::{Resolution, RunConfig};
use crate::dataset::{self, Dataset, Split, SplitRecord};
use crate::error::{Error, Result};
use crate::evalkit::{self, MetricsReport};
use crate::synth::{self, SyntheticSceneSpec};

pub const SPLIT_FILE: &str = "split.json";

#[derive(Debug, Parser)]
#[command(name = "refsplat", version, about = "Reflection-aware Gaussian splatting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a COLMAP dataset.
    Train(Common),
    /// Score a checkpoint on the held-out views.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory or PLY file (defaults to <out>/final).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Export composed / transmitted / reflected / reflection map / depth images.
    Decompose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Export renders with the reflection term scaled by each coefficient.
    Relight {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated coefficients.
        #[arg(long, value_delimiter = ',')]
        coefficients: Option<Vec<f64>>,
    },
    /// Write a synthetic mirror scene as a COLMAP dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        views: Option<usize>,
        #[arg(long)]
        reflection_strength: Option<f64>,
    },
}

/// Flags shared by every command; each mirrors a config-file key.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub mode: Option<AccumulationMode>,
    #[arg(long)]
    pub lambda_bi: Option<f64>,
    #[arg(long)]
    pub lambda_ref: Option<f64>,
    #[arg(long)]
    pub lambda_init: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub resolution: Option<Resolution>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub deterministic: bool,
}

impl Common {
    /// Defaults, then `base` (a stored run config), then `--config`, then flags.
    pub fn resolve(&self, base: Option<RunConfig>) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => base.unwrap_or_default(),
        };
        if let Some(v) = &self.data {
            cfg.data = Some(v.clone());
        }
        if let Some(v) = &self.out {
            cfg.out = Some(v.clone());
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.mode {
            cfg.train.mode = v;
        }
        if let Some(v) = self.lambda_bi {
            cfg.train.loss.lambda_bi = v;
        }
        if let Some(v) = self.lambda_ref {
            cfg.train.loss.lambda_ref = v;
        }
        if let Some(v) = self.lambda_init {
            cfg.train.loss.lambda_init = v;
        }
        if let Some(v) = self.gamma {
            cfg.train.loss.gamma = v;
        }
        if let Some(v) = self.resolution {
            cfg.resolution = v;
        }
        if let Some(v) = self.threads {
            cfg.threads = v;
        }
        if self.deterministic {
            cfg.deterministic = true;
        }
        if let Some(v) = self.iters {
            cfg.set_iters(v);
        }
        cfg.resolve()?;
        Ok(cfg)
    }
}

fn required(p: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    p.clone().ok_or_else(|| Error::Config(format!("missing --{flag} (or `{flag}` in the config file)")))
}

fn init_threads(n: usize) {
    if n > 0 {
        // a second call in the same process keeps the existing pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let data = required(&cfg.data, "data")?;
    let mut ds = dataset::load_colmap(&data)?;
    ds.resize((cfg.resolution.width, cfg.resolution.height));
    Ok(ds)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value).expect("serializable")).map_err(|e| Error::io(path, e))
}

fn save_checkpoint(dir: &Path, trainer: &Trainer, cfg: &RunConfig, split: &SplitRecord) -> Result<()> {
    checkpoint::save(dir, &trainer.cloud, &trainer.snapshot())?;
    cfg.write_to(dir)?;
    write_json(&dir.join(SPLIT_FILE), split)
}

pub fn cmd_train(common: &Common) -> Result<PathBuf> {
    let cfg = common.resolve(None)?;
    init_threads(cfg.threads);
    let out = required(&cfg.out, "out")?;
    let mut ds = load_dataset(&cfg)?;
    dataset::split_train_test(&mut ds, cfg.seed);
    let split = ds.split_record(cfg.seed);
    cfg.write_to(&out)?;
    write_json(&out.join(SPLIT_FILE), &split)?;

    let cloud = init_from_points(&ds.points, &ds.colors, cfg.sh_degree)?;
    let views = ds.views(Split::Train);
    log::info!("training on {} views ({} held out), {} initial Gaussians", views.len(), split.test.len(), cloud.len());
    let mut trainer = Trainer::new(cloud, views, cfg.train.clone(), cfg.seed)?;

    let log_path = out.join("loss_log.tsv");
    let mut log_file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(log_file, "iteration\tl_rgb\tl_init\tl_bi\tl_ref\ttotal\tgaussians\ttrain_psnr").map_err(|e| Error::io(&log_path, e))?;
    let mut logged = 0;
    while !trainer.is_done() {
        trainer.step()?;
        for r in &trainer.log[logged..] {
            writeln!(
                log_file,
                "{}\t{:.8}\t{:.8}\t{:.8}\t{:.8}\t{:.8}\t{}\t{:.4}",
                r.iteration, r.l_rgb, r.l_init, r.l_bi, r.l_ref, r.total, r.gaussians, r.train_psnr
            )
            .map_err(|e| Error::io(&log_path, e))?;
            log::info!("iter {} loss {:.5} psnr {:.2} gaussians {}", r.iteration, r.total, r.train_psnr, r.gaussians);
        }
        logged = trainer.log.len();
        let it = trainer.iteration();
        if it % cfg.checkpoint_interval == 0 && !trainer.is_done() {
            save_checkpoint(&checkpoint::iteration_dir(&out, it), &trainer, &cfg, &split)?;
        }
    }
    let final_dir = out.join("final");
    save_checkpoint(&final_dir, &trainer, &cfg, &split)?;
    Ok(final_dir)
}

/// Checkpoint directory (or PLY) and the run config stored next to it, if any.
fn checkpoint_config(common: &Common, checkpoint: &Option<PathBuf>) -> Result<(PathBuf, RunConfig)> {
    let stored_out = common.out.clone();
    let ck = match checkpoint {
        Some(p) => p.clone(),
        None => required(&stored_out, "out")?.join("final"),
    };
    let dir = if ck.is_dir() { ck.clone() } else { ck.parent().map(Path::to_path_buf).unwrap_or_default() };
    let stored = dir.join(crate::config::CONFIG_FILE);
    let base = if stored.is_file() { Some(RunConfig::load(&stored)?) } else { None };
    let mut cfg = common.resolve(base)?;
    // paths always come from this invocation, never from the stored run
    cfg.data = common.data.clone().or(cfg.data);
    cfg.out = common.out.clone();
    Ok((ck, cfg))
}

fn load_split(ck: &Path) -> Result<SplitRecord> {
    let dir = if ck.is_dir() { ck.to_path_buf() } else { ck.parent().map(Path::to_path_buf).unwrap_or_default() };
    let path = dir.join(SPLIT_FILE);
    if !path.is_file() {
        return Err(Error::Data(format!(
            "no {SPLIT_FILE} next to the checkpoint; re-split with the seed recorded in its run_config.toml (train --seed <seed>)"
        )));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.to_string()))
}

fn settings(cfg: &RunConfig) -> RenderSettings {
    cfg.train.render_settings()
}

pub fn cmd_eval(common: &Common, checkpoint: &Option<PathBuf>) -> Result<MetricsReport> {
    let (ck, cfg) = checkpoint_config(common, checkpoint)?;
    init_threads(cfg.threads);
    let out = required(&cfg.out, "out")?.join("eval");
    let cloud = checkpoint::load_cloud(&ck)?;
    let split = load_split(&ck)?;
    let mut ds = load_dataset(&cfg)?;
    ds.apply_split(&split)?;
    let test = ds.indices(Split::Test);
    if test.is_empty() {
        return Err(Error::Data("the test split is empty (datasets with fewer than 8 images have no held-out views)".into()));
    }
    let views: Vec<_> = test.iter().map(|&i| (ds.names[i].clone(), ds.cameras[i].clone(), ds.images[i].clone())).collect();
    let s = settings(&cfg);
    let rows = evalkit::evaluate_views(&cloud, &views, &s)?;
    let cams: Vec<_> = views.iter().map(|v| v.1.clone()).collect();
    let fps = evalkit::measure_fps(&cloud, &cams, &s, cfg.eval.fps_warmup, cfg.eval.fps_reps.max(1))?;
    let serialized = cfg.to_toml();
    let scene = cfg.data.as_deref().and_then(Path::file_name).map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let report = MetricsReport::new(scene, evalkit::config_hash(&serialized), rows, fps);
    report.write(&out)?;
    cfg.write_to(&out)?;
    Ok(report)
}

fn export_views(cfg: &RunConfig, ck: &Path) -> Result<Vec<(String, refsplat_core::Camera)>> {
    let mut ds = load_dataset(cfg)?;
    if let Ok(split) = load_split(ck) {
        ds.apply_split(&split)?;
    }
    let mut idx = ds.indices(Split::Test);
    if idx.is_empty() {
        idx = (0..ds.len()).collect();
    }
    Ok(idx
        .into_iter()
        .map(|i| (ds.names[i].rsplit_once('.').map_or(ds.names[i].clone(), |(s, _)| s.to_string()), ds.cameras[i].clone()))
        .collect())
}

pub fn cmd_decompose(common: &Common, checkpoint: &Option<PathBuf>) -> Result<Vec<PathBuf>> {
    let (ck, cfg) = checkpoint_config(common, checkpoint)?;
    init_threads(cfg.threads);
    let out = required(&cfg.out, "out")?.join("decompose");
    let cloud = checkpoint::load_cloud(&ck)?;
    let mut files = Vec::new();
    for (stem, cam) in export_views(&cfg, &ck)? {
        files.extend(evalkit::export_decomposition(&cloud, &cam, &settings(&cfg), &out, &stem)?);
    }
    cfg.write_to(&out)?;
    Ok(files)
}

pub fn cmd_relight(common: &Common, checkpoint: &Option<PathBuf>, coefficients: &Option<Vec<f64>>) -> Result<Vec<PathBuf>> {
    let (ck, mut cfg) = checkpoint_config(common, checkpoint)?;
    if let Some(c) = coefficients {
        cfg.eval.relight = c.clone();
        cfg.validate()?;
    }
    init_threads(cfg.threads);
    let out = required(&cfg.out, "out")?.join("relight");
    let cloud = checkpoint::load_cloud(&ck)?;
    let mut files = Vec::new();
    for (stem, cam) in export_views(&cfg, &ck)? {
        files.extend(evalkit::export_relit_sequence(&cloud, &cam, &settings(&cfg), &cfg.eval.relight, &out, &stem)?);
    }
    cfg.write_to(&out)?;
    Ok(files)
}

pub fn cmd_synth(common: &Common, views: Option<usize>, strength: Option<f64>) -> Result<PathBuf> {
    let cfg = common.resolve(None)?;
    let out = required(&cfg.out, "out")?;
    let mut spec = SyntheticSceneSpec {
        wall_seed: cfg.seed.wrapping_mul(3).wrapping_add(1),
        object_seed: cfg.seed.wrapping_mul(3).wrapping_add(2),
        pose_seed: cfg.seed.wrapping_mul(3).wrapping_add(3),
        ..SyntheticSceneSpec::default()
    };
    if let Some(r) = common.resolution {
        spec.focal *= r.width as f64 / spec.resolution.0 as f64;
        spec.resolution = (r.width, r.height);
    }
    if let Some(v) = views {
        spec.n_views = v;
    }
    if let Some(s) = strength {
        spec.reflection_strength = s;
    }
    let scene = synth::generate_synthetic_mirror_scene(&spec)?;
    scene.write(&out)?;
    // a config that trains on this dataset at its native size
    let mut cfg = cfg;
    cfg.data = Some(out.clone());
    cfg.out = None;
    cfg.resolution = Resolution {
        width: spec.resolution.0,
        height: spec.resolution.1,
    };
    cfg.write_to(&out)?;
    Ok(out)
}

/// Runs the parsed command; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Train(c) => cmd_train(c).map(|p| log::info!("final checkpoint: {}", p.display())),
        Command::Eval { common, checkpoint } => cmd_eval(common, checkpoint).map(|r| print!("{}", r.to_tsv())),
        Command::Decompose { common, checkpoint } => cmd_decompose(common, checkpoint).map(|f| log::info!("wrote {} images", f.len())),
        Command::Relight { common, checkpoint, coefficients } => {
            cmd_relight(common, checkpoint, coefficients).map(|f| log::info!("wrote {} images", f.len()))
        }
        Command::Synth { common, views, reflection_strength } => {
            cmd_synth(common, *views, *reflection_strength).map(|p| log::info!("dataset written to {}", p.display()))
        }
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
