//! `setmix`: dataset generation, corruption, training, benchmarking and checks.
//!
//! Exit codes: 0 success, 2 usage, 3 data error, 4 verification failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use setmixer::corrupt::{corrupt, suite_seed, CorruptionKind, CorruptionSpec, ManifestEntry};
use setmixer::eval::{benchmark, feature_diff, feature_diff_csv, BaselineConstants, CorruptedCell};
use setmixer::io::{self, IndexRow, RunManifest};
use setmixer::model::{canonical_config, desk_variant, gradcheck_model, AggregatorKind, Model, ModelConfig};
use setmixer::nn::GradcheckOptions;
use setmixer::synth::{make_dataset, DatasetOptions, Family};
use setmixer::train::{epoch_log_csv, train, TrainOptions};
use setmixer::{CenterMode, Error, PointCloud};

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "setmix", version, about = "Noise-robust point-set classification toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic train/test dataset.
    GenData {
        #[arg(long, value_delimiter = ',', default_value = "sphere,cube_surface,cylinder,cone,torus,plane,helix,two_spheres")]
        families: Vec<Family>,
        #[arg(long, default_value_t = 200)]
        train_per_class: usize,
        #[arg(long, default_value_t = 50)]
        test_per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 512)]
        points: usize,
        #[arg(long, default_value_t = 0.01)]
        jitter: f64,
        #[arg(long)]
        rotate_z: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write corrupted copies of a dataset split and a corruption manifest.
    Corrupt {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "uniform,gaussian,impulse,upsampling,background")]
        kinds: Vec<CorruptionKind>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5", value_parser = clap::value_parser!(u8).range(1..=5))]
        severities: Vec<u8>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// JSON model config, or a preset: desk, desk-max-pool, desk-mean-pool, desk-no-sort, canonical.
        #[arg(long, default_value = "desk")]
        config: String,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Benchmark a checkpoint on clean and corrupted data.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        corrupt_manifest: Option<PathBuf>,
        /// Refuse to run unless the checkpoint's config hash equals this value.
        #[arg(long)]
        config_hash: Option<String>,
        #[arg(long, default_value_t = 0.07)]
        bm_clean: f64,
        #[arg(long, default_value_t = 0.215)]
        bm_noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every parameter gradient.
    Gradcheck {
        #[arg(long, default_value = "desk")]
        config: String,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 128)]
        points: usize,
        /// Coordinates sampled per parameter tensor.
        #[arg(long, default_value_t = 6)]
        per_tensor: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-set feature change between a clean cloud and a corrupted copy.
    FeatureDiff {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        clean: PathBuf,
        #[arg(long)]
        corrupted: PathBuf,
        #[arg(long, default_value_t = 0)]
        level: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a preset model config as JSON.
    Config {
        #[arg(long, default_value = "desk")]
        preset: String,
        #[arg(long, default_value_t = 8)]
        classes: usize,
        #[arg(long, value_enum)]
        center_mode: Option<CenterArg>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CenterArg {
    QueryPoint,
    SpatialCenter,
}

struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Failure { code: 2, msg: msg.into() }
    }

    fn verify(msg: impl Into<String>) -> Self {
        Failure { code: 4, msg: msg.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidConfig(_) => 2,
            Error::ChecksumMismatch { .. } => 4,
            _ => 3,
        };
        Failure { code, msg: e.to_string() }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("SETMIX_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().map_err(|_| format!("SETMIX_THREADS must be a positive integer, got '{v}'"))?;
    if n == 0 {
        return Err("SETMIX_THREADS must be positive".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn run(cmd: Cmd) -> CmdResult {
    match cmd {
        Cmd::GenData { families, train_per_class, test_per_class, seed, points, jitter, rotate_z, out } => {
            gen_data(&families, train_per_class, test_per_class, seed, DatasetOptions { points, jitter, rotate_z }, &out)
        }
        Cmd::Corrupt { input, kinds, severities, seed, out } => corrupt_cmd(&input, &kinds, &severities, seed, &out),
        Cmd::Train { data, config, epochs, seed, batch_size, lr, out } => {
            let mut opts = TrainOptions { epochs, batch_size, seed, ..TrainOptions::default() };
            opts.adam.lr = lr;
            train_cmd(&data, &config, &opts, &out)
        }
        Cmd::Eval { ckpt, data, corrupt_manifest, config_hash, bm_clean, bm_noise, out } => eval_cmd(
            &ckpt,
            &data,
            corrupt_manifest.as_deref(),
            config_hash.as_deref(),
            BaselineConstants { bm_clean, bm_noise },
            &out,
        ),
        Cmd::Gradcheck { config, trials, points, per_tensor, seed } => {
            let cfg = load_config(&config, 8)?;
            let opts = GradcheckOptions { per_tensor: Some(per_tensor), seed, ..GradcheckOptions::default() };
            let report = gradcheck_model(&cfg, trials, points, seed, &opts)?;
            println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
            if report.overall() >= GRADCHECK_TOLERANCE {
                return Err(Failure::verify(format!(
                    "max relative error {:e} is not below {GRADCHECK_TOLERANCE:e}",
                    report.overall()
                )));
            }
            Ok(())
        }
        Cmd::FeatureDiff { ckpt, clean, corrupted, level, out } => {
            let (model, _) = io::load_model(&ckpt)?;
            let a = io::read_pcf(&clean)?;
            let b = io::read_pcf(&corrupted)?;
            let rows = feature_diff(&model, &a, &b, level)?;
            io::atomic_write(&out, feature_diff_csv(&rows)?.as_bytes())?;
            println!("{}", out.display());
            Ok(())
        }
        Cmd::Config { preset, classes, center_mode } => {
            let mut cfg = preset_config(&preset, classes).ok_or_else(|| Failure::usage(format!("unknown preset '{preset}'")))?;
            if let Some(m) = center_mode {
                cfg = cfg.with_center_mode(match m {
                    CenterArg::QueryPoint => CenterMode::QueryPoint,
                    CenterArg::SpatialCenter => CenterMode::SpatialCenter,
                });
            }
            println!("{}", serde_json::to_string_pretty(&cfg).map_err(Error::from)?);
            Ok(())
        }
    }
}

fn preset_config(name: &str, classes: usize) -> Option<ModelConfig> {
    let kind = match name {
        "desk" => AggregatorKind::SetMixer,
        "desk-max-pool" => AggregatorKind::MaxPool,
        "desk-mean-pool" => AggregatorKind::MeanPool,
        "desk-no-sort" => AggregatorKind::MixerNoSort,
        "canonical" => {
            let mut cfg = canonical_config();
            cfg.head.num_classes = classes;
            return Some(cfg);
        }
        _ => return None,
    };
    Some(desk_variant(classes, kind))
}

fn load_config(spec: &str, classes: usize) -> Result<ModelConfig, Failure> {
    if let Some(cfg) = preset_config(spec, classes) {
        return Ok(cfg);
    }
    let path = Path::new(spec);
    if !path.is_file() {
        return Err(Failure::usage(format!("config '{spec}' is neither a preset nor a file")));
    }
    let cfg: ModelConfig = io::read_json(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn require_dir(dir: &Path) -> CmdResult {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Failure::usage(format!("directory {} does not exist", dir.display())))
    }
}

/// A split directory (holding `index.csv`) or a dataset root with a `sub` split.
fn split_dir(dir: &Path, sub: &str) -> Result<PathBuf, Failure> {
    require_dir(dir)?;
    if dir.join(io::INDEX_FILE).is_file() {
        return Ok(dir.to_path_buf());
    }
    let nested = dir.join(sub);
    if nested.join(io::INDEX_FILE).is_file() {
        return Ok(nested);
    }
    Err(Failure::usage(format!("{} holds neither index.csv nor {sub}/index.csv", dir.display())))
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{name}{suffix}"))
}

fn gen_data(
    families: &[Family],
    train_per_class: usize,
    test_per_class: usize,
    seed: u64,
    opts: DatasetOptions,
    out: &Path,
) -> CmdResult {
    let start = Instant::now();
    let ds = make_dataset(families, train_per_class, test_per_class, seed, &opts)?;
    io::save_samples(&out.join("train"), &ds.train)?;
    io::save_samples(&out.join("test"), &ds.test)?;
    let train_hash = io::dataset_hash(&out.join("train"))?;
    let test_hash = io::dataset_hash(&out.join("test"))?;
    let manifest = RunManifest {
        command: "gen-data".into(),
        config_hash: None,
        dataset_hash: Some(format!("{train_hash}:{test_hash}")),
        seeds: vec![seed],
        hyperparameters: serde_json::json!({
            "families": families.iter().map(|f| f.name()).collect::<Vec<_>>(),
            "train_per_class": train_per_class,
            "test_per_class": test_per_class,
            "options": opts,
            "train_hash": train_hash,
            "test_hash": test_hash,
        }),
        wall_clock_secs: start.elapsed().as_secs_f64(),
        git_describe: git_describe(),
        metrics_paths: Vec::new(),
    };
    let path = out.join("manifest.json");
    io::write_json(&path, &manifest)?;
    println!("{}", path.display());
    Ok(())
}

fn corrupt_cmd(input: &Path, kinds: &[CorruptionKind], severities: &[u8], seed: u64, out: &Path) -> CmdResult {
    let dir = split_dir(input, "test")?;
    let (rows, clouds) = io::load_split(&dir)?;
    let mut entries = Vec::new();
    for &kind in kinds {
        for &s in severities {
            let cell = format!("{}/s{s}", kind.name());
            let mut cell_rows = Vec::with_capacity(rows.len());
            for (i, (row, cloud)) in rows.iter().zip(&clouds).enumerate() {
                let spec = CorruptionSpec::new(kind, s, suite_seed(seed, kind, s, i))?;
                let noisy = corrupt(cloud, &spec)?;
                let rel = format!("{cell}/{i:05}.pcf");
                io::write_pcf(&out.join(&rel), &noisy)?;
                cell_rows.push(IndexRow { path: format!("{i:05}.pcf"), ..row.clone() });
                entries.push(ManifestEntry {
                    cloud_id: row.path.clone(),
                    kind,
                    severity: s,
                    seed: spec.seed,
                    output_path: rel,
                });
            }
            io::write_index(&out.join(&cell), &cell_rows)?;
        }
    }
    let path = out.join("manifest.json");
    io::write_json(&path, &entries)?;
    println!("{}", path.display());
    Ok(())
}

fn train_cmd(data: &Path, config: &str, opts: &TrainOptions, out: &Path) -> CmdResult {
    let start = Instant::now();
    let dir = split_dir(data, "train")?;
    let (_, clouds) = io::load_split(&dir)?;
    let classes = clouds.iter().filter_map(PointCloud::label).max().map_or(0, |m| m + 1);
    let cfg = load_config(config, classes.max(1))?;
    if classes > cfg.head.num_classes {
        return Err(Failure { code: 3, msg: format!("data has {classes} classes, config {}", cfg.head.num_classes) });
    }
    let mut model = Model::new(cfg, opts.seed)?;
    let outcome = train(&mut model, &clouds, opts, |l| {
        eprintln!("epoch {:>3}  loss {:.4}  train acc {:.3}  lr {:.2e}  {:.1}s", l.epoch, l.loss, l.train_accuracy, l.lr, l.seconds)
    })?;
    io::save_model(out, &model, opts.epochs, Some(&outcome.optimizer))?;
    let log_path = sibling(out, ".log.csv");
    io::atomic_write(&log_path, epoch_log_csv(&outcome.logs)?.as_bytes())?;
    let manifest = RunManifest {
        command: "train".into(),
        config_hash: Some(model.config().hash()),
        dataset_hash: Some(io::dataset_hash(&dir)?),
        seeds: vec![opts.seed],
        hyperparameters: serde_json::to_value(opts).map_err(Error::from)?,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        git_describe: git_describe(),
        metrics_paths: vec![log_path.display().to_string()],
    };
    let mpath = sibling(out, ".manifest.json");
    io::write_json(&mpath, &manifest)?;
    println!("{}", out.display());
    Ok(())
}

fn load_cells(manifest_path: &Path) -> Result<Vec<CorruptedCell>, Failure> {
    let entries: Vec<ManifestEntry> = io::read_json(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut grouped: BTreeMap<(CorruptionKind, u8), Vec<PointCloud>> = BTreeMap::new();
    for e in &entries {
        let cloud = io::read_pcf(&base.join(&e.output_path))?;
        grouped.entry((e.kind, e.severity)).or_default().push(cloud);
    }
    Ok(grouped.into_iter().map(|((kind, severity), clouds)| CorruptedCell { kind, severity, clouds }).collect())
}

fn eval_cmd(
    ckpt: &Path,
    data: &Path,
    manifest: Option<&Path>,
    config_hash: Option<&str>,
    baseline: BaselineConstants,
    out: &Path,
) -> CmdResult {
    let start = Instant::now();
    let (model, meta) = io::load_model(ckpt)?;
    let dir = split_dir(data, "test")?;
    let (_, clean) = io::load_split(&dir)?;
    let cells = match manifest {
        Some(p) => load_cells(p)?,
        None => Vec::new(),
    };
    if cells.is_empty() {
        return Err(Failure::usage("eval needs a corruption manifest with at least one entry"));
    }
    let report = benchmark(&model, config_hash, &clean, &cells, baseline)?;
    io::write_json(out, &report)?;
    let name = ckpt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
    let table = report.text_table(&name);
    let table_path = out.with_extension("txt");
    io::atomic_write(&table_path, table.as_bytes())?;
    print!("{table}");
    let run = RunManifest {
        command: "eval".into(),
        config_hash: Some(meta.config_hash),
        dataset_hash: Some(io::dataset_hash(&dir)?),
        seeds: Vec::new(),
        hyperparameters: serde_json::json!({ "baseline": baseline, "checkpoint": ckpt.display().to_string() }),
        wall_clock_secs: start.elapsed().as_secs_f64(),
        git_describe: git_describe(),
        metrics_paths: vec![out.display().to_string(), table_path.display().to_string()],
    };
    io::write_json(&sibling(out, ".manifest.json"), &run)?;
    Ok(())
}
