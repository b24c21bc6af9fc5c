mod meta;
mod viz;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use twostream::config::RunConfig;
use twostream::datagen::{generate_scenes, load_dataset, write_dataset, Dataset, IMAGES_DIR, MANIFEST_FILE};
use twostream::mbrm::{train_mbrm, MbrmParams, BIAS_RECORD, KERNEL_RECORD};
use twostream::model::checkpoint::{load_into_store, read_records, store_records, write_records, Record};
use twostream::model::Network;
use twostream::numerics::ParamStore;
use twostream::pipeline::report::{from_record, read_results, to_records, write_results};
use twostream::pipeline::{collect_mbrm_samples, evaluate, infer_all, render_table, train, BoxSource, DetectionResult};
use twostream::{Error, Result};

const CHECKPOINT_FILE: &str = "model.ckpt";
const LOSS_LOG: &str = "loss.csv";
const MBRM_LOSS_LOG: &str = "mbrm_loss.csv";
const RESULTS_FILE: &str = "results.json";
const REPORT_FILE: &str = "eval_report.json";

#[derive(Parser)]
#[command(name = "twostream", version, about = "Two-stream instance segmentation on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset
    GenData {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Replace an existing non-empty output directory
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Phase one: train the two-stream model
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from the checkpoint in the output directory
        #[arg(long)]
        resume: bool,
        /// Overwrite an existing checkpoint instead of refusing
        #[arg(long)]
        force: bool,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Phase two: train the boundary refinement module on a frozen model
    TrainMbrm {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Output checkpoint (defaults to updating --checkpoint in place)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run inference over a dataset and write results.json
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score a results file against a dataset
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "refined", value_parser = parse_boxes)]
        boxes: BoxSource,
        /// Directory for eval_report.json
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw detections over dataset images
    Viz {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only the first N images
        #[arg(long)]
        limit: Option<usize>,
    },
}

fn parse_boxes(s: &str) -> std::result::Result<BoxSource, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// File, then `--set` overrides; `fallback` is used when no file is given.
fn load_config(args: &ConfigArgs, fallback: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match (&args.config, fallback) {
        (Some(p), _) => RunConfig::from_file(p)?,
        (None, Some(p)) if p.exists() => RunConfig::from_file(p)?,
        _ => RunConfig::default(),
    };
    for kv in &args.set {
        cfg.apply_override(kv)?;
    }
    Ok(cfg)
}

fn require(opt: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    opt.clone()
        .ok_or_else(|| Error::Config(format!("no {what} given (flag or config key `{what}`)")))
}

fn dir_is_nonempty(dir: &Path) -> bool {
    fs::read_dir(dir).map(|mut it| it.next().is_some()).unwrap_or(false)
}

fn gen_data(seed: u64, count: usize, out: &Path, force: bool, args: &ConfigArgs) -> Result<()> {
    let mut cfg = load_config(args, None)?;
    cfg.out = Some(out.to_path_buf());
    cfg.scene.validate()?;
    if dir_is_nonempty(out) {
        if !force {
            return Err(Error::InvalidArgument(format!(
                "{} is not empty; pass --force to replace it",
                out.display()
            )));
        }
        for name in [MANIFEST_FILE, IMAGES_DIR] {
            let p = out.join(name);
            if p.is_dir() {
                fs::remove_dir_all(&p).map_err(io_err(&p))?;
            } else if p.exists() {
                fs::remove_file(&p).map_err(io_err(&p))?;
            }
        }
    }
    let samples = generate_scenes(seed, count, &cfg.scene)?;
    let manifest = write_dataset(&samples, out, seed, &cfg.scene)?;
    meta::record(out, "gen-data", seed, &cfg)?;
    log::info!(
        "wrote {} images / {} instances to {}",
        manifest.images.len(),
        manifest.annotations.len(),
        out.display()
    );
    Ok(())
}

fn build_model(cfg: &RunConfig) -> Result<(Network, ParamStore)> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let net = Network::new(cfg.model.clone(), &mut store, cfg.init_seed)?;
    Ok((net, store))
}

fn check_dataset(ds: &Dataset, cfg: &RunConfig) -> Result<()> {
    for img in &ds.manifest.images {
        if img.width % 8 != 0 || img.height % 8 != 0 {
            return Err(Error::Config(format!(
                "image {} is {}×{}; sizes must be multiples of 8",
                img.id, img.width, img.height
            )));
        }
    }
    if let Some(a) = ds.manifest.annotations.iter().find(|a| a.category_id >= cfg.model.num_classes) {
        return Err(Error::Config(format!(
            "annotation {} has class {} but the model has {} classes",
            a.id, a.category_id, cfg.model.num_classes
        )));
    }
    Ok(())
}

/// Keeps the header and the first `rows` data lines of a CSV log.
fn truncate_log(path: &Path, rows: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let kept: Vec<&str> = text.lines().take(rows as usize + 1).collect();
    fs::write(path, kept.join("\n") + "\n").map_err(io_err(path))
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    dataset: &Option<PathBuf>,
    out: &Option<PathBuf>,
    resume: bool,
    force: bool,
    iterations: Option<u64>,
    seed: Option<u64>,
    args: &ConfigArgs,
) -> Result<()> {
    let mut cfg = load_config(args, None)?;
    if let Some(d) = dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(o) = out {
        cfg.out = Some(o.clone());
    }
    if let Some(n) = iterations {
        cfg.train.iterations = n;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let data_dir = require(&cfg.dataset, "dataset")?;
    let out_dir = require(&cfg.out, "out")?;
    let (net, mut store) = build_model(&cfg)?;
    let ds = load_dataset(&data_dir)?;
    check_dataset(&ds, &cfg)?;
    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    let ckpt = out_dir.join(CHECKPOINT_FILE);
    let log_path = out_dir.join(LOSS_LOG);
    let mut start = 0;
    if resume && ckpt.exists() {
        start = load_into_store(&mut store, &read_records(&ckpt)?)?;
        truncate_log(&log_path, start)?;
        log::info!("resuming from iteration {start}");
    } else if ckpt.exists() && !force {
        return Err(Error::InvalidArgument(format!(
            "{} exists; pass --resume to continue or --force to start over",
            ckpt.display()
        )));
    } else {
        fs::write(&log_path, "iteration,total,cls,reg,mask,lr,positives,skipped_masks\n").map_err(io_err(&log_path))?;
    }
    meta::record(&out_dir, "train", cfg.train.seed, &cfg)?;
    let mut log_file = fs::OpenOptions::new()
        .append(true)
        .open(&log_path)
        .map_err(io_err(&log_path))?;
    let total = cfg.train.iterations;
    let every = cfg.checkpoint_every;
    train(&net, &mut store, &ds.samples, &cfg.train, start, |it, lb, store| {
        writeln!(
            log_file,
            "{it},{},{},{},{},{},{},{}",
            lb.total,
            lb.cls,
            lb.reg,
            lb.mask,
            cfg.train.lr_at(it - 1),
            lb.positives,
            lb.skipped_masks
        )
        .map_err(io_err(&log_path))?;
        if it % 50 == 0 {
            log::info!(
                "iter {it}/{total} loss {:.4} (cls {:.4} reg {:.4} mask {:.4})",
                lb.total,
                lb.cls,
                lb.reg,
                lb.mask
            );
        }
        if (every > 0 && it % every == 0) || it == total {
            write_records(&ckpt, &store_records(store, it))?;
        }
        Ok(())
    })?;
    if start >= total {
        write_records(&ckpt, &store_records(&store, start))?;
    }
    log::info!("checkpoint written to {}", ckpt.display());
    Ok(())
}

/// Loads a checkpoint into a freshly built model; returns the records too.
fn load_model(ckpt: &Path, cfg: &RunConfig) -> Result<(Network, ParamStore, Vec<Record>)> {
    if !ckpt.exists() {
        return Err(Error::InvalidArgument(format!(
            "checkpoint {} not found (run `train` first)",
            ckpt.display()
        )));
    }
    let (net, mut store) = build_model(cfg)?;
    let records = read_records(ckpt)?;
    load_into_store(&mut store, &records)?;
    Ok((net, store, records))
}

fn sibling_config(ckpt: &Path) -> Option<PathBuf> {
    ckpt.parent().map(|d| d.join(meta::CONFIG_FILE))
}

fn train_mbrm_cmd(
    ckpt: &Path,
    dataset: &Option<PathBuf>,
    out: &Option<PathBuf>,
    iterations: Option<usize>,
    args: &ConfigArgs,
) -> Result<()> {
    let mut cfg = load_config(args, sibling_config(ckpt).as_deref())?;
    if let Some(d) = dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(n) = iterations {
        cfg.mbrm_train.iterations = n;
    }
    let data_dir = require(&cfg.dataset, "dataset")?;
    let (net, store, records) = load_model(ckpt, &cfg)?;
    let ds = load_dataset(&data_dir)?;
    check_dataset(&ds, &cfg)?;
    let samples = collect_mbrm_samples(&net, &store, &ds.samples, &cfg.infer)?;
    log::info!("collected {} matched detections for MBRM training", samples.len());
    if samples.is_empty() {
        return Err(Error::InvalidArgument(
            "no detection matched a ground-truth box at IoU ≥ 0.5; train the model further or lower score_threshold".into(),
        ));
    }
    let outcome = train_mbrm(&samples, &cfg.mbrm_params(), &cfg.mbrm_train)?;
    let out_path = out.clone().unwrap_or_else(|| ckpt.to_path_buf());
    let mut new_records: Vec<Record> = records
        .into_iter()
        .filter(|r| r.name != KERNEL_RECORD && r.name != BIAS_RECORD)
        .collect();
    new_records.extend(outcome.params.to_records());
    let out_dir = out_path.parent().map(Path::to_path_buf).unwrap_or_default();
    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    write_records(&out_path, &new_records)?;
    let log_path = out_dir.join(MBRM_LOSS_LOG);
    let csv: String = std::iter::once("iteration,loss\n".to_owned())
        .chain(outcome.losses.iter().enumerate().map(|(i, l)| format!("{},{l}\n", i + 1)))
        .collect();
    fs::write(&log_path, csv).map_err(io_err(&log_path))?;
    meta::record(&out_dir, "train-mbrm", cfg.train.seed, &cfg)?;
    log::info!(
        "MBRM loss {:.4} → {:.4}; checkpoint written to {}",
        outcome.losses.first().copied().unwrap_or(0.0),
        outcome.losses.last().copied().unwrap_or(0.0),
        out_path.display()
    );
    Ok(())
}

fn infer_cmd(ckpt: &Path, dataset: &Option<PathBuf>, out: &Path, args: &ConfigArgs) -> Result<()> {
    let mut cfg = load_config(args, sibling_config(ckpt).as_deref())?;
    if let Some(d) = dataset {
        cfg.dataset = Some(d.clone());
    }
    cfg.out = Some(out.to_path_buf());
    let data_dir = require(&cfg.dataset, "dataset")?;
    let (net, store, records) = load_model(ckpt, &cfg)?;
    let mbrm = match MbrmParams::from_records(&records, cfg.mbrm_gamma)? {
        Some(p) => p,
        None => {
            log::warn!("checkpoint has no MBRM parameters; boxes are not refined (run `train-mbrm`)");
            MbrmParams::zeros(cfg.mbrm_scope, 0.0)
        }
    };
    let ds = load_dataset(&data_dir)?;
    check_dataset(&ds, &cfg)?;
    let results = infer_all(&net, &store, &ds.samples, &mbrm, &cfg.infer)?;
    let recs: Vec<_> = ds
        .manifest
        .images
        .iter()
        .zip(&results)
        .flat_map(|(img, dets)| to_records(img.id, dets))
        .collect();
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_results(&out.join(RESULTS_FILE), &recs)?;
    meta::record(out, "infer", cfg.train.seed, &cfg)?;
    log::info!("{} detections on {} images", recs.len(), ds.samples.len());
    Ok(())
}

/// Detections grouped per dataset image (manifest order).
fn load_grouped(results: &Path, ds: &Dataset) -> Result<Vec<Vec<DetectionResult>>> {
    let dir = results.parent().unwrap_or(Path::new("."));
    meta::check_results_version(dir)?;
    let recs = read_results(results)?;
    let mut grouped: Vec<Vec<DetectionResult>> = vec![Vec::new(); ds.samples.len()];
    for r in &recs {
        let idx = ds
            .manifest
            .images
            .iter()
            .position(|img| img.id == r.image_id)
            .ok_or_else(|| Error::Format {
                path: results.to_path_buf(),
                msg: format!("result for unknown image {}", r.image_id),
            })?;
        grouped[idx].push(from_record(r)?);
    }
    Ok(grouped)
}

fn eval_cmd(results: &Path, dataset: &Path, boxes: BoxSource, out: &Option<PathBuf>) -> Result<()> {
    let ds = load_dataset(dataset)?;
    let grouped = load_grouped(results, &ds)?;
    let images: Vec<(u64, &[DetectionResult], &[twostream::datagen::Instance])> = ds
        .manifest
        .images
        .iter()
        .zip(&grouped)
        .zip(&ds.samples)
        .map(|((img, d), s)| (img.id, d.as_slice(), s.instances.as_slice()))
        .collect();
    let report = evaluate(&images, boxes);
    print!("{}", render_table(&report));
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(REPORT_FILE);
        let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Format {
            path: path.clone(),
            msg: e.to_string(),
        })?;
        fs::write(&path, json).map_err(io_err(&path))?;
        let mut cfg = RunConfig::default();
        cfg.dataset = Some(dataset.to_path_buf());
        cfg.out = Some(dir.clone());
        meta::record(dir, "eval", 0, &cfg)?;
    }
    Ok(())
}

fn viz_cmd(results: &Path, dataset: &Path, out: &Path, limit: Option<usize>) -> Result<()> {
    let ds = load_dataset(dataset)?;
    let grouped = load_grouped(results, &ds)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let names: Vec<&str> = ds.manifest.categories.iter().map(|c| c.name.as_str()).collect();
    let n = limit.unwrap_or(ds.samples.len()).min(ds.samples.len());
    for ((img, s), dets) in ds.manifest.images.iter().zip(&ds.samples).zip(&grouped).take(n) {
        let path = out.join(format!("{:06}.png", img.id));
        viz::render(&s.image, s.width, s.height, dets, &names, &path)?;
    }
    let mut cfg = RunConfig::default();
    cfg.dataset = Some(dataset.to_path_buf());
    cfg.out = Some(out.to_path_buf());
    meta::record(out, "viz", 0, &cfg)?;
    log::info!("wrote {n} overlays to {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenData {
            seed,
            count,
            out,
            force,
            cfg,
        } => gen_data(*seed, *count, out, *force, cfg),
        Command::Train {
            dataset,
            out,
            resume,
            force,
            iterations,
            seed,
            cfg,
        } => train_cmd(dataset, out, *resume, *force, *iterations, *seed, cfg),
        Command::TrainMbrm {
            checkpoint,
            dataset,
            out,
            iterations,
            cfg,
        } => train_mbrm_cmd(checkpoint, dataset, out, *iterations, cfg),
        Command::Infer {
            checkpoint,
            dataset,
            out,
            cfg,
        } => infer_cmd(checkpoint, dataset, out, cfg),
        Command::Eval {
            results,
            dataset,
            boxes,
            out,
        } => eval_cmd(results, dataset, *boxes, out),
        Command::Viz {
            results,
            dataset,
            out,
            limit,
        } => viz_cmd(results, dataset, out, *limit),
    }
}

fn report_error(kind: &str, message: &str) {
    let v = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{v}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            report_error("usage", e.to_string().trim());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}
