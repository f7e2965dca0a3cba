//! `gazegen`: synthesize data, train the denoiser, generate trajectories,
//! score them and inspect artifacts.

mod inspect;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use gazegen::dataset::synth_dataset;
use gazegen::denoiser::{load_checkpoint, save_checkpoint};
use gazegen::metrics::{Metric, ScoreReport};
use gazegen::pipeline::{baseline, evaluate_roots, generate, load_dataset, train_model, write_generated_set};
use gazegen::{Error, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "gazegen", version, about = "Diffusion-based gaze trajectory generation for video")]
struct Cli {
    /// `key = value` configuration file; unset keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `workers` (0 = all logical cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset: saliency clips, oracle gaze and a manifest.
    Synth {
        #[arg(long)]
        root: Option<PathBuf>,
    },
    /// Train the denoiser and write a checkpoint and an `epoch,loss` CSV.
    Train {
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from the existing checkpoint for `epochs` more epochs.
        #[arg(long)]
        resume: bool,
    },
    /// Roll out trajectories into `<out>/<video>/sample_XX.csv`.
    Generate(GenerateArgs),
    /// Score generated trajectories against ground truth.
    Evaluate {
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        gen: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Summarize a SALB, GZDF or trajectory CSV file and check its invariants.
    Inspect { path: PathBuf },
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    root: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Only this video; default is every video in the manifest.
    #[arg(long)]
    video: Option<String>,
    #[arg(long)]
    horizon_s: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    /// Replicate one point over the first history, e.g. `--cold-start x=0.5 y=0.5`.
    /// Without values the warm observer's last history sample is used.
    #[arg(long, num_args = 0..=2, value_name = "x=X y=Y")]
    cold_start: Option<Vec<String>>,
    /// Emit the matched-speed random-walk baseline instead of model rollouts.
    #[arg(long)]
    baseline: bool,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

fn parse_cold_start(values: &[String]) -> Result<Option<[f64; 2]>, Failure> {
    if values.is_empty() {
        return Ok(None);
    }
    let mut x = None;
    let mut y = None;
    for v in values {
        let (k, val) = v
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--cold-start expects `x=<v> y=<v>`, got `{v}`")))?;
        let num: f64 = val
            .parse()
            .map_err(|_| Failure::Usage(format!("--cold-start value `{val}` is not a number")))?;
        match k {
            "x" => x = Some(num),
            "y" => y = Some(num),
            _ => return Err(Failure::Usage(format!("--cold-start key must be x or y, got `{k}`"))),
        }
    }
    match (x, y) {
        (Some(x), Some(y)) if (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y) => Ok(Some([x, y])),
        (Some(_), Some(_)) => Err(Failure::Usage("--cold-start point must lie in the unit square".into())),
        _ => Err(Failure::Usage("--cold-start needs both x and y".into())),
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(usage)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }

    match &cli.command {
        Command::Synth { root } => {
            if let Some(r) = root {
                cfg.dataset_root = r.clone();
            }
        }
        Command::Train {
            root,
            checkpoint,
            loss_csv,
            epochs,
            ..
        } => {
            if let Some(r) = root {
                cfg.dataset_root = r.clone();
            }
            if let Some(c) = checkpoint {
                cfg.checkpoint = c.clone();
            }
            if let Some(l) = loss_csv {
                cfg.loss_csv = l.clone();
            }
            if let Some(e) = epochs {
                cfg.epochs = *e;
            }
        }
        Command::Generate(g) => {
            if let Some(r) = &g.root {
                cfg.dataset_root = r.clone();
            }
            if let Some(c) = &g.checkpoint {
                cfg.checkpoint = c.clone();
            }
            if let Some(o) = &g.out {
                cfg.gen_root = o.clone();
            }
            if let Some(h) = g.horizon_s {
                cfg.horizon_s = h;
            }
            if let Some(s) = g.samples {
                cfg.num_samples = s;
            }
            if let Some(values) = &g.cold_start {
                cfg.cold_start = true;
                if let Some(p) = parse_cold_start(values)? {
                    cfg.cold_point = Some(p);
                }
            }
        }
        Command::Evaluate { gt, gen, report } => {
            if let Some(p) = gt {
                cfg.dataset_root = p.clone();
            }
            if let Some(p) = gen {
                cfg.gen_root = p.clone();
            }
            if let Some(p) = report {
                cfg.report = p.clone();
            }
        }
        Command::Inspect { .. } => {}
    }
    cfg.validate().map_err(usage)?;
    if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot size the worker pool: {e}")))?;
    }

    match cli.command {
        Command::Synth { .. } => cmd_synth(&cfg),
        Command::Train { resume, .. } => cmd_train(&cfg, resume),
        Command::Generate(g) => cmd_generate(&cfg, g.video.as_deref(), g.baseline),
        Command::Evaluate { .. } => cmd_evaluate(&cfg),
        Command::Inspect { path } => inspect::run(&path),
    }
}

fn require(path: &Path, what: &str) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Data(Error::InvalidInput(format!("{what} {} does not exist", path.display()))))
    }
}

fn cmd_synth(cfg: &RunConfig) -> Result<u8, Failure> {
    let root = &cfg.dataset_root;
    std::fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
    let entries = synth_dataset(cfg, root)?;
    println!(
        "wrote {} clips x {} observers to {}",
        entries.len(),
        cfg.observers,
        root.display()
    );
    Ok(0)
}

fn cmd_train(cfg: &RunConfig, resume: bool) -> Result<u8, Failure> {
    require(&cfg.dataset_root.join(gazegen::dataset::MANIFEST_FILE), "manifest")?;
    let videos = load_dataset(cfg, &cfg.dataset_root)?;
    let start = if resume {
        require(&cfg.checkpoint, "checkpoint")?;
        Some(load_checkpoint(&cfg.checkpoint, cfg.denoiser()?)?)
    } else {
        None
    };
    let (model, first_epoch, curve) = train_model(cfg, &videos, start, &mut |e, l| info!("epoch {e}: loss {l:.6}"))?;
    save_checkpoint(&cfg.checkpoint, &model)?;

    let path = &cfg.loss_csv;
    let append = resume && path.exists();
    let mut f = if append {
        OpenOptions::new().append(true).open(path)
    } else {
        File::create(path)
    }
    .map_err(|e| io_err(path, e))?;
    let mut text = String::new();
    if !append {
        text.push_str("epoch,loss\n");
    }
    for (i, l) in curve.iter().enumerate() {
        text.push_str(&format!("{},{}\n", first_epoch + i, l));
    }
    f.write_all(text.as_bytes()).map_err(|e| io_err(path, e))?;

    println!(
        "trained epochs {}..{} ({} steps); final loss {:.6}; checkpoint {}",
        first_epoch,
        first_epoch + curve.len(),
        model.params.step,
        curve.last().copied().unwrap_or(f64::NAN),
        cfg.checkpoint.display()
    );
    Ok(0)
}

fn cmd_generate(cfg: &RunConfig, video: Option<&str>, as_baseline: bool) -> Result<u8, Failure> {
    require(&cfg.dataset_root.join(gazegen::dataset::MANIFEST_FILE), "manifest")?;
    let mut videos = load_dataset(cfg, &cfg.dataset_root)?;
    if let Some(id) = video {
        videos.retain(|v| v.meta().video_id == id);
        if videos.is_empty() {
            return Err(Failure::Data(Error::InvalidInput(format!("video {id} is not in the manifest"))));
        }
    }
    let set = if as_baseline {
        baseline(cfg, &videos)?
    } else {
        require(&cfg.checkpoint, "checkpoint")?;
        let model = load_checkpoint(&cfg.checkpoint, cfg.denoiser()?)?;
        generate(cfg, &model, &videos)?
    };
    write_generated_set(&cfg.gen_root, &set)?;
    for g in &set {
        println!(
            "{}: {} trajectories of {} samples{}",
            g.meta.video_id,
            g.samples.len(),
            g.samples.first().map_or(0, |s| s.len()),
            if g.truncated { " (stimulus ended early)" } else { "" }
        );
    }
    Ok(0)
}

fn print_report(report: &ScoreReport) {
    println!("{:<12} {:>12} {:>12}", "metric", "mean", "best");
    for m in Metric::ALL {
        let s = report.get(m);
        println!("{:<12} {:>12.4} {:>12.4}", m.name(), s.mean, s.best);
    }
}

fn cmd_evaluate(cfg: &RunConfig) -> Result<u8, Failure> {
    require(&cfg.gen_root, "generated root")?;
    let report = evaluate_roots(cfg, &cfg.dataset_root, &cfg.gen_root)?;
    report.write_csv(&cfg.report)?;
    println!("{} videos; report {}", report.videos.len(), cfg.report.display());
    print_report(&report);
    Ok(0)
}
