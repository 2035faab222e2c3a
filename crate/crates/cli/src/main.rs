use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ibood::data::{build_task, ImageDataset, Split};
use ibood::experiment::{self, cell_dir, cell_seed, load_cell_states, ExperimentConfig, RunOptions, OUTPUT_ROOT_ENV};
use ibood::nets::embed_chunked;
use ibood::score::{evaluate_task, write_embeddings_csv, Stage};
use ibood::Error;

#[derive(Parser)]
#[command(name = "ibood", version, about = "Information-bottleneck OOD detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every (ood class, repetition) cell, then aggregate.
    Run(RunArgs),
    /// Re-derive the aggregate report from the score reports in a directory.
    Report {
        dir: PathBuf,
    },
    /// Score a saved checkpoint of one cell.
    Eval(CellArgs),
    /// Write embeddings of one cell as CSV.
    ExportEmbeddings {
        #[command(flatten)]
        cell: CellArgs,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
}

#[derive(Args)]
struct Overrides {
    /// Restrict to these held-out classes (repeatable).
    #[arg(long = "ood-class")]
    ood_classes: Vec<u8>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    base_seed: Option<u64>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Takes precedence over the output-root environment variable.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    pool_limit: Option<usize>,
    #[arg(long)]
    ib_steps: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Skip cells that already completed in the output directory.
    #[arg(long)]
    resume: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct CellArgs {
    /// Config of the run that produced the checkpoint.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    ood_class: u8,
    #[arg(long, default_value_t = 0)]
    repetition: usize,
    #[arg(long, value_enum, default_value_t = StageArg::Retrained)]
    stage: StageArg,
    /// Cell directory; defaults to the one under the run's output directory.
    #[arg(long)]
    cell_dir: Option<PathBuf>,
    /// Output file; the report or CSV goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Pretrained,
    Retrained,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Pretrained => Stage::Pretrained,
            StageArg::Retrained => Stage::Retrained,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Test,
    Support,
}

fn load_config(path: &Path, overrides: Option<&Overrides>) -> ibood::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Ok(root) = std::env::var(OUTPUT_ROOT_ENV) {
        cfg.output_dir = PathBuf::from(root);
    }
    let Some(o) = overrides else { return Ok(cfg) };
    if !o.ood_classes.is_empty() {
        cfg.ood_classes = o.ood_classes.clone();
    }
    if let Some(v) = o.repetitions {
        cfg.repetitions = v;
    }
    if let Some(v) = o.base_seed {
        cfg.base_seed = v;
    }
    if let Some(v) = &o.data_dir {
        cfg.data_dir = v.clone();
    }
    if let Some(v) = &o.output_dir {
        cfg.output_dir = v.clone();
    }
    if let Some(v) = o.epochs {
        cfg.gan.epochs = v;
    }
    if let Some(v) = o.pool_limit {
        cfg.gan.pool_limit = Some(v);
    }
    if let Some(v) = o.ib_steps {
        cfg.ib.steps = v;
    }
    Ok(cfg)
}

fn write_or_print(out: Option<&Path>, text: &str) -> ibood::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_owned(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(args: RunArgs) -> ibood::Result<()> {
    let cfg = load_config(&args.config, Some(&args.overrides))?;
    let summary = experiment::run(&cfg, RunOptions { resume: args.resume })?;
    log::info!(
        "{} cells run, {} resumed; results in {}",
        summary.cells_run,
        summary.cells_skipped,
        cfg.output_dir.display()
    );
    if summary.ood_samples_consumed > 0 {
        return Err(Error::Consistency(format!(
            "{} held-out samples reached training",
            summary.ood_samples_consumed
        )));
    }
    print!("{}", summary.aggregate.to_csv());
    Ok(())
}

fn cell_inputs(args: &CellArgs) -> ibood::Result<(ExperimentConfig, ibood::data::OodTask, PathBuf)> {
    let cfg = load_config(&args.config, None)?;
    cfg.validate()?;
    let train = ImageDataset::load_mnist_split(&cfg.data_dir, Split::Train)?;
    let test = Arc::new(ImageDataset::load_mnist_split(&cfg.data_dir, Split::Test)?);
    let seed = cell_seed(cfg.base_seed, args.ood_class, args.repetition);
    let task = build_task(&train, test, args.ood_class, cfg.n_support, seed)?;
    let dir = args
        .cell_dir
        .clone()
        .unwrap_or_else(|| cell_dir(&cfg.output_dir, args.ood_class, args.repetition));
    Ok((cfg, task, dir))
}

fn eval(args: CellArgs) -> ibood::Result<()> {
    let (cfg, task, dir) = cell_inputs(&args)?;
    let (disc, head) = load_cell_states(&dir, cfg.head, args.stage.into())?;
    let report = evaluate_task(&disc, &head, &task, &cfg.kde, args.stage.into())?;
    log::info!("auprc {:.4}", report.auprc);
    write_or_print(args.out.as_deref(), &report.to_json()?)
}

fn export(args: CellArgs, split: SplitArg) -> ibood::Result<()> {
    let (cfg, task, dir) = cell_inputs(&args)?;
    let (disc, head) = load_cell_states(&dir, cfg.head, args.stage.into())?;
    let ds = match split {
        SplitArg::Test => &*task.test_set,
        SplitArg::Support => &task.support_set,
    };
    let z = embed_chunked(&disc, &head, ds.pixels(), ds.len(), 256)?;
    let is_ood: Vec<bool> = ds.labels().iter().map(|&l| l == task.ood_class).collect();
    match &args.out {
        Some(p) => write_embeddings_csv(p, &z, ds.labels(), &is_ood),
        None => write_or_print(None, &ibood::score::embeddings_csv(&z, ds.labels(), &is_ood)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Report { dir } => experiment::aggregate_dir(&dir).and_then(|agg| {
            agg.write(&dir)?;
            print!("{}", agg.to_csv());
            Ok(())
        }),
        Command::Eval(args) => eval(args),
        Command::ExportEmbeddings { cell, split } => export(cell, split),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Validation(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
