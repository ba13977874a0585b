use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use corridor_core::pipeline::{
    predict_record, prediction_tsv, render_plots, resolve, Overrides, PredictorChoice, Run, CONFIG_FILE,
    DATASET_FILE, MODEL_FILE, REPORT_FILE,
};
use corridor_core::sim::TmcMode;
use corridor_core::{Error, ErrorKind};

/// Simulate a signalized corridor, build graph datasets, train the
/// travel-time distribution model and evaluate it.
#[derive(Debug, Parser)]
#[command(name = "corridor", version)]
struct Cli {
    /// Pipeline configuration (TOML). Defaults to <output>/config.toml when
    /// that exists.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for simulate and build-dataset.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Detector window in seconds.
    #[arg(long, global = true, value_parser = ["300", "900"])]
    window: Option<String>,
    #[arg(long, global = true)]
    tmc: Option<Tmc>,
    #[arg(long, global = true)]
    scenarios: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Tmc {
    Real,
    Random,
    Mixed,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Which {
    Fdgnn,
    Constant,
    Oracle,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample scenarios and write one log per run; skips finished ids.
    Simulate,
    /// Turn logs into the graph dataset.
    BuildDataset,
    /// Train the three networks.
    Train {
        /// Continue from <output>/train_state.json.
        #[arg(long)]
        resume: bool,
    },
    /// Score a predictor on the test split.
    Evaluate {
        #[arg(long, value_enum, default_value = "fdgnn")]
        predictor: Which,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print both predicted densities for one dataset record.
    Predict {
        #[arg(long)]
        record: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Render SVG charts from plot data files.
    Plot {
        /// A plot file or a directory; defaults to <output>/eval.
        path: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
        ErrorKind::Io => 1,
    }
}

fn overrides(cli: &Cli) -> Overrides {
    Overrides {
        seed: cli.seed,
        jobs: cli.jobs,
        window: cli.window.as_deref().map(|w| w.parse().expect("validated by clap")),
        tmc: cli.tmc.map(|t| match t {
            Tmc::Real => TmcMode::Real,
            Tmc::Random => TmcMode::Random,
            Tmc::Mixed => TmcMode::Mixed,
        }),
        scenarios: cli.scenarios,
        output: cli.output.clone(),
        epochs: cli.epochs,
    }
}

fn config_file(cli: &Cli) -> Option<PathBuf> {
    cli.config.clone().or_else(|| {
        let p = cli.output.as_ref()?.join(CONFIG_FILE);
        p.exists().then_some(p)
    })
}

fn run(cli: &Cli) -> Result<(), Error> {
    let config = resolve(config_file(cli).as_deref(), &overrides(cli))?;
    let run = Run::new(config)?;
    match &cli.command {
        Command::Simulate => {
            let s = run.simulate()?;
            println!(
                "simulated {} scenario(s), {} already present, {} failed -> {}",
                s.simulated,
                s.skipped,
                s.failed.len(),
                run.dir().display()
            );
        }
        Command::BuildDataset => {
            let s = run.build_dataset()?;
            println!(
                "{} record(s), {} excluded -> {}",
                s.records,
                s.excluded.len(),
                run.path(DATASET_FILE).display()
            );
            println!(
                "mean mu east {:.1} s, west {:.1} s; mean sigma east {:.1} s, west {:.1} s",
                s.mean_mu[0], s.mean_mu[1], s.mean_sigma[0], s.mean_sigma[1]
            );
        }
        Command::Train { resume } => {
            let r = run.train(*resume)?;
            println!(
                "{} epoch(s), best epoch {}, {} parameters, {:.1} s -> {}, {}",
                r.rows.len(),
                r.best_epoch.map_or("-".into(), |e| e.to_string()),
                r.parameters,
                r.wall_clock_secs,
                run.path(MODEL_FILE).display(),
                run.path(REPORT_FILE).display()
            );
        }
        Command::Evaluate { predictor, checkpoint } => {
            let choice = match predictor {
                Which::Fdgnn => PredictorChoice::Model,
                Which::Constant => PredictorChoice::Constant,
                Which::Oracle => PredictorChoice::Oracle,
            };
            let ev = run.evaluate(choice, checkpoint.as_deref())?;
            print!("{}", ev.table_tsv());
        }
        Command::Predict {
            record,
            checkpoint,
            dataset,
        } => {
            let ck = checkpoint.clone().unwrap_or_else(|| run.path(MODEL_FILE));
            let ds = dataset.clone().unwrap_or_else(|| run.path(DATASET_FILE));
            let p = predict_record(&ck, &ds, record)?;
            print!("{}", prediction_tsv(record, &p));
        }
        Command::Plot { path } => {
            let target = path.clone().unwrap_or_else(|| run.path("eval"));
            for svg in render_plots(Path::new(&target))? {
                println!("{}", svg.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
