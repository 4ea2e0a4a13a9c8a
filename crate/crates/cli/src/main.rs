use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ecm_core::elm::{build_first_layer, write_bundle};
use ecm_core::experiment::{
    emit_conductance_map, image_csv, imprint_simple, output_dir, run_elm, run_simple, run_sweep, single_run_csv,
    with_threads, write_simple_outputs, Architecture, ExperimentConfig, TaskData,
};
use ecm_core::{Error, ErrorClass};

/// Exit codes, one per error class.
const EXIT_CONFIG: u8 = 3;
const EXIT_DATASET: u8 = 4;
const EXIT_IO: u8 = 5;
const EXIT_NUMERICAL: u8 = 6;
const EXIT_SIMULATION: u8 = 7;

#[derive(Parser, Debug)]
#[command(name = "ecm-sim", version, about = "ECM memristive crossbar imprinting simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Single-crossbar signature classifier, one run.
    Simple(Common),
    /// Dual-crossbar ELM classifier, one run, with model export.
    Elm(Common),
    /// Seeded parameter sweep.
    Sweep(Common),
    /// Conductance map of one imprinted column.
    Map(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Flat key=value config file.
    #[arg(long)]
    config: PathBuf,

    /// Output directory (default: ./out).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => EXIT_CONFIG,
        ErrorClass::Dataset => EXIT_DATASET,
        ErrorClass::Io => EXIT_IO,
        ErrorClass::Numerical => EXIT_NUMERICAL,
        ErrorClass::Simulation => EXIT_SIMULATION,
    }
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn run(cli: Cli) -> Result<(), Error> {
    let (Command::Simple(common) | Command::Elm(common) | Command::Sweep(common) | Command::Map(common)) = &cli.command;
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = output_dir(common.out.as_deref());
    let threads = common.threads.unwrap_or(0);
    let data = TaskData::load(&cfg)?;
    log::info!("task {} loaded: {} train / {} test items", cfg.task, data.train.len(), data.test.len());

    match &cli.command {
        Command::Simple(_) => {
            cfg.architecture = Architecture::Simple;
            cfg.validate()?;
            let run = with_threads(threads, || run_simple(&cfg, &data, cfg.seed))??;
            write_simple_outputs(&out, &cfg, &data, &run)?;
            println!("accuracy {}", run.accuracy);
        }
        Command::Elm(_) => {
            cfg.architecture = Architecture::Elm;
            cfg.validate()?;
            let run = with_threads(threads, || run_elm(&cfg, &data, cfg.seed))??;
            create_dir(&out)?;
            write(&out.join("results.csv"), &single_run_csv(&cfg, cfg.seed, run.accuracy))?;
            write_bundle(&out.join("model"), &run.system)?;
            println!("accuracy {}", run.accuracy);
        }
        Command::Sweep(_) => {
            let result = with_threads(threads, || run_sweep(&cfg, &data))??;
            result.write(&out)?;
            for a in result.aggregates() {
                println!("{}={} mean {:.4} std {:.4}", cfg.sweep, a.value, a.mean, a.std);
            }
        }
        Command::Map(_) => {
            let cb = match cfg.architecture {
                Architecture::Simple => imprint_simple(&cfg, &data, cfg.seed)?,
                Architecture::Elm => build_first_layer(&cfg.elm_config(cfg.seed), &data.train)?
                    .ok_or_else(|| Error::Config("first_layer=direct has no crossbar to map".into()))?,
            };
            let image = emit_conductance_map(&cb, cfg.column, data.train.width, data.train.height)?;
            create_dir(&out)?;
            let path = out.join(format!("conductance_map_col{}.csv", cfg.column));
            write(&path, &image_csv(&image))?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
