use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{LevelFilter, Log, Metadata, Record};

use neuralsolve::harness::{
    generate_data, preset, preset_names, read_run, run_experiment, write_outputs, ExperimentConfig, Mode,
};
use neuralsolve::{Error, Result};

#[derive(Parser)]
#[command(name = "neuralsolve", version, about = "Train networks through ODE solvers and reproduce the benchmark experiments")]
struct Cli {
    /// Print progress messages (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Config file, or the name of a built-in preset.
    #[arg(long)]
    config: String,
    /// Output directory; defaults to the config's output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace every seed in the config with this value.
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the reference solution and noisy observations.
    Generate(RunArgs),
    /// Run a discovery or estimation experiment.
    Run(RunArgs),
    /// Trace stability-region boundaries.
    Stability {
        /// Config file or preset; defaults to every multistep method.
        #[arg(long, default_value = "stability-all")]
        config: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Samples on the unit circle.
        #[arg(long)]
        points: Option<usize>,
    },
    /// Run one experiment per scheme and tabulate MSE and training time.
    Compare(RunArgs),
    /// Print the summary and tables of a finished run directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// List built-in presets.
    Presets,
}

struct StderrLogger(LevelFilter);

impl Log for StderrLogger {
    fn enabled(&self, m: &Metadata) -> bool {
        m.level() <= self.0
    }

    fn log(&self, r: &Record) {
        if self.enabled(r.metadata()) {
            eprintln!("[{}] {}", r.level().as_str().to_ascii_lowercase(), r.args());
        }
    }

    fn flush(&self) {}
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    let logger = Box::leak(Box::new(StderrLogger(level)));
    if log::set_logger(logger).is_ok() {
        log::set_max_level(level);
    }
}

fn load_config(source: &str) -> Result<ExperimentConfig> {
    let path = Path::new(source);
    if path.is_file() {
        ExperimentConfig::parse(&std::fs::read_to_string(path)?)
    } else if preset_names().contains(&source) {
        preset(source)
    } else {
        Err(Error::Config(format!(
            "'{source}' is neither a file nor a preset (presets: {})",
            preset_names().join(", ")
        )))
    }
}

fn prepare(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed_override {
        cfg.override_seeds(seed);
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

/// Runs and writes an experiment; `Ok(false)` means it ran but a stage failed.
fn execute(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    log::info!("running {} ({}) into {}", cfg.name, cfg.mode, out.display());
    let report = run_experiment(cfg)?;
    let files = write_outputs(&report, out)?;
    let summary = std::fs::read_to_string(out.join("summary.txt"))?;
    print!("{summary}");
    if report.config.mode == Mode::CompareLmm {
        if let Some(table) = read_run(out)?.compare {
            print!("{table}");
        }
    }
    println!("wrote {} files to {}", files.len(), out.display());
    Ok(report.failure.is_none())
}

fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Generate(args) => {
            let (cfg, out) = prepare(&args)?;
            for path in generate_data(&cfg, &out)? {
                println!("{}", path.display());
            }
            Ok(true)
        }
        Command::Run(args) => {
            let (cfg, out) = prepare(&args)?;
            if matches!(cfg.mode, Mode::Stability | Mode::CompareLmm) {
                log::info!("{} mode config passed to run", cfg.mode);
            }
            execute(&cfg, &out)
        }
        Command::Stability { config, out, points } => {
            let mut cfg = load_config(&config)?;
            cfg.mode = Mode::Stability;
            if let Some(n) = points {
                cfg.stability_points = n;
            }
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            execute(&cfg, &out)
        }
        Command::Compare(args) => {
            let (mut cfg, out) = prepare(&args)?;
            if cfg.mode != Mode::CompareLmm {
                if matches!(cfg.mode, Mode::Discover | Mode::Estimate) {
                    cfg.compare_task = cfg.mode;
                }
                cfg.mode = Mode::CompareLmm;
                if cfg.schemes.is_empty() {
                    cfg.schemes = ["ab2", "am2", "bdf2"].iter().map(|s| s.parse()).collect::<Result<_>>()?;
                }
            }
            execute(&cfg, &out)
        }
        Command::Report { out } => {
            let run = read_run(&out)?;
            print!("{}", run.summary);
            if !run.metrics.is_empty() {
                println!("\n{:<10} {:>14}", "state", "mse");
                for m in &run.metrics {
                    println!("{:<10} {:>14.6e}", m.state, m.mse);
                }
            }
            if !run.params.is_empty() {
                println!(
                    "\n{:<8} {:>12} {:>12} {:>12} {:>10}",
                    "param", "true", "initial", "estimate", "rel_error"
                );
                for (name, [t, i, e, r]) in &run.params {
                    println!("{name:<8} {t:>12.6} {i:>12.6} {e:>12.6} {r:>10.4}");
                }
            }
            if let Some(table) = &run.compare {
                println!();
                print!("{table}");
            }
            Ok(!run.failed)
        }
        Command::Presets => {
            for name in preset_names() {
                println!("{name}");
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: the run finished with a failure (see summary.txt)");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
