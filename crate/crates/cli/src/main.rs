use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oplab::experiment::{self, Axis, ExperimentConfig, Layout, LrRange, ResultRow};
use oplab::{Error, Precision, Result, Scalar};

#[derive(Parser)]
#[command(name = "oplab", version, about = "Operator-learning experiments: generate data, train, sweep, report")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one dataset per seed.
    Generate(Common),
    /// Train the configured variant once per seed.
    Train(Common),
    /// Train every variant of an axis for every seed.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// activation, dropout or swa; defaults to the config's `sweep`.
        #[arg(long)]
        axis: Option<String>,
    },
    /// Summarize the results store.
    Report {
        #[arg(long, default_value = "oplab-out")]
        out: PathBuf,
    },
    /// Learning-rate range test from the initial weights.
    LrFind {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e-6)]
        lr_min: f64,
        #[arg(long, default_value_t = 1.0)]
        lr_max: f64,
        #[arg(long, default_value_t = 100)]
        steps: usize,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; without it the koopman/pendulum preset is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only this seed instead of the config's list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "oplab-out")]
    out: PathBuf,
    /// 32 or 64.
    #[arg(long)]
    precision: Option<u32>,
    /// Generate missing datasets instead of failing.
    #[arg(long)]
    auto_generate: bool,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, Layout)> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::from_toml("")?,
        };
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(bits) = self.precision {
            cfg.precision = Precision::try_from(bits).map_err(|e| Error::Config(format!("--precision: {e}")))?;
        }
        cfg.auto_generate |= self.auto_generate;
        cfg.validate()?;
        Ok((cfg, Layout::new(&self.out)))
    }
}

fn print_rows(rows: &[ResultRow]) {
    for r in rows {
        println!(
            "{} {} {} seed={} test_mse={:.4e} test_rel_l2={:.4e} ({:.1}s)",
            r.architecture, r.equation, r.variant, r.seed, r.test_mse, r.test_rel_l2, r.wall_seconds
        );
    }
}

fn dispatch<T: Scalar>(command: &Command) -> Result<()> {
    match command {
        Command::Generate(c) => {
            let (cfg, layout) = c.load()?;
            for p in experiment::generate::<T>(&cfg, &layout)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Train(c) => {
            let (cfg, layout) = c.load()?;
            print_rows(&experiment::train_runs::<T>(&cfg, &layout)?);
        }
        Command::Sweep { common, axis } => {
            let (cfg, layout) = common.load()?;
            let axis: Axis = match (axis, cfg.sweep) {
                (Some(a), _) => a.parse().map_err(|e| Error::Config(format!("--axis: {e}")))?,
                (None, Some(a)) => a,
                (None, None) => return Err(Error::Config("no sweep axis: pass --axis or set `sweep` in the config".into())),
            };
            let rows = experiment::sweep::<T>(&cfg, &layout, axis)?;
            print_rows(&rows);
            let rep = experiment::render_report(&rows, &layout)?;
            print!("\n{}", rep.markdown);
        }
        Command::Report { out } => {
            let rep = experiment::report(&Layout::new(out))?;
            print!("{}", rep.markdown);
        }
        Command::LrFind { common, lr_min, lr_max, steps } => {
            let (cfg, layout) = common.load()?;
            let range = LrRange { lr_min: *lr_min, lr_max: *lr_max, steps: *steps };
            for (seed, sweep) in experiment::lr_find::<T>(&cfg, &layout, range)? {
                println!("seed={seed} steps={} suggested_lr={:.4e}", sweep.lrs.len(), sweep.suggestion);
            }
        }
    }
    Ok(())
}

fn precision_of(command: &Command) -> Result<Precision> {
    let common = match command {
        Command::Generate(c) | Command::Train(c) => c,
        Command::Sweep { common, .. } | Command::LrFind { common, .. } => common,
        Command::Report { .. } => return Ok(Precision::F64),
    };
    Ok(common.load()?.0.precision)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = precision_of(&cli.command).and_then(|p| match p {
        Precision::F32 => dispatch::<f32>(&cli.command),
        Precision::F64 => dispatch::<f64>(&cli.command),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(experiment::exit_code(&e) as u8)
        }
    }
}
