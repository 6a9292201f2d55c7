//! Command-line front end for contactkit: scene simulation, standalone
//! contact reduction, phase benchmarks and the acceptance suites.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub mod bench;
pub mod checks;
pub mod commands;

#[derive(Debug, Parser)]
#[command(name = "contactkit", version, about = "Penalty-contact simulation with contact reduction")]
pub struct Cli {
    /// Directory for all written artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,

    /// Reserved. The pipeline is deterministic and ignores it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Config override `key.path=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a configured scene and write its trajectory CSV and report.
    Simulate { config: PathBuf },

    /// Reduce and stiffness-bound a contact set document.
    Reduce {
        input: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Metric position weight; defaults to 1/L² of the input's bounding box.
        #[arg(long)]
        c: Option<f64>,
        /// Absolute net-stiffness bound (N/m).
        #[arg(long, conflicts_with = "factor")]
        k_max: Option<f64>,
        /// Bound as a multiple of the per-contact stiffness.
        #[arg(long)]
        factor: Option<f64>,
    },

    /// Time the baseline and reduced variants of a scene.
    Bench {
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Worker threads sharing the repeats.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },

    /// Run an acceptance suite and print one line per criterion.
    Validate {
        #[arg(value_enum)]
        suite: Suite,
        /// Directory holding the shipped scene configs.
        #[arg(long, default_value = "configs")]
        configs: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Incline,
    ForceStability,
    QpOracle,
    ContactConfigs,
    Speed,
    All,
}

impl Suite {
    pub fn criteria(self) -> &'static [u8] {
        match self {
            Suite::Incline => &[2, 3, 4],
            Suite::ForceStability => &[5, 8],
            Suite::QpOracle => &[1],
            Suite::ContactConfigs => &[7, 9],
            Suite::Speed => &[6],
            Suite::All => &[1, 2, 3, 4, 5, 6, 7, 8, 9],
        }
    }
}

/// Run one parsed invocation and return the process exit code.
pub fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Simulate { config } => {
            let out = commands::simulate(&config, &cli.overrides, &cli.out_dir)?;
            println!("{}", out.summary());
            Ok(0)
        }
        Command::Reduce {
            input,
            k,
            c,
            k_max,
            factor,
        } => {
            let bound = commands::bound_from_args(k_max, factor);
            let out = commands::reduce_file(&input, k, c, bound, &cli.out_dir)?;
            println!(
                "{} -> {} contacts, written to {}",
                out.diagnostics.input_count,
                out.diagnostics.output_count,
                out.output.display()
            );
            Ok(0)
        }
        Command::Bench { config, repeats, jobs } => {
            let report = bench::bench_config(&config, &cli.overrides, repeats, jobs)?;
            print!("{}", report.table());
            let path = bench::write_report(&report, &cli.out_dir)?;
            println!("report: {}", path.display());
            Ok(0)
        }
        Command::Validate { suite, configs } => {
            let ctx = checks::Context {
                configs,
                out_dir: cli.out_dir,
                exe: std::env::current_exe().ok(),
            };
            let results = checks::run_criteria(suite.criteria(), &ctx)?;
            for r in &results {
                println!("{r}");
            }
            Ok(if results.iter().all(|r| r.pass) { 0 } else { 1 })
        }
    }
}
