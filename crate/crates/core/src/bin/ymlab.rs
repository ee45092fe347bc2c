use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ymlab::io::presets::{find_preset, PRESETS};
use ymlab::io::runner::{gradcheck_config, refine_study};
use ymlab::io::{cmd_resume, run_config, RunConfig, RunOptions};

#[derive(Parser)]
#[command(name = "ymlab", version, about = "Yang-Mills and Hermitian-Yang-Mills flows on lattice tori")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset, used when --config is absent.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed_override: Option<u64>,
    /// Accepted steps between series rows.
    #[arg(long)]
    cadence: Option<u64>,
}

impl Common {
    fn load(&self) -> ymlab::Result<RunConfig> {
        match (&self.config, &self.preset) {
            (Some(p), _) => RunConfig::load(p),
            (None, Some(name)) => ymlab::io::presets::preset(name),
            (None, None) => Err(ymlab::Error::Config("pass --config <file> or --preset <name>".into())),
        }
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            out_dir: self.out_dir.clone(),
            threads: self.threads,
            seed_override: self.seed_override,
            cadence: self.cadence,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a flow and write series.csv, summary.toml and checkpoint.bin.
    Run(Common),
    /// Check the discrete gradient against directional derivatives.
    Gradcheck(Common),
    /// Rerun a configuration at several resolutions of the same box.
    RefineStudy {
        #[command(flatten)]
        common: Common,
        /// Sites per axis, coarsest first.
        #[arg(long, value_delimiter = ',', default_values_t = [8usize, 12])]
        levels: Vec<usize>,
        /// Matched sample times.
        #[arg(long, default_value_t = 4)]
        samples: usize,
    },
    /// Continue a run from a checkpoint.
    Resume {
        checkpoint: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// List the built-in presets, or print one.
    Presets { name: Option<String> },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> ymlab::Result<ExitCode> {
    match cli.command {
        Command::Run(c) => {
            let s = run_config(c.load()?, &c.options())?;
            println!(
                "{}: outcome {}, verdict {}, t = {:.6e}, energy {:.6e} -> {:.6e}",
                s.experiment, s.outcome, s.verdict, s.t_final, s.initial_energy, s.final_energy
            );
        }
        Command::Gradcheck(c) => {
            let r = gradcheck_config(&c.load()?, &c.options())?;
            for case in &r.cases {
                println!("{:<16} dE {:+.12e}  2<G,B> {:+.12e}  rel {:.2e}", case.label, case.directional, case.predicted, case.rel_error);
            }
            println!("max relative error {:.3e} (tolerance {:.0e})", r.max_rel_error, r.tolerance);
            if !r.passed {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::RefineStudy { common, levels, samples } => {
            let r = refine_study(&common.load()?, &levels, samples, &common.options())?;
            for l in &r.levels {
                let last = l.samples.last();
                println!(
                    "side {:>3}: outcome {}, detector {}, sup|F|(t = {:.3e}) = {:.6e}",
                    l.side,
                    l.outcome,
                    l.detector,
                    last.map_or(0.0, |s| s.t),
                    last.map_or(f64::NAN, |s| s.sup_f)
                );
            }
            println!("ratios {:?}: {}", r.sup_ratios, r.verdict);
        }
        Command::Resume { checkpoint, out_dir, threads } => {
            let opts = RunOptions {
                out_dir,
                threads,
                ..Default::default()
            };
            let s = cmd_resume(&checkpoint, &opts)?;
            println!("{}: outcome {}, verdict {}, t = {:.6e}", s.experiment, s.outcome, s.verdict, s.t_final);
        }
        Command::Presets { name } => match name {
            Some(n) => print!("{}", find_preset(&n)?.toml),
            None => {
                for p in PRESETS {
                    println!("{:<18} {}", p.name, p.description);
                }
            }
        },
    }
    Ok(ExitCode::SUCCESS)
}
