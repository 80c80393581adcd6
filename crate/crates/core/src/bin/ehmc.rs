use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use entropy_hmc::cli::{self, Preset, RunConfig};
use entropy_hmc::Error;

#[derive(Parser)]
#[command(name = "ehmc", version = cli::VERSION, about = "Entropy-based adaptive HMC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// TOML run configuration; optional when every key is given with --set.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set sampler.L=5`.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (same as `--set output.dir=...`).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Master seed (same as `--set seed=...`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Adapt, then sample, then write the report.
    Run {
        #[command(flatten)]
        args: ConfigArgs,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Repeat a run for several leapfrog counts.
    Sweep {
        #[command(flatten)]
        args: ConfigArgs,
        /// Values of L: `1..10`, `1..=10` or `1,2,5`.
        #[arg(long, default_value = "1..10")]
        values: String,
    },
    /// Validate a configuration and print it with all defaults filled in.
    Check {
        #[command(flatten)]
        args: ConfigArgs,
    },
    /// List the target presets.
    Presets,
}

fn load(args: &ConfigArgs) -> Result<RunConfig, Error> {
    let mut overrides = args.overrides.clone();
    if let Some(o) = &args.out {
        overrides.push(format!(
            "output.dir={}",
            toml_string(&o.display().to_string())
        ));
    }
    if let Some(s) = args.seed {
        overrides.push(format!("seed={s}"));
    }
    match &args.config {
        Some(p) => RunConfig::from_file(p, &overrides),
        None => RunConfig::parse("", &overrides),
    }
}

fn toml_string(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn print_summary(cfg: &RunConfig, out: &entropy_hmc::sampler::RunOutput) {
    let r = &out.report;
    let f = |x: Option<f64>| x.map_or("NA".to_string(), |v| format!("{v:.4}"));
    println!(
        "L={} h={:.5} acceptance={} min_ess={} median_ess={} max_rhat={} divergences={} cond={} wall={:.2}s",
        cfg.sampler.steps,
        out.session.h,
        f(r.acceptance_rate),
        f(r.min_ess),
        f(r.median_ess),
        f(r.max_rhat),
        r.divergences,
        f(r.cond_number),
        r.wall_seconds
    );
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { args, resume } => load(&args).and_then(|cfg| {
            let out = cli::run(&cfg, resume.as_deref())?;
            print_summary(&cfg, &out);
            Ok(())
        }),
        Command::Sweep { args, values } => load(&args).and_then(|cfg| {
            let ls = cli::parse_l_values(&values)?;
            for (l, out) in ls.iter().zip(cli::sweep(&cfg, &ls)?) {
                let mut c = cfg.clone();
                c.sampler.steps = *l;
                print_summary(&c, &out);
            }
            Ok(())
        }),
        Command::Check { args } => load(&args).and_then(|cfg| {
            print!("{}", cfg.to_toml()?);
            Ok(())
        }),
        Command::Presets => {
            for p in Preset::ALL {
                println!("{:<13} {}", p.as_str(), p.description());
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
