use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use covlab::estimators::{net_undercount, F30Placement, Procedure};
use covlab::harness::experiment::{estimate, methods, run_experiment, write_outputs};
use covlab::harness::microdata::{export_microdata, population_snapshot, write_microdata};
use covlab::harness::pipeline::{simulate_replicate, World};
use covlab::harness::{ingest_microdata, validate_microdata, ExperimentConfig, MicrodataPaths};
use covlab::par::Execution;

#[derive(Parser)]
#[command(name = "covlab", version, about = "Census coverage-error laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct Variants {
    /// Mover procedure(s) to evaluate; repeat or comma-separate.
    #[arg(long, value_delimiter = ',')]
    procedure: Vec<Procedure>,
    /// Placement(s) of code 30 in the match-code estimator.
    #[arg(long, value_delimiter = ',')]
    f30: Vec<F30Placement>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one synthetic world and write its microdata and ground truth.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the estimators on microdata files.
    Estimate {
        /// Directory with census.csv, pes.csv, codes.csv and weights.csv.
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        variants: Variants,
    },
    /// Monte Carlo experiment over replicates.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        variants: Variants,
        #[arg(long)]
        replicates: Option<u64>,
        /// Run replicates on one thread.
        #[arg(long)]
        serial: bool,
    },
    /// Check a configuration file and/or a microdata directory.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn load_config(common: &Common, variants: Option<&Variants>) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(v) = variants {
        if !v.procedure.is_empty() || !v.f30.is_empty() {
            cfg.procedures = v.procedure.clone();
            cfg.f30 = v.f30.clone();
        }
    }
    Ok(cfg)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn simulate(common: &Common) -> Result<()> {
    let cfg = load_config(common, None)?;
    cfg.validate()?;
    let world = World::build(&cfg)?;
    let data = simulate_replicate(&world, &cfg, 0)?;
    let files = export_microdata(&world.population, &data)?;
    write_microdata(&files, &common.out)?;
    write_file(&common.out.join("population.csv"), &population_snapshot(&world.population, Some(&data))?)?;
    write_file(&common.out.join("ledger.json"), &(serde_json::to_string_pretty(&data.census.ledger)? + "\n"))?;
    write_file(&common.out.join("config.toml"), &cfg.to_toml())?;
    println!(
        "wrote {} persons, {} census records, {} PES records to {}",
        world.population.persons.len(),
        data.census.records.len(),
        data.field.pes_records.len(),
        common.out.display()
    );
    Ok(())
}

fn estimate_cmd(input: &Path, common: &Common, variants: &Variants) -> Result<()> {
    let cfg = load_config(common, Some(variants))?;
    let ingested = ingest_microdata(&MicrodataPaths::in_dir(input), &cfg.levels)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["group", "method", "t_hat", "c", "u_hat", "r_hat", "status"])?;
    for (group, tallies) in &ingested.groups {
        let counts = ingested.census.get(group).copied().unwrap_or_default();
        for method in methods(&cfg.procedures, &cfg.f30) {
            let result = estimate(method, tallies, &counts, cfg.negative_cells)
                .and_then(|e| Ok((net_undercount(e.t_hat, counts.c)?, e.clamped)));
            let row = match result {
                Ok((s, clamped)) => [
                    format!("{:.6}", s.t_hat),
                    format!("{:.6}", s.c),
                    format!("{:.6}", s.u_hat),
                    format!("{:.6}", s.r_hat),
                    if clamped { "clamped" } else { "ok" }.to_string(),
                ],
                Err(e) => [String::new(), format!("{:.6}", counts.c), String::new(), String::new(), e.to_string()],
            };
            w.write_record([group.to_string(), method.to_string()].into_iter().chain(row))?;
        }
    }
    let text = String::from_utf8(w.into_inner()?)?;
    std::fs::create_dir_all(&common.out)?;
    write_file(&common.out.join("estimates.csv"), &text)?;
    std::io::stdout().write_all(text.as_bytes())?;
    Ok(())
}

fn experiment(common: &Common, variants: &Variants, replicates: Option<u64>, serial: bool) -> Result<()> {
    let mut cfg = load_config(common, Some(variants))?;
    if let Some(r) = replicates {
        cfg.replicates = r;
    }
    let execution = if serial { Execution::Serial } else { Execution::Parallel };
    let report = run_experiment(&cfg, execution)?;
    write_outputs(&report, &common.out)?;
    print!("{}", covlab::harness::experiment::summary_text(&report));
    Ok(())
}

fn validate(config: Option<&Path>, input: Option<&Path>) -> Result<bool> {
    if config.is_none() && input.is_none() {
        bail!("nothing to validate: pass --config and/or --input");
    }
    let mut clean = true;
    if let Some(path) = config {
        match ExperimentConfig::load(path) {
            Ok(_) => println!("{}: ok", path.display()),
            Err(e) => {
                println!("{}: {e}", path.display());
                clean = false;
            }
        }
    }
    if let Some(dir) = input {
        let issues = validate_microdata(&MicrodataPaths::in_dir(dir));
        if issues.is_empty() {
            println!("{}: ok", dir.display());
        }
        for issue in &issues {
            println!("{issue}");
        }
        clean &= issues.is_empty();
    }
    Ok(clean)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { common } => simulate(common).map(|_| true),
        Command::Estimate { input, common, variants } => estimate_cmd(input, common, variants).map(|_| true),
        Command::Experiment { common, variants, replicates, serial } => {
            experiment(common, variants, *replicates, *serial).map(|_| true)
        }
        Command::Validate { config, input } => validate(config.as_deref(), input.as_deref()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
