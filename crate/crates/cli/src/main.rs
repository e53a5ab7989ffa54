//! `bice`: run estimations, replication studies and exact oracles from
//! experiment config files.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bice_core::estimators::EstimatorConfig;
use bice_core::fixtures::{self, FIXTURE_NAMES};
use bice_core::oracles::{self, fmt_num, reps_csv, ReplicationSummary, SUMMARY_CSV_HEADER};
use bice_core::{estimate, Error, Method};
use clap::{Parser, Subcommand};

use config::{Experiment, Problem, TruthSource};

pub const RUN_CSV_HEADER: &str = "method,N,b,p_hat,levels,lsf_calls,converged,seed";

#[derive(Parser)]
#[command(name = "bice", version, about = "Rare-event estimation for multi-state systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Overrides the estimator seed (`run`) or replication base seed (`replicate`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output directory; beats the config's `output.dir`.
    #[arg(long, global = true, env = "BICE_OUT_DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// One estimation: writes report.json and run.csv.
    Run { config: PathBuf },
    /// Repeated runs: writes summary.csv, reps.csv and, for BiCE, mean_is_pmf.csv.
    Replicate { config: PathBuf },
    /// Exact failure probability: prints it and writes truth.txt.
    Oracle { config: PathBuf },
    /// Writes a bundled problem with a starter config to `<out-dir>/<name>`.
    GenFixture { name: String },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(w) = cli.workers {
        if w == 0 {
            bail!("--workers must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global()?;
    }
    match &cli.command {
        Command::Run { config } => cmd_run(config, &cli),
        Command::Replicate { config } => cmd_replicate(config, &cli),
        Command::Oracle { config } => cmd_oracle(config, &cli),
        Command::GenFixture { name } => cmd_gen_fixture(name, &cli),
    }
}

fn out_dir(cli: &Cli, exp: Option<&Experiment>) -> PathBuf {
    cli.out_dir
        .clone()
        .or_else(|| exp.and_then(|e| e.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Writes every file only after all contents exist, so failures leave nothing behind.
fn write_all(dir: &Path, files: &[(&str, String)]) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    for (name, contents) in files {
        let path = dir.join(name);
        std::fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

fn b_column(config: &EstimatorConfig) -> String {
    match config.method {
        Method::Bice => config.prior_b().map(fmt_num).unwrap_or_default(),
        _ => String::new(),
    }
}

fn cmd_run(path: &Path, cli: &Cli) -> Result<()> {
    let mut exp = Experiment::load(path)?;
    if let Some(s) = cli.seed {
        exp.estimator.seed = s;
    }
    let report = estimate(exp.problem.lsf(), &exp.input, &exp.estimator, exp.is_model.as_ref())?;
    let row = format!(
        "{},{},{},{},{},{},{},{}",
        report.method.name(),
        report.samples_per_level,
        b_column(&exp.estimator),
        fmt_num(report.p_hat),
        report.levels,
        report.lsf_calls,
        report.converged,
        report.seed
    );
    let json = serde_json::to_string_pretty(&report)? + "\n";
    let dir = out_dir(cli, Some(&exp));
    write_all(&dir, &[("report.json", json), ("run.csv", format!("{RUN_CSV_HEADER}\n{row}\n"))])?;
    println!("p_hat = {}", fmt_num(report.p_hat));
    Ok(())
}

/// Exact failure probability by convolution for lattice linear problems,
/// otherwise by enumeration.
fn exact_pf(exp: &Experiment) -> Result<f64> {
    let result = match &exp.problem {
        Problem::Linear(spec) => match oracles::convolution_pf(spec, &exp.input) {
            Err(Error::NonLattice(_)) => oracles::enumerate_exact_pf(spec, &exp.input),
            other => other,
        },
        p => oracles::enumerate_exact_pf(p.lsf(), &exp.input),
    };
    match result {
        Err(e @ Error::StateSpaceTooLarge { .. }) => Err(anyhow::Error::new(e).context(
            "no exact oracle for this problem; use `true_pf = { mcs = <samples> }` in [replication]",
        )),
        other => Ok(other?),
    }
}

fn cmd_replicate(path: &Path, cli: &Cli) -> Result<()> {
    let exp = Experiment::load(path)?;
    let Some(rep) = &exp.replication else {
        bail!("{}: a [replication] block is required", path.display());
    };
    let Some(truth) = &rep.truth else {
        bail!("{}: replication.true_pf is required", path.display());
    };
    if exp.estimator.method == Method::Is {
        bail!("replicate does not support method `is`");
    }
    let true_pf = match truth {
        TruthSource::Value(v) => *v,
        TruthSource::Oracle => exact_pf(&exp)?,
        TruthSource::Mcs { samples, seed } => {
            let cfg = EstimatorConfig::new(Method::Mcs, usize::try_from(*samples)?).with_seed(*seed);
            let p = estimate(exp.problem.lsf(), &exp.input, &cfg, None)?.p_hat;
            if p == 0.0 {
                bail!("reference MCS with {samples} samples observed no failures");
            }
            p
        }
    };
    let base_seed = cli.seed.unwrap_or(rep.base_seed);
    let (summary, reports) =
        oracles::replicate(&exp.estimator, exp.problem.lsf(), &exp.input, rep.reps, base_seed, true_pf)?;
    let mut files = vec![
        ("summary.csv", format!("{SUMMARY_CSV_HEADER}\n{}\n", summary.csv_row())),
        ("reps.csv", reps_csv(&reports)),
    ];
    if exp.estimator.method == Method::Bice {
        if let Some(table) = summary.mean_params_csv(&exp.input) {
            files.push(("mean_is_pmf.csv", table));
        }
    }
    write_all(&out_dir(cli, Some(&exp)), &files)?;
    print_summary(&summary);
    Ok(())
}

fn print_summary(s: &ReplicationSummary) {
    println!("true p_f    = {}", fmt_num(s.true_pf));
    println!("mean p_hat  = {}", fmt_num(s.mean));
    println!("rel. bias   = {}", fmt_num(s.rel_bias));
    println!("c.o.v.      = {}", fmt_num(s.sample_cov));
    println!("mean cost   = {}", fmt_num(s.mean_cost));
    println!("unconverged = {}/{}", s.fail_count, s.reps);
}

fn cmd_oracle(path: &Path, cli: &Cli) -> Result<()> {
    let exp = Experiment::load(path)?;
    let p = exact_pf(&exp)?;
    let text = format!("{p:.16e}");
    write_all(&out_dir(cli, Some(&exp)), &[("truth.txt", format!("{text}\n"))])?;
    println!("{text}");
    Ok(())
}

fn fixture_config(f: &fixtures::Fixture) -> String {
    let (kind, estimator, truth) = match f.name {
        "ex511" => ("linear", "samples_per_level = 500\ndelta = 1.0\nb = 5.0", "\"oracle\""),
        "ex512" => ("linear", "samples_per_level = 1000\ndelta = 1.5\nb = 10.0", "\"oracle\""),
        "ex52" => ("maxflow", "samples_per_level = 1000\ndelta = 1.5\nb = 1.0", "{ mcs = 2000000, seed = 1 }"),
        _ => ("grid", "samples_per_level = 1000\ndelta = 1.5\nb = 10.0", "\"oracle\""),
    };
    format!(
        "[problem]\nkind = \"{kind}\"\nfile = \"{}\"\n\n[model]\nfile = \"model.toml\"\n\n\
         [estimator]\nmethod = \"bice\"\n{estimator}\n\n\
         [replication]\nreps = 200\nbase_seed = 0\ntrue_pf = {truth}\n\n[output]\ndir = \"out\"\n",
        f.problem_file
    )
}

fn cmd_gen_fixture(name: &str, cli: &Cli) -> Result<()> {
    let Some(f) = fixtures::fixture(name) else {
        bail!("unknown fixture `{name}`; available: {}", FIXTURE_NAMES.join(", "));
    };
    let dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from(".")).join(f.name);
    write_all(
        &dir,
        &[
            (f.problem_file, f.problem.to_string()),
            ("model.toml", f.model.clone()),
            ("config.toml", fixture_config(&f)),
        ],
    )?;
    println!("{}", dir.display());
    Ok(())
}
