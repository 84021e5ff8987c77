//! `bvm`: runs one experiment kind from a TOML spec and reports pass/fail.
//!
//! Exit status is 0 when every check in the record passes, 1 when a check
//! fails and 2 on a usage or runtime error.

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use bvm_core::harness::{self, ExperimentSpec, Kind, ResultRecord};
use bvm_core::par;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bvm", version, about = "Biased voter model experiments and duality checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct RunArgs {
    /// TOML spec; its `kind` must match the subcommand.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the spec).
    #[arg(long)]
    seed: Option<u64>,
    /// Replica count (overrides the spec).
    #[arg(long)]
    reps: Option<usize>,
    /// Directory for CSV data and result.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Print the result record as JSON instead of a summary.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Forward lattice simulation; mean type and label densities.
    SimulateForward(RunArgs),
    /// Forward vs dual replay on shared arrow logs.
    ReplayDuality(RunArgs),
    /// Monte Carlo product or tracer duality on the lattice.
    DualMc(RunArgs),
    /// Branching Brownian dual in the continuum.
    Bbm(RunArgs),
    /// Coalescence-time ladder against the limit law.
    CoalescenceLadder(RunArgs),
    /// Single density SPDE.
    Spde(RunArgs),
    /// Coupled density and label SPDE.
    CoupledSpde(RunArgs),
    /// Martingale residual of the density SPDE.
    MartingaleResidual(RunArgs),
    /// Scalar moment duality, diffusion vs chain.
    MomentDuality(RunArgs),
    /// Label-functional duality for the coupled scalar system.
    CoupledDuality(RunArgs),
    /// Lattice heat-kernel identities.
    KernelCheck(RunArgs),
    /// Pools result.json records of one kind.
    Aggregate {
        records: Vec<PathBuf>,
        /// Write the pooled table as CSV here (JSON goes to stdout).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn load_spec(kind: Kind, args: &RunArgs) -> Result<ExperimentSpec, String> {
    let mut spec = match &args.config {
        Some(path) => ExperimentSpec::from_file(path).map_err(|e| format!("{}: {e}", path.display()))?,
        None => ExperimentSpec::new(kind),
    };
    if spec.kind != kind {
        return Err(format!("config describes `{}` but the subcommand is `{kind}`", spec.kind));
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(reps) = args.reps {
        spec.reps = reps;
    }
    if args.out.is_some() {
        spec.output.clone_from(&args.out);
    }
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

fn print_summary(rec: &ResultRecord) -> io::Result<()> {
    let mut out = io::stdout().lock();
    writeln!(out, "kind      {}", rec.kind)?;
    writeln!(out, "spec hash {}", rec.spec_hash)?;
    writeln!(out, "seed      {}   reps {}   {:.2}s", rec.seed, rec.reps, rec.wall_time_s)?;
    for e in &rec.estimates {
        match e.se {
            Some(se) => writeln!(out, "  {:<24} {:>14.6} ± {:.6}", e.name, e.mean, se)?,
            None => writeln!(out, "  {:<24} {:>14.6}", e.name, e.mean)?,
        }
    }
    for c in &rec.checks {
        writeln!(out, "  [{}] {}: {}", if c.pass { "pass" } else { "FAIL" }, c.name, c.criterion)?;
    }
    for f in &rec.files {
        writeln!(out, "  wrote {}", f.display())?;
    }
    Ok(())
}

fn run(kind: Kind, args: &RunArgs) -> Result<bool, String> {
    let spec = load_spec(kind, args)?;
    let workers = args.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let rec = par::with_workers(workers, || harness::run(&spec)).map_err(|e| e.to_string())?;
    if args.json {
        serde_json::to_writer_pretty(io::stdout().lock(), &rec).map_err(|e| e.to_string())?;
        println!();
    } else {
        print_summary(&rec).map_err(|e| e.to_string())?;
    }
    Ok(rec.pass)
}

fn aggregate(paths: &[PathBuf], csv: Option<&PathBuf>) -> Result<bool, String> {
    let mut records = Vec::with_capacity(paths.len());
    for p in paths {
        let file = File::open(p).map_err(|e| format!("{}: {e}", p.display()))?;
        let rec: ResultRecord = serde_json::from_reader(BufReader::new(file)).map_err(|e| format!("{}: {e}", p.display()))?;
        records.push(rec);
    }
    let summary = harness::aggregate(&records).map_err(|e| e.to_string())?;
    if let Some(path) = csv {
        let file = File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
        summary.write_csv(file).map_err(|e| e.to_string())?;
    }
    summary.write_json(io::stdout().lock()).map_err(|e| e.to_string())?;
    println!();
    Ok(summary.all_pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::SimulateForward(a) => run(Kind::SimulateForward, a),
        Command::ReplayDuality(a) => run(Kind::ReplayDuality, a),
        Command::DualMc(a) => run(Kind::DualMc, a),
        Command::Bbm(a) => run(Kind::Bbm, a),
        Command::CoalescenceLadder(a) => run(Kind::CoalescenceLadder, a),
        Command::Spde(a) => run(Kind::Spde, a),
        Command::CoupledSpde(a) => run(Kind::CoupledSpde, a),
        Command::MartingaleResidual(a) => run(Kind::MartingaleResidual, a),
        Command::MomentDuality(a) => run(Kind::MomentDuality, a),
        Command::CoupledDuality(a) => run(Kind::CoupledDuality, a),
        Command::KernelCheck(a) => run(Kind::KernelCheck, a),
        Command::Aggregate { records, csv } => aggregate(records, csv.as_ref()),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
