use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ibia::approx::Heuristic;
use ibia::driver::{estimate_with_evidence, Options, DEFAULT_MCS_P};
use ibia::harness::{
    bench_dir, brute_force_log_pr, full_compile_stats, parse_reference_csv, rows_to_csv, to_log10, STATE_CAP,
};
use ibia::model::{parse_evidence, parse_uai};
use ibia::{Evidence, IbiaError};

const EXIT_FAILURE: u8 = 1;
const EXIT_INPUT: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;

#[derive(Parser)]
#[command(name = "ibia", version, about = "Partition function estimation with bounded clique tree forests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeuristicArg {
    Maxmi,
    Random,
}

impl From<HeuristicArg> for Heuristic {
    fn from(h: HeuristicArg) -> Self {
        match h {
            HeuristicArg::Maxmi => Heuristic::MaxMi,
            HeuristicArg::Random => Heuristic::Random,
        }
    }
}

#[derive(clap::Args)]
struct RunArgs {
    /// Clique size bound while building (log2 of the joint state count).
    #[arg(long, default_value_t = DEFAULT_MCS_P)]
    mcs_p: f64,
    /// Clique size bound after approximation [default: mcs-p - 5].
    #[arg(long)]
    mcs_im: Option<f64>,
    #[arg(long, value_enum, default_value = "maxmi")]
    approx_heuristic: HeuristicArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Raise mcs-p by one whenever no remaining factor fits.
    #[arg(long)]
    escalate_mcs: bool,
    /// Check every intermediate forest (slow).
    #[arg(long)]
    verify: bool,
}

impl RunArgs {
    fn options(&self) -> Options {
        Options {
            mcs_p: self.mcs_p,
            mcs_im: self.mcs_im,
            heuristic: self.approx_heuristic.into(),
            seed: self.seed,
            escalate: self.escalate_mcs,
            verify: self.verify,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Estimate log10 of the partition function.
    Infer {
        model: PathBuf,
        #[arg(long)]
        evid: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
        /// Write the full JSON report here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Exact answer by full compilation, or brute force when that is cheaper.
    Oracle {
        model: PathBuf,
        #[arg(long)]
        evid: Option<PathBuf>,
        /// Largest joint state count to enumerate.
        #[arg(long, default_value_t = STATE_CAP)]
        cap: u64,
    },
    /// Run every .uai file in a directory and compare with reference values.
    Bench {
        dir: PathBuf,
        /// CSV of `name,log10_pr` rows.
        #[arg(long = "ref")]
        reference: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<String, IbiaError> {
    fs::read_to_string(path).map_err(|e| IbiaError::InvalidParameter(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), IbiaError> {
    fs::write(path, text).map_err(|e| IbiaError::InvalidParameter(format!("{}: {e}", path.display())))
}

fn load(model: &Path, evid: Option<&Path>) -> Result<(ibia::Model, Evidence), IbiaError> {
    let m = parse_uai(&read(model)?)?;
    let ev = match evid {
        Some(p) => parse_evidence(&read(p)?, &m)?,
        None => Evidence::new(),
    };
    Ok((m, ev))
}

fn fmt_log10(x: f64) -> String {
    if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x:.6}")
    }
}

fn run(cli: Cli) -> Result<(), IbiaError> {
    match cli.command {
        Command::Infer { model, evid, run, json } => {
            let (m, ev) = load(&model, evid.as_deref())?;
            let est = estimate_with_evidence(&m, &ev, &run.options())?;
            println!("log10 PR = {}", fmt_log10(est.log10_pr));
            println!(
                "components = {}, CTFs = {}, peak clique size = {}, time = {:.3}s",
                est.components.len(),
                est.num_ctfs(),
                est.peak_max_clique_size,
                est.wall_time_secs
            );
            if let Some(path) = json {
                write(&path, &est.to_json())?;
            }
        }
        Command::Oracle { model, evid, cap } => {
            let (m, ev) = load(&model, evid.as_deref())?;
            let m = ibia::model::apply_evidence(&m, &ev)?;
            let full = full_compile_stats(&m, cap)?;
            println!("full compile clique size = {}", full.mcs_f);
            let exact = match full.log_pr {
                Some(lp) => lp,
                None => brute_force_log_pr(&m, cap)?,
            };
            println!("log10 PR = {}", fmt_log10(to_log10(exact)));
        }
        Command::Bench { dir, reference, run, out } => {
            let refs = parse_reference_csv(&read(&reference)?)?;
            let rows = bench_dir(&dir, &refs, &run.options())?;
            let csv = rows_to_csv(&rows);
            match out {
                Some(path) => write(&path, &csv)?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

fn exit_code(e: &IbiaError) -> u8 {
    match e {
        IbiaError::Parse { .. }
        | IbiaError::TableLength { .. }
        | IbiaError::UnknownVariable(..)
        | IbiaError::StateOutOfRange { .. }
        | IbiaError::CardinalityMismatch { .. }
        | IbiaError::InvalidFactor(..)
        | IbiaError::InvalidParameter(..) => EXIT_INPUT,
        IbiaError::BoundTooSmall { .. } | IbiaError::Infeasible(..) | IbiaError::CapExceeded { .. } => EXIT_INFEASIBLE,
        _ => EXIT_FAILURE,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
