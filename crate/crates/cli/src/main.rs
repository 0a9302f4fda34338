//! `duopoly`: solve, sweep, compare and oracle runs from the command line.
//!
//! Exit codes: 0 success, 2 bad input or I/O, 3 solver failure.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mfg_duopoly::oracle::DEFAULT_EPS;
use mfg_duopoly::sweep::{
    default_c_grid, default_u0_grid, emit_rows_csv, emit_summary_csv, parse_grid, parse_kinds,
    parse_rows_csv_path, write_rows_csv, write_summary_csv,
};
use mfg_duopoly::{
    compare_report, run_sweep, solve_finite_mlfne_with, solve_finite_ne_with, solve_mlfne, solve_ne,
    Equilibrium, EquilibriumKind, Error, InitialDistribution, ModelParams, OracleConfig,
    OracleResult, SweepRow, SweepSpec, U0Sampling, DEFAULT_TOL,
};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "duopoly", version, about = "Mean-field advertising duopoly solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one equilibrium.
    #[command(allow_negative_numbers = true)]
    Solve {
        #[arg(long)]
        kind: EquilibriumKind,
        #[arg(long)]
        c: f64,
        #[arg(long = "u0-mean")]
        u0_mean: f64,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long)]
        json: bool,
    },
    /// Solve a (c, u0_mean) grid and write one CSV row per point.
    #[command(allow_negative_numbers = true)]
    Sweep {
        /// `default`, a comma list, `lin:a:b:n` or `log:a:b:n`.
        #[arg(long, default_value = "default")]
        c: String,
        #[arg(long, default_value = "default")]
        u0: String,
        #[arg(long, default_value = "ne,mlfne")]
        kinds: String,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long)]
        no_costs: bool,
    },
    /// Pair NE and MLF-NE rows of a sweep CSV and report the differences.
    Compare {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Run the finite-population oracle.
    #[command(allow_negative_numbers = true)]
    Oracle {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        kind: EquilibriumKind,
        #[arg(long)]
        c: f64,
        /// Mean of the initial preferences; ignored with --atoms-csv.
        #[arg(long = "u0-mean")]
        u0_mean: Option<f64>,
        /// CSV with `value,weight` columns describing the initial law.
        #[arg(long)]
        atoms_csv: Option<PathBuf>,
        /// Put every consumer at the mean instead of spreading a mean-only law.
        #[arg(long)]
        point_mass: bool,
        #[arg(long, value_enum, default_value_t = Sampling::Stratified)]
        sampling: Sampling,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_EPS)]
        eps: f64,
        /// Write the final population as `u0,u_final`.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Sampling {
    Stratified,
    Iid,
}

fn solve_row(kind: EquilibriumKind, c: f64, u0_mean: f64, alpha: f64, tol: f64) -> Result<SweepRow, Error> {
    let params = ModelParams::canonical(c).with_alpha(alpha);
    params.validate()?;
    let eq: Equilibrium = match kind {
        EquilibriumKind::Ne => solve_ne(&params, &InitialDistribution::mean_only(u0_mean)?, tol)?,
        EquilibriumKind::Mlfne => solve_mlfne(&params, u0_mean, tol)?,
    };
    let (cost1, cost2) = eq.firm_costs(&params);
    Ok(SweepRow {
        kind,
        c,
        u0_mean,
        u1: eq.u1,
        u2: eq.u2,
        mu_bar: eq.mu_bar,
        cost1: Some(cost1),
        cost2: Some(cost2),
        residual: eq.max_residual(),
    })
}

fn print_json(value: &impl Serialize) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    println!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct OracleSummary {
    kind: EquilibriumKind,
    n: usize,
    u1: f64,
    u2: f64,
    mean_pref: f64,
    sweeps: usize,
    max_unilateral_gain: f64,
    max_consumer_gain: f64,
    max_firm_gain: f64,
    eps_consumer: f64,
    eps_firm: f64,
    certified: bool,
}

fn report_oracle(r: &OracleResult, certified: bool, json: bool) -> Result<(), Error> {
    let s = OracleSummary {
        kind: r.kind,
        n: r.n,
        u1: r.u1,
        u2: r.u2,
        mean_pref: r.mean_pref,
        sweeps: r.sweeps,
        max_unilateral_gain: r.max_unilateral_gain,
        max_consumer_gain: r.max_consumer_gain,
        max_firm_gain: r.max_firm_gain,
        eps_consumer: r.eps_consumer,
        eps_firm: r.eps_firm,
        certified,
    };
    if json {
        return print_json(&s);
    }
    println!("kind={} n={} u1={} u2={} mean_pref={}", s.kind, s.n, s.u1, s.u2, s.mean_pref);
    println!(
        "sweeps={} max_unilateral_gain={:e} (consumers {:e} <= {:e}, firms {:e} <= {:e}) certified={}",
        s.sweeps, s.max_unilateral_gain, s.max_consumer_gain, s.eps_consumer, s.max_firm_gain, s.eps_firm, certified
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Solve { kind, c, u0_mean, alpha, tol, json } => {
            let row = solve_row(kind, c, u0_mean, alpha, tol)?;
            if json {
                print_json(&row)
            } else {
                write_rows_csv(std::slice::from_ref(&row), std::io::stdout().lock())
            }
        }
        Command::Sweep { c, u0, kinds, out, tol, no_costs } => {
            let spec = SweepSpec {
                c_values: parse_grid(&c, default_c_grid)?,
                u0_means: parse_grid(&u0, default_u0_grid)?,
                kinds: parse_kinds(&kinds)?,
                tol,
                include_costs: !no_costs,
            };
            let result = run_sweep(&spec)?;
            match &out {
                Some(path) => emit_rows_csv(&result.rows, path)?,
                None => write_rows_csv(&result.rows, std::io::stdout().lock())?,
            }
            if result.failures.is_empty() {
                return Ok(());
            }
            let mut err = std::io::stderr().lock();
            for f in &result.failures {
                let _ = writeln!(err, "failed {} c={} u0_mean={}: {}", f.kind, f.c, f.u0_mean, f.message);
            }
            Err(Error::Solver(format!("{} grid point(s) failed", result.failures.len())))
        }
        Command::Compare { input, out, json } => {
            let rows = parse_rows_csv_path(&input)?;
            let summary = compare_report(&rows)?;
            if json {
                return print_json(&summary);
            }
            match &out {
                Some(path) => emit_summary_csv(&summary, path),
                None => write_summary_csv(&summary, std::io::stdout().lock()),
            }
        }
        Command::Oracle {
            n,
            kind,
            c,
            u0_mean,
            atoms_csv,
            point_mass,
            sampling,
            seed,
            eps,
            snapshot,
            json,
        } => {
            let dist = match (&atoms_csv, u0_mean) {
                (Some(path), _) => InitialDistribution::from_csv_path(path)?,
                (None, Some(m)) if point_mass => InitialDistribution::point_mass(m)?,
                (None, Some(m)) => InitialDistribution::mean_only(m)?,
                (None, None) => {
                    return Err(Error::InvalidInput("give --u0-mean or --atoms-csv".into()));
                }
            };
            let config = OracleConfig::default().with_eps(eps).with_sampling(match sampling {
                Sampling::Stratified => U0Sampling::Stratified,
                Sampling::Iid => U0Sampling::Iid { seed },
            });
            let params = ModelParams::canonical(c);
            let outcome = match kind {
                EquilibriumKind::Ne => solve_finite_ne_with(n, &dist, &params, &config),
                EquilibriumKind::Mlfne => solve_finite_mlfne_with(n, &dist, &params, &config),
            };
            let (result, error) = match outcome {
                Ok(r) => (r, None),
                Err(Error::NotCertified { gain, eps, result }) => {
                    let msg = format!("best unilateral gain {gain:e} exceeds {eps:e}");
                    (*result, Some(Error::Oracle(format!("eps-Nash certificate failed: {msg}"))))
                }
                Err(e) => return Err(e),
            };
            if let Some(path) = &snapshot {
                result.population.write_snapshot(path)?;
            }
            report_oracle(&result, error.is_none(), json)?;
            error.map_or(Ok(()), Err)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}
