use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dualbound::config::{Overrides, RunConfig};
use dualbound::{report, run, CliError};

#[derive(Parser)]
#[command(
    version,
    about = "Upper and lower bounds for life-cycle consumption, investment and insurance"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Scenario preset: example1 or example2.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed for the optimizer initializations.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// 5 starts x 50 iterations instead of 30 x 50.
    #[arg(long, global = true)]
    desk_scale: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize, bound, simulate and verify; write the report and CSVs.
    Run,
    /// Check the scenario conditions and exit.
    Validate,
    /// Budget-identity and martingale checks for the optimized policies.
    Verify,
    /// Write the post-death annuity factor g(t) on the quadrature grid.
    Gfun,
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).map_err(|source| CliError::Io {
            path: p.clone(),
            source,
        })?,
        None => String::new(),
    };
    RunConfig::parse(
        &text,
        &Overrides {
            preset: cli.preset.clone(),
            out: cli.out.clone(),
            seed: cli.seed,
            desk_scale: cli.desk_scale,
        },
    )
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = load(cli)?;
    match cli.command {
        Command::Run => {
            let out = run::run(&cfg)?;
            report::write_artifacts(&out, &cfg.out)?;
            print!("{}", report::render_text(&out));
            eprintln!("artifacts written to {}", cfg.out.display());
        }
        Command::Validate => {
            let v = cfg.scenario.validate();
            for c in &v.checks {
                let status = if c.passed { "ok" } else { "FAILED" };
                match c.first_violation {
                    Some(t) => println!("{:<16} {status} (first violation at t = {t})", c.name),
                    None => println!("{:<16} {status}", c.name),
                }
            }
            if !v.passed() {
                return Err(CliError::Validation("scenario conditions violated".into()));
            }
        }
        Command::Verify => {
            let out = run::run_verify(&cfg)?;
            let mut failed = false;
            for o in &out.outcomes {
                let b = &o.budget;
                let worst = b.martingale.iter().map(|(_, z)| z.abs()).fold(0.0, f64::max);
                let ok = b.z_score.abs() < 3.0 && worst < 3.0;
                failed |= !ok;
                println!(
                    "{:<8} budget lhs {:.6} rhs {:.6} z {:+.3}  martingale max|z| {:.3}  {}",
                    o.method.label,
                    b.lhs,
                    b.rhs,
                    b.z_score,
                    worst,
                    if ok { "ok" } else { "FAILED" }
                );
            }
            if failed {
                return Err(CliError::Numerical(
                    "budget or martingale check outside 3 standard errors".into(),
                ));
            }
        }
        Command::Gfun => {
            let g = run::g_table(&cfg)?;
            let path = cfg.out.join("gfun.csv");
            report::write_g(&path, &g)?;
            println!("g(0) = {:.12}; table written to {}", g.values()[0], path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
