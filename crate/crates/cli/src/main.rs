//! `ng`: command-line front end of the naming-game laboratory.
//!
//! Exit status is 0 when every check passes, 1 when a statistical check
//! fails and 2 on usage or I/O errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use naming_game::harness::{self, ExperimentKind, ExperimentSpec, HarnessError, ResultTable, RunOutput};
use naming_game::reduced::RateMode;

#[derive(Parser)]
#[command(name = "ng", version, about = "Naming game on the complete graph: simulation and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full model from all-mute agents.
    SimFull {
        /// Stop when nobody is mute, or run to a fixed horizon with word counts.
        #[arg(long, value_enum, default_value_t = Phase::Early)]
        phase: Phase,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Two-word chain until consensus.
    Final {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Two-word chain against the mean-field ODE.
    Ode {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Concentration, tail and branching checks.
    Verify {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Scheduler and projection equivalence tests.
    Equivalence {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Fit mean(y | n) against ln n from a result CSV.
    Fit {
        /// Result table written by another verb.
        table: PathBuf,
        #[arg(long, default_value = "n")]
        x: String,
        #[arg(long)]
        y: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Phase {
    Early,
    Middle,
}

#[derive(Args)]
struct RunArgs {
    /// JSON spec file; flags override its values.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Single population size.
    #[arg(long, conflicts_with = "n_grid")]
    n: Option<u64>,
    /// Comma-separated population sizes.
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<u64>>,
    #[arg(long)]
    reps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<RateMode>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    window_start: Option<f64>,
    #[arg(long)]
    snapshot_dt: Option<f64>,
    /// Initial fraction of agents knowing only the first word.
    #[arg(long)]
    x0: Option<f64>,
    /// Initial fraction of agents knowing only the second word.
    #[arg(long)]
    y0: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<RateMode, String> {
    s.parse().map_err(|_| format!("expected `exact` or `normalized`, got {s:?}"))
}

const DEFAULT_REPS: u64 = 100;
const DEFAULT_SEED: u64 = 1;

impl RunArgs {
    fn into_spec(self, kind: ExperimentKind) -> Result<ExperimentSpec, HarnessError> {
        let mut spec = match &self.spec {
            Some(path) => {
                let spec = ExperimentSpec::from_json(&std::fs::read_to_string(path)?)?;
                if spec.kind != kind {
                    return Err(HarnessError::InvalidSpec(format!(
                        "spec kind {} does not match verb ({kind})",
                        spec.kind
                    )));
                }
                spec
            }
            None => {
                let grid = match (&self.n, &self.n_grid) {
                    (Some(n), _) => vec![*n],
                    (None, Some(g)) => g.clone(),
                    (None, None) => return Err(HarnessError::InvalidSpec("give --n, --n-grid or --spec".into())),
                };
                ExperimentSpec::new(kind, grid, DEFAULT_REPS, DEFAULT_SEED)
            }
        };
        if let Some(n) = self.n {
            spec.n_grid = vec![n];
        }
        if let Some(g) = self.n_grid {
            spec.n_grid = g;
        }
        spec.reps = self.reps.unwrap_or(spec.reps);
        spec.seed = self.seed.unwrap_or(spec.seed);
        spec.mode = self.mode.unwrap_or(spec.mode);
        spec.x0 = self.x0.unwrap_or(spec.x0);
        spec.y0 = self.y0.unwrap_or(spec.y0);
        spec.horizon = self.horizon.or(spec.horizon);
        spec.window_start = self.window_start.or(spec.window_start);
        spec.snapshot_dt = self.snapshot_dt.or(spec.snapshot_dt);
        spec.out = self.out.or(spec.out);
        spec.validate()?;
        Ok(spec)
    }
}

/// Columns summarized per n on stdout.
fn key_columns(kind: ExperimentKind) -> &'static [&'static str] {
    match kind {
        ExperimentKind::EarlyPhase => &["X", "T_o"],
        ExperimentKind::MiddlePhase => &["sup_dev", "V", "Z"],
        ExperimentKind::FinalPhase => &["T_c", "z_mid"],
        ExperimentKind::OdeCompare => &["sup_dist"],
        ExperimentKind::OracleEquivalence => &["X_agent", "X_graphical", "T_c_full", "T_c_reduced"],
        ExperimentKind::VerifyBounds => &[],
    }
}

fn print_summary(out: &RunOutput) -> Result<(), HarnessError> {
    let spec = &out.meta.spec;
    println!("{} digest={} seed={} threads={}", spec.kind, &out.meta.spec_digest[..12], spec.seed, out.meta.threads);
    let table = &out.tables[0];
    let cols = key_columns(spec.kind);
    if !cols.is_empty() {
        for &n in &spec.n_grid {
            let sub = table.filter_eq("n", n as f64)?;
            if sub.rows.is_empty() {
                continue;
            }
            let stats = harness::summarize_table(&sub, cols)?;
            let parts: Vec<String> = stats.iter().map(|(c, s)| format!("{c}={:.6}±{:.2e}", s.mean, s.se)).collect();
            println!("  n={n:<8} reps={:<6} {}", sub.rows.len(), parts.join(" "));
        }
    }
    let time_col = match spec.kind {
        ExperimentKind::EarlyPhase => Some("T_o"),
        ExperimentKind::FinalPhase => Some("T_c"),
        _ => None,
    };
    if let (Some(y), true) = (time_col, spec.n_grid.len() >= 3) {
        let fit = harness::fit_table(table, "n", y)?;
        println!(
            "  fit {y} ~ ln n: slope={:.4} stderr={:.4} ci95=[{:.4}, {:.4}] r2={:.4}",
            fit.slope, fit.stderr, fit.ci95.0, fit.ci95.1, fit.r2
        );
    }
    for t in &out.meta.tests {
        let flag = if t.pass { "pass" } else { "FAIL" };
        println!("  {flag} {} n={} statistic={:.4} p={:.4}", t.name, t.n, t.statistic, t.p_value);
    }
    for (r, gating) in out.reports.iter().map(|r| (r, true)).chain(out.informational.iter().map(|r| (r, false))) {
        let flag = match (gating, r.all_pass()) {
            (true, true) => "pass",
            (true, false) => "FAIL",
            (false, _) => "info",
        };
        println!("  {flag} {} cells={} violations={}", r.check, r.cells.len(), r.violations());
    }
    for f in &out.meta.failures {
        println!("  replicate failed n={} rep={} seed={}: {}", f.n, f.replicate, f.seed, f.error);
    }
    if let Some(dir) = &spec.out {
        println!("  wrote {}", dir.display());
    }
    Ok(())
}

fn run_verb(kind: ExperimentKind, args: RunArgs) -> Result<bool, HarnessError> {
    let spec = args.into_spec(kind)?;
    let out = harness::run(&spec)?;
    print_summary(&out)?;
    Ok(out.passed())
}

fn fit(path: PathBuf, x: &str, y: &str) -> Result<bool, HarnessError> {
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let table = ResultTable::read_csv(name, std::fs::File::open(&path)?)?;
    let fit = harness::fit_table(&table, x, y)?;
    println!("{}", serde_json::to_string_pretty(&fit)?);
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SimFull { phase: Phase::Early, run } => run_verb(ExperimentKind::EarlyPhase, run),
        Command::SimFull { phase: Phase::Middle, run } => run_verb(ExperimentKind::MiddlePhase, run),
        Command::Final { run } => run_verb(ExperimentKind::FinalPhase, run),
        Command::Ode { run } => run_verb(ExperimentKind::OdeCompare, run),
        Command::Verify { run } => run_verb(ExperimentKind::VerifyBounds, run),
        Command::Equivalence { run } => run_verb(ExperimentKind::OracleEquivalence, run),
        Command::Fit { table, x, y } => fit(table, &x, &y),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("ng: {e}");
            ExitCode::from(2)
        }
    }
}
