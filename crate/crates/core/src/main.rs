use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tv_euler::experiment::{
    emit_outputs, mild_oracle, run_experiment_with_progress, verify_lemmas, ExperimentConfig, ReportRow,
};

#[derive(Parser)]
#[command(
    name = "tv-euler",
    version,
    about = "Total-variation error experiments for the Euler scheme with discontinuous drift"
)]
struct Cli {
    /// Worker threads; all available cores if absent.
    #[arg(long, short = 'j', env = "TV_EULER_JOBS", global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its result files.
    Run {
        config: PathBuf,
        /// Overrides `master_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the heat-kernel, sum and Gronwall inequalities numerically.
    VerifyLemmas {
        #[arg(long, default_value_t = 10_000)]
        nmax: u64,
        #[arg(long, default_value_t = 1000)]
        instances: usize,
    },
    /// Solve the mild equation for a config's problem and write the density.
    MildOracle {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

fn print_row(row: &ReportRow) {
    match &row.estimate {
        Some(e) => println!(
            "T/{:<6} {:.4}  +-{:.2e}  ratio {}  theory {}",
            row.denominator,
            e.estimate,
            e.precision,
            fmt_opt(row.empirical_ratio, 2),
            fmt_opt(row.theoretical_ratio, 2),
        ),
        None => println!(
            "T/{:<6} invalid: {}",
            row.denominator,
            row.error.as_deref().unwrap_or("unknown error")
        ),
    }
}

fn run(config: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExitCode, tv_euler::Error> {
    let mut cfg = ExperimentConfig::load(&config)?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(dir) = out {
        cfg.output.dir = Some(dir);
    }
    println!("{}: N={} R={} T={}", cfg.name, cfg.n_samples, cfg.runs, cfg.horizon);
    let report = run_experiment_with_progress(&cfg, print_row)?;
    if let Some(fit) = &report.fit {
        println!(
            "order {:.3} (r^2 {:.4}, {} points)",
            fit.slope,
            fit.r_squared,
            fit.points()
        );
    }
    let dir = cfg.output.dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let files = emit_outputs(&report, &dir, cfg.output_stem())?;
    println!("wrote {}", files.results_csv.display());
    Ok(if report.all_rows_valid() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn lemmas(nmax: u64, instances: usize) -> ExitCode {
    let checks = verify_lemmas(nmax, instances, 0x5EED);
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if checks.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn mild(config: PathBuf, out: Option<PathBuf>) -> Result<ExitCode, tv_euler::Error> {
    let cfg = ExperimentConfig::load(&config)?;
    let oracle = mild_oracle(&cfg)?;
    println!(
        "{} iterations, last residual {:.3e}, converged {}",
        oracle.residuals.len(),
        oracle.residuals.last().copied().unwrap_or(0.0),
        oracle.converged
    );
    if let Some(l1) = oracle.l1_vs_exact {
        println!("L1 vs exact {l1:.4e}");
    }
    let dir = out.or(cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| tv_euler::Error::io(&dir, e))?;
    let path = dir.join(format!("{}.mild.csv", cfg.output_stem()));
    oracle.density.write_csv(&path)?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Run { config, seed, out } => run(config, seed, out),
        Command::VerifyLemmas { nmax, instances } => Ok(lemmas(nmax, instances)),
        Command::MildOracle { config, out } => mild(config, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
