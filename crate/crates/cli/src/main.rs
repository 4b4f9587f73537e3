use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use wassmob_cli::{emit_results, run_experiment, Artifacts, ExperimentConfig, ExperimentKind};

/// Exit codes: 0 all checks passed, 1 a check failed, 2 bad input or a
/// failed experiment, 3 output could not be written.
#[derive(Parser)]
#[command(name = "wassmob", version, about = "Weighted Wasserstein experiments")]
struct Cli {
    /// distance, geodesic, jko, fv_reference, jko_vs_fv, relaxation or metric_axioms
    kind: ExperimentKind,
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out` in the config; default `wassmob-out`)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for sampled checks (overrides `seed` in the config)
    #[arg(long)]
    seed: Option<u64>,
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("WASSMOB_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("WASSMOB_THREADS must be a positive integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let mut cfg = match ExperimentConfig::parse_file(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(2);
        }
    };
    if let Some(k) = cfg.kind {
        if k != cli.kind {
            eprintln!("error: config declares kind `{k}` but `{}` was requested", cli.kind);
            return ExitCode::from(2);
        }
    }
    cfg.kind = Some(cli.kind);
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let outdir = cli.out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("wassmob-out"));
    cfg.out = None;
    let echo = cfg.emit();

    let (artifacts, error) = match run_experiment(cli.kind, &cfg) {
        Ok(a) => (a, None),
        Err(e) => (Artifacts::default(), Some(e.to_string())),
    };
    let manifest = match emit_results(cli.kind.name(), cfg.seed, &echo, &artifacts, error.as_deref(), &outdir) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    for c in &manifest.checks {
        println!("{} {} (value {:e}, bound {:e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.bound);
    }
    if let Some(e) = &manifest.error {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    println!("wrote {} files to {}", manifest.entries.len() + 2, outdir.display());
    if manifest.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
