//! `lab`: batch experiment CLI.
//!
//! Exit codes: 0 success, 1 usage error, 2 check failure, 3 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use lab::config::{default_out_root, ExperimentConfig};
use lab::{checks, emit, runner, sweep};

#[derive(Parser)]
#[command(name = "lab", about = "Linear TD laboratory: seeded runs, sweeps, oracles, checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmitFormat {
    Csv,
    Svg,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (sweep point x replication) of an experiment config.
    Run {
        config: PathBuf,
        /// Override the base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: $LAB_OUT or ./lab-out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Divergence cap on ||w||.
        #[arg(long)]
        cap: Option<f64>,
    },
    /// Alias of `run` for sweep-heavy configs.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        cap: Option<f64>,
    },
    /// Analytic fixed-point sweep (Kolter's example): no simulation.
    FixedPoint {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run invariant suites; exits 2 on any failure.
    Check {
        /// Suite name (drift | contraction | bounds | oracle); default all.
        suite: Option<String>,
    },
    /// Rebuild aggregated CSV/SVG from a results directory's raw series.
    Emit {
        results_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = EmitFormat::Csv)]
        format: EmitFormat,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap help/version requests are successful exits
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                lab::HarnessError::Config(_) => ExitCode::from(1),
                _ => ExitCode::from(3),
            }
        }
    }
}

fn load_config(
    path: &Path,
    seed: Option<u64>,
    cap: Option<f64>,
) -> lab::Result<ExperimentConfig> {
    let mut config = ExperimentConfig::from_path(path)?;
    if let Some(seed) = seed {
        config.experiment.seed = seed;
    }
    if let Some(cap) = cap {
        config.experiment.cap = cap;
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(config: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| {
        config
            .experiment
            .out
            .clone()
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(default_out_root()))
    })
}

fn dispatch(cli: Cli) -> lab::Result<ExitCode> {
    match cli.command {
        Command::Run { config, seed, out, jobs, cap }
        | Command::Sweep { config, seed, out, jobs, cap } => {
            let config = load_config(&config, seed, cap)?;
            let results = runner::run(&config, jobs.max(1))?;
            if let Some(note) = runner::feature_rank_note(&config)? {
                println!("note: {note}");
            }
            let dir = out_dir(&config, out);
            let csv_path = emit::write_artifacts(&results, &dir, &config.experiment.metrics)?;
            // persist the canonical config next to the artifacts so `emit`
            // can rebuild aggregates from raw series alone, plus the
            // instance container for archival
            let stem = emit::artifact_stem(&results);
            std::fs::write(
                dir.join(format!("{stem}.config.toml")),
                toml::to_string_pretty(&config)
                    .map_err(|e| lab::HarnessError::Runtime(e.to_string()))?,
            )?;
            std::fs::write(
                dir.join(format!("{stem}.instance.toml")),
                runner::instance_container(&config)?,
            )?;
            let capped = results
                .iter()
                .filter(|r| r.termination == runner::Termination::ValueExceededCap)
                .count();
            println!(
                "ran {} runs ({} hit the divergence cap); wrote {}",
                results.len(),
                capped,
                csv_path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::FixedPoint { config, out } => {
            let config = load_config(&config, None, None)?;
            let table = sweep::sweep_fixed_points(&config)?;
            let dir = out_dir(&config, out);
            std::fs::create_dir_all(&dir)?;
            let path = dir.join(format!(
                "{}_fixed_point_{}.csv",
                config.experiment.env.name(),
                config.fingerprint()
            ));
            std::fs::write(&path, sweep::sweep_to_csv(&table))?;
            let singular = table.rows.iter().filter(|r| r.singular).count();
            println!(
                "swept {} grid points ({} singular markers); wrote {}",
                table.rows.len() - singular,
                singular,
                path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { suite } => {
            let selector = suite.unwrap_or_default();
            let outcomes = checks::run_checks(&selector, false)?;
            let mut failures = 0;
            for o in &outcomes {
                println!(
                    "CHECK {} {} {}",
                    o.name,
                    if o.passed { "PASS" } else { "FAIL" },
                    o.detail
                );
                if !o.passed {
                    failures += 1;
                }
            }
            println!("checks: {} passed, {failures} failed", outcomes.len() - failures);
            Ok(if failures == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Emit { results_dir, format } => {
            let rebuilt = rebuild_from_dir(&results_dir, format)?;
            println!("rebuilt {rebuilt} artifact(s) in {}", results_dir.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Re-derive aggregated artifacts from persisted configs and raw series.
fn rebuild_from_dir(dir: &Path, format: EmitFormat) -> lab::Result<usize> {
    let mut rebuilt = 0;
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        let name = match path.file_name().and_then(|s| s.to_str()) {
            Some(n) => n,
            None => continue,
        };
        if !name.ends_with(".config.toml") {
            continue;
        }
        let config = ExperimentConfig::from_path(&path)?;
        let fingerprint = config.fingerprint();
        let raw_dir = dir.join("raw").join(&fingerprint);
        if !raw_dir.is_dir() {
            return Err(lab::HarnessError::Runtime(format!(
                "missing raw series directory {}",
                raw_dir.display()
            )));
        }
        let series = emit::reaggregate_raw_dir(&raw_dir)?;
        let etas = config.eta_values();
        let mut results = Vec::new();
        for (name, rows) in series {
            // file stem: run_<sweep>_<seed>
            let mut parts = name.split('_').skip(1);
            let sweep_index: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| lab::HarnessError::Runtime(format!("bad raw name {name}")))?;
            let seed_index: u64 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| lab::HarnessError::Runtime(format!("bad raw name {name}")))?;
            let eta = *etas.get(sweep_index).ok_or_else(|| {
                lab::HarnessError::Runtime(format!("sweep index {sweep_index} out of range"))
            })?;
            let termination_t = rows.last().map(|r| r.t).unwrap_or(0);
            results.push(runner::RunResult {
                env: config.experiment.env.name().to_string(),
                algorithm: config.algorithm.id.name().to_string(),
                fingerprint: fingerprint.clone(),
                sweep_index,
                sweep_key: "eta".into(),
                sweep_value: format!("{eta}"),
                eta,
                seed_index,
                rows,
                final_w: vec![],
                final_rbar: 0.0,
                termination: runner::Termination::Completed,
                termination_t,
                max_value_error: 0.0,
                max_drift_violation: f64::NEG_INFINITY,
                crossings: vec![],
            });
        }
        results.sort_by_key(|r| (r.sweep_index, r.seed_index));
        let stem = emit::artifact_stem(&results);
        let rows = emit::filter_metrics(emit::aggregate(&results), &config.experiment.metrics);
        match format {
            EmitFormat::Csv => {
                std::fs::write(dir.join(format!("{stem}.csv")), emit::to_csv(&rows))?
            }
            EmitFormat::Svg => std::fs::write(
                dir.join(format!("{stem}.svg")),
                emit::to_svg(&rows, "value_error"),
            )?,
        }
        rebuilt += 1;
    }
    if rebuilt == 0 {
        return Err(lab::HarnessError::Runtime(
            "no *.config.toml manifests found in the results directory".into(),
        ));
    }
    Ok(rebuilt)
}
