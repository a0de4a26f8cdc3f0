//! `cellwise` — battery SOC/SOH estimation from the command line.
//!
//! Subcommands:
//! - `validate` lints a config file.
//! - `simulate` materializes the synthetic profiles (measured CSV plus
//!   ground-truth CSV).
//! - `estimate` runs a single (profile, estimator) cell.
//! - `compare`  runs the full profile x estimator grid and emits the
//!   comparison tables.
//!
//! Exit codes: 0 on success, 1 on configuration errors, 2 when some grid
//! cells failed. `CELLWISE_LOG` controls log verbosity.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use cellwise::experiment::{
    emit_tables, emit_traces_and_reports, run_experiment, write_atomic, CellOutcome,
    ExperimentConfig, TableFormat, ValidatedExperiment,
};
use cellwise::joint::{run_estimator, EstimatorKind};

#[derive(Parser, Debug)]
#[command(
    name = "cellwise",
    version,
    about = "Battery SOC/SOH estimation toolkit",
    propagate_version = true
)]
struct Cli {
    /// Experiment configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the config's output directory.
    #[arg(long = "out", global = true)]
    out: Option<PathBuf>,

    /// Table formats to emit (repeatable). Defaults to all three.
    #[arg(long = "format", global = true, value_enum)]
    format: Vec<FormatArg>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
    Markdown,
}

impl From<FormatArg> for TableFormat {
    fn from(f: FormatArg) -> TableFormat {
        match f {
            FormatArg::Csv => TableFormat::Csv,
            FormatArg::Json => TableFormat::Json,
            FormatArg::Markdown => TableFormat::Markdown,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Check a configuration file and report problems.
    Validate,
    /// Generate the synthetic profiles: measured and ground-truth CSVs.
    Simulate {
        /// Only this profile (default: every synthetic profile).
        #[arg(long)]
        profile: Option<String>,
    },
    /// Run one estimator over one profile; write trace and report.
    Estimate {
        #[arg(long)]
        profile: String,
        #[arg(long)]
        estimator: String,
    },
    /// Run the whole profile x estimator grid and emit comparison tables.
    Compare,
}

fn load_config(cli: &Cli) -> Result<ValidatedExperiment> {
    let path = cli
        .config
        .as_ref()
        .context("--config <path> is required")?;
    let mut config = ExperimentConfig::from_path(path)
        .with_context(|| format!("failed to load {}", path.display()))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    Ok(config.validate()?)
}

fn formats(cli: &Cli) -> Vec<TableFormat> {
    if cli.format.is_empty() {
        TableFormat::ALL.to_vec()
    } else {
        cli.format.iter().map(|&f| f.into()).collect()
    }
}

fn cmd_simulate(exp: &ValidatedExperiment, only: Option<&str>) -> Result<()> {
    let mut wrote_any = false;
    for plan in &exp.profiles {
        if let Some(name) = only {
            if plan.name != name {
                continue;
            }
        }
        if matches!(plan.source, cellwise::experiment::ProfileSource::File(_)) {
            println!("skipping {} (file-backed, nothing to simulate)", plan.name);
            continue;
        }
        let prepared = exp.prepare_profile(plan)?;
        let dir = &exp.output_dir;
        let profile_path = dir.join(format!("{}.profile.csv", prepared.name));
        let mut buf = Vec::new();
        prepared.measured.to_csv(&mut buf)?;
        write_atomic(&profile_path, &buf)?;
        println!("wrote {}", profile_path.display());
        wrote_any = true;

        if let Some(truth) = &prepared.truth {
            let truth_path = dir.join(format!("{}.truth.csv", prepared.name));
            let mut csv = String::from("t,soc,v1,voltage,r0,r1,c1\n");
            for r in &truth.records {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.t, r.soc, r.v1, r.voltage, r.r0, r.r1, r.c1
                ));
            }
            write_atomic(&truth_path, csv.as_bytes())?;
            println!("wrote {}", truth_path.display());
        }
    }
    if !wrote_any {
        bail!("no matching profile to simulate");
    }
    Ok(())
}

fn cmd_estimate(exp: &ValidatedExperiment, profile: &str, estimator: &str) -> Result<()> {
    let kind = EstimatorKind::parse(estimator)
        .with_context(|| format!("unknown estimator `{estimator}`"))?;
    let plan = exp
        .profiles
        .iter()
        .find(|p| p.name == profile)
        .with_context(|| format!("profile `{profile}` not in config"))?;
    let prepared = exp.prepare_profile(plan)?;
    let run = run_estimator(
        &prepared.measured,
        prepared.truth.as_ref(),
        kind,
        &exp.joint,
        &prepared.name,
    )?;

    let dir = &exp.output_dir;
    let trace_path = dir.join(format!("{}__{}.trace.csv", profile, kind.name()));
    let mut buf = Vec::new();
    run.trace.to_csv(&mut buf)?;
    write_atomic(&trace_path, &buf)?;

    let report_json = dir.join(format!("{}__{}.report.json", profile, kind.name()));
    let mut body = serde_json_pretty(&run.report.to_json());
    body.push('\n');
    write_atomic(&report_json, body.as_bytes())?;

    let report_csv = dir.join(format!("{}__{}.report.csv", profile, kind.name()));
    let mut csv = Vec::new();
    run.report.write_csv(&mut csv)?;
    write_atomic(&report_csv, &csv)?;

    println!("wrote {}", trace_path.display());
    println!("wrote {}", report_json.display());
    println!("wrote {}", report_csv.display());
    if let (Some(max), Some(avg)) = (run.report.soc_max_pct, run.report.soc_avg_pct) {
        println!("soc error: max {max:.4}%, avg {avg:.4}%");
    }
    if let (Some(max), Some(avg)) = (run.report.v_max_mv, run.report.v_avg_mv) {
        println!("voltage error: max {max:.3} mV, avg {avg:.3} mV");
    }
    Ok(())
}

fn serde_json_pretty(value: &serde_json::Value) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

fn cmd_compare(exp: &ValidatedExperiment, formats: &[TableFormat]) -> Result<bool> {
    let output = run_experiment(exp)?;
    let mut written = emit_tables(&output, formats, &exp.output_dir)?;
    written.extend(emit_traces_and_reports(&output, &exp.output_dir)?);
    for path in &written {
        println!("wrote {}", path.display());
    }
    let failures = output.failures();
    for (profile, estimator, message) in &failures {
        eprintln!("cell failed: {profile} x {}: {message}", estimator.name());
    }
    let ok = output
        .cells
        .iter()
        .filter(|c| matches!(c.outcome, CellOutcome::Ok { .. }))
        .count();
    println!(
        "grid: {ok}/{} cells succeeded",
        output.cells.len()
    );
    Ok(failures.is_empty())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new()
            .filter_or("CELLWISE_LOG", "warn")
            .write_style("CELLWISE_LOG_STYLE"),
    )
    .init();

    let cli = Cli::parse();
    let exp = match load_config(&cli) {
        Ok(exp) => exp,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return ExitCode::from(1);
        }
    };

    let result = match &cli.cmd {
        Cmd::Validate => {
            println!(
                "config ok: {} profile(s), {} estimator(s), seed {}",
                exp.profiles.len(),
                exp.estimators.len(),
                exp.seed
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Simulate { profile } => {
            cmd_simulate(&exp, profile.as_deref()).map(|_| ExitCode::SUCCESS)
        }
        Cmd::Estimate { profile, estimator } => {
            cmd_estimate(&exp, profile, estimator).map(|_| ExitCode::SUCCESS)
        }
        Cmd::Compare => cmd_compare(&exp, &formats(&cli)).map(|all_ok| {
            if all_ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }),
    };

    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
