//! `rds`: scenario simulation, point estimation, exact oracles, and scenario
//! grids from the command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 invalid
//! input (configs, data files, constraint violations).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use rds_core::error::Error;
use rds_core::estimators::{
    generalized_estimate, identification_oracle, ignorability_audit, naive_estimate, plim_oracle,
    vh_estimate, AuditEntry,
};
use rds_core::experiments::{realize_population, run_study, scenario_grid, Scenario, StudyReport};
use rds_core::io::{
    ingest_rds_csv, parse_scenario, report_to_json, report_to_table, write_report_json,
    write_report_table,
};
use rds_core::types::{EstimateResult, FSpec};

#[derive(Parser)]
#[command(
    name = "rds",
    version,
    about = "Respondent-driven sampling: estimators and a simulation laboratory"
)]
struct Cli {
    /// Override the scenario's root RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for replicate parallelism (0 = automatic). Thread
    /// count never changes the results, only the wall clock.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario config and emit a study report.
    Simulate {
        /// Scenario config (TOML, schema rds-scenario/v1).
        #[arg(long)]
        config: PathBuf,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Structured)]
        format: Format,
    },
    /// Point estimates from an RDS recruitment CSV.
    Estimate {
        /// Data file with header `id,degree,outcome,recruiter_id,wave`.
        #[arg(long)]
        input: PathBuf,
        /// Extra f shapes to evaluate: power:ALPHA, constant, or
        /// table:K=V,K=V,... Repeatable. naive and vh are always printed.
        #[arg(long = "f")]
        f_specs: Vec<String>,
        /// Also write the estimates as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact oracles for a scenario's population/design pair:
    /// identification value, per-estimator probability limits, and the
    /// ignorability audit.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        /// Also write the oracle report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Expand a base scenario along axes and run every cell.
    Grid {
        #[arg(long)]
        config: PathBuf,
        /// Axis override `axis=value`, repeatable; repeating an axis
        /// appends to its value list (e.g. --set design.gamma=0
        /// --set design.gamma=1).
        #[arg(long = "set")]
        set: Vec<String>,
        /// Output directory for per-cell reports and index.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Structured)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    /// Full-fidelity JSON report (lossless round-trip).
    Structured,
    /// Flat CSV table, one row per (estimator, size).
    Tabular,
}

fn main() {
    // Die quietly when a pipe closes early (e.g. `rds simulate | head`)
    // instead of panicking on the failed write.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(if err.is_validation() { 3 } else { 1 });
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    if cli.threads > 0 {
        // Ignore "already initialized": only possible if set twice, and the
        // pool size never affects results.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match cli.command {
        Command::Simulate { config, out, format } => {
            let scenario = load_scenario(&config, cli.seed)?;
            let report = run_study(&scenario)?;
            emit_report(&report, format, out.as_deref())
        }
        Command::Estimate { input, f_specs, out } => estimate(&input, &f_specs, out.as_deref()),
        Command::Oracle { config, out } => {
            let scenario = load_scenario(&config, cli.seed)?;
            oracle(&scenario, out.as_deref())
        }
        Command::Grid {
            config,
            set,
            out,
            format,
        } => {
            let base = load_scenario(&config, cli.seed)?;
            grid(&base, &set, &out, format)
        }
    }
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<Scenario, Error> {
    let mut scenario = parse_scenario(path)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    Ok(scenario)
}

fn emit_report(report: &StudyReport, format: Format, out: Option<&Path>) -> Result<(), Error> {
    match (format, out) {
        (Format::Structured, Some(path)) => write_report_json(report, path)?,
        (Format::Tabular, Some(path)) => write_report_table(report, path)?,
        (Format::Structured, None) => print!("{}", report_to_json(report)),
        (Format::Tabular, None) => print!("{}", report_to_table(report)),
    }
    Ok(())
}

fn estimate(input: &Path, f_specs: &[String], out: Option<&Path>) -> Result<(), Error> {
    let ingested = ingest_rds_csv(input)?;
    for warning in &ingested.warnings {
        eprintln!("warning: {warning}");
    }
    let sample = &ingested.sample;
    let mut results: Vec<EstimateResult> =
        vec![naive_estimate(sample)?, vh_estimate(sample)?];
    for spec in f_specs {
        let f: FSpec = spec.parse()?;
        results.push(generalized_estimate(sample, &f)?);
    }
    for result in &results {
        println!("{}\t{}", result.estimator_name, result.value);
    }
    if let Some(path) = out {
        let mut json = serde_json::to_string_pretty(&results).expect("estimates serialize");
        json.push('\n');
        std::fs::write(path, json)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct OracleReport {
    schema: &'static str,
    scenario: String,
    design: String,
    nominal_n: usize,
    design_clamped: bool,
    truth_mean: f64,
    identification: Result<f64, String>,
    plims: BTreeMap<String, Result<f64, String>>,
    audit: Result<BTreeMap<u32, AuditEntry>, String>,
}

fn oracle(scenario: &Scenario, out: Option<&Path>) -> Result<(), Error> {
    let (pop, graph) = realize_population(scenario)?;
    let nominal_n = *scenario.sizes.last().expect("validated nonempty");
    let (design, clamped) = scenario.design.materialize(&pop, nominal_n)?;
    let truth = pop.true_mean();

    let identification =
        identification_oracle(&pop, &design, graph.as_ref()).map_err(|e| e.to_string());
    let mut plims = BTreeMap::new();
    for est in &scenario.estimators {
        plims.insert(
            est.name.clone(),
            plim_oracle(&pop, &design, &est.f, graph.as_ref()).map_err(|e| e.to_string()),
        );
    }
    let audit = ignorability_audit(&pop, &design, graph.as_ref()).map_err(|e| e.to_string());

    println!("scenario: {}", scenario.name);
    println!("design: {} (nominal n = {nominal_n}, calibration clamped: {clamped})", design.kind_name());
    if let Some(g) = &graph {
        println!(
            "graph: connected = {}, bipartite = {}, components = {}",
            g.is_connected(),
            g.is_bipartite(),
            g.component_count()
        );
    }
    println!("truth mean: {truth}");
    match &identification {
        Ok(v) => println!("identification: {v} (|gap to truth| = {:e})", (v - truth).abs()),
        Err(e) => println!("identification: unavailable ({e})"),
    }
    for (name, plim) in &plims {
        match plim {
            Ok(v) => println!("plim[{name}]: {v} (gap to truth = {})", v - truth),
            Err(e) => println!("plim[{name}]: unavailable ({e})"),
        }
    }
    match &audit {
        Ok(entries) => {
            println!("ignorability audit (degree: population mean, sampled mean, gap):");
            let mut max_gap = 0.0f64;
            for (k, entry) in entries {
                println!(
                    "  {k}: {} {} {}",
                    entry.population_mean, entry.sampled_mean, entry.gap
                );
                max_gap = max_gap.max(entry.gap.abs());
            }
            println!("max |gap|: {max_gap:e}");
        }
        Err(e) => println!("ignorability audit: unavailable ({e})"),
    }

    if let Some(path) = out {
        let report = OracleReport {
            schema: "rds-oracle/v1",
            scenario: scenario.name.clone(),
            design: design.kind_name().to_string(),
            nominal_n,
            design_clamped: clamped,
            truth_mean: truth,
            identification,
            plims,
            audit,
        };
        let mut json = serde_json::to_string_pretty(&report).expect("oracle report serializes");
        json.push('\n');
        std::fs::write(path, json)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct GridIndexEntry {
    index: usize,
    name: String,
    seed: u64,
    file: String,
}

fn grid(base: &Scenario, set: &[String], out_dir: &Path, format: Format) -> Result<(), Error> {
    let overrides = parse_overrides(set)?;
    let cells = scenario_grid(base, &overrides)?;
    std::fs::create_dir_all(out_dir)?;

    let mut index = Vec::with_capacity(cells.len());
    for (i, cell) in cells.iter().enumerate() {
        let report = run_study(cell)?;
        let file = match format {
            Format::Structured => format!("cell_{i:03}.json"),
            Format::Tabular => format!("cell_{i:03}.csv"),
        };
        let path = out_dir.join(&file);
        match format {
            Format::Structured => write_report_json(&report, &path)?,
            Format::Tabular => write_report_table(&report, &path)?,
        }
        println!("cell {}/{}: {} -> {}", i + 1, cells.len(), cell.name, path.display());
        index.push(GridIndexEntry {
            index: i,
            name: cell.name.clone(),
            seed: cell.seed,
            file,
        });
    }
    let mut json = serde_json::to_string_pretty(&index).expect("index serializes");
    json.push('\n');
    std::fs::write(out_dir.join("index.json"), json)?;
    Ok(())
}

/// Parses repeated `axis=value` pairs; repeated axes append values in order.
/// Values are read as TOML (so arrays and numbers work) with a bare-string
/// fallback.
fn parse_overrides(set: &[String]) -> Result<Vec<(String, Vec<toml::Value>)>, Error> {
    let mut overrides: Vec<(String, Vec<toml::Value>)> = Vec::new();
    for entry in set {
        let (axis, raw) = entry.split_once('=').ok_or_else(|| {
            Error::InvalidArgument(format!("--set `{entry}` is not axis=value"))
        })?;
        let value = parse_toml_value(raw.trim());
        match overrides.iter_mut().find(|(a, _)| a == axis) {
            Some((_, values)) => values.push(value),
            None => overrides.push((axis.to_string(), vec![value])),
        }
    }
    Ok(overrides)
}

fn parse_toml_value(raw: &str) -> toml::Value {
    #[derive(serde::Deserialize)]
    struct Wrapper {
        v: toml::Value,
    }
    match toml::from_str::<Wrapper>(&format!("v = {raw}")) {
        Ok(w) => w.v,
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
