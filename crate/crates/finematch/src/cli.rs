//! Batch command-line driver: eight file-composable subcommands covering
//! synthetic data generation, template selection, fine-balance matching,
//! balance diagnostics, rank-based estimation, sensitivity analysis, the
//! scaling benchmark grid, and the vertex census of the built-in small
//! instance.
//!
//! Every subcommand writes its artifacts into `--out` together with a
//! `manifest.json` recording the command, resolved configuration digest,
//! seed, and a SHA-256 per input file. Manifests carry no timestamps, so a
//! rerun with the same seeds and inputs reproduces every artifact byte for
//! byte.
//!
//! Exit codes: 0 on success, 2 for configuration problems (bad flags,
//! unreadable or malformed inputs), 3 for failures while solving or writing
//! results.

use std::fs::{self, File};
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bench::{generate_study, run_scaling, write_scaling_csv, RunManifest, ScalingConfig, StudyConfig};
use crate::data::{load_csv, round_trip_config, save_csv, Dataset, SchemaConfig};
use crate::design::{
    load_design_file, match_level, save_design_file, select_template, write_design_csv,
    MatchConfig, MatchedDesign, RankMetric, TemplateConfig, TemplateSelection,
};
use crate::diagnostics::{balance_report, write_balance_csv};
use crate::inference::{
    extract_groups, rosenbaum_bounds, simultaneous_contrasts, ContrastConfig, ContrastReport,
    SensitivityConfig, SensitivityReport,
};
use crate::lp::{enumerate_vertices, solve_lp, SimplexConfig, VertexConfig};
use crate::mip::{BnbConfig, MipStatus};
use crate::model::{counterexample, Formulation, ModelConfig};

#[derive(Debug, Parser)]
#[command(
    name = "finematch",
    version,
    about = "Representative matched samples for multi-valued exposures via fine balance"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic multi-level study (CSV dataset plus schema).
    Gen(GenArgs),
    /// Pick the most population-representative template subset.
    Template(TemplateArgs),
    /// Solve one fine-balance selection per exposure level.
    Match(MatchArgs),
    /// Tabulate category balance of a matched design.
    Balance(BalanceArgs),
    /// Estimate simultaneous level contrasts with familywise control.
    Estimate(EstimateArgs),
    /// Bound each contrast's sensitivity to unobserved confounding.
    Sensitivity(SensitivityArgs),
    /// Run the scaling grid over template and level sizes.
    Bench(BenchArgs),
    /// Enumerate relaxation vertices of the built-in three-covariate instance.
    Polytope(PolytopeArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Dataset CSV path.
    #[arg(long, value_name = "CSV")]
    input: PathBuf,
    /// Schema configuration JSON path.
    #[arg(long, value_name = "JSON")]
    schema: PathBuf,
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Comma-separated exposure level sizes, e.g. 2000,1500,1500.
    #[arg(long, value_delimiter = ',', value_name = "N,N,...", required = true)]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of shared archetype profiles; 0 keeps the size-based default.
    #[arg(long, default_value_t = 0)]
    archetypes: usize,
    /// Per-covariate probability of deviating from the archetype.
    #[arg(long, value_name = "PROB")]
    mutation: Option<f64>,
    /// Outcome noise standard deviation.
    #[arg(long, value_name = "SD")]
    noise: Option<f64>,
    /// Probability that a unit's outcome is missing.
    #[arg(long, value_name = "PROB")]
    missing: Option<f64>,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TemplateArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Template size T.
    #[arg(long, value_name = "T")]
    template_size: usize,
    /// Number of random candidate subsets to score.
    #[arg(long, default_value_t = 500)]
    candidates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Threads used to score candidates (the result is worker-independent).
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MatchArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Template artifact written by the `template` subcommand.
    #[arg(long, value_name = "JSON")]
    template: PathBuf,
    /// Integer-program formulation for each per-level solve.
    #[arg(long, value_enum, default_value_t = FormulationArg::Selection)]
    formulation: FormulationArg,
    /// Wall-clock budget per level solve, in seconds. Leaving it unset keeps
    /// the solve deterministic; with a limit the incumbent at the cutoff is
    /// returned and marked unproven.
    #[arg(long, value_name = "SECONDS")]
    time_limit: Option<f64>,
    /// Search-node budget per level solve. Unlike a time limit this keeps the
    /// result machine-independent; at the budget the best selection found is
    /// returned and marked unproven.
    #[arg(long, value_name = "COUNT", default_value_t = 500)]
    max_nodes: u64,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BalanceArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Design artifact written by the `match` subcommand.
    #[arg(long, value_name = "JSON")]
    design: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Design artifact written by the `match` subcommand.
    #[arg(long, value_name = "JSON")]
    design: PathBuf,
    /// Familywise significance level.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Monte Carlo draws for the max-statistic null distribution.
    #[arg(long, default_value_t = 20_000)]
    mc_draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Threads for the Monte Carlo draws (the result is worker-independent).
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Outcome to analyze; repeatable. Default: every outcome in the schema.
    #[arg(long = "outcome", value_name = "NAME")]
    outcomes: Vec<String>,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SensitivityArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Design artifact written by the `match` subcommand.
    #[arg(long, value_name = "JSON")]
    design: PathBuf,
    /// Significance level the critical multiplier is measured against.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Spacing of the reported multiplier curve.
    #[arg(long, default_value_t = 0.25)]
    grid_step: f64,
    /// Outcome to analyze; repeatable. Default: every outcome in the schema.
    #[arg(long = "outcome", value_name = "NAME")]
    outcomes: Vec<String>,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated template sizes.
    #[arg(long, value_delimiter = ',', default_values_t = vec![10usize, 100])]
    template_sizes: Vec<usize>,
    /// Comma-separated level (pool) sizes.
    #[arg(long, value_delimiter = ',', default_values_t = vec![100usize, 1000, 10_000])]
    level_sizes: Vec<usize>,
    /// Formulations to time at each grid point.
    #[arg(long, value_enum, value_delimiter = ',',
          default_values_t = vec![FormulationArg::Selection, FormulationArg::Assignment])]
    formulations: Vec<FormulationArg>,
    /// Covariate tilt between pool and template source.
    #[arg(long, default_value_t = 0.3)]
    tilt: f64,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PolytopeArgs {
    /// Census the built-in three-covariate instance under both total-count
    /// conventions. This is the only instance the subcommand ships.
    #[arg(long)]
    counterexample: bool,
    /// Output directory (created if missing).
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormulationArg {
    Selection,
    Assignment,
    Pooled,
}

impl From<FormulationArg> for Formulation {
    fn from(arg: FormulationArg) -> Formulation {
        match arg {
            FormulationArg::Selection => Formulation::Selection,
            FormulationArg::Assignment => Formulation::Assignment,
            FormulationArg::Pooled => Formulation::PooledAssignment,
        }
    }
}

/// The `template` subcommand's output: everything `match` needs to balance
/// levels against the chosen subset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateArtifact {
    pub template_size: usize,
    pub candidates: usize,
    pub seed: u64,
    pub selection: TemplateSelection,
    /// Covariate profiles of the template units, in slot order.
    pub profiles: Vec<Vec<u16>>,
}

enum CliError {
    /// Bad flags or unreadable/malformed inputs; exit code 2.
    Config(String),
    /// Failure while solving or writing results; exit code 3.
    Run(String),
}

fn config(err: impl std::fmt::Display) -> CliError {
    CliError::Config(err.to_string())
}

fn run_err(err: impl std::fmt::Display) -> CliError {
    CliError::Run(err.to_string())
}

/// Parses arguments and runs one subcommand, translating errors to the
/// documented exit codes. Argument errors are handled by the parser itself
/// (usage text, exit 2).
pub fn run() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Template(args) => cmd_template(args),
        Command::Match(args) => cmd_match(args),
        Command::Balance(args) => cmd_balance(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Sensitivity(args) => cmd_sensitivity(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Polytope(args) => cmd_polytope(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn ensure_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", dir.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Run(format!("cannot create {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| CliError::Run(format!("cannot write {}: {e}", path.display())))?;
    w.flush().map_err(|e| CliError::Run(format!("cannot write {}: {e}", path.display())))
}

fn write_manifest(
    out: &Path,
    command: &str,
    seed: u64,
    config_echo: &impl Serialize,
    inputs: &[&Path],
) -> Result<(), CliError> {
    let mut manifest = RunManifest::new(command, seed, config_echo);
    for path in inputs {
        manifest
            .add_input(&path.to_string_lossy())
            .map_err(|e| CliError::Run(format!("cannot hash input {}: {e}", path.display())))?;
    }
    let path = out.join("manifest.json");
    let mut w = create(&path)?;
    manifest.write(&mut w).map_err(|e| CliError::Run(format!("cannot write {}: {e}", path.display())))?;
    w.flush().map_err(|e| CliError::Run(format!("cannot write {}: {e}", path.display())))
}

fn load_inputs(args: &InputArgs) -> Result<Dataset, CliError> {
    let schema_file = File::open(&args.schema)
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", args.schema.display())))?;
    let schema_cfg = SchemaConfig::from_json(schema_file).map_err(config)?;
    load_csv(&args.input, &schema_cfg)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.input.display())))
}

fn load_design_artifact(path: &Path) -> Result<MatchedDesign, CliError> {
    load_design_file(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn probability(name: &str, value: f64) -> Result<f64, CliError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(CliError::Config(format!("--{name} must lie in [0, 1], got {value}")))
    }
}

fn cmd_gen(args: GenArgs) -> Result<(), CliError> {
    if args.sizes.is_empty() || args.sizes.contains(&0) {
        return Err(CliError::Config("--sizes needs at least one nonzero level size".into()));
    }
    let mut cfg = StudyConfig::balanced(args.seed, &args.sizes);
    if args.archetypes > 0 {
        cfg.archetypes = args.archetypes;
    }
    if let Some(m) = args.mutation {
        cfg.mutation = probability("mutation", m)?;
    }
    if let Some(r) = args.missing {
        cfg.missing_rate = probability("missing", r)?;
    }
    if let Some(sd) = args.noise {
        if !(sd >= 0.0) {
            return Err(CliError::Config(format!("--noise must be nonnegative, got {sd}")));
        }
        cfg.outcome_noise = sd;
    }

    let dataset = generate_study(&cfg);
    ensure_out(&args.out)?;
    save_csv(&dataset, create(&args.out.join("dataset.csv"))?).map_err(run_err)?;
    write_json(&args.out.join("schema.json"), &round_trip_config(&dataset))?;
    write_manifest(&args.out, "gen", args.seed, &cfg, &[])
}

fn cmd_template(args: TemplateArgs) -> Result<(), CliError> {
    if args.template_size == 0 {
        return Err(CliError::Config("--template-size must be positive".into()));
    }
    let dataset = load_inputs(&args.input)?;
    let metric = RankMetric::fit(&dataset).map_err(run_err)?;
    let cfg = TemplateConfig {
        size: args.template_size,
        candidates: args.candidates,
        seed: args.seed,
        workers: args.workers.max(1),
    };
    let selection = select_template(&dataset, &metric, &cfg).map_err(run_err)?;
    let profiles = dataset.profiles(&selection.indices);
    let artifact = TemplateArtifact {
        template_size: args.template_size,
        candidates: args.candidates,
        seed: args.seed,
        selection,
        profiles,
    };

    ensure_out(&args.out)?;
    write_json(&args.out.join("template.json"), &artifact)?;
    let echo = serde_json::json!({
        "template_size": args.template_size,
        "candidates": args.candidates,
        "workers": args.workers,
    });
    write_manifest(&args.out, "template", args.seed, &echo, &[&args.input.input, &args.input.schema])
}

fn cmd_match(args: MatchArgs) -> Result<(), CliError> {
    let dataset = load_inputs(&args.input)?;
    let template_file = File::open(&args.template)
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", args.template.display())))?;
    let artifact: TemplateArtifact =
        serde_json::from_reader(std::io::BufReader::new(template_file))
            .map_err(|e| CliError::Config(format!("{}: {e}", args.template.display())))?;
    if artifact.profiles.len() != artifact.template_size {
        return Err(CliError::Config(format!(
            "{}: {} profiles for declared template size {}",
            args.template.display(),
            artifact.profiles.len(),
            artifact.template_size
        )));
    }

    let mut bnb = BnbConfig::default();
    if let Some(secs) = args.time_limit {
        if !(secs > 0.0) {
            return Err(CliError::Config(format!("--time-limit must be positive, got {secs}")));
        }
        bnb.time_limit = Some(Duration::from_secs_f64(secs));
    }
    if args.max_nodes == 0 {
        return Err(CliError::Config("--max-nodes must be positive".into()));
    }
    bnb.max_nodes = args.max_nodes;
    let formulation: Formulation = args.formulation.into();
    let match_cfg = MatchConfig { formulation, model: ModelConfig::default(), bnb };

    let mut levels = Vec::new();
    for (name, indices) in dataset.levels() {
        if indices.len() < artifact.template_size {
            return Err(CliError::Run(format!(
                "level {name} has {} units; the template needs {}",
                indices.len(),
                artifact.template_size
            )));
        }
        let level = match_level(&dataset, &artifact.profiles, &name, &indices, &match_cfg)
            .map_err(|e| CliError::Run(format!("level {name}: {e}")))?;
        if level.status != MipStatus::Optimal {
            eprintln!(
                "warning: level {name} stopped at the search budget with objective {} (bound {:.3}); raise --max-nodes or --time-limit to keep searching",
                level.objective, level.bound
            );
        }
        levels.push(level);
    }

    let design = MatchedDesign {
        schema: dataset.schema.clone(),
        outcome_names: dataset.outcome_names.clone(),
        exposure_levels: dataset.exposure_levels.clone(),
        template_size: artifact.template_size,
        formulation,
        seed: artifact.seed,
        candidates: artifact.candidates,
        template: artifact.selection.clone(),
        template_profiles: artifact.profiles.clone(),
        levels,
    };

    ensure_out(&args.out)?;
    save_design_file(&design, args.out.join("design.json")).map_err(run_err)?;
    write_design_csv(&design, &dataset, create(&args.out.join("design.csv"))?).map_err(run_err)?;
    let echo = serde_json::json!({
        "formulation": formulation,
        "time_limit_seconds": args.time_limit,
        "max_nodes": args.max_nodes,
        "template_size": artifact.template_size,
    });
    write_manifest(
        &args.out,
        "match",
        artifact.seed,
        &echo,
        &[&args.input.input, &args.input.schema, &args.template],
    )
}

fn cmd_balance(args: BalanceArgs) -> Result<(), CliError> {
    let dataset = load_inputs(&args.input)?;
    let design = load_design_artifact(&args.design)?;
    let report = balance_report(&design, &dataset).map_err(run_err)?;
    ensure_out(&args.out)?;
    write_balance_csv(&report, create(&args.out.join("balance.csv"))?).map_err(run_err)?;
    let echo = serde_json::json!({ "template_size": design.template_size });
    write_manifest(
        &args.out,
        "balance",
        design.seed,
        &echo,
        &[&args.input.input, &args.input.schema, &args.design],
    )
}

fn resolve_outcomes(requested: &[String], dataset: &Dataset) -> Result<Vec<String>, CliError> {
    if requested.is_empty() {
        if dataset.outcome_names.is_empty() {
            return Err(CliError::Config("the schema declares no outcomes".into()));
        }
        return Ok(dataset.outcome_names.clone());
    }
    for name in requested {
        if !dataset.outcome_names.iter().any(|o| o == name) {
            return Err(CliError::Config(format!("unknown outcome {name:?}")));
        }
    }
    Ok(requested.to_vec())
}

fn cmd_estimate(args: EstimateArgs) -> Result<(), CliError> {
    let dataset = load_inputs(&args.input)?;
    let design = load_design_artifact(&args.design)?;
    let outcomes = resolve_outcomes(&args.outcomes, &dataset)?;
    let cfg = ContrastConfig {
        alpha: args.alpha,
        mc_draws: args.mc_draws,
        seed: args.seed,
        workers: args.workers.max(1),
    };

    let mut reports: Vec<ContrastReport> = Vec::new();
    for outcome in &outcomes {
        let groups = extract_groups(&design, &dataset, outcome).map_err(run_err)?;
        reports.push(simultaneous_contrasts(&groups, outcome, &cfg).map_err(run_err)?);
    }

    ensure_out(&args.out)?;
    let mut csv = csv::Writer::from_writer(create(&args.out.join("estimates.csv"))?);
    csv.write_record([
        "outcome",
        "reference",
        "level",
        "n_sets",
        "dropped_sets",
        "threshold",
        "alpha_adjusted",
        "rank_sum_delta",
        "estimate",
        "ci_lower",
        "ci_upper",
        "significant",
    ])
    .map_err(run_err)?;
    for report in &reports {
        for contrast in &report.contrasts {
            csv.write_record([
                report.outcome.clone(),
                report.reference.clone(),
                contrast.level.clone(),
                report.n_sets.to_string(),
                report.dropped_sets.to_string(),
                format!("{}", report.threshold),
                format!("{}", report.alpha_adjusted),
                format!("{}", contrast.rank_sum_delta),
                format!("{}", contrast.estimate),
                format!("{}", contrast.ci_lower),
                format!("{}", contrast.ci_upper),
                contrast.significant.to_string(),
            ])
            .map_err(run_err)?;
        }
    }
    csv.flush().map_err(run_err)?;
    write_json(&args.out.join("contrasts.json"), &reports)?;

    let echo = serde_json::json!({
        "alpha": args.alpha,
        "mc_draws": args.mc_draws,
        "workers": args.workers,
        "outcomes": outcomes,
    });
    write_manifest(
        &args.out,
        "estimate",
        args.seed,
        &echo,
        &[&args.input.input, &args.input.schema, &args.design],
    )
}

fn cmd_sensitivity(args: SensitivityArgs) -> Result<(), CliError> {
    let dataset = load_inputs(&args.input)?;
    let design = load_design_artifact(&args.design)?;
    let outcomes = resolve_outcomes(&args.outcomes, &dataset)?;
    let cfg = SensitivityConfig {
        alpha: args.alpha,
        grid_step: args.grid_step,
        ..SensitivityConfig::default()
    };

    let mut reports: Vec<SensitivityReport> = Vec::new();
    for outcome in &outcomes {
        let groups = extract_groups(&design, &dataset, outcome).map_err(run_err)?;
        for u in 1..groups.levels.len() {
            let diffs = groups.pair_differences(u, 0);
            let report =
                rosenbaum_bounds(outcome, &groups.levels[u], &groups.levels[0], &diffs, &cfg)
                    .map_err(run_err)?;
            reports.push(report);
        }
    }

    ensure_out(&args.out)?;
    let mut csv = csv::Writer::from_writer(create(&args.out.join("sensitivity.csv"))?);
    csv.write_record([
        "outcome",
        "level",
        "reference",
        "direction",
        "n_pairs",
        "dropped_zero_pairs",
        "gamma_critical",
        "capped",
    ])
    .map_err(run_err)?;
    for report in &reports {
        csv.write_record([
            report.outcome.clone(),
            report.level.clone(),
            report.reference.clone(),
            format!("{}", report.direction),
            report.n_pairs.to_string(),
            report.dropped_zero_pairs.to_string(),
            format!("{}", report.gamma_critical),
            report.capped.to_string(),
        ])
        .map_err(run_err)?;
    }
    csv.flush().map_err(run_err)?;

    let mut curve = csv::Writer::from_writer(create(&args.out.join("sensitivity_curve.csv"))?);
    curve.write_record(["outcome", "level", "gamma", "upper_p"]).map_err(run_err)?;
    for report in &reports {
        for point in &report.curve {
            curve
                .write_record([
                    report.outcome.clone(),
                    report.level.clone(),
                    format!("{}", point.gamma),
                    format!("{}", point.upper_p),
                ])
                .map_err(run_err)?;
        }
    }
    curve.flush().map_err(run_err)?;
    write_json(&args.out.join("sensitivity.json"), &reports)?;

    let echo = serde_json::json!({
        "alpha": args.alpha,
        "grid_step": args.grid_step,
        "outcomes": outcomes,
    });
    write_manifest(
        &args.out,
        "sensitivity",
        design.seed,
        &echo,
        &[&args.input.input, &args.input.schema, &args.design],
    )
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    if args.template_sizes.is_empty() || args.level_sizes.is_empty() || args.formulations.is_empty()
    {
        return Err(CliError::Config(
            "--template-sizes, --level-sizes and --formulations must be nonempty".into(),
        ));
    }
    let cfg = ScalingConfig {
        seed: args.seed,
        template_sizes: args.template_sizes.clone(),
        level_sizes: args.level_sizes.clone(),
        formulations: args.formulations.iter().map(|&f| f.into()).collect(),
        tilt: args.tilt,
    };
    let report = run_scaling(&cfg).map_err(run_err)?;
    ensure_out(&args.out)?;
    write_scaling_csv(&report, create(&args.out.join("scaling.csv"))?).map_err(run_err)?;
    write_json(&args.out.join("scaling.json"), &report)?;
    write_manifest(&args.out, "bench", args.seed, &cfg, &[])
}

/// One convention's census in the `polytope` report.
#[derive(Debug, Serialize)]
struct ConventionCensus {
    convention: String,
    n_vars: usize,
    n_rows: usize,
    vertices: usize,
    integral: usize,
    fractional: usize,
    root_objective: f64,
    /// Minimum objective over the integral vertices: the integer optimum.
    integer_objective: f64,
    /// Whether the all-halves selection with zero deviation is a vertex.
    has_all_halves_vertex: bool,
    fractional_vertices: Vec<Vec<f64>>,
}

fn objective_dot(c: &[f64], x: &[f64]) -> f64 {
    c.iter().zip(x).map(|(a, b)| a * b).sum()
}

fn cmd_polytope(args: PolytopeArgs) -> Result<(), CliError> {
    if !args.counterexample {
        return Err(CliError::Config(
            "pass --counterexample; the subcommand ships only the built-in instance".into(),
        ));
    }
    let mut conventions = Vec::new();
    for (convention, name) in [
        (counterexample::TotalConvention::TemplateSize, "template-size-total"),
        (counterexample::TotalConvention::One, "single-unit-total"),
    ] {
        let model = counterexample::model(convention);
        let set = enumerate_vertices(&model.lp, &VertexConfig::default()).map_err(run_err)?;
        let lp = solve_lp(&model.lp, &SimplexConfig::default()).map_err(run_err)?;
        // Integral points of the scaled convention are not unit selections,
        // so the integer optimum comes from the census rather than a search.
        let integer_objective = set
            .vertices
            .iter()
            .filter(|v| v.integral)
            .map(|v| objective_dot(&model.lp.objective, &v.x))
            .fold(f64::INFINITY, f64::min);
        let has_all_halves = set.fractional().any(|v| {
            (0..model.l).all(|j| (v.x[j] - 0.5).abs() < 1e-7)
                && (model.l..model.lp.n).all(|j| v.x[j].abs() < 1e-7)
        });
        conventions.push(ConventionCensus {
            convention: name.to_string(),
            n_vars: model.lp.n,
            n_rows: model.lp.constraints.len(),
            vertices: set.len(),
            integral: set.integral_count,
            fractional: set.fractional_count,
            root_objective: lp.objective_value,
            integer_objective,
            has_all_halves_vertex: has_all_halves,
            fractional_vertices: set.fractional().map(|v| v.x.clone()).collect(),
        });
    }
    ensure_out(&args.out)?;
    let report = serde_json::json!({ "conventions": conventions });
    write_json(&args.out.join("polytope.json"), &report)?;
    write_manifest(&args.out, "polytope", 0, &serde_json::json!({ "counterexample": true }), &[])
}
