//! Command-line front end: `probe` builds a calibration artifact from null
//! probes, `calibrate` applies an artifact to a record log, `evaluate`
//! computes the metric report, and `simulate` runs the synthetic end-to-end
//! comparison.
//!
//! Exit codes: 0 success, 1 validation failure, 2 environment/backend
//! failure, 3 a requested metric is undefined under `--strict`.

pub mod config;
pub mod io;
pub mod render;

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::backend::mock::MockBackend;
use crate::backend::{
    build_artifact, few_shot_hash, http::HttpBackend, run_probes_with, Backend, ProbeRun,
    ProbeSet,
};
use crate::domain::{
    validate_record, CalibrationArtifact, CalibrationMode, ClassLabelSet, FewShotSet,
    Provenance,
};
use crate::engine;
use crate::metrics::BinningConfig;
use crate::simulator::{self, ExperimentMode, SyntheticTaskSpec};

use config::{BackendSelector, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Environment(String),
    #[error("{0}")]
    MetricUndefined(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Environment(_) => 2,
            CliError::MetricUndefined(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "calin", version, about = "Bi-level confidence calibration and fairness evaluation")]
struct Cli {
    /// Run configuration TOML.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override for synthetic runs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Fail instead of warning on undefined metrics or bad records.
    #[arg(long, global = true)]
    strict: bool,
    /// Display metric values x100 with 2 decimals.
    #[arg(long = "scale-x100", global = true)]
    scale_x100: bool,
    /// Calibration mode: bilevel, l1, l2 or vanilla.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Output path (a file for probe/calibrate/evaluate, a directory for
    /// simulate).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the null-probe sweep and write the calibration artifact.
    Probe,
    /// Apply a calibration artifact to a record log.
    Calibrate {
        /// Calibration artifact JSON produced by `probe`.
        #[arg(long)]
        artifact: PathBuf,
        /// Input record log (JSON lines).
        #[arg(long)]
        records: PathBuf,
    },
    /// Compute the metric report over a record log.
    Evaluate {
        /// Input record log (JSON lines).
        #[arg(long)]
        records: PathBuf,
    },
    /// Generate a synthetic biased task and compare calibration modes.
    Simulate {
        /// Synthetic task spec TOML; omitted = the built-in biased default.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Number of queries to generate.
        #[arg(long, default_value_t = 2000)]
        n: usize,
        /// Comma-separated mode list; vanilla is always included.
        #[arg(long, default_value = "l1,l2,bilevel")]
        modes: String,
    },
}

pub fn run() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version land on stdout with success; usage errors are
            // validation failures.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Probe => cmd_probe(cli),
        Command::Calibrate { artifact, records } => cmd_calibrate(cli, artifact, records),
        Command::Evaluate { records } => cmd_evaluate(cli, records),
        Command::Simulate { spec, n, modes } => cmd_simulate(cli, spec.as_deref(), *n, modes),
    }
}

fn require_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Validation("--config is required for this command".into()))?;
    RunConfig::load(path)
}

/// Resolves the calibration mode: the CLI flag wins over the config value.
/// `vanilla` is only meaningful where no artifact is built.
fn resolve_mode(cli: &Cli, config: &RunConfig) -> Result<CalibrationMode, CliError> {
    match cli.mode.as_deref() {
        None => Ok(config.calibration.mode),
        Some("vanilla") => Err(CliError::Validation(
            "mode `vanilla` builds no artifact; it is only valid for simulate".into(),
        )),
        Some(text) => match ExperimentMode::from_str(text) {
            Ok(ExperimentMode::Bilevel) => Ok(CalibrationMode::Bilevel),
            Ok(ExperimentMode::L1Only) => Ok(CalibrationMode::L1Only),
            Ok(ExperimentMode::L2Only) => Ok(CalibrationMode::L2Only),
            Ok(ExperimentMode::Vanilla) | Err(_) => {
                Err(CliError::Validation(format!("unknown mode {text:?}")))
            }
        },
    }
}

enum BuiltBackend {
    Mock(MockBackend),
    Http(HttpBackend),
}

impl BuiltBackend {
    fn as_dyn(&self) -> &dyn Backend {
        match self {
            BuiltBackend::Mock(b) => b,
            BuiltBackend::Http(b) => b,
        }
    }
}

fn load_task_spec(path: &Path) -> Result<SyntheticTaskSpec, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Environment(format!("cannot read task spec {path:?}: {e}")))?;
    let spec: SyntheticTaskSpec = toml::from_str(&text)
        .map_err(|e| CliError::Validation(format!("bad task spec {path:?}: {e}")))?;
    spec.validate()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(spec)
}

fn build_backend(config: &RunConfig) -> Result<BuiltBackend, CliError> {
    match &config.backend {
        BackendSelector::Mock { spec } => {
            Ok(BuiltBackend::Mock(MockBackend::new(load_task_spec(spec)?)))
        }
        BackendSelector::Http(backend_config) => HttpBackend::new(backend_config.clone())
            .map(BuiltBackend::Http)
            .map_err(|e| CliError::Environment(e.to_string())),
    }
}

/// Few-shot exemplars for a run: the configured manifest when present, the
/// leading synthetic records for a mock backend otherwise.
fn load_few_shot(
    config: &RunConfig,
    classes: &ClassLabelSet,
) -> Result<FewShotSet, CliError> {
    let schema = config.attribute_schema()?;
    if let Some(path) = &config.few_shot_manifest {
        let exemplars = io::read_few_shot_manifest(path)?;
        return FewShotSet::new(exemplars, &schema, classes)
            .map_err(|e| CliError::Validation(format!("few-shot manifest {path:?}: {e}")));
    }
    match &config.backend {
        BackendSelector::Mock { spec } => {
            let spec = load_task_spec(spec)?;
            let dataset = simulator::generate(&spec, 4)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            FewShotSet::new(dataset.exemplars(4), &schema, classes)
                .map_err(|e| CliError::Validation(e.to_string()))
        }
        BackendSelector::Http(_) => Err(CliError::Validation(
            "few_shot_manifest is required for an http backend".into(),
        )),
    }
}

fn all_probes_floored(probes: &ProbeSet) -> bool {
    probes.population.matched == 0 && probes.subgroups.values().all(|p| p.matched == 0)
}

fn cmd_probe(cli: &Cli) -> Result<(), CliError> {
    let config = require_config(cli)?;
    let classes = config.class_set()?;
    let schema = config.attribute_schema()?;
    let mode = resolve_mode(cli, &config)?;
    let backend = build_backend(&config)?;
    let few_shot = load_few_shot(&config, &classes)?;

    let probe_run = ProbeRun {
        few_shot: &few_shot,
        template: &config.template,
        classes: &classes,
        schema: &schema,
        attribute: &config.calibration.attribute,
    };
    let probes = run_probes_with(
        backend.as_dyn(),
        &probe_run,
        config.calibration.probe_repeats,
    )
    .map_err(|e| CliError::Environment(e.to_string()))?;

    if all_probes_floored(&probes) {
        return Err(CliError::Environment(
            "no label token appeared in any probe response; the backend cannot support this \
             class set"
                .into(),
        ));
    }

    let provenance = Provenance {
        model_id: backend.as_dyn().model_id().to_string(),
        template_id: config.template.template_id.clone(),
        few_shot_hash: few_shot_hash(&few_shot),
        timestamp: chrono::Utc::now().to_rfc3339(),
    };
    let built = build_artifact(
        &probes,
        &classes,
        &config.calibration.attribute,
        mode,
        config.calibration.floor,
        provenance,
    )
    .map_err(|e| CliError::Validation(e.to_string()))?;

    if !built.population_floored.is_empty() {
        log::warn!(
            "population null probe floored at classes {:?}",
            built.population_floored
        );
    }
    for (value, floored) in &built.subgroup_floored {
        if !floored.is_empty() {
            log::warn!("null probe for {value:?} floored at classes {floored:?}");
        }
    }

    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("artifact.json"));
    io::write_artifact(&out, &built.artifact)?;
    print_artifact_summary(&built.artifact);
    println!("artifact written to {}", out.display());
    Ok(())
}

fn print_artifact_summary(artifact: &CalibrationArtifact) {
    println!(
        "calibration over attribute {:?}, mode {}, alpha {:.6}",
        artifact.attribute, artifact.mode, artifact.alpha
    );
    let fmt = |diag: &[f64]| {
        diag.iter()
            .map(|d| format!("{d:.4}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    println!("  population diag: {}", fmt(artifact.population_matrix.diag()));
    for (value, matrix) in &artifact.final_matrices {
        println!("  final diag [{value}]: {}", fmt(matrix.diag()));
    }
}

fn cmd_calibrate(cli: &Cli, artifact_path: &Path, records_path: &Path) -> Result<(), CliError> {
    let config = require_config(cli)?;
    let classes = config.class_set()?;
    let artifact = io::read_artifact(artifact_path)?;

    if artifact.class_set != classes {
        return Err(CliError::Validation(format!(
            "artifact class set {:?} does not match the configured classes {:?}",
            artifact.class_set.display_names(),
            classes.display_names()
        )));
    }
    engine::verify_artifact(&artifact)
        .map_err(|e| CliError::Validation(format!("artifact fails verification: {e}")))?;

    if let Some(path) = &config.few_shot_manifest {
        let schema = config.attribute_schema()?;
        let exemplars = io::read_few_shot_manifest(path)?;
        let few_shot = FewShotSet::new(exemplars, &schema, &classes)
            .map_err(|e| CliError::Validation(e.to_string()))?;
        if few_shot_hash(&few_shot) != artifact.provenance.few_shot_hash {
            log::warn!(
                "few-shot manifest hash differs from the one the artifact was probed with; \
                 calibration may not transfer"
            );
        }
    }

    let mut records = io::read_records(records_path, &classes)?;
    let mut calibrated = 0usize;
    let mut skipped = 0usize;
    for record in records.iter_mut() {
        let value = record.attributes.get(&artifact.attribute);
        let matrix = value.and_then(|v| artifact.final_matrices.get(v));
        let matrix = match (matrix, value) {
            (Some(m), _) => m,
            (None, value) => {
                let detail = match value {
                    Some(v) => format!("value {v:?} has no calibration matrix"),
                    None => format!("record misses attribute {:?}", artifact.attribute),
                };
                if cli.strict {
                    return Err(CliError::Validation(format!(
                        "record {:?}: {detail}",
                        record.id
                    )));
                }
                log::warn!("record {:?}: {detail}; left uncalibrated", record.id);
                skipped += 1;
                continue;
            }
        };
        let conf = engine::apply_calibration(matrix, &record.raw_conf)
            .map_err(|e| CliError::Validation(format!("record {:?}: {e}", record.id)))?;
        let (label, confidence) = engine::predict(&conf);
        record.calibrated_conf = Some(conf);
        record.predicted_label = label;
        record.predicted_confidence = confidence;
        calibrated += 1;
    }

    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("calibrated.jsonl"));
    io::write_records(&out, &records, &classes)?;
    println!(
        "calibrated {calibrated} records ({skipped} skipped) -> {}",
        out.display()
    );
    Ok(())
}

fn cmd_evaluate(cli: &Cli, records_path: &Path) -> Result<(), CliError> {
    let config = require_config(cli)?;
    let classes = config.class_set()?;
    let schema = config.attribute_schema()?;
    let records = io::read_records(records_path, &classes)?;

    let mut bad_records = 0usize;
    for record in &records {
        if let Err(violations) = validate_record(record, &schema, &classes) {
            if cli.strict {
                let listed: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
                return Err(CliError::Validation(format!(
                    "record {:?}: {}",
                    record.id,
                    listed.join("; ")
                )));
            }
            bad_records += 1;
            for v in &violations {
                log::warn!("record {:?}: {v}", record.id);
            }
        }
    }
    if bad_records > 0 {
        log::warn!("{bad_records} records failed validation; metrics include them as-is");
    }

    let report = crate::metrics::full_report(&records, &schema, &config.binning)
        .map_err(|e| CliError::MetricUndefined(e.to_string()))?;

    if cli.strict && !report.missing.is_empty() {
        let listed: Vec<String> = report
            .missing
            .iter()
            .map(|(k, v)| format!("{k}: {v}"))
            .collect();
        return Err(CliError::MetricUndefined(listed.join("; ")));
    }

    let scale = cli.scale_x100 || config.scale_x100;
    print!(
        "{}",
        render::render_table(&[("evaluated".to_string(), &report)], &schema, scale)
    );
    if report.skipped_unlabeled > 0 {
        println!("({} unlabeled records excluded)", report.skipped_unlabeled);
    }
    if let Some(out) = &cli.out {
        io::write_report(out, &report)?;
        println!("report written to {}", out.display());
    }
    Ok(())
}

fn parse_modes(text: &str) -> Result<Vec<ExperimentMode>, CliError> {
    let mut modes = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let mode = ExperimentMode::from_str(part).map_err(CliError::Validation)?;
        if !modes.contains(&mode) {
            modes.push(mode);
        }
    }
    if modes.is_empty() {
        return Err(CliError::Validation("no modes requested".into()));
    }
    Ok(modes)
}

fn cmd_simulate(
    cli: &Cli,
    spec_path: Option<&Path>,
    n: usize,
    modes_text: &str,
) -> Result<(), CliError> {
    let mut spec = match spec_path {
        Some(path) => load_task_spec(path)?,
        None => SyntheticTaskSpec::default_biased(),
    };
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let modes = parse_modes(modes_text)?;
    let binning = BinningConfig::default();

    let result = simulator::run_experiment(&spec, n, &modes, &binning).map_err(|e| match e {
        simulator::SimulatorError::Backend(msg) => CliError::Environment(msg),
        other => CliError::Validation(other.to_string()),
    })?;

    let classes = simulator::default_class_set(spec.num_classes);
    let out_dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("simulate-out"));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Environment(format!("cannot create {out_dir:?}: {e}")))?;

    let mut rows: Vec<(String, &crate::metrics::MetricReport)> = Vec::new();
    for (mode, outcome) in &result.outcomes {
        let stem = mode.to_string();
        io::write_records(
            &out_dir.join(format!("{stem}.records.jsonl")),
            &outcome.records,
            &classes,
        )?;
        io::write_report(&out_dir.join(format!("{stem}.report.json")), &outcome.report)?;
        rows.push((stem, &outcome.report));
    }
    for (mode, artifact) in &result.artifacts {
        io::write_artifact(&out_dir.join(format!("{mode}.artifact.json")), artifact)?;
    }

    let table = render::render_table(&rows, &spec.schema, cli.scale_x100);
    io::write_atomic(&out_dir.join("table.txt"), table.as_bytes())?;
    println!(
        "probed attribute {:?}; outputs in {}",
        result.probe_attribute,
        out_dir.display()
    );
    print!("{table}");
    Ok(())
}
