//! `loco`: experiment harness over the belief-consistency engine.
//!
//! Subcommands: `gen-data` (synthetic KB), `ground` (instantiate
//! constraints per subject and print counts), `run` (train + evaluate one
//! method), `eval` (evaluate a saved model or external provider without
//! training), `compare` (one table, one row per method).
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

mod config;
mod experiment;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use loco_core::evaluation::{format_table, TableRow};
use loco_core::kb::{ground_constraints, split_t1_t2, write_grounded_json};
use loco_core::synth::{facts_to_source_json, constraints_to_source_json, generate, SynthConfig};
use loco_core::training::Objective;

use config::{apply_overrides, ExperimentConfig, ModelSpec, Overrides};
use experiment::{
    baseline_report, evaluate_both, load_constraints, load_facts, prefetch_provider_beliefs,
    similarity_artifact, timed, train_method, write_json, write_run_artifacts, write_text,
    Dataset, RunArtifacts, SurrogateModel,
};

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation, config, or input files (exit 2).
    Usage(String),
    /// Failure while executing a valid request (exit 1).
    Runtime(String),
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError::Usage(message.into())
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError::Runtime(message.into())
    }
}

#[derive(Parser)]
#[command(name = "loco", version, about = "Belief-consistency experiment harness")]
struct Cli {
    /// Worker threads for evaluation and provider calls
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset (source layout)
    GenData {
        /// Output directory for calibration_facts.json, silver_facts.json,
        /// constraints.json
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Generator seed
        #[arg(long, default_value_t = 1972)]
        seed: u64,
        /// File layout: source (subject maps + link graph) or canonical
        #[arg(long, default_value = "source")]
        layout: String,
    },
    /// Ground constraints against a facts file and print counts
    Ground {
        #[arg(long, value_name = "PATH")]
        facts: PathBuf,
        #[arg(long, value_name = "PATH")]
        constraints: PathBuf,
        /// Skip evidence conjunction
        #[arg(long)]
        no_evidence: bool,
        /// Where to write grounded.json (omit to skip writing)
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Train one method per the config and evaluate on both distributions
    Run {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a saved model or provider endpoint without training
    Eval {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Saved model.json from a previous run
        #[arg(long, value_name = "PATH")]
        model_file: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// One table, one row per method
    Compare {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Comma-separated: sft, loco, maxsat-baseline, zero-train
        #[arg(long, value_delimiter = ',', required = true)]
        methods: Vec<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Runtime(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { out, seed, layout } => cmd_gen_data(&out, seed, &layout),
        Command::Ground {
            facts,
            constraints,
            no_evidence,
            out,
        } => cmd_ground(&facts, &constraints, !no_evidence, out.as_deref()),
        Command::Run { config, overrides } => {
            let mut config = ExperimentConfig::load(&config)?;
            apply_overrides(&mut config, &overrides)?;
            cmd_run(&config, cli.jobs)
        }
        Command::Eval {
            config,
            model_file,
            overrides,
        } => {
            let mut config = ExperimentConfig::load(&config)?;
            apply_overrides(&mut config, &overrides)?;
            cmd_eval(&config, model_file.as_deref(), cli.jobs)
        }
        Command::Compare {
            config,
            methods,
            overrides,
        } => {
            let mut config = ExperimentConfig::load(&config)?;
            apply_overrides(&mut config, &overrides)?;
            cmd_compare(&config, &methods, cli.jobs)
        }
    }
}

fn cmd_gen_data(out: &std::path::Path, seed: u64, layout: &str) -> Result<(), CliError> {
    let data = generate(&SynthConfig {
        seed,
        ..SynthConfig::default()
    });
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", out.display())))?;
    let (calib, silver, constraints) = match layout {
        "source" => (
            facts_to_source_json(&data.calibration),
            facts_to_source_json(&data.silver),
            constraints_to_source_json(&data.constraints),
        ),
        "canonical" => (
            loco_core::kb::write_facts_canonical(&data.calibration),
            loco_core::kb::write_facts_canonical(&data.silver),
            loco_core::kb::write_constraints_canonical(&data.constraints),
        ),
        other => return Err(CliError::usage(format!("unknown layout '{other}'"))),
    };
    write_text(&out.join("calibration_facts.json"), &calib)?;
    write_text(&out.join("silver_facts.json"), &silver)?;
    write_text(&out.join("constraints.json"), &constraints)?;
    println!(
        "wrote {} calibration facts, {} silver facts, {} constraints to {}",
        data.calibration.len(),
        data.silver.len(),
        data.constraints.len(),
        out.display()
    );
    Ok(())
}

fn cmd_ground(
    facts_path: &std::path::Path,
    constraints_path: &std::path::Path,
    with_evidence: bool,
    out: Option<&std::path::Path>,
) -> Result<(), CliError> {
    let facts = load_facts(facts_path)?;
    let constraints = load_constraints(constraints_path)?;
    let split = split_t1_t2(&facts, &constraints);
    let grounded = ground_constraints(&constraints, &facts, with_evidence);
    println!("antecedent facts:     {}", split.antecedents.len());
    println!("consequent facts:     {}", split.consequents.len());
    println!("grounded constraints: {}", grounded.len());
    if split.unconstrained > 0 {
        println!("unconstrained facts:  {}", split.unconstrained);
    }
    if !grounded.skipped.is_empty() {
        eprintln!(
            "warning: {} instances contradicted by evidence (reported in grounded.json)",
            grounded.skipped.len()
        );
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))?;
        write_text(&dir.join("grounded.json"), &write_grounded_json(&grounded))?;
    }
    Ok(())
}

fn split_label(config: &ExperimentConfig) -> String {
    match &config.split {
        config::SplitSpec::T1 => "T1".to_string(),
        config::SplitSpec::T1t2 { fraction, .. } => {
            format!("T1+T2 ({:.0}%)", fraction * 100.0)
        }
    }
}

fn objective_label(objective: Objective) -> &'static str {
    match objective {
        Objective::Sft => "sft",
        Objective::Loco => "loco",
    }
}

fn cmd_run(config: &ExperimentConfig, jobs: usize) -> Result<(), CliError> {
    let data = Dataset::load(config)?;
    let run = train_method(config, &data, config.train.objective)?;
    let (report_train, report_eval) = evaluate_both(&run.model, &data, jobs)?;
    let similarity_csv = similarity_artifact(&run.model, &data)?;
    let method = objective_label(config.train.objective);
    let rows = vec![
        TableRow {
            method: format!("{method} (train dist)"),
            train_subset: split_label(config),
            report: report_train.clone(),
            wall_clock_secs: None,
        },
        TableRow {
            method: format!("{method} (eval dist)"),
            train_subset: split_label(config),
            report: report_eval.clone(),
            wall_clock_secs: None,
        },
    ];
    let table = format_table(&rows);
    print!("{table}");
    let artifacts = RunArtifacts {
        report_train,
        report_eval,
        history: Some(run.history),
        model: Some(run.model.saved()),
        grounded: Some(run.grounded),
        similarity_csv,
        table,
    };
    write_run_artifacts(&config.out_dir, config, &artifacts)
}

fn cmd_eval(
    config: &ExperimentConfig,
    model_file: Option<&std::path::Path>,
    jobs: usize,
) -> Result<(), CliError> {
    let data = Dataset::load(config)?;
    let (report_train, report_eval, similarity_csv, label) = match (model_file, &config.model) {
        (Some(path), _) => {
            let text = experiment::read_to_string(path)?;
            let saved: loco_core::belief::SavedModel = serde_json::from_str(&text)
                .map_err(|e| CliError::usage(format!("bad model file {}: {e}", path.display())))?;
            let model = match saved {
                s @ loco_core::belief::SavedModel::Tabular { .. } => {
                    SurrogateModel::Tabular(s.into_tabular().expect("tabular"))
                }
                s @ loco_core::belief::SavedModel::Embedding { .. } => {
                    SurrogateModel::Embedding(s.into_embedding().expect("embedding"))
                }
            };
            let (rt, re) = evaluate_both(&model, &data, jobs)?;
            let csv = similarity_artifact(&model, &data)?;
            (rt, re, csv, "saved-model".to_string())
        }
        (None, ModelSpec::Provider { endpoint }) => {
            let beliefs = prefetch_provider_beliefs(endpoint, &data, jobs)?;
            let (rt, re) = evaluate_both(&beliefs, &data, 1)?;
            (rt, re, None, "provider".to_string())
        }
        (None, _) => {
            let model = SurrogateModel::initialize(&config.model, &data, config.train.seed)?;
            let (rt, re) = evaluate_both(&model, &data, jobs)?;
            let csv = similarity_artifact(&model, &data)?;
            (rt, re, csv, "zero-train".to_string())
        }
    };
    let rows = vec![
        TableRow {
            method: format!("{label} (train dist)"),
            train_subset: "-".to_string(),
            report: report_train.clone(),
            wall_clock_secs: None,
        },
        TableRow {
            method: format!("{label} (eval dist)"),
            train_subset: "-".to_string(),
            report: report_eval.clone(),
            wall_clock_secs: None,
        },
    ];
    let table = format_table(&rows);
    print!("{table}");
    let artifacts = RunArtifacts {
        report_train,
        report_eval,
        history: None,
        model: None,
        grounded: None,
        similarity_csv,
        table,
    };
    write_run_artifacts(&config.out_dir, config, &artifacts)
}

fn cmd_compare(
    config: &ExperimentConfig,
    methods: &[String],
    jobs: usize,
) -> Result<(), CliError> {
    if methods.is_empty() {
        return Err(CliError::usage("compare needs at least one method"));
    }
    let data = Dataset::load(config)?;
    let mut rows = Vec::new();
    let mut detail = serde_json::Map::new();
    for method in methods {
        let (reports, secs) = match method.as_str() {
            "sft" => timed(|| {
                let run = train_method(config, &data, Objective::Sft)?;
                evaluate_both(&run.model, &data, jobs)
            })?,
            "loco" => timed(|| {
                let run = train_method(config, &data, Objective::Loco)?;
                evaluate_both(&run.model, &data, jobs)
            })?,
            "zero-train" => timed(|| {
                let model = SurrogateModel::initialize(&config.model, &data, config.train.seed)?;
                evaluate_both(&model, &data, jobs)
            })?,
            "maxsat-baseline" => timed(|| {
                let model = SurrogateModel::initialize(&config.model, &data, config.train.seed)?;
                let report_train =
                    baseline_report(&model, &data.facts_train, &data.constraints, jobs)?;
                let report_eval =
                    baseline_report(&model, &data.facts_eval, &data.constraints, jobs)?;
                Ok((report_train, report_eval))
            })?,
            other => return Err(CliError::usage(format!("unknown method '{other}'"))),
        };
        let (report_train, report_eval) = reports;
        let train_subset = match method.as_str() {
            "zero-train" | "maxsat-baseline" => "-".to_string(),
            _ => split_label(config),
        };
        rows.push(TableRow {
            method: method.clone(),
            train_subset,
            report: report_eval.clone(),
            wall_clock_secs: Some(secs),
        });
        detail.insert(
            method.clone(),
            serde_json::json!({
                "report_train": report_train,
                "report_eval": report_eval,
                "wall_clock_secs": secs,
            }),
        );
    }
    let table = format_table(&rows);
    print!("{table}");
    std::fs::create_dir_all(&config.out_dir).map_err(|e| {
        CliError::runtime(format!("cannot create {}: {e}", config.out_dir.display()))
    })?;
    write_text(&config.out_dir.join("compare_table.txt"), &table)?;
    write_json(
        &config.out_dir.join("compare.json"),
        &serde_json::Value::Object(detail),
    )?;
    write_json(&config.out_dir.join("resolved_config.json"), config)?;
    Ok(())
}
