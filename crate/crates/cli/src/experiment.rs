//! Shared experiment pipeline: data loading, model construction, training,
//! evaluation, and the inference-time correction baseline.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use loco_core::belief::provider::{ProviderClient, ProviderEndpoint};
use loco_core::belief::{
    BeliefError, BeliefSource, EmbeddingBeliefModel, QueryTemplate, SavedModel, TabularBeliefModel,
};
use loco_core::evaluation::{
    evaluate_report, similarity_matrix, write_similarity_csv, OverlayPredictor, Report,
    TruthPredictor,
};
use loco_core::kb::{
    ground_constraints, parse_constraints, parse_facts, sample_fraction, split_t1_t2,
    ConstraintSet, Fact, FactSet, GroundedConstraintSet,
};
use loco_core::maxsat::{build_correction_problem, correct_beliefs};
use loco_core::training::{train, Objective, TrainHistory};

use crate::config::{ExperimentConfig, ModelSpec, SplitSpec};
use crate::CliError;

pub struct Dataset {
    pub facts_train: FactSet,
    pub facts_eval: FactSet,
    pub constraints: ConstraintSet,
}

pub fn read_to_string(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))
}

pub fn load_facts(path: &Path) -> Result<FactSet, CliError> {
    parse_facts(&read_to_string(path)?)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn load_constraints(path: &Path) -> Result<ConstraintSet, CliError> {
    parse_constraints(&read_to_string(path)?)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

impl Dataset {
    pub fn load(config: &ExperimentConfig) -> Result<Self, CliError> {
        Ok(Self {
            facts_train: load_facts(&config.facts_train)?,
            facts_eval: load_facts(&config.facts_eval)?,
            constraints: load_constraints(&config.constraints)?,
        })
    }

    /// Training facts selected by the split spec.
    pub fn training_facts(&self, split: &SplitSpec) -> Result<FactSet, CliError> {
        match split {
            SplitSpec::T1 => Ok(split_t1_t2(&self.facts_train, &self.constraints).antecedents),
            SplitSpec::T1t2 { fraction, seed } => {
                let (train, _held) = sample_fraction(&self.facts_train, *fraction, *seed)
                    .map_err(|e| CliError::usage(e.to_string()))?;
                Ok(train)
            }
        }
    }

    fn subjects(&self) -> Vec<String> {
        let mut subjects: Vec<String> = self
            .facts_train
            .subjects()
            .chain(self.facts_eval.subjects())
            .map(|s| s.to_string())
            .collect();
        subjects.sort();
        subjects.dedup();
        subjects
    }

    fn properties(&self) -> Vec<String> {
        let mut properties: std::collections::BTreeSet<String> = Default::default();
        for facts in [&self.facts_train, &self.facts_eval] {
            properties.extend(facts.properties().map(|p| p.to_string()));
        }
        for c in self.constraints.iter() {
            properties.insert(c.antecedent.property.clone());
            properties.insert(c.consequent.property.clone());
        }
        properties.into_iter().collect()
    }
}

/// A trainable model of either kind behind one dispatch point.
#[derive(Debug, Clone)]
pub enum SurrogateModel {
    Tabular(TabularBeliefModel),
    Embedding(EmbeddingBeliefModel),
}

impl SurrogateModel {
    /// Registers the full vocabulary of both distributions so every
    /// evaluation query is answerable.
    pub fn initialize(spec: &ModelSpec, data: &Dataset, seed: u64) -> Result<Self, CliError> {
        let subjects = data.subjects();
        let properties = data.properties();
        match spec {
            ModelSpec::Tabular => {
                let pairs = subjects
                    .iter()
                    .flat_map(|s| properties.iter().map(move |p| (s.as_str(), p.as_str())));
                Ok(SurrogateModel::Tabular(TabularBeliefModel::new(pairs)))
            }
            ModelSpec::Embedding { dim } => Ok(SurrogateModel::Embedding(
                EmbeddingBeliefModel::new(subjects.iter(), properties.iter(), *dim, seed),
            )),
            ModelSpec::Provider { .. } => Err(CliError::usage(
                "a provider endpoint cannot be trained; use the eval command".to_string(),
            )),
        }
    }

    pub fn saved(&self) -> SavedModel {
        match self {
            SurrogateModel::Tabular(m) => SavedModel::from(m),
            SurrogateModel::Embedding(m) => SavedModel::from(m),
        }
    }

    pub fn embedding(&self) -> Option<&EmbeddingBeliefModel> {
        match self {
            SurrogateModel::Embedding(m) => Some(m),
            SurrogateModel::Tabular(_) => None,
        }
    }
}

impl BeliefSource for SurrogateModel {
    fn belief(&self, subject: &str, property: &str) -> Result<f64, BeliefError> {
        match self {
            SurrogateModel::Tabular(m) => m.belief(subject, property),
            SurrogateModel::Embedding(m) => m.belief(subject, property),
        }
    }
}

pub struct TrainedRun {
    pub model: SurrogateModel,
    pub history: TrainHistory,
    pub grounded: GroundedConstraintSet,
}

/// Ground per the split, train per the config, and return everything the
/// artifact writers need.
pub fn train_method(
    config: &ExperimentConfig,
    data: &Dataset,
    objective: Objective,
) -> Result<TrainedRun, CliError> {
    let train_facts = data.training_facts(&config.split)?;
    let grounded = ground_constraints(&data.constraints, &train_facts, true);
    if !grounded.skipped.is_empty() {
        eprintln!(
            "warning: {} grounded constraints were contradicted by evidence and skipped",
            grounded.skipped.len()
        );
    }
    let mut model = SurrogateModel::initialize(&config.model, data, config.train.seed)?;
    let mut train_config = config.train.clone();
    train_config.objective = objective;
    let history = match &mut model {
        SurrogateModel::Tabular(m) => train(&train_config, &train_facts, &grounded, m),
        SurrogateModel::Embedding(m) => train(&train_config, &train_facts, &grounded, m),
    }
    .map_err(|e| CliError::runtime(e.to_string()))?;
    Ok(TrainedRun {
        model,
        history,
        grounded,
    })
}

pub fn evaluate_both<P>(
    predictor: &P,
    data: &Dataset,
    jobs: usize,
) -> Result<(Report, Report), CliError>
where
    P: TruthPredictor + Sync,
{
    let train = evaluate_report(predictor, &data.facts_train, &data.constraints, jobs)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let eval = evaluate_report(predictor, &data.facts_eval, &data.constraints, jobs)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    Ok((train, eval))
}

pub struct BaselineOutcome<'a> {
    pub overlay: OverlayPredictor<'a, SurrogateModel>,
    /// Subjects whose correction ended with violated hard formulas.
    pub unsatisfied_subjects: Vec<String>,
    pub inexact_subjects: Vec<String>,
}

/// Per-subject correction of a base model's beliefs against the
/// constraints grounded (without evidence) on one fact distribution.
pub fn baseline_overlay<'a>(
    base: &'a SurrogateModel,
    facts: &FactSet,
    constraints: &ConstraintSet,
) -> Result<BaselineOutcome<'a>, CliError> {
    let grounded = ground_constraints(constraints, facts, false);
    let mut overlay = OverlayPredictor::new(base);
    let mut unsatisfied = Vec::new();
    let mut inexact = Vec::new();
    for subject in facts.subjects() {
        let problem = build_correction_problem(subject, facts, &grounded, base)
            .map_err(|e| CliError::runtime(e.to_string()))?;
        let outcome = correct_beliefs(&problem).map_err(|e| CliError::runtime(e.to_string()))?;
        for (var, &value) in problem.variables.iter().zip(&outcome.assignment) {
            overlay.set(subject, var, value);
        }
        if outcome.violated > 0 {
            unsatisfied.push(subject.to_string());
        }
        if !outcome.exact {
            inexact.push(subject.to_string());
        }
    }
    Ok(BaselineOutcome {
        overlay,
        unsatisfied_subjects: unsatisfied,
        inexact_subjects: inexact,
    })
}

/// Consistency over the corrected scope: subject-constraint pairs whose
/// two properties are both facts of the subject (the hard formulas the
/// correction enforces).
pub fn corrected_scope_consistency<P: TruthPredictor>(
    predictor: &P,
    facts: &FactSet,
    constraints: &ConstraintSet,
) -> Result<loco_core::evaluation::ConsistencyCounts, CliError> {
    let mut counts = loco_core::evaluation::ConsistencyCounts::default();
    for subject in facts.subjects() {
        let props: std::collections::BTreeSet<&str> =
            facts.facts_of(subject).map(|f| f.property.as_str()).collect();
        for c in constraints.iter() {
            if !props.contains(c.antecedent.property.as_str())
                || !props.contains(c.consequent.property.as_str())
            {
                continue;
            }
            let active = predictor
                .predict(subject, &c.antecedent.property)
                .map_err(|e| CliError::runtime(e.to_string()))?
                == c.antecedent.polarity;
            if !active {
                continue;
            }
            counts.active += 1;
            let satisfied = predictor
                .predict(subject, &c.consequent.property)
                .map_err(|e| CliError::runtime(e.to_string()))?
                == c.consequent.polarity;
            if !satisfied {
                counts.violated += 1;
            }
        }
    }
    Ok(counts)
}

/// Evaluates the correction baseline on one distribution: F1 from the
/// overlaid predictions, consistency over the corrected scope.
pub fn baseline_report(
    base: &SurrogateModel,
    facts: &FactSet,
    constraints: &ConstraintSet,
    jobs: usize,
) -> Result<Report, CliError> {
    let outcome = baseline_overlay(base, facts, constraints)?;
    let mut report = evaluate_report(&outcome.overlay, facts, constraints, jobs)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let corrected = corrected_scope_consistency(&outcome.overlay, facts, constraints)?;
    report.logical_consistency = corrected.ratio();
    report.counts.active_constraints = corrected.active;
    report.counts.violated_constraints = corrected.violated;
    if !outcome.unsatisfied_subjects.is_empty() {
        eprintln!(
            "warning: correction left violations for subjects: {}",
            outcome.unsatisfied_subjects.join(", ")
        );
    }
    if !outcome.inexact_subjects.is_empty() {
        eprintln!(
            "note: greedy-repair fallback used for subjects: {}",
            outcome.inexact_subjects.join(", ")
        );
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Provider-backed evaluation
// ---------------------------------------------------------------------------

/// Beliefs prefetched from a provider, then served as an ordinary source.
pub struct PrefetchedBeliefs {
    beliefs: BTreeMap<(String, String), f64>,
}

impl BeliefSource for PrefetchedBeliefs {
    fn belief(&self, subject: &str, property: &str) -> Result<f64, BeliefError> {
        self.beliefs
            .get(&(subject.to_string(), property.to_string()))
            .copied()
            .ok_or_else(|| BeliefError::UnregisteredFact {
                subject: subject.to_string(),
                property: property.to_string(),
            })
    }
}

/// Queries the provider for every fact and every subject × constraint
/// property pair, with `jobs` requests in flight.
pub fn prefetch_provider_beliefs(
    endpoint: &str,
    data: &Dataset,
    jobs: usize,
) -> Result<PrefetchedBeliefs, CliError> {
    let endpoint =
        ProviderEndpoint::parse(endpoint).map_err(|e| CliError::usage(e.to_string()))?;
    let mut client = ProviderClient::connect(&endpoint, QueryTemplate::default_yes_no())
        .map_err(|e| CliError::runtime(e.to_string()))?
        .with_max_in_flight(jobs.max(1) * 8);
    let mut keys: std::collections::BTreeSet<(String, String)> = Default::default();
    for facts in [&data.facts_train, &data.facts_eval] {
        for fact in facts.iter() {
            keys.insert((fact.subject.clone(), fact.property.clone()));
        }
        for subject in facts.subjects() {
            for c in data.constraints.iter() {
                keys.insert((subject.to_string(), c.antecedent.property.clone()));
                keys.insert((subject.to_string(), c.consequent.property.clone()));
            }
        }
    }
    let facts: Vec<Fact> = keys
        .iter()
        .map(|(s, p)| Fact::new(s.clone(), p.clone(), None))
        .collect();
    let values = client
        .beliefs(&facts)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    Ok(PrefetchedBeliefs {
        beliefs: keys.into_iter().zip(values).collect(),
    })
}

// ---------------------------------------------------------------------------
// Artifact writing
// ---------------------------------------------------------------------------

pub struct RunArtifacts {
    pub report_train: Report,
    pub report_eval: Report,
    pub history: Option<TrainHistory>,
    pub model: Option<SavedModel>,
    pub grounded: Option<GroundedConstraintSet>,
    pub similarity_csv: Option<String>,
    pub table: String,
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::runtime(format!("serialization failed: {e}")))?;
    std::fs::write(path, text + "\n")
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

fn rendered_json(value: &impl serde::Serialize) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::runtime(format!("serialization failed: {e}")))
}

/// Writes the run's artifacts under `out_dir` with fixed filenames. All
/// content is rendered before anything touches disk, and a mid-write
/// failure removes the files already written, so no partial output set is
/// left behind.
pub fn write_run_artifacts(
    out_dir: &Path,
    config: &ExperimentConfig,
    artifacts: &RunArtifacts,
) -> Result<(), CliError> {
    let mut files: Vec<(std::path::PathBuf, String)> = vec![
        (out_dir.join("resolved_config.json"), rendered_json(config)?),
        (
            out_dir.join("report_train.json"),
            rendered_json(&artifacts.report_train)?,
        ),
        (
            out_dir.join("report_eval.json"),
            rendered_json(&artifacts.report_eval)?,
        ),
        (out_dir.join("table.txt"), artifacts.table.clone()),
    ];
    if let Some(history) = &artifacts.history {
        files.push((out_dir.join("history.json"), rendered_json(history)?));
    }
    if let Some(model) = &artifacts.model {
        files.push((out_dir.join("model.json"), rendered_json(model)?));
    }
    if let Some(grounded) = &artifacts.grounded {
        files.push((
            out_dir.join("grounded.json"),
            loco_core::kb::write_grounded_json(grounded),
        ));
    }
    if let Some(csv) = &artifacts.similarity_csv {
        files.push((out_dir.join("similarity.csv"), csv.clone()));
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    let mut written = Vec::new();
    for (path, content) in &files {
        if let Err(e) = std::fs::write(path, content) {
            for done in written {
                let _ = std::fs::remove_file(done);
            }
            return Err(CliError::runtime(format!(
                "cannot write {}: {e}",
                path.display()
            )));
        }
        written.push(path.clone());
    }
    Ok(())
}

/// Similarity between train-distribution and eval-distribution subjects.
pub fn similarity_artifact(
    model: &SurrogateModel,
    data: &Dataset,
) -> Result<Option<String>, CliError> {
    let Some(embedding) = model.embedding() else {
        return Ok(None);
    };
    let rows: Vec<&str> = data.facts_train.subjects().collect();
    let cols: Vec<&str> = data.facts_eval.subjects().collect();
    let matrix = similarity_matrix(embedding, &rows, &cols)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    if !matrix.errors.is_empty() {
        eprintln!(
            "warning: {} similarity entries undefined (zero vectors)",
            matrix.errors.len()
        );
    }
    Ok(Some(write_similarity_csv(&matrix)))
}

/// Timed evaluation used by `compare` rows.
pub fn timed<T>(f: impl FnOnce() -> Result<T, CliError>) -> Result<(T, f64), CliError> {
    let start = Instant::now();
    let value = f()?;
    Ok((value, start.elapsed().as_secs_f64()))
}
