//! Factuality (F1 of the true-fact class per split), logical
//! self-consistency (fraction of non-violated constraints among those whose
//! antecedent literal is believed), and the subject-embedding similarity
//! matrix.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{BeliefError, BeliefSource, EmbeddingBeliefModel};
use crate::kb::{split_t1_t2, ConstraintSet, Fact, FactSet};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error("fact ({subject}, {property}) is unlabeled")]
    Unlabeled { subject: String, property: String },
}

/// Binary truth prediction for a fact variable.
pub trait TruthPredictor {
    fn predict(&self, subject: &str, property: &str) -> Result<bool, BeliefError>;
}

/// Thresholding at strictly greater than 0.5; exactly 0.5 predicts false.
impl<M: BeliefSource> TruthPredictor for M {
    fn predict(&self, subject: &str, property: &str) -> Result<bool, BeliefError> {
        Ok(self.belief(subject, property)? > 0.5)
    }
}

/// True iff the model's belief exceeds 0.5.
pub fn predict_truth<M: BeliefSource>(
    model: &M,
    subject: &str,
    property: &str,
) -> Result<bool, BeliefError> {
    model.predict(subject, property)
}

/// A base predictor with per-fact overrides (used for corrected
/// assignments from the inference-time baseline).
pub struct OverlayPredictor<'a, P: TruthPredictor> {
    base: &'a P,
    overrides: BTreeMap<(String, String), bool>,
}

impl<'a, P: TruthPredictor> OverlayPredictor<'a, P> {
    pub fn new(base: &'a P) -> Self {
        Self {
            base,
            overrides: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, subject: &str, property: &str, value: bool) {
        self.overrides
            .insert((subject.to_string(), property.to_string()), value);
    }
}

impl<P: TruthPredictor> TruthPredictor for OverlayPredictor<'_, P> {
    fn predict(&self, subject: &str, property: &str) -> Result<bool, BeliefError> {
        if let Some(&v) = self
            .overrides
            .get(&(subject.to_string(), property.to_string()))
        {
            return Ok(v);
        }
        self.base.predict(subject, property)
    }
}

/// Confusion counts of the positive (true-fact) class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
}

impl SplitCounts {
    pub fn support(&self) -> usize {
        self.true_positives + self.false_positives + self.false_negatives + self.true_negatives
    }

    /// `2TP / (2TP + FP + FN)`, defined as 1 when the denominator is empty.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.true_positives + self.false_positives + self.false_negatives;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.true_positives as f64 / denom as f64
        }
    }

    fn add(&mut self, other: &SplitCounts) {
        self.true_positives += other.true_positives;
        self.false_positives += other.false_positives;
        self.false_negatives += other.false_negatives;
        self.true_negatives += other.true_negatives;
    }
}

/// Scores the positive class over labeled facts.
pub fn f1_scores<P: TruthPredictor>(predictor: &P, facts: &[&Fact]) -> Result<SplitCounts, EvalError> {
    let mut counts = SplitCounts::default();
    for fact in facts {
        let label = fact.label.ok_or_else(|| EvalError::Unlabeled {
            subject: fact.subject.clone(),
            property: fact.property.clone(),
        })?;
        let predicted = predictor.predict(&fact.subject, &fact.property)?;
        match (label, predicted) {
            (true, true) => counts.true_positives += 1,
            (false, true) => counts.false_positives += 1,
            (true, false) => counts.false_negatives += 1,
            (false, false) => counts.true_negatives += 1,
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyCounts {
    /// Subject-constraint pairs whose antecedent literal is satisfied.
    pub active: usize,
    /// Active pairs whose consequent literal is unsatisfied.
    pub violated: usize,
}

impl ConsistencyCounts {
    /// `1 − violated/active`; vacuously 1 when nothing is active.
    pub fn ratio(&self) -> f64 {
        if self.active == 0 {
            1.0
        } else {
            1.0 - self.violated as f64 / self.active as f64
        }
    }
}

fn consistency_for_subject<P: TruthPredictor>(
    predictor: &P,
    subject: &str,
    constraints: &ConstraintSet,
) -> Result<ConsistencyCounts, EvalError> {
    let mut counts = ConsistencyCounts::default();
    for constraint in constraints.iter() {
        let ant = &constraint.antecedent;
        if predictor.predict(subject, &ant.property)? != ant.polarity {
            continue;
        }
        counts.active += 1;
        let con = &constraint.consequent;
        if predictor.predict(subject, &con.property)? != con.polarity {
            counts.violated += 1;
        }
    }
    Ok(counts)
}

/// Iterates subjects × general constraints, querying the model's predicted
/// truth of both literals of each implication.
pub fn logical_consistency<P: TruthPredictor>(
    predictor: &P,
    subjects: &[&str],
    constraints: &ConstraintSet,
) -> Result<ConsistencyCounts, EvalError> {
    let mut total = ConsistencyCounts::default();
    for subject in subjects {
        let counts = consistency_for_subject(predictor, subject, constraints)?;
        total.active += counts.active;
        total.violated += counts.violated;
    }
    Ok(total)
}

/// As [`logical_consistency`], evaluated over subject chunks on `jobs`
/// worker threads with a fixed merge order.
pub fn logical_consistency_parallel<P>(
    predictor: &P,
    subjects: &[&str],
    constraints: &ConstraintSet,
    jobs: usize,
) -> Result<ConsistencyCounts, EvalError>
where
    P: TruthPredictor + Sync,
{
    if jobs <= 1 || subjects.len() <= 1 {
        return logical_consistency(predictor, subjects, constraints);
    }
    let chunk = subjects.len().div_ceil(jobs);
    let results: Vec<Result<ConsistencyCounts, EvalError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = subjects
            .chunks(chunk)
            .map(|part| scope.spawn(move || logical_consistency(predictor, part, constraints)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("consistency worker panicked"))
            .collect()
    });
    let mut total = ConsistencyCounts::default();
    for r in results {
        let counts = r?;
        total.active += counts.active;
        total.violated += counts.violated;
    }
    Ok(total)
}

/// Everything the report tables need, with raw counts kept alongside the
/// ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub antecedent_f1: f64,
    pub consequent_f1: f64,
    pub total_f1: f64,
    pub logical_consistency: f64,
    pub counts: ReportCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCounts {
    pub antecedent: SplitCounts,
    pub consequent: SplitCounts,
    pub total: SplitCounts,
    pub active_constraints: usize,
    pub violated_constraints: usize,
    pub subjects: usize,
    /// Facts whose property no constraint mentions (excluded from splits).
    pub unsplit_facts: usize,
}

/// Full evaluation of a predictor on one fact distribution: F1 per split
/// and overall plus logical consistency over the distribution's subjects.
pub fn evaluate_report<P>(
    predictor: &P,
    facts: &FactSet,
    constraints: &ConstraintSet,
    jobs: usize,
) -> Result<Report, EvalError>
where
    P: TruthPredictor + Sync,
{
    let split = split_t1_t2(facts, constraints);
    let ant_refs: Vec<&Fact> = split.antecedents.iter().collect();
    let con_refs: Vec<&Fact> = split.consequents.iter().collect();
    let antecedent = f1_scores(predictor, &ant_refs)?;
    let consequent = f1_scores(predictor, &con_refs)?;
    let mut total = antecedent;
    total.add(&consequent);
    let subjects: Vec<&str> = facts.subjects().collect();
    let consistency = logical_consistency_parallel(predictor, &subjects, constraints, jobs)?;
    Ok(Report {
        antecedent_f1: antecedent.f1(),
        consequent_f1: consequent.f1(),
        total_f1: total.f1(),
        logical_consistency: consistency.ratio(),
        counts: ReportCounts {
            antecedent,
            consequent,
            total,
            active_constraints: consistency.active,
            violated_constraints: consistency.violated,
            subjects: subjects.len(),
            unsplit_facts: split.unconstrained,
        },
    })
}

// ---------------------------------------------------------------------------
// Similarity matrix
// ---------------------------------------------------------------------------

/// Pairwise cosine similarities between subject embeddings; `None` entries
/// are undefined (zero vector) and listed in `errors`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    pub errors: Vec<(String, String)>,
}

pub fn similarity_matrix(
    model: &EmbeddingBeliefModel,
    subjects_a: &[&str],
    subjects_b: &[&str],
) -> Result<SimilarityMatrix, EvalError> {
    let mut values = Vec::with_capacity(subjects_a.len());
    let mut errors = Vec::new();
    for &a in subjects_a {
        let ua = model.subject_vector(a)?;
        let norm_a = ua.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut row = Vec::with_capacity(subjects_b.len());
        for &b in subjects_b {
            let ub = model.subject_vector(b)?;
            let norm_b = ub.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm_a == 0.0 || norm_b == 0.0 {
                errors.push((a.to_string(), b.to_string()));
                row.push(None);
                continue;
            }
            let dot: f64 = ua.iter().zip(ub).map(|(x, y)| x * y).sum();
            row.push(Some(dot / (norm_a * norm_b)));
        }
        values.push(row);
    }
    Ok(SimilarityMatrix {
        rows: subjects_a.iter().map(|s| s.to_string()).collect(),
        cols: subjects_b.iter().map(|s| s.to_string()).collect(),
        values,
        errors,
    })
}

/// Comma-separated rendering with subject headers; undefined entries stay
/// empty.
pub fn write_similarity_csv(matrix: &SimilarityMatrix) -> String {
    let mut out = String::from("subject");
    for col in &matrix.cols {
        out.push(',');
        out.push_str(col);
    }
    out.push('\n');
    for (row_name, row) in matrix.rows.iter().zip(&matrix.values) {
        out.push_str(row_name);
        for value in row {
            out.push(',');
            if let Some(v) = value {
                out.push_str(&format!("{v:.6}"));
            }
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Table rendering
// ---------------------------------------------------------------------------

/// One row of the combined results table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub train_subset: String,
    pub report: Report,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_secs: Option<f64>,
}

/// Fixed-width table with the four score columns and an optional
/// wall-clock column.
pub fn format_table(rows: &[TableRow]) -> String {
    let with_clock = rows.iter().any(|r| r.wall_clock_secs.is_some());
    let mut header = format!(
        "{:<18} {:<14} {:>14} {:>14} {:>9} {:>20}",
        "Method", "Train subset", "Antecedents F1", "Consequents F1", "Total F1", "Logical consistency"
    );
    if with_clock {
        header.push_str(&format!(" {:>14}", "Wall clock (s)"));
    }
    let mut out = String::new();
    out.push_str(&header);
    out.push('\n');
    out.push_str(&"-".repeat(header.len()));
    out.push('\n');
    for row in rows {
        let mut line = format!(
            "{:<18} {:<14} {:>14.2} {:>14.2} {:>9.2} {:>20.2}",
            row.method,
            row.train_subset,
            row.report.antecedent_f1,
            row.report.consequent_f1,
            row.report.total_f1,
            row.report.logical_consistency
        );
        if with_clock {
            match row.wall_clock_secs {
                Some(secs) => line.push_str(&format!(" {secs:>14.2}")),
                None => line.push_str(&format!(" {:>14}", "-")),
            }
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}
