//! Inference-time belief correction: per subject, pick the truth assignment
//! maximizing belief-weighted agreement subject to hard constraints.
//!
//! Subjects decompose further into connected components of co-occurring
//! variables; components are solved exactly by enumeration up to
//! [`EXACT_MAX_VARS`] variables and by greedy repair beyond that (flagged in
//! the outcome). The objective is the log-likelihood of the assignment,
//! `Σ_j [z_j] ln p_j + [¬z_j] ln(1−p_j)`. Infeasible instances fall back to
//! minimizing the violated-formula count first. Ties break lexicographically
//! with false preferred.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::belief::{BeliefError, BeliefSource};
use crate::formula::{Assignment, Formula};
use crate::kb::{FactSet, GroundedConstraintSet};
use crate::semloss::CLAMP_EPSILON;

/// Exact enumeration cap per connected component.
pub const EXACT_MAX_VARS: usize = 20;

#[derive(Debug, Error)]
pub enum MaxSatError {
    #[error("formula references variable {var} but the problem has {n} variables")]
    BadVariable { var: usize, n: usize },
    #[error("problem has {expected} variables but {got} beliefs")]
    BeliefLength { expected: usize, got: usize },
    #[error(transparent)]
    Belief(#[from] BeliefError),
}

/// One subject's correction instance.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionProblem {
    pub subject: String,
    /// Property names backing each variable, sorted.
    pub variables: Vec<String>,
    pub beliefs: Vec<f64>,
    /// Hard formulas over the variable indices.
    pub hard: Vec<Formula>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionOutcome {
    pub assignment: Assignment,
    /// Hard formulas left violated (0 whenever the instance is satisfiable
    /// and solved exactly).
    pub violated: usize,
    /// False when the greedy-repair fallback handled some component.
    pub exact: bool,
}

fn log_weights(beliefs: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let pos = beliefs
        .iter()
        .map(|p| p.clamp(CLAMP_EPSILON, 1.0 - CLAMP_EPSILON).ln())
        .collect();
    let neg = beliefs
        .iter()
        .map(|p| (1.0 - p.clamp(CLAMP_EPSILON, 1.0 - CLAMP_EPSILON)).ln())
        .collect();
    (pos, neg)
}

fn collect_vars(f: &Formula, out: &mut BTreeSet<usize>) {
    match f {
        Formula::True | Formula::False => {}
        Formula::Var(id) => {
            out.insert(*id);
        }
        Formula::Not(inner) => collect_vars(inner, out),
        Formula::And(items) | Formula::Or(items) => {
            for item in items {
                collect_vars(item, out);
            }
        }
        Formula::Implies(a, b) | Formula::Iff(a, b) => {
            collect_vars(a, out);
            collect_vars(b, out);
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

struct Component {
    vars: Vec<usize>,
    formulas: Vec<usize>,
}

fn components(n_vars: usize, formula_vars: &[BTreeSet<usize>]) -> Vec<Component> {
    let mut uf = UnionFind::new(n_vars);
    for vars in formula_vars {
        let mut iter = vars.iter();
        if let Some(&first) = iter.next() {
            for &v in iter {
                uf.union(first, v);
            }
        }
    }
    let mut comps: std::collections::BTreeMap<usize, Component> = Default::default();
    for v in 0..n_vars {
        let root = uf.find(v);
        comps
            .entry(root)
            .or_insert_with(|| Component {
                vars: Vec::new(),
                formulas: Vec::new(),
            })
            .vars
            .push(v);
    }
    for (fi, vars) in formula_vars.iter().enumerate() {
        if let Some(&first) = vars.iter().next() {
            let root = uf.find(first);
            comps.get_mut(&root).expect("component exists").formulas.push(fi);
        }
    }
    comps.into_values().collect()
}

fn count_violations(formulas: &[&Formula], assignment: &[bool]) -> usize {
    formulas
        .iter()
        .filter(|f| !f.evaluate(assignment).unwrap_or(false))
        .count()
}

fn objective_over(vars: &[usize], assignment: &[bool], pos: &[f64], neg: &[f64]) -> f64 {
    vars.iter()
        .map(|&v| if assignment[v] { pos[v] } else { neg[v] })
        .sum()
}

/// Exact search over one component: lexicographic enumeration keeps the
/// first of any tied optima, so false is preferred at the earliest
/// differing variable.
fn solve_component_exact(
    comp: &Component,
    hard: &[Formula],
    pos: &[f64],
    neg: &[f64],
    assignment: &mut [bool],
) -> usize {
    let k = comp.vars.len();
    let formulas: Vec<&Formula> = comp.formulas.iter().map(|&i| &hard[i]).collect();
    let mut best_bits = 0u64;
    let mut best: Option<(usize, f64)> = None;
    for bits in 0u64..(1u64 << k) {
        for (j, &v) in comp.vars.iter().enumerate() {
            assignment[v] = (bits >> (k - 1 - j)) & 1 == 1;
        }
        let violations = count_violations(&formulas, assignment);
        let objective = objective_over(&comp.vars, assignment, pos, neg);
        let better = match best {
            None => true,
            Some((bv, bo)) => violations < bv || (violations == bv && objective > bo),
        };
        if better {
            best = Some((violations, objective));
            best_bits = bits;
        }
    }
    for (j, &v) in comp.vars.iter().enumerate() {
        assignment[v] = (best_bits >> (k - 1 - j)) & 1 == 1;
    }
    best.map(|(v, _)| v).unwrap_or(0)
}

/// Greedy repair for oversize components: start from thresholded beliefs
/// and flip the variable that best reduces (violations, −objective) until
/// no flip improves.
fn solve_component_greedy(
    comp: &Component,
    hard: &[Formula],
    pos: &[f64],
    neg: &[f64],
    beliefs: &[f64],
    assignment: &mut [bool],
) -> usize {
    for &v in &comp.vars {
        assignment[v] = beliefs[v] > 0.5;
    }
    let formulas: Vec<&Formula> = comp.formulas.iter().map(|&i| &hard[i]).collect();
    let max_rounds = 4 * comp.vars.len().max(1) * formulas.len().max(1);
    let mut current = (
        count_violations(&formulas, assignment),
        objective_over(&comp.vars, assignment, pos, neg),
    );
    for _ in 0..max_rounds {
        if current.0 == 0 {
            break;
        }
        let mut best_flip: Option<(usize, (usize, f64))> = None;
        for &v in &comp.vars {
            assignment[v] = !assignment[v];
            let candidate = (
                count_violations(&formulas, assignment),
                objective_over(&comp.vars, assignment, pos, neg),
            );
            assignment[v] = !assignment[v];
            let better_than_best = match &best_flip {
                None => true,
                Some((_, (bv, bo))) => {
                    candidate.0 < *bv || (candidate.0 == *bv && candidate.1 > *bo)
                }
            };
            if better_than_best {
                best_flip = Some((v, candidate));
            }
        }
        match best_flip {
            Some((v, score))
                if score.0 < current.0 || (score.0 == current.0 && score.1 > current.1) =>
            {
                assignment[v] = !assignment[v];
                current = score;
            }
            _ => break, // local optimum
        }
    }
    current.0
}

/// Solves the correction instance. Components larger than
/// [`EXACT_MAX_VARS`] fall back to greedy repair and clear the `exact`
/// flag.
pub fn correct_beliefs(problem: &CorrectionProblem) -> Result<CorrectionOutcome, MaxSatError> {
    let n = problem.variables.len();
    if problem.beliefs.len() != n {
        return Err(MaxSatError::BeliefLength {
            expected: n,
            got: problem.beliefs.len(),
        });
    }
    let mut formula_vars = Vec::with_capacity(problem.hard.len());
    for f in &problem.hard {
        let mut vars = BTreeSet::new();
        collect_vars(f, &mut vars);
        if let Some(&max) = vars.iter().next_back() {
            if max >= n {
                return Err(MaxSatError::BadVariable { var: max, n });
            }
        }
        formula_vars.push(vars);
    }
    let (pos, neg) = log_weights(&problem.beliefs);
    let mut assignment = vec![false; n];
    let mut violated = 0;
    let mut exact = true;
    for comp in components(n, &formula_vars) {
        if comp.vars.len() <= EXACT_MAX_VARS {
            violated += solve_component_exact(&comp, &problem.hard, &pos, &neg, &mut assignment);
        } else {
            exact = false;
            violated += solve_component_greedy(
                &comp,
                &problem.hard,
                &pos,
                &neg,
                &problem.beliefs,
                &mut assignment,
            );
        }
    }
    Ok(CorrectionOutcome {
        assignment,
        violated,
        exact,
    })
}

/// Assembles a subject's correction instance from its grounded constraints
/// (grounded without evidence) and a belief source. Variables are the
/// subject's facts occurring in any grounded constraint; hard formulas are
/// the grounded constraints whose variables are all known facts.
pub fn build_correction_problem<M: BeliefSource>(
    subject: &str,
    facts: &FactSet,
    grounded: &GroundedConstraintSet,
    model: &M,
) -> Result<CorrectionProblem, MaxSatError> {
    let fact_props: BTreeSet<&str> = facts.facts_of(subject).map(|f| f.property.as_str()).collect();
    let mut mentioned: BTreeSet<&str> = BTreeSet::new();
    for g in grounded.iter().filter(|g| g.subject == subject) {
        for prop in &g.vars {
            if fact_props.contains(prop.as_str()) {
                mentioned.insert(prop.as_str());
            }
        }
    }
    let variables: Vec<String> = mentioned.iter().map(|p| p.to_string()).collect();
    let index: std::collections::BTreeMap<&str, usize> = variables
        .iter()
        .enumerate()
        .map(|(i, p)| (p.as_str(), i))
        .collect();
    let mut hard = Vec::new();
    for g in grounded.iter().filter(|g| g.subject == subject) {
        let mapping: Option<Vec<usize>> = g
            .vars
            .iter()
            .map(|p| index.get(p.as_str()).copied())
            .collect();
        if let Some(mapping) = mapping {
            hard.push(remap(&g.formula, &mapping));
        }
    }
    let beliefs: Result<Vec<f64>, BeliefError> = variables
        .iter()
        .map(|p| model.belief(subject, p))
        .collect();
    Ok(CorrectionProblem {
        subject: subject.to_string(),
        variables,
        beliefs: beliefs?,
        hard,
    })
}

fn remap(f: &Formula, mapping: &[usize]) -> Formula {
    match f {
        Formula::True => Formula::True,
        Formula::False => Formula::False,
        Formula::Var(id) => Formula::Var(mapping[*id]),
        Formula::Not(inner) => Formula::not(remap(inner, mapping)),
        Formula::And(items) => Formula::And(items.iter().map(|i| remap(i, mapping)).collect()),
        Formula::Or(items) => Formula::Or(items.iter().map(|i| remap(i, mapping)).collect()),
        Formula::Implies(a, b) => Formula::implies(remap(a, mapping), remap(b, mapping)),
        Formula::Iff(a, b) => Formula::iff(remap(a, mapping), remap(b, mapping)),
    }
}
