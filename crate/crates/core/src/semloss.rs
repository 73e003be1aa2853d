//! Exact constraint probability under independent truth beliefs, the
//! semantic loss, and its analytic gradient.
//!
//! The probability of a formula is the weighted model count over its
//! satisfying assignments: each assignment contributes the product of
//! `p_j` for variables set true and `1 - p_j` for variables set false.
//! The loss is the negative log of that probability. Accumulation runs in
//! log-space via log-sum-exp.

use thiserror::Error;

use crate::formula::{Formula, FormulaError};

/// Clamp floor applied to beliefs so the log stays finite.
pub const CLAMP_EPSILON: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum SemLossError {
    #[error("constraint is unsatisfiable; its loss would be infinite")]
    Unsatisfiable,
    #[error(transparent)]
    Formula(#[from] FormulaError),
}

/// Per-variable truth probabilities, clamped into `[ε, 1−ε]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefVector {
    probs: Vec<f64>,
}

impl BeliefVector {
    /// Clamps every entry into `[ε, 1−ε]` with the default ε.
    pub fn new(probs: Vec<f64>) -> Self {
        Self::with_epsilon(probs, CLAMP_EPSILON)
    }

    pub fn with_epsilon(mut probs: Vec<f64>, epsilon: f64) -> Self {
        for p in &mut probs {
            *p = p.clamp(epsilon, 1.0 - epsilon);
        }
        Self { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }
}

/// Probability, loss in nats, and `∂loss/∂p` per variable.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub probability: f64,
    pub loss: f64,
    pub gradient: Vec<f64>,
}

fn log_sum_exp(acc: Option<f64>, term: f64) -> f64 {
    match acc {
        None => term,
        Some(a) => {
            let (hi, lo) = if a >= term { (a, term) } else { (term, a) };
            hi + (lo - hi).exp().ln_1p()
        }
    }
}

struct Enumeration {
    log_prob: f64,
    // log of the conditional sums Σ_{z ⊨ f, z_j = b} Π_{k≠j} w_k(z),
    // i.e. the weighted count with variable j divided out.
    log_cond_true: Vec<Option<f64>>,
    log_cond_false: Vec<Option<f64>>,
}

fn enumerate(formula: &Formula, beliefs: &BeliefVector) -> Result<Enumeration, SemLossError> {
    let n = beliefs.len();
    let models = formula.satisfying_assignments(n)?;
    if models.is_empty() {
        return Err(SemLossError::Unsatisfiable);
    }
    let log_p: Vec<f64> = beliefs.as_slice().iter().map(|p| p.ln()).collect();
    let log_q: Vec<f64> = beliefs.as_slice().iter().map(|p| (1.0 - p).ln()).collect();

    let mut log_prob: Option<f64> = None;
    let mut log_cond_true: Vec<Option<f64>> = vec![None; n];
    let mut log_cond_false: Vec<Option<f64>> = vec![None; n];
    for model in &models {
        let mut log_w = 0.0;
        for j in 0..n {
            log_w += if model[j] { log_p[j] } else { log_q[j] };
        }
        log_prob = Some(log_sum_exp(log_prob, log_w));
        for j in 0..n {
            if model[j] {
                let without_j = log_w - log_p[j];
                log_cond_true[j] = Some(log_sum_exp(log_cond_true[j], without_j));
            } else {
                let without_j = log_w - log_q[j];
                log_cond_false[j] = Some(log_sum_exp(log_cond_false[j], without_j));
            }
        }
    }
    Ok(Enumeration {
        log_prob: log_prob.expect("nonempty model set"),
        log_cond_true,
        log_cond_false,
    })
}

/// Probability that the formula holds under independent per-variable beliefs.
///
/// Errors with [`SemLossError::Unsatisfiable`] when no assignment satisfies
/// the formula.
pub fn constraint_probability(
    formula: &Formula,
    beliefs: &BeliefVector,
) -> Result<f64, SemLossError> {
    Ok(enumerate(formula, beliefs)?.log_prob.exp())
}

/// Semantic loss `−ln P(formula)` with its gradient in probability space.
///
/// `gradient[j] = −(∂P/∂p_j)/P` where `∂P/∂p_j` is the difference of the
/// conditional weighted counts with variable `j` fixed true versus false.
pub fn semantic_loss(formula: &Formula, beliefs: &BeliefVector) -> Result<LossResult, SemLossError> {
    let e = enumerate(formula, beliefs)?;
    let n = beliefs.len();
    let mut gradient = Vec::with_capacity(n);
    for j in 0..n {
        // ∂P/∂p_j = A_j − B_j with A/B the conditional counts; dividing by P
        // in log-space keeps the ratio stable.
        let a = e.log_cond_true[j].map_or(0.0, |la| (la - e.log_prob).exp());
        let b = e.log_cond_false[j].map_or(0.0, |lb| (lb - e.log_prob).exp());
        gradient.push(-(a - b));
    }
    Ok(LossResult {
        probability: e.log_prob.exp(),
        loss: -e.log_prob,
        gradient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::{parse_formula, VarTable};

    fn f(text: &str) -> Formula {
        let mut table = VarTable::new();
        parse_formula(text, &mut table).unwrap()
    }

    /// Independent oracle: direct truth-table sum in plain arithmetic.
    fn brute_force_probability(formula: &Formula, probs: &[f64]) -> f64 {
        let n = probs.len();
        let mut total = 0.0;
        for bits in 0u64..(1u64 << n) {
            let assignment: Vec<bool> =
                (0..n).map(|j| (bits >> (n - 1 - j)) & 1 == 1).collect();
            if formula.evaluate(&assignment).unwrap() {
                let mut w = 1.0;
                for j in 0..n {
                    w *= if assignment[j] { probs[j] } else { 1.0 - probs[j] };
                }
                total += w;
            }
        }
        total
    }

    #[test]
    fn implication_probability_matches_oracle() {
        // 0.9·0.2 + 0.1·0.2 + 0.1·0.8 = 0.28
        let formula = f("a -> b");
        let beliefs = BeliefVector::new(vec![0.9, 0.2]);
        let p = constraint_probability(&formula, &beliefs).unwrap();
        assert!((p - 0.28).abs() < 1e-12, "p = {p}");
        assert!((p - brute_force_probability(&formula, beliefs.as_slice())).abs() < 1e-12);
    }

    #[test]
    fn grounded_implication_probability() {
        // single satisfying assignment (⊤,⊤): 0.9·0.2 = 0.18
        let formula = f("(a -> b) & a");
        let beliefs = BeliefVector::new(vec![0.9, 0.2]);
        let p = constraint_probability(&formula, &beliefs).unwrap();
        assert!((p - 0.18).abs() < 1e-12);
    }

    #[test]
    fn tautology_probability_is_one() {
        let formula = f("a | !a");
        for p in [0.01, 0.5, 0.97] {
            let beliefs = BeliefVector::new(vec![p]);
            let prob = constraint_probability(&formula, &beliefs).unwrap();
            assert!((prob - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unsatisfiable_formula_is_an_error() {
        let formula = f("a & !a");
        let beliefs = BeliefVector::new(vec![0.5]);
        assert_eq!(
            constraint_probability(&formula, &beliefs),
            Err(SemLossError::Unsatisfiable)
        );
    }

    #[test]
    fn loss_of_worked_implication() {
        let formula = f("a -> b");
        let beliefs = BeliefVector::new(vec![0.9, 0.2]);
        let result = semantic_loss(&formula, &beliefs).unwrap();
        assert!((result.loss - (-(0.28f64).ln())).abs() < 1e-12);
        assert!((result.loss - 1.2729656758128876).abs() < 1e-9);
    }

    #[test]
    fn gradient_of_uniform_implication() {
        // P = 0.75, ∂P/∂p_a = −(1−p_b) = −0.5, ∂P/∂p_b = p_a = 0.5
        let formula = f("a -> b");
        let beliefs = BeliefVector::new(vec![0.5, 0.5]);
        let result = semantic_loss(&formula, &beliefs).unwrap();
        assert!((result.loss - (-(0.75f64).ln())).abs() < 1e-12);
        assert!((result.gradient[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((result.gradient[1] + 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn tautology_loss_and_gradient_vanish() {
        let formula = f("a | !a");
        let beliefs = BeliefVector::new(vec![0.37]);
        let result = semantic_loss(&formula, &beliefs).unwrap();
        assert!(result.loss.abs() < 1e-12);
        assert!(result.gradient[0].abs() < 1e-12);
    }

    #[test]
    fn beliefs_are_clamped() {
        let beliefs = BeliefVector::new(vec![0.0, 1.0, 0.5]);
        assert_eq!(beliefs.as_slice()[0], CLAMP_EPSILON);
        assert_eq!(beliefs.as_slice()[1], 1.0 - CLAMP_EPSILON);
        assert_eq!(beliefs.as_slice()[2], 0.5);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let cases = [
            ("a -> b", vec![0.9, 0.2]),
            ("(a -> b) & a", vec![0.7, 0.4]),
            ("(a & b) | (!a & c)", vec![0.3, 0.6, 0.8]),
            ("a <-> (b | !c)", vec![0.25, 0.55, 0.85]),
        ];
        let h = 1e-6;
        for (text, probs) in cases {
            let formula = f(text);
            let beliefs = BeliefVector::new(probs.clone());
            let analytic = semantic_loss(&formula, &beliefs).unwrap().gradient;
            for j in 0..probs.len() {
                let mut plus = probs.clone();
                plus[j] += h;
                let mut minus = probs.clone();
                minus[j] -= h;
                let lp = semantic_loss(&formula, &BeliefVector::new(plus)).unwrap().loss;
                let lm = semantic_loss(&formula, &BeliefVector::new(minus)).unwrap().loss;
                let numeric = (lp - lm) / (2.0 * h);
                let denom = numeric.abs().max(analytic[j].abs()).max(1e-8);
                assert!(
                    (numeric - analytic[j]).abs() / denom < 1e-4,
                    "{text} var {j}: analytic {} vs numeric {numeric}",
                    analytic[j]
                );
            }
        }
    }

    #[test]
    fn complement_probabilities_sum_to_one() {
        let formula = f("(a -> b) & (b -> !c)");
        let beliefs = BeliefVector::new(vec![0.42, 0.77, 0.13]);
        let p = constraint_probability(&formula, &beliefs).unwrap();
        let q = constraint_probability(&Formula::not(formula), &beliefs).unwrap();
        assert!((p + q - 1.0).abs() < 1e-12);
    }
}
