//! Property-based invariants across the formula, counting, grounding, and
//! correction layers.

use proptest::prelude::*;

use loco_core::evaluation::{logical_consistency, OverlayPredictor, TruthPredictor};
use loco_core::formula::{parse_formula, print_formula, Formula, VarTable};
use loco_core::kb::{
    ground_constraints, parse_constraints, parse_facts, sample_fraction, split_t1_t2,
    write_constraints_canonical, write_facts_canonical, ConstraintSet, Fact, FactSet,
    GeneralConstraint, Literal,
};
use loco_core::maxsat::{correct_beliefs, CorrectionProblem};
use loco_core::semloss::{constraint_probability, semantic_loss, BeliefVector};

const N_VARS: usize = 4;

fn formula_strategy(n_vars: usize) -> impl Strategy<Value = Formula> {
    let leaf = prop_oneof![
        4 => (0..n_vars).prop_map(Formula::Var),
        1 => Just(Formula::True),
        1 => Just(Formula::False),
    ];
    leaf.prop_recursive(3, 24, 3, |inner| {
        prop_oneof![
            inner.clone().prop_map(Formula::not),
            prop::collection::vec(inner.clone(), 2..4).prop_map(Formula::And),
            prop::collection::vec(inner.clone(), 2..4).prop_map(Formula::Or),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Formula::implies(a, b)),
            (inner.clone(), inner).prop_map(|(a, b)| Formula::iff(a, b)),
        ]
    })
}

fn beliefs_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..0.99, n)
}

fn probability_or_zero(f: &Formula, beliefs: &BeliefVector) -> f64 {
    constraint_probability(f, beliefs).unwrap_or(0.0)
}

proptest! {
    #[test]
    fn model_counts_of_f_and_not_f_partition_the_cube(f in formula_strategy(N_VARS)) {
        let sat = f.satisfying_assignments(N_VARS).unwrap().len();
        let unsat = Formula::not(f).satisfying_assignments(N_VARS).unwrap().len();
        prop_assert_eq!(sat + unsat, 1 << N_VARS);
    }

    #[test]
    fn evaluate_agrees_with_enumeration(f in formula_strategy(N_VARS)) {
        let models = f.satisfying_assignments(N_VARS).unwrap();
        let mut assignment = vec![false; N_VARS];
        for bits in 0u32..(1 << N_VARS) {
            for (j, slot) in assignment.iter_mut().enumerate() {
                *slot = (bits >> (N_VARS - 1 - j)) & 1 == 1;
            }
            let evaluates = f.evaluate(&assignment).unwrap();
            prop_assert_eq!(evaluates, models.contains(&assignment));
        }
    }

    #[test]
    fn print_parse_round_trips(f in formula_strategy(N_VARS)) {
        let table: VarTable = (0..N_VARS).map(|i| format!("x{i}")).collect();
        let printed = print_formula(&f, &table);
        let mut fresh = VarTable::new();
        let reparsed = parse_formula(&printed, &mut fresh).unwrap();
        // Re-map the fresh table's first-occurrence ids back to x{i} order.
        let mapping: Vec<usize> = fresh
            .names()
            .map(|name| name[1..].parse::<usize>().unwrap())
            .collect();
        let remapped = remap(&reparsed, &mapping);
        prop_assert_eq!(remapped, f, "printed: {}", printed);
    }

    #[test]
    fn complementary_probabilities_sum_to_one(
        f in formula_strategy(N_VARS),
        probs in beliefs_strategy(N_VARS),
    ) {
        let beliefs = BeliefVector::new(probs);
        let p = probability_or_zero(&f, &beliefs);
        let q = probability_or_zero(&Formula::not(f), &beliefs);
        prop_assert!((p + q - 1.0).abs() <= 1e-12, "p {p} q {q}");
    }

    #[test]
    fn implication_probability_matches_closed_form(
        pa in 0.01f64..0.99,
        pb in 0.01f64..0.99,
    ) {
        let f = Formula::implies(Formula::Var(0), Formula::Var(1));
        let beliefs = BeliefVector::new(vec![pa, pb]);
        let enumerated = constraint_probability(&f, &beliefs).unwrap();
        let closed = 1.0 - pa * (1.0 - pb);
        prop_assert!((enumerated - closed).abs() <= 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences(
        f in formula_strategy(N_VARS),
        probs in beliefs_strategy(N_VARS),
    ) {
        let beliefs = BeliefVector::new(probs.clone());
        let Ok(result) = semantic_loss(&f, &beliefs) else {
            return Ok(()); // unsatisfiable: excluded upstream
        };
        let h = 1e-6;
        for j in 0..N_VARS {
            let mut plus = probs.clone();
            plus[j] = (plus[j] + h).min(1.0 - 1e-7);
            let mut minus = probs.clone();
            minus[j] = (minus[j] - h).max(1e-7);
            let lp = semantic_loss(&f, &BeliefVector::new(plus.clone())).unwrap().loss;
            let lm = semantic_loss(&f, &BeliefVector::new(minus.clone())).unwrap().loss;
            let numeric = (lp - lm) / (plus[j] - minus[j]);
            let analytic = result.gradient[j];
            let diff = (numeric - analytic).abs();
            let denom = numeric.abs().max(analytic.abs());
            prop_assert!(
                diff <= 1e-8 || diff / denom <= 1e-4,
                "var {j}: numeric {numeric} analytic {analytic}"
            );
        }
    }

    #[test]
    fn loss_is_invariant_under_variable_reordering(
        f in formula_strategy(N_VARS),
        probs in beliefs_strategy(N_VARS),
        perm_seed in 0usize..24,
    ) {
        let beliefs = BeliefVector::new(probs.clone());
        let Ok(base) = semantic_loss(&f, &beliefs) else { return Ok(()); };
        let perm = permutation(N_VARS, perm_seed);
        let renamed = remap(&f, &perm);
        let mut permuted = vec![0.0; N_VARS];
        for (old, &new) in perm.iter().enumerate() {
            permuted[new] = probs[old];
        }
        let permuted_result = semantic_loss(&renamed, &BeliefVector::new(permuted)).unwrap();
        prop_assert!((base.loss - permuted_result.loss).abs() <= 1e-12);
    }

    #[test]
    fn loss_is_invariant_under_implies_rewrite(
        f in formula_strategy(N_VARS),
        probs in beliefs_strategy(N_VARS),
    ) {
        let beliefs = BeliefVector::new(probs);
        let rewritten = rewrite_implies(&f);
        match (semantic_loss(&f, &beliefs), semantic_loss(&rewritten, &beliefs)) {
            (Ok(a), Ok(b)) => prop_assert!((a.loss - b.loss).abs() <= 1e-12),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "satisfiability mismatch: {a:?} vs {b:?}"),
        }
    }
}

fn permutation(n: usize, seed: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut state = seed;
    for i in (1..n).rev() {
        perm.swap(i, state % (i + 1));
        state = state / (i + 1) + 7;
    }
    perm
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

fn rewrite_implies(f: &Formula) -> Formula {
    match f {
        Formula::True => Formula::True,
        Formula::False => Formula::False,
        Formula::Var(id) => Formula::Var(*id),
        Formula::Not(inner) => Formula::not(rewrite_implies(inner)),
        Formula::And(items) => Formula::And(items.iter().map(rewrite_implies).collect()),
        Formula::Or(items) => Formula::Or(items.iter().map(rewrite_implies).collect()),
        Formula::Implies(a, b) => Formula::Or(vec![
            Formula::not(rewrite_implies(a)),
            rewrite_implies(b),
        ]),
        Formula::Iff(a, b) => Formula::iff(rewrite_implies(a), rewrite_implies(b)),
    }
}

// ---------------------------------------------------------------------------
// KB invariants
// ---------------------------------------------------------------------------

fn small_kb_strategy() -> impl Strategy<Value = (Vec<Fact>, Vec<GeneralConstraint>)> {
    let subjects = prop::sample::select(vec!["ant", "bee", "cat"]);
    let props = prop::sample::select(vec!["p0", "p1", "p2", "p3", "p4"]);
    let fact = (subjects, props, any::<bool>())
        .prop_map(|(s, p, label)| Fact::new(s, p, Some(label)));
    let constraint = (
        prop::sample::select(vec!["p0", "p1", "p2", "p3", "p4"]),
        prop::sample::select(vec!["p0", "p1", "p2", "p3", "p4"]),
        any::<bool>(),
        any::<bool>(),
    )
        .prop_filter_map("self implication", |(a, b, pa, pb)| {
            (a != b).then(|| GeneralConstraint {
                antecedent: Literal { property: a.to_string(), polarity: pa },
                consequent: Literal { property: b.to_string(), polarity: pb },
                weight: None,
            })
        });
    (
        prop::collection::vec(fact, 0..10),
        prop::collection::vec(constraint, 0..6),
    )
}

fn dedup_facts(mut facts: Vec<Fact>) -> Vec<Fact> {
    facts.sort_by(|a, b| a.key().cmp(&b.key()));
    facts.dedup_by(|a, b| a.key() == b.key());
    facts
}

proptest! {
    #[test]
    fn grounding_is_monotone_in_facts(
        (facts, constraints) in small_kb_strategy(),
        (more, _) in small_kb_strategy(),
    ) {
        let facts = dedup_facts(facts);
        let mut extended = facts.clone();
        extended.extend(more);
        let extended = dedup_facts(extended);

        let constraints = ConstraintSet::from_constraints(constraints).unwrap();
        let base = ground_constraints(&constraints, &FactSet::from_facts(facts).unwrap(), false);
        let bigger =
            ground_constraints(&constraints, &FactSet::from_facts(extended).unwrap(), false);
        let base_keys: std::collections::BTreeSet<(String, usize)> =
            base.iter().map(|g| (g.subject.clone(), g.origin)).collect();
        let bigger_keys: std::collections::BTreeSet<(String, usize)> =
            bigger.iter().map(|g| (g.subject.clone(), g.origin)).collect();
        prop_assert!(base_keys.is_subset(&bigger_keys));
    }

    #[test]
    fn every_grounded_subject_knows_a_constraint_property(
        (facts, constraints) in small_kb_strategy(),
    ) {
        let facts = FactSet::from_facts(dedup_facts(facts)).unwrap();
        let constraints = ConstraintSet::from_constraints(constraints).unwrap();
        let grounded = ground_constraints(&constraints, &facts, true);
        for g in grounded.iter() {
            let origin = constraints.get(g.origin).unwrap();
            let knows = facts.get(&g.subject, &origin.antecedent.property).is_some()
                || facts.get(&g.subject, &origin.consequent.property).is_some();
            prop_assert!(knows, "subject {} grounded without a known fact", g.subject);
        }
    }

    #[test]
    fn split_outputs_are_disjoint_and_contained(
        (facts, constraints) in small_kb_strategy(),
    ) {
        let facts = FactSet::from_facts(dedup_facts(facts)).unwrap();
        let constraints = ConstraintSet::from_constraints(constraints).unwrap();
        let split = split_t1_t2(&facts, &constraints);
        let t1: std::collections::BTreeSet<(String, String)> = split
            .antecedents
            .iter()
            .map(|f| (f.subject.clone(), f.property.clone()))
            .collect();
        let t2: std::collections::BTreeSet<(String, String)> = split
            .consequents
            .iter()
            .map(|f| (f.subject.clone(), f.property.clone()))
            .collect();
        prop_assert!(t1.is_disjoint(&t2));
        prop_assert_eq!(
            split.antecedents.len() + split.consequents.len() + split.unconstrained,
            facts.len()
        );
        for fact in split.antecedents.iter().chain(split.consequents.iter()) {
            prop_assert!(facts.get(&fact.subject, &fact.property).is_some());
        }
    }

    #[test]
    fn canonical_files_round_trip(
        (facts, constraints) in small_kb_strategy(),
    ) {
        let facts = FactSet::from_facts(dedup_facts(facts)).unwrap();
        let constraints = ConstraintSet::from_constraints(constraints).unwrap();
        let facts_again = parse_facts(&write_facts_canonical(&facts)).unwrap();
        prop_assert_eq!(facts_again, facts);
        let constraints_again =
            parse_constraints(&write_constraints_canonical(&constraints)).unwrap();
        prop_assert_eq!(constraints_again, constraints);
    }

    #[test]
    fn fraction_split_partitions_facts(
        (facts, _) in small_kb_strategy(),
        fraction in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let facts = FactSet::from_facts(dedup_facts(facts)).unwrap();
        let (train, held) = sample_fraction(&facts, fraction, seed).unwrap();
        prop_assert_eq!(train.len(), (fraction * facts.len() as f64).floor() as usize);
        prop_assert_eq!(train.len() + held.len(), facts.len());
        for fact in train.iter() {
            prop_assert!(held.get(&fact.subject, &fact.property).is_none());
        }
        let (train2, _) = sample_fraction(&facts, fraction, seed).unwrap();
        prop_assert_eq!(train, train2);
    }
}

// ---------------------------------------------------------------------------
// Correction invariants
// ---------------------------------------------------------------------------

struct AssignmentPredictor {
    variables: Vec<String>,
    values: Vec<bool>,
}

impl TruthPredictor for AssignmentPredictor {
    fn predict(&self, _subject: &str, property: &str) -> Result<bool, loco_core::BeliefError> {
        Ok(self
            .variables
            .iter()
            .position(|p| p == property)
            .map(|i| self.values[i])
            .unwrap_or(false))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corrected_assignments_satisfy_every_satisfiable_instance(
        edges in prop::collection::vec((0usize..8, 0usize..8), 1..10),
        probs in prop::collection::vec(0.05f64..0.95, 8),
    ) {
        // positive implications only: all-true always satisfies
        let hard: Vec<Formula> = edges
            .iter()
            .filter(|(a, b)| a != b)
            .map(|&(a, b)| Formula::implies(Formula::Var(a), Formula::Var(b)))
            .collect();
        prop_assume!(!hard.is_empty());
        let problem = CorrectionProblem {
            subject: "s".into(),
            variables: (0..8).map(|i| format!("p{i}")).collect(),
            beliefs: probs,
            hard: hard.clone(),
        };
        let outcome = correct_beliefs(&problem).unwrap();
        prop_assert_eq!(outcome.violated, 0);
        for f in &hard {
            prop_assert!(f.evaluate(&outcome.assignment).unwrap());
        }

        // post-correction consistency over the corrected assignment is 1.0
        let constraints = ConstraintSet::from_constraints(
            edges
                .iter()
                .filter(|(a, b)| a != b)
                .map(|&(a, b)| GeneralConstraint {
                    antecedent: Literal::positive(format!("p{a}")),
                    consequent: Literal::positive(format!("p{b}")),
                    weight: None,
                })
                .collect(),
        )
        .unwrap();
        let predictor = AssignmentPredictor {
            variables: problem.variables.clone(),
            values: outcome.assignment.clone(),
        };
        let counts = logical_consistency(&predictor, &["s"], &constraints).unwrap();
        prop_assert_eq!(counts.violated, 0);
    }
}

#[test]
fn overlay_predictor_applies_corrections_on_top_of_a_model() {
    use loco_core::belief::TabularBeliefModel;
    let mut model = TabularBeliefModel::new([("s", "a"), ("s", "b")]);
    model.set_logit("s", "a", 3.0);
    model.set_logit("s", "b", -3.0);
    let mut overlay = OverlayPredictor::new(&model);
    overlay.set("s", "b", true);
    assert!(overlay.predict("s", "a").unwrap());
    assert!(overlay.predict("s", "b").unwrap());
}
