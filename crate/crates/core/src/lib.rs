//! Training and evaluation engine for belief models under propositional
//! constraints.
//!
//! The pipeline: parse facts and property-level implications ([`kb`]),
//! ground the implications per subject with known facts conjoined as
//! evidence ([`kb::ground_constraints`]), score constraint satisfaction
//! exactly under the model's independent truth beliefs ([`semloss`]), and
//! minimize the negative log of that probability ([`training`]).
//! Factuality (F1) and logical self-consistency reports live in
//! [`evaluation`]; [`maxsat`] provides an inference-time correction
//! baseline that fixes assignments instead of the model.

pub mod belief;
pub mod evaluation;
pub mod formula;
pub mod kb;
pub mod maxsat;
pub mod semloss;
pub mod synth;
pub mod training;

pub use belief::{
    BeliefError, BeliefSource, EmbeddingBeliefModel, ParamBeliefModel, PhrasingTable,
    QueryTemplate, SavedModel, TabularBeliefModel,
};
pub use evaluation::{
    evaluate_report, logical_consistency, predict_truth, similarity_matrix, Report, TruthPredictor,
};
pub use formula::{parse_formula, print_formula, Assignment, Formula, FormulaError, VarTable};
pub use kb::{
    ground_constraints, parse_constraints, parse_facts, sample_fraction, split_t1_t2,
    ConstraintSet, Fact, FactSet, GeneralConstraint, GroundedConstraint, GroundedConstraintSet,
    KbError, Literal,
};
pub use maxsat::{build_correction_problem, correct_beliefs, CorrectionOutcome, CorrectionProblem};
pub use semloss::{constraint_probability, semantic_loss, BeliefVector, LossResult, SemLossError};
pub use training::{loco_loss, sft_loss, train, Objective, TrainConfig, TrainError, TrainHistory};
