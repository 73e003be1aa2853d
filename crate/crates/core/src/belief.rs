//! Belief sources: a tabular model (one logit per fact), an embedding model
//! that generalizes to unseen (subject, property) pairs, and prompt
//! rendering for the external belief-provider protocol.

pub mod provider;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::Fact;

/// Default embedding dimension.
pub const DEFAULT_DIM: usize = 32;
/// Standard deviation of the embedding initialization.
pub const INIT_STDDEV: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum BeliefError {
    #[error("fact ({subject}, {property}) is not registered in the tabular model")]
    UnregisteredFact { subject: String, property: String },
    #[error("subject '{0}' has no embedding")]
    UnknownSubject(String),
    #[error("property '{0}' has no embedding")]
    UnknownProperty(String),
    #[error("invalid query template: {0}")]
    BadTemplate(String),
    #[error("provider transport failure for fact {fact}: {message}")]
    Transport { fact: String, message: String },
    #[error("provider timed out answering fact {fact}")]
    Timeout { fact: String },
    #[error("provider returned non-positive likelihoods for fact {fact}")]
    NonPositiveLikelihoods { fact: String },
    #[error("provider protocol error: {0}")]
    Protocol(String),
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Box–Muller standard normal draw; two uniforms per sample keeps the
/// stream layout simple and reproducible.
fn sample_normal(rng: &mut ChaCha12Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Anything that can score a fact with a truth probability in (0, 1).
pub trait BeliefSource {
    fn belief(&self, subject: &str, property: &str) -> Result<f64, BeliefError>;

    fn belief_of(&self, fact: &Fact) -> Result<f64, BeliefError> {
        self.belief(&fact.subject, &fact.property)
    }
}

/// A belief source backed by a flat parameter vector, trainable by the
/// optimization loop through sparse logit gradients.
pub trait ParamBeliefModel: BeliefSource {
    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    /// Appends the sparse `∂logit/∂param` entries for the fact's logit.
    fn logit_gradient(
        &self,
        subject: &str,
        property: &str,
        out: &mut Vec<(usize, f64)>,
    ) -> Result<(), BeliefError>;
}

/// Chain rule from a loss derivative in probability space into parameter
/// space: `∂loss/∂θ = dloss_dp · p(1−p) · ∂logit/∂θ`.
pub fn parameter_gradient(
    model: &impl ParamBeliefModel,
    subject: &str,
    property: &str,
    dloss_dp: f64,
) -> Result<Vec<(usize, f64)>, BeliefError> {
    let p = model.belief(subject, property)?;
    let factor = dloss_dp * p * (1.0 - p);
    let mut entries = Vec::new();
    model.logit_gradient(subject, property, &mut entries)?;
    for (_, g) in &mut entries {
        *g *= factor;
    }
    Ok(entries)
}

// ---------------------------------------------------------------------------
// Tabular model
// ---------------------------------------------------------------------------

/// One logit per registered fact; probability through the logistic link.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularBeliefModel {
    index: BTreeMap<(String, String), usize>,
    logits: Vec<f64>,
}

impl TabularBeliefModel {
    /// Registers every (subject, property) pair with logit 0 (belief 0.5).
    pub fn new<'a>(facts: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut index = BTreeMap::new();
        for (subject, property) in facts {
            let next = index.len();
            index
                .entry((subject.to_string(), property.to_string()))
                .or_insert(next);
        }
        let logits = vec![0.0; index.len()];
        Self { index, logits }
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn logit(&self, subject: &str, property: &str) -> Option<f64> {
        self.index
            .get(&(subject.to_string(), property.to_string()))
            .map(|&i| self.logits[i])
    }

    pub fn set_logit(&mut self, subject: &str, property: &str, value: f64) -> bool {
        if let Some(&i) = self.index.get(&(subject.to_string(), property.to_string())) {
            self.logits[i] = value;
            true
        } else {
            false
        }
    }

    fn slot(&self, subject: &str, property: &str) -> Result<usize, BeliefError> {
        self.index
            .get(&(subject.to_string(), property.to_string()))
            .copied()
            .ok_or_else(|| BeliefError::UnregisteredFact {
                subject: subject.to_string(),
                property: property.to_string(),
            })
    }
}

impl BeliefSource for TabularBeliefModel {
    fn belief(&self, subject: &str, property: &str) -> Result<f64, BeliefError> {
        Ok(logistic(self.logits[self.slot(subject, property)?]))
    }
}

impl ParamBeliefModel for TabularBeliefModel {
    fn params(&self) -> &[f64] {
        &self.logits
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    fn logit_gradient(
        &self,
        subject: &str,
        property: &str,
        out: &mut Vec<(usize, f64)>,
    ) -> Result<(), BeliefError> {
        out.push((self.slot(subject, property)?, 1.0));
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Embedding model
// ---------------------------------------------------------------------------

/// Logistic link over `u_s · v_p + b_p + c` with subject vectors `u`,
/// property vectors `v`, property biases `b`, and a global bias `c`.
/// Parameters are packed as `[u | v | b | c]` in one flat vector;
/// initialization is deterministic given the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBeliefModel {
    dim: usize,
    seed: u64,
    subjects: BTreeMap<String, usize>,
    properties: BTreeMap<String, usize>,
    params: Vec<f64>,
}

impl EmbeddingBeliefModel {
    pub fn new<S: AsRef<str>, P: AsRef<str>>(
        subjects: impl IntoIterator<Item = S>,
        properties: impl IntoIterator<Item = P>,
        dim: usize,
        seed: u64,
    ) -> Self {
        let subjects: BTreeMap<String, usize> = subjects
            .into_iter()
            .map(|s| s.as_ref().to_string())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(i, s)| (s, i))
            .collect();
        let properties: BTreeMap<String, usize> = properties
            .into_iter()
            .map(|p| p.as_ref().to_string())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(i, p)| (p, i))
            .collect();
        let n_vec = (subjects.len() + properties.len()) * dim;
        let n_total = n_vec + properties.len() + 1;
        let mut params = vec![0.0; n_total];
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        for slot in params.iter_mut().take(n_vec) {
            *slot = INIT_STDDEV * sample_normal(&mut rng);
        }
        Self {
            dim,
            seed,
            subjects,
            properties,
            params,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn subject_names(&self) -> impl Iterator<Item = &str> {
        self.subjects.keys().map(|s| s.as_str())
    }

    fn subject_offset(&self, subject: &str) -> Result<usize, BeliefError> {
        self.subjects
            .get(subject)
            .map(|&i| i * self.dim)
            .ok_or_else(|| BeliefError::UnknownSubject(subject.to_string()))
    }

    fn property_offset(&self, property: &str) -> Result<usize, BeliefError> {
        self.properties
            .get(property)
            .map(|&i| (self.subjects.len() + i) * self.dim)
            .ok_or_else(|| BeliefError::UnknownProperty(property.to_string()))
    }

    fn property_bias_slot(&self, property: &str) -> Result<usize, BeliefError> {
        self.properties
            .get(property)
            .map(|&i| (self.subjects.len() + self.properties.len()) * self.dim + i)
            .ok_or_else(|| BeliefError::UnknownProperty(property.to_string()))
    }

    fn global_bias_slot(&self) -> usize {
        self.params.len() - 1
    }

    pub fn subject_vector(&self, subject: &str) -> Result<&[f64], BeliefError> {
        let off = self.subject_offset(subject)?;
        Ok(&self.params[off..off + self.dim])
    }

    pub fn logit(&self, subject: &str, property: &str) -> Result<f64, BeliefError> {
        let s_off = self.subject_offset(subject)?;
        let p_off = self.property_offset(property)?;
        let mut dot = 0.0;
        for k in 0..self.dim {
            dot += self.params[s_off + k] * self.params[p_off + k];
        }
        Ok(dot + self.params[self.property_bias_slot(property)?] + self.params[self.global_bias_slot()])
    }
}

impl BeliefSource for EmbeddingBeliefModel {
    fn belief(&self, subject: &str, property: &str) -> Result<f64, BeliefError> {
        Ok(logistic(self.logit(subject, property)?))
    }
}

impl ParamBeliefModel for EmbeddingBeliefModel {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn logit_gradient(
        &self,
        subject: &str,
        property: &str,
        out: &mut Vec<(usize, f64)>,
    ) -> Result<(), BeliefError> {
        let s_off = self.subject_offset(subject)?;
        let p_off = self.property_offset(property)?;
        for k in 0..self.dim {
            out.push((s_off + k, self.params[p_off + k]));
        }
        for k in 0..self.dim {
            out.push((p_off + k, self.params[s_off + k]));
        }
        out.push((self.property_bias_slot(property)?, 1.0));
        out.push((self.global_bias_slot(), 1.0));
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Model serialization
// ---------------------------------------------------------------------------

/// On-disk form of a trained surrogate model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SavedModel {
    Tabular {
        facts: Vec<(String, String)>,
        logits: Vec<f64>,
    },
    Embedding {
        dim: usize,
        seed: u64,
        subjects: Vec<String>,
        properties: Vec<String>,
        params: Vec<f64>,
    },
}

impl From<&TabularBeliefModel> for SavedModel {
    fn from(model: &TabularBeliefModel) -> Self {
        let mut facts = vec![(String::new(), String::new()); model.len()];
        for ((s, p), &i) in &model.index {
            facts[i] = (s.clone(), p.clone());
        }
        SavedModel::Tabular {
            facts,
            logits: model.logits.clone(),
        }
    }
}

impl From<&EmbeddingBeliefModel> for SavedModel {
    fn from(model: &EmbeddingBeliefModel) -> Self {
        let mut subjects = vec![String::new(); model.subjects.len()];
        for (s, &i) in &model.subjects {
            subjects[i] = s.clone();
        }
        let mut properties = vec![String::new(); model.properties.len()];
        for (p, &i) in &model.properties {
            properties[i] = p.clone();
        }
        SavedModel::Embedding {
            dim: model.dim,
            seed: model.seed,
            subjects,
            properties,
            params: model.params.clone(),
        }
    }
}

impl SavedModel {
    pub fn into_tabular(self) -> Option<TabularBeliefModel> {
        match self {
            SavedModel::Tabular { facts, logits } => {
                let index = facts
                    .into_iter()
                    .enumerate()
                    .map(|(i, key)| (key, i))
                    .collect();
                Some(TabularBeliefModel { index, logits })
            }
            _ => None,
        }
    }

    pub fn into_embedding(self) -> Option<EmbeddingBeliefModel> {
        match self {
            SavedModel::Embedding {
                dim,
                seed,
                subjects,
                properties,
                params,
            } => Some(EmbeddingBeliefModel {
                dim,
                seed,
                subjects: subjects.into_iter().enumerate().map(|(i, s)| (s, i)).collect(),
                properties: properties
                    .into_iter()
                    .enumerate()
                    .map(|(i, p)| (p, i))
                    .collect(),
                params,
            }),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Query rendering
// ---------------------------------------------------------------------------

/// Prompt scaffold with subject and property slots and the two answer
/// tokens whose likelihoods the provider reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTemplate {
    pattern: String,
    yes_token: String,
    no_token: String,
}

impl QueryTemplate {
    pub fn new(
        pattern: impl Into<String>,
        yes_token: impl Into<String>,
        no_token: impl Into<String>,
    ) -> Result<Self, BeliefError> {
        let pattern = pattern.into();
        for slot in ["{subject}", "{property}"] {
            if pattern.matches(slot).count() != 1 {
                return Err(BeliefError::BadTemplate(format!(
                    "pattern must contain {slot} exactly once"
                )));
            }
        }
        Ok(Self {
            pattern,
            yes_token: yes_token.into(),
            no_token: no_token.into(),
        })
    }

    /// The fixed multiple-choice yes/no scaffold.
    pub fn default_yes_no() -> Self {
        Self::new(
            "$answer$ ; $mcoptions$ = (A) Yes. (B) No. ; $question$ = {subject} {property}?",
            "Yes.",
            "No.",
        )
        .expect("default template is well-formed")
    }

    pub fn yes_token(&self) -> &str {
        &self.yes_token
    }

    pub fn no_token(&self) -> &str {
        &self.no_token
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PhraseRule {
    subject: String,
    property: String,
    #[serde(default)]
    article: bool,
}

/// Property-specific natural-language phrasing, keyed by the full property
/// or its relation prefix (the part before the first comma).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhrasingTable {
    rules: BTreeMap<String, PhraseRule>,
    default: PhraseRule,
}

const DEFAULT_PHRASING: &str = include_str!("../assets/phrasing.json");

impl Default for PhrasingTable {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_PHRASING).expect("bundled phrasing table is valid")
    }
}

impl PhrasingTable {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    fn rule_for(&self, property: &str) -> &PhraseRule {
        if let Some(rule) = self.rules.get(property) {
            return rule;
        }
        let relation = property.split(',').next().unwrap_or(property);
        self.rules.get(relation).unwrap_or(&self.default)
    }
}

fn with_article(word: &str) -> String {
    match word.chars().next() {
        Some(c) if "aeiouAEIOU".contains(c) => format!("an {word}"),
        Some(_) => format!("a {word}"),
        None => String::new(),
    }
}

fn naturalize(text: &str) -> String {
    text.replace('_', " ")
}

/// Fills the template's subject slot with the question prefix (containing
/// the subject) and the property slot with the property phrase, both drawn
/// from the phrasing table. Deterministic.
pub fn render_query(fact: &Fact, template: &QueryTemplate, phrasing: &PhrasingTable) -> String {
    let rule = phrasing.rule_for(&fact.property);
    let subject_text = rule
        .subject
        .replace("{subject}", &with_article(&naturalize(&fact.subject)));
    let arg = fact
        .property
        .split_once(',')
        .map(|(_, a)| naturalize(a))
        .unwrap_or_default();
    let arg = if rule.article { with_article(&arg) } else { arg };
    let property_text = rule.property.replace("{arg}", &arg);
    template
        .pattern
        .replace("{subject}", &subject_text)
        .replace("{property}", &property_text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tabular_logit_zero_is_half() {
        let model = TabularBeliefModel::new([("daffodil", "IsA,flower")]);
        let p = model.belief("daffodil", "IsA,flower").unwrap();
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tabular_logit_ln9_is_point_nine() {
        let mut model = TabularBeliefModel::new([("daffodil", "IsA,flower")]);
        assert!(model.set_logit("daffodil", "IsA,flower", 9.0f64.ln()));
        let p = model.belief("daffodil", "IsA,flower").unwrap();
        assert!((p - 0.9).abs() < 1e-12);
    }

    #[test]
    fn tabular_rejects_unregistered_fact() {
        let model = TabularBeliefModel::new([("daffodil", "IsA,flower")]);
        assert_eq!(
            model.belief("bison", "IsA,flower"),
            Err(BeliefError::UnregisteredFact {
                subject: "bison".into(),
                property: "IsA,flower".into()
            })
        );
    }

    #[test]
    fn embedding_beliefs_strictly_inside_unit_interval() {
        let model = EmbeddingBeliefModel::new(["bison", "daffodil"], ["IsA,flower"], 8, 3);
        for subject in ["bison", "daffodil"] {
            let p = model.belief(subject, "IsA,flower").unwrap();
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn embedding_zero_logit_is_half() {
        let mut model = EmbeddingBeliefModel::new(["s"], ["p"], 4, 3);
        for slot in model.params_mut() {
            *slot = 0.0; // u·v + b_p + c = 0
        }
        let p = model.belief("s", "p").unwrap();
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_property_vector_gives_zero_subject_gradient() {
        let mut model = EmbeddingBeliefModel::new(["s"], ["p"], 4, 3);
        let dim = model.dim();
        // property vector lives after the subject block
        for k in dim..2 * dim {
            model.params_mut()[k] = 0.0;
        }
        let grad = parameter_gradient(&model, "s", "p", 1.0).unwrap();
        // first `dim` entries are ∂/∂u_s = factor · v_p = 0
        for &(idx, g) in grad.iter().take(dim) {
            assert!(idx < dim);
            assert_eq!(g, 0.0);
        }
    }

    #[test]
    fn embedding_initialization_is_seed_deterministic() {
        let a = EmbeddingBeliefModel::new(["s1", "s2"], ["p1", "p2"], 16, 42);
        let b = EmbeddingBeliefModel::new(["s1", "s2"], ["p1", "p2"], 16, 42);
        assert_eq!(a.params(), b.params());
        let c = EmbeddingBeliefModel::new(["s1", "s2"], ["p1", "p2"], 16, 43);
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn embedding_biases_start_at_zero() {
        let model = EmbeddingBeliefModel::new(["s"], ["p"], 4, 1);
        let n = model.params().len();
        // last property-count + 1 entries are biases
        assert_eq!(model.params()[n - 1], 0.0);
        assert_eq!(model.params()[n - 2], 0.0);
    }

    #[test]
    fn parameter_gradient_chains_through_logistic() {
        let model = TabularBeliefModel::new([("s", "p")]);
        // p = 0.5, dloss_dp = -2/3 -> logit gradient -1/6
        let grad = parameter_gradient(&model, "s", "p", -2.0 / 3.0).unwrap();
        assert_eq!(grad.len(), 1);
        assert!((grad[0].1 + 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn zero_loss_derivative_gives_zero_delta() {
        let model = EmbeddingBeliefModel::new(["s"], ["p"], 4, 1);
        let grad = parameter_gradient(&model, "s", "p", 0.0).unwrap();
        assert!(grad.iter().all(|(_, g)| *g == 0.0));
    }

    #[test]
    fn embedding_gradient_matches_finite_differences() {
        let mut model = EmbeddingBeliefModel::new(["s1", "s2"], ["p1", "p2"], 6, 9);
        let dloss_dp = 1.7;
        let analytic = parameter_gradient(&model, "s1", "p2", dloss_dp).unwrap();
        let h = 1e-6;
        for (idx, g) in analytic {
            let orig = model.params()[idx];
            model.params_mut()[idx] = orig + h;
            let lp = dloss_dp * model.belief("s1", "p2").unwrap();
            model.params_mut()[idx] = orig - h;
            let lm = dloss_dp * model.belief("s1", "p2").unwrap();
            model.params_mut()[idx] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            let denom = numeric.abs().max(g.abs()).max(1e-8);
            assert!(
                (numeric - g).abs() / denom < 1e-4,
                "param {idx}: analytic {g} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn saved_model_round_trips() {
        let mut tabular = TabularBeliefModel::new([("s", "p"), ("s", "q")]);
        tabular.set_logit("s", "q", 1.25);
        let json = serde_json::to_string(&SavedModel::from(&tabular)).unwrap();
        let loaded: SavedModel = serde_json::from_str(&json).unwrap();
        assert_eq!(loaded.into_tabular().unwrap(), tabular);

        let embedding = EmbeddingBeliefModel::new(["s"], ["p"], 4, 5);
        let json = serde_json::to_string(&SavedModel::from(&embedding)).unwrap();
        let loaded: SavedModel = serde_json::from_str(&json).unwrap();
        assert_eq!(loaded.into_embedding().unwrap(), embedding);
    }

    #[test]
    fn renders_is_a_question() {
        let fact = Fact::new("daffodil", "IsA,flower", None);
        let query = render_query(&fact, &QueryTemplate::default_yes_no(), &PhrasingTable::default());
        assert!(query.contains("Is a daffodil a flower?"), "{query}");
        assert!(query.starts_with("$answer$ ; $mcoptions$ = (A) Yes. (B) No."));
    }

    #[test]
    fn renders_property_specific_phrasing() {
        let fact = Fact::new("daffodil", "CanFly", None);
        let query = render_query(&fact, &QueryTemplate::default_yes_no(), &PhrasingTable::default());
        assert!(query.contains("Is it true that a daffodil can fly?"), "{query}");
        let fact = Fact::new("albatross", "CapableOf,fly", None);
        let query = render_query(&fact, &QueryTemplate::default_yes_no(), &PhrasingTable::default());
        assert!(query.contains("Is it true that an albatross can fly?"), "{query}");
    }

    #[test]
    fn template_requires_both_slots_exactly_once() {
        assert!(QueryTemplate::new("{subject} only", "Yes.", "No.").is_err());
        assert!(QueryTemplate::new("{subject} {property} {property}", "Y", "N").is_err());
        assert!(QueryTemplate::new("", "Y", "N").is_err());
        assert!(QueryTemplate::new("{subject} {property}", "Y", "N").is_ok());
    }
}
