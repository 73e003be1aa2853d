//! Knowledge-base data model: facts, general implication constraints,
//! per-subject grounding with evidence conjunction, and the antecedent /
//! consequent-only fact splits.
//!
//! Two on-disk layouts are understood. The canonical layout is defined by
//! this crate (`{"facts": [...]}` / `{"constraints": [...]}`); a second
//! adapter layout matches the source dataset's shape (facts as
//! `subject -> {property: "yes"|"no"}` maps, constraints as a node/link
//! graph with `yes_yes`-style polarity markers). Parsing auto-detects the
//! layout. All collections iterate in a deterministic order.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formula::{Formula, VarTable};

#[derive(Debug, Error)]
pub enum KbError {
    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("record {locator}: {message}")]
    Record { locator: String, message: String },
    #[error("conflicting labels for fact ({subject}, {property})")]
    ConflictingLabels { subject: String, property: String },
    #[error("constraint {index} implies its own property '{property}'")]
    SelfImplication { index: usize, property: String },
    #[error("unknown polarity marker '{marker}' in record {locator}")]
    UnknownPolarity { marker: String, locator: String },
    #[error("fraction {0} is outside [0, 1]")]
    FractionRange(f64),
}

/// A (subject, property) pair with an optional truth annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fact {
    pub subject: String,
    pub property: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<bool>,
}

impl Fact {
    pub fn new(subject: impl Into<String>, property: impl Into<String>, label: Option<bool>) -> Self {
        Self {
            subject: subject.into(),
            property: property.into(),
            label,
        }
    }

    pub fn key(&self) -> (&str, &str) {
        (&self.subject, &self.property)
    }
}

/// A property occurrence with polarity (`true` = positive).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Literal {
    pub property: String,
    pub polarity: bool,
}

impl Literal {
    pub fn positive(property: impl Into<String>) -> Self {
        Self {
            property: property.into(),
            polarity: true,
        }
    }

    pub fn negative(property: impl Into<String>) -> Self {
        Self {
            property: property.into(),
            polarity: false,
        }
    }
}

/// A property-level implication, instantiated per subject by grounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralConstraint {
    pub antecedent: Literal,
    pub consequent: Literal,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

/// Immutable fact collection with subject and property indices.
/// Iteration order is sorted by subject, then property.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FactSet {
    facts: Vec<Fact>,
    by_subject: BTreeMap<String, Vec<usize>>,
    by_property: BTreeMap<String, Vec<usize>>,
}

impl FactSet {
    /// Builds the set, deduplicating identical records and rejecting
    /// (subject, property) pairs that reappear with a different label.
    pub fn from_facts(mut facts: Vec<Fact>) -> Result<Self, KbError> {
        for fact in &facts {
            if fact.subject.is_empty() || fact.property.is_empty() {
                return Err(KbError::Record {
                    locator: format!("({}, {})", fact.subject, fact.property),
                    message: "subject and property must be non-empty".into(),
                });
            }
        }
        facts.sort_by(|a, b| a.key().cmp(&b.key()));
        let mut deduped: Vec<Fact> = Vec::with_capacity(facts.len());
        for fact in facts {
            if let Some(last) = deduped.last() {
                if last.key() == fact.key() {
                    if last.label != fact.label {
                        return Err(KbError::ConflictingLabels {
                            subject: fact.subject,
                            property: fact.property,
                        });
                    }
                    continue;
                }
            }
            deduped.push(fact);
        }
        let mut by_subject: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut by_property: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, fact) in deduped.iter().enumerate() {
            by_subject.entry(fact.subject.clone()).or_default().push(i);
            by_property.entry(fact.property.clone()).or_default().push(i);
        }
        Ok(Self {
            facts: deduped,
            by_subject,
            by_property,
        })
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Fact> {
        self.facts.iter()
    }

    pub fn subjects(&self) -> impl Iterator<Item = &str> {
        self.by_subject.keys().map(|s| s.as_str())
    }

    pub fn subject_count(&self) -> usize {
        self.by_subject.len()
    }

    pub fn facts_of(&self, subject: &str) -> impl Iterator<Item = &Fact> {
        self.by_subject
            .get(subject)
            .into_iter()
            .flatten()
            .map(move |&i| &self.facts[i])
    }

    pub fn get(&self, subject: &str, property: &str) -> Option<&Fact> {
        self.by_subject.get(subject).and_then(|ids| {
            ids.iter()
                .map(|&i| &self.facts[i])
                .find(|f| f.property == property)
        })
    }

    pub fn properties(&self) -> impl Iterator<Item = &str> {
        self.by_property.keys().map(|s| s.as_str())
    }
}

/// Immutable constraint collection, in document order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintSet {
    constraints: Vec<GeneralConstraint>,
}

impl ConstraintSet {
    pub fn from_constraints(constraints: Vec<GeneralConstraint>) -> Result<Self, KbError> {
        for (index, c) in constraints.iter().enumerate() {
            if c.antecedent.property == c.consequent.property {
                return Err(KbError::SelfImplication {
                    index,
                    property: c.antecedent.property.clone(),
                });
            }
            if c.antecedent.property.is_empty() || c.consequent.property.is_empty() {
                return Err(KbError::Record {
                    locator: format!("constraint {index}"),
                    message: "literal property must be non-empty".into(),
                });
            }
        }
        Ok(Self { constraints })
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &GeneralConstraint> {
        self.constraints.iter()
    }

    pub fn get(&self, index: usize) -> Option<&GeneralConstraint> {
        self.constraints.get(index)
    }

    /// Properties occurring as an antecedent of at least one constraint.
    pub fn antecedent_properties(&self) -> BTreeSet<&str> {
        self.constraints
            .iter()
            .map(|c| c.antecedent.property.as_str())
            .collect()
    }

    /// Properties occurring as a consequent of at least one constraint.
    pub fn consequent_properties(&self) -> BTreeSet<&str> {
        self.constraints
            .iter()
            .map(|c| c.consequent.property.as_str())
            .collect()
    }
}

/// A general constraint instantiated for one subject. Variable 0 is the
/// antecedent property, variable 1 the consequent property; evidence facts
/// are conjoined onto `formula` as unit literals.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundedConstraint {
    pub subject: String,
    /// Property names backing each formula variable.
    pub vars: Vec<String>,
    pub formula: Formula,
    pub evidence: Vec<(Fact, bool)>,
    /// Index of the originating constraint in its [`ConstraintSet`].
    pub origin: usize,
}

/// A grounded constraint dropped because its evidence contradicts it.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedGrounding {
    pub subject: String,
    pub origin: usize,
}

/// Grounding output: instances ordered by (subject, origin) plus the
/// dataset-inconsistency report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundedConstraintSet {
    pub items: Vec<GroundedConstraint>,
    pub skipped: Vec<SkippedGrounding>,
}

impl GroundedConstraintSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &GroundedConstraint> {
        self.items.iter()
    }
}

/// Instantiates every constraint for every subject that knows the
/// antecedent or consequent property as a fact. With `with_evidence`, each
/// known labeled fact whose property occurs in the formula is conjoined as
/// a unit literal; instances whose evidence makes them unsatisfiable are
/// skipped and reported rather than emitted.
pub fn ground_constraints(
    constraints: &ConstraintSet,
    facts: &FactSet,
    with_evidence: bool,
) -> GroundedConstraintSet {
    let mut out = GroundedConstraintSet::default();
    for subject in facts.subjects() {
        let props: BTreeMap<&str, &Fact> =
            facts.facts_of(subject).map(|f| (f.property.as_str(), f)).collect();
        for (origin, constraint) in constraints.iter().enumerate() {
            let ant = &constraint.antecedent;
            let con = &constraint.consequent;
            if !props.contains_key(ant.property.as_str())
                && !props.contains_key(con.property.as_str())
            {
                continue;
            }
            let vars = vec![ant.property.clone(), con.property.clone()];
            let base = Formula::implies(
                Formula::literal(0, ant.polarity),
                Formula::literal(1, con.polarity),
            );
            let mut evidence = Vec::new();
            let mut units = Vec::new();
            if with_evidence {
                for (var_id, prop) in vars.iter().enumerate() {
                    if let Some(fact) = props.get(prop.as_str()) {
                        if let Some(label) = fact.label {
                            evidence.push(((*fact).clone(), label));
                            units.push((var_id, label));
                        }
                    }
                }
            }
            let formula = base.conjoin_evidence(&units);
            let satisfiable = formula
                .satisfying_assignments(vars.len())
                .map(|models| !models.is_empty())
                .unwrap_or(false);
            if !satisfiable {
                out.skipped.push(SkippedGrounding {
                    subject: subject.to_string(),
                    origin,
                });
                continue;
            }
            out.items.push(GroundedConstraint {
                subject: subject.to_string(),
                vars,
                formula,
                evidence,
                origin,
            });
        }
    }
    out
}

/// The antecedent / consequent-only partition of a fact set.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    /// Facts whose property appears as an antecedent at least once.
    pub antecedents: FactSet,
    /// Facts whose property appears exclusively as a consequent.
    pub consequents: FactSet,
    /// Count of facts whose property appears in no constraint.
    pub unconstrained: usize,
}

/// Partitions facts by the role their property plays in the constraints.
/// Facts mentioned by no constraint are excluded and counted.
pub fn split_t1_t2(facts: &FactSet, constraints: &ConstraintSet) -> SplitOutcome {
    let ant_props = constraints.antecedent_properties();
    let con_props = constraints.consequent_properties();
    let mut antecedents = Vec::new();
    let mut consequents = Vec::new();
    let mut unconstrained = 0;
    for fact in facts.iter() {
        if ant_props.contains(fact.property.as_str()) {
            antecedents.push(fact.clone());
        } else if con_props.contains(fact.property.as_str()) {
            consequents.push(fact.clone());
        } else {
            unconstrained += 1;
        }
    }
    SplitOutcome {
        antecedents: FactSet::from_facts(antecedents).expect("facts already validated"),
        consequents: FactSet::from_facts(consequents).expect("facts already validated"),
        unconstrained,
    }
}

/// Seed-keyed uniform sample of `⌊fraction·n⌋` facts (train) with the
/// remainder held out. The same seed and fraction always yield the same
/// split.
pub fn sample_fraction(
    facts: &FactSet,
    fraction: f64,
    seed: u64,
) -> Result<(FactSet, FactSet), KbError> {
    if !(0.0..=1.0).contains(&fraction) || fraction.is_nan() {
        return Err(KbError::FractionRange(fraction));
    }
    let n = facts.len();
    let k = (fraction * n as f64).floor() as usize;
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let all: Vec<&Fact> = facts.iter().collect();
    let train: Vec<Fact> = indices[..k].iter().map(|&i| all[i].clone()).collect();
    let held: Vec<Fact> = indices[k..].iter().map(|&i| all[i].clone()).collect();
    Ok((
        FactSet::from_facts(train).expect("facts already validated"),
        FactSet::from_facts(held).expect("facts already validated"),
    ))
}

// ---------------------------------------------------------------------------
// Canonical layout
// ---------------------------------------------------------------------------

#[derive(Default, Serialize, Deserialize)]
struct FactsFile {
    #[serde(default)]
    facts: Vec<Fact>,
}

#[derive(Default, Serialize, Deserialize)]
struct ConstraintsFile {
    #[serde(default)]
    constraints: Vec<GeneralConstraint>,
}

/// Serializes a fact set in the canonical layout.
pub fn write_facts_canonical(facts: &FactSet) -> String {
    let file = FactsFile {
        facts: facts.iter().cloned().collect(),
    };
    serde_json::to_string_pretty(&file).expect("fact serialization cannot fail")
}

/// Serializes a constraint set in the canonical layout.
pub fn write_constraints_canonical(constraints: &ConstraintSet) -> String {
    let file = ConstraintsFile {
        constraints: constraints.iter().cloned().collect(),
    };
    serde_json::to_string_pretty(&file).expect("constraint serialization cannot fail")
}

// ---------------------------------------------------------------------------
// Source-dataset adapter layout
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct AdapterLink {
    source: String,
    target: String,
    weight: String,
    #[serde(default)]
    direction: Option<String>,
    #[serde(default)]
    score: Option<f64>,
}

#[derive(Deserialize)]
struct AdapterConstraintsFile {
    #[serde(default)]
    #[allow(dead_code)]
    nodes: Vec<serde_json::Value>,
    links: Vec<AdapterLink>,
}

fn adapter_polarities(marker: &str, locator: &str) -> Result<(bool, bool), KbError> {
    match marker {
        "yes_yes" => Ok((true, true)),
        "yes_no" => Ok((true, false)),
        "no_yes" => Ok((false, true)),
        "no_no" => Ok((false, false)),
        other => Err(KbError::UnknownPolarity {
            marker: other.to_string(),
            locator: locator.to_string(),
        }),
    }
}

fn adapter_label(value: &str, locator: &str) -> Result<bool, KbError> {
    match value {
        "yes" => Ok(true),
        "no" => Ok(false),
        other => Err(KbError::UnknownPolarity {
            marker: other.to_string(),
            locator: locator.to_string(),
        }),
    }
}

/// Parses a facts document in either layout (auto-detected).
pub fn parse_facts(text: &str) -> Result<FactSet, KbError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let obj = match &value {
        serde_json::Value::Object(map) => map,
        _ => {
            return Err(KbError::Record {
                locator: "document root".into(),
                message: "expected a JSON object".into(),
            })
        }
    };
    if obj.is_empty() || obj.contains_key("facts") {
        let file: FactsFile = serde_json::from_value(value)?;
        return FactSet::from_facts(file.facts);
    }
    // Source layout: subject -> {property: "yes"|"no"}.
    let mut facts = Vec::new();
    for (subject, props) in obj {
        let props = props.as_object().ok_or_else(|| KbError::Record {
            locator: subject.clone(),
            message: "expected a property map".into(),
        })?;
        for (property, answer) in props {
            let locator = format!("({subject}, {property})");
            let answer = answer.as_str().ok_or_else(|| KbError::Record {
                locator: locator.clone(),
                message: "expected a \"yes\"/\"no\" string".into(),
            })?;
            let label = adapter_label(answer, &locator)?;
            facts.push(Fact::new(subject.clone(), property.clone(), Some(label)));
        }
    }
    FactSet::from_facts(facts)
}

/// Parses a constraints document in either layout (auto-detected).
pub fn parse_constraints(text: &str) -> Result<ConstraintSet, KbError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let obj = match &value {
        serde_json::Value::Object(map) => map,
        _ => {
            return Err(KbError::Record {
                locator: "document root".into(),
                message: "expected a JSON object".into(),
            })
        }
    };
    if obj.contains_key("links") {
        let file: AdapterConstraintsFile = serde_json::from_value(value)?;
        let mut constraints = Vec::with_capacity(file.links.len());
        for (i, link) in file.links.into_iter().enumerate() {
            let locator = format!("link {i}");
            if let Some(direction) = &link.direction {
                if direction != "forward" {
                    return Err(KbError::Record {
                        locator,
                        message: format!("unsupported direction '{direction}'"),
                    });
                }
            }
            let (ant_pol, con_pol) = adapter_polarities(&link.weight, &locator)?;
            constraints.push(GeneralConstraint {
                antecedent: Literal {
                    property: link.source,
                    polarity: ant_pol,
                },
                consequent: Literal {
                    property: link.target,
                    polarity: con_pol,
                },
                weight: link.score,
            });
        }
        return ConstraintSet::from_constraints(constraints);
    }
    let file: ConstraintsFile = serde_json::from_value(value)?;
    ConstraintSet::from_constraints(file.constraints)
}

// ---------------------------------------------------------------------------
// Grounded-set serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct GroundedRecord {
    subject: String,
    vars: Vec<String>,
    formula: String,
    evidence: Vec<(String, bool)>,
    origin: usize,
}

#[derive(Serialize, Deserialize)]
struct GroundedFile {
    grounded: Vec<GroundedRecord>,
    #[serde(default)]
    skipped: Vec<(String, usize)>,
}

fn placeholder_table(n: usize) -> VarTable {
    (0..n).map(|i| format!("v{i}")).collect()
}

/// Serializes grounded constraints; formulas are printed in the DSL over
/// placeholder names `v0, v1, …` indexing into `vars`.
pub fn write_grounded_json(set: &GroundedConstraintSet) -> String {
    let grounded = set
        .items
        .iter()
        .map(|g| GroundedRecord {
            subject: g.subject.clone(),
            vars: g.vars.clone(),
            formula: crate::formula::print_formula(&g.formula, &placeholder_table(g.vars.len())),
            evidence: g
                .evidence
                .iter()
                .map(|(fact, value)| (fact.property.clone(), *value))
                .collect(),
            origin: g.origin,
        })
        .collect();
    let skipped = set
        .skipped
        .iter()
        .map(|s| (s.subject.clone(), s.origin))
        .collect();
    // compact: grounded sets run to six figures on the silver facts
    serde_json::to_string(&GroundedFile { grounded, skipped })
        .expect("grounded serialization cannot fail")
}

fn remap_vars(f: &Formula, mapping: &[usize]) -> Formula {
    match f {
        Formula::True => Formula::True,
        Formula::False => Formula::False,
        Formula::Var(id) => Formula::Var(mapping[*id]),
        Formula::Not(inner) => Formula::not(remap_vars(inner, mapping)),
        Formula::And(items) => Formula::And(items.iter().map(|i| remap_vars(i, mapping)).collect()),
        Formula::Or(items) => Formula::Or(items.iter().map(|i| remap_vars(i, mapping)).collect()),
        Formula::Implies(a, b) => Formula::implies(remap_vars(a, mapping), remap_vars(b, mapping)),
        Formula::Iff(a, b) => Formula::iff(remap_vars(a, mapping), remap_vars(b, mapping)),
    }
}

/// Reads grounded constraints written by [`write_grounded_json`].
pub fn read_grounded_json(text: &str) -> Result<GroundedConstraintSet, KbError> {
    let file: GroundedFile = serde_json::from_str(text)?;
    let mut items = Vec::with_capacity(file.grounded.len());
    for (i, record) in file.grounded.into_iter().enumerate() {
        let locator = format!("grounded record {i}");
        let mut table = VarTable::new();
        let parsed = crate::formula::parse_formula(&record.formula, &mut table).map_err(|e| {
            KbError::Record {
                locator: locator.clone(),
                message: e.to_string(),
            }
        })?;
        // Printed names are `v<idx>`; map back onto the vars list order.
        let mut mapping = Vec::with_capacity(table.len());
        for name in table.names() {
            let idx: usize = name
                .strip_prefix('v')
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| KbError::Record {
                    locator: locator.clone(),
                    message: format!("unexpected variable name '{name}'"),
                })?;
            if idx >= record.vars.len() {
                return Err(KbError::Record {
                    locator: locator.clone(),
                    message: format!("variable index {idx} out of range"),
                });
            }
            mapping.push(idx);
        }
        let formula = remap_vars(&parsed, &mapping);
        let evidence = record
            .evidence
            .into_iter()
            .map(|(property, value)| {
                (
                    Fact::new(record.subject.clone(), property, Some(value)),
                    value,
                )
            })
            .collect();
        items.push(GroundedConstraint {
            subject: record.subject,
            vars: record.vars,
            formula,
            evidence,
            origin: record.origin,
        });
    }
    let skipped = file
        .skipped
        .into_iter()
        .map(|(subject, origin)| SkippedGrounding { subject, origin })
        .collect();
    Ok(GroundedConstraintSet { items, skipped })
}
