//! Deterministic synthetic knowledge base with the reference corpus shape:
//! 1,072 calibration facts over 7 subjects, 12,636 silver facts over 85
//! subjects, 2,224 implications, grounding to exactly 14,005 (calibration)
//! and 169,913 (silver) instances, and role splits of 796/276 and
//! 9,504/3,132 facts.
//!
//! Structure: 111 core antecedent properties, each implying 18 of 54 shared
//! consequent properties (1,998 edges), plus 226 rare degree-1 antecedents
//! with fresh consequents. Every subject holds every core antecedent; 19
//! calibration and 69 silver rare-antecedent facts plus 14 silver
//! orphan-consequent facts close the grounding sums. Labels are assigned
//! property-first and then propagated so no constraint is violated by the
//! annotations themselves.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::kb::{ConstraintSet, Fact, FactSet, GeneralConstraint, Literal};

pub const CORE_ANTECEDENTS: usize = 111;
pub const CORE_DEGREE: usize = 18;
pub const HUB_CONSEQUENTS: usize = 54;
pub const RARE_ANTECEDENTS: usize = 226;
pub const CONSTRAINT_COUNT: usize = CORE_ANTECEDENTS * CORE_DEGREE + RARE_ANTECEDENTS;

const CALIB_SUBJECTS: [&str; 7] = [
    "albatross", "bison", "daffodil", "hamster", "maple", "poodle", "salmon",
];

const SILVER_SUBJECTS: [&str; 85] = [
    "antelope", "badger", "beetle", "camel", "cheetah", "chipmunk", "cobra", "condor", "coyote",
    "crab", "crane", "cricket", "crocodile", "deer", "dolphin", "donkey", "dove", "dragonfly",
    "duck", "eagle", "eel", "elephant", "falcon", "ferret", "finch", "flamingo", "fox", "frog",
    "gazelle", "gecko", "gerbil", "gibbon", "giraffe", "goat", "goose", "gorilla", "grasshopper",
    "hawk", "hedgehog", "heron", "herring", "hornet", "horse", "hyena", "iguana", "jackal",
    "jaguar", "jellyfish", "kangaroo", "koala", "lemur", "leopard", "lizard", "llama", "lobster",
    "magpie", "mantis", "marmot", "meerkat", "mole", "moose", "moth", "mouse", "mule", "newt",
    "ocelot", "octopus", "orca", "osprey", "ostrich", "otter", "owl", "oyster", "panda",
    "panther", "parrot", "peacock", "pelican", "penguin", "pheasant", "pigeon", "porcupine",
    "puffin", "python", "rabbit",
];

// Per-subject rare-antecedent pick counts (sum 19).
const CALIB_RARE_QUOTA: [usize; 7] = [3, 3, 3, 3, 3, 2, 2];
// Per-subject consequent-fact quotas (sum 276).
const CALIB_T2_QUOTA: [usize; 7] = [40, 40, 40, 39, 39, 39, 39];
const SILVER_RARE_PICKS: usize = 69;
const SILVER_ORPHANS: usize = 14;
// 58 subjects pick 37 hubs, 27 pick 36 (sum 3,118); orphans bring T2 to 3,132.
const SILVER_T2_BASE: usize = 36;
const SILVER_T2_EXTRA: usize = 58;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    /// Fraction of core antecedent properties labeled true.
    pub antecedent_true_rate: f64,
    /// Fraction of shared consequent properties labeled true.
    pub consequent_true_rate: f64,
    /// Fraction of rare antecedent properties labeled true.
    pub rare_true_rate: f64,
    /// Per-subject chance of flipping a property-true antecedent to false.
    pub subject_flip_rate: f64,
    /// Chance that a non-binding edge (antecedent labeled false) agrees
    /// with its consequent's label, the way implication graphs over a real
    /// taxonomy mostly do.
    pub polarity_coherence: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 1972,
            antecedent_true_rate: 0.15,
            consequent_true_rate: 0.4,
            rare_true_rate: 0.1,
            subject_flip_rate: 0.15,
            polarity_coherence: 0.9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub calibration: FactSet,
    pub silver: FactSet,
    pub constraints: ConstraintSet,
}

fn core_property(i: usize) -> String {
    let (relation, stem) = match i % 4 {
        0 => ("IsA", "kind"),
        1 => ("HasPart", "part"),
        2 => ("CapableOf", "skill"),
        _ => ("HasProperty", "trait"),
    };
    format!("{relation},{stem}_{i:03}")
}

fn hub_property(h: usize) -> String {
    format!("IsA,class_{h:03}")
}

fn rare_property(j: usize) -> String {
    format!("MadeOf,material_{j:03}")
}

fn rare_consequent_property(j: usize) -> String {
    format!("HasProperty,rare_trait_{j:03}")
}

/// Hubs implied by core antecedent `i`: the contiguous block starting at
/// `18·(i mod 3)`, wrapping over the 54 hubs.
fn hub_targets(i: usize) -> impl Iterator<Item = usize> {
    let start = (i * CORE_DEGREE) % HUB_CONSEQUENTS;
    (0..CORE_DEGREE).map(move |t| (start + t) % HUB_CONSEQUENTS)
}

fn sub_rng(seed: u64, tag: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(tag))
}

fn pick_true(n: usize, rate: f64, rng: &mut ChaCha12Rng) -> Vec<bool> {
    let k = (n as f64 * rate).round() as usize;
    let mut indices: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    indices.shuffle(rng);
    let mut flags = vec![false; n];
    for &i in indices.iter().take(k) {
        flags[i] = true;
    }
    flags
}

struct Labels {
    core: Vec<bool>,
    hub: Vec<bool>,
    rare: Vec<bool>,
}

fn build_labels(config: &SynthConfig) -> Labels {
    let mut rng = sub_rng(config.seed, 1);
    let core = pick_true(CORE_ANTECEDENTS, config.antecedent_true_rate, &mut rng);
    let hub = pick_true(HUB_CONSEQUENTS, config.consequent_true_rate, &mut rng);
    let mut rare = pick_true(RARE_ANTECEDENTS, config.rare_true_rate, &mut rng);
    // Rares 0 and 1 carry the negative-antecedent constraints and stay false.
    rare[0] = false;
    rare[1] = false;
    Labels { core, hub, rare }
}

fn build_constraints(config: &SynthConfig, labels: &Labels) -> ConstraintSet {
    let mut rng = sub_rng(config.seed, 2);
    let mut constraints = Vec::with_capacity(CONSTRAINT_COUNT);
    for i in 0..CORE_ANTECEDENTS {
        for h in hub_targets(i) {
            // A true antecedent binds the consequent's polarity to the hub
            // label; non-binding edges agree with it at the coherence rate.
            let con_polarity = if labels.core[i] || rng.gen_bool(config.polarity_coherence) {
                labels.hub[h]
            } else {
                !labels.hub[h]
            };
            constraints.push(GeneralConstraint {
                antecedent: Literal::positive(core_property(i)),
                consequent: Literal {
                    property: hub_property(h),
                    polarity: con_polarity,
                },
                weight: Some(1.0 + (constraints.len() % 40) as f64 / 10.0),
            });
        }
    }
    for j in 0..RARE_ANTECEDENTS {
        let (ant_polarity, con_polarity) = if j < 2 {
            // two negated-antecedent implications for schema coverage
            (false, false)
        } else if labels.rare[j] {
            (true, false) // rare consequents are labeled false when present
        } else {
            (true, !rng.gen_bool(config.polarity_coherence))
        };
        constraints.push(GeneralConstraint {
            antecedent: Literal {
                property: rare_property(j),
                polarity: ant_polarity,
            },
            consequent: Literal {
                property: rare_consequent_property(j),
                polarity: con_polarity,
            },
            weight: Some(1.0 + (constraints.len() % 40) as f64 / 10.0),
        });
    }
    ConstraintSet::from_constraints(constraints).expect("generated constraints are well-formed")
}

/// Hubs reachable from a subject-true antecedent, given this subject's
/// flipped core labels.
fn covered_hubs(core_labels: &[bool]) -> Vec<bool> {
    let mut covered = vec![false; HUB_CONSEQUENTS];
    for (i, &label) in core_labels.iter().enumerate() {
        if label {
            for h in hub_targets(i) {
                covered[h] = true;
            }
        }
    }
    covered
}

struct SubjectPlan {
    rare_picks: Vec<usize>,
    t2_quota: usize,
    orphan_rare: Option<usize>,
}

fn subject_facts(
    subject: &str,
    subject_index: u64,
    config: &SynthConfig,
    labels: &Labels,
    plan: &SubjectPlan,
    facts: &mut Vec<Fact>,
) {
    let mut rng = sub_rng(config.seed, 100 + subject_index);
    // Core antecedents with per-subject true-to-false flips.
    let mut core_labels = labels.core.clone();
    for label in core_labels.iter_mut() {
        if *label && rng.gen_bool(config.subject_flip_rate) {
            *label = false;
        }
    }
    for (i, &label) in core_labels.iter().enumerate() {
        facts.push(Fact::new(subject, core_property(i), Some(label)));
    }
    for &j in &plan.rare_picks {
        facts.push(Fact::new(subject, rare_property(j), Some(labels.rare[j])));
    }
    // Consequent facts: prefer hubs covered by a subject-true antecedent.
    let covered = covered_hubs(&core_labels);
    let mut order: Vec<usize> = (0..HUB_CONSEQUENTS).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    order.sort_by_key(|&h| !covered[h]); // stable: covered first
    for &h in order.iter().take(plan.t2_quota) {
        facts.push(Fact::new(subject, hub_property(h), Some(labels.hub[h])));
    }
    if let Some(j) = plan.orphan_rare {
        facts.push(Fact::new(subject, rare_consequent_property(j), Some(false)));
    }
}

/// Generates the full dataset for a config. Deterministic.
pub fn generate(config: &SynthConfig) -> SynthDataset {
    let labels = build_labels(config);
    let constraints = build_constraints(config, &labels);

    let mut calib_facts = Vec::new();
    let mut next_rare = 0;
    for (k, subject) in CALIB_SUBJECTS.iter().enumerate() {
        let quota = CALIB_RARE_QUOTA[k];
        let plan = SubjectPlan {
            rare_picks: (next_rare..next_rare + quota).collect(),
            t2_quota: CALIB_T2_QUOTA[k],
            orphan_rare: None,
        };
        next_rare += quota;
        subject_facts(subject, k as u64, config, &labels, &plan, &mut calib_facts);
    }

    let mut silver_facts = Vec::new();
    for (k, subject) in SILVER_SUBJECTS.iter().enumerate() {
        let plan = SubjectPlan {
            rare_picks: if k < SILVER_RARE_PICKS {
                vec![(k * 7 + 31) % RARE_ANTECEDENTS]
            } else {
                Vec::new()
            },
            t2_quota: SILVER_T2_BASE + usize::from(k < SILVER_T2_EXTRA),
            orphan_rare: if k >= SILVER_SUBJECTS.len() - SILVER_ORPHANS {
                Some((k * 5 + 3) % RARE_ANTECEDENTS)
            } else {
                None
            },
        };
        subject_facts(
            subject,
            1000 + k as u64,
            config,
            &labels,
            &plan,
            &mut silver_facts,
        );
    }

    SynthDataset {
        calibration: FactSet::from_facts(calib_facts).expect("calibration facts are well-formed"),
        silver: FactSet::from_facts(silver_facts).expect("silver facts are well-formed"),
        constraints,
    }
}

// ---------------------------------------------------------------------------
// Source-layout writers
// ---------------------------------------------------------------------------

/// Facts in the source layout: `subject -> {property: "yes"|"no"}`.
pub fn facts_to_source_json(facts: &FactSet) -> String {
    let mut root = serde_json::Map::new();
    for subject in facts.subjects() {
        let mut props = serde_json::Map::new();
        for fact in facts.facts_of(subject) {
            let answer = if fact.label == Some(true) { "yes" } else { "no" };
            props.insert(fact.property.clone(), serde_json::Value::from(answer));
        }
        root.insert(subject.to_string(), serde_json::Value::Object(props));
    }
    serde_json::to_string_pretty(&serde_json::Value::Object(root)).expect("serialization")
}

/// Constraints in the source layout: a node/link graph with
/// `yes_yes`-style polarity markers.
pub fn constraints_to_source_json(constraints: &ConstraintSet) -> String {
    let mut nodes: Vec<String> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    let mut links = Vec::new();
    for c in constraints.iter() {
        for prop in [&c.antecedent.property, &c.consequent.property] {
            if seen.insert(prop.clone()) {
                nodes.push(prop.clone());
            }
        }
        let marker = format!(
            "{}_{}",
            if c.antecedent.polarity { "yes" } else { "no" },
            if c.consequent.polarity { "yes" } else { "no" }
        );
        links.push(serde_json::json!({
            "source": c.antecedent.property,
            "target": c.consequent.property,
            "weight": marker,
            "direction": "forward",
            "score": c.weight,
        }));
    }
    serde_json::to_string_pretty(&serde_json::json!({
        "nodes": nodes,
        "links": links,
    }))
    .expect("serialization")
}
