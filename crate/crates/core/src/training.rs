//! The two fine-tuning objectives (supervised and semantic-loss) and the
//! seeded optimization loop.
//!
//! Gradients flow from the loss in probability space through the logistic
//! link into model parameters (see [`crate::belief::parameter_gradient`]).
//! Batches aggregate by mean; accumulation order is fixed (sorted parameter
//! ids) so runs with the same seed reproduce bit-identically.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{BeliefError, BeliefSource, ParamBeliefModel};
use crate::kb::{Fact, FactSet, GroundedConstraint, GroundedConstraintSet};
use crate::semloss::{semantic_loss, BeliefVector, SemLossError, CLAMP_EPSILON};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("fact ({subject}, {property}) is unlabeled")]
    Unlabeled { subject: String, property: String },
    #[error("no training data for objective {0:?}")]
    NoData(Objective),
    #[error("training diverged at epoch {epoch}: mean loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    SemLoss(#[from] SemLossError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Sft,
    Loco,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    AdaptiveMoment,
}

fn default_epochs() -> usize {
    5
}
fn default_learning_rate() -> f64 {
    3e-4
}
fn default_weight_decay() -> f64 {
    1e-2
}
fn default_batch_size() -> usize {
    64
}
fn default_clamp_epsilon() -> f64 {
    CLAMP_EPSILON
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::AdaptiveMoment
}
fn default_objective() -> Objective {
    Objective::Loco
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_objective")]
    pub objective: Objective,
    #[serde(default = "default_clamp_epsilon")]
    pub clamp_epsilon: f64,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    /// Additive supervised term on evidence facts inside loco batches.
    #[serde(default)]
    pub sft_mix_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            learning_rate: default_learning_rate(),
            weight_decay: default_weight_decay(),
            batch_size: default_batch_size(),
            seed: 0,
            objective: default_objective(),
            clamp_epsilon: default_clamp_epsilon(),
            optimizer: default_optimizer(),
            sft_mix_weight: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs < 1 {
            return Err(TrainError::Config("epochs must be >= 1".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(TrainError::Config("weight decay must be non-negative".into()));
        }
        if self.batch_size < 1 {
            return Err(TrainError::Config("batch size must be >= 1".into()));
        }
        if !(self.clamp_epsilon > 0.0 && self.clamp_epsilon < 0.5) {
            return Err(TrainError::Config("clamp epsilon must be in (0, 0.5)".into()));
        }
        if self.sft_mix_weight < 0.0 {
            return Err(TrainError::Config("sft mix weight must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub wall_clock_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

fn clamp(p: f64, epsilon: f64) -> f64 {
    p.clamp(epsilon, 1.0 - epsilon)
}

/// Mean binary cross-entropy over labeled facts.
pub fn sft_loss<M: BeliefSource>(
    model: &M,
    facts: &[&Fact],
    epsilon: f64,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for fact in facts {
        let label = fact.label.ok_or_else(|| TrainError::Unlabeled {
            subject: fact.subject.clone(),
            property: fact.property.clone(),
        })?;
        let p = clamp(model.belief(&fact.subject, &fact.property)?, epsilon);
        total -= if label { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total / facts.len().max(1) as f64)
}

/// Mean semantic loss over grounded constraints, with beliefs read from the
/// model for each formula variable.
pub fn loco_loss<M: BeliefSource>(
    model: &M,
    constraints: &[&GroundedConstraint],
    epsilon: f64,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for g in constraints {
        let beliefs: Result<Vec<f64>, BeliefError> = g
            .vars
            .iter()
            .map(|prop| model.belief(&g.subject, prop))
            .collect();
        let bv = BeliefVector::with_epsilon(beliefs?, epsilon);
        total += semantic_loss(&g.formula, &bv)?.loss;
    }
    Ok(total / constraints.len().max(1) as f64)
}

struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step_count: u64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    fn new(config: &TrainConfig, n_params: usize) -> Self {
        let state = match config.optimizer {
            OptimizerKind::Sgd => 0,
            OptimizerKind::AdaptiveMoment => n_params,
        };
        Self {
            kind: config.optimizer,
            learning_rate: config.learning_rate,
            weight_decay: config.weight_decay,
            m: vec![0.0; state],
            v: vec![0.0; state],
            step_count: 0,
        }
    }

    /// One update over the touched parameters; decoupled weight decay is
    /// applied to the same entries.
    fn step(&mut self, params: &mut [f64], grads: &BTreeMap<usize, f64>) {
        self.step_count += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (&i, &g) in grads {
                    params[i] -= lr * g;
                    params[i] -= lr * self.weight_decay * params[i];
                }
            }
            OptimizerKind::AdaptiveMoment => {
                let bc1 = 1.0 - BETA1.powi(self.step_count as i32);
                let bc2 = 1.0 - BETA2.powi(self.step_count as i32);
                for (&i, &g) in grads {
                    self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
                    self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    params[i] -= lr * self.weight_decay * params[i];
                }
            }
        }
    }
}

struct GradBuffer {
    grads: BTreeMap<usize, f64>,
    scratch: Vec<(usize, f64)>,
}

impl GradBuffer {
    fn new() -> Self {
        Self {
            grads: BTreeMap::new(),
            scratch: Vec::new(),
        }
    }

    fn clear(&mut self) {
        self.grads.clear();
    }

    /// Accumulates `dloss_dp · p(1−p) · ∂logit/∂θ` for one fact variable.
    fn accumulate<M: ParamBeliefModel>(
        &mut self,
        model: &M,
        subject: &str,
        property: &str,
        dloss_dp: f64,
        p: f64,
        scale: f64,
    ) -> Result<(), BeliefError> {
        let factor = dloss_dp * p * (1.0 - p) * scale;
        if factor == 0.0 {
            return Ok(());
        }
        self.scratch.clear();
        model.logit_gradient(subject, property, &mut self.scratch)?;
        for &(idx, g) in &self.scratch {
            *self.grads.entry(idx).or_insert(0.0) += factor * g;
        }
        Ok(())
    }

    fn finish_mean(&mut self, batch_len: usize) {
        let inv = 1.0 / batch_len as f64;
        for g in self.grads.values_mut() {
            *g *= inv;
        }
    }
}

fn sft_item<M: ParamBeliefModel>(
    model: &M,
    fact: &Fact,
    epsilon: f64,
    weight: f64,
    buffer: &mut GradBuffer,
) -> Result<f64, TrainError> {
    let label = fact.label.ok_or_else(|| TrainError::Unlabeled {
        subject: fact.subject.clone(),
        property: fact.property.clone(),
    })?;
    let p = clamp(model.belief(&fact.subject, &fact.property)?, epsilon);
    let y = if label { 1.0 } else { 0.0 };
    let loss = -(if label { p.ln() } else { (1.0 - p).ln() });
    // d(bce)/dp = -y/p + (1-y)/(1-p); through p(1-p) this is p - y.
    let dloss_dp = -y / p + (1.0 - y) / (1.0 - p);
    buffer.accumulate(model, &fact.subject, &fact.property, dloss_dp, p, weight)?;
    Ok(weight * loss)
}

fn loco_item<M: ParamBeliefModel>(
    model: &M,
    g: &GroundedConstraint,
    epsilon: f64,
    sft_mix_weight: f64,
    buffer: &mut GradBuffer,
) -> Result<f64, TrainError> {
    let beliefs: Result<Vec<f64>, BeliefError> = g
        .vars
        .iter()
        .map(|prop| model.belief(&g.subject, prop))
        .collect();
    let bv = BeliefVector::with_epsilon(beliefs?, epsilon);
    let result = semantic_loss(&g.formula, &bv)?;
    for (j, prop) in g.vars.iter().enumerate() {
        let p = bv.as_slice()[j];
        buffer.accumulate(model, &g.subject, prop, result.gradient[j], p, 1.0)?;
    }
    let mut loss = result.loss;
    if sft_mix_weight > 0.0 {
        for (fact, _) in &g.evidence {
            loss += sft_item(model, fact, epsilon, sft_mix_weight, buffer)?;
        }
    }
    Ok(loss)
}

/// Runs `epochs × batches` of gradient steps over the objective's data,
/// shuffled by seed each epoch. Deterministic given the seed; aborts when
/// the mean epoch loss goes non-finite.
pub fn train<M: ParamBeliefModel>(
    config: &TrainConfig,
    facts: &FactSet,
    grounded: &GroundedConstraintSet,
    model: &mut M,
) -> Result<TrainHistory, TrainError> {
    train_with_hook(config, facts, grounded, model, |_| None)
}

/// [`train`] with a per-epoch hook whose value lands in
/// [`EpochStats::eval`] (e.g. an evaluation snapshot).
pub fn train_with_hook<M, F>(
    config: &TrainConfig,
    facts: &FactSet,
    grounded: &GroundedConstraintSet,
    model: &mut M,
    mut hook: F,
) -> Result<TrainHistory, TrainError>
where
    M: ParamBeliefModel,
    F: FnMut(&M) -> Option<serde_json::Value>,
{
    config.validate()?;
    let n_items = match config.objective {
        Objective::Sft => facts.len(),
        Objective::Loco => grounded.len(),
    };
    if n_items == 0 {
        return Err(TrainError::NoData(config.objective));
    }
    let facts_vec: Vec<&Fact> = facts.iter().collect();
    let grounded_vec: Vec<&GroundedConstraint> = grounded.iter().collect();

    let mut optimizer = Optimizer::new(config, model.params().len());
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut indices: Vec<usize> = (0..n_items).collect();
    let mut history = TrainHistory::default();
    let mut buffer = GradBuffer::new();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in indices.chunks(config.batch_size) {
            buffer.clear();
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += match config.objective {
                    Objective::Sft => sft_item(model, facts_vec[i], config.clamp_epsilon, 1.0, &mut buffer)?,
                    Objective::Loco => loco_item(
                        model,
                        grounded_vec[i],
                        config.clamp_epsilon,
                        config.sft_mix_weight,
                        &mut buffer,
                    )?,
                };
            }
            buffer.finish_mean(batch.len());
            optimizer.step(model.params_mut(), &buffer.grads);
            loss_sum += batch_loss;
        }
        let mean_loss = loss_sum / n_items as f64;
        if !mean_loss.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                loss: mean_loss,
            });
        }
        history.epochs.push(EpochStats {
            mean_loss,
            wall_clock_secs: started.elapsed().as_secs_f64(),
            eval: hook(model),
        });
    }
    Ok(history)
}
