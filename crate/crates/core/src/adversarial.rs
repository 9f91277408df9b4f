//! Adversarial heads behind gradient reversal, the summed multi-attribute
//! loss, the joint objective, and the standalone attacker.
//!
//! Each protected attribute gets its own head: an MLP with one hidden layer
//! that reads the latent code. During removal the head sits behind a
//! gradient reversal layer scaled by that attribute's λ, so one backward pass
//! trains the head to predict the attribute while pushing the encoder to
//! hide it. Attackers share the architecture but see the frozen encoder's
//! means directly.

use std::collections::BTreeMap;

use rand::Rng;

use crate::array::Array;
use crate::autodiff::{GrlSpec, Tape, Var};
use crate::error::{Error, Result};
use crate::model::{multvae_loss, ModelVars, MultVae, VaeLoss};
use crate::params::{push_linear, Activation, Linear, LinearVars, Parameters};
use crate::train::adam::Adam;
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Debug, PartialEq)]
pub enum AttributeKind {
    Categorical { n_classes: usize },
    Continuous,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeSpec {
    pub name: String,
    pub kind: AttributeKind,
    /// Per-class loss weights; empty for continuous attributes.
    pub class_weights: Vec<f64>,
    pub lambda: f64,
}

impl AttributeSpec {
    pub fn categorical(name: &str, class_weights: Vec<f64>, lambda: f64) -> Result<Self> {
        let spec = Self {
            name: name.to_string(),
            kind: AttributeKind::Categorical {
                n_classes: class_weights.len(),
            },
            class_weights,
            lambda,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn continuous(name: &str, lambda: f64) -> Result<Self> {
        let spec = Self {
            name: name.to_string(),
            kind: AttributeKind::Continuous,
            class_weights: Vec::new(),
            lambda,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        GrlSpec::new(self.lambda)?;
        match self.kind {
            AttributeKind::Categorical { n_classes } => {
                if n_classes < 2 || self.class_weights.len() != n_classes {
                    return Err(Error::Config(format!(
                        "attribute `{}`: categorical needs >= 2 classes and one weight per class",
                        self.name
                    )));
                }
                if self.class_weights.iter().any(|w| !(*w > 0.0)) {
                    return Err(Error::Config(format!(
                        "attribute `{}`: class weights must be positive",
                        self.name
                    )));
                }
            }
            AttributeKind::Continuous => {}
        }
        Ok(())
    }

    pub fn output_width(&self) -> usize {
        match self.kind {
            AttributeKind::Categorical { n_classes } => n_classes,
            AttributeKind::Continuous => 1,
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, AttributeKind::Categorical { .. })
    }
}

/// Gradient reversal scale per attribute name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LambdaConfig(BTreeMap<String, f64>);

impl LambdaConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, attribute: &str, lambda: f64) -> Self {
        self.0.insert(attribute.to_string(), lambda);
        self
    }

    pub fn set(&mut self, attribute: &str, lambda: f64) {
        self.0.insert(attribute.to_string(), lambda);
    }

    pub fn get(&self, attribute: &str) -> Option<f64> {
        self.0.get(attribute).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Writes each attribute's λ into its spec. Every attribute needs an
    /// entry and every value must be a valid reversal scale.
    pub fn apply(&self, specs: &mut [AttributeSpec]) -> Result<()> {
        for spec in specs.iter_mut() {
            let lambda = self.get(&spec.name).ok_or_else(|| {
                Error::Config(format!("no lambda configured for attribute `{}`", spec.name))
            })?;
            GrlSpec::new(lambda)?;
            spec.lambda = lambda;
        }
        Ok(())
    }
}

/// Targets for one attribute over a batch.
#[derive(Clone, Debug, PartialEq)]
pub enum AttributeTargets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl AttributeTargets {
    pub fn len(&self) -> usize {
        match self {
            AttributeTargets::Classes(v) => v.len(),
            AttributeTargets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        match self {
            AttributeTargets::Classes(v) => {
                AttributeTargets::Classes(idx.iter().map(|&i| v[i]).collect())
            }
            AttributeTargets::Values(v) => {
                AttributeTargets::Values(idx.iter().map(|&i| v[i]).collect())
            }
        }
    }
}

/// Targets for every attribute, keyed by attribute name.
pub type TargetTable = BTreeMap<String, AttributeTargets>;

pub fn select_targets(table: &TargetTable, idx: &[usize]) -> TargetTable {
    table
        .iter()
        .map(|(k, v)| (k.clone(), v.select(idx)))
        .collect()
}

/// One hidden layer, then logits (categorical) or a sigmoid value
/// (continuous).
#[derive(Clone, Debug, PartialEq)]
pub struct AdvHeadParams {
    pub name: String,
    pub hidden: Linear,
    pub output: Linear,
    pub activation: Activation,
}

impl AdvHeadParams {
    pub fn new<R: Rng + ?Sized>(
        spec: &AttributeSpec,
        latent: usize,
        hidden: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        Self {
            name: spec.name.clone(),
            hidden: Linear::init(latent, hidden, rng),
            output: Linear::init(hidden, spec.output_width(), rng),
            activation,
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> HeadVars {
        HeadVars {
            hidden: self.hidden.bind(tape, trainable),
            output: self.output.bind(tape, trainable),
            activation: self.activation,
        }
    }

    /// Predictions for fixed latents: logits per class, or one value per row.
    pub fn predict(&self, spec: &AttributeSpec, latents: &Array) -> Result<Array> {
        let mut tape = Tape::new();
        let z = tape.constant(latents.clone());
        let vars = self.bind(&mut tape, false);
        let out = adv_forward(&mut tape, z, &vars, spec, false)?;
        Ok(tape.value(out).clone())
    }
}

impl Parameters for AdvHeadParams {
    fn named(&self) -> Vec<(String, &Array)> {
        let mut out = Vec::with_capacity(4);
        push_linear(&mut out, &format!("{}.hidden", self.name), &self.hidden);
        push_linear(&mut out, &format!("{}.output", self.name), &self.output);
        out
    }

    fn arrays_mut(&mut self) -> Vec<&mut Array> {
        vec![
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.output.weight,
            &mut self.output.bias,
        ]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub hidden: LinearVars,
    pub output: LinearVars,
    pub activation: Activation,
}

impl HeadVars {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.hidden.vars().to_vec();
        v.extend(self.output.vars());
        v
    }
}

/// Head forward pass. With `reversed`, `z` first passes through a gradient
/// reversal layer at `spec.lambda`.
pub fn adv_forward(
    tape: &mut Tape,
    z: Var,
    head: &HeadVars,
    spec: &AttributeSpec,
    reversed: bool,
) -> Result<Var> {
    let width = tape.value(head.hidden.weight).shape()[0];
    if tape.value(z).cols() != width {
        return Err(Error::Dimension(format!(
            "head `{}` expects latent width {width}, got shape {:?}",
            spec.name,
            tape.value(z).shape()
        )));
    }
    let input = if reversed {
        tape.grl(z, GrlSpec::new(spec.lambda)?)
    } else {
        z
    };
    let h = head.hidden.forward(tape, input)?;
    let h = head.activation.apply(tape, h);
    let out = head.output.forward(tape, h)?;
    Ok(match spec.kind {
        AttributeKind::Categorical { .. } => out,
        AttributeKind::Continuous => tape.sigmoid(out),
    })
}

pub fn weighted_ce(tape: &mut Tape, logits: Var, labels: &[usize], weights: &[f64]) -> Result<Var> {
    tape.weighted_ce(logits, labels, weights)
}

pub fn mse(tape: &mut Tape, pred: Var, target: &[f64]) -> Result<Var> {
    let shape = tape.value(pred).shape().to_vec();
    let target = tape.constant(Array::new(shape, target.to_vec())?);
    tape.mse(pred, target)
}

/// The attribute's loss: weighted CE for categorical, MSE for continuous.
pub fn attribute_loss(
    tape: &mut Tape,
    prediction: Var,
    spec: &AttributeSpec,
    targets: &AttributeTargets,
) -> Result<Var> {
    match (&spec.kind, targets) {
        (AttributeKind::Categorical { .. }, AttributeTargets::Classes(labels)) => {
            weighted_ce(tape, prediction, labels, &spec.class_weights)
        }
        (AttributeKind::Continuous, AttributeTargets::Values(values)) => {
            if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Data(format!(
                    "attribute `{}` row {i}: target {} outside [0, 1]",
                    spec.name, values[i]
                )));
            }
            mse(tape, prediction, values)
        }
        _ => Err(Error::Data(format!(
            "attribute `{}`: target type does not match attribute kind",
            spec.name
        ))),
    }
}

/// Summed adversarial loss and its per-attribute terms (in head order).
#[derive(Clone, Debug)]
pub struct AdvxLoss {
    pub total: Var,
    pub terms: Vec<Var>,
}

/// Sum of every head's loss, each head behind its own reversal layer.
pub fn advx_loss(
    tape: &mut Tape,
    z: Var,
    heads: &[(HeadVars, &AttributeSpec)],
    targets: &TargetTable,
) -> Result<AdvxLoss> {
    let mut terms = Vec::with_capacity(heads.len());
    for (vars, spec) in heads {
        let t = targets.get(&spec.name).ok_or_else(|| {
            Error::Data(format!("no target column for attribute `{}`", spec.name))
        })?;
        let pred = adv_forward(tape, z, vars, spec, true)?;
        terms.push(attribute_loss(tape, pred, spec, t)?);
    }
    let total = match terms.split_first() {
        None => tape.constant(Array::scalar(0.0)),
        Some((first, rest)) => {
            let mut acc = *first;
            for t in rest {
                acc = tape.add(acc, *t)?;
            }
            acc
        }
    };
    Ok(AdvxLoss { total, terms })
}

/// The joint objective `L_MULT + L_advX` on one shared latent sample.
#[derive(Clone, Debug)]
pub struct Objective {
    pub total: Var,
    pub vae: VaeLoss,
    pub adversarial: AdvxLoss,
}

#[allow(clippy::too_many_arguments)]
pub fn total_objective<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: &Array,
    targets: &TargetTable,
    model: &ModelVars,
    heads: &[(HeadVars, &AttributeSpec)],
    beta: f64,
    dropout_keep: f64,
    rng: &mut R,
) -> Result<Objective> {
    let vae = multvae_loss(tape, model, x, beta, dropout_keep, rng)?;
    if heads.is_empty() {
        let adversarial = AdvxLoss {
            total: tape.constant(Array::scalar(0.0)),
            terms: Vec::new(),
        };
        return Ok(Objective {
            total: vae.loss,
            vae,
            adversarial,
        });
    }
    let adversarial = advx_loss(tape, vae.z, heads, targets)?;
    let total = tape.add(vae.loss, adversarial.total)?;
    Ok(Objective {
        total,
        vae,
        adversarial,
    })
}

/// Compares the tape gradient of the joint objective with central
/// differences. The reversal layers make the update direction a saddle
/// point rather than the gradient of one scalar: recommender coordinates
/// are checked against `L_MULT - Σ λ_k·L_k` and head coordinates against
/// `L_MULT + Σ L_k`. Dropout masks and latent noise are replayed from
/// `noise` for every evaluation. Returns the worst relative error.
#[allow(clippy::too_many_arguments)]
pub fn joint_gradient_check(
    model: &MultVae,
    heads: &[AdvHeadParams],
    specs: &[AttributeSpec],
    x: &Array,
    targets: &TargetTable,
    beta: f64,
    dropout_keep: f64,
    noise: u64,
    eps: f64,
) -> Result<f64> {
    if heads.len() != specs.len() {
        return Err(Error::Dimension(format!(
            "{} heads for {} attribute specs",
            heads.len(),
            specs.len()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::Config(format!("eps must be positive, got {eps}")));
    }
    let mut params: Vec<Array> = model.named().into_iter().map(|(_, a)| a.clone()).collect();
    let n_model = params.len();
    for h in heads {
        params.extend(h.named().into_iter().map(|(_, a)| a.clone()));
    }
    let activation = model.config.activation;
    let eval = |values: &[Array]| -> Result<(Tape, Vec<Var>, Objective)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|p| tape.leaf(p.clone())).collect();
        let model_vars = ModelVars::from_vars(&vars[..n_model], activation)?;
        let bound: Vec<(HeadVars, &AttributeSpec)> = heads
            .iter()
            .zip(specs)
            .enumerate()
            .map(|(k, (h, spec))| {
                let v = &vars[n_model + 4 * k..n_model + 4 * k + 4];
                let head = HeadVars {
                    hidden: LinearVars { weight: v[0], bias: v[1] },
                    output: LinearVars { weight: v[2], bias: v[3] },
                    activation: h.activation,
                };
                (head, spec)
            })
            .collect();
        let mut rng = stream_rng(noise, Stream::ModelNoise);
        let obj = total_objective(
            &mut tape, x, targets, &model_vars, &bound, beta, dropout_keep, &mut rng,
        )?;
        Ok((tape, vars, obj))
    };
    let surrogate = |tape: &Tape, obj: &Objective, recommender: bool| -> f64 {
        let mut value = tape.value(obj.vae.loss).item();
        for (term, spec) in obj.adversarial.terms.iter().zip(specs) {
            let l = tape.value(*term).item();
            value += if recommender { -spec.lambda * l } else { l };
        }
        value
    };

    let (tape, vars, obj) = eval(&params)?;
    let grads = tape.backward(obj.total)?;
    let analytic: Vec<Array> = vars.iter().map(|v| grads.wrt(*v)).collect();

    let mut worst: f64 = 0.0;
    let mut coordinate = 0;
    let mut probe = params.clone();
    for (pi, param) in params.iter().enumerate() {
        let recommender = pi < n_model;
        for j in 0..param.len() {
            let orig = param.data()[j];
            probe[pi].data_mut()[j] = orig + eps;
            let (t, _, o) = eval(&probe)?;
            let f_plus = surrogate(&t, &o, recommender);
            probe[pi].data_mut()[j] = orig - eps;
            let (t, _, o) = eval(&probe)?;
            let f_minus = surrogate(&t, &o, recommender);
            probe[pi].data_mut()[j] = orig;
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(Error::FiniteDifference { coordinate });
            }
            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = analytic[pi].data()[j];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
            coordinate += 1;
        }
    }
    Ok(worst)
}

/// A standalone attacker for one attribute, with its own optimizer state.
#[derive(Clone, Debug)]
pub struct Attacker {
    pub spec: AttributeSpec,
    pub head: AdvHeadParams,
    pub optimizer: Adam,
}

impl Attacker {
    pub fn new(spec: AttributeSpec, head: AdvHeadParams, optimizer: Adam) -> Self {
        Self {
            spec,
            head,
            optimizer,
        }
    }

    /// One optimizer step on precomputed latent means. Returns the loss.
    pub fn step_on_latents(
        &mut self,
        latents: &Array,
        targets: &AttributeTargets,
        batch: usize,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let z = tape.constant(latents.clone());
        let vars = self.head.bind(&mut tape, true);
        let pred = adv_forward(&mut tape, z, &vars, &self.spec, false)?;
        let loss = attribute_loss(&mut tape, pred, &self.spec, targets)?;
        let value = tape.value(loss).item();
        let mut grads = tape.backward(loss)?;
        let g: Vec<Array> = vars.vars().into_iter().map(|v| grads.take(v)).collect();
        self.optimizer.step(&mut self.head, g, batch)?;
        Ok(value)
    }
}

/// One attacker update against a frozen recommender: latents are the
/// encoder means of `x` (no dropout, no sampling). Only attacker parameters
/// change. Returns the summed attacker loss.
pub fn attacker_step(
    model: &MultVae,
    x: &Array,
    targets: &TargetTable,
    attackers: &mut [Attacker],
    batch: usize,
) -> Result<f64> {
    if !model.is_frozen() {
        return Err(Error::Contract(
            "attackers must run against a frozen encoder".into(),
        ));
    }
    let latents = model.latent_means(x)?;
    let mut total = 0.0;
    for attacker in attackers.iter_mut() {
        let t = targets.get(&attacker.spec.name).ok_or_else(|| {
            Error::Data(format!(
                "no target column for attribute `{}`",
                attacker.spec.name
            ))
        })?;
        total += attacker.step_on_latents(&latents, t, batch)?;
    }
    Ok(total)
}
