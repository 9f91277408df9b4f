//! The multinomial variational autoencoder recommender.
//!
//! Encoder: L2-normalized interactions, input dropout, one hidden layer, then
//! separate linear heads for the Gaussian mean and log standard deviation.
//! Decoder: one hidden layer, then a linear layer producing item logits.
//! The loss minimized is `NLL + β·KL`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::array::Array;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{push_linear, Activation, Linear, LinearVars, Parameters};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub n_items: usize,
    pub hidden: usize,
    pub latent: usize,
    pub activation: Activation,
    /// Keep probability of input dropout during training.
    pub dropout_keep: f64,
}

impl ModelConfig {
    pub fn new(n_items: usize) -> Self {
        Self {
            n_items,
            hidden: 600,
            latent: 200,
            activation: Activation::Tanh,
            dropout_keep: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_items == 0 || self.hidden == 0 || self.latent == 0 {
            return Err(Error::Config(format!(
                "model widths must be positive (items {}, hidden {}, latent {})",
                self.n_items, self.hidden, self.latent
            )));
        }
        check_keep(self.dropout_keep)
    }
}

fn check_keep(keep: f64) -> Result<()> {
    if !(keep > 0.0 && keep <= 1.0) {
        return Err(Error::Config(format!(
            "dropout keep probability must be in (0, 1], got {keep}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub hidden: Linear,
    pub mu: Linear,
    pub logsigma: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    pub hidden: Linear,
    pub output: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultVae {
    pub config: ModelConfig,
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
    frozen: bool,
}

impl MultVae {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (n, h, d) = (config.n_items, config.hidden, config.latent);
        let encoder = EncoderParams {
            hidden: Linear::init(n, h, rng),
            mu: Linear::init(h, d, rng),
            logsigma: Linear::init(h, d, rng),
        };
        let decoder = DecoderParams {
            hidden: Linear::init(d, h, rng),
            output: Linear::init(h, n, rng),
        };
        Ok(Self {
            config,
            encoder,
            decoder,
            frozen: false,
        })
    }

    /// Marks the model read-only; optimizers refuse to update it afterwards.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ModelVars {
        ModelVars {
            encoder: EncoderVars {
                hidden: self.encoder.hidden.bind(tape, trainable),
                mu: self.encoder.mu.bind(tape, trainable),
                logsigma: self.encoder.logsigma.bind(tape, trainable),
            },
            decoder: DecoderVars {
                hidden: self.decoder.hidden.bind(tape, trainable),
                output: self.decoder.output.bind(tape, trainable),
            },
            activation: self.config.activation,
        }
    }

    /// Encoder means for `x`, without dropout or sampling.
    pub fn latent_means(&self, x: &Array) -> Result<Array> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let state = encode(&mut tape, &vars, x, 1.0, &mut NoRandomness)?;
        Ok(tape.value(state.mu).clone())
    }

    /// Item scores (decoder logits at `z = mu`).
    pub fn scores(&self, x: &Array) -> Result<Array> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let state = encode(&mut tape, &vars, x, 1.0, &mut NoRandomness)?;
        let logits = decode(&mut tape, &vars, state.mu)?;
        Ok(tape.value(logits).clone())
    }
}

impl Parameters for MultVae {
    fn named(&self) -> Vec<(String, &Array)> {
        let mut out = Vec::with_capacity(10);
        push_linear(&mut out, "encoder.hidden", &self.encoder.hidden);
        push_linear(&mut out, "encoder.mu", &self.encoder.mu);
        push_linear(&mut out, "encoder.logsigma", &self.encoder.logsigma);
        push_linear(&mut out, "decoder.hidden", &self.decoder.hidden);
        push_linear(&mut out, "decoder.output", &self.decoder.output);
        out
    }

    fn arrays_mut(&mut self) -> Vec<&mut Array> {
        let e = &mut self.encoder;
        let d = &mut self.decoder;
        vec![
            &mut e.hidden.weight,
            &mut e.hidden.bias,
            &mut e.mu.weight,
            &mut e.mu.bias,
            &mut e.logsigma.weight,
            &mut e.logsigma.bias,
            &mut d.hidden.weight,
            &mut d.hidden.bias,
            &mut d.output.weight,
            &mut d.output.bias,
        ]
    }

    fn is_frozen(&self) -> bool {
        self.frozen
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub hidden: LinearVars,
    pub mu: LinearVars,
    pub logsigma: LinearVars,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderVars {
    pub hidden: LinearVars,
    pub output: LinearVars,
}

/// A [`MultVae`] recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ModelVars {
    pub encoder: EncoderVars,
    pub decoder: DecoderVars,
    pub activation: Activation,
}

impl ModelVars {
    /// Rebuilds the structure from variables in [`ModelVars::vars`] order.
    pub fn from_vars(v: &[Var], activation: Activation) -> Result<Self> {
        if v.len() != 10 {
            return Err(Error::Dimension(format!(
                "a MultVAE has 10 parameter arrays, got {}",
                v.len()
            )));
        }
        let lin = |i: usize| LinearVars {
            weight: v[i],
            bias: v[i + 1],
        };
        Ok(Self {
            encoder: EncoderVars {
                hidden: lin(0),
                mu: lin(2),
                logsigma: lin(4),
            },
            decoder: DecoderVars {
                hidden: lin(6),
                output: lin(8),
            },
            activation,
        })
    }

    /// Parameter variables in [`Parameters::named`] order.
    pub fn vars(&self) -> Vec<Var> {
        let e = &self.encoder;
        let d = &self.decoder;
        [e.hidden, e.mu, e.logsigma, d.hidden, d.output]
            .iter()
            .flat_map(LinearVars::vars)
            .collect()
    }
}

/// Gaussian posterior parameters and (once sampled) the latent code.
#[derive(Clone, Copy, Debug)]
pub struct LatentState {
    pub mu: Var,
    pub logsigma: Var,
    pub z: Option<Var>,
}

/// Validates a binary batch, L2-normalizes each non-empty row, and applies
/// inverted input dropout when `dropout_keep < 1`.
pub fn prepare_input<R: Rng + ?Sized>(x: &Array, dropout_keep: f64, rng: &mut R) -> Result<Array> {
    check_keep(dropout_keep)?;
    x.expect_matrix()?;
    if let Some(pos) = x.data().iter().position(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::Contract(format!(
            "interaction input must be binary; found {} at row {}",
            x.data()[pos],
            pos / x.cols().max(1)
        )));
    }
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    if dropout_keep < 1.0 {
        let inv = 1.0 / dropout_keep;
        for v in out.data_mut() {
            let keep = rng.random::<f64>() < dropout_keep;
            *v = if keep { *v * inv } else { 0.0 };
        }
    }
    Ok(out)
}

pub fn encode<R: Rng + ?Sized>(
    tape: &mut Tape,
    vars: &ModelVars,
    x: &Array,
    dropout_keep: f64,
    rng: &mut R,
) -> Result<LatentState> {
    let input = prepare_input(x, dropout_keep, rng)?;
    let input = tape.constant(input);
    let enc = &vars.encoder;
    let h = enc.hidden.forward(tape, input)?;
    let h = vars.activation.apply(tape, h);
    let mu = enc.mu.forward(tape, h)?;
    let logsigma = enc.logsigma.forward(tape, h)?;
    Ok(LatentState {
        mu,
        logsigma,
        z: None,
    })
}

/// `z = mu + exp(logsigma) ⊙ ε` when training, otherwise `z = mu`.
pub fn reparameterize<R: Rng + ?Sized>(
    tape: &mut Tape,
    state: &mut LatentState,
    rng: &mut R,
    training: bool,
) -> Result<Var> {
    tape.value(state.mu)
        .expect_same_shape(tape.value(state.logsigma))?;
    let z = if training {
        let shape = tape.value(state.mu).shape().to_vec();
        let n = tape.value(state.mu).len();
        let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let eps = tape.constant(Array::new(shape, eps)?);
        let sigma = tape.exp(state.logsigma);
        let noise = tape.mul(sigma, eps)?;
        tape.add(state.mu, noise)?
    } else {
        state.mu
    };
    state.z = Some(z);
    Ok(z)
}

pub fn decode(tape: &mut Tape, vars: &ModelVars, z: Var) -> Result<Var> {
    let dec = &vars.decoder;
    let width = tape.value(dec.hidden.weight).shape()[0];
    if tape.value(z).cols() != width {
        return Err(Error::Dimension(format!(
            "decoder expects latent width {width}, got shape {:?}",
            tape.value(z).shape()
        )));
    }
    let h = dec.hidden.forward(tape, z)?;
    let h = vars.activation.apply(tape, h);
    dec.output.forward(tape, h)
}

pub fn multinomial_nll(tape: &mut Tape, logits: Var, x: Var) -> Result<Var> {
    tape.multinomial_nll(logits, x)
}

pub fn kl_gaussian(tape: &mut Tape, mu: Var, logsigma: Var) -> Result<Var> {
    tape.kl_gaussian(mu, logsigma)
}

/// The recommender's loss terms recorded on one tape.
#[derive(Clone, Copy, Debug)]
pub struct VaeLoss {
    pub loss: Var,
    pub nll: Var,
    pub kl: Var,
    pub latent: LatentState,
    pub z: Var,
}

/// `NLL + β·KL` for one training batch (dropout and sampling active).
pub fn multvae_loss<R: Rng + ?Sized>(
    tape: &mut Tape,
    vars: &ModelVars,
    x: &Array,
    beta: f64,
    dropout_keep: f64,
    rng: &mut R,
) -> Result<VaeLoss> {
    if !(beta >= 0.0) {
        return Err(Error::Config(format!("beta must be >= 0, got {beta}")));
    }
    let mut latent = encode(tape, vars, x, dropout_keep, rng)?;
    let z = reparameterize(tape, &mut latent, rng, true)?;
    let logits = decode(tape, vars, z)?;
    let target = tape.constant(x.clone());
    let nll = multinomial_nll(tape, logits, target)?;
    let kl = kl_gaussian(tape, latent.mu, latent.logsigma)?;
    let weighted = tape.scale(kl, beta);
    let loss = tape.add(nll, weighted)?;
    Ok(VaeLoss {
        loss,
        nll,
        kl,
        latent,
        z,
    })
}

/// An RNG for code paths that must not draw. Panics if used.
pub(crate) struct NoRandomness;

impl rand::RngCore for NoRandomness {
    fn next_u32(&mut self) -> u32 {
        unreachable!("evaluation path drew a random number")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("evaluation path drew a random number")
    }
    fn fill_bytes(&mut self, _dst: &mut [u8]) {
        unreachable!("evaluation path drew a random number")
    }
}
