//! Parameter containers shared by the recommender and the adversarial heads.

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::array::Array;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// A fully connected layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Array,
    pub bias: Array,
}

impl Linear {
    /// Weights uniform in `±1/sqrt(fan_in)`, zero biases.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            weight: Array::new(vec![fan_in, fan_out], data).expect("shape matches"),
            bias: Array::zeros(&[fan_out]),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array::zeros(&[fan_in, fan_out]),
            bias: Array::zeros(&[fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Records the layer's parameters on `tape`. Frozen layers are recorded
    /// as constants and receive no gradient.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> LinearVars {
        let (weight, bias) = if trainable {
            (tape.leaf(self.weight.clone()), tape.leaf(self.bias.clone()))
        } else {
            (
                tape.constant(self.weight.clone()),
                tape.constant(self.bias.clone()),
            )
        };
        LinearVars { weight, bias }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl LinearVars {
    pub fn forward(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        tape.dense(input, self.weight, self.bias)
    }

    pub fn vars(&self) -> [Var; 2] {
        [self.weight, self.bias]
    }
}

/// A named, ordered collection of trainable arrays.
///
/// `named` and `arrays_mut` must enumerate the same arrays in the same order;
/// optimizers and checkpoints rely on it.
pub trait Parameters {
    fn named(&self) -> Vec<(String, &Array)>;

    fn arrays_mut(&mut self) -> Vec<&mut Array>;

    fn is_frozen(&self) -> bool {
        false
    }

    /// SHA-256 over names, shapes and the exact bit patterns of all values.
    fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, array) in self.named() {
            hasher.update(name.as_bytes());
            for d in array.shape() {
                hasher.update((*d as u64).to_le_bytes());
            }
            for v in array.data() {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hex(&hasher.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn push_linear<'a>(out: &mut Vec<(String, &'a Array)>, prefix: &str, l: &'a Linear) {
    out.push((format!("{prefix}.weight"), &l.weight));
    out.push((format!("{prefix}.bias"), &l.bias));
}
