//! Adam with bias correction.

use crate::array::Array;
use crate::error::{Error, Result};
use crate::params::Parameters;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Array>,
    v: Vec<Array>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            ..Self::default()
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads` follow [`Parameters::named`] order; `batch`
    /// is only used to label errors.
    pub fn step(
        &mut self,
        params: &mut dyn Parameters,
        grads: Vec<Array>,
        batch: usize,
    ) -> Result<()> {
        if params.is_frozen() {
            return Err(Error::Contract(
                "refusing to update frozen parameters".into(),
            ));
        }
        let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
        if grads.len() != names.len() {
            return Err(Error::Dimension(format!(
                "{} gradients for {} parameters",
                grads.len(),
                names.len()
            )));
        }
        for (name, g) in names.iter().zip(&grads) {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    param: name.clone(),
                    batch,
                });
            }
        }
        let mut arrays = params.arrays_mut();
        for ((name, p), g) in names.iter().zip(arrays.iter()).zip(&grads) {
            if p.shape() != g.shape() {
                return Err(Error::Dimension(format!(
                    "gradient for `{name}` has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        if self.m.is_empty() {
            self.m = arrays.iter().map(|p| Array::zeros(p.shape())).collect();
            self.v = self.m.clone();
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in arrays
            .iter_mut()
            .zip(&grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            for (i, &gi) in g.data().iter().enumerate() {
                let mi = &mut m.data_mut()[i];
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                let vi = &mut v.data_mut()[i];
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = m.data()[i] / c1;
                let v_hat = v.data()[i] / c2;
                pd[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [Array], max_norm: f64) {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}
