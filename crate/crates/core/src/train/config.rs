use crate::adversarial::LambdaConfig;
use crate::autodiff::GrlSpec;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::params::Activation;
use crate::rng::Seeds;

use super::adam::AdamConfig;

/// Everything that determines a training run besides the data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs_adversarial: usize,
    pub epochs_attack: usize,
    pub batch_size: usize,
    pub beta_max: f64,
    /// Updates over which β rises linearly from 0 to `beta_max`.
    pub anneal_steps: usize,
    pub adam: AdamConfig,
    pub lambdas: LambdaConfig,
    pub seeds: Seeds,
    /// Attributes with adversarial heads and attackers, in head order.
    pub attributes: Vec<String>,
    pub hidden: usize,
    pub latent: usize,
    pub activation: Activation,
    pub dropout_keep: f64,
    /// Hidden width of adversarial heads and attackers.
    pub adv_hidden: usize,
    /// Share of each evaluation user's items held out for ranking.
    pub holdout_ratio: f64,
    /// Optional global gradient-norm cap for the recommender.
    pub grad_clip: Option<f64>,
    /// Keep the epoch with the best validation NDCG@10 instead of the last.
    pub select_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_adversarial: 200,
            epochs_attack: 50,
            batch_size: 64,
            beta_max: 0.4,
            anneal_steps: 10_000,
            adam: AdamConfig::default(),
            lambdas: LambdaConfig::new().with("gender", 0.0).with("age", 0.0),
            seeds: Seeds::default(),
            attributes: vec!["gender".into(), "age".into()],
            hidden: 600,
            latent: 200,
            activation: Activation::Tanh,
            dropout_keep: 0.5,
            adv_hidden: 128,
            holdout_ratio: 0.2,
            grad_clip: None,
            select_best: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_adversarial == 0 || self.epochs_attack == 0 {
            return Err(Error::Config("epoch counts must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(self.beta_max >= 0.0) {
            return Err(Error::Config(format!("beta_max must be >= 0, got {}", self.beta_max)));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(Error::Config(format!("invalid Adam settings {a:?}")));
        }
        if self.adv_hidden == 0 {
            return Err(Error::Config("adversary hidden width must be positive".into()));
        }
        if !(self.holdout_ratio > 0.0 && self.holdout_ratio < 1.0) {
            return Err(Error::Config(format!(
                "holdout ratio must lie in (0, 1), got {}",
                self.holdout_ratio
            )));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad clip must be positive, got {c}")));
            }
        }
        let mut seen = self.attributes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.attributes.len() {
            return Err(Error::Config("attributes listed twice".into()));
        }
        for (name, lambda) in self.lambdas.iter() {
            GrlSpec::new(lambda)?;
            if !self.attributes.iter().any(|a| a == name) {
                return Err(Error::Config(format!(
                    "lambda given for `{name}`, which is not a configured attribute"
                )));
            }
        }
        self.model_config(1).validate()
    }

    pub fn model_config(&self, n_items: usize) -> ModelConfig {
        ModelConfig {
            n_items,
            hidden: self.hidden,
            latent: self.latent,
            activation: self.activation,
            dropout_keep: self.dropout_keep,
        }
    }

    /// λ of `attribute`, zero when unset.
    pub fn lambda(&self, attribute: &str) -> f64 {
        self.lambdas.get(attribute).unwrap_or(0.0)
    }

    /// β after `step` updates.
    pub fn beta(&self, step: u64) -> f64 {
        if self.anneal_steps == 0 {
            return self.beta_max;
        }
        self.beta_max * (step as f64 / self.anneal_steps as f64).min(1.0)
    }

    /// Model label by which attributes are being removed: `MultVAE`,
    /// `AdvMultVAE-G`, `AdvMultVAE-A`, or `AdvXMultVAE` for several.
    pub fn model_name(&self) -> String {
        let active: Vec<&String> = self
            .attributes
            .iter()
            .filter(|a| self.lambda(a) > 0.0)
            .collect();
        match active.as_slice() {
            [] => "MultVAE".into(),
            [one] => {
                let initial: String = one.chars().take(1).flat_map(char::to_uppercase).collect();
                format!("AdvMultVAE-{initial}")
            }
            _ => "AdvXMultVAE".into(),
        }
    }

    /// `key=value` lines describing every field, in a stable order.
    pub fn to_manifest(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("train.epochs_adversarial".into(), self.epochs_adversarial.to_string()),
            ("train.epochs_attack".into(), self.epochs_attack.to_string()),
            ("train.batch_size".into(), self.batch_size.to_string()),
            ("train.beta_max".into(), format!("{:?}", self.beta_max)),
            ("train.anneal_steps".into(), self.anneal_steps.to_string()),
            ("train.lr".into(), format!("{:?}", self.adam.lr)),
            ("train.adam_beta1".into(), format!("{:?}", self.adam.beta1)),
            ("train.adam_beta2".into(), format!("{:?}", self.adam.beta2)),
            ("train.adam_epsilon".into(), format!("{:?}", self.adam.epsilon)),
            ("train.holdout_ratio".into(), format!("{:?}", self.holdout_ratio)),
            (
                "train.grad_clip".into(),
                self.grad_clip.map(|c| format!("{c:?}")).unwrap_or_else(|| "none".into()),
            ),
            ("train.select_best".into(), self.select_best.to_string()),
            ("model.hidden".into(), self.hidden.to_string()),
            ("model.latent".into(), self.latent.to_string()),
            ("model.activation".into(), self.activation.as_str().into()),
            ("model.dropout_keep".into(), format!("{:?}", self.dropout_keep)),
            ("adversary.hidden".into(), self.adv_hidden.to_string()),
            ("adversary.attributes".into(), self.attributes.join(",")),
            ("seed.model".into(), self.seeds.model.to_string()),
            ("seed.data".into(), self.seeds.data.to_string()),
            ("seed.adversary".into(), self.seeds.adversary.to_string()),
        ];
        for a in &self.attributes {
            out.push((format!("lambda.{a}"), format!("{:?}", self.lambda(a))));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!(c.epochs_adversarial, 200);
        assert_eq!(c.epochs_attack, 50);
        c.validate().unwrap();
    }

    #[test]
    fn beta_anneals_linearly() {
        let c = TrainConfig::default();
        assert_eq!(c.beta(0), 0.0);
        assert!((c.beta(5_000) - 0.2).abs() < 1e-15);
        assert_eq!(c.beta(10_000), 0.4);
        assert_eq!(c.beta(50_000), 0.4);
    }

    #[test]
    fn naming_follows_active_attributes() {
        let mut c = TrainConfig::default();
        assert_eq!(c.model_name(), "MultVAE");
        c.lambdas.set("gender", 400.0);
        assert_eq!(c.model_name(), "AdvMultVAE-G");
        c.lambdas.set("gender", 0.0);
        c.lambdas.set("age", 1.0);
        assert_eq!(c.model_name(), "AdvMultVAE-A");
        c.lambdas.set("gender", 200.0);
        assert_eq!(c.model_name(), "AdvXMultVAE");
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let c = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.lambdas.set("country", 1.0);
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.lambdas.set("age", -1.0);
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
