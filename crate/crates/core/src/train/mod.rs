//! Optimizer, the removal and attack phases, and the λ grid driver.

pub mod adam;
mod config;
mod grid;
mod phases;

pub use adam::{Adam, AdamConfig};
pub use config::TrainConfig;
pub use grid::{
    config_for, grid_search, Comparison, GridResult, GridSpec, GridSummary, RunSummary,
    Selection, UnitResult, DEFAULT_LAMBDAS,
};
pub use phases::{
    evaluate_attackers, evaluate_ranking, fold_specs, latent_means_of, run_fold, train_adversarial_phase,
    train_attack_phase, AdversarialOutput, AttackOutput, AttackPredictions, AttackScores, EpochLog,
    RankingScores, RunOutput,
};
