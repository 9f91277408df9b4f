use rand::seq::SliceRandom;

use super::adam::{clip_global_norm, Adam};
use super::config::TrainConfig;
use crate::adversarial::{
    total_objective, AdvHeadParams, Attacker, AttributeKind, AttributeSpec, AttributeTargets,
};
use crate::array::Array;
use crate::autodiff::Tape;
use crate::data::{dense_rows, Dataset, EvalUsers, FoldSplit, InteractionDataset};
use crate::error::{Error, Result};
use crate::eval::{argmax_rows, balanced_accuracy, mae, ndcg_at_k, recall_at_k, top_k, FoldMetrics, TOP_K};
use crate::model::MultVae;
use crate::params::Parameters;
use crate::rng::{stream_rng, Stream};

/// Users per forward pass when scoring without gradients.
const EVAL_CHUNK: usize = 256;

/// Mean losses of one epoch of the removal phase.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// β at the last update of the epoch.
    pub beta: f64,
    pub mult_loss: f64,
    pub adv_losses: Vec<(String, f64)>,
    pub val_ndcg: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct AdversarialOutput {
    pub model: MultVae,
    pub heads: Vec<AdvHeadParams>,
    pub specs: Vec<AttributeSpec>,
    pub log: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept.
    pub selected_epoch: usize,
    pub selected_val_ndcg: Option<f64>,
    pub steps: u64,
}

/// Attribute specs for a fold: class weights from its training users and λ
/// from the configuration.
pub fn fold_specs(ds: &Dataset, split: &FoldSplit, config: &TrainConfig) -> Result<Vec<AttributeSpec>> {
    let mut specs = ds.attributes.specs(&config.attributes, &split.train)?;
    for s in &mut specs {
        s.lambda = config.lambda(&s.name);
        s.validate()?;
    }
    Ok(specs)
}

/// Minimizes `L_MULT + Σ_k L_adv_k` over shuffled batches of training users.
pub fn train_adversarial_phase(
    ds: &Dataset,
    split: &FoldSplit,
    config: &TrainConfig,
) -> Result<AdversarialOutput> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::Data("fold has no training users".into()));
    }
    let seeds = config.seeds;
    let specs = fold_specs(ds, split, config)?;
    let mut model = MultVae::new(
        config.model_config(ds.n_items()),
        &mut stream_rng(seeds.model, Stream::ModelInit),
    )?;
    let mut adv_rng = stream_rng(seeds.adversary, Stream::AdversaryInit);
    let mut heads: Vec<AdvHeadParams> = specs
        .iter()
        .map(|s| AdvHeadParams::new(s, config.latent, config.adv_hidden, config.activation, &mut adv_rng))
        .collect();
    let mut noise = stream_rng(seeds.model, Stream::ModelNoise);
    let mut shuffle = stream_rng(seeds.data, Stream::Shuffle);
    let validation = EvalUsers::build(
        &ds.interactions,
        &split.validation,
        config.holdout_ratio,
        seeds.data,
        split.fold,
    )?;

    let mut model_opt = Adam::new(config.adam);
    let mut head_opts: Vec<Adam> = heads.iter().map(|_| Adam::new(config.adam)).collect();
    let mut log = Vec::with_capacity(config.epochs_adversarial);
    let mut best: Option<(f64, usize, MultVae, Vec<AdvHeadParams>)> = None;
    let mut step: u64 = 0;
    let mut order = split.train.clone();

    for epoch in 1..=config.epochs_adversarial {
        order.shuffle(&mut shuffle);
        let mut mult_sum = 0.0;
        let mut adv_sums = vec![0.0; heads.len()];
        let mut n_batches = 0usize;
        let mut beta = config.beta(step);
        for (b, users) in order.chunks(config.batch_size).enumerate() {
            beta = config.beta(step);
            let x = ds.interactions.batch(users);
            let targets = ds.attributes.targets(&config.attributes, users)?;
            let mut tape = Tape::new();
            let mv = model.bind(&mut tape, true);
            let hv: Vec<_> = heads.iter().map(|h| h.bind(&mut tape, true)).collect();
            let pairs: Vec<_> = hv.iter().copied().zip(specs.iter()).collect();
            let obj = total_objective(
                &mut tape,
                &x,
                &targets,
                &mv,
                &pairs,
                beta,
                config.dropout_keep,
                &mut noise,
            )?;
            check_finite(tape.value(obj.total).item(), epoch, b)?;
            mult_sum += tape.value(obj.vae.loss).item();
            for (s, t) in adv_sums.iter_mut().zip(&obj.adversarial.terms) {
                *s += tape.value(*t).item();
            }
            let mut grads = tape.backward(obj.total)?;
            let mut g: Vec<Array> = mv.vars().into_iter().map(|v| grads.take(v)).collect();
            if let Some(c) = config.grad_clip {
                clip_global_norm(&mut g, c);
            }
            model_opt.step(&mut model, g, b)?;
            for ((head, opt), vars) in heads.iter_mut().zip(&mut head_opts).zip(&hv) {
                let g: Vec<Array> = vars.vars().into_iter().map(|v| grads.take(v)).collect();
                opt.step(head, g, b)?;
            }
            step += 1;
            n_batches += 1;
        }
        let val_ndcg = if validation.is_empty() {
            None
        } else {
            Some(evaluate_ranking(&model, &ds.interactions, &validation)?.mean_ndcg())
        };
        let n = n_batches.max(1) as f64;
        log::debug!(
            "epoch {epoch}: L_MULT {:.5} val NDCG@10 {:?}",
            mult_sum / n,
            val_ndcg
        );
        log.push(EpochLog {
            epoch,
            beta,
            mult_loss: mult_sum / n,
            adv_losses: specs
                .iter()
                .zip(&adv_sums)
                .map(|(s, v)| (s.name.clone(), v / n))
                .collect(),
            val_ndcg,
        });
        if config.select_best {
            if let Some(v) = val_ndcg {
                if best.as_ref().is_none_or(|(b, ..)| v > *b) {
                    best = Some((v, epoch, model.clone(), heads.clone()));
                }
            }
        }
    }

    let last = config.epochs_adversarial;
    let (selected_epoch, selected_val_ndcg, model, heads) = match best {
        Some((v, e, m, h)) => (e, Some(v), m, h),
        None => (last, log.last().and_then(|l| l.val_ndcg), model, heads),
    };
    Ok(AdversarialOutput {
        model,
        heads,
        specs,
        log,
        selected_epoch,
        selected_val_ndcg,
        steps: step,
    })
}

fn check_finite(loss: f64, epoch: usize, batch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { epoch, batch, loss })
    }
}

/// Per-user ranking scores of evaluation users.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RankingScores {
    pub users: Vec<usize>,
    pub ndcg: Vec<f64>,
    pub recall: Vec<f64>,
}

impl RankingScores {
    pub fn mean_ndcg(&self) -> f64 {
        mean(&self.ndcg)
    }

    pub fn mean_recall(&self) -> f64 {
        mean(&self.recall)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Ranks all items not in each user's fold-in set and scores the top 10
/// against the holdout.
pub fn evaluate_ranking(
    model: &MultVae,
    ds: &InteractionDataset,
    eval: &EvalUsers,
) -> Result<RankingScores> {
    let mut out = RankingScores::default();
    for start in (0..eval.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(eval.len());
        let rows: Vec<&[u32]> = eval.fold_in[start..end].iter().map(Vec::as_slice).collect();
        let scores = model.scores(&dense_rows(&rows, ds.n_items()))?;
        for (r, idx) in (start..end).enumerate() {
            let ranked = top_k(scores.row(r), &eval.fold_in[idx], TOP_K);
            let holdout = &eval.holdout[idx];
            let fold_in = &eval.fold_in[idx];
            if let (Some(n), Some(rc)) = (
                ndcg_at_k(&ranked, holdout, fold_in, TOP_K)?,
                recall_at_k(&ranked, holdout, fold_in, TOP_K)?,
            ) {
                out.users.push(eval.users[idx]);
                out.ndcg.push(n);
                out.recall.push(rc);
            }
        }
    }
    Ok(out)
}

/// Encoder means of `users` (full interaction rows), stacked.
pub fn latent_means_of(model: &MultVae, ds: &InteractionDataset, users: &[usize]) -> Result<Array> {
    let mut data = Vec::with_capacity(users.len() * model.config.latent);
    for chunk in users.chunks(EVAL_CHUNK) {
        data.extend_from_slice(model.latent_means(&ds.batch(chunk))?.data());
    }
    Array::matrix(users.len(), model.config.latent, data)
}

/// Test-user predictions of one attacker.
#[derive(Clone, Debug, PartialEq)]
pub enum AttackPredictions {
    Classes { predicted: Vec<usize>, truth: Vec<usize> },
    Values { predicted: Vec<f64>, truth: Vec<f64> },
}

#[derive(Clone, Debug)]
pub struct AttackOutput {
    pub attackers: Vec<Attacker>,
    pub test_users: Vec<usize>,
    /// One entry per attacker, aligned with `test_users`.
    pub predictions: Vec<AttackPredictions>,
    pub bacc: Vec<(String, f64)>,
    pub mae: Vec<(String, f64)>,
    /// Checksum of the recommender before and after the phase.
    pub checksum_before: String,
    pub checksum_after: String,
}

/// Trains one fresh attacker per attribute on the frozen encoder's means of
/// the training users, then scores the test users.
pub fn train_attack_phase(
    model: &MultVae,
    ds: &Dataset,
    split: &FoldSplit,
    specs: &[AttributeSpec],
    config: &TrainConfig,
) -> Result<AttackOutput> {
    if !model.is_frozen() {
        return Err(Error::Contract(
            "the attack phase needs a frozen recommender".into(),
        ));
    }
    config.validate()?;
    let checksum_before = model.checksum();
    let names: Vec<String> = specs.iter().map(|s| s.name.clone()).collect();
    let train_latents = latent_means_of(model, &ds.interactions, &split.train)?;
    let train_targets = ds.attributes.targets(&names, &split.train)?;

    let mut rng = stream_rng(config.seeds.adversary, Stream::Attacker);
    let mut attackers: Vec<Attacker> = specs
        .iter()
        .map(|s| {
            let head = AdvHeadParams::new(s, config.latent, config.adv_hidden, config.activation, &mut rng);
            Attacker::new(s.clone(), head, Adam::new(config.adam))
        })
        .collect();
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    for _ in 0..config.epochs_attack {
        order.shuffle(&mut rng);
        for (b, pos) in order.chunks(config.batch_size).enumerate() {
            let latents = train_latents.select_rows(pos);
            for attacker in attackers.iter_mut() {
                let t = train_targets[&attacker.spec.name].select(pos);
                attacker.step_on_latents(&latents, &t, b)?;
            }
        }
    }

    let scored = evaluate_attackers(model, ds, &split.test, &attackers)?;
    let checksum_after = model.checksum();
    if checksum_before != checksum_after {
        return Err(Error::Contract(
            "recommender parameters changed during the attack phase".into(),
        ));
    }
    Ok(AttackOutput {
        attackers,
        test_users: split.test.clone(),
        predictions: scored.predictions,
        bacc: scored.bacc,
        mae: scored.mae,
        checksum_before,
        checksum_after,
    })
}

/// Predictions and scores of trained attackers on `users`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackScores {
    /// One entry per attacker, aligned with `users`.
    pub predictions: Vec<AttackPredictions>,
    pub bacc: Vec<(String, f64)>,
    pub mae: Vec<(String, f64)>,
}

/// Applies each attacker to the encoder means of `users`.
pub fn evaluate_attackers(
    model: &MultVae,
    ds: &Dataset,
    users: &[usize],
    attackers: &[Attacker],
) -> Result<AttackScores> {
    let names: Vec<String> = attackers.iter().map(|a| a.spec.name.clone()).collect();
    let latents = latent_means_of(model, &ds.interactions, users)?;
    let targets = ds.attributes.targets(&names, users)?;
    let mut out = AttackScores {
        predictions: Vec::with_capacity(attackers.len()),
        bacc: Vec::new(),
        mae: Vec::new(),
    };
    for attacker in attackers {
        let name = attacker.spec.name.clone();
        let scores = attacker.head.predict(&attacker.spec, &latents)?;
        match (&attacker.spec.kind, &targets[&name]) {
            (AttributeKind::Categorical { n_classes }, AttributeTargets::Classes(truth)) => {
                let predicted = argmax_rows(scores.data(), *n_classes);
                out.bacc
                    .push((name, balanced_accuracy(&predicted, truth, *n_classes)?));
                out.predictions.push(AttackPredictions::Classes {
                    predicted,
                    truth: truth.clone(),
                });
            }
            (AttributeKind::Continuous, AttributeTargets::Values(truth)) => {
                let predicted = scores.data().to_vec();
                out.mae.push((name, mae(&predicted, truth)?));
                out.predictions.push(AttackPredictions::Values {
                    predicted,
                    truth: truth.clone(),
                });
            }
            _ => {
                return Err(Error::Data(format!(
                    "target kind does not match attribute `{name}`"
                )))
            }
        }
    }
    Ok(out)
}

/// Both phases plus test-set ranking for one fold.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub fold: usize,
    pub model_name: String,
    pub lambdas: Vec<(String, f64)>,
    pub adversarial: AdversarialOutput,
    pub attack: AttackOutput,
    pub test_ranking: RankingScores,
    pub metrics: FoldMetrics,
}

pub fn run_fold(ds: &Dataset, split: &FoldSplit, config: &TrainConfig) -> Result<RunOutput> {
    let mut adversarial = train_adversarial_phase(ds, split, config)?;
    adversarial.model.freeze();
    let attack = train_attack_phase(&adversarial.model, ds, split, &adversarial.specs, config)?;
    let test = EvalUsers::build(
        &ds.interactions,
        &split.test,
        config.holdout_ratio,
        config.seeds.data,
        split.fold,
    )?;
    let test_ranking = evaluate_ranking(&adversarial.model, &ds.interactions, &test)?;
    let metrics = FoldMetrics {
        fold: split.fold,
        ndcg: test_ranking.mean_ndcg(),
        recall: test_ranking.mean_recall(),
        bacc: attack.bacc.clone(),
        mae: attack.mae.clone(),
    };
    Ok(RunOutput {
        fold: split.fold,
        model_name: config.model_name(),
        lambdas: config
            .attributes
            .iter()
            .map(|a| (a.clone(), config.lambda(a)))
            .collect(),
        adversarial,
        attack,
        test_ranking,
        metrics,
    })
}
