//! Acceptance suite. Prints one line per criterion:
//!
//! ```text
//! PASS  4 synthetic debiasing: ...
//! ```
//!
//! Criteria 6 and 7 need the MovieLens-1M release files: set
//! `ADVX_ML1M_DIR` to a directory holding `ratings.dat` and `users.dat`.
//! Criterion 7 runs for hours and also needs `ADVX_ACCEPTANCE_EXTENDED=1`.
//! `ADVX_ACCEPTANCE_ONLY=1,2,5` restricts the run to the listed criteria.
//! A failing gating criterion makes the process exit nonzero only when
//! `ADVX_ACCEPTANCE_STRICT=1`.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use advx_cli::commands;
use advx_cli::config::{InputFormat, RunConfig};
use advx_core::adversarial::{joint_gradient_check, AdvHeadParams, AttributeSpec, AttributeTargets, LambdaConfig, TargetTable};
use advx_core::data::make_folds;
use advx_core::eval::{balanced_accuracy, mcnemar_from_counts, ndcg_at_k, paired_t_test, recall_at_k, wilcoxon_signed_rank};
use advx_core::model::{ModelConfig, MultVae};
use advx_core::params::{Activation, Parameters};
use advx_core::rng::{stream_rng, Seeds, Stream};
use advx_core::synthetic::SyntheticConfig;
use advx_core::train::{run_fold, train_adversarial_phase, TrainConfig};
use advx_core::{Array, GrlSpec, Tape};
use rand::Rng;

/// Tolerances and budgets, fixed before the first full run.
mod pinned {
    pub const GRADIENT_REL_ERR: f64 = 1e-4;
    pub const GRADIENT_SECONDS: u64 = 10;
    pub const EQUIVALENCE_SECONDS: u64 = 120;
    pub const BASELINE_BACC: f64 = 0.75;
    pub const BACC_DROP: f64 = 0.15;
    pub const MAE_RISE: f64 = 0.20;
    pub const JOINT_BACC_SLACK: f64 = 0.05;
    pub const JOINT_MAE_SLACK: f64 = 0.05;
    pub const NDCG_DROP: f64 = 0.10;
    pub const DEBIASING_SECONDS: u64 = 30 * 60;
    pub const WILCOXON_P: f64 = 0.01;
    pub const MCNEMAR_CHI2: f64 = 4.05;
    pub const T_STAT: f64 = 4.2426;
    pub const T_STAT_TOL: f64 = 1e-4;
    pub const T_P: f64 = 0.013;
    pub const T_P_TOL: f64 = 0.002;
    pub const ML1M_NDCG: f64 = 62.72;
    pub const ML1M_NDCG_TOL: f64 = 3.0;
    pub const ML1M_BACC: f64 = 69.81;
    pub const ML1M_BACC_TOL: f64 = 4.0;
}

enum Verdict {
    Pass,
    Fail,
    NotRun,
}

struct Outcome {
    id: usize,
    name: &'static str,
    verdict: Verdict,
    gating: bool,
    detail: String,
}

fn verdict(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

fn seconds(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

// 1. Gradient of the joint objective.

fn gradient_check() -> (Verdict, String) {
    let start = Instant::now();
    let mut rng = stream_rng(17, Stream::Generator);
    let mut data: Vec<f64> = (0..40).map(|_| f64::from(u8::from(rng.random::<f64>() < 0.4))).collect();
    for u in 0..5 {
        data[u * 8 + (u * 3) % 8] = 1.0;
    }
    let x = Array::matrix(5, 8, data).unwrap();
    let mut targets = TargetTable::new();
    targets.insert("gender".into(), AttributeTargets::Classes((0..5).map(|_| rng.random_range(0..2)).collect()));
    targets.insert("age".into(), AttributeTargets::Values((0..5).map(|_| rng.random::<f64>()).collect()));
    let specs = [
        AttributeSpec::categorical("gender", vec![0.8, 1.4], 1.0).unwrap(),
        AttributeSpec::continuous("age", 1.0).unwrap(),
    ];
    let config = ModelConfig {
        hidden: 6,
        latent: 3,
        dropout_keep: 0.8,
        ..ModelConfig::new(8)
    };
    let model = MultVae::new(config, &mut stream_rng(17, Stream::ModelInit)).unwrap();
    let mut head_rng = stream_rng(17, Stream::AdversaryInit);
    let heads: Vec<AdvHeadParams> = specs
        .iter()
        .map(|s| AdvHeadParams::new(s, 3, 5, Activation::Tanh, &mut head_rng))
        .collect();
    let err = joint_gradient_check(&model, &heads, &specs, &x, &targets, 0.4, 0.8, 5, 1e-5).unwrap();
    let elapsed = start.elapsed();
    let ok = err < pinned::GRADIENT_REL_ERR && elapsed < Duration::from_secs(pinned::GRADIENT_SECONDS);
    (verdict(ok), format!("max relative error {err:.2e}, {}", seconds(elapsed)))
}

// 2. Gradient reversal contract.

fn grl_contract() -> (Verdict, String) {
    let mut rng = stream_rng(2, Stream::Generator);
    let values: Vec<f64> = (0..64).map(|_| rng.random_range(-5.0..5.0)).collect();
    let upstream: Vec<f64> = (0..64).map(|_| rng.random_range(-5.0..5.0)).collect();
    let mut failures = Vec::new();
    for lambda in [0.0, 1.0, 200.0, 800.0] {
        let mut tape = Tape::new();
        let x = tape.leaf(Array::new(vec![64], values.clone()).unwrap());
        let y = tape.grl(x, GrlSpec::new(lambda).unwrap());
        let forward_exact = tape
            .value(y)
            .data()
            .iter()
            .zip(&values)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        let g = tape.constant(Array::new(vec![64], upstream.clone()).unwrap());
        let prod = tape.mul(y, g).unwrap();
        let loss = tape.sum(prod);
        let grad = tape.backward(loss).unwrap().wrt(x);
        let backward_exact = grad.data().iter().zip(&upstream).all(|(a, g)| *a == -lambda * g);
        if !(forward_exact && backward_exact) {
            failures.push(format!("λ={lambda} forward {forward_exact} backward {backward_exact}"));
        }
    }
    if failures.is_empty() {
        (Verdict::Pass, "identity forward, -λ·g backward for λ in {0, 1, 200, 800}".into())
    } else {
        (Verdict::Fail, failures.join("; "))
    }
}

// 3. λ = 0 reduces to the plain recommender.

fn zero_lambda_equivalence() -> (Verdict, String) {
    let start = Instant::now();
    let ds = SyntheticConfig {
        n_users: 500,
        n_items: 300,
        min_items: 20,
        max_items: 60,
        ..SyntheticConfig::acceptance()
    }
    .generate(3);
    let split = &make_folds(ds.n_users(), 3).unwrap()[0];
    let with_heads = TrainConfig {
        epochs_adversarial: 10,
        seeds: Seeds::uniform(3),
        ..TrainConfig::default()
    };
    let plain = TrainConfig {
        attributes: Vec::new(),
        lambdas: LambdaConfig::new(),
        ..with_heads.clone()
    };
    let a = train_adversarial_phase(&ds, split, &with_heads).unwrap();
    let b = train_adversarial_phase(&ds, split, &plain).unwrap();
    let mut differing = Vec::new();
    for ((name, x), (_, y)) in a.model.named().into_iter().zip(b.model.named()) {
        if !x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()) {
            differing.push(name);
        }
    }
    let elapsed = start.elapsed();
    let ok = differing.is_empty() && a.heads.len() == 2 && elapsed < Duration::from_secs(pinned::EQUIVALENCE_SECONDS);
    let detail = if differing.is_empty() {
        format!("encoder and decoder bit-identical after 10 epochs, {}", seconds(elapsed))
    } else {
        format!("differing parameters {differing:?}, {}", seconds(elapsed))
    };
    (verdict(ok), detail)
}

// 4. Direction of the debiasing effect on planted attributes.

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const SETTINGS: [(f64, f64); 4] = [(0.0, 0.0), (400.0, 0.0), (0.0, 400.0), (400.0, 400.0)];

/// The frozen configuration of the debiasing check.
fn debiasing_config(seed: u64, gender: f64, age: f64) -> TrainConfig {
    TrainConfig {
        epochs_adversarial: 60,
        epochs_attack: 50,
        anneal_steps: 500,
        hidden: 100,
        latent: 32,
        lambdas: LambdaConfig::new().with("gender", gender).with("age", age),
        seeds: Seeds::uniform(seed),
        ..TrainConfig::default()
    }
}

#[derive(Clone, Copy, Default)]
struct Means {
    bacc: f64,
    mae: f64,
    ndcg: f64,
}

fn debiasing() -> (Verdict, String) {
    let start = Instant::now();
    let mut means = [Means::default(); 4];
    for &seed in &SEEDS {
        let ds = SyntheticConfig::acceptance().generate(seed);
        let split = &make_folds(ds.n_users(), seed).unwrap()[0];
        for (m, &(g, a)) in means.iter_mut().zip(&SETTINGS) {
            let run = run_fold(&ds, split, &debiasing_config(seed, g, a)).unwrap();
            let k = SEEDS.len() as f64;
            m.bacc += run.metrics.bacc_of("gender").unwrap() / k;
            m.mae += run.metrics.mae_of("age").unwrap() / k;
            m.ndcg += run.metrics.ndcg / k;
            eprintln!(
                "  seed {seed} λ=({g}, {a}): BAcc {:.4} MAE {:.4} NDCG@10 {:.4}",
                run.metrics.bacc_of("gender").unwrap(),
                run.metrics.mae_of("age").unwrap(),
                run.metrics.ndcg
            );
        }
    }
    let [base, gender, age, joint] = means;
    let distance = |b: f64| (b - 0.5).abs();
    let drop_g = distance(base.bacc) - distance(gender.bacc);
    let drop_joint = distance(base.bacc) - distance(joint.bacc);
    let rise_a = age.mae / base.mae - 1.0;
    let rise_joint = joint.mae / base.mae - 1.0;
    let ndcg_drop = [gender, age, joint]
        .iter()
        .map(|m| 1.0 - m.ndcg / base.ndcg)
        .fold(f64::NEG_INFINITY, f64::max);

    let a = base.bacc >= pinned::BASELINE_BACC;
    let b = drop_g >= pinned::BACC_DROP;
    let c = rise_a >= pinned::MAE_RISE;
    let d = b && c && drop_joint >= drop_g - pinned::JOINT_BACC_SLACK && rise_joint >= rise_a - pinned::JOINT_MAE_SLACK;
    let e = ndcg_drop <= pinned::NDCG_DROP;
    let elapsed = start.elapsed();
    let in_budget = elapsed < Duration::from_secs(pinned::DEBIASING_SECONDS);
    let mark = |ok: bool| if ok { "ok" } else { "FAIL" };
    let detail = format!(
        "(a) base BAcc {:.3} {}; (b) BAcc drop {drop_g:.3} {}; (c) MAE rise {:.1}% {}; \
(d) joint drop {drop_joint:.3} rise {:.1}% {}; (e) worst NDCG drop {:.1}% {}; {} over {} seeds",
        base.bacc,
        mark(a),
        mark(b),
        100.0 * rise_a,
        mark(c),
        100.0 * rise_joint,
        mark(d),
        100.0 * ndcg_drop,
        mark(e),
        seconds(elapsed),
        SEEDS.len()
    );
    (verdict(a && b && c && d && e && in_budget), detail)
}

// 5. Metric and significance-test oracles.

fn permutations(items: &[u32]) -> Vec<Vec<u32>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (i, &first) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, first);
            out.push(tail);
        }
    }
    out
}

fn ranking_oracle() -> Result<usize, String> {
    let discount = |r: usize| 1.0 / ((r + 2) as f64).log2();
    let mut checked = 0;
    for n in 1..=6u32 {
        let items: Vec<u32> = (0..n).collect();
        let perms = permutations(&items);
        for mask in 1u32..(1 << n) {
            let holdout: Vec<u32> = items.iter().copied().filter(|i| mask >> i & 1 == 1).collect();
            for ranked in &perms {
                for k in 1..=n as usize {
                    let top = &ranked[..k];
                    let dcg: f64 = top
                        .iter()
                        .enumerate()
                        .filter(|(_, i)| holdout.contains(i))
                        .map(|(r, _)| discount(r))
                        .sum();
                    let ideal: f64 = (0..k.min(holdout.len())).map(discount).sum();
                    let hits = top.iter().filter(|i| holdout.contains(i)).count() as f64;
                    let ndcg = ndcg_at_k(top, &holdout, &[], k).unwrap();
                    let recall = recall_at_k(top, &holdout, &[], k).unwrap();
                    if ndcg != Some(dcg / ideal) || recall != Some(hits / k.min(holdout.len()) as f64) {
                        return Err(format!("ranking {ranked:?} holdout {holdout:?} k {k}"));
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok(checked)
}

/// Two-sided signed-rank p-value by enumerating every sign assignment.
fn enumerated_wilcoxon(diffs: &[f64]) -> f64 {
    let n = diffs.len();
    let ranks: Vec<f64> = diffs
        .iter()
        .map(|d| {
            let below = diffs.iter().filter(|e| e.abs() < d.abs()).count() as f64;
            let tied = diffs.iter().filter(|e| e.abs() == d.abs()).count() as f64;
            below + (tied + 1.0) / 2.0
        })
        .collect();
    let total: f64 = ranks.iter().sum();
    let observed: f64 = (0..n).filter(|&i| diffs[i] > 0.0).map(|i| ranks[i]).sum();
    let w = observed.min(total - observed);
    let extreme = (0u32..1 << n)
        .filter(|mask| {
            let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            s.min(total - s) <= w + 1e-9
        })
        .count();
    extreme as f64 / f64::from(1u32 << n)
}

fn wilcoxon_oracle() -> Result<f64, String> {
    let mut rng = stream_rng(5, Stream::Generator);
    let mut worst: f64 = 0.0;
    for n in 1..=12 {
        for trial in 0..20 {
            // Every other trial draws from a coarse grid to produce ties.
            let diffs: Vec<f64> = (0..n)
                .map(|_| {
                    let v: f64 = rng.random_range(-2.0..3.0);
                    let v = if trial % 2 == 0 { v } else { (2.0 * v).round() / 2.0 };
                    if v == 0.0 {
                        0.5
                    } else {
                        v
                    }
                })
                .collect();
            let zeros = vec![0.0; n];
            let got = wilcoxon_signed_rank(&diffs, &zeros, 0.05).unwrap().p_value;
            let want = enumerated_wilcoxon(&diffs);
            worst = worst.max((got - want).abs());
            if (got - want).abs() > pinned::WILCOXON_P {
                return Err(format!("n={n} diffs {diffs:?}: p {got} vs enumeration {want}"));
            }
        }
    }
    Ok(worst)
}

fn metric_oracles() -> (Verdict, String) {
    let mut failures = Vec::new();
    let mut notes = Vec::new();
    match ranking_oracle() {
        Ok(n) => notes.push(format!("{n} rankings exact")),
        Err(e) => failures.push(format!("ranking mismatch at {e}")),
    }
    let labels: Vec<usize> = (0..37).map(|i| usize::from(i % 3 == 0)).collect();
    for constant in 0..2 {
        let bacc = balanced_accuracy(&vec![constant; labels.len()], &labels, 2).unwrap();
        if bacc != 0.5 {
            failures.push(format!("constant predictor BAcc {bacc}"));
        }
    }
    match wilcoxon_oracle() {
        Ok(worst) => notes.push(format!("Wilcoxon worst |Δp| {worst:.1e}")),
        Err(e) => failures.push(e),
    }
    let chi2 = mcnemar_from_counts(5, 15, 0.05).statistic;
    if chi2 != pinned::MCNEMAR_CHI2 {
        failures.push(format!("McNemar χ² {chi2}"));
    }
    notes.push(format!("McNemar χ² {chi2}"));
    let t = paired_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5], 0.05).unwrap();
    if (t.statistic - pinned::T_STAT).abs() > pinned::T_STAT_TOL || (t.p_value - pinned::T_P).abs() > pinned::T_P_TOL {
        failures.push(format!("t-test t {} p {}", t.statistic, t.p_value));
    }
    notes.push(format!("t {:.4} p {:.4}", t.statistic, t.p_value));
    if failures.is_empty() {
        (Verdict::Pass, notes.join(", "))
    } else {
        (Verdict::Fail, failures.join("; "))
    }
}

// 6 and 7. MovieLens-1M.

fn ml1m_dir() -> Option<PathBuf> {
    std::env::var_os("ADVX_ML1M_DIR").map(PathBuf::from)
}

fn ml1m_config(dir: &std::path::Path, out: PathBuf) -> RunConfig {
    let mut config = RunConfig::default();
    config.data.name = "ml-1m".into();
    config.data.format = InputFormat::Ml1m;
    config.data.interactions = Some(dir.join("ratings.dat"));
    config.data.demographics = Some(dir.join("users.dat"));
    config.data.k_core = 5;
    config.data.age_cap = 60.0;
    config.out = out;
    config
}

fn preprocessing_fidelity() -> (Verdict, String) {
    let Some(dir) = ml1m_dir() else {
        return (Verdict::NotRun, "set ADVX_ML1M_DIR to the ml-1m release directory".into());
    };
    let out = tempfile::tempdir().unwrap();
    let ds = match commands::preprocess(&ml1m_config(&dir, out.path().to_path_buf())) {
        Ok(ds) => ds,
        Err(e) => return (Verdict::Fail, format!("{e:#}")),
    };
    let s = ds.stats();
    let mut counts: Vec<usize> = s.gender_counts.iter().map(|(_, c)| *c).collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    let round1 = |x: f64| (x * 10.0).round() / 10.0;
    let ok = s.users == 6040
        && s.items == 3416
        && s.interactions == 999_611
        && (s.density * 1e4).round() == 484.0
        && counts == [4331, 1709]
        && round1(s.age.mean) == 30.6
        && round1(s.age.std) == 12.9
        && s.age.median == 25.0;
    let detail = format!(
        "{} users, {} items, {} interactions, density {:.4}, genders {:?}, age {:.1}/{:.1}/{:.1}",
        s.users, s.items, s.interactions, s.density, counts, s.age.mean, s.age.std, s.age.median
    );
    (verdict(ok), detail)
}

fn ml1m_reproduction() -> (Verdict, String) {
    let Some(dir) = ml1m_dir() else {
        return (Verdict::NotRun, "set ADVX_ML1M_DIR and ADVX_ACCEPTANCE_EXTENDED=1".into());
    };
    if std::env::var("ADVX_ACCEPTANCE_EXTENDED").as_deref() != Ok("1") {
        return (Verdict::NotRun, "multi-hour run; set ADVX_ACCEPTANCE_EXTENDED=1".into());
    }
    let out = tempfile::tempdir().unwrap();
    let config = ml1m_config(&dir, out.path().to_path_buf());
    let ds = match commands::preprocess(&config) {
        Ok(ds) => ds,
        Err(e) => return (Verdict::Fail, format!("{e:#}")),
    };
    let folds = make_folds(ds.n_users(), config.train.seeds.data).unwrap();
    let (mut ndcg, mut bacc) = (0.0, 0.0);
    for split in &folds {
        let run = match run_fold(&ds, split, &config.train) {
            Ok(run) => run,
            Err(e) => return (Verdict::Fail, format!("fold {}: {e}", split.fold)),
        };
        ndcg += 100.0 * run.metrics.ndcg / folds.len() as f64;
        bacc += 100.0 * run.metrics.bacc_of("gender").unwrap_or(f64::NAN) / folds.len() as f64;
    }
    let ok = (ndcg - pinned::ML1M_NDCG).abs() <= pinned::ML1M_NDCG_TOL
        && (bacc - pinned::ML1M_BACC).abs() <= pinned::ML1M_BACC_TOL;
    (verdict(ok), format!("NDCG@10 {ndcg:.2}, gender BAcc {bacc:.2}"))
}

type Criterion = (usize, &'static str, bool, fn() -> (Verdict, String));

const CRITERIA: [Criterion; 7] = [
    (1, "gradient correctness", true, gradient_check),
    (2, "gradient reversal contract", true, grl_contract),
    (3, "zero-lambda equivalence", true, zero_lambda_equivalence),
    (4, "synthetic debiasing", true, debiasing),
    (5, "metric oracles", true, metric_oracles),
    (6, "preprocessing fidelity", true, preprocessing_fidelity),
    (7, "ml-1m reproduction", false, ml1m_reproduction),
];

fn selected() -> Option<Vec<usize>> {
    let only = std::env::var("ADVX_ACCEPTANCE_ONLY").ok()?;
    Some(only.split(',').filter_map(|s| s.trim().parse().ok()).collect())
}

fn main() -> ExitCode {
    let only = selected();
    let mut outcomes = Vec::new();
    for (id, name, gating, check) in CRITERIA {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let (verdict, detail) = check();
        let outcome = Outcome {
            id,
            name,
            verdict,
            gating,
            detail,
        };
        let tag = match outcome.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::NotRun => "NOT RUN",
        };
        let scope = if outcome.gating { "" } else { " (not gating)" };
        println!("{tag:<8}{} {}{scope}: {}", outcome.id, outcome.name, outcome.detail);
        outcomes.push(outcome);
    }
    let failed: Vec<usize> = outcomes
        .iter()
        .filter(|o| o.gating && matches!(o.verdict, Verdict::Fail))
        .map(|o| o.id)
        .collect();
    let strict = std::env::var("ADVX_ACCEPTANCE_STRICT").as_deref() == Ok("1");
    if failed.is_empty() {
        println!("acceptance: all gating criteria that ran passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: gating criteria failed: {failed:?}");
        if strict {
            ExitCode::FAILURE
        } else {
            ExitCode::SUCCESS
        }
    }
}
