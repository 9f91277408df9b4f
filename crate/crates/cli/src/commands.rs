//! The subcommands. Each reads a validated [`RunConfig`] and writes its
//! outputs plus a manifest under `run.out`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use advx_core::data::{load_interactions, load_ml1m, make_folds, Dataset, EvalUsers, FoldSplit, AGE, GENDER};
use advx_core::eval::{aggregate_csv, results_csv, FoldMetrics, ResultRow};
use advx_core::params::Parameters;
use advx_core::train::{
    config_for, evaluate_attackers, evaluate_ranking, fold_specs, grid_search, latent_means_of,
    train_adversarial_phase, train_attack_phase, AttackPredictions, GridSpec, RunOutput,
};
use anyhow::{bail, Context, Result};

use crate::artifacts::{
    attackers_checkpoint, combination_dir, epochs_csv, fold_dir, load_attackers, load_model,
    model_checkpoint, write_text, ATTACKERS_FILE, MODEL_FILE,
};
use crate::config::{InputFormat, RunConfig};

pub fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    let path = config.cache_path();
    if !path.exists() {
        bail!(
            "no preprocessed dataset at {}; run `advx preprocess` first",
            path.display()
        );
    }
    let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    Dataset::from_cache_bytes(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn fold_split(ds: &Dataset, config: &RunConfig) -> Result<FoldSplit> {
    let mut folds = make_folds(ds.n_users(), config.train.seeds.data)?;
    Ok(folds.swap_remove(config.fold))
}

fn write_manifest(dir: &Path, command: &str, config: &RunConfig, info: &[(&str, String)]) -> Result<()> {
    let mut all = vec![("command", command.to_string())];
    all.extend(info.iter().cloned());
    write_text(&dir.join(format!("{command}.manifest")), &config.manifest(&all))
}

/// Loads the raw files, optionally subsamples items, applies k-core
/// filtering and writes the cache and a statistics summary.
pub fn preprocess(config: &RunConfig) -> Result<Dataset> {
    let d = &config.data;
    let interactions = d
        .interactions
        .as_ref()
        .context("data.interactions is not set")?;
    let demographics = d
        .demographics
        .as_ref()
        .context("data.demographics is not set")?;
    for p in [interactions, demographics] {
        if !p.exists() {
            bail!("input file {} does not exist", p.display());
        }
    }
    let (mut ds, report) = match d.format {
        InputFormat::Tsv => load_interactions(interactions, demographics, d.age_cap)?,
        InputFormat::Ml1m => load_ml1m(interactions, demographics, d.age_cap)?,
    };
    if let Some(n) = d.subsample_items {
        ds = ds.subsample_items(n, config.train.seeds.data);
    }
    if d.k_core > 0 {
        ds = ds.k_core(d.k_core)?;
    }
    let bytes = ds.to_cache_bytes();
    let cache = config.cache_path();
    advx_core::checkpoint::write_atomic(&cache, &bytes)
        .with_context(|| format!("writing {}", cache.display()))?;
    let checksum = ds.checksum();
    let mut stats = ds.stats().to_string();
    let _ = writeln!(stats, "raw.interaction_rows={}", report.interaction_rows);
    let _ = writeln!(stats, "raw.unknown_user_rows={}", report.unknown_user_rows);
    let _ = writeln!(stats, "raw.users_missing_attributes={}", report.users_missing_attributes);
    let _ = writeln!(stats, "raw.duplicate_pairs={}", report.duplicate_pairs);
    let _ = writeln!(stats, "checksum={checksum}");
    write_text(&config.out.join("stats.txt"), &stats)?;
    write_manifest(&config.out, "preprocess", config, &[("dataset_checksum", checksum)])?;
    print!("{stats}");
    Ok(ds)
}

pub fn train(config: &RunConfig) -> Result<()> {
    let ds = load_dataset(config)?;
    let split = fold_split(&ds, config)?;
    let out = train_adversarial_phase(&ds, &split, &config.train)?;
    let dir = fold_dir(&config.out, config.fold);
    let model_name = config.train.model_name();
    let info = [
        ("model_name", model_name.clone()),
        ("fold", config.fold.to_string()),
        ("selected_epoch", out.selected_epoch.to_string()),
        (
            "selected_val_ndcg",
            out.selected_val_ndcg.map_or("none".into(), |v| format!("{v:?}")),
        ),
        ("model_checksum", out.model.checksum()),
        ("dataset_checksum", ds.checksum()),
    ];
    let mut ckpt = model_checkpoint(&out.model, &out.heads, &config.train, &ds, &info);
    for (k, v) in config.train.to_manifest() {
        if k.starts_with("lambda.") {
            ckpt = ckpt.with_meta(k, v);
        }
    }
    ckpt.write(&dir.join(MODEL_FILE))?;
    write_text(&dir.join("epochs.csv"), &epochs_csv(&out.log))?;
    write_manifest(&dir, "train", config, &info)?;
    println!(
        "{model_name} fold {}: kept epoch {} (validation NDCG@10 {})",
        config.fold,
        out.selected_epoch,
        out.selected_val_ndcg.map_or("n/a".into(), |v| format!("{:.2}", 100.0 * v))
    );
    Ok(())
}

fn model_path(config: &RunConfig, checkpoint: Option<&Path>) -> PathBuf {
    checkpoint.map_or_else(|| fold_dir(&config.out, config.fold).join(MODEL_FILE), Path::to_path_buf)
}

pub fn attack(config: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    let ds = load_dataset(config)?;
    let split = fold_split(&ds, config)?;
    let (model, _) = load_model(&model_path(config, checkpoint), &ds, &config.train)?;
    let specs = fold_specs(&ds, &split, &config.train)?;
    let out = train_attack_phase(&model, &ds, &split, &specs, &config.train)?;
    let dir = fold_dir(&config.out, config.fold);
    attackers_checkpoint(&out.attackers, &ds, &config.train).write(&dir.join(ATTACKERS_FILE))?;
    let mut csv = String::from("attribute,metric,value\n");
    for (name, v) in &out.bacc {
        let _ = writeln!(csv, "{name},bacc,{:.4}", 100.0 * v);
    }
    for (name, v) in &out.mae {
        let _ = writeln!(csv, "{name},mae,{:.4}", 100.0 * v);
    }
    write_text(&dir.join("attack.csv"), &csv)?;
    write_manifest(
        &dir,
        "attack",
        config,
        &[
            ("fold", config.fold.to_string()),
            ("model_checksum", out.checksum_after.clone()),
        ],
    )?;
    print!("{csv}");
    Ok(())
}

fn result_row(config: &RunConfig, model_name: String, lambdas: (f64, f64), metrics: FoldMetrics) -> ResultRow {
    ResultRow {
        dataset: config.data.name.clone(),
        model: model_name,
        lambda_gender: lambdas.0,
        lambda_age: lambdas.1,
        metrics,
    }
}

pub fn eval(config: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    let ds = load_dataset(config)?;
    let split = fold_split(&ds, config)?;
    let (model, meta) = load_model(&model_path(config, checkpoint), &ds, &config.train)?;
    let meta_of = |k: &str| meta.iter().find(|(m, _)| m == k).map(|(_, v)| v.clone());
    let t = &config.train;
    let test = EvalUsers::build(&ds.interactions, &split.test, t.holdout_ratio, t.seeds.data, split.fold)?;
    let ranking = evaluate_ranking(&model, &ds.interactions, &test)?;
    let dir = fold_dir(&config.out, config.fold);
    let attackers_path = dir.join(ATTACKERS_FILE);
    let (bacc, mae) = if attackers_path.exists() {
        let specs = fold_specs(&ds, &split, t)?;
        let attackers = load_attackers(&attackers_path, &ds, t, &specs)?;
        let scored = evaluate_attackers(&model, &ds, &split.test, &attackers)?;
        (scored.bacc, scored.mae)
    } else {
        log::warn!("{} not found; attacker metrics omitted", attackers_path.display());
        (Vec::new(), Vec::new())
    };
    let metrics = FoldMetrics {
        fold: split.fold,
        ndcg: ranking.mean_ndcg(),
        recall: ranking.mean_recall(),
        bacc,
        mae,
    };
    let lambda = |name: &str| {
        meta_of(&format!("lambda.{name}"))
            .and_then(|v| v.parse().ok())
            .unwrap_or_else(|| t.lambda(name))
    };
    let model_name = meta_of("model_name").unwrap_or_else(|| t.model_name());
    let row = result_row(config, model_name, (lambda(GENDER), lambda(AGE)), metrics);
    let csv = results_csv(std::slice::from_ref(&row));
    write_text(&dir.join("metrics.csv"), &csv)?;
    let mut users = String::from("user_id,ndcg@10,recall@10\n");
    for ((u, n), r) in ranking.users.iter().zip(&ranking.ndcg).zip(&ranking.recall) {
        let _ = writeln!(users, "{},{n:?},{r:?}", ds.interactions.user_ids()[*u]);
    }
    write_text(&dir.join("users.csv"), &users)?;
    write_manifest(&dir, "eval", config, &[("fold", config.fold.to_string())])?;
    print!("{csv}");
    Ok(())
}

/// Runs every λ combination on every configured fold. Per-unit outputs go
/// to `<out>/<combination>/fold-<k>/`; tables go to `<out>`. Returns an
/// error after writing everything if any unit failed.
pub fn grid(config: &RunConfig) -> Result<()> {
    let ds = load_dataset(config)?;
    let all = make_folds(ds.n_users(), config.train.seeds.data)?;
    let splits: Vec<FoldSplit> = config.folds.iter().map(|&f| all[f].clone()).collect();
    let spec = GridSpec::new(config.grid.clone())?;
    let combinations = spec.combinations();
    for c in &combinations {
        let dir = config.out.join(combination_dir(c));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let sink = |c: usize, run: &RunOutput| -> advx_core::Result<()> {
        let lambdas = &combinations[c];
        let unit = RunConfig {
            train: config_for(&config.train, lambdas),
            fold: run.fold,
            ..config.clone()
        };
        let dir = fold_dir(&config.out.join(combination_dir(lambdas)), run.fold);
        let row = result_row(
            &unit,
            run.model_name.clone(),
            (unit.train.lambda(GENDER), unit.train.lambda(AGE)),
            run.metrics.clone(),
        );
        let info = [
            ("model_name", run.model_name.clone()),
            ("selected_epoch", run.adversarial.selected_epoch.to_string()),
            ("model_checksum", run.adversarial.model.checksum()),
        ];
        let write = |name: &str, text: &str| {
            advx_core::checkpoint::write_atomic(&dir.join(name), text.as_bytes())
        };
        write("metrics.csv", &results_csv(&[row]))?;
        write("epochs.csv", &epochs_csv(&run.adversarial.log))?;
        let mut all_info = vec![("command", "grid".to_string())];
        all_info.extend(info.iter().cloned());
        write("run.manifest", &unit.manifest(&all_info))?;
        if config.save_checkpoints {
            model_checkpoint(&run.adversarial.model, &run.adversarial.heads, &unit.train, &ds, &info)
                .write(&dir.join(MODEL_FILE))?;
            attackers_checkpoint(&run.attack.attackers, &ds, &unit.train).write(&dir.join(ATTACKERS_FILE))?;
        }
        Ok(())
    };
    let result = grid_search(&ds, &splits, &spec, &config.train, config.workers, &sink)?;
    let name = &config.data.name;
    write_text(&config.out.join("results.csv"), &results_csv(&result.rows(name)))?;
    let specs = ds.attributes.specs(&config.train.attributes, &(0..ds.n_users()).collect::<Vec<_>>())?;
    let kinds: Vec<(String, bool)> = specs.iter().map(|s| (s.name.clone(), s.is_categorical())).collect();
    let summary = result.summary(name, &kinds)?;
    write_text(&config.out.join("aggregate.csv"), &aggregate_csv(&summary.aggregates))?;
    write_text(&config.out.join("summary.csv"), &summary.to_csv(&result.combinations))?;
    let failures = result.failures();
    let mut text = String::new();
    for f in &failures {
        let _ = writeln!(
            text,
            "{} fold {}: {}",
            combination_dir(&f.lambdas),
            f.fold,
            f.outcome.as_ref().err().map_or("", String::as_str)
        );
    }
    write_text(&config.out.join("failures.txt"), &text)?;
    write_manifest(
        &config.out,
        "grid",
        config,
        &[
            ("combinations", combinations.len().to_string()),
            ("units", result.units.len().to_string()),
            ("failures", failures.len().to_string()),
        ],
    )?;
    println!(
        "{} combinations x {} folds, {} failed",
        combinations.len(),
        splits.len(),
        failures.len()
    );
    if !failures.is_empty() {
        bail!("{} of {} grid runs failed:\n{text}", failures.len(), result.units.len());
    }
    Ok(())
}

/// Writes `embeddings.tsv`: per test user the encoder mean and the
/// attackers' predictions next to the true attributes.
pub fn export_embeddings(config: &RunConfig, checkpoint: Option<&Path>) -> Result<PathBuf> {
    let ds = load_dataset(config)?;
    let split = fold_split(&ds, config)?;
    let (model, _) = load_model(&model_path(config, checkpoint), &ds, &config.train)?;
    let dir = fold_dir(&config.out, config.fold);
    let specs = fold_specs(&ds, &split, &config.train)?;
    let attackers = load_attackers(&dir.join(ATTACKERS_FILE), &ds, &config.train, &specs)?;
    let scored = evaluate_attackers(&model, &ds, &split.test, &attackers)?;
    let latents = latent_means_of(&model, &ds.interactions, &split.test)?;
    let attrs = &ds.attributes;
    let prediction = |name: &str, row: usize| -> String {
        let found = attackers
            .iter()
            .position(|a| a.spec.name == name)
            .map(|i| &scored.predictions[i]);
        match found {
            Some(AttackPredictions::Classes { predicted, .. }) => attrs.gender_tokens[predicted[row]].clone(),
            Some(AttackPredictions::Values { predicted, .. }) => format!("{:?}", predicted[row] * attrs.age_cap),
            None => "NA".into(),
        }
    };
    let mut s = String::from("user_id");
    for d in 0..latents.cols() {
        let _ = write!(s, "\tmu_{d}");
    }
    s.push_str("\tpredicted_gender\tpredicted_age\ttrue_gender\ttrue_age\n");
    for (row, &u) in split.test.iter().enumerate() {
        s.push_str(&ds.interactions.user_ids()[u]);
        for v in latents.row(row) {
            let _ = write!(s, "\t{v:?}");
        }
        let _ = writeln!(
            s,
            "\t{}\t{}\t{}\t{:?}",
            prediction(GENDER, row),
            prediction(AGE, row),
            attrs.gender_tokens[attrs.gender[u]],
            attrs.raw_age[u]
        );
    }
    let path = dir.join("embeddings.tsv");
    write_text(&path, &s)?;
    write_manifest(&dir, "export", config, &[("rows", split.test.len().to_string())])?;
    println!("wrote {} rows to {}", split.test.len(), path.display());
    Ok(path)
}
