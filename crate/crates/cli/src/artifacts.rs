//! On-disk layout of run outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use advx_core::adversarial::{AdvHeadParams, Attacker, AttributeSpec};
use advx_core::checkpoint::{write_atomic, Checkpoint};
use advx_core::data::Dataset;
use advx_core::model::MultVae;
use advx_core::rng::{stream_rng, Stream};
use advx_core::train::{Adam, EpochLog, TrainConfig};
use anyhow::{bail, Context, Result};

pub const MODEL_FILE: &str = "model.ckpt";
pub const ATTACKERS_FILE: &str = "attackers.ckpt";

pub fn fold_dir(out: &Path, fold: usize) -> PathBuf {
    out.join(format!("fold-{fold}"))
}

/// Directory name of one λ combination, e.g. `gender-400_age-0`.
pub fn combination_dir(lambdas: &[(String, f64)]) -> String {
    if lambdas.is_empty() {
        return "no-adversary".into();
    }
    lambdas
        .iter()
        .map(|(a, v)| format!("{a}-{v}"))
        .collect::<Vec<_>>()
        .join("_")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

pub fn epochs_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,beta,mult_loss");
    if let Some(first) = log.first() {
        for (name, _) in &first.adv_losses {
            let _ = write!(s, ",adv_{name}");
        }
    }
    s.push_str(",val_ndcg@10\n");
    for l in log {
        let _ = write!(s, "{},{:?},{:?}", l.epoch, l.beta, l.mult_loss);
        for (_, v) in &l.adv_losses {
            let _ = write!(s, ",{v:?}");
        }
        match l.val_ndcg {
            Some(v) => {
                let _ = writeln!(s, ",{v:?}");
            }
            None => s.push_str(",\n"),
        }
    }
    s
}

fn model_meta(ckpt: Checkpoint, config: &TrainConfig, ds: &Dataset) -> Checkpoint {
    ckpt.with_meta("n_items", ds.n_items().to_string())
        .with_meta("dataset_checksum", ds.checksum())
        .with_meta("model.hidden", config.hidden.to_string())
        .with_meta("model.latent", config.latent.to_string())
        .with_meta("model.activation", config.activation.as_str())
        .with_meta("model.dropout_keep", format!("{:?}", config.dropout_keep))
}

/// The recommender plus the adversarial heads of the removal phase.
pub fn model_checkpoint(
    model: &MultVae,
    heads: &[AdvHeadParams],
    config: &TrainConfig,
    ds: &Dataset,
    info: &[(&str, String)],
) -> Checkpoint {
    let mut ckpt = model_meta(Checkpoint::new(), config, ds);
    for (k, v) in info {
        ckpt = ckpt.with_meta(*k, v.clone());
    }
    ckpt.add_params("model.", model);
    for h in heads {
        ckpt.add_params("head.", h);
    }
    ckpt
}

fn check_dataset(ckpt: &Checkpoint, ds: &Dataset, path: &Path) -> Result<()> {
    let n_items: usize = ckpt
        .meta("n_items")
        .and_then(|v| v.parse().ok())
        .with_context(|| format!("{}: missing n_items", path.display()))?;
    if n_items != ds.n_items() {
        bail!(
            "{}: checkpoint expects {n_items} items but the dataset has {}",
            path.display(),
            ds.n_items()
        );
    }
    if ckpt.meta("dataset_checksum") != Some(ds.checksum().as_str()) {
        bail!("{}: checkpoint was trained on a different dataset", path.display());
    }
    Ok(())
}

/// Restores a frozen recommender and the checkpoint's metadata, rejecting
/// checkpoints of another dataset.
pub fn load_model(path: &Path, ds: &Dataset, config: &TrainConfig) -> Result<(MultVae, Vec<(String, String)>)> {
    if !path.exists() {
        bail!(
            "no model checkpoint at {}; run `advx train` first",
            path.display()
        );
    }
    let ckpt = Checkpoint::read(path).with_context(|| format!("reading {}", path.display()))?;
    check_dataset(&ckpt, ds, path)?;
    let mut cfg = config.clone();
    let meta = |k: &str| {
        ckpt.meta(k)
            .with_context(|| format!("{}: missing `{k}`", path.display()))
    };
    cfg.hidden = meta("model.hidden")?.parse()?;
    cfg.latent = meta("model.latent")?.parse()?;
    cfg.activation = meta("model.activation")?.parse()?;
    cfg.dropout_keep = meta("model.dropout_keep")?.parse()?;
    let mut model = MultVae::new(
        cfg.model_config(ds.n_items()),
        &mut stream_rng(0, Stream::ModelInit),
    )?;
    ckpt.load_params("model.", &mut model)
        .with_context(|| format!("loading {}", path.display()))?;
    model.freeze();
    Ok((model, ckpt.meta))
}

pub fn attackers_checkpoint(attackers: &[Attacker], ds: &Dataset, config: &TrainConfig) -> Checkpoint {
    let names: Vec<&str> = attackers.iter().map(|a| a.spec.name.as_str()).collect();
    let mut ckpt = model_meta(Checkpoint::new(), config, ds)
        .with_meta("attributes", names.join(","))
        .with_meta("adversary.hidden", config.adv_hidden.to_string());
    for a in attackers {
        ckpt.add_params("attacker.", &a.head);
    }
    ckpt
}

/// Restores attackers for `specs` (built from the same fold).
pub fn load_attackers(path: &Path, ds: &Dataset, config: &TrainConfig, specs: &[AttributeSpec]) -> Result<Vec<Attacker>> {
    if !path.exists() {
        bail!("no attacker checkpoint at {}; run `advx attack` first", path.display());
    }
    let ckpt = Checkpoint::read(path).with_context(|| format!("reading {}", path.display()))?;
    check_dataset(&ckpt, ds, path)?;
    let latent: usize = ckpt.meta("model.latent").unwrap_or_default().parse()?;
    let hidden: usize = ckpt.meta("adversary.hidden").unwrap_or_default().parse()?;
    let mut out = Vec::new();
    for spec in specs {
        let mut head = AdvHeadParams::new(
            spec,
            latent,
            hidden,
            config.activation,
            &mut stream_rng(0, Stream::Attacker),
        );
        ckpt.load_params("attacker.", &mut head)
            .with_context(|| format!("loading attacker `{}` from {}", spec.name, path.display()))?;
        out.push(Attacker::new(spec.clone(), head, Adam::new(config.adam)));
    }
    Ok(out)
}
