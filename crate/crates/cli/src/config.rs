//! `key=value` run configuration with section prefixes.
//!
//! Sources are applied in order (defaults, config file, flags), and every key
//! is checked against the schema before any work starts. A manifest written
//! by a command is itself a valid config file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use advx_core::adversarial::LambdaConfig;
use advx_core::data::NUM_FOLDS;
use advx_core::params::Activation;
use advx_core::train::{TrainConfig, DEFAULT_LAMBDAS};
use anyhow::{anyhow, bail, Context, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputFormat {
    /// Tab-separated with a header line.
    Tsv,
    /// MovieLens-1M `ratings.dat` / `users.dat`.
    Ml1m,
}

impl InputFormat {
    fn as_str(self) -> &'static str {
        match self {
            InputFormat::Tsv => "tsv",
            InputFormat::Ml1m => "ml1m",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub name: String,
    pub interactions: Option<PathBuf>,
    pub demographics: Option<PathBuf>,
    pub format: InputFormat,
    pub age_cap: f64,
    pub k_core: usize,
    /// Keep this many items, drawn uniformly, before k-core filtering.
    pub subsample_items: Option<usize>,
    /// Preprocessed cache; `<out>/dataset.cache` when unset.
    pub cache: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    pub out: PathBuf,
    pub workers: usize,
    /// Fold used by single-run commands.
    pub fold: usize,
    /// Folds visited by the grid.
    pub folds: Vec<usize>,
    /// λ values per attribute; defaults to the standard grid.
    pub grid: Vec<(String, Vec<f64>)>,
    pub save_checkpoints: bool,
}

const KEYS: &[&str] = &[
    "data.name",
    "data.interactions",
    "data.demographics",
    "data.format",
    "data.age_cap",
    "data.k_core",
    "data.subsample_items",
    "data.cache",
    "train.epochs_adversarial",
    "train.epochs_attack",
    "train.batch_size",
    "train.beta_max",
    "train.anneal_steps",
    "train.lr",
    "train.adam_beta1",
    "train.adam_beta2",
    "train.adam_epsilon",
    "train.holdout_ratio",
    "train.grad_clip",
    "train.select_best",
    "model.hidden",
    "model.latent",
    "model.activation",
    "model.dropout_keep",
    "adversary.hidden",
    "adversary.attributes",
    "seed.model",
    "seed.data",
    "seed.adversary",
    "run.out",
    "run.workers",
    "run.fold",
    "run.folds",
    "grid.save_checkpoints",
];

/// Prefixes whose suffix names an attribute.
const ATTRIBUTE_SECTIONS: [&str; 2] = ["lambda.", "grid."];

fn known(key: &str) -> bool {
    KEYS.contains(&key)
        || ATTRIBUTE_SECTIONS
            .iter()
            .any(|p| key.strip_prefix(p).is_some_and(|a| !a.is_empty() && !a.contains('.')))
}

/// Ordered `key -> (value, origin)` assignments; later sources win.
#[derive(Clone, Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, (String, String)>,
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<()> {
        let key = key.trim();
        if !known(key) {
            bail!("{origin}: unknown configuration key `{key}`");
        }
        self.values
            .insert(key.to_string(), (value.trim().to_string(), origin.to_string()));
        Ok(())
    }

    /// Parses `key=value` lines; `#` starts a comment line.
    pub fn read_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let origin = format!("{}:{}", path.display(), i + 1);
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{origin}: expected `key=value`, got `{line}`"))?;
            self.set(k, v, &origin)?;
        }
        Ok(())
    }

    /// Parses a `key=value` flag argument.
    pub fn set_pair(&mut self, pair: &str, origin: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| anyhow!("{origin}: expected KEY=VALUE, got `{pair}`"))?;
        self.set(k, v, origin)
    }

    fn get(&self, key: &str) -> Option<&(String, String)> {
        self.values.get(key)
    }

    fn parse<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some((v, origin)) = self.get(key) {
            *slot = v
                .parse()
                .map_err(|e| anyhow!("{origin}: invalid value `{v}` for `{key}`: {e}"))?;
        }
        Ok(())
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key)
            .filter(|(v, _)| !v.is_empty())
            .map(|(v, _)| PathBuf::from(v))
    }

    fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a (String, String))> {
        self.values
            .iter()
            .filter_map(move |(k, v)| k.strip_prefix(prefix).map(|a| (a, v)))
    }

    pub fn build(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        let d = &mut c.data;
        self.parse("data.name", &mut d.name)?;
        d.interactions = self.path("data.interactions").or(d.interactions.take());
        d.demographics = self.path("data.demographics").or(d.demographics.take());
        if let Some((v, origin)) = self.get("data.format") {
            d.format = match v.as_str() {
                "tsv" => InputFormat::Tsv,
                "ml1m" => InputFormat::Ml1m,
                other => bail!("{origin}: unknown data.format `{other}` (tsv or ml1m)"),
            };
        }
        self.parse("data.age_cap", &mut d.age_cap)?;
        self.parse("data.k_core", &mut d.k_core)?;
        if let Some((v, origin)) = self.get("data.subsample_items") {
            d.subsample_items = parse_optional(v, origin, "data.subsample_items")?;
        }
        d.cache = self.path("data.cache").or(d.cache.take());

        let t = &mut c.train;
        self.parse("train.epochs_adversarial", &mut t.epochs_adversarial)?;
        self.parse("train.epochs_attack", &mut t.epochs_attack)?;
        self.parse("train.batch_size", &mut t.batch_size)?;
        self.parse("train.beta_max", &mut t.beta_max)?;
        self.parse("train.anneal_steps", &mut t.anneal_steps)?;
        self.parse("train.lr", &mut t.adam.lr)?;
        self.parse("train.adam_beta1", &mut t.adam.beta1)?;
        self.parse("train.adam_beta2", &mut t.adam.beta2)?;
        self.parse("train.adam_epsilon", &mut t.adam.epsilon)?;
        self.parse("train.holdout_ratio", &mut t.holdout_ratio)?;
        if let Some((v, origin)) = self.get("train.grad_clip") {
            t.grad_clip = parse_optional(v, origin, "train.grad_clip")?;
        }
        self.parse("train.select_best", &mut t.select_best)?;
        self.parse("model.hidden", &mut t.hidden)?;
        self.parse("model.latent", &mut t.latent)?;
        let mut activation = t.activation.as_str().to_string();
        self.parse("model.activation", &mut activation)?;
        t.activation = Activation::from_str(&activation).map_err(|e| anyhow!("model.activation: {e}"))?;
        self.parse("model.dropout_keep", &mut t.dropout_keep)?;
        self.parse("adversary.hidden", &mut t.adv_hidden)?;
        if let Some((v, _)) = self.get("adversary.attributes") {
            t.attributes = split_list(v).map(str::to_string).collect();
        }
        self.parse("seed.model", &mut t.seeds.model)?;
        self.parse("seed.data", &mut t.seeds.data)?;
        self.parse("seed.adversary", &mut t.seeds.adversary)?;

        let mut lambdas = LambdaConfig::new();
        for a in &t.attributes {
            lambdas.set(a, 0.0);
        }
        for (attr, (v, origin)) in self.with_prefix("lambda.") {
            if !t.attributes.iter().any(|a| a == attr) {
                bail!("{origin}: lambda for `{attr}`, which is not in adversary.attributes");
            }
            let value: f64 = v
                .parse()
                .map_err(|e| anyhow!("{origin}: invalid lambda `{v}`: {e}"))?;
            lambdas.set(attr, value);
        }
        t.lambdas = lambdas;

        self.parse("run.workers", &mut c.workers)?;
        if let Some((v, _)) = self.get("run.out") {
            c.out = PathBuf::from(v);
        }
        self.parse("run.fold", &mut c.fold)?;
        if let Some((v, origin)) = self.get("run.folds") {
            c.folds = split_list(v)
                .map(|f| f.parse().map_err(|e| anyhow!("{origin}: invalid fold `{f}`: {e}")))
                .collect::<Result<_>>()?;
        }
        self.parse("grid.save_checkpoints", &mut c.save_checkpoints)?;
        c.grid = c
            .train
            .attributes
            .iter()
            .map(|a| (a.clone(), DEFAULT_LAMBDAS.to_vec()))
            .collect();
        for (attr, (v, origin)) in self.with_prefix("grid.") {
            if attr == "save_checkpoints" {
                continue;
            }
            let axis = c
                .grid
                .iter_mut()
                .find(|(a, _)| a == attr)
                .ok_or_else(|| anyhow!("{origin}: grid axis `{attr}` is not in adversary.attributes"))?;
            axis.1 = split_list(v)
                .map(|x| x.parse().map_err(|e| anyhow!("{origin}: invalid lambda `{x}`: {e}")))
                .collect::<Result<_>>()?;
        }
        c.validate()?;
        Ok(c)
    }
}

fn split_list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_optional<T: FromStr>(v: &str, origin: &str, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if v.eq_ignore_ascii_case("none") || v.is_empty() {
        return Ok(None);
    }
    v.parse()
        .map(Some)
        .map_err(|e| anyhow!("{origin}: invalid value `{v}` for `{key}`: {e}"))
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig {
                name: "dataset".into(),
                interactions: None,
                demographics: None,
                format: InputFormat::Tsv,
                age_cap: 60.0,
                k_core: 5,
                subsample_items: None,
                cache: None,
            },
            train: TrainConfig::default(),
            out: PathBuf::from("out"),
            workers: 1,
            fold: 0,
            folds: (0..NUM_FOLDS).collect(),
            grid: ["gender", "age"]
                .iter()
                .map(|a| (a.to_string(), DEFAULT_LAMBDAS.to_vec()))
                .collect(),
            save_checkpoints: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.data.age_cap.is_nan() || self.data.age_cap <= 0.0 {
            bail!("data.age_cap must be positive, got {}", self.data.age_cap);
        }
        if self.data.subsample_items == Some(0) {
            bail!("data.subsample_items must be positive");
        }
        if self.workers == 0 {
            bail!("run.workers must be at least 1");
        }
        for &f in self.folds.iter().chain([&self.fold]) {
            if f >= NUM_FOLDS {
                bail!("fold {f} out of range 0..{NUM_FOLDS}");
            }
        }
        if self.folds.is_empty() {
            bail!("run.folds is empty");
        }
        Ok(())
    }

    pub fn cache_path(&self) -> PathBuf {
        self.data
            .cache
            .clone()
            .unwrap_or_else(|| self.out.join("dataset.cache"))
    }

    /// Every key with its effective value, in schema order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let d = &self.data;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut out: Vec<(String, String)> = vec![
            ("data.name".into(), d.name.clone()),
            ("data.interactions".into(), path(&d.interactions)),
            ("data.demographics".into(), path(&d.demographics)),
            ("data.format".into(), d.format.as_str().into()),
            ("data.age_cap".into(), format!("{:?}", d.age_cap)),
            ("data.k_core".into(), d.k_core.to_string()),
            (
                "data.subsample_items".into(),
                d.subsample_items.map_or("none".into(), |n| n.to_string()),
            ),
            ("data.cache".into(), self.cache_path().display().to_string()),
        ];
        out.extend(self.train.to_manifest());
        out.push(("run.out".into(), self.out.display().to_string()));
        out.push(("run.workers".into(), self.workers.to_string()));
        out.push(("run.fold".into(), self.fold.to_string()));
        out.push((
            "run.folds".into(),
            self.folds.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(","),
        ));
        for (attr, values) in &self.grid {
            let v: Vec<String> = values.iter().map(|x| format!("{x:?}")).collect();
            out.push((format!("grid.{attr}"), v.join(",")));
        }
        out.push(("grid.save_checkpoints".into(), self.save_checkpoints.to_string()));
        out
    }

    /// A manifest: `info` as comments, then the full configuration.
    pub fn manifest(&self, info: &[(&str, String)]) -> String {
        let mut s = String::from("# advx run manifest\n");
        for (k, v) in info {
            let _ = writeln!(s, "# {k}={v}");
        }
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_setup() {
        let c = Settings::default().build().unwrap();
        assert_eq!(c.train.epochs_adversarial, 200);
        assert_eq!(c.train.epochs_attack, 50);
        assert_eq!(c.data.k_core, 5);
        assert_eq!(c.grid.len(), 2);
        assert_eq!(c.grid[0].1, DEFAULT_LAMBDAS.to_vec());
        assert_eq!(c.cache_path(), PathBuf::from("out/dataset.cache"));
    }

    #[test]
    fn later_sources_override_earlier_ones() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "# comment\ntrain.epochs_adversarial=7\nlambda.gender=1\n\n").unwrap();
        let mut s = Settings::default();
        s.read_file(&path).unwrap();
        s.set_pair("lambda.gender=400", "--lambda").unwrap();
        let c = s.build().unwrap();
        assert_eq!(c.train.epochs_adversarial, 7);
        assert_eq!(c.train.lambda("gender"), 400.0);
        assert_eq!(c.train.model_name(), "AdvMultVAE-G");
    }

    #[test]
    fn unknown_keys_are_errors_with_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "train.epochs=3\n").unwrap();
        let err = Settings::default().read_file(&path).unwrap_err().to_string();
        assert!(err.contains(":1") && err.contains("train.epochs"), "{err}");
        assert!(Settings::default().set("lambda.a.b", "1", "x").is_err());
        assert!(Settings::default().set("lambda.", "1", "x").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut s = Settings::default();
        s.set("train.batch_size", "many", "flag").unwrap();
        assert!(s.build().unwrap_err().to_string().contains("train.batch_size"));
        let mut s = Settings::default();
        s.set("lambda.occupation", "1", "flag").unwrap();
        assert!(s.build().is_err());
        let mut s = Settings::default();
        s.set("run.folds", "0,7", "flag").unwrap();
        assert!(s.build().is_err());
        let mut s = Settings::default();
        s.set("lambda.age", "-1", "flag").unwrap();
        assert!(s.build().is_err());
    }

    #[test]
    fn attribute_subset_drops_other_lambdas() {
        let mut s = Settings::default();
        s.set("adversary.attributes", "gender", "f").unwrap();
        s.set("grid.gender", "0, 400", "f").unwrap();
        let c = s.build().unwrap();
        assert_eq!(c.train.lambdas.iter().count(), 1);
        assert_eq!(c.grid, vec![("gender".to_string(), vec![0.0, 400.0])]);
    }

    #[test]
    fn manifest_round_trips_as_a_config_file() {
        let mut s = Settings::default();
        s.set("lambda.age", "600", "f").unwrap();
        s.set("train.grad_clip", "5", "f").unwrap();
        s.set("data.subsample_items", "100", "f").unwrap();
        s.set("data.interactions", "raw/i.tsv", "f").unwrap();
        let c = s.build().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.txt");
        fs::write(&path, c.manifest(&[("command", "train".into())])).unwrap();
        let mut back = Settings::default();
        back.read_file(&path).unwrap();
        assert_eq!(back.build().unwrap().entries(), c.entries());
    }
}
