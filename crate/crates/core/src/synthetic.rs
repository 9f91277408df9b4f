//! Synthetic interaction data with planted protected attributes.
//!
//! Items belong to one of two clusters and sit at a position in `[0, 1]`.
//! A user's binary attribute tilts preference toward one cluster, and the
//! continuous attribute linearly shifts which item positions the user
//! favors. Latent topics add attribute-independent taste so that
//! recommendations do not hinge on the attributes alone. Interactions are
//! drawn without replacement by Gumbel top-k sampling over the scores.

use std::fs;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Gumbel, StandardNormal};

use crate::data::{normalize_age, Dataset, InteractionDataset, UserAttributes};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_topics: usize,
    /// Probability of attribute class 1.
    pub class_one_fraction: f64,
    /// Score bonus for items in the user's class cluster.
    pub class_strength: f64,
    /// Slope of the age-position interaction.
    pub age_strength: f64,
    pub topic_strength: f64,
    pub min_items: usize,
    pub max_items: usize,
    pub min_age: u32,
    pub max_age: u32,
    pub age_cap: f64,
}

impl SyntheticConfig {
    /// The 2,000 × 500 dataset used by the debiasing checks. Users hold 80
    /// to 160 items so the reconstruction loss has a realistic magnitude.
    pub fn acceptance() -> Self {
        Self {
            n_users: 2000,
            n_items: 500,
            n_topics: 8,
            class_one_fraction: 0.4,
            class_strength: 0.5,
            age_strength: 4.0,
            topic_strength: 1.5,
            min_items: 80,
            max_items: 160,
            min_age: 15,
            max_age: 60,
            age_cap: 60.0,
        }
    }

    /// A quick 200 × 100 instance for unit tests.
    pub fn small() -> Self {
        Self {
            n_users: 200,
            n_items: 100,
            min_items: 8,
            max_items: 20,
            ..Self::acceptance()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_items < 2 || self.n_topics == 0 {
            return Err(Error::Config("synthetic dataset sizes must be positive".into()));
        }
        if self.min_items == 0 || self.min_items > self.max_items || self.max_items > self.n_items {
            return Err(Error::Config(format!(
                "interactions per user must satisfy 1 <= {} <= {} <= {}",
                self.min_items, self.max_items, self.n_items
            )));
        }
        if self.min_age > self.max_age || self.max_age as f64 > self.age_cap {
            return Err(Error::Config("synthetic age range exceeds the cap".into()));
        }
        if !(0.0..=1.0).contains(&self.class_one_fraction) {
            return Err(Error::Config("class fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn try_generate(&self, seed: u64) -> Result<Dataset> {
        self.validate()?;
        let mut rng = stream_rng(seed, Stream::Generator);
        let n_items = self.n_items;
        let cluster: Vec<usize> = (0..n_items).map(|i| i % 2).collect();
        let position: Vec<f64> = (0..n_items).map(|_| rng.random::<f64>()).collect();
        let item_topics: Vec<f64> = (0..n_items * self.n_topics)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let popularity: Vec<f64> = (0..n_items)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                0.5 * v
            })
            .collect();
        let gumbel = Gumbel::new(0.0, 1.0).expect("valid Gumbel");
        let topic_scale = self.topic_strength / (self.n_topics as f64).sqrt();

        let mut rows = Vec::with_capacity(self.n_users);
        let mut attrs = UserAttributes {
            gender_tokens: vec!["F".into(), "M".into()],
            age_cap: self.age_cap,
            ..UserAttributes::default()
        };
        let mut scores = vec![0.0; n_items];
        for _ in 0..self.n_users {
            let class = usize::from(rng.random::<f64>() < self.class_one_fraction);
            let years = rng.random_range(self.min_age..=self.max_age);
            let age = normalize_age(years as f64, self.age_cap)?;
            let taste: Vec<f64> = (0..self.n_topics)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let count = rng.random_range(self.min_items..=self.max_items);
            // Older users favor high-position items, younger ones low.
            let tilt = self.age_strength * (age - 0.5);
            for i in 0..n_items {
                let topic: f64 = item_topics[i * self.n_topics..(i + 1) * self.n_topics]
                    .iter()
                    .zip(&taste)
                    .map(|(a, b)| a * b)
                    .sum();
                let class_bonus = if cluster[i] == class {
                    self.class_strength
                } else {
                    0.0
                };
                scores[i] = popularity[i]
                    + class_bonus
                    + tilt * (position[i] - 0.5) * 2.0
                    + topic_scale * topic
                    + gumbel.sample(&mut rng);
            }
            let mut order: Vec<u32> = (0..n_items as u32).collect();
            order.select_nth_unstable_by(count - 1, |a, b| {
                scores[*b as usize].total_cmp(&scores[*a as usize])
            });
            order.truncate(count);
            rows.push(order);
            attrs.gender.push(class);
            attrs.raw_age.push(years as f64);
            attrs.age.push(age);
        }
        let interactions = InteractionDataset::from_rows(
            rows,
            (0..self.n_users).map(|u| format!("u{u}")).collect(),
            (0..n_items).map(|i| format!("i{i}")).collect(),
        )?;
        Dataset::new(interactions, attrs)
    }

    /// Generates the dataset; panics on an invalid configuration.
    pub fn generate(&self, seed: u64) -> Dataset {
        self.try_generate(seed).expect("valid synthetic configuration")
    }
}

/// Writes `interactions.tsv` and `demographics.tsv` for `ds` into `dir`.
pub fn write_tsv(ds: &Dataset, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let inter = dir.join("interactions.tsv");
    let demo = dir.join("demographics.tsv");
    let write = |p: &Path, body: String| {
        fs::write(p, body).map_err(|e| Error::io(format!("writing {}", p.display()), e))
    };

    let mut body = String::from("user_id\titem_id\n");
    let items = ds.interactions.item_ids();
    for (u, user) in ds.interactions.user_ids().iter().enumerate() {
        for &i in ds.interactions.row(u) {
            let _ = writeln!(body, "{user}\t{}", items[i as usize]);
        }
    }
    write(&inter, body)?;

    let mut body = String::from("user_id\tgender\tage\n");
    let a = &ds.attributes;
    for (u, user) in ds.interactions.user_ids().iter().enumerate() {
        let _ = writeln!(body, "{user}\t{}\t{}", a.gender_tokens[a.gender[u]], a.raw_age[u]);
    }
    write(&demo, body)?;
    Ok((inter, demo))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let cfg = SyntheticConfig::small();
        let ds = cfg.generate(4);
        assert_eq!(ds.n_users(), 200);
        assert_eq!(ds.n_items(), 100);
        for u in 0..ds.n_users() {
            let n = ds.interactions.row(u).len();
            assert!((cfg.min_items..=cfg.max_items).contains(&n));
        }
        assert_eq!(ds, cfg.generate(4));
        assert_ne!(ds, cfg.generate(5));
    }

    #[test]
    fn attribute_cluster_is_planted() {
        let ds = SyntheticConfig::acceptance().generate(0);
        // Share of a user's items that fall in the cluster of their class.
        let mut share = 0.0;
        for u in 0..ds.n_users() {
            let row = ds.interactions.row(u);
            let g = ds.attributes.gender[u];
            share += row.iter().filter(|&&i| i as usize % 2 == g).count() as f64 / row.len() as f64;
        }
        share /= ds.n_users() as f64;
        assert!(share > 0.55, "{share}");
    }

    #[test]
    fn tsv_round_trip_through_loader() {
        let ds = SyntheticConfig::small().generate(1);
        let dir = tempfile::tempdir().unwrap();
        let (i, d) = write_tsv(&ds, dir.path()).unwrap();
        let (back, report) = crate::data::load_interactions(&i, &d, 60.0).unwrap();
        assert_eq!(report.unknown_user_rows, 0);
        assert_eq!(back.n_users(), ds.n_users());
        assert_eq!(back.attributes.raw_age, ds.attributes.raw_age);
        assert_eq!(back.interactions.n_interactions(), ds.interactions.n_interactions());
    }
}
