//! Interaction logs, demographics, and the splits built from them.

mod cache;
mod kcore;
mod load;
mod split;
mod stats;

use std::collections::HashMap;

use rand::seq::index::sample;
use sha2::{Digest, Sha256};

use crate::adversarial::{AttributeSpec, AttributeTargets, TargetTable};
use crate::array::Array;
use crate::error::{Error, Result};
use crate::params::hex;
use crate::rng::{stream_rng, Stream};

pub use kcore::k_core_filter;
pub use load::{load_interactions, load_ml1m, LoadReport};
pub use split::{
    class_weights, holdout_split, make_folds, normalize_age, EvalUsers, FoldSplit, NUM_FOLDS,
};
pub use stats::{DatasetStats, Summary};

pub const GENDER: &str = "gender";
pub const AGE: &str = "age";

/// Binary user×item interactions with external id maps.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InteractionDataset {
    n_items: usize,
    rows: Vec<Vec<u32>>,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
}

impl InteractionDataset {
    /// Builds a dataset from `(user, item)` pairs. Ids are densified in order
    /// of first appearance and duplicate pairs collapse.
    pub fn from_pairs<I, U, T>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (U, T)>,
        U: AsRef<str>,
        T: AsRef<str>,
    {
        let mut users: HashMap<String, usize> = HashMap::new();
        let mut items: HashMap<String, u32> = HashMap::new();
        let mut ds = Self::default();
        for (u, i) in pairs {
            let u = u.as_ref();
            let i = i.as_ref();
            let ui = *users.entry(u.to_string()).or_insert_with(|| {
                ds.user_ids.push(u.to_string());
                ds.rows.push(Vec::new());
                ds.user_ids.len() - 1
            });
            let ii = *items.entry(i.to_string()).or_insert_with(|| {
                ds.item_ids.push(i.to_string());
                (ds.item_ids.len() - 1) as u32
            });
            ds.rows[ui].push(ii);
        }
        ds.n_items = ds.item_ids.len();
        for row in &mut ds.rows {
            row.sort_unstable();
            row.dedup();
        }
        ds
    }

    /// Builds a dataset from dense rows. Row entries must be valid item
    /// indices; they are sorted and deduplicated.
    pub fn from_rows(
        rows: Vec<Vec<u32>>,
        user_ids: Vec<String>,
        item_ids: Vec<String>,
    ) -> Result<Self> {
        if rows.len() != user_ids.len() {
            return Err(Error::Data(format!(
                "{} rows for {} user ids",
                rows.len(),
                user_ids.len()
            )));
        }
        let n_items = item_ids.len();
        let mut rows = rows;
        for (u, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            if row.last().is_some_and(|&i| i as usize >= n_items) {
                return Err(Error::Data(format!(
                    "user {u}: item index out of range (n_items {n_items})"
                )));
            }
        }
        Ok(Self {
            n_items,
            rows,
            user_ids,
            item_ids,
        })
    }

    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_interactions(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn density(&self) -> f64 {
        let cells = self.n_users() as f64 * self.n_items as f64;
        if cells == 0.0 {
            0.0
        } else {
            self.n_interactions() as f64 / cells
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, user: usize) -> &[u32] {
        &self.rows[user]
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn item_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_items];
        for row in &self.rows {
            for &i in row {
                deg[i as usize] += 1;
            }
        }
        deg
    }

    /// Dense binary matrix for the given users.
    pub fn batch(&self, users: &[usize]) -> Array {
        let rows: Vec<&[u32]> = users.iter().map(|&u| self.rows[u].as_slice()).collect();
        dense_rows(&rows, self.n_items)
    }

    /// Keeps the listed users and items (indices into this dataset, in
    /// increasing order) and re-densifies item indices.
    pub fn subset(&self, users: &[usize], items: &[usize]) -> Self {
        let mut remap = vec![u32::MAX; self.n_items];
        for (new, &old) in items.iter().enumerate() {
            remap[old] = new as u32;
        }
        let rows = users
            .iter()
            .map(|&u| {
                self.rows[u]
                    .iter()
                    .filter_map(|&i| {
                        let m = remap[i as usize];
                        (m != u32::MAX).then_some(m)
                    })
                    .collect()
            })
            .collect();
        Self {
            n_items: items.len(),
            rows,
            user_ids: users.iter().map(|&u| self.user_ids[u].clone()).collect(),
            item_ids: items.iter().map(|&i| self.item_ids[i].clone()).collect(),
        }
    }
}

/// Dense binary matrix from sparse rows.
pub fn dense_rows(rows: &[&[u32]], n_items: usize) -> Array {
    let mut data = vec![0.0; rows.len() * n_items];
    for (r, row) in rows.iter().enumerate() {
        for &i in *row {
            data[r * n_items + i as usize] = 1.0;
        }
    }
    Array::matrix(rows.len(), n_items, data).expect("shape matches")
}

/// Protected attributes aligned with the users of an [`InteractionDataset`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UserAttributes {
    /// Class index per user into `gender_tokens`.
    pub gender: Vec<usize>,
    pub gender_tokens: Vec<String>,
    pub raw_age: Vec<f64>,
    /// `raw_age / age_cap`, in `[0, 1]`.
    pub age: Vec<f64>,
    pub age_cap: f64,
}

impl UserAttributes {
    pub fn len(&self) -> usize {
        self.gender.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gender.is_empty()
    }

    pub fn n_gender_classes(&self) -> usize {
        self.gender_tokens.len()
    }

    pub fn select(&self, users: &[usize]) -> Self {
        Self {
            gender: users.iter().map(|&u| self.gender[u]).collect(),
            gender_tokens: self.gender_tokens.clone(),
            raw_age: users.iter().map(|&u| self.raw_age[u]).collect(),
            age: users.iter().map(|&u| self.age[u]).collect(),
            age_cap: self.age_cap,
        }
    }

    /// Targets of the named attributes for `users`.
    pub fn targets(&self, names: &[String], users: &[usize]) -> Result<TargetTable> {
        let mut table = TargetTable::new();
        for name in names {
            let column = match name.as_str() {
                GENDER => AttributeTargets::Classes(users.iter().map(|&u| self.gender[u]).collect()),
                AGE => AttributeTargets::Values(users.iter().map(|&u| self.age[u]).collect()),
                other => {
                    return Err(Error::Data(format!("no attribute column named `{other}`")))
                }
            };
            table.insert(name.clone(), column);
        }
        Ok(table)
    }

    /// Attribute specs for the named attributes, with class weights taken
    /// from `train_users` and every λ set to zero.
    pub fn specs(&self, names: &[String], train_users: &[usize]) -> Result<Vec<AttributeSpec>> {
        names
            .iter()
            .map(|name| match name.as_str() {
                GENDER => {
                    let labels: Vec<usize> = train_users.iter().map(|&u| self.gender[u]).collect();
                    let w = class_weights(&labels, self.n_gender_classes())?;
                    AttributeSpec::categorical(GENDER, w, 0.0)
                }
                AGE => AttributeSpec::continuous(AGE, 0.0),
                other => Err(Error::Data(format!("no attribute column named `{other}`"))),
            })
            .collect()
    }
}

/// Interactions plus the aligned protected attributes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub interactions: InteractionDataset,
    pub attributes: UserAttributes,
}

impl Dataset {
    pub fn new(interactions: InteractionDataset, attributes: UserAttributes) -> Result<Self> {
        if interactions.n_users() != attributes.len() {
            return Err(Error::Data(format!(
                "{} users but {} attribute rows",
                interactions.n_users(),
                attributes.len()
            )));
        }
        Ok(Self {
            interactions,
            attributes,
        })
    }

    pub fn n_users(&self) -> usize {
        self.interactions.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.interactions.n_items()
    }

    /// k-core filtering with attributes kept aligned.
    pub fn k_core(&self, k: usize) -> Result<Self> {
        let (users, items) = kcore::k_core_indices(&self.interactions, k)?;
        Ok(Self {
            interactions: self.interactions.subset(&users, &items),
            attributes: self.attributes.select(&users),
        })
    }

    /// Keeps `n_items` items drawn uniformly at random (without
    /// replacement). Users keep only interactions with surviving items.
    pub fn subsample_items(&self, n_items: usize, seed: u64) -> Self {
        let total = self.n_items();
        if n_items >= total {
            return self.clone();
        }
        let mut rng = stream_rng(seed, Stream::Generator);
        let mut items: Vec<usize> = sample(&mut rng, total, n_items).into_vec();
        items.sort_unstable();
        let users: Vec<usize> = (0..self.n_users()).collect();
        Self {
            interactions: self.interactions.subset(&users, &items),
            attributes: self.attributes.clone(),
        }
    }

    pub fn to_cache_bytes(&self) -> Vec<u8> {
        cache::encode(self)
    }

    pub fn from_cache_bytes(bytes: &[u8]) -> Result<Self> {
        cache::decode(bytes)
    }

    /// SHA-256 of the cache encoding.
    pub fn checksum(&self) -> String {
        hex(&Sha256::digest(self.to_cache_bytes()))
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats::of(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_pairs_densifies_and_collapses_duplicates() {
        let ds = InteractionDataset::from_pairs([
            ("u9", "b"),
            ("u1", "a"),
            ("u9", "a"),
            ("u9", "b"),
        ]);
        assert_eq!(ds.n_users(), 2);
        assert_eq!(ds.n_items(), 2);
        assert_eq!(ds.n_interactions(), 3);
        assert_eq!(ds.user_ids(), &["u9", "u1"]);
        assert_eq!(ds.row(0), &[0, 1]);
        assert_eq!(ds.row(1), &[1]);
    }

    #[test]
    fn id_maps_are_bijections() {
        let pairs: Vec<(String, String)> = (0..50)
            .map(|k| (format!("u{}", k % 7), format!("i{}", (k * 13) % 11)))
            .collect();
        let ds = InteractionDataset::from_pairs(pairs);
        let mut u = ds.user_ids().to_vec();
        u.sort();
        u.dedup();
        assert_eq!(u.len(), ds.n_users());
        let mut i = ds.item_ids().to_vec();
        i.sort();
        i.dedup();
        assert_eq!(i.len(), ds.n_items());
    }

    #[test]
    fn batch_is_binary() {
        let ds = InteractionDataset::from_pairs([("u", "a"), ("u", "c"), ("v", "b")]);
        let b = ds.batch(&[1, 0]);
        assert_eq!(b.data(), &[0.0, 0.0, 1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn item_subsampling_keeps_requested_count() {
        let ds = crate::synthetic::SyntheticConfig::small().generate(3);
        let sub = ds.subsample_items(40, 1);
        assert_eq!(sub.n_items(), 40);
        assert_eq!(sub.n_users(), ds.n_users());
        assert_eq!(sub, ds.subsample_items(40, 1));
    }
}
