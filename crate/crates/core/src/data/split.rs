use rand::seq::SliceRandom;

use super::InteractionDataset;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

pub const NUM_FOLDS: usize = 5;

/// One user-level split. The three lists partition all users and are sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Five independent user splits: 20% test, then 20% of the rest for
/// validation, each fold drawn from its own stream of `seed`.
pub fn make_folds(user_count: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if user_count < NUM_FOLDS {
        return Err(Error::Config(format!(
            "need at least {NUM_FOLDS} users for {NUM_FOLDS} folds, got {user_count}"
        )));
    }
    let n_test = (0.2 * user_count as f64).round() as usize;
    let n_val = (0.2 * (user_count - n_test) as f64).round() as usize;
    Ok((0..NUM_FOLDS)
        .map(|fold| {
            let mut perm: Vec<usize> = (0..user_count).collect();
            perm.shuffle(&mut stream_rng(seed, Stream::Folds(fold)));
            let mut test = perm[..n_test].to_vec();
            let mut validation = perm[n_test..n_test + n_val].to_vec();
            let mut train = perm[n_test + n_val..].to_vec();
            test.sort_unstable();
            validation.sort_unstable();
            train.sort_unstable();
            FoldSplit {
                fold,
                train,
                validation,
                test,
            }
        })
        .collect())
}

/// Random partition of a user's items: `round((1 - ratio) * n)` fold-in
/// items, the rest held out. Both halves come back sorted.
pub fn holdout_split<R: rand::Rng + ?Sized>(
    items: &[u32],
    ratio: f64,
    rng: &mut R,
) -> Result<(Vec<u32>, Vec<u32>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!(
            "holdout ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let n_in = ((1.0 - ratio) * items.len() as f64).round() as usize;
    let mut shuffled = items.to_vec();
    shuffled.shuffle(rng);
    let mut fold_in = shuffled[..n_in].to_vec();
    let mut holdout = shuffled[n_in..].to_vec();
    fold_in.sort_unstable();
    holdout.sort_unstable();
    Ok((fold_in, holdout))
}

/// Evaluation users with their fold-in/holdout partitions. Users with fewer
/// than two items are skipped.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EvalUsers {
    pub users: Vec<usize>,
    pub fold_in: Vec<Vec<u32>>,
    pub holdout: Vec<Vec<u32>>,
}

impl EvalUsers {
    pub fn build(
        ds: &InteractionDataset,
        users: &[usize],
        ratio: f64,
        seed: u64,
        fold: usize,
    ) -> Result<Self> {
        // Salting with the user list decorrelates validation and test draws.
        let salt: u64 = users.iter().fold(0u64, |h, &u| {
            h.wrapping_mul(0x100000001b3).wrapping_add(u as u64 + 1)
        });
        let mut rng = stream_rng(seed ^ salt, Stream::Holdout(fold));
        let mut out = Self::default();
        for &u in users {
            let row = ds.row(u);
            if row.len() < 2 {
                continue;
            }
            let (fold_in, holdout) = holdout_split(row, ratio, &mut rng)?;
            if holdout.is_empty() {
                continue;
            }
            out.users.push(u);
            out.fold_in.push(fold_in);
            out.holdout.push(holdout);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

/// `w_c = N / (C * N_c)`.
pub fn class_weights(labels: &[usize], n_classes: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        if l >= n_classes {
            return Err(Error::Data(format!(
                "label {l} outside {n_classes} classes"
            )));
        }
        counts[l] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Config(format!(
            "class {c} has no samples; cannot weight it"
        )));
    }
    let n = labels.len() as f64;
    Ok(counts
        .iter()
        .map(|&nc| n / (n_classes as f64 * nc as f64))
        .collect())
}

pub fn normalize_age(raw_age: f64, cap: f64) -> Result<f64> {
    if !(cap > 0.0) {
        return Err(Error::Config(format!("age cap must be positive, got {cap}")));
    }
    if !(0.0..=cap).contains(&raw_age) {
        return Err(Error::Data(format!("age {raw_age} outside [0, {cap}]")));
    }
    Ok(raw_age / cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hundred_users_split_20_16_64() {
        for f in make_folds(100, 7).unwrap() {
            assert_eq!(f.test.len(), 20);
            assert_eq!(f.validation.len(), 16);
            assert_eq!(f.train.len(), 64);
        }
    }

    #[test]
    fn folds_are_deterministic_and_seed_dependent() {
        assert_eq!(make_folds(300, 1).unwrap(), make_folds(300, 1).unwrap());
        let a = make_folds(300, 1).unwrap();
        let b = make_folds(300, 2).unwrap();
        assert!(a.iter().zip(&b).any(|(x, y)| x.test != y.test));
        // Folds within one seed draw different test sets.
        assert_ne!(a[0].test, a[1].test);
    }

    #[test]
    fn too_few_users_is_rejected() {
        assert!(make_folds(4, 0).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition_users(n in 5usize..400, seed in any::<u64>()) {
            for f in make_folds(n, seed).unwrap() {
                let mut all: Vec<usize> =
                    f.train.iter().chain(&f.validation).chain(&f.test).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            }
        }

        #[test]
        fn holdout_partitions_items(
            mut items in proptest::collection::btree_set(0u32..1000, 0..60),
            seed in any::<u64>(),
        ) {
            let items: Vec<u32> = std::mem::take(&mut items).into_iter().collect();
            let mut rng = stream_rng(seed, Stream::Holdout(0));
            let (a, b) = holdout_split(&items, 0.2, &mut rng).unwrap();
            prop_assert_eq!(a.len(), (0.8 * items.len() as f64).round() as usize);
            let mut all: Vec<u32> = a.iter().chain(&b).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, items);
        }
    }

    #[test]
    fn ten_items_hold_out_two() {
        let items: Vec<u32> = (0..10).collect();
        let mut r1 = stream_rng(3, Stream::Holdout(1));
        let mut r2 = stream_rng(3, Stream::Holdout(1));
        let a = holdout_split(&items, 0.2, &mut r1).unwrap();
        assert_eq!((a.0.len(), a.1.len()), (8, 2));
        assert_eq!(a, holdout_split(&items, 0.2, &mut r2).unwrap());
        let mut r = stream_rng(3, Stream::Holdout(1));
        assert!(holdout_split(&items, 1.0, &mut r).is_err());
        assert!(holdout_split(&items, 0.0, &mut r).is_err());
    }

    #[test]
    fn class_weight_examples() {
        let mut labels = vec![0; 80];
        labels.extend(vec![1; 20]);
        assert_eq!(class_weights(&labels, 2).unwrap(), vec![0.625, 2.5]);
        assert_eq!(class_weights(&[0, 1, 2, 0, 1, 2], 3).unwrap(), vec![1.0; 3]);
        let mut ml = vec![0; 4331];
        ml.extend(vec![1; 1709]);
        let w = class_weights(&ml, 2).unwrap();
        assert!((w[0] - 0.697).abs() < 1e-3 && (w[1] - 1.767).abs() < 1e-3, "{w:?}");
        assert!(matches!(class_weights(&[0, 0], 2), Err(Error::Config(_))));
    }

    #[test]
    fn age_normalization() {
        assert_eq!(normalize_age(30.0, 60.0).unwrap(), 0.5);
        assert_eq!(normalize_age(0.0, 60.0).unwrap(), 0.0);
        assert_eq!(normalize_age(60.0, 60.0).unwrap(), 1.0);
        assert!(normalize_age(61.0, 60.0).is_err());
        assert!(normalize_age(-1.0, 120.0).is_err());
        assert!((30.6f64 / 60.0 - 0.51).abs() < 1e-12);
    }

    #[test]
    fn eval_users_skip_short_rows() {
        let ds = InteractionDataset::from_rows(
            vec![vec![0], vec![0, 1, 2, 3, 4]],
            vec!["a".into(), "b".into()],
            (0..5).map(|i| i.to_string()).collect(),
        )
        .unwrap();
        let ev = EvalUsers::build(&ds, &[0, 1], 0.2, 9, 0).unwrap();
        assert_eq!(ev.users, vec![1]);
        assert_eq!(ev.fold_in[0].len() + ev.holdout[0].len(), 5);
        assert_eq!(ev, EvalUsers::build(&ds, &[0, 1], 0.2, 9, 0).unwrap());
    }
}
