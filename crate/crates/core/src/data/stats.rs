use std::fmt;

use super::Dataset;

/// Mean, sample standard deviation and median.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Self { mean, std, median }
    }
}

/// The dataset description table: sizes, density, gender split and age.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub density: f64,
    pub gender_counts: Vec<(String, usize)>,
    /// Raw ages in years.
    pub age: Summary,
}

impl DatasetStats {
    pub fn of(ds: &Dataset) -> Self {
        let a = &ds.attributes;
        let mut counts = vec![0usize; a.n_gender_classes()];
        for &g in &a.gender {
            counts[g] += 1;
        }
        Self {
            users: ds.n_users(),
            items: ds.n_items(),
            interactions: ds.interactions.n_interactions(),
            density: ds.interactions.density(),
            gender_counts: a.gender_tokens.iter().cloned().zip(counts).collect(),
            age: Summary::of(&a.raw_age),
        }
    }
}

impl fmt::Display for DatasetStats {
    /// `key=value` lines.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "users={}", self.users)?;
        writeln!(f, "items={}", self.items)?;
        writeln!(f, "interactions={}", self.interactions)?;
        writeln!(f, "density={:.4}", self.density)?;
        for (token, n) in &self.gender_counts {
            writeln!(f, "gender.{token}={n}")?;
        }
        writeln!(f, "age.mean={:.1}", self.age.mean)?;
        writeln!(f, "age.std={:.1}", self.age.std)?;
        writeln!(f, "age.median={:.1}", self.age.median)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn summary_matches_hand_values() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.median, 2.5);
        assert_relative_eq!(s.std, (5.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_eq!(Summary::of(&[5.0, 1.0, 3.0]).median, 3.0);
    }

    #[test]
    fn stats_of_synthetic_dataset() {
        let ds = crate::synthetic::SyntheticConfig::small().generate(2);
        let st = ds.stats();
        assert_eq!(st.users, ds.n_users());
        assert_eq!(st.gender_counts.iter().map(|g| g.1).sum::<usize>(), st.users);
        let text = st.to_string();
        assert!(text.contains("density="));
    }
}
