use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{normalize_age, Dataset, InteractionDataset, UserAttributes};
use crate::error::{Error, Result};

/// Counts of rows dropped while loading.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub interaction_rows: usize,
    pub unknown_user_rows: usize,
    pub users_missing_attributes: usize,
    pub duplicate_pairs: usize,
}

const MISSING: [&str; 6] = ["", "na", "nan", "null", "none", "?"];

fn is_missing(token: &str) -> bool {
    let t = token.trim();
    MISSING.iter().any(|m| t.eq_ignore_ascii_case(m)) || t == "-"
}

struct Table<'a> {
    path: &'a Path,
    text: String,
    columns: Vec<usize>,
    /// 1 when the first line is a header, 0 otherwise.
    skip: usize,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

impl<'a> Table<'a> {
    /// Reads a TSV with a header line and resolves the wanted columns by
    /// name, falling back to their position.
    fn open(path: &'a Path, wanted: &[&str]) -> Result<Self> {
        let text = read(path)?;
        let header: Vec<String> = text
            .lines()
            .next()
            .unwrap_or_default()
            .split('\t')
            .map(|h| h.trim().to_ascii_lowercase())
            .collect();
        let by_name: Option<Vec<usize>> = wanted
            .iter()
            .map(|w| header.iter().position(|h| h == w))
            .collect();
        let columns = by_name.unwrap_or_else(|| (0..wanted.len()).collect());
        Ok(Self {
            path,
            text,
            columns,
            skip: 1,
        })
    }

    /// Reads a headerless `::`-separated file, taking the first columns.
    fn open_dat(path: &'a Path, n_columns: usize) -> Result<Self> {
        Ok(Self {
            path,
            text: read(path)?.replace("::", "\t"),
            columns: (0..n_columns).collect(),
            skip: 0,
        })
    }

    /// Data rows as `(line_number, fields)`, skipping the header and blank lines.
    fn rows(&self) -> impl Iterator<Item = Result<(usize, Vec<&str>)>> + '_ {
        let need = self.columns.iter().copied().max().map_or(0, |m| m + 1);
        self.text
            .lines()
            .enumerate()
            .skip(self.skip)
            .filter(|(_, l)| !l.trim().is_empty())
            .map(move |(i, line)| {
                let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
                if fields.len() < need {
                    return Err(Error::Parse {
                        path: self.path.to_path_buf(),
                        line: i + 1,
                        message: format!("expected at least {need} tab-separated fields"),
                    });
                }
                Ok((i + 1, self.columns.iter().map(|&c| fields[c].trim()).collect()))
            })
    }

    fn parse_error(&self, line: usize, message: String) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            message,
        }
    }
}

/// Loads `interactions.tsv` (`user_id`, `item_id`) and `demographics.tsv`
/// (`user_id`, `gender`, `age`). Users lacking gender or age are dropped, as
/// are interaction rows of users absent from the demographics file.
pub fn load_interactions(
    path: &Path,
    demographics_path: &Path,
    age_cap: f64,
) -> Result<(Dataset, LoadReport)> {
    let demo = Table::open(demographics_path, &["user_id", "gender", "age"])?;
    let inter = Table::open(path, &["user_id", "item_id"])?;
    load_tables(&inter, &demo, age_cap)
}

/// Loads the MovieLens-1M release files `ratings.dat`
/// (`user::item::rating::time`) and `users.dat` (`user::gender::age::...`).
/// Every rating counts as an interaction.
pub fn load_ml1m(ratings: &Path, users: &Path, age_cap: f64) -> Result<(Dataset, LoadReport)> {
    let demo = Table::open_dat(users, 3)?;
    let inter = Table::open_dat(ratings, 2)?;
    load_tables(&inter, &demo, age_cap)
}

fn load_tables(inter: &Table, demo: &Table, age_cap: f64) -> Result<(Dataset, LoadReport)> {
    let mut report = LoadReport::default();
    let mut gender_tokens: Vec<String> = Vec::new();
    let mut known: HashMap<String, Option<(usize, f64)>> = HashMap::new();
    for row in demo.rows() {
        let (line, f) = row?;
        let (user, gender, age) = (f[0], f[1], f[2]);
        if user.is_empty() {
            return Err(demo.parse_error(line, "empty user_id".into()));
        }
        let attrs = if is_missing(gender) || is_missing(age) {
            None
        } else {
            let years: i64 = age
                .parse()
                .map_err(|_| demo.parse_error(line, format!("age `{age}` is not an integer")))?;
            let class = match gender_tokens.iter().position(|g| g == gender) {
                Some(c) => c,
                None => {
                    gender_tokens.push(gender.to_string());
                    gender_tokens.len() - 1
                }
            };
            Some((class, years as f64))
        };
        if known.insert(user.to_string(), attrs).is_some() {
            return Err(demo.parse_error(line, format!("duplicate user `{user}`")));
        }
    }
    report.users_missing_attributes = known.values().filter(|a| a.is_none()).count();

    let mut pairs = Vec::new();
    for row in inter.rows() {
        let (line, f) = row?;
        if f[0].is_empty() || f[1].is_empty() {
            return Err(inter.parse_error(line, "empty user_id or item_id".into()));
        }
        report.interaction_rows += 1;
        match known.get(f[0]) {
            Some(Some(_)) => pairs.push((f[0], f[1])),
            Some(None) => {}
            None => report.unknown_user_rows += 1,
        }
    }
    if report.unknown_user_rows > 0 {
        log::warn!(
            "{}: dropped {} interaction rows of users without demographics",
            inter.path.display(),
            report.unknown_user_rows
        );
    }
    let n_pairs = pairs.len();
    let interactions = InteractionDataset::from_pairs(pairs);
    report.duplicate_pairs = n_pairs - interactions.n_interactions();

    let mut attributes = UserAttributes {
        gender_tokens,
        age_cap,
        ..UserAttributes::default()
    };
    for user in interactions.user_ids() {
        let (class, years) = known[user.as_str()].expect("only users with attributes kept");
        let age = normalize_age(years, age_cap)
            .map_err(|e| Error::Data(format!("user `{user}`: {e}")))?;
        attributes.gender.push(class);
        attributes.raw_age.push(years);
        attributes.age.push(age);
    }
    Ok((Dataset::new(interactions, attributes)?, report))
}
