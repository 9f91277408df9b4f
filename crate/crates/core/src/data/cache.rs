//! Text cache of a preprocessed dataset.
//!
//! ```text
//! ADVXDATA 1
//! age_cap <f64>
//! genders <n>\t<token>...
//! items <m>
//! <item_id>                                    (m lines)
//! users <u>
//! <user_id>\t<gender>\t<raw_age>\t<age>\t<i,i,...>   (u lines)
//! ```
//!
//! Reals are written with Rust's shortest round-trip formatting, so decoding
//! reproduces every bit.

use super::{Dataset, InteractionDataset, UserAttributes};
use crate::error::{Error, Result};

const MAGIC: &str = "ADVXDATA 1";

pub(super) fn encode(ds: &Dataset) -> Vec<u8> {
    let a = &ds.attributes;
    let i = &ds.interactions;
    let mut s = String::new();
    s.push_str(MAGIC);
    s.push('\n');
    s.push_str(&format!("age_cap {:?}\n", a.age_cap));
    s.push_str(&format!("genders {}", a.gender_tokens.len()));
    for t in &a.gender_tokens {
        s.push('\t');
        s.push_str(t);
    }
    s.push('\n');
    s.push_str(&format!("items {}\n", i.n_items()));
    for id in i.item_ids() {
        s.push_str(id);
        s.push('\n');
    }
    s.push_str(&format!("users {}\n", i.n_users()));
    for u in 0..i.n_users() {
        let items: Vec<String> = i.row(u).iter().map(u32::to_string).collect();
        s.push_str(&format!(
            "{}\t{}\t{:?}\t{:?}\t{}\n",
            i.user_ids()[u],
            a.gender[u],
            a.raw_age[u],
            a.age[u],
            items.join(",")
        ));
    }
    s.into_bytes()
}

fn bad(what: impl Into<String>) -> Error {
    Error::Format(format!("dataset cache: {}", what.into()))
}

fn header<'a>(line: Option<&'a str>, tag: &str) -> Result<&'a str> {
    line.and_then(|l| l.strip_prefix(tag))
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| bad(format!("expected `{tag}` line")))
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| bad(format!("cannot parse `{s}`")))
}

pub(super) fn decode(bytes: &[u8]) -> Result<Dataset> {
    let text = std::str::from_utf8(bytes).map_err(|_| bad("not UTF-8"))?;
    let mut lines = text.split('\n');
    if lines.next() != Some(MAGIC) {
        return Err(bad("bad magic or unsupported version"));
    }
    let age_cap: f64 = num(header(lines.next(), "age_cap")?)?;
    let mut g = header(lines.next(), "genders")?.split('\t');
    let n_genders: usize = num(g.next().unwrap_or_default())?;
    let gender_tokens: Vec<String> = g.map(str::to_string).collect();
    if gender_tokens.len() != n_genders {
        return Err(bad("gender token count mismatch"));
    }
    let n_items: usize = num(header(lines.next(), "items")?)?;
    let item_ids = (0..n_items)
        .map(|_| lines.next().map(str::to_string).ok_or_else(|| bad("truncated item ids")))
        .collect::<Result<Vec<_>>>()?;
    let n_users: usize = num(header(lines.next(), "users")?)?;
    let mut rows = Vec::with_capacity(n_users);
    let mut user_ids = Vec::with_capacity(n_users);
    let mut attrs = UserAttributes {
        gender_tokens,
        age_cap,
        ..UserAttributes::default()
    };
    for _ in 0..n_users {
        let line = lines.next().ok_or_else(|| bad("truncated users"))?;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad(format!("bad user line `{line}`")));
        }
        user_ids.push(f[0].to_string());
        let gender: usize = num(f[1])?;
        if gender >= n_genders {
            return Err(bad(format!("gender class {gender} out of range")));
        }
        attrs.gender.push(gender);
        attrs.raw_age.push(num(f[2])?);
        attrs.age.push(num(f[3])?);
        let row = if f[4].is_empty() {
            Vec::new()
        } else {
            f[4].split(',').map(num).collect::<Result<Vec<u32>>>()?
        };
        rows.push(row);
    }
    if lines.next() != Some("") || lines.next().is_some() {
        return Err(bad("trailing content"));
    }
    let interactions = InteractionDataset::from_rows(rows, user_ids, item_ids)?;
    Dataset::new(interactions, attrs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::SyntheticConfig;

    #[test]
    fn round_trip_is_exact() {
        let ds = SyntheticConfig::small().generate(11);
        let bytes = encode(&ds);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, ds);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.attributes.age), bits(&ds.attributes.age));
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn awkward_reals_survive() {
        let interactions =
            InteractionDataset::from_pairs([("u", "i"), ("v", "i")]);
        let ds = Dataset::new(
            interactions,
            UserAttributes {
                gender: vec![0, 0],
                gender_tokens: vec!["x".into()],
                raw_age: vec![17.0, 33.0],
                age: vec![17.0 / 60.0, 0.1 + 0.2],
                age_cap: 60.0,
            },
        )
        .unwrap();
        assert_eq!(decode(&encode(&ds)).unwrap(), ds);
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = encode(&SyntheticConfig::small().generate(1));
        assert!(decode(&bytes[..bytes.len() / 2]).is_err());
        assert!(decode(b"ADVXDATA 2\n").is_err());
    }
}
