use crate::error::{Error, Result};

/// Indices of the `k` highest scores, skipping `exclude`. Ties go to the
/// lower index so rankings are deterministic.
pub fn top_k(scores: &[f64], exclude: &[u32], k: usize) -> Vec<u32> {
    let mut masked = vec![false; scores.len()];
    for &i in exclude {
        if let Some(m) = masked.get_mut(i as usize) {
            *m = true;
        }
    }
    let mut cand: Vec<u32> = (0..scores.len() as u32)
        .filter(|&i| !masked[i as usize])
        .collect();
    let cmp = |a: &u32, b: &u32| {
        scores[*b as usize]
            .total_cmp(&scores[*a as usize])
            .then(a.cmp(b))
    };
    if cand.len() > k {
        cand.select_nth_unstable_by(k, cmp);
        cand.truncate(k);
    }
    cand.sort_by(cmp);
    cand
}

fn check(ranked: &[u32], fold_in: &[u32], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("cutoff k must be >= 1".into()));
    }
    if let Some(i) = ranked.iter().take(k).find(|i| fold_in.contains(i)) {
        return Err(Error::Contract(format!(
            "fold-in item {i} appears in the ranking"
        )));
    }
    Ok(())
}

/// Binary-relevance NDCG over the first `k` ranked items, normalized by the
/// ideal DCG of `min(k, |holdout|)` hits. `None` when the holdout is empty.
pub fn ndcg_at_k(ranked: &[u32], holdout: &[u32], fold_in: &[u32], k: usize) -> Result<Option<f64>> {
    check(ranked, fold_in, k)?;
    if holdout.is_empty() {
        return Ok(None);
    }
    let mut dcg = 0.0;
    for (pos, item) in ranked.iter().take(k).enumerate() {
        if holdout.contains(item) {
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let mut idcg = 0.0;
    for pos in 0..k.min(holdout.len()) {
        idcg += 1.0 / ((pos + 2) as f64).log2();
    }
    Ok(Some(dcg / idcg))
}

/// `|top-k ∩ holdout| / min(k, |holdout|)`. `None` when the holdout is empty.
pub fn recall_at_k(ranked: &[u32], holdout: &[u32], fold_in: &[u32], k: usize) -> Result<Option<f64>> {
    check(ranked, fold_in, k)?;
    if holdout.is_empty() {
        return Ok(None);
    }
    let hits = ranked.iter().take(k).filter(|i| holdout.contains(i)).count();
    Ok(Some(hits as f64 / k.min(holdout.len()) as f64))
}
