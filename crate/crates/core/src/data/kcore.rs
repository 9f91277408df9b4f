use super::InteractionDataset;
use crate::error::{Error, Result};

/// Surviving user and item indices of the maximal k-core, each ascending.
pub(super) fn k_core_indices(
    ds: &InteractionDataset,
    k: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if k == 0 {
        return Err(Error::Config("k-core requires k >= 1".into()));
    }
    let n_users = ds.n_users();
    let n_items = ds.n_items();
    let mut item_users: Vec<Vec<usize>> = vec![Vec::new(); n_items];
    for (u, row) in ds.rows().iter().enumerate() {
        for &i in row {
            item_users[i as usize].push(u);
        }
    }
    let mut user_deg: Vec<usize> = ds.rows().iter().map(Vec::len).collect();
    let mut item_deg: Vec<usize> = item_users.iter().map(Vec::len).collect();
    let mut user_alive = vec![true; n_users];
    let mut item_alive = vec![true; n_items];

    // Queue entries: (is_user, index).
    let mut queue: Vec<(bool, usize)> = Vec::new();
    for u in 0..n_users {
        if user_deg[u] < k {
            user_alive[u] = false;
            queue.push((true, u));
        }
    }
    for i in 0..n_items {
        if item_deg[i] < k {
            item_alive[i] = false;
            queue.push((false, i));
        }
    }
    while let Some((is_user, idx)) = queue.pop() {
        if is_user {
            for &i in ds.row(idx) {
                let i = i as usize;
                item_deg[i] -= 1;
                if item_alive[i] && item_deg[i] < k {
                    item_alive[i] = false;
                    queue.push((false, i));
                }
            }
        } else {
            for &u in &item_users[idx] {
                user_deg[u] -= 1;
                if user_alive[u] && user_deg[u] < k {
                    user_alive[u] = false;
                    queue.push((true, u));
                }
            }
        }
    }
    let users: Vec<usize> = (0..n_users).filter(|&u| user_alive[u]).collect();
    let items: Vec<usize> = (0..n_items).filter(|&i| item_alive[i]).collect();
    if users.is_empty() && n_users + n_items > 0 {
        return Err(Error::EmptyCore { k });
    }
    Ok((users, items))
}

/// Iteratively drops users and items with fewer than `k` interactions until
/// every survivor has at least `k`. An empty fixpoint is reported as
/// [`Error::EmptyCore`].
pub fn k_core_filter(ds: &InteractionDataset, k: usize) -> Result<InteractionDataset> {
    let (users, items) = k_core_indices(ds, k)?;
    Ok(ds.subset(&users, &items))
}
