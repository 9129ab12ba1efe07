//! Bipartite user/item recommendation graphs.
//!
//! `lists[i]` holds the candidate items of user `i`; `user_sets[j]` holds
//! the users whose lists contain item `j`. The two views are always kept
//! consistent.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adcore::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecGraph {
    n: usize,
    lists: Vec<Vec<usize>>,
    user_sets: Vec<Vec<usize>>,
}

impl RecGraph {
    /// Builds a graph over `n` items from per-user candidate lists.
    pub fn from_lists(n: usize, lists: Vec<Vec<usize>>) -> Result<Self> {
        let mut user_sets = vec![Vec::new(); n];
        for (i, list) in lists.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::invalid("lists", format!("user {i} has an empty list")));
            }
            let mut seen = BTreeSet::new();
            for &j in list {
                if j >= n {
                    return Err(Error::invalid("lists", format!("item {j} out of range for n = {n}")));
                }
                if !seen.insert(j) {
                    return Err(Error::invalid("lists", format!("user {i} lists item {j} twice")));
                }
                user_sets[j].push(i);
            }
        }
        Ok(Self { n, lists, user_sets })
    }

    pub fn m(&self) -> usize {
        self.lists.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lists(&self) -> &[Vec<usize>] {
        &self.lists
    }

    pub fn list(&self, user: usize) -> &[usize] {
        &self.lists[user]
    }

    pub fn users_of(&self, item: usize) -> &[usize] {
        &self.user_sets[item]
    }

    pub fn item_degree(&self, item: usize) -> usize {
        self.user_sets[item].len()
    }

    pub fn edge_count(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.lists[user].contains(&item)
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.lists.iter().enumerate().flat_map(|(i, l)| l.iter().map(move |&j| (i, j)))
    }

    pub fn isolated_items(&self) -> Vec<usize> {
        (0..self.n).filter(|&j| self.user_sets[j].is_empty()).collect()
    }

    /// `n x m` matrix whose row `j` averages the users of item `j`.
    /// Rows of isolated items are zero.
    pub fn averaging_matrix(&self) -> Matrix {
        let mut a = Matrix::zeros(self.n, self.m());
        for (j, users) in self.user_sets.iter().enumerate() {
            let w = 1.0 / users.len().max(1) as f64;
            for &i in users {
                a.set(j, i, w);
            }
        }
        a
    }

    pub fn user_degrees(&self) -> Vec<usize> {
        self.lists.iter().map(Vec::len).collect()
    }

    pub fn item_degrees(&self) -> Vec<usize> {
        self.user_sets.iter().map(Vec::len).collect()
    }
}

/// Block graph after degree-preserving edge swaps.
#[derive(Clone, Debug)]
pub struct ShuffledGraph {
    pub graph: RecGraph,
    pub swaps_requested: usize,
    pub swaps_achieved: usize,
}

fn check_arg(cond: bool, name: &'static str, reason: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::invalid(name, reason()))
    }
}

/// `blocks` disjoint user/item groups, each user listing `k` random items
/// of its own group, followed by `swaps` double-edge swaps.
///
/// A swap takes edges `(i, j)`, `(i', j')` with `i != i'`, `j != j'`,
/// `j` not in `X_i'` and `j'` not in `X_i`, and rewires them to `(i, j')`,
/// `(i', j)`. Both degree sequences are unchanged. Gives up after
/// `100 * swaps` attempts and reports how many swaps went through.
pub fn gen_block_shuffled(m: usize, n: usize, k: usize, blocks: usize, swaps: usize, seed: u64) -> Result<ShuffledGraph> {
    check_arg(blocks >= 1, "blocks", || "must be at least 1".into())?;
    check_arg(m % blocks == 0, "blocks", || format!("{blocks} does not divide m = {m}"))?;
    check_arg(n % blocks == 0, "blocks", || format!("{blocks} does not divide n = {n}"))?;
    let (mb, nb) = (m / blocks, n / blocks);
    check_arg(k >= 1 && k <= nb, "k", || format!("{k} outside [1, {nb}]"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lists: Vec<Vec<usize>> = (0..m)
        .map(|i| {
            let base = (i / mb) * nb;
            let mut items: Vec<usize> = if k == nb {
                (0..nb).collect()
            } else {
                sample(&mut rng, nb, k).into_vec()
            };
            items.iter_mut().for_each(|j| *j += base);
            items
        })
        .collect();

    // edge list addresses (user, slot in the user's list)
    let slots: Vec<(usize, usize)> = lists
        .iter()
        .enumerate()
        .flat_map(|(i, l)| (0..l.len()).map(move |s| (i, s)))
        .collect();
    let mut achieved = 0;
    let mut attempts = 0;
    let max_attempts = swaps.saturating_mul(100);
    while achieved < swaps && attempts < max_attempts && slots.len() >= 2 {
        attempts += 1;
        let e1 = rng.random_range(0..slots.len());
        let e2 = rng.random_range(0..slots.len());
        let ((i, s), (i2, s2)) = (slots[e1], slots[e2]);
        let (j, j2) = (lists[i][s], lists[i2][s2]);
        if i == i2 || j == j2 || lists[i2].contains(&j) || lists[i].contains(&j2) {
            continue;
        }
        lists[i][s] = j2;
        lists[i2][s2] = j;
        achieved += 1;
    }

    Ok(ShuffledGraph {
        graph: RecGraph::from_lists(n, lists)?,
        swaps_requested: swaps,
        swaps_achieved: achieved,
    })
}

/// Every user lists a uniform random `k`-subset of the `n` items.
pub fn gen_uniform(m: usize, n: usize, k: usize, seed: u64) -> Result<RecGraph> {
    check_arg(k >= 1 && k <= n, "k", || format!("{k} outside [1, {n}]"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lists = (0..m).map(|_| sample(&mut rng, n, k).into_vec()).collect();
    RecGraph::from_lists(n, lists)
}

/// Ring of `n` users and items: user `i` lists items `i` and `i + 1`
/// (the last user wraps to item 0).
pub fn gen_ring(n: usize) -> Result<RecGraph> {
    check_arg(n >= 3, "n", || format!("ring needs at least 3 nodes, got {n}"))?;
    let lists = (0..n).map(|i| vec![i, (i + 1) % n]).collect();
    RecGraph::from_lists(n, lists)
}

/// Two items. Without `distinct`, all `shared_users` users list both. With
/// `distinct`, two extra users `shared_users` and `shared_users + 1` list
/// only item 0 and only item 1 respectively.
pub fn gen_two_item(shared_users: usize, distinct: bool) -> Result<RecGraph> {
    if distinct {
        check_arg(shared_users >= 2, "shared_users", || {
            format!("needs at least 2 shared users, got {shared_users}")
        })?;
    } else {
        check_arg(shared_users >= 1, "shared_users", || "needs at least 1 user".into())?;
    }
    let mut lists = vec![vec![0, 1]; shared_users];
    if distinct {
        lists.push(vec![0]);
        lists.push(vec![1]);
    }
    RecGraph::from_lists(2, lists)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Interaction {
    pub user: String,
    pub item: usize,
}

/// Item features plus optional user/item interaction records.
#[derive(Clone, Debug)]
pub struct DatasetTable {
    pub feature_names: Vec<String>,
    pub features: Matrix,
    pub interactions: Vec<Interaction>,
}

impl DatasetTable {
    pub fn n(&self) -> usize {
        self.features.rows()
    }

    /// Features scaled to unit rows; rejects all-zero rows.
    pub fn unit_features(&self) -> Result<Matrix> {
        self.features.normalized_rows()
    }
}

/// Greedy lists built from interaction records.
#[derive(Clone, Debug)]
pub struct GreedyLists {
    pub graph: RecGraph,
    /// External id of each graph user.
    pub user_ids: Vec<String>,
}

/// Builds fixed-size candidate lists from interactions.
///
/// Users with fewer than `min_reviews` distinct items are dropped. Then,
/// until every list is full, the item with the most remaining users is
/// added to all of their lists, and users whose lists fill up stop
/// counting toward any other item.
pub fn build_lists_greedy(table: &DatasetTable, min_reviews: usize, list_size: usize) -> Result<GreedyLists> {
    check_arg(list_size >= 1, "list_size", || "must be at least 1".into())?;
    if table.interactions.is_empty() {
        return Err(Error::invalid("interactions", "no interaction records"));
    }
    let n = table.n();
    let mut per_user: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    for rec in &table.interactions {
        if rec.item >= n {
            return Err(Error::invalid(
                "interactions",
                format!("item {} out of range for n = {n}", rec.item),
            ));
        }
        per_user.entry(rec.user.as_str()).or_default().insert(rec.item);
    }
    let user_ids: Vec<String> = per_user
        .iter()
        .filter(|(_, items)| items.len() >= min_reviews)
        .map(|(u, _)| u.to_string())
        .collect();
    if user_ids.is_empty() {
        return Err(Error::InsufficientInteractions(Vec::new()));
    }

    // remaining eligible users per item
    let mut audience: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (u, id) in user_ids.iter().enumerate() {
        for &j in &per_user[id.as_str()] {
            audience[j].insert(u);
        }
    }
    let mut lists: Vec<Vec<usize>> = vec![Vec::new(); user_ids.len()];
    let mut unfilled = user_ids.len();
    while unfilled > 0 {
        let (best, count) = audience
            .iter()
            .enumerate()
            .map(|(j, a)| (j, a.len()))
            .fold((0, 0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        if count == 0 {
            let deficient = lists
                .iter()
                .enumerate()
                .filter(|(_, l)| l.len() < list_size)
                .map(|(u, _)| user_ids[u].clone())
                .collect();
            return Err(Error::InsufficientInteractions(deficient));
        }
        let users: Vec<usize> = std::mem::take(&mut audience[best]).into_iter().collect();
        for u in users {
            lists[u].push(best);
            if lists[u].len() == list_size {
                unfilled -= 1;
                for &j in &per_user[user_ids[u].as_str()] {
                    audience[j].remove(&u);
                }
            }
        }
    }
    Ok(GreedyLists {
        graph: RecGraph::from_lists(n, lists)?,
        user_ids,
    })
}

fn parse_cell(cell: &str, line: usize) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
        line,
        reason: format!("non-numeric cell `{cell}`"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            reason: format!("non-finite cell `{cell}`"),
        });
    }
    Ok(v)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Io(e.to_string()))
}

fn record_line(rec: &csv::StringRecord, fallback: usize) -> usize {
    rec.position().map_or(fallback, |p| p.line() as usize)
}

/// Reads a comma-delimited item table: a header of feature names, then one
/// numeric row per item.
pub fn ingest_items(path: impl AsRef<Path>) -> Result<DatasetTable> {
    let mut rdr = csv_reader(path.as_ref())?;
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| Error::Parse {
            line: 1,
            reason: e.to_string(),
        })?,
        None => {
            return Err(Error::Parse {
                line: 1,
                reason: "empty file".into(),
            })
        }
    };
    let names: Vec<String> = header.iter().map(|s| s.trim().to_string()).collect();
    if names.iter().all(|s| s.parse::<f64>().is_ok()) {
        return Err(Error::Parse {
            line: record_line(&header, 1),
            reason: "missing header row of feature names".into(),
        });
    }
    let d = names.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (idx, rec) in records.enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            line: idx + 2,
            reason: e.to_string(),
        })?;
        let line = record_line(&rec, idx + 2);
        if rec.len() != d {
            return Err(Error::Parse {
                line,
                reason: format!("expected {d} cells, found {}", rec.len()),
            });
        }
        for cell in rec.iter() {
            data.push(parse_cell(cell, line)?);
        }
        rows += 1;
    }
    Ok(DatasetTable {
        feature_names: names,
        features: Matrix::new(rows, d, data)?,
        interactions: Vec::new(),
    })
}

/// Reads `user_id,item_id` interaction records; `item_id` is the 0-based
/// row of the item table.
pub fn ingest_interactions(path: impl AsRef<Path>) -> Result<Vec<Interaction>> {
    let mut rdr = csv_reader(path.as_ref())?;
    let mut out = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        let line = record_line(&rec, idx + 1);
        if rec.len() != 2 {
            return Err(Error::Parse {
                line,
                reason: format!("expected 2 cells, found {}", rec.len()),
            });
        }
        if idx == 0 && rec[1].trim().parse::<usize>().is_err() {
            continue; // header
        }
        let item = rec[1].trim().parse::<usize>().map_err(|_| Error::Parse {
            line,
            reason: format!("invalid item id `{}`", &rec[1]),
        })?;
        out.push(Interaction {
            user: rec[0].trim().to_string(),
            item,
        });
    }
    Ok(out)
}
