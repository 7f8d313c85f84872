//! Exact nearest-neighbour retrieval and Recall@K reporting.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{Difficulty, PairSet};
use crate::scalar::{squared_euclidean, Real};
use crate::tensor::Descriptor;

/// Reference database: one descriptor row per id, Euclidean metric.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorDb<T> {
    ids: Vec<String>,
    dim: usize,
    data: Vec<T>,
    index: HashMap<String, usize>,
}

impl<T: Real> DescriptorDb<T> {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != ids.len() * dim {
            return Err(invalid(format!(
                "{} ids of dim {dim} need {} values, got {}",
                ids.len(),
                ids.len() * dim,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("row {} has a non-finite value", pos / dim.max(1))));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(invalid(format!("duplicate database id `{id}`")));
            }
        }
        Ok(Self { ids, dim, data, index })
    }

    pub fn from_rows(rows: Vec<(String, Descriptor<T>)>) -> Result<Self> {
        let dim = rows.first().map_or(0, |(_, d)| d.dim());
        let mut ids = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (id, d) in rows {
            if d.dim() != dim {
                return Err(invalid(format!("descriptor `{id}` has dim {}, expected {dim}", d.dim())));
            }
            ids.push(id);
            data.extend(d.into_vec());
        }
        Self::new(ids, dim, data)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<Descriptor<T>> {
        self.position(id).map(|i| Descriptor::new(self.row(i).to_vec()))
    }
}

fn rank_order<T: Real>(a: &(usize, T), b: &(usize, T), ids: &[String]) -> Ordering {
    a.1.partial_cmp(&b.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| ids[a.0].cmp(&ids[b.0]))
}

/// The `k` closest rows (exhaustive scan), ties broken by ascending id.
pub fn top_k<T: Real>(query: &[T], db: &DescriptorDb<T>, k: usize) -> Result<Vec<(String, T)>> {
    top_k_filtered(query, db, k, |_| false)
}

/// As [`top_k`], skipping rows whose index satisfies `exclude`.
pub fn top_k_filtered<T: Real>(
    query: &[T],
    db: &DescriptorDb<T>,
    k: usize,
    exclude: impl Fn(usize) -> bool,
) -> Result<Vec<(String, T)>> {
    if k == 0 {
        return Err(invalid("k must be >= 1"));
    }
    if db.is_empty() {
        return Err(invalid("database is empty"));
    }
    if query.len() != db.dim() {
        return Err(invalid(format!("query dim {} != database dim {}", query.len(), db.dim())));
    }
    let mut scored: Vec<(usize, T)> = (0..db.len())
        .filter(|&i| !exclude(i))
        .map(|i| (i, squared_euclidean(query, db.row(i))))
        .collect();
    let ids = db.ids();
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, |a, b| rank_order(a, b, ids));
        scored.truncate(k);
    }
    scored.sort_by(|a, b| rank_order(a, b, ids));
    Ok(scored.into_iter().map(|(i, d2)| (ids[i].clone(), d2.sqrt())).collect())
}

/// Recall per K for one subset of queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRecall {
    pub queries: usize,
    /// Parallel to `RecallReport::ks`; 0 when the subset is empty.
    pub recall: Vec<f64>,
}

/// Recall@K on all queries and on the easy, semi-hard and hard subsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub ks: Vec<usize>,
    pub overall: SubsetRecall,
    pub easy: SubsetRecall,
    pub semi_hard: SubsetRecall,
    pub hard: SubsetRecall,
    /// Queries left out because none of their positives is in the database.
    pub excluded: usize,
}

impl RecallReport {
    pub fn subset(&self, difficulty: Option<Difficulty>) -> &SubsetRecall {
        match difficulty {
            None => &self.overall,
            Some(Difficulty::Easy) => &self.easy,
            Some(Difficulty::SemiHard) => &self.semi_hard,
            Some(Difficulty::Hard) => &self.hard,
        }
    }

    /// Recall at `k` on the given subset (`None` = overall).
    pub fn at(&self, difficulty: Option<Difficulty>, k: usize) -> Option<f64> {
        let i = self.ks.iter().position(|&x| x == k)?;
        Some(self.subset(difficulty).recall[i])
    }

    /// Per-entry difference `self - baseline` (same ks required).
    pub fn improvement_over(&self, baseline: &RecallReport) -> Result<Vec<[f64; 4]>> {
        if self.ks != baseline.ks {
            return Err(invalid(format!(
                "reports use different K lists: {:?} vs {:?}",
                self.ks, baseline.ks
            )));
        }
        Ok((0..self.ks.len())
            .map(|i| {
                let d = |a: &SubsetRecall, b: &SubsetRecall| a.recall[i] - b.recall[i];
                [
                    d(&self.overall, &baseline.overall),
                    d(&self.easy, &baseline.easy),
                    d(&self.hard, &baseline.hard),
                    d(&self.semi_hard, &baseline.semi_hard),
                ]
            })
            .collect())
    }
}

/// One query: its descriptor and mined ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Query<'a, T> {
    pub descriptor: &'a [T],
    pub pairs: &'a PairSet,
}

/// Recall@K with no exclusions beyond the query's own id.
pub fn recall_at_k<T: Real>(queries: &[Query<'_, T>], db: &DescriptorDb<T>, ks: &[usize]) -> Result<RecallReport> {
    recall_at_k_with(queries, db, ks, |_, _| false)
}

/// Recall@K. A query is recalled at K when any of its K nearest database
/// entries is one of its positives. Database entries with the query's own
/// id, or for which `exclude(query_id, db_id)` holds, are skipped.
pub fn recall_at_k_with<T: Real>(
    queries: &[Query<'_, T>],
    db: &DescriptorDb<T>,
    ks: &[usize],
    exclude: impl Fn(&str, &str) -> bool + Sync,
) -> Result<RecallReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(invalid("ks must be a nonempty list of positive integers"));
    }
    let k_max = *ks.iter().max().expect("nonempty");

    // First rank (0-based) at which a positive appears, or None.
    let evaluated: Vec<Option<Option<usize>>> = queries
        .par_iter()
        .map(|q| -> Result<Option<Option<usize>>> {
            let positives: HashSet<&str> = q.pairs.positives.iter().map(String::as_str).collect();
            if !positives.iter().any(|p| db.position(p).is_some()) {
                return Ok(None);
            }
            let qid = q.pairs.query_id.as_str();
            let ids = db.ids();
            let hits = top_k_filtered(q.descriptor, db, k_max, |i| ids[i] == qid || exclude(qid, &ids[i]))?;
            Ok(Some(hits.iter().position(|(id, _)| positives.contains(id.as_str()))))
        })
        .collect::<Result<_>>()?;

    let mut counts = [0usize; 4];
    let mut hits = vec![[0usize; 4]; ks.len()];
    let mut excluded = 0;
    for (q, outcome) in queries.iter().zip(&evaluated) {
        let Some(rank) = outcome else {
            excluded += 1;
            continue;
        };
        let slot = match q.pairs.difficulty {
            Some(Difficulty::Easy) => Some(1),
            Some(Difficulty::SemiHard) => Some(2),
            Some(Difficulty::Hard) => Some(3),
            None => None,
        };
        counts[0] += 1;
        if let Some(s) = slot {
            counts[s] += 1;
        }
        for (ki, &k) in ks.iter().enumerate() {
            if rank.is_some_and(|r| r < k) {
                hits[ki][0] += 1;
                if let Some(s) = slot {
                    hits[ki][s] += 1;
                }
            }
        }
    }
    let subset = |s: usize| SubsetRecall {
        queries: counts[s],
        recall: hits
            .iter()
            .map(|h| if counts[s] == 0 { 0.0 } else { h[s] as f64 / counts[s] as f64 })
            .collect(),
    };
    Ok(RecallReport {
        ks: ks.to_vec(),
        overall: subset(0),
        easy: subset(1),
        semi_hard: subset(2),
        hard: subset(3),
        excluded,
    })
}

/// Renders reports as rows of `R@K | R^E@K | R^H@K | R^SH@K` in percent,
/// with an optional "Improvements" row (second minus first).
pub fn report_table(rows: &[(&str, &RecallReport)], improvements: bool) -> Result<String> {
    let Some((_, first)) = rows.first() else {
        return Ok(String::new());
    };
    let ks = &first.ks;
    let mut out = String::new();
    let mut header = format!("{:<16}", "method");
    for tag in ["R", "R^E", "R^H", "R^SH"] {
        for k in ks {
            header.push_str(&format!(" {:>8}", format!("{tag}@{k}")));
        }
        header.push_str(" |");
    }
    let _ = writeln!(out, "{}", header.trim_end_matches(" |"));
    let line = |name: &str, values: [Vec<f64>; 4]| {
        let mut s = format!("{name:<16}");
        for group in values {
            for v in group {
                s.push_str(&format!(" {:>8.2}", 100.0 * v));
            }
            s.push_str(" |");
        }
        s.trim_end_matches(" |").to_string()
    };
    for (name, r) in rows {
        if &r.ks != ks {
            return Err(invalid("all reports in a table must share the same ks"));
        }
        let _ = writeln!(
            out,
            "{}",
            line(name, [r.overall.recall.clone(), r.easy.recall.clone(), r.hard.recall.clone(), r.semi_hard.recall.clone()])
        );
    }
    if improvements && rows.len() >= 2 {
        let delta = rows[1].1.improvement_over(rows[0].1)?;
        let col = |j: usize| delta.iter().map(|d| d[j]).collect::<Vec<_>>();
        let _ = writeln!(out, "{}", line("Improvements", [col(0), col(1), col(2), col(3)]));
    }
    Ok(out)
}
