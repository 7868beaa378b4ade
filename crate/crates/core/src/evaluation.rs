//! Offline accuracy and diversity metrics against the probe set.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::DataSplit;
use crate::error::{Error, Result};
use crate::imputation::IllsTrace;
use crate::spreading::{Provenance, ScoreMatrix};

/// Top-L items for one user, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RecommendationList {
    pub user: usize,
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
}

/// All non-training items of `user`, best first, ties to the lower index.
fn ranked_candidates(scores: &ScoreMatrix, user: usize) -> Vec<usize> {
    let mut items: Vec<usize> = (0..scores.item_count())
        .filter(|&a| scores.provenance(a, user) != Provenance::Observed)
        .collect();
    items.sort_by(|&a, &b| scores.get(b, user).total_cmp(&scores.get(a, user)).then(a.cmp(&b)));
    items
}

pub fn recommend(scores: &ScoreMatrix, user: usize, len: usize) -> RecommendationList {
    let mut items = ranked_candidates(scores, user);
    items.truncate(len);
    RecommendationList {
        user,
        scores: items.iter().map(|&a| scores.get(a, user)).collect(),
        items,
    }
}

/// Exact AUC over every (probe link, non-link) pair of the same user.
/// Ties count one half.
pub fn auc(scores: &ScoreMatrix, split: &DataSplit) -> Result<f64> {
    if split.probe.is_empty() {
        return Err(Error::Data("probe set is empty".into()));
    }
    let probe = split.probe_by_user();
    let n = scores.item_count();
    let (mut wins, mut pairs) = (0.0f64, 0u64);
    let mut pooled: Vec<(f64, bool)> = Vec::with_capacity(n);
    for (user, probe_items) in probe.iter().enumerate() {
        if probe_items.is_empty() {
            continue;
        }
        pooled.clear();
        for a in 0..n {
            if scores.provenance(a, user) == Provenance::Observed {
                continue;
            }
            let is_probe = probe_items.binary_search(&(a as u32)).is_ok();
            pooled.push((scores.get(a, user), is_probe));
        }
        let positives = pooled.iter().filter(|p| p.1).count() as u64;
        let negatives = pooled.len() as u64 - positives;
        if positives == 0 || negatives == 0 {
            continue;
        }
        // Mann–Whitney U with mid-ranks, counted in half units to stay exact.
        pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut doubled_rank_sum = 0u64;
        let mut start = 0usize;
        while start < pooled.len() {
            let mut end = start;
            while end < pooled.len() && pooled[end].0 == pooled[start].0 {
                end += 1;
            }
            // ranks start+1 ..= end, twice their mean is start + 1 + end
            let doubled_mid = (start + 1 + end) as u64;
            let hits = pooled[start..end].iter().filter(|p| p.1).count() as u64;
            doubled_rank_sum += hits * doubled_mid;
            start = end;
        }
        let doubled_u = doubled_rank_sum - positives * (positives + 1);
        wins += doubled_u as f64 / 2.0;
        pairs += positives * negatives;
    }
    if pairs == 0 {
        return Err(Error::GraphComplete);
    }
    Ok(wins / pairs as f64)
}

/// Hits of each probe user's top-`len` list, paired with the user's probe size.
fn hits_at(lists: &[Vec<usize>], probe: &[Vec<u32>], len: usize) -> Vec<(usize, usize)> {
    probe
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.is_empty())
        .map(|(u, p)| {
            let hits = lists[u]
                .iter()
                .take(len)
                .filter(|&&a| p.binary_search(&(a as u32)).is_ok())
                .count();
            (hits, p.len())
        })
        .collect()
}

fn ranked_lists(scores: &ScoreMatrix, len: usize) -> Vec<Vec<usize>> {
    (0..scores.user_count())
        .map(|u| {
            let mut items = ranked_candidates(scores, u);
            items.truncate(len);
            items
        })
        .collect()
}

fn precision_from(hits: &[(usize, usize)], len: usize) -> f64 {
    hits.iter().map(|&(h, _)| h as f64 / len as f64).sum::<f64>() / hits.len() as f64
}

fn recall_from(hits: &[(usize, usize)]) -> f64 {
    hits.iter().map(|&(h, p)| h as f64 / p as f64).sum::<f64>() / hits.len() as f64
}

fn check_len(len: usize) -> Result<()> {
    if len == 0 {
        return Err(Error::Config("recommendation length must be at least 1".into()));
    }
    Ok(())
}

/// Mean over probe users of `hits / L`.
pub fn precision_at(scores: &ScoreMatrix, split: &DataSplit, len: usize) -> Result<f64> {
    check_len(len)?;
    if split.probe.is_empty() {
        return Err(Error::Data("probe set is empty".into()));
    }
    let hits = hits_at(&ranked_lists(scores, len), &split.probe_by_user(), len);
    Ok(precision_from(&hits, len))
}

/// Mean over probe users of `hits / probe size`.
pub fn recall_at(scores: &ScoreMatrix, split: &DataSplit, len: usize) -> Result<f64> {
    check_len(len)?;
    if split.probe.is_empty() {
        return Err(Error::Data("probe set is empty".into()));
    }
    let hits = hits_at(&ranked_lists(scores, len), &split.probe_by_user(), len);
    Ok(recall_from(&hits))
}

/// Mean over unordered user pairs of `1 − |overlap| / L`, over users that
/// have at least one candidate item.
pub fn diversity_at(scores: &ScoreMatrix, len: usize) -> Result<f64> {
    check_len(len)?;
    diversity_from(&ranked_lists(scores, len), scores.item_count(), len)
}

fn diversity_from(lists: &[Vec<usize>], items: usize, len: usize) -> Result<f64> {
    let users: Vec<&Vec<usize>> = lists.iter().filter(|l| !l.is_empty()).collect();
    if users.len() < 2 {
        return Err(Error::Data("diversity needs at least two users with candidates".into()));
    }
    // Σ over pairs of |Iᵢ ∩ Iⱼ| = Σ over items of C(c, 2), c = lists holding the item
    let mut holders = vec![0u64; items];
    for list in &users {
        for &a in list.iter().take(len) {
            holders[a] += 1;
        }
    }
    let shared: u64 = holders.iter().map(|&c| c * c.saturating_sub(1) / 2).sum();
    let pairs = (users.len() * (users.len() - 1) / 2) as f64;
    Ok(1.0 - shared as f64 / (pairs * len as f64))
}

/// Values echoed from the experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub mode: Option<String>,
    pub seed: u64,
    pub ratio: f64,
    pub threshold: Option<f64>,
    pub chosen_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub precision: BTreeMap<usize, f64>,
    pub recall: BTreeMap<usize, f64>,
    pub diversity: BTreeMap<usize, f64>,
    pub nrmse_trace: Vec<f64>,
    pub config: ConfigEcho,
}

impl MetricsReport {
    /// `L,precision,recall,diversity` rows, one per list length.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("L,precision,recall,diversity\n");
        for (len, p) in &self.precision {
            let _ = writeln!(out, "{},{},{},{}", len, p, self.recall[len], self.diversity[len]);
        }
        out
    }
}

/// Computes AUC plus precision, recall and diversity at every length.
pub fn build_report(
    scores: &ScoreMatrix,
    split: &DataSplit,
    lengths: &[usize],
    trace: Option<&IllsTrace>,
) -> Result<MetricsReport> {
    let max_len = lengths.iter().copied().max().unwrap_or(0);
    for &len in lengths {
        check_len(len)?;
    }
    let auc = auc(scores, split)?;
    let lists = ranked_lists(scores, max_len);
    let probe = split.probe_by_user();
    let (mut precision, mut recall, mut diversity) = (BTreeMap::new(), BTreeMap::new(), BTreeMap::new());
    for &len in lengths {
        let hits = hits_at(&lists, &probe, len);
        precision.insert(len, precision_from(&hits, len));
        recall.insert(len, recall_from(&hits));
        diversity.insert(len, diversity_from(&lists, scores.item_count(), len)?);
    }
    Ok(MetricsReport {
        auc,
        precision,
        recall,
        diversity,
        nrmse_trace: trace.map(|t| t.nrmse_per_iteration.clone()).unwrap_or_default(),
        config: ConfigEcho {
            mode: None,
            seed: split.seed,
            ratio: split.ratio,
            threshold: None,
            chosen_k: trace.map(|t| t.chosen_k),
        },
    })
}
