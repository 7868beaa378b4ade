//! Independent reference implementations shared by the integration tests.
//! None of these call into the library's algorithms.

#![allow(dead_code)]

use ills_core::dataset::{build_graph, BipartiteGraph, DataSplit, Link, LinkSet};
use ills_core::{Provenance, ScoreMatrix};
use rand::Rng;

/// `(item, user)` pairs of a random bipartite graph.
#[derive(Debug, Clone)]
pub struct RawGraph {
    pub items: usize,
    pub users: usize,
    pub links: Vec<(usize, usize)>,
}

impl RawGraph {
    pub fn from_mask(items: usize, users: usize, mask: &[bool]) -> Self {
        let links = (0..items * users)
            .filter(|&k| mask[k])
            .map(|k| (k / users, k % users))
            .collect();
        RawGraph { items, users, links }
    }

    pub fn random<R: Rng>(rng: &mut R, max_items: usize, max_users: usize) -> Self {
        let items = rng.random_range(1..=max_items);
        let users = rng.random_range(1..=max_users);
        let p = rng.random_range(0.05..0.6);
        let mask: Vec<bool> = (0..items * users).map(|_| rng.random_bool(p)).collect();
        Self::from_mask(items, users, &mask)
    }

    pub fn link_set(&self) -> LinkSet {
        let links = self.links.iter().map(|&(a, u)| Link::new(a, u)).collect();
        LinkSet::new(links, self.items, self.users).unwrap()
    }

    pub fn graph(&self) -> BipartiteGraph {
        build_graph(&self.link_set())
    }

    pub fn adjacency(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.users]; self.items];
        for &(i, u) in &self.links {
            a[i][u] = 1.0;
        }
        a
    }
}

/// `f = W a_u` with the item–item transfer matrix
/// `W[α][β] = (1 / k_β) Σ_j a[α][j] a[β][j] / k_j` built explicitly.
pub fn spread_via_transfer_matrix(g: &RawGraph, user: usize) -> Vec<f64> {
    let a = g.adjacency();
    let k_item: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
    let k_user: Vec<f64> = (0..g.users).map(|j| a.iter().map(|row| row[j]).sum()).collect();
    let mut w = vec![vec![0.0; g.items]; g.items];
    for alpha in 0..g.items {
        for beta in 0..g.items {
            if k_item[beta] == 0.0 {
                continue;
            }
            let mut s = 0.0;
            for j in 0..g.users {
                if k_user[j] > 0.0 {
                    s += a[alpha][j] * a[beta][j] / k_user[j];
                }
            }
            w[alpha][beta] = s / k_item[beta];
        }
    }
    (0..g.items)
        .map(|alpha| (0..g.items).map(|beta| w[alpha][beta] * a[beta][user]).sum())
        .collect()
}

/// Minimum-norm least squares through a one-sided Jacobi SVD, with singular
/// values below `rcond × σ_max` dropped.
pub fn pinv_solve(rows: &[Vec<f64>], rhs: &[f64], rcond: f64) -> Vec<f64> {
    let (p, q) = (rows.len(), rows[0].len());
    let mut cols: Vec<Vec<f64>> = (0..q).map(|j| (0..p).map(|i| rows[i][j]).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..q).map(|j| (0..q).map(|i| f64::from(i == j)).collect()).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    for _sweep in 0..100 {
        let mut rotated = false;
        for i in 0..q {
            for j in i + 1..q {
                let (alpha, beta, gamma) = (dot(&cols[i], &cols[i]), dot(&cols[j], &cols[j]), dot(&cols[i], &cols[j]));
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut cols, &mut v] {
                    let (lo, hi) = m.split_at_mut(j);
                    for (a, b) in lo[i].iter_mut().zip(hi[0].iter_mut()) {
                        let (x, y) = (*a, *b);
                        *a = c * x - s * y;
                        *b = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let cutoff = rcond * sigma.iter().cloned().fold(0.0, f64::max);
    let mut x = vec![0.0; q];
    for k in 0..q {
        if sigma[k] > cutoff && sigma[k] > 0.0 {
            let coef = dot(&cols[k], rhs) / (sigma[k] * sigma[k]);
            for (xi, vi) in x.iter_mut().zip(&v[k]) {
                *xi += coef * vi;
            }
        }
    }
    x
}

pub fn residual(rows: &[Vec<f64>], x: &[f64], rhs: &[f64]) -> f64 {
    rows.iter()
        .zip(rhs)
        .map(|(r, b)| {
            let v: f64 = r.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() - b;
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Scores plus the split they are evaluated against. Training links are
/// tagged observed, everything else spread.
pub fn scored_split(items: usize, users: usize, train: &[(usize, usize)], probe: &[(usize, usize)], values: Vec<f64>) -> (ScoreMatrix, DataSplit) {
    let to_set = |l: &[(usize, usize)]| LinkSet::new(l.iter().map(|&(a, u)| Link::new(a, u)).collect(), items, users).unwrap();
    let training = to_set(train);
    let mut tags = vec![Provenance::Spread; items * users];
    for &(a, u) in train {
        tags[a * users + u] = Provenance::Observed;
    }
    let scores = ScoreMatrix::from_parts(items, users, values, tags).unwrap();
    let split = DataSplit {
        training,
        probe: to_set(probe),
        seed: 0,
        ratio: 0.1,
    };
    (scores, split)
}

/// AUC by comparing every (probe item, non-link item) pair of each user.
/// Returns `None` when there is no pair.
pub fn brute_force_auc(scores: &ScoreMatrix, split: &DataSplit) -> Option<(f64, usize)> {
    let (n, m) = (scores.item_count(), scores.user_count());
    let (mut wins, mut pairs) = (0.0, 0usize);
    for u in 0..m {
        let probe: Vec<usize> = (0..n).filter(|&a| split.probe.contains(Link::new(a, u))).collect();
        let negatives: Vec<usize> = (0..n)
            .filter(|&a| !split.training.contains(Link::new(a, u)) && !split.probe.contains(Link::new(a, u)))
            .collect();
        for &p in &probe {
            for &q in &negatives {
                let (sp, sq) = (scores.get(p, u), scores.get(q, u));
                wins += if sp > sq {
                    1.0
                } else if sp == sq {
                    0.5
                } else {
                    0.0
                };
                pairs += 1;
            }
        }
    }
    (pairs > 0).then(|| (wins / pairs as f64, pairs))
}

/// Top-`len` non-training items of every user, ties to the lower index.
pub fn naive_lists(scores: &ScoreMatrix, len: usize) -> Vec<Vec<usize>> {
    (0..scores.user_count())
        .map(|u| {
            let mut c: Vec<(f64, usize)> = (0..scores.item_count())
                .filter(|&a| scores.provenance(a, u) != Provenance::Observed)
                .map(|a| (-scores.get(a, u), a))
                .collect();
            c.sort_by(|x, y| x.partial_cmp(y).unwrap());
            c.into_iter().take(len).map(|(_, a)| a).collect()
        })
        .collect()
}

/// Mean pairwise `1 − |Iᵢ ∩ Iⱼ| / L` over users with a non-empty list.
pub fn brute_force_diversity(scores: &ScoreMatrix, len: usize) -> Option<f64> {
    let lists: Vec<Vec<usize>> = naive_lists(scores, len).into_iter().filter(|l| !l.is_empty()).collect();
    if lists.len() < 2 {
        return None;
    }
    let (mut total, mut pairs) = (0.0, 0usize);
    for i in 0..lists.len() {
        for j in i + 1..lists.len() {
            let common = lists[i].iter().filter(|a| lists[j].contains(a)).count();
            total += 1.0 - common as f64 / len as f64;
            pairs += 1;
        }
    }
    Some(total / pairs as f64)
}
