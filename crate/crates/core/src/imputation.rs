//! Iterative local least squares (ILLS) imputation of the entries that
//! spreading left at zero.
//!
//! For a target user, the K most similar ("coherent") users are picked.
//! The target's known scores are regressed on the neighbours' scores at the
//! same items, and each missing score is predicted as the fitted linear
//! combination of the neighbours' scores at that item. Neighbour zeros are
//! pre-filled with the neighbour's mean nonzero score. Passes are Jacobi
//! style: all reads go to the previous matrix, all writes to a fresh one.
//! K is chosen once by NRMSE on a validation mask of hidden spread values,
//! then passes repeat with neighbours re-selected from the latest estimates
//! until the validation NRMSE settles.

use std::collections::HashMap;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::BipartiteGraph;
use crate::error::{Error, Result};
use crate::linalg::{lstsq_min_norm, GramSolver};
use crate::rng::{substream, Stream};
use crate::spreading::{Provenance, ScoreMatrix};

/// The coherent users of one target.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    pub target: usize,
    pub neighbors: Vec<usize>,
    pub similarities: Vec<f64>,
}

/// What user columns similarity is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityBasis {
    /// Binary training adjacency (first pass).
    Adjacency,
    /// Current real-valued scores (later passes).
    Scores,
}

/// Which of the target's known entries enter the regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegressionRows {
    /// Spread entries only; the target's own training links (pinned at 1)
    /// are left out of the fit.
    SpreadOnly,
    /// Every non-missing entry, training links included.
    AllKnown,
}

/// A hidden spread entry with its true value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskedEntry {
    pub item: usize,
    pub user: usize,
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationMask {
    pub entries: Vec<MaskedEntry>,
    pub seed: u64,
    pub fraction: f64,
}

impl ValidationMask {
    pub fn truths(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.truth).collect()
    }

    pub fn estimates(&self, scores: &ScoreMatrix) -> Vec<f64> {
        self.entries.iter().map(|e| scores.get(e.item, e.user)).collect()
    }

    /// Puts the true values and the `Spread` tag back.
    pub fn restore(&self, scores: &mut ScoreMatrix) {
        for e in &self.entries {
            scores.set(e.item, e.user, e.truth, Provenance::Spread);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IllsConfig {
    /// Candidate K values as fractions of the user count, strictly increasing.
    pub k_grid: Vec<f64>,
    /// Scan every K in `1..m` instead of the grid.
    pub full_k_scan: bool,
    pub max_iterations: usize,
    pub convergence_tol: f64,
    pub mask_fraction: f64,
    pub seed: u64,
    pub regression_rows: RegressionRows,
}

impl Default for IllsConfig {
    fn default() -> Self {
        IllsConfig {
            k_grid: default_k_grid(),
            full_k_scan: false,
            max_iterations: 10,
            convergence_tol: 1e-4,
            mask_fraction: 0.02,
            seed: 0,
            regression_rows: RegressionRows::SpreadOnly,
        }
    }
}

/// `{0.1, 0.2, …, 1.0}`.
pub fn default_k_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

impl IllsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_grid.is_empty() {
            return Err(Error::Config("k_grid is empty".into()));
        }
        if self.k_grid.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(Error::Config("k_grid fractions must lie in (0, 1]".into()));
        }
        if self.k_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("k_grid must be strictly increasing".into()));
        }
        if self.max_iterations < 1 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if self.convergence_tol.is_nan() || self.convergence_tol <= 0.0 {
            return Err(Error::Config("convergence_tol must be positive".into()));
        }
        if !(self.mask_fraction > 0.0 && self.mask_fraction < 1.0) {
            return Err(Error::Config("mask_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Distinct K values to try for `users` users, ascending.
    pub fn candidate_ks(&self, users: usize) -> Vec<(usize, f64)> {
        let mut ks: Vec<(usize, f64)> = if self.full_k_scan {
            (1..users.max(2)).map(|k| (k, k as f64 / users as f64)).collect()
        } else {
            self.k_grid
                .iter()
                .map(|&f| (((f * users as f64).round() as usize).max(1), f))
                .collect()
        };
        ks.dedup_by_key(|(k, _)| *k);
        ks
    }
}

/// One point of the K-selection curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KPoint {
    pub k: usize,
    pub fraction: f64,
    pub nrmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IllsTrace {
    pub chosen_k: usize,
    #[serde(rename = "nrmse")]
    pub nrmse_per_iteration: Vec<f64>,
    #[serde(rename = "iterations")]
    pub iterations_run: usize,
    /// Whether the stopping rule fired before the iteration cap.
    pub converged: bool,
}

/// Binary-profile similarity: common items over `√(k_i² + k_j²)`.
pub fn similarity(graph: &BipartiteGraph, i: usize, j: usize) -> Result<f64> {
    if i == j {
        return Err(Error::Data(format!("self-similarity of user {i} is undefined")));
    }
    let (a, b) = (graph.profile(i), graph.profile(j));
    if a.is_empty() || b.is_empty() {
        return Ok(0.0);
    }
    let (mut x, mut y, mut common) = (0, 0, 0usize);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                x += 1;
                y += 1;
            }
        }
    }
    let (ki, kj) = (a.len() as f64, b.len() as f64);
    Ok(common as f64 / (ki * ki + kj * kj).sqrt())
}

/// Real-valued generalisation of [`similarity`]: dot product over
/// `√(‖l‖⁴ + ‖r‖⁴)`, which is the binary formula when entries are 0/1.
pub fn similarity_dense(left: &[f64], right: &[f64]) -> f64 {
    debug_assert_eq!(left.len(), right.len());
    let dot: f64 = left.iter().zip(right).map(|(a, b)| a * b).sum();
    let nl: f64 = left.iter().map(|v| v * v).sum();
    let nr: f64 = right.iter().map(|v| v * v).sum();
    similarity_from_gram(dot, nl, nr)
}

#[inline]
fn similarity_from_gram(dot: f64, self_left: f64, self_right: f64) -> f64 {
    if self_left == 0.0 || self_right == 0.0 {
        return 0.0;
    }
    dot / (self_left * self_left + self_right * self_right).sqrt()
}

/// Top-`k` users by similarity to `target`, descending, ties to the lower
/// index. Returns every other user when `k ≥ m − 1`.
pub fn select_neighbors(scores: &ScoreMatrix, target: usize, k: usize, basis: SimilarityBasis) -> NeighborSet {
    let column = |u: usize| -> Vec<f64> {
        match basis {
            SimilarityBasis::Scores => scores.column(u),
            SimilarityBasis::Adjacency => (0..scores.item_count())
                .map(|a| (scores.provenance(a, u) == Provenance::Observed) as u8 as f64)
                .collect(),
        }
    };
    let t = column(target);
    let sims: Vec<f64> = (0..scores.user_count())
        .map(|u| if u == target { f64::NEG_INFINITY } else { similarity_dense(&t, &column(u)) })
        .collect();
    top_k(target, &sims, k)
}

fn top_k(target: usize, sims: &[f64], k: usize) -> NeighborSet {
    let mut order: Vec<usize> = (0..sims.len()).filter(|&u| u != target).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    order.truncate(k);
    NeighborSet {
        target,
        similarities: order.iter().map(|&u| sims[u]).collect(),
        neighbors: order,
    }
}

/// Replaces zeros with the mean of the nonzero entries. An all-zero column
/// is returned unchanged.
pub fn row_average_fill(column: &[f64]) -> Vec<f64> {
    let mean = nonzero_mean(column.iter().copied());
    column.iter().map(|&v| if v == 0.0 { mean } else { v }).collect()
}

fn nonzero_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for v in values.filter(|&v| v != 0.0) {
        sum += v;
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Estimates one entry: fits `known ≈ neighbors · x` in the minimum-norm
/// least squares sense and returns `max(0, at_target · x)`.
pub fn estimate_entry(known: &[f64], neighbors: MatRef<'_, f64>, at_target: &[f64]) -> Result<f64> {
    if neighbors.ncols() != at_target.len() || neighbors.nrows() != known.len() {
        return Err(Error::Numeric("estimate_entry: inconsistent dimensions".into()));
    }
    if known.is_empty() {
        return Ok(0.0);
    }
    let x = lstsq_min_norm(neighbors, known)?;
    let alpha: f64 = x.iter().zip(at_target).map(|(a, b)| a * b).sum();
    Ok(alpha.max(0.0))
}

/// Options of a single imputation pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PassOptions {
    pub k: usize,
    pub basis: SimilarityBasis,
    pub rows: RegressionRows,
}

/// One Jacobi pass of local least squares over every user with unknown
/// (missing or imputed) entries. Observed and spread entries are copied
/// through untouched.
pub fn impute_iteration(scores: &ScoreMatrix, opts: PassOptions) -> Result<ScoreMatrix> {
    let order: Vec<usize> = (0..scores.user_count()).collect();
    impute_iteration_ordered(scores, opts, &order)
}

/// [`impute_iteration`] visiting users in the given order. The result does
/// not depend on the order.
pub fn impute_iteration_ordered(scores: &ScoreMatrix, opts: PassOptions, order: &[usize]) -> Result<ScoreMatrix> {
    if opts.k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let (n, m) = (scores.item_count(), scores.user_count());
    let unknown_per_user: Vec<Vec<usize>> = (0..m)
        .map(|u| (0..n).filter(|&a| scores.provenance(a, u).is_unknown()).collect())
        .collect();
    let mut next = scores.clone();
    if unknown_per_user.iter().all(Vec::is_empty) {
        return Ok(next);
    }

    let ctx = PassContext::new(scores, opts.basis);
    let mut solver = GramSolver::new();
    for &u in order {
        let unknown = &unknown_per_user[u];
        if unknown.is_empty() {
            continue;
        }
        let (ranked, x) = ctx.solve_user(scores, u, &[opts.k], opts.rows, &mut solver)?;
        for &a in unknown {
            next.set(a, u, ctx.predict(a, &ranked, &x[0]), Provenance::Imputed);
        }
    }
    Ok(next)
}

/// Per-pass shared state: the filled matrix, its Gram matrix and the
/// user–user similarity matrix.
struct PassContext {
    filled: Mat<f64>,
    gram: Mat<f64>,
    similarity: Mat<f64>,
}

impl PassContext {
    fn new(scores: &ScoreMatrix, basis: SimilarityBasis) -> Self {
        let (n, m) = (scores.item_count(), scores.user_count());
        let means: Vec<f64> = (0..m)
            .map(|u| nonzero_mean((0..n).map(|a| scores.get(a, u))))
            .collect();
        let filled = Mat::from_fn(n, m, |a, u| {
            let v = scores.get(a, u);
            if v == 0.0 {
                means[u]
            } else {
                v
            }
        });
        let gram = gram_of(filled.as_ref());

        let basis_gram = match basis {
            SimilarityBasis::Adjacency => gram_of(
                Mat::from_fn(n, m, |a, u| (scores.provenance(a, u) == Provenance::Observed) as u8 as f64).as_ref(),
            ),
            SimilarityBasis::Scores => gram_of(Mat::from_fn(n, m, |a, u| scores.get(a, u)).as_ref()),
        };
        let similarity = Mat::from_fn(m, m, |i, j| {
            similarity_from_gram(basis_gram[(i, j)], basis_gram[(i, i)], basis_gram[(j, j)])
        });
        PassContext {
            filled,
            gram,
            similarity,
        }
    }

    /// Least squares coefficients of user `u` for each K in `ks`
    /// (ascending), together with the ranked neighbours they refer to. The
    /// coefficients for K apply to the first `min(K, m − 1)` neighbours.
    fn solve_user(
        &self,
        scores: &ScoreMatrix,
        u: usize,
        ks: &[usize],
        rows: RegressionRows,
        solver: &mut GramSolver,
    ) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
        let (n, m) = (scores.item_count(), scores.user_count());
        let kmax = ks.iter().copied().max().unwrap_or(0).min(m.saturating_sub(1));
        let sims: Vec<f64> = (0..m)
            .map(|j| if j == u { f64::NEG_INFINITY } else { self.similarity[(u, j)] })
            .collect();
        let ranked = top_k(u, &sims, kmax).neighbors;
        let sizes: Vec<usize> = ks.iter().map(|&k| k.min(kmax)).collect();

        let in_fit = |a: usize| match scores.provenance(a, u) {
            Provenance::Spread => true,
            Provenance::Observed => rows == RegressionRows::AllKnown,
            Provenance::Missing | Provenance::Imputed => false,
        };
        let fit_rows: Vec<usize> = (0..n).filter(|&a| in_fit(a)).collect();
        if fit_rows.is_empty() || kmax == 0 {
            return Ok((ranked, sizes.iter().map(|&s| vec![0.0; s]).collect()));
        }

        let f = &self.filled;
        // Distinct design rows are only needed when the fit rows are used
        // directly; the downdate route reads the global Gram matrix.
        let direct = 2 * fit_rows.len() <= n || sizes.iter().any(|&s| s > fit_rows.len());
        let groups = direct.then(|| RowGroups::new(f.as_ref(), scores, u, &fit_rows, &ranked));
        let g = groups.as_ref().map_or(fit_rows.len(), |gr| gr.rows.nrows());
        let mut out: Vec<Vec<f64>> = vec![Vec::new(); sizes.len()];

        // At most as many unknowns as equations: normal equations, one
        // factorisation for every such K.
        let primal: Vec<usize> = (0..sizes.len()).filter(|&i| sizes[i] <= g).collect();
        if let Some(kp) = primal.iter().map(|&i| sizes[i]).max() {
            let (gram, rhs) = match &groups {
                Some(gr) if 2 * fit_rows.len() <= n => {
                    let lead = gr.rows.as_ref().subcols(0, kp);
                    let weighted = Mat::from_fn(g, kp, |r, c| gr.counts[r].sqrt() * lead[(r, c)]);
                    let sums = Mat::from_fn(g, 1, |r, _| gr.sums[r]);
                    let rhs = lead.transpose() * &sums;
                    (gram_of(weighted.as_ref()), (0..kp).map(|r| rhs[(r, 0)]).collect::<Vec<f64>>())
                }
                _ => {
                    // Most rows fit: downdate the full Gram matrix by the
                    // excluded rows.
                    let excluded: Vec<usize> = (0..n).filter(|&a| !in_fit(a)).collect();
                    let mut gram = Mat::from_fn(kp, kp, |r, c| self.gram[(ranked[r], ranked[c])]);
                    let mut rhs = Mat::from_fn(kp, 1, |r, _| self.gram[(ranked[r], u)]);
                    if !excluded.is_empty() {
                        let e = Mat::from_fn(excluded.len(), kp, |r, c| f[(excluded[r], ranked[c])]);
                        let t = Mat::from_fn(excluded.len(), 1, |r, _| f[(excluded[r], u)]);
                        matmul(gram.as_mut(), Accum::Add, e.transpose(), e.as_ref(), -1.0, Par::Seq);
                        matmul(rhs.as_mut(), Accum::Add, e.transpose(), t.as_ref(), -1.0, Par::Seq);
                    }
                    (gram, (0..kp).map(|r| rhs[(r, 0)]).collect())
                }
            };
            let primal_sizes: Vec<usize> = primal.iter().map(|&i| sizes[i]).collect();
            for (i, x) in primal.iter().zip(solver.solve_nested(gram.as_ref(), &rhs, &primal_sizes)?) {
                out[*i] = x;
            }
        }

        // Fewer equations than unknowns: the minimum-norm solution lies in
        // the row space, x = Bᵀ (B Bᵀ)⁺ a. R Rᵀ over the distinct rows
        // grows by outer products as K increases.
        if let Some(gr) = &groups {
            let r = gr.rows.as_ref();
            let w: Vec<f64> = gr.counts.iter().map(|c| c.sqrt()).collect();
            let rhs: Vec<f64> = gr.sums.iter().zip(&w).map(|(s, w)| s / w).collect();
            let mut outer = Mat::<f64>::zeros(g, g);
            let mut done = 0;
            for i in (0..sizes.len()).filter(|&i| sizes[i] > g) {
                let size = sizes[i];
                if size > done {
                    let chunk = r.subcols(done, size - done);
                    matmul(outer.as_mut(), Accum::Add, chunk, chunk.transpose(), 1.0, Par::Seq);
                    done = size;
                }
                let weighted = Mat::from_fn(g, g, |p, q| w[p] * w[q] * outer[(p, q)]);
                let (y, _) = solver.solve(weighted.as_ref(), &rhs)?;
                let coef = Mat::from_fn(g, 1, |p, _| y[p] * w[p]);
                let x = r.subcols(0, size).transpose() * &coef;
                out[i] = (0..size).map(|c| x[(c, 0)]).collect();
            }
        }
        Ok((ranked, out))
    }

    /// `max(0, Σ_c F[item, neighbor_c] · x_c)`, or 0 when not finite.
    fn predict(&self, item: usize, ranked: &[usize], x: &[f64]) -> f64 {
        let v: f64 = ranked.iter().zip(x).map(|(&j, xj)| self.filled[(item, j)] * xj).sum();
        if v.is_finite() {
            v.max(0.0)
        } else {
            0.0
        }
    }
}

/// Fit rows of one target grouped by identical design rows. A group of
/// `c` rows `r` with targets summing to `s` has the same least squares
/// minimiser as the single row `√c·r` with target `s/√c`, and merging
/// removes the exact rank deficiency that mean-filled rows otherwise cause.
struct RowGroups {
    /// One unweighted design row per group, over the ranked neighbours.
    rows: Mat<f64>,
    counts: Vec<f64>,
    sums: Vec<f64>,
}

impl RowGroups {
    fn new(filled: MatRef<'_, f64>, scores: &ScoreMatrix, target: usize, fit_rows: &[usize], neighbors: &[usize]) -> Self {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::with_capacity(fit_rows.len());
        let mut firsts: Vec<usize> = Vec::new();
        let mut counts: Vec<f64> = Vec::new();
        let mut sums: Vec<f64> = Vec::new();
        for &row in fit_rows {
            let key: Vec<u64> = neighbors.iter().map(|&j| filled[(row, j)].to_bits()).collect();
            let g = *index.entry(key).or_insert_with(|| {
                firsts.push(row);
                counts.push(0.0);
                sums.push(0.0);
                firsts.len() - 1
            });
            counts[g] += 1.0;
            sums[g] += scores.get(row, target);
        }
        let rows = Mat::from_fn(firsts.len(), neighbors.len(), |r, c| filled[(firsts[r], neighbors[c])]);
        RowGroups { rows, counts, sums }
    }
}

fn gram_of(x: MatRef<'_, f64>) -> Mat<f64> {
    let mut g = Mat::zeros(x.ncols(), x.ncols());
    matmul(g.as_mut(), Accum::Replace, x.transpose(), x, 1.0, Par::Seq);
    g
}

/// Root-mean-square error over the standard deviation of the truths.
pub fn nrmse(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    if estimates.len() != truths.len() || truths.is_empty() {
        return Err(Error::Numeric(format!(
            "nrmse needs equal nonzero lengths, got {} and {}",
            estimates.len(),
            truths.len()
        )));
    }
    let len = truths.len() as f64;
    let mean = truths.iter().sum::<f64>() / len;
    let var = truths.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len;
    let sd = var.sqrt();
    if sd < 1e-12 {
        return Err(Error::ConstantTruths);
    }
    let mse = estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| (e - t) * (e - t))
        .sum::<f64>()
        / len;
    Ok(mse.sqrt() / sd)
}

/// Hides a seeded uniform sample of `round(fraction × #spread)` spread
/// entries, returning the masked copy and the hidden truths.
pub fn make_validation_mask(scores: &ScoreMatrix, fraction: f64, seed: u64) -> Result<(ScoreMatrix, ValidationMask)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("mask fraction {fraction} must lie in (0, 1)")));
    }
    let m = scores.user_count();
    let spread: Vec<usize> = scores
        .provenances()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p == Provenance::Spread)
        .map(|(idx, _)| idx)
        .collect();
    if spread.len() < 10 {
        return Err(Error::Data(format!(
            "validation mask needs at least 10 spread entries, found {}",
            spread.len()
        )));
    }
    let amount = (fraction * spread.len() as f64).round() as usize;
    if amount < 2 {
        return Err(Error::Data(format!(
            "mask fraction {fraction} selects fewer than 2 of {} spread entries",
            spread.len()
        )));
    }
    let mut rng = substream(seed, Stream::Mask);
    let mut picked: Vec<usize> = index::sample(&mut rng, spread.len(), amount)
        .into_iter()
        .map(|i| spread[i])
        .collect();
    picked.sort_unstable();

    let mut masked = scores.clone();
    let entries = picked
        .into_iter()
        .map(|idx| {
            let (item, user) = (idx / m, idx % m);
            let truth = scores.get(item, user);
            masked.set(item, user, 0.0, Provenance::Missing);
            MaskedEntry { item, user, truth }
        })
        .collect();
    Ok((
        masked,
        ValidationMask {
            entries,
            seed,
            fraction,
        },
    ))
}

/// NRMSE of one first pass for every candidate K, on an already masked
/// matrix.
pub fn k_curve(masked: &ScoreMatrix, mask: &ValidationMask, config: &IllsConfig) -> Result<Vec<KPoint>> {
    config.validate()?;
    let candidates = config.candidate_ks(masked.user_count());
    let ks: Vec<usize> = candidates.iter().map(|&(k, _)| k).collect();
    let estimates = first_pass_mask_estimates(masked, mask, &ks, config.regression_rows)?;
    let truths = mask.truths();
    candidates
        .into_iter()
        .zip(estimates)
        .map(|((k, fraction), est)| {
            Ok(KPoint {
                k,
                fraction,
                nrmse: nrmse(&est, &truths)?,
            })
        })
        .collect()
}

/// The mask entries as a first (adjacency-basis) pass with each K in `ks`
/// would estimate them, indexed `[K][entry]`. Each user's system is built
/// once for all K.
pub fn first_pass_mask_estimates(
    masked: &ScoreMatrix,
    mask: &ValidationMask,
    ks: &[usize],
    rows: RegressionRows,
) -> Result<Vec<Vec<f64>>> {
    if ks.contains(&0) {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..ks.len()).collect();
    order.sort_by_key(|&i| ks[i]);
    let sorted: Vec<usize> = order.iter().map(|&i| ks[i]).collect();

    let ctx = PassContext::new(masked, SimilarityBasis::Adjacency);
    let mut solver = GramSolver::new();
    let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); masked.user_count()];
    for (i, e) in mask.entries.iter().enumerate() {
        by_user[e.user].push(i);
    }
    let mut out = vec![vec![0.0; mask.entries.len()]; ks.len()];
    for (u, entries) in by_user.iter().enumerate() {
        if entries.is_empty() {
            continue;
        }
        let (ranked, xs) = ctx.solve_user(masked, u, &sorted, rows, &mut solver)?;
        for (&slot, x) in order.iter().zip(&xs) {
            for &i in entries {
                out[slot][i] = ctx.predict(mask.entries[i].item, &ranked, x);
            }
        }
    }
    Ok(out)
}

/// Smallest-NRMSE point of a curve, ties to the smaller K.
pub fn best_k(curve: &[KPoint]) -> Option<KPoint> {
    curve
        .iter()
        .copied()
        .reduce(|best, p| if p.nrmse < best.nrmse { p } else { best })
}

/// Picks K by validation NRMSE over the configured candidates.
pub fn select_k(scores: &ScoreMatrix, config: &IllsConfig) -> Result<usize> {
    let (masked, mask) = make_validation_mask(scores, config.mask_fraction, config.seed)?;
    let curve = k_curve(&masked, &mask, config)?;
    Ok(best_k(&curve).expect("k_grid validated non-empty").k)
}

/// Full ILLS: choose K, then iterate passes until the validation NRMSE
/// changes by less than the tolerance. Masked entries are restored before
/// returning.
pub fn run_ills(scores: &ScoreMatrix, config: &IllsConfig) -> Result<(ScoreMatrix, IllsTrace)> {
    config.validate()?;
    let (masked, mask) = make_validation_mask(scores, config.mask_fraction, config.seed)?;
    let curve = k_curve(&masked, &mask, config)?;
    let chosen_k = best_k(&curve).expect("k_grid validated non-empty").k;
    let truths = mask.truths();
    let nothing_else_missing = scores.provenances().iter().all(|p| !p.is_unknown());

    // Starting point of the iteration is the row-average fill.
    let mut previous = {
        let means: Vec<f64> = (0..masked.user_count())
            .map(|u| nonzero_mean(masked.column(u).into_iter()))
            .collect();
        let start: Vec<f64> = mask.entries.iter().map(|e| means[e.user]).collect();
        nrmse(&start, &truths)?
    };
    let mut current = masked;
    let mut trace = Vec::new();
    let mut converged = false;
    for t in 1..=config.max_iterations {
        let basis = if t == 1 {
            SimilarityBasis::Adjacency
        } else {
            SimilarityBasis::Scores
        };
        current = impute_iteration(
            &current,
            PassOptions {
                k: chosen_k,
                basis,
                rows: config.regression_rows,
            },
        )?;
        let err = nrmse(&mask.estimates(&current), &truths)?;
        if !err.is_finite() {
            return Err(Error::NonFinite("validation NRMSE"));
        }
        trace.push(err);
        if nothing_else_missing || (err - previous).abs() < config.convergence_tol {
            converged = true;
            break;
        }
        previous = err;
    }
    mask.restore(&mut current);
    Ok((
        current,
        IllsTrace {
            chosen_k,
            iterations_run: trace.len(),
            nrmse_per_iteration: trace,
            converged,
        },
    ))
}
