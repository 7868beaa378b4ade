//! Probabilistic spreading (ProbS) over the user–item bipartite graph.
//!
//! Each user's collected items start with one unit of resource. The resource
//! is split evenly from every item to the users holding it, then from every
//! such user evenly back to that user's items. The result is a dense score
//! column per user; items outside the two-hop neighbourhood score exactly 0.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::BipartiteGraph;
use crate::error::{Error, Result};

/// Where an entry of the score matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Provenance {
    /// Training link, value fixed to 1.
    Observed = 0,
    /// Positive value produced by spreading.
    Spread = 1,
    /// Exact zero after spreading, not yet imputed.
    Missing = 2,
    /// Estimated by local least squares.
    Imputed = 3,
}

impl Provenance {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Provenance::Observed),
            1 => Some(Provenance::Spread),
            2 => Some(Provenance::Missing),
            3 => Some(Provenance::Imputed),
            _ => None,
        }
    }

    /// True for the entries local least squares has to estimate.
    pub fn is_unknown(self) -> bool {
        matches!(self, Provenance::Missing | Provenance::Imputed)
    }
}

/// Dense `n items × m users` score matrix, stored item-major, with a
/// provenance tag per entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    items: usize,
    users: usize,
    values: Vec<f64>,
    provenance: Vec<Provenance>,
    spread_mass: Vec<f64>,
}

impl ScoreMatrix {
    /// Builds a matrix from item-major values and tags.
    pub fn from_parts(
        items: usize,
        users: usize,
        values: Vec<f64>,
        provenance: Vec<Provenance>,
    ) -> Result<Self> {
        if values.len() != items * users || provenance.len() != items * users {
            return Err(Error::Data(format!(
                "score matrix buffers do not match {items}x{users}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("score matrix"));
        }
        let spread_mass = (0..users)
            .map(|i| (0..items).map(|a| values[a * users + i]).sum())
            .collect();
        Ok(ScoreMatrix {
            items,
            users,
            values,
            provenance,
            spread_mass,
        })
    }

    /// Binary matrix of the training links: observed entries hold 1, all
    /// others are missing zeros. Used when imputing without spreading.
    pub fn from_graph_binary(graph: &BipartiteGraph) -> Self {
        let (n, m) = (graph.item_count(), graph.user_count());
        let mut values = vec![0.0; n * m];
        let mut provenance = vec![Provenance::Missing; n * m];
        for user in 0..m {
            for &item in graph.profile(user) {
                values[item as usize * m + user] = 1.0;
                provenance[item as usize * m + user] = Provenance::Observed;
            }
        }
        let spread_mass = (0..m).map(|u| graph.user_degree(u) as f64).collect();
        ScoreMatrix {
            items: n,
            users: m,
            values,
            provenance,
            spread_mass,
        }
    }

    pub fn item_count(&self) -> usize {
        self.items
    }

    pub fn user_count(&self) -> usize {
        self.users
    }

    #[inline]
    pub fn get(&self, item: usize, user: usize) -> f64 {
        self.values[item * self.users + user]
    }

    #[inline]
    pub fn provenance(&self, item: usize, user: usize) -> Provenance {
        self.provenance[item * self.users + user]
    }

    pub(crate) fn set(&mut self, item: usize, user: usize, value: f64, tag: Provenance) {
        let idx = item * self.users + user;
        self.values[idx] = value;
        self.provenance[idx] = tag;
    }

    /// Item-major values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn provenances(&self) -> &[Provenance] {
        &self.provenance
    }

    /// Scores of one user across all items.
    pub fn column(&self, user: usize) -> Vec<f64> {
        (0..self.items).map(|a| self.get(a, user)).collect()
    }

    /// Number of entries carrying `tag`.
    pub fn count(&self, tag: Provenance) -> usize {
        self.provenance.iter().filter(|&&p| p == tag).count()
    }

    /// Writes the values and provenance dumps. Both start with a 16-byte
    /// header holding `n` and `m` as little-endian `u64`; values follow as
    /// little-endian `f64` and tags as one byte each, item-major.
    pub fn write_dump(&self, values_path: &Path, provenance_path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(values_path)?);
        out.write_all(&(self.items as u64).to_le_bytes())?;
        out.write_all(&(self.users as u64).to_le_bytes())?;
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()?;

        let mut out = BufWriter::new(fs::File::create(provenance_path)?);
        out.write_all(&(self.items as u64).to_le_bytes())?;
        out.write_all(&(self.users as u64).to_le_bytes())?;
        let bytes: Vec<u8> = self.provenance.iter().map(|&p| p as u8).collect();
        out.write_all(&bytes)?;
        out.flush()?;
        Ok(())
    }

    /// Reads a pair of dumps written by [`ScoreMatrix::write_dump`].
    pub fn read_dump(values_path: &Path, provenance_path: &Path) -> Result<Self> {
        fn header(bytes: &[u8]) -> Result<(usize, usize)> {
            if bytes.len() < 16 {
                return Err(Error::Data("dump shorter than its header".into()));
            }
            let n = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
            let m = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
            Ok((n, m))
        }
        let mut raw = Vec::new();
        fs::File::open(values_path)?.read_to_end(&mut raw)?;
        let (n, m) = header(&raw)?;
        if raw.len() != 16 + 8 * n * m {
            return Err(Error::Data("value dump has the wrong length".into()));
        }
        let values = raw[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();

        let tags = fs::read(provenance_path)?;
        if header(&tags)? != (n, m) || tags.len() != 16 + n * m {
            return Err(Error::Data("provenance dump does not match value dump".into()));
        }
        let provenance = tags[16..]
            .iter()
            .map(|&b| Provenance::from_byte(b).ok_or_else(|| Error::Data(format!("bad provenance byte {b}"))))
            .collect::<Result<Vec<_>>>()?;
        ScoreMatrix::from_parts(n, m, values, provenance)
    }
}

/// Spreads one unit of resource from each item in `user`'s profile to all
/// items two hops away. Unreachable items get exactly 0.
pub fn spread_user(graph: &BipartiteGraph, user: usize) -> Vec<f64> {
    let mut user_resource = vec![0.0; graph.user_count()];
    let mut out = vec![0.0; graph.item_count()];
    spread_user_into(graph, user, &mut user_resource, &mut out);
    out
}

fn spread_user_into(graph: &BipartiteGraph, user: usize, user_resource: &mut [f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    user_resource.iter_mut().for_each(|v| *v = 0.0);
    let mut touched = Vec::new();
    // items -> users
    for &beta in graph.profile(user) {
        let audience = graph.audience(beta as usize);
        let share = 1.0 / audience.len() as f64;
        for &j in audience {
            if user_resource[j as usize] == 0.0 {
                touched.push(j);
            }
            user_resource[j as usize] += share;
        }
    }
    touched.sort_unstable();
    // users -> items
    for &j in &touched {
        let profile = graph.profile(j as usize);
        let share = user_resource[j as usize] / profile.len() as f64;
        for &alpha in profile {
            out[alpha as usize] += share;
        }
    }
}

/// Spreads every user and tags the result: training links are overwritten
/// with 1 ([`Provenance::Observed`]), other positive entries become
/// [`Provenance::Spread`], exact zeros [`Provenance::Missing`].
pub fn densify(graph: &BipartiteGraph) -> ScoreMatrix {
    let (n, m) = (graph.item_count(), graph.user_count());
    let mut values = vec![0.0; n * m];
    let mut provenance = vec![Provenance::Missing; n * m];
    let mut spread_mass = vec![0.0; m];
    let mut user_resource = vec![0.0; m];
    let mut column = vec![0.0; n];
    for user in 0..m {
        spread_user_into(graph, user, &mut user_resource, &mut column);
        spread_mass[user] = column.iter().sum();
        for (alpha, &v) in column.iter().enumerate() {
            if v > 0.0 {
                values[alpha * m + user] = v;
                provenance[alpha * m + user] = Provenance::Spread;
            }
        }
        for &alpha in graph.profile(user) {
            values[alpha as usize * m + user] = 1.0;
            provenance[alpha as usize * m + user] = Provenance::Observed;
        }
    }
    ScoreMatrix {
        items: n,
        users: m,
        values,
        provenance,
        spread_mass,
    }
}

/// Coverage statistics of a freshly spread matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadStats {
    /// Positive entries over the rows of items that hold at least one
    /// training link.
    pub nonzero_fraction: f64,
    /// Positive entries over the whole `n × m` grid, including rows of items
    /// whose links all went to the probe set.
    pub grid_nonzero_fraction: f64,
    /// Items with at least one training link.
    pub active_items: usize,
    /// Total spread resource per user, before training entries are reset
    /// to 1. Equals the user's degree.
    pub per_user_mass: Vec<f64>,
}

pub fn spread_stats(scores: &ScoreMatrix) -> SpreadStats {
    let (n, m) = (scores.item_count(), scores.user_count());
    let mut positive = 0usize;
    let mut active_positive = 0usize;
    let mut active_items = 0usize;
    for alpha in 0..n {
        let row = &scores.values[alpha * m..(alpha + 1) * m];
        let tags = &scores.provenance[alpha * m..(alpha + 1) * m];
        let row_positive = row.iter().filter(|&&v| v > 0.0).count();
        positive += row_positive;
        if tags.contains(&Provenance::Observed) {
            active_items += 1;
            active_positive += row_positive;
        }
    }
    let frac = |num: usize, rows: usize| {
        if rows * m == 0 {
            0.0
        } else {
            num as f64 / (rows * m) as f64
        }
    };
    SpreadStats {
        nonzero_fraction: frac(active_positive, active_items),
        grid_nonzero_fraction: frac(positive, n),
        active_items,
        per_user_mass: scores.spread_mass.clone(),
    }
}
