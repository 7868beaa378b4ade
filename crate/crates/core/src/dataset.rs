//! Rating log ingestion, binarization, train/probe splitting and the
//! bipartite user–item graph built from training links.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

/// One raw line of a rating log.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    pub user: String,
    pub item: String,
    pub rating: f64,
    pub timestamp: Option<i64>,
}

/// A single user–item link over dense indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Link {
    pub item: u32,
    pub user: u32,
}

impl Link {
    pub fn new(item: usize, user: usize) -> Self {
        Link {
            item: item as u32,
            user: user as u32,
        }
    }
}

/// Sorted, duplicate-free set of links over an `item_count × user_count` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkSet {
    links: Vec<Link>,
    user_count: usize,
    item_count: usize,
}

impl LinkSet {
    /// Builds a link set, sorting and removing duplicates. Fails if any
    /// index falls outside the grid.
    pub fn new(mut links: Vec<Link>, item_count: usize, user_count: usize) -> Result<Self> {
        if let Some(bad) = links
            .iter()
            .find(|l| l.item as usize >= item_count || l.user as usize >= user_count)
        {
            return Err(Error::Data(format!(
                "link ({}, {}) outside {}x{} grid",
                bad.item, bad.user, item_count, user_count
            )));
        }
        links.sort_unstable();
        links.dedup();
        Ok(LinkSet {
            links,
            user_count,
            item_count,
        })
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn user_count(&self) -> usize {
        self.user_count
    }

    pub fn item_count(&self) -> usize {
        self.item_count
    }

    pub fn contains(&self, link: Link) -> bool {
        self.links.binary_search(&link).is_ok()
    }

    /// Drops users and items without links and renumbers the survivors in
    /// ascending order of their old index. Returns the new set together with
    /// the old index of every kept item and user.
    pub fn compact(&self) -> (LinkSet, Vec<usize>, Vec<usize>) {
        let mut item_seen = vec![false; self.item_count];
        let mut user_seen = vec![false; self.user_count];
        for l in &self.links {
            item_seen[l.item as usize] = true;
            user_seen[l.user as usize] = true;
        }
        let renumber = |seen: &[bool]| {
            let mut map = vec![u32::MAX; seen.len()];
            let mut kept = Vec::new();
            for (old, _) in seen.iter().enumerate().filter(|(_, s)| **s) {
                map[old] = kept.len() as u32;
                kept.push(old);
            }
            (map, kept)
        };
        let (item_map, kept_items) = renumber(&item_seen);
        let (user_map, kept_users) = renumber(&user_seen);
        let links = self
            .links
            .iter()
            .map(|l| Link {
                item: item_map[l.item as usize],
                user: user_map[l.user as usize],
            })
            .collect();
        let set = LinkSet::new(links, kept_items.len(), kept_users.len())
            .expect("renumbered links stay in range");
        (set, kept_items, kept_users)
    }
}

/// Raw identifiers for every dense index.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMap {
    pub users: Vec<String>,
    pub items: Vec<String>,
}

/// Parses a delimiter-separated rating log: `user, item, rating[, timestamp]`.
/// Blank lines are skipped.
pub fn parse_ratings<R: BufRead>(source: R, delimiter: char) -> Result<Vec<InteractionRecord>> {
    let mut records = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(delimiter).map(str::trim).collect();
        if fields.len() < 3 || fields.len() > 4 {
            return Err(Error::Parse {
                line: line_no,
                reason: format!("expected 3 or 4 fields, found {}", fields.len()),
            });
        }
        let rating: f64 = fields[2].parse().map_err(|_| Error::Parse {
            line: line_no,
            reason: format!("unparsable rating {:?}", fields[2]),
        })?;
        if !rating.is_finite() {
            return Err(Error::Parse {
                line: line_no,
                reason: format!("non-finite rating {:?}", fields[2]),
            });
        }
        let timestamp = match fields.get(3) {
            Some(ts) if !ts.is_empty() => Some(ts.parse::<i64>().map_err(|_| Error::Parse {
                line: line_no,
                reason: format!("unparsable timestamp {:?}", ts),
            })?),
            _ => None,
        };
        records.push(InteractionRecord {
            user: fields[0].to_string(),
            item: fields[1].to_string(),
            rating,
            timestamp,
        });
    }
    Ok(records)
}

/// Keeps the links whose rating is at least `threshold`.
///
/// Repeated (user, item) pairs resolve to their last occurrence. Indices are
/// handed out in order of first appearance among surviving records, so users
/// and items left without links never enter the index space.
pub fn binarize(records: &[InteractionRecord], threshold: f64) -> Result<(LinkSet, IndexMap)> {
    if !threshold.is_finite() {
        return Err(Error::Config(format!("rating threshold {threshold} is not finite")));
    }
    let mut last: HashMap<(&str, &str), usize> = HashMap::with_capacity(records.len());
    for (pos, r) in records.iter().enumerate() {
        last.insert((r.user.as_str(), r.item.as_str()), pos);
    }

    let mut users: HashMap<&str, u32> = HashMap::new();
    let mut items: HashMap<&str, u32> = HashMap::new();
    let mut map = IndexMap::default();
    let mut links = Vec::new();
    for (pos, r) in records.iter().enumerate() {
        if last[&(r.user.as_str(), r.item.as_str())] != pos || r.rating < threshold {
            continue;
        }
        let user = *users.entry(r.user.as_str()).or_insert_with(|| {
            map.users.push(r.user.clone());
            (map.users.len() - 1) as u32
        });
        let item = *items.entry(r.item.as_str()).or_insert_with(|| {
            map.items.push(r.item.clone());
            (map.items.len() - 1) as u32
        });
        links.push(Link { item, user });
    }
    let set = LinkSet::new(links, map.items.len(), map.users.len())?;
    Ok((set, map))
}

/// Training links plus held-out probe links.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub training: LinkSet,
    pub probe: LinkSet,
    pub seed: u64,
    pub ratio: f64,
}

impl DataSplit {
    pub fn item_count(&self) -> usize {
        self.training.item_count()
    }

    pub fn user_count(&self) -> usize {
        self.training.user_count()
    }

    /// Probe items of every user, sorted ascending.
    pub fn probe_by_user(&self) -> Vec<Vec<u32>> {
        let mut per_user = vec![Vec::new(); self.user_count()];
        for l in self.probe.links() {
            per_user[l.user as usize].push(l.item);
        }
        for items in &mut per_user {
            items.sort_unstable();
        }
        per_user
    }
}

/// Moves a uniformly random `round(ratio × |links|)` links into the probe set.
pub fn split_train_probe(links: &LinkSet, ratio: f64, seed: u64) -> Result<DataSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    if links.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 links to split, found {}",
            links.len()
        )));
    }
    let total = links.len();
    let probe_count = (ratio * total as f64).round() as usize;
    let mut rng = substream(seed, Stream::Split);
    let mut in_probe = vec![false; total];
    for i in index::sample(&mut rng, total, probe_count) {
        in_probe[i] = true;
    }
    let (mut training, mut probe) = (Vec::with_capacity(total - probe_count), Vec::with_capacity(probe_count));
    for (link, &p) in links.links().iter().zip(&in_probe) {
        if p {
            probe.push(*link);
        } else {
            training.push(*link);
        }
    }
    let (n, m) = (links.item_count(), links.user_count());
    Ok(DataSplit {
        training: LinkSet::new(training, n, m)?,
        probe: LinkSet::new(probe, n, m)?,
        seed,
        ratio,
    })
}

/// Subsampled links plus the original index of every kept item and user.
#[derive(Debug, Clone, PartialEq)]
pub struct Subsample {
    pub links: LinkSet,
    pub kept_items: Vec<usize>,
    pub kept_users: Vec<usize>,
}

impl Subsample {
    /// Restricts an index map to the kept users and items.
    pub fn remap(&self, map: &IndexMap) -> IndexMap {
        IndexMap {
            users: self.kept_users.iter().map(|&u| map.users[u].clone()).collect(),
            items: self.kept_items.iter().map(|&a| map.items[a].clone()).collect(),
        }
    }
}

/// Keeps a seeded uniform sample of `keep` links and compacts the index
/// space. Used to build sparse analogs of a dense dataset.
pub fn subsample(links: &LinkSet, keep: usize, seed: u64) -> Result<Subsample> {
    if keep == 0 || keep > links.len() {
        return Err(Error::Config(format!(
            "cannot keep {keep} of {} links",
            links.len()
        )));
    }
    let mut rng = substream(seed, Stream::Subsample);
    let picked: Vec<Link> = index::sample(&mut rng, links.len(), keep)
        .into_iter()
        .map(|i| links.links()[i])
        .collect();
    let (links, kept_items, kept_users) = LinkSet::new(picked, links.item_count(), links.user_count())?.compact();
    Ok(Subsample {
        links,
        kept_items,
        kept_users,
    })
}

/// Subsamples until the compacted link set reaches (approximately) the
/// requested density. Compaction drops emptied users and items, which
/// pushes density up, so the kept count is found by bisection.
pub fn subsample_to_density(links: &LinkSet, target: f64, seed: u64) -> Result<Subsample> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::Config(format!("target density {target} must lie in (0, 1]")));
    }
    if density(links) <= target {
        return subsample(links, links.len(), seed);
    }
    let (mut lo, mut hi) = (1usize, links.len());
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if density(&subsample(links, mid, seed)?.links) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    subsample(links, lo, seed)
}

/// Binary adjacency of the training links, kept both as user profiles and
/// item audiences.
#[derive(Debug, Clone)]
pub struct BipartiteGraph {
    user_items: Vec<Vec<u32>>,
    item_users: Vec<Vec<u32>>,
    link_count: usize,
}

impl BipartiteGraph {
    pub fn user_count(&self) -> usize {
        self.user_items.len()
    }

    pub fn item_count(&self) -> usize {
        self.item_users.len()
    }

    pub fn link_count(&self) -> usize {
        self.link_count
    }

    /// Items collected by `user`, ascending.
    pub fn profile(&self, user: usize) -> &[u32] {
        &self.user_items[user]
    }

    /// Users holding `item`, ascending.
    pub fn audience(&self, item: usize) -> &[u32] {
        &self.item_users[item]
    }

    pub fn user_degree(&self, user: usize) -> usize {
        self.user_items[user].len()
    }

    pub fn item_degree(&self, item: usize) -> usize {
        self.item_users[item].len()
    }

    pub fn has_link(&self, item: usize, user: usize) -> bool {
        self.user_items[user].binary_search(&(item as u32)).is_ok()
    }
}

/// Builds the graph from training links only.
pub fn build_graph(training: &LinkSet) -> BipartiteGraph {
    let mut user_items = vec![Vec::new(); training.user_count()];
    let mut item_users = vec![Vec::new(); training.item_count()];
    // links are sorted by (item, user), so both adjacency lists come out sorted
    for l in training.links() {
        user_items[l.user as usize].push(l.item);
        item_users[l.item as usize].push(l.user);
    }
    BipartiteGraph {
        user_items,
        item_users,
        link_count: training.len(),
    }
}

/// Fraction of the `n × m` grid covered by links.
pub fn density(links: &LinkSet) -> f64 {
    let cells = links.item_count() * links.user_count();
    if cells == 0 {
        return 0.0;
    }
    links.len() as f64 / cells as f64
}

#[derive(Serialize, Deserialize)]
struct SplitSidecar {
    seed: u64,
    ratio: f64,
    items: usize,
    users: usize,
    training_links: usize,
    probe_links: usize,
    index_map: IndexMap,
}

/// Persists a split as `train.txt`, `probe.txt` (one `item user` pair per
/// line) and `split.json`.
pub fn write_split(split: &DataSplit, map: &IndexMap, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_link_list(&split.training, &dir.join("train.txt"))?;
    write_link_list(&split.probe, &dir.join("probe.txt"))?;
    let sidecar = SplitSidecar {
        seed: split.seed,
        ratio: split.ratio,
        items: split.item_count(),
        users: split.user_count(),
        training_links: split.training.len(),
        probe_links: split.probe.len(),
        index_map: map.clone(),
    };
    fs::write(dir.join("split.json"), serde_json::to_string_pretty(&sidecar)? + "\n")?;
    Ok(())
}

/// Reads back a split written by [`write_split`].
pub fn read_split(dir: &Path) -> Result<(DataSplit, IndexMap)> {
    let sidecar: SplitSidecar = serde_json::from_str(&fs::read_to_string(dir.join("split.json"))?)?;
    let (n, m) = (sidecar.items, sidecar.users);
    let split = DataSplit {
        training: read_link_list(&dir.join("train.txt"), n, m)?,
        probe: read_link_list(&dir.join("probe.txt"), n, m)?,
        seed: sidecar.seed,
        ratio: sidecar.ratio,
    };
    Ok((split, sidecar.index_map))
}

pub fn write_link_list(links: &LinkSet, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for l in links.links() {
        writeln!(out, "{} {}", l.item, l.user)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_link_list(path: &Path, item_count: usize, user_count: usize) -> Result<LinkSet> {
    let text = fs::read_to_string(path)?;
    let mut links = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace().map(str::parse::<u32>);
        match (parts.next(), parts.next(), parts.next()) {
            (Some(Ok(item)), Some(Ok(user)), None) => links.push(Link { item, user }),
            _ => {
                return Err(Error::Parse {
                    line: idx + 1,
                    reason: format!("expected `item user`, found {line:?}"),
                })
            }
        }
    }
    LinkSet::new(links, item_count, user_count)
}
