//! Synthetic workloads for the benchmarks.

use ills_core::dataset::{build_graph, split_train_probe, Link, LinkSet};
use ills_core::spreading::densify;
use ills_core::{BipartiteGraph, DataSplit, ScoreMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Links with a skewed item popularity, `per_user` distinct items per user.
pub fn synthetic_links(items: usize, users: usize, per_user: usize, seed: u64) -> LinkSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut links = Vec::with_capacity(users * per_user);
    for u in 0..users {
        let mut picked = Vec::with_capacity(per_user);
        while picked.len() < per_user.min(items) {
            let x: f64 = rng.random();
            let a = ((x * x) * items as f64) as usize;
            if !picked.contains(&a) {
                picked.push(a);
            }
        }
        links.extend(picked.into_iter().map(|a| Link::new(a, u)));
    }
    LinkSet::new(links, items, users).expect("valid synthetic links")
}

pub struct Workload {
    pub split: DataSplit,
    pub graph: BipartiteGraph,
    pub scores: ScoreMatrix,
}

pub fn workload(items: usize, users: usize, per_user: usize, seed: u64) -> Workload {
    let links = synthetic_links(items, users, per_user, seed);
    let split = split_train_probe(&links, 0.1, seed).expect("split");
    let graph = build_graph(&split.training);
    let scores = densify(&graph);
    Workload { split, graph, scores }
}
