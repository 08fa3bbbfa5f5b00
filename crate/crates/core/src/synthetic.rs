//! Seeded synthetic datasets for tests, benchmarks and demos.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ratings::{RatingsBuilder, RatingsMatrix};
use crate::similarity::{GraphMode, SimilarityGraph};

/// Users and items split into matching taste clusters. A user rates items of
/// its own cluster high (about 4) and others low (about 2), with ±1 noise on
/// the 1–5 scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentClusters {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    pub ratings_per_user: usize,
    /// Probability that a rated item is drawn from the user's own cluster.
    pub own_cluster_bias: f64,
    pub seed: u64,
}

impl LatentClusters {
    /// 100 users × 60 items, 1,000 ratings.
    pub fn thousand(seed: u64) -> Self {
        Self {
            n_users: 100,
            n_items: 60,
            n_clusters: 3,
            ratings_per_user: 10,
            own_cluster_bias: 0.7,
            seed,
        }
    }

    /// 50 users × 100 items, 1,000 ratings.
    pub fn fifty_by_hundred(seed: u64) -> Self {
        Self {
            n_users: 50,
            n_items: 100,
            n_clusters: 4,
            ratings_per_user: 20,
            own_cluster_bias: 0.6,
            seed,
        }
    }

    pub fn generate(&self) -> RatingsMatrix {
        assert!(self.n_clusters >= 1 && self.n_items >= self.n_clusters);
        assert!(self.ratings_per_user <= self.n_items);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let users = (0..self.n_users).map(|u| format!("u{u}")).collect();
        let items = (0..self.n_items).map(|i| format!("i{i}")).collect();
        let cluster_items: Vec<Vec<usize>> = (0..self.n_clusters)
            .map(|c| (0..self.n_items).filter(|i| i % self.n_clusters == c).collect())
            .collect();
        let mut entries = Vec::with_capacity(self.n_users * self.ratings_per_user);
        for u in 0..self.n_users {
            let own = u % self.n_clusters;
            let mut chosen = BTreeSet::new();
            while chosen.len() < self.ratings_per_user {
                let item = if rng.random_bool(self.own_cluster_bias) {
                    let pool = &cluster_items[own];
                    pool[rng.random_range(0..pool.len())]
                } else {
                    rng.random_range(0..self.n_items)
                };
                if chosen.insert(item) {
                    let base = if item % self.n_clusters == own { 4.0 } else { 2.0 };
                    let value = (base + rng.random_range(-1..=1) as f64).clamp(1.0, 5.0);
                    entries.push((u, item, value));
                }
            }
        }
        RatingsMatrix::from_entries(users, items, entries).expect("valid synthetic entries")
    }
}

/// Two taste cliques with disjoint item catalogues and one bridge user.
///
/// Users `u0..u9` rate a sliding window of 12 of the 20 items `A0..A19`;
/// users `v0..v9` do the same on `B0..B19`. Clique A rates high (3–5) and
/// clique B low (1–3), with a per-user lean so that user means differ. The
/// user `bridge` rates 16 `B` items like clique B and the single item `A0`,
/// which makes it strongly similar to clique B and weakly similar to the A
/// users who share that item.
pub fn two_clique_ratings() -> RatingsMatrix {
    let mut builder = RatingsBuilder::new();
    for (prefix, items, base) in [("u", "A", 4.0), ("v", "B", 2.0)] {
        for user in 0..10 {
            for m in 0..12 {
                let item = (user + m) % 20;
                let value = base + clique_offset(user, item);
                builder
                    .push(&format!("{prefix}{user}"), &format!("{items}{item}"), value)
                    .expect("finite rating");
            }
        }
    }
    for item in 0..16 {
        builder
            .push("bridge", &format!("B{item}"), 2.0 + clique_offset(10, item))
            .expect("finite rating");
    }
    builder.push("bridge", "A0", 4.0).expect("finite rating");
    builder.build()
}

/// Deterministic offset in {-1, 0, 1} whose mean depends on the user.
fn clique_offset(user: usize, item: usize) -> f64 {
    match (user * 7 + item * 3 + user * item) % 5 {
        0 => -1.0,
        1 | 2 => 0.0,
        _ => 1.0,
    }
}

/// Two `size`-node cliques joined by one edge between their first nodes; all
/// weights are 1. Nodes `0..size` form clique A.
pub fn planted_cliques(size: usize) -> SimilarityGraph {
    let ids = (0..2 * size).map(|k| format!("n{k}")).collect();
    let clique = |offset: usize| {
        (0..size).flat_map(move |i| ((i + 1)..size).map(move |j| (offset + i, offset + j, 1.0)))
    };
    let edges = clique(0).chain(clique(size)).chain(std::iter::once((0, size, 1.0)));
    SimilarityGraph::from_edges(GraphMode::User, ids, edges).expect("valid planted graph")
}
