//! User-user and item-item similarity graphs.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ratings::RatingsMatrix;

/// Lower cap on similarities before inversion into distances.
pub const DEFAULT_SIM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GraphMode {
    User,
    Item,
}

impl fmt::Display for GraphMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraphMode::User => "user",
            GraphMode::Item => "item",
        })
    }
}

impl FromStr for GraphMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "user" => Ok(GraphMode::User),
            "item" => Ok(GraphMode::Item),
            other => Err(Error::Argument(format!("unknown graph mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SimilarityMetric {
    Cosine,
    Jaccard,
}

impl fmt::Display for SimilarityMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimilarityMetric::Cosine => "cosine",
            SimilarityMetric::Jaccard => "jaccard",
        })
    }
}

impl FromStr for SimilarityMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(SimilarityMetric::Cosine),
            "jaccard" => Ok(SimilarityMetric::Jaccard),
            other => Err(Error::Argument(format!("unknown similarity metric '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityConfig {
    pub mode: GraphMode,
    pub metric: SimilarityMetric,
    /// An edge is stored only when the similarity is strictly above this.
    pub edge_threshold: f64,
    /// Subtract each profile's own mean before cosine.
    pub mean_center: bool,
    /// Minimum number of co-rated entries for a pair to be compared.
    pub min_co_rated: usize,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            mode: GraphMode::User,
            metric: SimilarityMetric::Cosine,
            edge_threshold: 0.0,
            mean_center: false,
            min_co_rated: 1,
        }
    }
}

/// Cosine of two sparse vectors given as `(index, value)` sorted by index.
///
/// Missing coordinates count as zero.
pub fn cosine_similarity(a: &[(usize, f64)], b: &[(usize, f64)]) -> Result<f64> {
    cosine_with_overlap(a, b).map(|(s, _)| s)
}

fn cosine_with_overlap(a: &[(usize, f64)], b: &[(usize, f64)]) -> Result<(f64, usize)> {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedSimilarity("zero-norm profile".to_owned()));
    }
    let (mut dot, mut overlap) = (0.0, 0);
    let (mut x, mut y) = (0, 0);
    while x < a.len() && y < b.len() {
        match a[x].0.cmp(&b[y].0) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => {
                dot += a[x].1 * b[y].1;
                overlap += 1;
                x += 1;
                y += 1;
            }
        }
    }
    Ok(((dot / (na * nb)).clamp(-1.0, 1.0), overlap))
}

fn norm(v: &[(usize, f64)]) -> f64 {
    v.iter().map(|&(_, x)| x * x).sum::<f64>().sqrt()
}

/// `|a ∩ b| / |a ∪ b|` over sorted, de-duplicated index sets; 0 when both are empty.
pub fn jaccard_similarity(a: &[usize], b: &[usize]) -> f64 {
    let inter = intersection_size(a, b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn intersection_size(a: &[usize], b: &[usize]) -> usize {
    let (mut x, mut y, mut n) = (0, 0, 0);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                x += 1;
                y += 1;
            }
        }
    }
    n
}

/// Inverse-similarity distance, with similarities below `sim_floor` capped.
pub fn similarity_to_distance(sim: f64, sim_floor: f64) -> Result<f64> {
    if !(sim > 0.0) {
        return Err(Error::NoDistance(sim));
    }
    Ok(1.0 / sim.max(sim_floor))
}

/// Symmetric weighted graph over users or items.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    mode: GraphMode,
    node_ids: Vec<String>,
    adjacency: Vec<Vec<(usize, f64)>>,
    isolated_profiles: usize,
}

impl SimilarityGraph {
    /// Builds a graph from an undirected edge list. Each edge is given once.
    pub fn from_edges<I>(mode: GraphMode, node_ids: Vec<String>, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let n = node_ids.len();
        let mut adjacency = vec![Vec::new(); n];
        for (i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::Argument(format!("edge ({i}, {j}) outside {n} nodes")));
            }
            if i == j {
                return Err(Error::Argument(format!("self-edge at node {i}")));
            }
            if !w.is_finite() {
                return Err(Error::Argument(format!("edge ({i}, {j}) has weight {w}")));
            }
            adjacency[i].push((j, w));
            adjacency[j].push((i, w));
        }
        for row in &mut adjacency {
            row.sort_by_key(|&(j, _)| j);
            if row.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::Argument("duplicate edge".to_owned()));
            }
        }
        Ok(Self {
            mode,
            node_ids,
            adjacency,
            isolated_profiles: 0,
        })
    }

    pub fn mode(&self) -> GraphMode {
        self.mode
    }

    pub fn n_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    /// Neighbors of `n` with their similarity, sorted by neighbor index.
    pub fn neighbors(&self, n: usize) -> &[(usize, f64)] {
        &self.adjacency[n]
    }

    pub fn degree(&self, n: usize) -> usize {
        self.adjacency[n].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(Vec::len).collect()
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        let row = &self.adjacency[i];
        row.binary_search_by_key(&j, |&(k, _)| k).ok().map(|k| row[k].1)
    }

    /// Each undirected edge once, as `(i, j, weight)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(i, row)| {
            row.iter()
                .filter(move |&&(j, _)| j > i)
                .map(move |&(j, w)| (i, j, w))
        })
    }

    /// Nodes whose rating profile was empty when the graph was built.
    pub fn isolated_profiles(&self) -> usize {
        self.isolated_profiles
    }

    /// Writes `node_i,node_j,similarity` rows, one per undirected edge.
    pub fn write_edge_list(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            writeln!(out, "node_i,node_j,similarity")?;
            for (i, j, w) in self.edges() {
                writeln!(out, "{},{},{}", self.node_ids[i], self.node_ids[j], w)?;
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }
}

fn profiles(matrix: &RatingsMatrix, mode: GraphMode) -> Vec<&[(usize, f64)]> {
    match mode {
        GraphMode::User => (0..matrix.n_users()).map(|u| matrix.user_row(u)).collect(),
        GraphMode::Item => (0..matrix.n_items()).map(|i| matrix.item_column(i)).collect(),
    }
}

fn center(profile: &[(usize, f64)]) -> Vec<(usize, f64)> {
    if profile.is_empty() {
        return Vec::new();
    }
    let mean = profile.iter().map(|&(_, v)| v).sum::<f64>() / profile.len() as f64;
    profile.iter().map(|&(k, v)| (k, v - mean)).collect()
}

/// Similarity of two profiles together with their overlap, or `None` when
/// the metric is undefined for the pair.
fn pair_similarity(
    metric: SimilarityMetric,
    a: &[(usize, f64)],
    b: &[(usize, f64)],
    ia: &[usize],
    ib: &[usize],
) -> Option<(f64, usize)> {
    match metric {
        SimilarityMetric::Cosine => cosine_with_overlap(a, b).ok(),
        SimilarityMetric::Jaccard => Some((jaccard_similarity(ia, ib), intersection_size(ia, ib))),
    }
}

/// Dense pairwise similarity graph over the users or items of `matrix`.
///
/// Edge `(i, j)` is kept iff the similarity is positive, exceeds
/// `edge_threshold`, and the pair shares at least `min_co_rated` entries.
pub fn build_similarity_graph(matrix: &RatingsMatrix, config: &SimilarityConfig) -> Result<SimilarityGraph> {
    if matrix.is_empty() {
        return Err(Error::Argument("cannot build a similarity graph from an empty matrix".to_owned()));
    }
    let raw = profiles(matrix, config.mode);
    let centered: Vec<Vec<(usize, f64)>> = if config.mean_center && config.metric == SimilarityMetric::Cosine {
        raw.iter().map(|p| center(p)).collect()
    } else {
        raw.iter().map(|p| p.to_vec()).collect()
    };
    let index_sets: Vec<Vec<usize>> = raw.iter().map(|p| p.iter().map(|&(k, _)| k).collect()).collect();

    let n = raw.len();
    let upper: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if raw[i].is_empty() {
                return Vec::new();
            }
            ((i + 1)..n)
                .filter(|&j| !raw[j].is_empty())
                .filter_map(|j| {
                    let (sim, overlap) =
                        pair_similarity(config.metric, &centered[i], &centered[j], &index_sets[i], &index_sets[j])?;
                    (sim > 0.0 && sim > config.edge_threshold && overlap >= config.min_co_rated).then_some((j, sim))
                })
                .collect()
        })
        .collect();

    let mut adjacency = vec![Vec::new(); n];
    for (i, row) in upper.into_iter().enumerate() {
        for (j, w) in row {
            adjacency[i].push((j, w));
            adjacency[j].push((i, w));
        }
    }
    for row in &mut adjacency {
        row.sort_by_key(|&(j, _)| j);
    }

    let isolated_profiles = raw.iter().filter(|p| p.is_empty()).count();
    if isolated_profiles > 0 {
        warn!("{isolated_profiles} {} nodes have no ratings and stay isolated", config.mode);
    }
    let node_ids = match config.mode {
        GraphMode::User => matrix.users().to_vec(),
        GraphMode::Item => matrix.items().to_vec(),
    };
    Ok(SimilarityGraph {
        mode: config.mode,
        node_ids,
        adjacency,
        isolated_profiles,
    })
}
