//! Classic and kernel collaborative filtering, ranking and evaluation.
//!
//! Classic CF predicts `R(i, j)` as the similarity-weighted mean of the
//! ratings contributed by the positive-similarity neighbors of the target
//! node. Kernel CF keeps the same arithmetic but restricts the neighbors to a
//! rectangular window `|Δt| < b_t, |Δu| < b_u` around the target in the
//! force-directed layout and weights them with a product kernel
//! `K(Δt / b_t) K(Δu / b_u)`. Both modes work over a user graph (neighbors
//! rate the target item) or an item graph (the target user rates the
//! neighbor items).

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use log::{debug, warn};
use rayon::prelude::*;

use crate::bandwidth::{plug_in_bandwidth_2d, BandwidthPair, Fallback};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::kernels::{Kernel, Sample2d};
use crate::layout::{bounding_box, run_layout, LayoutState, Vec2};
use crate::ratings::{DatasetSplit, RatingsMatrix};
use crate::similarity::{build_similarity_graph, GraphMode, SimilarityGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    ClassicUser,
    ClassicItem,
    KernelCf,
    KernelCfItem,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::ClassicUser, Method::ClassicItem, Method::KernelCf, Method::KernelCfItem];

    pub fn mode(self) -> GraphMode {
        match self {
            Method::ClassicUser | Method::KernelCf => GraphMode::User,
            Method::ClassicItem | Method::KernelCfItem => GraphMode::Item,
        }
    }

    pub fn is_kernel(self) -> bool {
        matches!(self, Method::KernelCf | Method::KernelCfItem)
    }

    fn new(mode: GraphMode, kernel: bool) -> Self {
        match (mode, kernel) {
            (GraphMode::User, false) => Method::ClassicUser,
            (GraphMode::Item, false) => Method::ClassicItem,
            (GraphMode::User, true) => Method::KernelCf,
            (GraphMode::Item, true) => Method::KernelCfItem,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::ClassicUser => "classic-user",
            Method::ClassicItem => "classic-item",
            Method::KernelCf => "kernel-cf",
            Method::KernelCfItem => "kernel-cf-item",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::Argument(format!("unknown method '{s}'")))
    }
}

/// Weights used for the retained neighbors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum NeighborWeighting {
    /// Product kernel over layout offsets, restricted to the bandwidth window.
    #[default]
    Kernel,
    /// Raw similarities over the full positive-similarity neighborhood.
    Similarity,
}

impl fmt::Display for NeighborWeighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NeighborWeighting::Kernel => "kernel",
            NeighborWeighting::Similarity => "similarity",
        })
    }
}

impl FromStr for NeighborWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kernel" => Ok(NeighborWeighting::Kernel),
            "similarity" => Ok(NeighborWeighting::Similarity),
            _ => Err(Error::Argument(format!("unknown neighbor weighting '{s}'"))),
        }
    }
}

/// Which fallbacks fill in a prediction with no contributing neighbor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FallbackPolicy {
    pub item_mean: bool,
    pub global_mean: bool,
}

impl Default for FallbackPolicy {
    fn default() -> Self {
        Self {
            item_mean: true,
            global_mean: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FallbackSource {
    ItemMean,
    GlobalMean,
}

impl fmt::Display for FallbackSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FallbackSource::ItemMean => "item-mean",
            FallbackSource::GlobalMean => "global-mean",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub user_id: String,
    pub item_id: String,
    /// `None` when no neighbor contributed and every fallback is disabled.
    pub score: Option<f64>,
    pub method: Method,
    /// Neighbors that contributed a rating.
    pub neighborhood_size: usize,
    pub fallback: Option<FallbackSource>,
}

impl Prediction {
    pub fn is_fallback(&self) -> bool {
        self.fallback.is_some()
    }
}

/// Weighted mean of the ratings the listed neighbors contribute to `(user, item)`.
fn weighted_score(
    train: &RatingsMatrix,
    mode: GraphMode,
    user: usize,
    item: usize,
    neighbors: &[(usize, f64)],
) -> Option<(f64, usize)> {
    let (mut num, mut den, mut count) = (0.0, 0.0, 0);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(k, w) in neighbors {
        let rating = match mode {
            GraphMode::User => train.rating(k, item),
            GraphMode::Item => train.rating(user, k),
        };
        if let Some(r) = rating {
            num += w * r;
            den += w;
            count += 1;
            lo = lo.min(r);
            hi = hi.max(r);
        }
    }
    // The clamp only removes rounding past the contributing ratings.
    (count > 0 && den > 0.0).then(|| ((num / den).clamp(lo, hi), count))
}

fn finish(
    train: &RatingsMatrix,
    user: usize,
    item: usize,
    method: Method,
    policy: &FallbackPolicy,
    scored: Option<(f64, usize)>,
) -> Prediction {
    let (score, neighborhood_size, fallback) = match scored {
        Some((s, n)) => (Some(s), n, None),
        None => {
            let item_mean = policy.item_mean.then(|| train.item_mean(item)).flatten();
            let global = policy.global_mean.then(|| train.global_mean()).flatten();
            match (item_mean, global) {
                (Some(m), _) => (Some(m), 0, Some(FallbackSource::ItemMean)),
                (None, Some(m)) => (Some(m), 0, Some(FallbackSource::GlobalMean)),
                (None, None) => (None, 0, None),
            }
        }
    };
    Prediction {
        user_id: train.users()[user].clone(),
        item_id: train.items()[item].clone(),
        score,
        method,
        neighborhood_size,
        fallback,
    }
}

fn lookup(train: &RatingsMatrix, user: &str, item: &str) -> Result<(usize, usize)> {
    let u = train.user_index(user).ok_or_else(|| Error::UnknownUser(user.to_owned()))?;
    let i = train.item_index(item).ok_or_else(|| Error::UnknownItem(item.to_owned()))?;
    Ok((u, i))
}

fn check_graph(train: &RatingsMatrix, graph: &SimilarityGraph, mode: GraphMode) -> Result<()> {
    if graph.mode() != mode {
        return Err(Error::Argument(format!("expected a {mode} graph, got a {} graph", graph.mode())));
    }
    let ids = match mode {
        GraphMode::User => train.users(),
        GraphMode::Item => train.items(),
    };
    if graph.node_ids() != ids {
        return Err(Error::Argument(format!("graph nodes do not match the {mode} index of the ratings")));
    }
    Ok(())
}

/// User-based CF over a user-mode graph.
pub fn user_cf_predict(
    train: &RatingsMatrix,
    graph: &SimilarityGraph,
    user: &str,
    item: &str,
    policy: &FallbackPolicy,
) -> Result<Prediction> {
    check_graph(train, graph, GraphMode::User)?;
    let (u, i) = lookup(train, user, item)?;
    let scored = weighted_score(train, GraphMode::User, u, i, graph.neighbors(u));
    Ok(finish(train, u, i, Method::ClassicUser, policy, scored))
}

/// Item-based CF over an item-mode graph.
pub fn item_cf_predict(
    train: &RatingsMatrix,
    graph: &SimilarityGraph,
    user: &str,
    item: &str,
    policy: &FallbackPolicy,
) -> Result<Prediction> {
    check_graph(train, graph, GraphMode::Item)?;
    let (u, i) = lookup(train, user, item)?;
    let scored = weighted_score(train, GraphMode::Item, u, i, graph.neighbors(i));
    Ok(finish(train, u, i, Method::ClassicItem, policy, scored))
}

#[derive(Debug, Clone)]
struct Geometry {
    layout: LayoutState,
    bandwidth: BandwidthPair,
}

/// Trained CF state: ratings, similarity graph and, for kernel methods, the
/// layout and bandwidths.
#[derive(Debug, Clone)]
pub struct CfModel {
    train: RatingsMatrix,
    graph: SimilarityGraph,
    geometry: Option<Geometry>,
    kernel: Kernel,
    weighting: NeighborWeighting,
    fallback: FallbackPolicy,
    method: Method,
}

impl CfModel {
    /// Builds the graph for `method` and, for kernel methods, runs the layout.
    pub fn fit(train: &RatingsMatrix, method: Method, config: &Config) -> Result<Self> {
        let graph = build_similarity_graph(train, &config.similarity(method.mode()))?;
        if !method.is_kernel() {
            return Self::from_graph(train, graph, None, method, config);
        }
        let layout = run_layout(&graph, &config.layout)?;
        debug!(
            "layout of {} nodes stopped after {} iterations (converged: {})",
            layout.len(),
            layout.iteration,
            layout.converged
        );
        Self::from_graph(train, graph, Some(layout), method, config)
    }

    /// Kernel model over a precomputed layout whose node ids cover the graph.
    pub fn with_layout(train: &RatingsMatrix, mode: GraphMode, config: &Config, layout: LayoutState) -> Result<Self> {
        let graph = build_similarity_graph(train, &config.similarity(mode))?;
        let layout = align_layout(&graph, layout)?;
        Self::from_graph(train, graph, Some(layout), Method::new(mode, true), config)
    }

    fn from_graph(
        train: &RatingsMatrix,
        graph: SimilarityGraph,
        layout: Option<LayoutState>,
        method: Method,
        config: &Config,
    ) -> Result<Self> {
        check_graph(train, &graph, method.mode())?;
        let geometry = layout.map(|layout| {
            let bandwidth = pooled_bandwidth(train, method.mode(), &layout, config);
            if let Some(reason) = &bandwidth.fallback {
                warn!("bandwidth fell back to the scale rule ({reason})");
            }
            Geometry { layout, bandwidth }
        });
        Ok(Self {
            train: train.clone(),
            graph,
            geometry,
            kernel: config.kernel,
            weighting: if method.is_kernel() {
                config.weighting
            } else {
                NeighborWeighting::Similarity
            },
            fallback: config.fallback,
            method,
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn mode(&self) -> GraphMode {
        self.method.mode()
    }

    pub fn train(&self) -> &RatingsMatrix {
        &self.train
    }

    pub fn graph(&self) -> &SimilarityGraph {
        &self.graph
    }

    pub fn layout(&self) -> Option<&LayoutState> {
        self.geometry.as_ref().map(|g| &g.layout)
    }

    pub fn bandwidth(&self) -> Option<&BandwidthPair> {
        self.geometry.as_ref().map(|g| &g.bandwidth)
    }

    pub fn weighting(&self) -> NeighborWeighting {
        self.weighting
    }

    pub fn with_weighting(mut self, weighting: NeighborWeighting) -> Result<Self> {
        if weighting == NeighborWeighting::Kernel && self.geometry.is_none() {
            return Err(Error::Argument("kernel weighting needs a layout".to_owned()));
        }
        self.weighting = weighting;
        Ok(self)
    }

    /// Replaces the bandwidths, keeping the rest of the trained state.
    pub fn with_bandwidth(mut self, b_t: f64, b_u: f64) -> Result<Self> {
        if !(b_t > 0.0 && b_u > 0.0) {
            return Err(Error::Argument(format!("bandwidths must be positive, got ({b_t}, {b_u})")));
        }
        let geometry = self
            .geometry
            .as_mut()
            .ok_or_else(|| Error::Argument("classic models have no bandwidth".to_owned()))?;
        geometry.bandwidth.b_t = b_t;
        geometry.bandwidth.b_u = b_u;
        Ok(self)
    }

    /// Retained neighbors of graph node `node` with their weights, in
    /// ascending neighbor order.
    pub fn neighborhood(&self, node: usize) -> Vec<(usize, f64)> {
        let candidates = self.graph.neighbors(node);
        match (self.weighting, &self.geometry) {
            (NeighborWeighting::Kernel, Some(g)) => {
                let p = g.layout.positions[node];
                let (b_t, b_u) = (g.bandwidth.b_t, g.bandwidth.b_u);
                candidates
                    .iter()
                    .filter_map(|&(k, _)| {
                        let q = g.layout.positions[k];
                        let (dt, du) = (q[0] - p[0], q[1] - p[1]);
                        if dt.abs() >= b_t || du.abs() >= b_u {
                            return None;
                        }
                        let w = self.kernel.eval(dt / b_t) * self.kernel.eval(du / b_u);
                        (w > 0.0).then_some((k, w))
                    })
                    .collect()
            }
            _ => candidates.to_vec(),
        }
    }

    fn target_node(&self, user: usize, item: usize) -> usize {
        match self.mode() {
            GraphMode::User => user,
            GraphMode::Item => item,
        }
    }

    pub(crate) fn predict_index(&self, user: usize, item: usize) -> Prediction {
        let neighbors = self.neighborhood(self.target_node(user, item));
        let scored = weighted_score(&self.train, self.mode(), user, item, &neighbors);
        finish(&self.train, user, item, self.method, &self.fallback, scored)
    }

    pub fn predict(&self, user: &str, item: &str) -> Result<Prediction> {
        let (u, i) = lookup(&self.train, user, item)?;
        Ok(self.predict_index(u, i))
    }

    /// Top `top_n` unrated items drawn from the retained neighborhood, by
    /// descending score with ties broken by ascending item index.
    pub fn recommend(&self, user: &str, top_n: usize) -> Result<Vec<Prediction>> {
        if top_n == 0 {
            return Err(Error::Argument("top_n must be at least 1".to_owned()));
        }
        let u = self.train.user_index(user).ok_or_else(|| Error::UnknownUser(user.to_owned()))?;
        let rated: BTreeSet<usize> = self.train.user_row(u).iter().map(|&(i, _)| i).collect();
        let candidates: BTreeSet<usize> = match self.mode() {
            GraphMode::User => self
                .neighborhood(u)
                .iter()
                .flat_map(|&(k, _)| self.train.user_row(k).iter().map(|&(i, _)| i))
                .filter(|i| !rated.contains(i))
                .collect(),
            GraphMode::Item => rated
                .iter()
                .flat_map(|&k| self.neighborhood(k).into_iter().map(|(j, _)| j))
                .filter(|j| !rated.contains(j))
                .collect(),
        };
        if candidates.is_empty() {
            warn!("no candidate items for user '{user}'");
            return Ok(Vec::new());
        }
        let mut scored: Vec<(usize, Prediction)> = candidates
            .into_iter()
            .map(|i| (i, self.predict_index(u, i)))
            .filter(|(_, p)| p.score.is_some() && !p.is_fallback())
            .collect();
        scored.sort_by(|(ia, a), (ib, b)| {
            let (sa, sb) = (a.score.unwrap_or(f64::NEG_INFINITY), b.score.unwrap_or(f64::NEG_INFINITY));
            sb.total_cmp(&sa).then(ia.cmp(ib))
        });
        scored.truncate(top_n);
        Ok(scored.into_iter().map(|(_, p)| p).collect())
    }
}

/// Reorders `layout` to the graph's node order.
fn align_layout(graph: &SimilarityGraph, layout: LayoutState) -> Result<LayoutState> {
    if layout.node_ids == graph.node_ids() {
        return Ok(layout);
    }
    let position_of: std::collections::HashMap<&str, Vec2> = layout
        .node_ids
        .iter()
        .map(String::as_str)
        .zip(layout.positions.iter().copied())
        .collect();
    let positions = graph
        .node_ids()
        .iter()
        .map(|id| {
            position_of
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::Argument(format!("layout has no position for node '{id}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LayoutState {
        node_ids: graph.node_ids().to_vec(),
        positions,
        ..layout
    })
}

/// Global bandwidths from one point per rated node: its layout position with
/// the node's mean rating as response.
pub fn pooled_bandwidth(train: &RatingsMatrix, mode: GraphMode, layout: &LayoutState, config: &Config) -> BandwidthPair {
    let (points, y): (Vec<Vec2>, Vec<f64>) = layout
        .positions
        .iter()
        .enumerate()
        .filter_map(|(k, &p)| {
            let mean = match mode {
                GraphMode::User => train.user_mean(k),
                GraphMode::Item => train.item_mean(k),
            };
            mean.map(|m| (p, m))
        })
        .unzip();
    let extent = bounding_box(&layout.positions)
        .map(|(lo, hi)| ((hi[0] - lo[0]) * (hi[1] - lo[1])).sqrt())
        .unwrap_or(1.0);
    match Sample2d::new(points, y) {
        Ok(sample) if !sample.is_empty() => plug_in_bandwidth_2d(&sample, config.kernel, &config.plug_in),
        Ok(_) => BandwidthPair::fallback(0, extent, Fallback::Unestimable("no rated nodes".to_owned())),
        Err(e) => BandwidthPair::fallback(0, extent, Fallback::Unestimable(e.to_string())),
    }
}

/// Error summary of one method over a test set.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodMetrics {
    pub method: Method,
    /// Over predicted pairs; `None` when nothing was predicted.
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
    /// Fraction of test pairs that received a score.
    pub coverage: f64,
    /// Fraction of test pairs scored by a fallback.
    pub fallback_rate: f64,
    pub n_predicted: usize,
}

impl MethodMetrics {
    /// Scores `predictions` against `truth`, pairwise.
    pub fn from_predictions(method: Method, predictions: &[Prediction], truth: &[f64]) -> Result<Self> {
        if predictions.len() != truth.len() {
            return Err(Error::Argument(format!(
                "{} predictions for {} truths",
                predictions.len(),
                truth.len()
            )));
        }
        if truth.is_empty() {
            return Err(Error::Argument("empty test set".to_owned()));
        }
        let (mut se, mut ae, mut n, mut fallbacks) = (0.0, 0.0, 0usize, 0usize);
        for (p, &t) in predictions.iter().zip(truth) {
            if let Some(s) = p.score {
                se += (s - t).powi(2);
                ae += (s - t).abs();
                n += 1;
            }
            if p.is_fallback() {
                fallbacks += 1;
            }
        }
        let total = truth.len() as f64;
        Ok(Self {
            method,
            rmse: (n > 0).then(|| (se / n as f64).sqrt()),
            mae: (n > 0).then(|| ae / n as f64),
            coverage: n as f64 / total,
            fallback_rate: fallbacks as f64 / total,
            n_predicted: n,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: Method,
    pub seed: u64,
    pub n_test: usize,
    pub metrics: MethodMetrics,
    /// Every method evaluated on the same split, in `Method::ALL` order.
    pub breakdown: Vec<MethodMetrics>,
    /// Bandwidths of the requested method, when it is a kernel method.
    pub bandwidth: Option<BandwidthPair>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_owned(), |v| v.to_string())
}

impl EvalReport {
    /// `key=value` lines; byte-identical for identical inputs.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let m = &self.metrics;
        let _ = writeln!(s, "method={}", self.method);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "n_test={}", self.n_test);
        let _ = writeln!(s, "rmse={}", opt(m.rmse));
        let _ = writeln!(s, "mae={}", opt(m.mae));
        let _ = writeln!(s, "coverage={}", m.coverage);
        let _ = writeln!(s, "fallback_rate={}", m.fallback_rate);
        if let Some(b) = &self.bandwidth {
            let _ = writeln!(s, "b_t={}", b.b_t);
            let _ = writeln!(s, "b_u={}", b.b_u);
            let _ = writeln!(s, "bandwidth_fallback={}", b.is_fallback());
        }
        for b in &self.breakdown {
            let _ = writeln!(s, "{}.rmse={}", b.method, opt(b.rmse));
            let _ = writeln!(s, "{}.mae={}", b.method, opt(b.mae));
            let _ = writeln!(s, "{}.coverage={}", b.method, b.coverage);
            let _ = writeln!(s, "{}.fallback_rate={}", b.method, b.fallback_rate);
        }
        s
    }
}

/// Predictions for every test pair, in test-entry order.
pub fn predict_test_set(model: &CfModel, test: &RatingsMatrix) -> Result<(Vec<Prediction>, Vec<f64>)> {
    if test.users() != model.train().users() || test.items() != model.train().items() {
        return Err(Error::Argument("test set does not share the training index".to_owned()));
    }
    let pairs: Vec<(usize, usize, f64)> = test.entries().collect();
    let predictions = pairs.par_iter().map(|&(u, i, _)| model.predict_index(u, i)).collect();
    Ok((predictions, pairs.iter().map(|&(_, _, v)| v).collect()))
}

/// Trains on `split.train` and scores every test pair with `method`, plus
/// the classic baselines and user-mode kernel CF for comparison.
pub fn evaluate(split: &DatasetSplit, method: Method, config: &Config) -> Result<EvalReport> {
    if split.test.is_empty() {
        return Err(Error::Argument("empty test set".to_owned()));
    }
    let methods: BTreeSet<Method> = [Method::ClassicUser, Method::ClassicItem, Method::KernelCf, method]
        .into_iter()
        .collect();
    let mut breakdown = Vec::new();
    let mut bandwidth = None;
    for m in methods {
        let model = CfModel::fit(&split.train, m, config)?;
        let (predictions, truth) = predict_test_set(&model, &split.test)?;
        breakdown.push(MethodMetrics::from_predictions(m, &predictions, &truth)?);
        if m == method {
            bandwidth = model.bandwidth().cloned();
        }
    }
    let metrics = breakdown
        .iter()
        .find(|b| b.method == method)
        .cloned()
        .expect("requested method is evaluated");
    Ok(EvalReport {
        method,
        seed: split.seed,
        n_test: split.test.len(),
        metrics,
        breakdown,
        bandwidth,
    })
}
