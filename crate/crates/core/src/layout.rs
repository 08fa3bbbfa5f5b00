//! ForceAtlas2-style layout of a similarity graph in the plane.
//!
//! Every pair of nodes repels with magnitude `k_r (deg_i + 1)(deg_j + 1) / d`
//! and every edge attracts with magnitude `d`, scaled by the edge similarity
//! (the inverse of its target length `1 / sim`). Nodes move along their net
//! force with ForceAtlas2's adaptive speed: a global speed set from the ratio
//! of total traction to total swinging (how much each node's force changed
//! since the last iteration), damped per node by its own swinging.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::similarity::{similarity_to_distance, SimilarityGraph, DEFAULT_SIM_FLOOR};

pub type Vec2 = [f64; 2];

/// Distances below this are treated as coincident by the repulsion law.
pub const MIN_DISTANCE: f64 = 1e-9;

/// Global speed control in the style of ForceAtlas2.
#[derive(Debug, Clone, Copy)]
struct SpeedControl {
    speed: f64,
    efficiency: f64,
}

impl SpeedControl {
    const MIN_EFFICIENCY: f64 = 0.05;
    const MAX_JITTER: f64 = 10.0;
    const MAX_RISE: f64 = 0.5;

    fn new(initial: f64) -> Self {
        Self {
            speed: initial,
            efficiency: 1.0,
        }
    }

    /// Updates the speed from the mass-weighted swinging and traction totals.
    fn update(&mut self, swinging: f64, traction: f64, n: usize) -> f64 {
        let n = n as f64;
        let estimate = 0.05 * n.sqrt();
        let mut jitter = estimate.sqrt().max(Self::MAX_JITTER.min(estimate * traction / (n * n)));
        if traction > 0.0 && swinging / traction > 2.0 {
            if self.efficiency > Self::MIN_EFFICIENCY {
                self.efficiency *= 0.5;
            }
            jitter = jitter.max(1.0);
        }
        if !(swinging > 0.0) {
            return self.speed;
        }
        let target = jitter * self.efficiency * traction / swinging;
        if swinging > jitter * traction {
            if self.efficiency > Self::MIN_EFFICIENCY {
                self.efficiency *= 0.7;
            }
        } else if self.speed < 1000.0 {
            self.efficiency *= 1.3;
        }
        self.speed += (target - self.speed).min(Self::MAX_RISE * self.speed);
        self.speed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutConfig {
    pub k_r: f64,
    pub max_iterations: usize,
    /// Starting global speed; adapted every iteration.
    pub initial_step: f64,
    /// Stop once the mean per-node displacement falls below this.
    pub convergence_tolerance: f64,
    pub seed: u64,
    pub sim_floor: f64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            k_r: 10.0,
            max_iterations: 1000,
            initial_step: 0.1,
            convergence_tolerance: 1e-4,
            seed: 0,
            sim_floor: DEFAULT_SIM_FLOOR,
        }
    }
}

impl LayoutConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k_r", self.k_r),
            ("initial_step", self.initial_step),
            ("convergence_tolerance", self.convergence_tolerance),
            ("sim_floor", self.sim_floor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Argument(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// Planar coordinates per node plus iteration metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutState {
    pub node_ids: Vec<String>,
    pub positions: Vec<Vec2>,
    pub iteration: usize,
    pub converged: bool,
    /// Total force magnitude at each force evaluation.
    pub energy_trace: Vec<f64>,
}

impl LayoutState {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Axis-aligned bounding box as `([t_min, u_min], [t_max, u_max])`.
    pub fn bounds(&self) -> Option<(Vec2, Vec2)> {
        bounding_box(&self.positions)
    }
}

pub(crate) fn bounding_box(points: &[Vec2]) -> Option<(Vec2, Vec2)> {
    let first = *points.first()?;
    Some(points.iter().fold((first, first), |(lo, hi), p| {
        ([lo[0].min(p[0]), lo[1].min(p[1])], [hi[0].max(p[0]), hi[1].max(p[1])])
    }))
}

fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn length(v: Vec2) -> f64 {
    v[0].hypot(v[1])
}

/// Attraction on the node at `p1` from its neighbor at `p2`.
///
/// The magnitude equals the distance and the force points toward `p2`, so
/// the vector is simply `p2 - p1` (zero for coincident points).
pub fn attraction_force(p1: Vec2, p2: Vec2) -> Vec2 {
    sub(p2, p1)
}

/// Repulsion on the node at `p1` from the node at `p2`.
///
/// For coincident points the distance is floored at [`MIN_DISTANCE`] and the
/// direction is drawn from `rng`.
pub fn repulsion_force<R: Rng + ?Sized>(p1: Vec2, p2: Vec2, deg1: usize, deg2: usize, k_r: f64, rng: &mut R) -> Vec2 {
    repulsion_with(p1, p2, deg1, deg2, k_r, || random_direction(rng))
}

fn repulsion_with(p1: Vec2, p2: Vec2, deg1: usize, deg2: usize, k_r: f64, coincident: impl FnOnce() -> Vec2) -> Vec2 {
    let delta = sub(p1, p2);
    let d = length(delta);
    let charge = k_r * (deg1 as f64 + 1.0) * (deg2 as f64 + 1.0);
    if d < MIN_DISTANCE {
        let dir = coincident();
        let magnitude = charge / MIN_DISTANCE;
        return [dir[0] * magnitude, dir[1] * magnitude];
    }
    let scale = charge / (d * d);
    [delta[0] * scale, delta[1] * scale]
}

fn random_direction<R: Rng + ?Sized>(rng: &mut R) -> Vec2 {
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    [angle.cos(), angle.sin()]
}

/// Uniform placement in `[-1, 1]²`.
pub fn initial_positions(n: usize, seed: u64) -> Vec<Vec2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)])
        .collect()
}

// Direction for coincident pair (lo, hi) at a given iteration; the node with
// the higher index receives the opposite vector.
fn pair_direction(seed: u64, iteration: usize, lo: usize, hi: usize) -> Vec2 {
    let mix = seed
        ^ (iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (lo as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ (hi as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
    random_direction(&mut ChaCha8Rng::seed_from_u64(mix))
}

struct Edges {
    // Per node: (neighbor, attraction scale).
    adjacency: Vec<Vec<(usize, f64)>>,
    degrees: Vec<usize>,
}

impl Edges {
    fn new(graph: &SimilarityGraph, sim_floor: f64) -> Self {
        let adjacency = (0..graph.n_nodes())
            .map(|i| {
                graph
                    .neighbors(i)
                    .iter()
                    .filter_map(|&(j, sim)| similarity_to_distance(sim, sim_floor).ok().map(|d| (j, 1.0 / d)))
                    .collect()
            })
            .collect();
        Self {
            adjacency,
            degrees: graph.degrees(),
        }
    }
}

fn net_forces(positions: &[Vec2], edges: &Edges, k_r: f64, seed: u64, iteration: usize) -> Vec<Vec2> {
    (0..positions.len())
        .into_par_iter()
        .map(|i| {
            let p = positions[i];
            let mut f = [0.0, 0.0];
            for (j, &q) in positions.iter().enumerate() {
                if j == i {
                    continue;
                }
                let r = repulsion_with(p, q, edges.degrees[i], edges.degrees[j], k_r, || {
                    let dir = pair_direction(seed, iteration, i.min(j), i.max(j));
                    if i < j {
                        dir
                    } else {
                        [-dir[0], -dir[1]]
                    }
                });
                f[0] += r[0];
                f[1] += r[1];
            }
            for &(j, scale) in &edges.adjacency[i] {
                let a = attraction_force(p, positions[j]);
                f[0] += scale * a[0];
                f[1] += scale * a[1];
            }
            f
        })
        .collect()
}

/// Runs the force simulation from the seeded initial placement.
pub fn run_layout(graph: &SimilarityGraph, config: &LayoutConfig) -> Result<LayoutState> {
    config.validate()?;
    if graph.n_nodes() == 0 {
        return Err(Error::Argument("cannot lay out an empty graph".to_owned()));
    }
    let edges = Edges::new(graph, config.sim_floor);
    let mut positions = initial_positions(graph.n_nodes(), config.seed);
    let masses: Vec<f64> = edges.degrees.iter().map(|&d| (d + 1) as f64).collect();
    let mut previous = vec![[0.0, 0.0]; positions.len()];
    let mut control = SpeedControl::new(config.initial_step);
    let mut energy_trace = Vec::new();
    let mut iteration = 0;
    let mut converged = false;

    while iteration < config.max_iterations {
        let forces = net_forces(&positions, &edges, config.k_r, config.seed, iteration);
        energy_trace.push(forces.iter().map(|&f| length(f)).sum());

        let swings: Vec<f64> = forces
            .iter()
            .zip(&previous)
            .zip(&masses)
            .map(|((f, g), m)| m * length([f[0] - g[0], f[1] - g[1]]))
            .collect();
        let traction: f64 = forces
            .iter()
            .zip(&previous)
            .zip(&masses)
            .map(|((f, g), m)| m * 0.5 * length([f[0] + g[0], f[1] + g[1]]))
            .sum();
        let speed = control.update(swings.iter().sum(), traction, positions.len());

        let displacements: Vec<Vec2> = forces
            .iter()
            .zip(&swings)
            .map(|(&f, &swing)| {
                let factor = speed / (1.0 + (speed * swing).sqrt());
                [f[0] * factor, f[1] * factor]
            })
            .collect();
        let mean_displacement = displacements.iter().map(|&d| length(d)).sum::<f64>() / positions.len() as f64;
        if mean_displacement < config.convergence_tolerance {
            converged = true;
            break;
        }
        for (p, d) in positions.iter_mut().zip(&displacements) {
            p[0] += d[0];
            p[1] += d[1];
        }
        previous = forces;
        iteration += 1;
    }

    Ok(LayoutState {
        node_ids: graph.node_ids().to_vec(),
        positions,
        iteration,
        converged,
        energy_trace,
    })
}

/// Writes `node_id,t,u` rows with round-trip float formatting.
pub fn export_layout(state: &LayoutState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_layout_to(state, &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// Writes the layout rows of [`export_layout`] to any writer.
pub fn write_layout_to<W: Write>(state: &LayoutState, out: &mut W) -> std::io::Result<()> {
    writeln!(out, "node_id,t,u")?;
    for (id, p) in state.node_ids.iter().zip(&state.positions) {
        writeln!(out, "{},{},{}", id, p[0], p[1])?;
    }
    Ok(())
}

/// Reads a file written by [`export_layout`]. Iteration metadata is not
/// stored in the file, so the returned state reports zero iterations.
pub fn import_layout(path: impl AsRef<Path>) -> Result<LayoutState> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut node_ids = Vec::new();
    let mut positions = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if k == 0 || line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_owned(),
            line: k + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, found {}", fields.len())));
        }
        let coord = |s: &str| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(format!("bad coordinate '{s}'")))
        };
        positions.push([coord(fields[1])?, coord(fields[2])?]);
        node_ids.push(fields[0].to_owned());
    }
    Ok(LayoutState {
        node_ids,
        positions,
        iteration: 0,
        converged: false,
        energy_trace: Vec::new(),
    })
}

/// Writes `iteration,energy` rows.
pub fn export_energy_trace(state: &LayoutState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "iteration,energy")?;
        for (k, e) in state.energy_trace.iter().enumerate() {
            writeln!(out, "{k},{e}")?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}
