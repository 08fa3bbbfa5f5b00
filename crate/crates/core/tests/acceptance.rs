//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any fails.

use std::f64::consts::PI;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};

use kernelcf_core::bandwidth::{
    bandwidth_1d, bandwidth_1d_from_functionals, bandwidth_2d, default_pilot_bandwidth, plug_in_bandwidth_2d,
    FunctionalSet, Functionals1d, PlugInConfig,
};
use kernelcf_core::kernels::{Kde2d, Kernel, Sample1d, Sample2d};
use kernelcf_core::layout::{attraction_force, repulsion_force, run_layout, LayoutConfig, LayoutState};
use kernelcf_core::pipeline::NeighborWeighting;
use kernelcf_core::quadrature::{midpoint_2d, Region};
use kernelcf_core::ratings::{split, RatingsMatrix};
use kernelcf_core::similarity::{GraphMode, SimilarityGraph};
use kernelcf_core::synthetic::{planted_cliques, two_clique_ratings, LatentClusters};
use kernelcf_core::{evaluate, CfModel, Config, EvalReport, Method};

const SEED: u64 = 7;

const EQUIVALENCE_TOL: f64 = 1e-9;
const EQUIVALENCE_BUDGET: Duration = Duration::from_secs(10);
const FORCE_TOL: f64 = 1e-12;
const FORCE_CASES: usize = 1000;
const EQUILIBRIUM_REL_TOL: f64 = 0.10;
const SEPARATION_RATIO: f64 = 2.0;
const CLIQUE_BUDGET: Duration = Duration::from_secs(5);
const KDE_MASS_TOL: f64 = 0.02;
const CONSTANT_TOL: f64 = 1e-8;
const PLUG_IN_FACTOR: f64 = 3.0;
const PLUG_IN_2D_BUDGET: Duration = Duration::from_secs(60);
const SCALING_TOL: f64 = 1e-9;
const EVALUATE_BUDGET: Duration = Duration::from_secs(60);
const MAX_FALLBACK_RATE: f64 = 0.5;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64)).collect()
}

fn epanechnikov(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.75 * (1.0 - x * x)
    } else {
        0.0
    }
}

fn within_factor(estimate: f64, reference: f64, factor: f64) -> bool {
    estimate / reference <= factor && reference / estimate <= factor
}

/// Dense cosine over full profiles, missing ratings as zero.
fn dense_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Brute-force user-based CF: similarity-weighted mean over every other user
/// with positive cosine who rated the item, falling back to the item mean and
/// then the global mean.
fn classic_user_cf_oracle(m: &RatingsMatrix) -> Vec<Vec<f64>> {
    let (nu, ni) = (m.n_users(), m.n_items());
    let mut dense = vec![vec![0.0; ni]; nu];
    let mut rated = vec![vec![false; ni]; nu];
    for (u, i, r) in m.entries() {
        dense[u][i] = r;
        rated[u][i] = true;
    }
    let all: Vec<f64> = m.entries().map(|(_, _, r)| r).collect();
    let global = all.iter().sum::<f64>() / all.len() as f64;
    let sim: Vec<Vec<f64>> = (0..nu)
        .map(|a| (0..nu).map(|b| dense_cosine(&dense[a], &dense[b])).collect())
        .collect();
    (0..nu)
        .map(|u| {
            (0..ni)
                .map(|i| {
                    let (mut num, mut den) = (0.0, 0.0);
                    for k in (0..nu).filter(|&k| k != u && sim[u][k] > 0.0 && rated[k][i]) {
                        num += sim[u][k] * dense[k][i];
                        den += sim[u][k];
                    }
                    if den > 0.0 {
                        return num / den;
                    }
                    let col: Vec<f64> = (0..nu).filter(|&k| rated[k][i]).map(|k| dense[k][i]).collect();
                    if col.is_empty() {
                        global
                    } else {
                        col.iter().sum::<f64>() / col.len() as f64
                    }
                })
                .collect()
        })
        .collect()
}

fn nw_cf_equivalence() -> Outcome {
    let start = Instant::now();
    let m = LatentClusters::fifty_by_hundred(SEED).generate();
    let config = Config {
        layout: LayoutConfig { seed: SEED, ..LayoutConfig::default() },
        ..Config::default()
    };
    let model = CfModel::fit(&m, Method::KernelCf, &config)
        .and_then(|model| model.with_weighting(NeighborWeighting::Similarity))
        .map_err(|e| e.to_string())?;
    let oracle = classic_user_cf_oracle(&m);
    let mut worst: f64 = 0.0;
    for (u, user) in m.users().iter().enumerate() {
        for (i, item) in m.items().iter().enumerate() {
            let p = model.predict(user, item).map_err(|e| e.to_string())?;
            let score = p.score.ok_or_else(|| format!("no score for ({user}, {item})"))?;
            worst = worst.max((score - oracle[u][i]).abs());
        }
    }
    let elapsed = start.elapsed();
    check(
        worst <= EQUIVALENCE_TOL && elapsed < EQUIVALENCE_BUDGET,
        format!(
            "{} pairs, max |kernel-cf - classic| = {worst:.2e} (tol {EQUIVALENCE_TOL:e}), {elapsed:.2?}",
            m.n_users() * m.n_items()
        ),
    )
}

fn force_laws() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    for _ in 0..FORCE_CASES {
        let p1 = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
        let p2 = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
        let (deg1, deg2) = (rng.random_range(0..50usize), rng.random_range(0..50usize));
        let k_r = rng.random_range(0.1..100.0);
        let d = dist(p1, p2);
        let (ct, st) = ((p2[0] - p1[0]) / d, (p2[1] - p1[1]) / d);

        // Attraction: magnitude d toward p2.
        let fa = attraction_force(p1, p2);
        let expected_a = [d * ct, d * st];
        // Repulsion: magnitude k_r (deg1+1)(deg2+1) / d away from p2.
        let magnitude = k_r * (deg1 + 1) as f64 * (deg2 + 1) as f64 / d;
        let fr = repulsion_force(p1, p2, deg1, deg2, k_r, &mut rng);
        let expected_r = [-magnitude * ct, -magnitude * st];

        for (got, want) in [(fa, expected_a), (fr, expected_r)] {
            for c in 0..2 {
                let scale = want[c].abs().max(1.0);
                worst = worst.max((got[c] - want[c]).abs() / scale);
            }
        }
    }
    check(
        worst <= FORCE_TOL,
        format!("{FORCE_CASES} configurations, max scaled error {worst:.2e} (tol {FORCE_TOL:e})"),
    )
}

fn two_node_equilibrium() -> Outcome {
    let graph = SimilarityGraph::from_edges(GraphMode::User, vec!["a".into(), "b".into()], [(0, 1, 1.0)])
        .map_err(|e| e.to_string())?;
    let mut details = Vec::new();
    let mut ok = true;
    for k_r in [1.0, 10.0, 100.0] {
        let config = LayoutConfig {
            k_r,
            seed: SEED,
            max_iterations: 10_000,
            ..LayoutConfig::default()
        };
        let state = run_layout(&graph, &config).map_err(|e| e.to_string())?;
        let d = dist(state.positions[0], state.positions[1]);
        let target = (k_r * 2.0 * 2.0_f64).sqrt();
        let rel = (d - target).abs() / target;
        ok &= state.converged && rel <= EQUILIBRIUM_REL_TOL;
        details.push(format!(
            "k_r={k_r}: d={d:.4} vs {target:.4} ({:.2}%, converged {})",
            100.0 * rel, state.converged
        ));
    }
    check(ok, details.join("; "))
}

fn separation(state: &LayoutState, size: usize) -> f64 {
    let centroid = |offset: usize| {
        let pts = &state.positions[offset..offset + size];
        let n = size as f64;
        [pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n]
    };
    let inter = dist(centroid(0), centroid(size));
    let (mut intra, mut pairs) = (0.0, 0);
    for offset in [0, size] {
        for a in 0..size {
            for b in a + 1..size {
                intra += dist(state.positions[offset + a], state.positions[offset + b]);
                pairs += 1;
            }
        }
    }
    inter / (intra / pairs as f64)
}

fn planted_clusters() -> Outcome {
    let graph = planted_cliques(10);
    let start = Instant::now();
    let mut ratios = Vec::new();
    for seed in 0..5 {
        let config = LayoutConfig { seed, ..LayoutConfig::default() };
        let state = run_layout(&graph, &config).map_err(|e| e.to_string())?;
        ratios.push(separation(&state, 10));
    }
    let elapsed = start.elapsed();
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    check(
        min > SEPARATION_RATIO && elapsed < CLIQUE_BUDGET,
        format!("inter/intra ratios [{}] (need > {SEPARATION_RATIO}), {elapsed:.2?}", shown.join(", ")),
    )
}

fn kde_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let points: Vec<[f64; 2]> = (0..500)
        .map(|_| [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
        .collect();
    let kde = Kde2d::with_reference_rule(points).map_err(|e| e.to_string())?;
    let mass = midpoint_2d(|p| kde.density(p), &Region::new((-6.0, 6.0), (-6.0, 6.0)), 240);
    check(
        (mass - 1.0).abs() <= KDE_MASS_TOL,
        format!("mass over [-6,6]^2 = {mass:.5} (1 ± {KDE_MASS_TOL})"),
    )
}

fn kernel_constants() -> Outcome {
    let expected = [
        (Kernel::Epanechnikov, 3.0 / 5.0, 1.0 / 5.0),
        (Kernel::Uniform, 1.0 / 2.0, 1.0 / 3.0),
        (Kernel::Gaussian, 1.0 / (2.0 * PI.sqrt()), 1.0),
    ];
    let mut worst: f64 = 0.0;
    for (kernel, roughness, moment) in expected {
        let c = kernel.constants();
        worst = worst.max((c.roughness - roughness).abs()).max((c.second_moment - moment).abs());
    }
    check(worst <= CONSTANT_TOL, format!("max deviation {worst:.2e} (tol {CONSTANT_TOL:e})"))
}

fn sine_cosine_sample(seed: u64) -> (Sample2d, impl Fn([f64; 2]) -> f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = Uniform::new(0.0, PI).expect("valid range");
    let noise = Normal::new(0.0, 0.2).expect("valid sd");
    let truth = |p: [f64; 2]| p[0].sin() * p[1].cos();
    let points: Vec<[f64; 2]> = (0..500).map(|_| [uniform.sample(&mut rng), uniform.sample(&mut rng)]).collect();
    let y = points.iter().map(|&p| truth(p) + noise.sample(&mut rng)).collect();
    (Sample2d::new(points, y).expect("finite sample"), truth)
}

/// Empirical integrated squared error of a direct product-Epanechnikov NW fit
/// with equal bandwidths, on a 30×30 midpoint grid over [0,π]². Empty windows
/// predict the sample mean.
fn empirical_mise(sample: &Sample2d, truth: &impl Fn([f64; 2]) -> f64, h: f64) -> f64 {
    const G: usize = 30;
    let mean = sample.y().iter().sum::<f64>() / sample.len() as f64;
    let mut total = 0.0;
    for a in 0..G {
        for b in 0..G {
            let q = [(a as f64 + 0.5) * PI / G as f64, (b as f64 + 0.5) * PI / G as f64];
            let (mut num, mut den) = (0.0, 0.0);
            for (p, &y) in sample.points().iter().zip(sample.y()) {
                let w = epanechnikov((p[0] - q[0]) / h) * epanechnikov((p[1] - q[1]) / h);
                num += w * y;
                den += w;
            }
            let estimate = if den > 0.0 { num / den } else { mean };
            total += (estimate - truth(q)).powi(2);
        }
    }
    total / (G * G) as f64
}

fn plug_in_2d() -> Outcome {
    let start = Instant::now();
    let (sample, truth) = sine_cosine_sample(SEED);
    let b = plug_in_bandwidth_2d(&sample, Kernel::Epanechnikov, &PlugInConfig::default());
    let best = log_grid(0.05, 3.0, 30)
        .into_iter()
        .map(|h| (empirical_mise(&sample, &truth, h), h))
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .expect("nonempty grid")
        .1;
    let elapsed = start.elapsed();
    let ok = !b.is_fallback()
        && within_factor(b.b_t, best, PLUG_IN_FACTOR)
        && within_factor(b.b_u, best, PLUG_IN_FACTOR)
        && elapsed < PLUG_IN_2D_BUDGET;
    check(
        ok,
        format!(
            "b_t={:.4} b_u={:.4} (fallback {}) vs MISE minimizer {best:.4}, ratios {:.2}/{:.2} (within {PLUG_IN_FACTOR}x), {elapsed:.2?}",
            b.b_t,
            b.b_u,
            b.is_fallback(),
            b.b_t / best,
            b.b_u / best
        ),
    )
}

fn parabola_sample(seed: u64) -> Sample1d {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = Uniform::new(0.0, 1.0).expect("valid range");
    let noise = Normal::new(0.0, 0.1).expect("valid sd");
    let x: Vec<f64> = (0..300).map(|_| uniform.sample(&mut rng)).collect();
    let y = x.iter().map(|v| v * v + noise.sample(&mut rng)).collect();
    Sample1d::new(x, y).expect("finite sample")
}

/// Leave-one-out CV minimizer over 30 log-spaced bandwidths in [0.01, 1] for
/// an Epanechnikov NW fit; points with an empty window count as infinite error.
fn loo_cv_minimizer(sample: &Sample1d) -> f64 {
    let (x, y) = (sample.x(), sample.y());
    let score = |h: f64| {
        let mut cv = 0.0;
        for i in 0..x.len() {
            let (mut num, mut den) = (0.0, 0.0);
            for j in (0..x.len()).filter(|&j| j != i) {
                let w = epanechnikov((x[i] - x[j]) / h);
                num += w * y[j];
                den += w;
            }
            cv += if den > 0.0 { (y[i] - num / den).powi(2) } else { f64::INFINITY };
        }
        cv
    };
    log_grid(0.01, 1.0, 30)
        .into_iter()
        .map(|h| (score(h), h))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("nonempty grid")
        .1
}

fn plug_in_1d_for(seed: u64) -> Result<(f64, f64, bool), String> {
    let sample = parabola_sample(seed);
    let pilot = default_pilot_bandwidth(sample.x()).map_err(|e| e.to_string())?;
    let b = bandwidth_1d(&sample, &Kernel::Epanechnikov.constants(), pilot).map_err(|e| e.to_string())?;
    Ok((b.h, loo_cv_minimizer(&sample), b.is_fallback()))
}

fn plug_in_1d() -> Outcome {
    let (h, best, fallback) = plug_in_1d_for(SEED)?;
    let spread: Vec<String> = (0..5)
        .map(|seed| match plug_in_1d_for(seed) {
            Ok((h, cv, _)) => format!("seed {seed} {:.2}", h / cv),
            Err(e) => format!("seed {seed} error {e}"),
        })
        .collect();
    check(
        !fallback && within_factor(h, best, PLUG_IN_FACTOR),
        format!(
            "h={h:.4} vs LOO-CV minimizer {best:.4}, ratio {:.2} (within {PLUG_IN_FACTOR}x); other seeds, for information: {}",
            h / best,
            spread.join(", ")
        ),
    )
}

fn scaling_laws() -> Outcome {
    let frozen = FunctionalSet {
        i_tt: 2.3,
        i_uu: 0.7,
        i_tu: 0.4,
        i_f: 9.5,
        region: Region::new((0.0, 3.0), (0.0, 3.0)),
    };
    let constants = Kernel::Epanechnikov.constants();
    let frozen_1d = Functionals1d {
        curvature: 4.0,
        inverse_density: 1.2,
        range: (0.0, 1.0),
    };
    let mut worst: f64 = 0.0;
    for (n1, n2) in [(100usize, 200usize), (500, 4000), (37, 1_000_000)] {
        let ratio = n2 as f64 / n1 as f64;
        let (a, b) = (bandwidth_2d(&frozen, 0.04, &constants, n1), bandwidth_2d(&frozen, 0.04, &constants, n2));
        if a.is_fallback() || b.is_fallback() {
            return Err("frozen two-dimensional functionals fell back".to_owned());
        }
        let want = ratio.powf(-1.0 / 6.0);
        worst = worst.max((b.b_t / a.b_t - want).abs()).max((b.b_u / a.b_u - want).abs());
        let (a, b) = (
            bandwidth_1d_from_functionals(&frozen_1d, 0.01, &constants, n1),
            bandwidth_1d_from_functionals(&frozen_1d, 0.01, &constants, n2),
        );
        if a.is_fallback() || b.is_fallback() {
            return Err("frozen one-dimensional functionals fell back".to_owned());
        }
        worst = worst.max((b.h / a.h - ratio.powf(-0.2)).abs());
    }
    check(
        worst <= SCALING_TOL,
        format!("max ratio deviation from n^-1/6 and n^-1/5 = {worst:.2e} (tol {SCALING_TOL:e})"),
    )
}

fn thousand_rating_report() -> Result<(EvalReport, String, Duration), String> {
    let m = LatentClusters::thousand(SEED).generate();
    let config = Config {
        layout: LayoutConfig { seed: SEED, ..LayoutConfig::default() },
        ..Config::default()
    };
    let start = Instant::now();
    let s = split(&m, config.holdout, SEED).map_err(|e| e.to_string())?;
    let report = evaluate(&s, Method::KernelCf, &config).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let text = report.to_key_value();
    Ok((report, text, elapsed))
}

fn end_to_end(first: &(EvalReport, String, Duration)) -> Outcome {
    let (report, text, elapsed) = first;
    let (_, again, _) = thousand_rating_report()?;
    let rmse = |method: Method| {
        report
            .breakdown
            .iter()
            .find(|m| m.method == method)
            .and_then(|m| m.rmse)
    };
    let methods = [Method::ClassicUser, Method::ClassicItem, Method::KernelCf];
    let all_present = methods.iter().all(|&m| rmse(m).is_some())
        && methods.iter().all(|m| text.contains(&format!("{m}.rmse=")));
    let shown: Vec<String> = methods
        .iter()
        .map(|&m| format!("{m} {}", rmse(m).map_or("none".to_owned(), |r| format!("{r:.4}"))))
        .collect();
    check(
        *text == again && all_present && *elapsed < EVALUATE_BUDGET,
        format!(
            "byte-identical {}, RMSE {}, {elapsed:.2?}",
            *text == again,
            shown.join(" / ")
        ),
    )
}

fn convexity_and_fallbacks(first: &(EvalReport, String, Duration)) -> Outcome {
    let config = Config {
        layout: LayoutConfig { seed: SEED, ..LayoutConfig::default() },
        ..Config::default()
    };
    let fixtures = [
        ("two-clique", two_clique_ratings()),
        ("1000-rating", LatentClusters::thousand(SEED).generate()),
        ("50x100", LatentClusters::fifty_by_hundred(SEED).generate()),
    ];
    let (mut checked, mut escaped) = (0usize, 0usize);
    for (name, m) in &fixtures {
        let (lo, hi) = m.value_range().ok_or_else(|| format!("{name} is empty"))?;
        for method in Method::ALL {
            let model = CfModel::fit(m, method, &config).map_err(|e| format!("{name} {method}: {e}"))?;
            for user in m.users() {
                for item in m.items() {
                    let p = model.predict(user, item).map_err(|e| e.to_string())?;
                    if let (Some(s), false) = (p.score, p.is_fallback()) {
                        checked += 1;
                        if !(lo..=hi).contains(&s) {
                            escaped += 1;
                        }
                    }
                }
            }
        }
    }
    let fallback_rate = first
        .0
        .breakdown
        .iter()
        .find(|m| m.method == Method::KernelCf)
        .map(|m| m.fallback_rate)
        .ok_or("kernel-cf missing from report")?;
    check(
        escaped == 0 && fallback_rate < MAX_FALLBACK_RATE,
        format!(
            "{escaped} of {checked} non-fallback predictions outside the observed range; kernel-cf fallback_rate {fallback_rate:.3} (need < {MAX_FALLBACK_RATE})"
        ),
    )
}

fn run(number: usize, name: &str, criterion: impl FnOnce() -> Outcome) -> bool {
    let outcome = panic::catch_unwind(AssertUnwindSafe(criterion))
        .unwrap_or_else(|e| Err(format!("panicked: {}", panic_message(&e))));
    let (status, detail, ok) = match outcome {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("criterion {number:>2} {status}  {name}: {detail}");
    ok
}

fn panic_message(e: &Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| (*s).to_owned()))
        .unwrap_or_else(|| "unknown panic".to_owned())
}

fn main() -> ExitCode {
    let report = thousand_rating_report();
    let with_report = |f: fn(&(EvalReport, String, Duration)) -> Outcome| {
        let report = &report;
        move || match report {
            Ok(r) => f(r),
            Err(e) => Err(format!("evaluate failed: {e}")),
        }
    };
    let results = [
        run(1, "NW/CF equivalence", nw_cf_equivalence),
        run(2, "force laws", force_laws),
        run(3, "two-node equilibrium", two_node_equilibrium),
        run(4, "planted clusters", planted_clusters),
        run(5, "KDE normalization", kde_normalization),
        run(6, "kernel constants", kernel_constants),
        run(7, "2-D plug-in vs MISE", plug_in_2d),
        run(8, "1-D plug-in vs LOO-CV", plug_in_1d),
        run(9, "bandwidth scaling laws", scaling_laws),
        run(10, "end-to-end determinism and budget", with_report(end_to_end)),
        run(11, "convexity and fallback accounting", with_report(convexity_and_fallbacks)),
    ];
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
