//! Plug-in bandwidth selection for Nadaraya-Watson smoothing.
//!
//! In two dimensions the curvature of the regression surface is taken from
//! a global least-squares polynomial fit and the design density from a
//! reference-rule Gaussian KDE. The weighted
//! functionals are integrated by the midpoint rule over the central quantile
//! box of the design points and plugged into
//!
//! ```text
//! b_t = (σ² R(K)² I_uu^{3/4} I_f / (μ₂(K)² I_tt^{3/4} (√(I_tt I_uu) + I_tu) n))^{1/6}
//! b_u = (I_tt / I_uu)^{1/4} b_t
//! ```
//!
//! The one-dimensional rule uses a pilot Nadaraya-Watson fit for `r'` and
//! `r''` and evaluates
//!
//! ```text
//! h = n^{-1/5} (σ² R(K) ∫1/f / ((∫x²K²)² ∫(r'' + 2 r' f'/f)²))^{1/5}
//! ```
//!
//! Whenever a formula degenerates (vanishing curvature, a nonpositive
//! denominator, zero noise) a scale-based fallback is returned and flagged.

use std::fmt::{self, Write as _};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{nw_estimate_1d, Kde1d, Kde2d, Kernel, KernelConstants, Sample1d, Sample2d};
use crate::layout::{bounding_box, Vec2};
use crate::quadrature::{midpoint_2d, Region};

/// Curvature functionals below this are treated as zero.
pub const DEGENERATE_FUNCTIONAL: f64 = 1e-12;

/// Density values are floored at this fraction of their maximum before
/// inversion.
pub const DENSITY_FLOOR_RATIO: f64 = 1e-3;

/// Relative size below which the cross factor counts as cancelled.
const CANCELLATION: f64 = 1e-9;

/// Global quadratic `a₀ + a₁t + a₂u + a₃t² + a₄tu + a₅u²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceFit {
    pub coefficients: [f64; 6],
    /// `RSS / (n − 6)`; zero for an exactly determined fit.
    pub residual_variance: f64,
}

impl SurfaceFit {
    pub fn eval(&self, p: Vec2) -> f64 {
        let a = &self.coefficients;
        let (t, u) = (p[0], p[1]);
        a[0] + a[1] * t + a[2] * u + a[3] * t * t + a[4] * t * u + a[5] * u * u
    }

    /// `∂²r/∂t²`.
    pub fn d2_t(&self) -> f64 {
        2.0 * self.coefficients[3]
    }

    /// `∂²r/∂u²`.
    pub fn d2_u(&self) -> f64 {
        2.0 * self.coefficients[5]
    }
}

/// Second partial derivatives of a fitted regression surface.
pub trait Curvature {
    /// `∂²r/∂t²` at `p`.
    fn d2_t_at(&self, p: Vec2) -> f64;
    /// `∂²r/∂u²` at `p`.
    fn d2_u_at(&self, p: Vec2) -> f64;
}

impl Curvature for SurfaceFit {
    fn d2_t_at(&self, _: Vec2) -> f64 {
        self.d2_t()
    }

    fn d2_u_at(&self, _: Vec2) -> f64 {
        self.d2_u()
    }
}

fn standardize(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let sd = (values.map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    (mean, if sd > 0.0 { sd } else { 1.0 })
}

/// Exponents `(i, j)` of `tⁱuʲ` in graded order: 1, t, u, t², tu, u², t³, ...
fn monomials(degree: u32) -> Vec<(u32, u32)> {
    (0..=degree).flat_map(|k| (0..=k).map(move |j| (k - j, j))).collect()
}

fn monomial_name((i, j): (u32, u32)) -> String {
    let power = |var: &str, e: u32| match e {
        0 => None,
        1 => Some(var.to_owned()),
        e => Some(format!("{var}^{e}")),
    };
    let parts: Vec<String> = [power("t", i), power("u", j)].into_iter().flatten().collect();
    if parts.is_empty() {
        "1".to_owned()
    } else {
        parts.join("*")
    }
}

fn powi(x: f64, e: i64) -> f64 {
    if e < 0 {
        0.0
    } else {
        x.powi(e as i32)
    }
}

/// Global polynomial surface of total degree `degree`, fitted by ordinary
/// least squares in standardized coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialSurface {
    degree: u32,
    exponents: Vec<(u32, u32)>,
    // Coefficients in the standardized basis t' = (t − mean_t)/scale_t.
    coefficients: Vec<f64>,
    mean: Vec2,
    scale: Vec2,
    residual_variance: f64,
}

impl PolynomialSurface {
    pub fn fit(sample: &Sample2d, degree: u32) -> Result<Self> {
        let exponents = monomials(degree);
        let p = exponents.len();
        let n = sample.len();
        if n < p {
            return Err(Error::InsufficientData { needed: p, got: n });
        }
        let pts = sample.points();
        let (mt, st) = standardize(pts.iter().map(|q| q[0]));
        let (mu, su) = standardize(pts.iter().map(|q| q[1]));
        let design = DMatrix::from_fn(n, p, |r, c| {
            let t = (pts[r][0] - mt) / st;
            let u = (pts[r][1] - mu) / su;
            let (i, j) = exponents[c];
            t.powi(i as i32) * u.powi(j as i32)
        });
        let y = DVector::from_column_slice(sample.y());

        let svd = design.clone().svd(true, true);
        let sv = &svd.singular_values;
        let (min_idx, min_sv) = sv.argmin();
        if !(min_sv > 1e-10 * sv.max()) {
            let v_t = svd.v_t.as_ref().expect("requested V^T");
            let direction: Vec<String> = exponents
                .iter()
                .zip(v_t.row(min_idx).iter())
                .filter(|(_, c)| c.abs() > 0.1)
                .map(|(&e, _)| monomial_name(e))
                .collect();
            return Err(Error::RankDeficient {
                direction: direction.join(" + "),
            });
        }
        let b = svd
            .solve(&y, 0.0)
            .map_err(|e| Error::Argument(format!("least squares solve failed: {e}")))?;
        let rss = (&design * &b - &y).norm_squared();
        let residual_variance = if n > p { rss / (n - p) as f64 } else { 0.0 };
        Ok(Self {
            degree,
            exponents,
            coefficients: b.iter().copied().collect(),
            mean: [mt, mu],
            scale: [st, su],
            residual_variance,
        })
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    /// `RSS / (n − p)` with `p` coefficients; zero for an exact fit.
    pub fn residual_variance(&self) -> f64 {
        self.residual_variance
    }

    fn standardized(&self, p: Vec2) -> Vec2 {
        [(p[0] - self.mean[0]) / self.scale[0], (p[1] - self.mean[1]) / self.scale[1]]
    }

    /// Mixed partial `∂^{dt+du} r / ∂t^{dt} ∂u^{du}` at `p`.
    pub fn derivative(&self, p: Vec2, dt: u32, du: u32) -> f64 {
        let [t, u] = self.standardized(p);
        let falling = |e: u32, d: u32| (0..d).map(|k| e as f64 - k as f64).product::<f64>();
        let sum: f64 = self
            .exponents
            .iter()
            .zip(&self.coefficients)
            .filter(|(&(i, j), _)| i >= dt && j >= du)
            .map(|(&(i, j), c)| {
                c * falling(i, dt) * falling(j, du) * powi(t, i as i64 - dt as i64) * powi(u, j as i64 - du as i64)
            })
            .sum();
        sum / (self.scale[0].powi(dt as i32) * self.scale[1].powi(du as i32))
    }

    pub fn eval(&self, p: Vec2) -> f64 {
        self.derivative(p, 0, 0)
    }

    /// Coefficients of a degree-2 fit in original coordinates.
    fn to_quadratic(&self) -> Option<SurfaceFit> {
        if self.degree != 2 {
            return None;
        }
        let b = &self.coefficients;
        let ([mt, mu], [st, su]) = (self.mean, self.scale);
        let a3 = b[3] / (st * st);
        let a4 = b[4] / (st * su);
        let a5 = b[5] / (su * su);
        let a1 = b[1] / st - 2.0 * a3 * mt - a4 * mu;
        let a2 = b[2] / su - 2.0 * a5 * mu - a4 * mt;
        let a0 = b[0] - b[1] * mt / st - b[2] * mu / su + a3 * mt * mt + a4 * mt * mu + a5 * mu * mu;
        Some(SurfaceFit {
            coefficients: [a0, a1, a2, a3, a4, a5],
            residual_variance: self.residual_variance,
        })
    }
}

impl Curvature for PolynomialSurface {
    fn d2_t_at(&self, p: Vec2) -> f64 {
        self.derivative(p, 2, 0)
    }

    fn d2_u_at(&self, p: Vec2) -> f64 {
        self.derivative(p, 0, 2)
    }
}

/// Ordinary least-squares quadratic surface through the sample.
pub fn fit_quadratic_surface(sample: &Sample2d) -> Result<SurfaceFit> {
    let fit = PolynomialSurface::fit(sample, 2)?;
    Ok(fit.to_quadratic().expect("degree 2"))
}

/// Rice first-difference noise variance over the sample sorted by `x`.
pub fn estimate_sigma2_1d(sample: &Sample1d) -> Result<f64> {
    let n = sample.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sample.x()[a].total_cmp(&sample.x()[b]));
    let y = sample.y();
    let ss: f64 = order.windows(2).map(|w| (y[w[1]] - y[w[0]]).powi(2)).sum();
    Ok(ss / (2.0 * (n - 1) as f64))
}

/// Residual variance of the quadratic surface fit.
pub fn estimate_sigma2_2d(sample: &Sample2d) -> Result<f64> {
    if sample.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: sample.len() });
    }
    Ok(fit_quadratic_surface(sample)?.residual_variance)
}

/// Weighted integrals of the squared curvature and inverse design density.
///
/// The weight is the indicator of `region`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunctionalSet {
    pub i_tt: f64,
    pub i_uu: f64,
    pub i_tu: f64,
    pub i_f: f64,
    pub region: Region,
}

impl FunctionalSet {
    pub fn swap_axes(&self) -> Self {
        Self {
            i_tt: self.i_uu,
            i_uu: self.i_tt,
            i_tu: self.i_tu,
            i_f: self.i_f,
            region: Region::new(self.region.u, self.region.t),
        }
    }
}

/// Central box holding `coverage` of the points along each axis.
pub fn trimmed_region(points: &[Vec2], coverage: f64) -> Result<Region> {
    if points.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(Error::Argument(format!("coverage must lie in (0, 1], got {coverage}")));
    }
    let tail = 0.5 * (1.0 - coverage);
    let axis = |a: usize| {
        let mut v: Vec<f64> = points.iter().map(|p| p[a]).collect();
        v.sort_by(f64::total_cmp);
        (quantile(&v, tail), quantile(&v, 1.0 - tail))
    };
    Ok(Region::new(axis(0), axis(1)))
}

// Linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Midpoint-rule evaluation of the functionals on a `grid_resolution²` grid.
pub fn compute_functionals<C, F>(fit: &C, density: F, region: Region, grid_resolution: usize) -> Result<FunctionalSet>
where
    C: Curvature + ?Sized,
    F: Fn(Vec2) -> f64,
{
    if !(region.area() > 0.0) {
        return Err(Error::Argument("functional region has no area".to_owned()));
    }
    if grid_resolution == 0 {
        return Err(Error::Argument("grid resolution must be positive".to_owned()));
    }
    let i_tt = midpoint_2d(|p| fit.d2_t_at(p).powi(2), &region, grid_resolution);
    let i_uu = midpoint_2d(|p| fit.d2_u_at(p).powi(2), &region, grid_resolution);
    let i_tu = midpoint_2d(|p| fit.d2_t_at(p) * fit.d2_u_at(p), &region, grid_resolution);

    let values: Vec<f64> = region.midpoints(grid_resolution).map(&density).collect();
    let max = values.iter().copied().fold(0.0, f64::max);
    let floor = (max * DENSITY_FLOOR_RATIO).max(f64::MIN_POSITIVE);
    let i_f = values.iter().map(|&f| 1.0 / f.max(floor)).sum::<f64>() * region.cell_area(grid_resolution);
    Ok(FunctionalSet {
        i_tt,
        i_uu,
        i_tu,
        i_f,
        region,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Fallback {
    /// Curvature, density or noise estimates made the formula degenerate.
    Degenerate(String),
    /// The functionals could not be estimated at all.
    Unestimable(String),
}

impl fmt::Display for Fallback {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fallback::Degenerate(why) => write!(f, "degenerate: {why}"),
            Fallback::Unestimable(why) => write!(f, "unestimable: {why}"),
        }
    }
}

/// Per-axis bandwidths with the estimates that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthPair {
    pub b_t: f64,
    pub b_u: f64,
    pub n: usize,
    pub sigma2: Option<f64>,
    pub functionals: Option<FunctionalSet>,
    pub fallback: Option<Fallback>,
}

impl BandwidthPair {
    pub fn is_fallback(&self) -> bool {
        self.fallback.is_some()
    }

    /// Scale-based pair `n^{-1/6} × extent`.
    pub fn fallback(n: usize, extent: f64, reason: Fallback) -> Self {
        let extent = if extent > 0.0 && extent.is_finite() { extent } else { 1.0 };
        let b = (n.max(1) as f64).powf(-1.0 / 6.0) * extent;
        Self {
            b_t: b,
            b_u: b,
            n,
            sigma2: None,
            functionals: None,
            fallback: Some(reason),
        }
    }

    /// `key=value` lines for diagnostics.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "b_t={}", self.b_t);
        let _ = writeln!(s, "b_u={}", self.b_u);
        let _ = writeln!(s, "n={}", self.n);
        if let Some(sigma2) = self.sigma2 {
            let _ = writeln!(s, "sigma2={sigma2}");
        }
        if let Some(f) = &self.functionals {
            let _ = writeln!(s, "i_tt={}", f.i_tt);
            let _ = writeln!(s, "i_uu={}", f.i_uu);
            let _ = writeln!(s, "i_tu={}", f.i_tu);
            let _ = writeln!(s, "i_f={}", f.i_f);
            let _ = writeln!(s, "region_t={},{}", f.region.t.0, f.region.t.1);
            let _ = writeln!(s, "region_u={},{}", f.region.u.0, f.region.u.1);
        }
        let _ = writeln!(s, "fallback={}", self.fallback.is_some());
        if let Some(reason) = &self.fallback {
            let _ = writeln!(s, "fallback_reason={reason}");
        }
        s
    }
}

/// Evaluates the two-dimensional plug-in formula as written.
pub fn bandwidth_2d(functionals: &FunctionalSet, sigma2: f64, constants: &KernelConstants, n: usize) -> BandwidthPair {
    let f = functionals;
    let extent = (f.region.width() * f.region.height()).sqrt();
    let degenerate = |why: &str| {
        let mut pair = BandwidthPair::fallback(n, extent, Fallback::Degenerate(why.to_owned()));
        pair.sigma2 = Some(sigma2);
        pair.functionals = Some(*f);
        pair
    };
    if n == 0 {
        return degenerate("empty sample");
    }
    if !(f.i_tt >= DEGENERATE_FUNCTIONAL && f.i_uu >= DEGENERATE_FUNCTIONAL) {
        return degenerate("vanishing curvature functional");
    }
    // For a saddle (curvatures of opposite sign) the cross factor cancels to
    // zero up to rounding.
    let geometric = (f.i_tt * f.i_uu).sqrt();
    let cross = geometric + f.i_tu;
    if !(cross > CANCELLATION * geometric) {
        return degenerate("nonpositive denominator");
    }
    let denominator = constants.second_moment.powi(2) * f.i_tt.powf(0.75) * cross * n as f64;
    let numerator = sigma2 * constants.roughness.powi(2) * f.i_uu.powf(0.75) * f.i_f;
    let b_t = (numerator / denominator).powf(1.0 / 6.0);
    let b_u = (f.i_tt / f.i_uu).powf(0.25) * b_t;
    if !(b_t > 0.0 && b_t.is_finite() && b_u > 0.0 && b_u.is_finite()) {
        return degenerate("bandwidth not positive and finite");
    }
    BandwidthPair {
        b_t,
        b_u,
        n,
        sigma2: Some(sigma2),
        functionals: Some(*f),
        fallback: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlugInConfig {
    /// Midpoint grid cells per axis for the functionals.
    pub grid_resolution: usize,
    /// Fraction of points per axis inside the functional region.
    pub coverage: f64,
    /// Total degree of the least-squares surface used for curvature. Lower
    /// degrees (down to 2) are tried when the sample cannot support it.
    pub surface_degree: u32,
}

impl Default for PlugInConfig {
    fn default() -> Self {
        Self {
            grid_resolution: 50,
            coverage: 0.9,
            surface_degree: 4,
        }
    }
}

/// Sample points required per coefficient before a surface above degree 2 is
/// tried; below this the higher-order curvature is mostly noise.
pub const POINTS_PER_COEFFICIENT: usize = 3;

/// Highest-degree surface (from `max_degree` down to 2) that the sample
/// supports. Degrees above 2 need [`POINTS_PER_COEFFICIENT`] points per
/// coefficient; the quadratic needs one residual degree of freedom.
pub fn fit_surface(sample: &Sample2d, max_degree: u32) -> Result<PolynomialSurface> {
    let mut last = Error::InsufficientData { needed: 7, got: sample.len() };
    for degree in (2..=max_degree.max(2)).rev() {
        let p = monomials(degree).len();
        let needed = if degree == 2 { p + 1 } else { POINTS_PER_COEFFICIENT * p };
        if sample.len() < needed {
            continue;
        }
        match PolynomialSurface::fit(sample, degree) {
            Ok(fit) => return Ok(fit),
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// Full two-dimensional plug-in: surface fit, noise, KDE, functionals, formula.
pub fn plug_in_bandwidth_2d(sample: &Sample2d, kernel: Kernel, config: &PlugInConfig) -> BandwidthPair {
    let n = sample.len();
    let extent = bounding_box(sample.points())
        .map(|(lo, hi)| ((hi[0] - lo[0]) * (hi[1] - lo[1])).sqrt())
        .unwrap_or(0.0);
    let unestimable = |e: Error| BandwidthPair::fallback(n, extent, Fallback::Unestimable(e.to_string()));
    let fit = match fit_surface(sample, config.surface_degree) {
        Ok(fit) => fit,
        Err(e) => return unestimable(e),
    };
    let region = match trimmed_region(sample.points(), config.coverage) {
        Ok(r) if r.area() > 0.0 => r,
        Ok(_) => return unestimable(Error::DegenerateSample),
        Err(e) => return unestimable(e),
    };
    let kde = match Kde2d::with_reference_rule(sample.points().to_vec()) {
        Ok(k) => k,
        Err(e) => return unestimable(e),
    };
    let functionals = match compute_functionals(&fit, |p| kde.density(p), region, config.grid_resolution) {
        Ok(f) => f,
        Err(e) => return unestimable(e),
    };
    bandwidth_2d(&functionals, fit.residual_variance(), &kernel.constants(), n)
}

/// One-dimensional functionals: `∫(r'' + 2r'f'/f)²` and `∫1/f` over the sample range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Functionals1d {
    pub curvature: f64,
    pub inverse_density: f64,
    pub range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bandwidth1d {
    pub h: f64,
    pub sigma2: Option<f64>,
    pub functionals: Option<Functionals1d>,
    pub fallback: Option<Fallback>,
}

impl Bandwidth1d {
    pub fn is_fallback(&self) -> bool {
        self.fallback.is_some()
    }

    fn fallback(n: usize, range: f64, reason: Fallback) -> Self {
        let range = if range > 0.0 && range.is_finite() { range } else { 1.0 };
        Self {
            h: (n.max(1) as f64).powf(-0.2) * range,
            sigma2: None,
            functionals: None,
            fallback: Some(reason),
        }
    }
}

/// Evaluates the one-dimensional plug-in formula from frozen functionals.
pub fn bandwidth_1d_from_functionals(
    functionals: &Functionals1d,
    sigma2: f64,
    constants: &KernelConstants,
    n: usize,
) -> Bandwidth1d {
    let f = functionals;
    let range = f.range.1 - f.range.0;
    let degenerate = |why: &str| {
        let mut b = Bandwidth1d::fallback(n, range, Fallback::Degenerate(why.to_owned()));
        b.sigma2 = Some(sigma2);
        b.functionals = Some(*f);
        b
    };
    if n == 0 {
        return degenerate("empty sample");
    }
    if !(f.curvature >= DEGENERATE_FUNCTIONAL) {
        return degenerate("vanishing curvature functional");
    }
    let numerator = sigma2 * constants.roughness * f.inverse_density;
    let denominator = constants.squared_kernel_second_moment.powi(2) * f.curvature;
    let h = (1.0 / n as f64).powf(0.2) * (numerator / denominator).powf(0.2);
    if !(h > 0.0 && h.is_finite()) {
        return degenerate("bandwidth not positive and finite");
    }
    Bandwidth1d {
        h,
        sigma2: Some(sigma2),
        functionals: Some(*f),
        fallback: None,
    }
}

/// Panels for the one-dimensional midpoint integrals.
const PANELS_1D: usize = 256;

/// Estimates the one-dimensional functionals from a Gaussian pilot fit at
/// bandwidth `pilot_h`, differentiated by central differences.
pub fn estimate_functionals_1d(sample: &Sample1d, pilot_h: f64) -> Result<Functionals1d> {
    if !(pilot_h > 0.0 && pilot_h.is_finite()) {
        return Err(Error::Argument(format!("pilot bandwidth must be positive, got {pilot_h}")));
    }
    let (lo, hi) = sample
        .x()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !(hi > lo) {
        return Err(Error::DegenerateSample);
    }
    let kde = Kde1d::with_reference_rule(sample.x().to_vec())?;
    let r = |x: f64| nw_estimate_1d(sample, x, pilot_h, Kernel::Gaussian).map(|e| e.value);
    let step = pilot_h * 0.05;

    // Midpoint rule over the sample range.
    let grid: Vec<f64> = (0..PANELS_1D)
        .map(|k| lo + (k as f64 + 0.5) * (hi - lo) / PANELS_1D as f64)
        .collect();
    let densities: Vec<f64> = grid.iter().map(|&x| kde.density(x)).collect();
    let floor = (densities.iter().copied().fold(0.0, f64::max) * DENSITY_FLOOR_RATIO).max(f64::MIN_POSITIVE);

    let mut integrand = Vec::with_capacity(PANELS_1D);
    for (&x, &f) in grid.iter().zip(&densities) {
        let (rm, r0, rp) = (r(x - step)?, r(x)?, r(x + step)?);
        let d1 = (rp - rm) / (2.0 * step);
        let d2 = (rp - 2.0 * r0 + rm) / (step * step);
        let term = d2 + 2.0 * d1 * kde.derivative(x) / f.max(floor);
        integrand.push(term * term);
    }
    let width = (hi - lo) / PANELS_1D as f64;
    let curvature = integrand.iter().sum::<f64>() * width;
    let inverse_density = densities.iter().map(|&f| 1.0 / f.max(floor)).sum::<f64>() * width;
    Ok(Functionals1d {
        curvature,
        inverse_density,
        range: (lo, hi),
    })
}

/// Rule-of-thumb pilot bandwidth `1.06 s n^{-1/5}` from the design spread.
pub fn default_pilot_bandwidth(x: &[f64]) -> Result<f64> {
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    if !(sd > 0.0) {
        return Err(Error::DegenerateSample);
    }
    Ok(1.06 * sd * (n as f64).powf(-0.2))
}

/// Full one-dimensional plug-in bandwidth.
pub fn bandwidth_1d(sample: &Sample1d, constants: &KernelConstants, pilot_h: f64) -> Result<Bandwidth1d> {
    let n = sample.len();
    if n < 4 {
        return Err(Error::InsufficientData { needed: 4, got: n });
    }
    let sigma2 = estimate_sigma2_1d(sample)?;
    let range = sample.x().iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - sample.x().iter().copied().fold(f64::INFINITY, f64::min);
    match estimate_functionals_1d(sample, pilot_h) {
        Ok(f) => Ok(bandwidth_1d_from_functionals(&f, sigma2, constants, n)),
        Err(e @ Error::Argument(_)) => Err(e),
        Err(e) => Ok(Bandwidth1d::fallback(n, range, Fallback::Unestimable(e.to_string()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, Uniform};

    fn grid_points(k: usize, lo: f64, hi: f64) -> Vec<Vec2> {
        let step = (hi - lo) / (k - 1) as f64;
        (0..k)
            .flat_map(|a| (0..k).map(move |b| [lo + a as f64 * step, lo + b as f64 * step]))
            .collect()
    }

    fn sample_of(points: Vec<Vec2>, r: impl Fn(Vec2) -> f64) -> Sample2d {
        let y = points.iter().map(|&p| r(p)).collect();
        Sample2d::new(points, y).unwrap()
    }

    fn unit_fit(a3: f64, a5: f64) -> SurfaceFit {
        SurfaceFit {
            coefficients: [0.0, 0.0, 0.0, a3, 0.0, a5],
            residual_variance: 0.0,
        }
    }

    #[test]
    fn exact_quadratic_recovery() {
        let s = sample_of(grid_points(5, -1.0, 2.0), |p| 1.0 + 2.0 * p[0] + 3.0 * p[1] * p[1]);
        let fit = fit_quadratic_surface(&s).unwrap();
        let expected = [1.0, 2.0, 0.0, 0.0, 0.0, 3.0];
        for (a, e) in fit.coefficients.iter().zip(expected) {
            assert_abs_diff_eq!(*a, e, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(fit.residual_variance, 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.d2_u(), 6.0, epsilon = 1e-9);
        assert_abs_diff_eq!(estimate_sigma2_2d(&s).unwrap(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn constant_fit() {
        let s = sample_of(grid_points(4, 10.0, 13.0), |_| 4.25);
        let fit = fit_quadratic_surface(&s).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], 4.25, epsilon = 1e-9);
        for a in &fit.coefficients[1..] {
            assert_abs_diff_eq!(*a, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn noisy_bowl_matches_ols_standard_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let pts = grid_points(20, -1.0, 1.0);
        let y = pts.iter().map(|p| p[0] * p[0] + p[1] * p[1] + noise.sample(&mut rng)).collect();
        let fit = fit_quadratic_surface(&Sample2d::new(pts, y).unwrap()).unwrap();
        assert!((fit.coefficients[3] - 1.0).abs() < 0.05);
        assert!((fit.coefficients[5] - 1.0).abs() < 0.05);
        assert!((0.005..=0.015).contains(&fit.residual_variance), "{}", fit.residual_variance);
    }

    #[test]
    fn collinear_layout_is_rank_deficient() {
        let pts: Vec<Vec2> = (0..10).map(|k| [k as f64, 2.0 * k as f64]).collect();
        let s = sample_of(pts, |p| p[0]);
        match fit_quadratic_surface(&s) {
            Err(Error::RankDeficient { direction }) => assert!(!direction.is_empty()),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
        let few = sample_of(grid_points(2, 0.0, 1.0), |_| 1.0);
        assert!(matches!(fit_quadratic_surface(&few), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn quartic_surface_derivatives() {
        let r = |p: Vec2| p[0].powi(4) - 2.0 * p[0] * p[1].powi(3) + 0.5 * p[1] * p[1] + 3.0;
        let s = sample_of(grid_points(8, -1.0, 2.0), r);
        let fit = PolynomialSurface::fit(&s, 4).unwrap();
        for p in [[0.3, -0.7], [1.5, 1.1], [-0.9, 0.0]] {
            assert_abs_diff_eq!(fit.eval(p), r(p), epsilon = 1e-8);
            assert_abs_diff_eq!(fit.d2_t_at(p), 12.0 * p[0] * p[0], epsilon = 1e-7);
            assert_abs_diff_eq!(fit.d2_u_at(p), -12.0 * p[0] * p[1] + 1.0, epsilon = 1e-7);
            assert_abs_diff_eq!(fit.derivative(p, 1, 1), -6.0 * p[1] * p[1], epsilon = 1e-7);
        }
        assert_abs_diff_eq!(fit.residual_variance(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn surface_degree_steps_down_for_small_samples() {
        let s = sample_of(grid_points(3, 0.0, 1.0), |p| p[0] * p[1]);
        assert_eq!(fit_surface(&s, 4).unwrap().degree(), 2);
        let s = sample_of(grid_points(5, 0.0, 1.0), |p| p[0] * p[1]);
        assert_eq!(fit_surface(&s, 4).unwrap().degree(), 2);
        let s = sample_of(grid_points(6, 0.0, 1.0), |p| p[0] * p[1]);
        assert_eq!(fit_surface(&s, 4).unwrap().degree(), 3);
        let s = sample_of(grid_points(7, 0.0, 1.0), |p| p[0] * p[1]);
        assert_eq!(fit_surface(&s, 4).unwrap().degree(), 4);
    }

    #[test]
    fn functional_examples() {
        let f = compute_functionals(&unit_fit(1.0, 0.0), |_| 1.0, Region::unit(), 10).unwrap();
        assert_abs_diff_eq!(f.i_tt, 4.0, epsilon = 1e-12);
        assert_eq!(f.i_uu, 0.0);
        assert_eq!(f.i_tu, 0.0);
        assert_abs_diff_eq!(f.i_f, 1.0, epsilon = 1e-12);
        let f = compute_functionals(&unit_fit(1.0, 2.0), |_| 1.0, Region::unit(), 10).unwrap();
        assert_abs_diff_eq!(f.i_tu, 8.0, epsilon = 1e-12);
        assert!(compute_functionals(&unit_fit(1.0, 2.0), |_| 1.0, Region::new((0.0, 1.0), (2.0, 2.0)), 10).is_err());
    }

    #[test]
    fn vanishing_density_is_floored() {
        let f = compute_functionals(&unit_fit(1.0, 1.0), |p| if p[0] < 0.5 { 1.0 } else { 0.0 }, Region::unit(), 10)
            .unwrap();
        assert_abs_diff_eq!(f.i_f, 0.5 + 0.5 / DENSITY_FLOOR_RATIO, epsilon = 1e-9);
    }

    #[test]
    fn trimmed_region_quantiles() {
        let pts: Vec<Vec2> = (0..=100).map(|k| [k as f64, -(k as f64)]).collect();
        let r = trimmed_region(&pts, 0.9).unwrap();
        assert_abs_diff_eq!(r.t.0, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.t.1, 95.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.u.0, -95.0, epsilon = 1e-12);
    }

    fn ones() -> KernelConstants {
        KernelConstants {
            roughness: 1.0,
            second_moment: 1.0,
            squared_kernel_second_moment: 1.0,
        }
    }

    fn frozen(i_tt: f64, i_uu: f64, i_tu: f64) -> FunctionalSet {
        FunctionalSet {
            i_tt,
            i_uu,
            i_tu,
            i_f: 1.0,
            region: Region::unit(),
        }
    }

    #[test]
    fn bandwidth_2d_examples() {
        let b = bandwidth_2d(&frozen(1.0, 1.0, 0.0), 1.0, &ones(), 1);
        assert!(!b.is_fallback());
        assert_abs_diff_eq!(b.b_t, 1.0, epsilon = 1e-15);
        assert_eq!(b.b_t, b.b_u);

        let f = frozen(2.7, 0.4, 0.3);
        let c = Kernel::Epanechnikov.constants();
        let small = bandwidth_2d(&f, 0.3, &c, 10);
        let large = bandwidth_2d(&f, 0.3, &c, 640);
        assert_abs_diff_eq!(small.b_t / large.b_t, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(small.b_u / large.b_u, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(small.b_u / small.b_t, (2.7f64 / 0.4).powf(0.25), epsilon = 1e-12);
    }

    #[test]
    fn bandwidth_2d_fallbacks() {
        let c = Kernel::Epanechnikov.constants();
        for (f, sigma2) in [
            (frozen(0.0, 1.0, 0.0), 1.0),
            (frozen(1.0, 4.0, -2.0), 1.0),
            (frozen(1.0, 1.0, 0.0), 0.0),
        ] {
            let b = bandwidth_2d(&f, sigma2, &c, 64);
            assert!(b.is_fallback());
            assert_abs_diff_eq!(b.b_t, 0.5, epsilon = 1e-12);
            assert_eq!(b.b_t, b.b_u);
        }
        assert!(bandwidth_2d(&frozen(1.0, 1.0, 0.0), 1.0, &c, 0).b_t > 0.0);
    }

    #[test]
    fn bandwidth_1d_scaling_and_fallback() {
        let f = Functionals1d {
            curvature: 3.0,
            inverse_density: 1.2,
            range: (0.0, 1.0),
        };
        let c = Kernel::Epanechnikov.constants();
        let a = bandwidth_1d_from_functionals(&f, 0.04, &c, 7);
        let b = bandwidth_1d_from_functionals(&f, 0.04, &c, 7 * 32);
        assert_abs_diff_eq!(a.h / b.h, 2.0, epsilon = 1e-12);

        let flat = Sample1d::new((0..50).map(|k| k as f64 / 49.0).collect(), vec![2.0; 50]).unwrap();
        let b = bandwidth_1d(&flat, &c, 0.1).unwrap();
        assert!(b.is_fallback());
        assert_abs_diff_eq!(b.h, 50f64.powf(-0.2), epsilon = 1e-12);
    }

    #[test]
    fn sigma2_examples() {
        let c = Sample1d::new(vec![3.0, 1.0, 2.0], vec![5.0; 3]).unwrap();
        assert_eq!(estimate_sigma2_1d(&c).unwrap(), 0.0);
        // Differences taken in x order: (2,1) (4,2) (3,3) → y 1,2,3 → diffs 1,1.
        let s = Sample1d::new(vec![4.0, 2.0, 3.0], vec![3.0, 1.0, 2.0]).unwrap();
        assert_abs_diff_eq!(estimate_sigma2_1d(&s).unwrap(), 2.0 / 4.0, epsilon = 1e-15);
        assert!(estimate_sigma2_1d(&Sample1d::new(vec![0.0], vec![1.0]).unwrap()).is_err());
    }

    #[test]
    fn rice_estimator_on_pure_noise() {
        // Monte Carlo band: Var of the estimator for n = 1000 is about
        // 1.5/1000, so 3 sigma is ~0.12 around 1.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..1000).map(|k| k as f64 / 999.0).collect();
        let y = x.iter().map(|&v| 0.5 + 2.0 * v + noise.sample(&mut rng)).collect();
        let s2 = estimate_sigma2_1d(&Sample1d::new(x, y).unwrap()).unwrap();
        assert!((0.85..=1.15).contains(&s2), "{s2}");
    }

    #[test]
    fn plug_in_2d_on_a_curved_surface() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let unif = Uniform::new(-1.0, 1.0).unwrap();
        let noise = Normal::new(0.0, 0.2).unwrap();
        let pts: Vec<Vec2> = (0..400).map(|_| [unif.sample(&mut rng), unif.sample(&mut rng)]).collect();
        let y = pts.iter().map(|p| 2.0 * p[0] * p[0] + p[1] * p[1] + noise.sample(&mut rng)).collect();
        let s = Sample2d::new(pts, y).unwrap();
        let b = plug_in_bandwidth_2d(&s, Kernel::Epanechnikov, &PlugInConfig::default());
        assert!(!b.is_fallback(), "{:?}", b.fallback);
        assert!(b.b_t > 0.0 && b.b_u > b.b_t);
        let text = b.to_key_value();
        assert!(text.contains("i_tt=") && text.contains("fallback=false"));
    }

    #[test]
    fn plug_in_2d_falls_back_on_collinear_points() {
        let pts: Vec<Vec2> = (0..20).map(|k| [k as f64, 0.0]).collect();
        let s = sample_of(pts, |p| p[0]);
        let b = plug_in_bandwidth_2d(&s, Kernel::Epanechnikov, &PlugInConfig::default());
        assert!(matches!(b.fallback, Some(Fallback::Unestimable(_))));
        assert!(b.b_t > 0.0 && b.b_t.is_finite());
    }

    proptest! {
        #[test]
        fn swapping_axes_swaps_bandwidths(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let unif = Uniform::new(-2.0, 2.0).unwrap();
            let noise = Normal::new(0.0, 0.3).unwrap();
            let (a, b, c) = (unif.sample(&mut rng), unif.sample(&mut rng), unif.sample(&mut rng));
            let pts: Vec<Vec2> = (0..60).map(|_| [unif.sample(&mut rng), unif.sample(&mut rng)]).collect();
            let y = pts
                .iter()
                .map(|p| a * p[0] * p[0] + b * p[1] * p[1] + c * p[0] * p[1] + noise.sample(&mut rng))
                .collect();
            let s = Sample2d::new(pts, y).unwrap();
            let cfg = PlugInConfig::default();
            let one = plug_in_bandwidth_2d(&s, Kernel::Epanechnikov, &cfg);
            let two = plug_in_bandwidth_2d(&s.swap_axes(), Kernel::Epanechnikov, &cfg);
            prop_assert!((one.b_t - two.b_u).abs() <= 1e-9 * one.b_t.max(1.0));
            prop_assert!((one.b_u - two.b_t).abs() <= 1e-9 * one.b_u.max(1.0));
            prop_assert!(one.b_t > 0.0 && one.b_t.is_finite() && one.b_u > 0.0 && one.b_u.is_finite());
            if let Some(f) = one.functionals {
                prop_assert!(f.i_tt >= 0.0 && f.i_uu >= 0.0 && f.i_f > 0.0);
            }
        }
    }
}
