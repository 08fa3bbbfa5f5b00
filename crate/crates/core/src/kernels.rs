//! Smoothing kernels, Nadaraya-Watson regression in one and two dimensions,
//! and Gaussian kernel density estimation with the reference-rule bandwidth.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layout::{bounding_box, Vec2};
use crate::quadrature::adaptive_simpson;

// Integration half-width for the Gaussian; the density is ~1e-32 there.
const GAUSSIAN_CUTOFF: f64 = 12.0;

/// Symmetric, nonnegative kernel integrating to one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Kernel {
    #[default]
    Epanechnikov,
    Gaussian,
    Uniform,
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kernel::Epanechnikov => "epanechnikov",
            Kernel::Gaussian => "gaussian",
            Kernel::Uniform => "uniform",
        })
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epanechnikov" => Ok(Kernel::Epanechnikov),
            "gaussian" => Ok(Kernel::Gaussian),
            "uniform" => Ok(Kernel::Uniform),
            other => Err(Error::Argument(format!("unknown kernel '{other}'"))),
        }
    }
}

/// `R(K) = ∫K²`, `μ₂(K) = ∫x²K` and `∫x²K²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConstants {
    pub roughness: f64,
    pub second_moment: f64,
    /// `∫x²K(x)²dx`, which the one-dimensional plug-in formula squares in
    /// its denominator.
    pub squared_kernel_second_moment: f64,
}

impl Kernel {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Kernel::Epanechnikov if x.abs() <= 1.0 => 0.75 * (1.0 - x * x),
            Kernel::Uniform if x.abs() <= 1.0 => 0.5,
            Kernel::Gaussian => (-0.5 * x * x).exp() / TAU.sqrt(),
            _ => 0.0,
        }
    }

    /// Half-width of the support; `None` for unbounded kernels.
    pub fn support(self) -> Option<f64> {
        match self {
            Kernel::Gaussian => None,
            _ => Some(1.0),
        }
    }

    fn integration_limit(self) -> f64 {
        self.support().unwrap_or(GAUSSIAN_CUTOFF)
    }

    /// Kernel constants by adaptive quadrature to 1e-10 absolute.
    pub fn constants(self) -> KernelConstants {
        let l = self.integration_limit();
        let tol = 1e-10;
        KernelConstants {
            roughness: adaptive_simpson(|x| self.eval(x).powi(2), -l, l, tol),
            second_moment: adaptive_simpson(|x| x * x * self.eval(x), -l, l, tol),
            squared_kernel_second_moment: adaptive_simpson(|x| x * x * self.eval(x).powi(2), -l, l, tol),
        }
    }

    /// Scaled kernel `K(x / h) / h`.
    pub fn scaled(self, x: f64, h: f64) -> f64 {
        self.eval(x / h) / h
    }
}

/// Points on a line with one response each.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample1d {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Sample1d {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        validate_sample(x.len(), y.len(), x.iter().chain(&y))?;
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Points in the layout plane with one response each.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample2d {
    points: Vec<Vec2>,
    y: Vec<f64>,
}

impl Sample2d {
    pub fn new(points: Vec<Vec2>, y: Vec<f64>) -> Result<Self> {
        validate_sample(points.len(), y.len(), points.iter().flatten().chain(&y))?;
        Ok(Self { points, y })
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The same sample with the two coordinate axes exchanged.
    pub fn swap_axes(&self) -> Self {
        Self {
            points: self.points.iter().map(|p| [p[1], p[0]]).collect(),
            y: self.y.clone(),
        }
    }
}

fn validate_sample<'a>(n: usize, m: usize, values: impl Iterator<Item = &'a f64>) -> Result<()> {
    if n != m {
        return Err(Error::Argument(format!("{n} coordinates but {m} responses")));
    }
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if values.into_iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("sample contains non-finite values".to_owned()));
    }
    Ok(())
}

/// A kernel-weighted mean, or the nearest response when no weight reached it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NwEstimate {
    pub value: f64,
    pub fallback: bool,
}

fn weighted_mean(weights: impl Iterator<Item = f64>, y: &[f64]) -> Option<f64> {
    let (num, den) = weights
        .zip(y)
        .fold((0.0, 0.0), |(num, den), (w, &y)| (num + w * y, den + w));
    (den > 0.0).then(|| num / den)
}

fn nearest_response<P>(points: &[P], y: &[f64], dist: impl Fn(&P) -> f64) -> f64 {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, p) in points.iter().enumerate() {
        let d = dist(p);
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    y[best]
}

/// One-dimensional Nadaraya-Watson estimate at `x` with bandwidth `h`.
pub fn nw_estimate_1d(sample: &Sample1d, x: f64, h: f64, kernel: Kernel) -> Result<NwEstimate> {
    check_bandwidth(h)?;
    let weights = sample.x.iter().map(|&xi| kernel.scaled(x - xi, h));
    Ok(match weighted_mean(weights, &sample.y) {
        Some(value) => NwEstimate { value, fallback: false },
        None => NwEstimate {
            value: nearest_response(&sample.x, &sample.y, |&xi| (x - xi).abs()),
            fallback: true,
        },
    })
}

fn check_bandwidth(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::Argument(format!("bandwidth must be positive and finite, got {h}")))
    }
}

/// A two-dimensional sample binned onto an equal-area grid over its
/// bounding box, `ceil(sqrt(n))` cells per axis.
///
/// Each point's cell integral of the product kernel is approximated by the
/// kernel value at the cell centre times the cell area.
#[derive(Debug, Clone)]
pub struct BinnedSample {
    sample: Sample2d,
    centers: Vec<Vec2>,
    cell_area: f64,
    cells_per_axis: usize,
}

impl BinnedSample {
    pub fn new(sample: Sample2d) -> Self {
        let (lo, hi) = bounding_box(&sample.points).expect("samples are non-empty");
        let g = (sample.len() as f64).sqrt().ceil() as usize;
        let axis = |a: usize| {
            // A flat axis gets a unit-width span around its common value.
            let (l, h) = if hi[a] - lo[a] > 0.0 { (lo[a], hi[a]) } else { (lo[a] - 0.5, lo[a] + 0.5) };
            (l, (h - l) / g as f64)
        };
        let (axes, widths): (Vec<f64>, Vec<f64>) = [axis(0), axis(1)].into_iter().unzip();
        let center = |v: f64, a: usize| {
            let k = (((v - axes[a]) / widths[a]).floor().max(0.0) as usize).min(g - 1);
            axes[a] + (k as f64 + 0.5) * widths[a]
        };
        let centers = sample.points.iter().map(|p| [center(p[0], 0), center(p[1], 1)]).collect();
        Self {
            cell_area: widths[0] * widths[1],
            sample,
            centers,
            cells_per_axis: g,
        }
    }

    pub fn sample(&self) -> &Sample2d {
        &self.sample
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells_per_axis
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_area
    }

    fn weights<'a>(&'a self, query: Vec2, b_t: f64, b_u: f64, kernel: Kernel) -> impl Iterator<Item = f64> + 'a {
        let scale = self.cell_area / (b_t * b_u);
        self.centers
            .iter()
            .map(move |c| kernel.eval((query[0] - c[0]) / b_t) * kernel.eval((query[1] - c[1]) / b_u) * scale)
    }

    /// Normalised estimate: the cell-integral weighted mean of the responses.
    pub fn estimate(&self, query: Vec2, b_t: f64, b_u: f64, kernel: Kernel) -> Result<NwEstimate> {
        check_bandwidth(b_t)?;
        check_bandwidth(b_u)?;
        Ok(match weighted_mean(self.weights(query, b_t, b_u, kernel), &self.sample.y) {
            Some(value) => NwEstimate { value, fallback: false },
            None => NwEstimate {
                value: nearest_response(&self.sample.points, &self.sample.y, |p| {
                    (query[0] - p[0]).hypot(query[1] - p[1])
                }),
                fallback: true,
            },
        })
    }

    /// Unnormalised sum `Σ (b_t b_u)⁻¹ ∫_{A_i} K K · Y_i`.
    pub fn numerator(&self, query: Vec2, b_t: f64, b_u: f64, kernel: Kernel) -> Result<f64> {
        check_bandwidth(b_t)?;
        check_bandwidth(b_u)?;
        Ok(self.weights(query, b_t, b_u, kernel).zip(&self.sample.y).map(|(w, y)| w * y).sum())
    }
}

/// Binned two-dimensional Nadaraya-Watson estimate at `query`.
///
/// Bins the sample on every call; use [`BinnedSample`] for repeated queries.
pub fn nw_estimate_2d(sample: &Sample2d, query: Vec2, b_t: f64, b_u: f64, kernel: Kernel) -> Result<NwEstimate> {
    BinnedSample::new(sample.clone()).estimate(query, b_t, b_u, kernel)
}

/// Symmetric 2×2 matrix, row major.
pub type Mat2 = [[f64; 2]; 2];

/// Symmetric positive-definite bandwidth matrix `H`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthMatrix(Mat2);

impl BandwidthMatrix {
    pub fn new(h: Mat2) -> Result<Self> {
        if h.iter().flatten().any(|v| !v.is_finite()) || (h[0][1] - h[1][0]).abs() > 1e-12 {
            return Err(Error::NotPositiveDefinite);
        }
        let (lo, _) = eigenvalues(&h);
        if lo <= 0.0 {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self(h))
    }

    pub fn matrix(&self) -> Mat2 {
        self.0
    }

    pub fn determinant(&self) -> f64 {
        let h = self.0;
        h[0][0] * h[1][1] - h[0][1] * h[1][0]
    }

    /// `zᵀ H⁻¹ z`.
    pub fn inverse_quadratic_form(&self, z: Vec2) -> f64 {
        let h = self.0;
        let det = self.determinant();
        (h[1][1] * z[0] * z[0] - 2.0 * h[0][1] * z[0] * z[1] + h[0][0] * z[1] * z[1]) / det
    }
}

/// Eigenvalues of a symmetric 2×2 matrix as `(smaller, larger)`.
pub fn eigenvalues(m: &Mat2) -> (f64, f64) {
    let mean = 0.5 * (m[0][0] + m[1][1]);
    let half_diff = 0.5 * (m[0][0] - m[1][1]);
    let r = half_diff.hypot(m[0][1]);
    (mean - r, mean + r)
}

/// Bivariate Gaussian kernel density estimate with bandwidth matrix `H`.
#[derive(Debug, Clone)]
pub struct Kde2d {
    points: Vec<Vec2>,
    h: BandwidthMatrix,
    norm: f64,
}

impl Kde2d {
    pub fn new(points: Vec<Vec2>, h: BandwidthMatrix) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        let norm = 1.0 / (TAU * h.determinant().sqrt() * points.len() as f64);
        Ok(Self { points, h, norm })
    }

    /// Reference-rule bandwidth for `points`.
    pub fn with_reference_rule(points: Vec<Vec2>) -> Result<Self> {
        let h = reference_rule(&points)?;
        Self::new(points, h)
    }

    pub fn bandwidth(&self) -> &BandwidthMatrix {
        &self.h
    }

    pub fn density(&self, x: Vec2) -> f64 {
        self.points
            .iter()
            .map(|p| (-0.5 * self.h.inverse_quadratic_form([x[0] - p[0], x[1] - p[1]])).exp())
            .sum::<f64>()
            * self.norm
    }
}

/// `(1/n) Σ |H|^{-1/2} φ(H^{-1/2}(x − X_i))` with standard bivariate normal `φ`.
pub fn kde(points: &[Vec2], x: Vec2, h: &BandwidthMatrix) -> Result<f64> {
    Ok(Kde2d::new(points.to_vec(), *h)?.density(x))
}

/// Unbiased sample covariance of planar points.
pub fn empirical_covariance(points: &[Vec2]) -> Result<Mat2> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let mean = [
        points.iter().map(|p| p[0]).sum::<f64>() / n as f64,
        points.iter().map(|p| p[1]).sum::<f64>() / n as f64,
    ];
    let mut c = [[0.0; 2]; 2];
    for p in points {
        let d = [p[0] - mean[0], p[1] - mean[1]];
        for a in 0..2 {
            for b in 0..2 {
                c[a][b] += d[a] * d[b];
            }
        }
    }
    for row in &mut c {
        for v in row {
            *v /= (n - 1) as f64;
        }
    }
    Ok(c)
}

/// `H = n^{-1/3} Σ̂`, with `εI` added (`ε = 1e-9 · tr H`) when the smallest
/// eigenvalue falls below `ε`.
pub fn reference_rule(points: &[Vec2]) -> Result<BandwidthMatrix> {
    let cov = empirical_covariance(points)?;
    let scale = (points.len() as f64).powf(-1.0 / 3.0);
    let mut h = cov.map(|row| row.map(|v| v * scale));
    let trace = h[0][0] + h[1][1];
    if !(trace > 0.0) {
        return Err(Error::DegenerateSample);
    }
    let eps = 1e-9 * trace;
    if eigenvalues(&h).0 < eps {
        h[0][0] += eps;
        h[1][1] += eps;
    }
    BandwidthMatrix::new(h)
}

/// One-dimensional Gaussian KDE with variance-like bandwidth `h2`.
#[derive(Debug, Clone)]
pub struct Kde1d {
    x: Vec<f64>,
    h2: f64,
}

impl Kde1d {
    /// Normal-reference bandwidth `h² = n^{-2/5} s²`.
    pub fn with_reference_rule(x: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 2 {
            return Err(Error::InsufficientData { needed: 2, got: n });
        }
        let mean = x.iter().sum::<f64>() / n as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        if !(var > 0.0) {
            return Err(Error::DegenerateSample);
        }
        Ok(Self {
            h2: (n as f64).powf(-0.4) * var,
            x,
        })
    }

    pub fn bandwidth_variance(&self) -> f64 {
        self.h2
    }

    pub fn density(&self, at: f64) -> f64 {
        let norm = 1.0 / ((2.0 * PI * self.h2).sqrt() * self.x.len() as f64);
        self.x.iter().map(|&xi| (-0.5 * (at - xi).powi(2) / self.h2).exp()).sum::<f64>() * norm
    }

    pub fn derivative(&self, at: f64) -> f64 {
        let norm = 1.0 / ((2.0 * PI * self.h2).sqrt() * self.x.len() as f64);
        self.x
            .iter()
            .map(|&xi| {
                let d = at - xi;
                -d / self.h2 * (-0.5 * d * d / self.h2).exp()
            })
            .sum::<f64>()
            * norm
    }
}
