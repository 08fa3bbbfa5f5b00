//! Numerical integration helpers.

/// Axis-aligned rectangle `[t_lo, t_hi] × [u_lo, u_hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub t: (f64, f64),
    pub u: (f64, f64),
}

impl Region {
    pub fn new(t: (f64, f64), u: (f64, f64)) -> Self {
        Self { t, u }
    }

    pub fn unit() -> Self {
        Self::new((0.0, 1.0), (0.0, 1.0))
    }

    pub fn width(&self) -> f64 {
        self.t.1 - self.t.0
    }

    pub fn height(&self) -> f64 {
        self.u.1 - self.u.0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (self.t.0..=self.t.1).contains(&p[0]) && (self.u.0..=self.u.1).contains(&p[1])
    }

    /// Cell midpoints of a `resolution × resolution` grid, row by row.
    pub fn midpoints(&self, resolution: usize) -> impl Iterator<Item = [f64; 2]> + '_ {
        let dt = self.width() / resolution as f64;
        let du = self.height() / resolution as f64;
        (0..resolution).flat_map(move |a| {
            (0..resolution).map(move |b| [self.t.0 + (a as f64 + 0.5) * dt, self.u.0 + (b as f64 + 0.5) * du])
        })
    }

    pub fn cell_area(&self, resolution: usize) -> f64 {
        self.area() / (resolution * resolution) as f64
    }
}

/// Midpoint rule on a `resolution × resolution` grid.
pub fn midpoint_2d<F: FnMut([f64; 2]) -> f64>(mut f: F, region: &Region, resolution: usize) -> f64 {
    region.midpoints(resolution).map(&mut f).sum::<f64>() * region.cell_area(resolution)
}

/// Composite midpoint rule with `n` panels.
pub fn midpoint_1d<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    (0..n).map(|k| f(a + (k as f64 + 0.5) * h)).sum::<f64>() * h
}

/// Adaptive Simpson quadrature to an absolute tolerance.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(&f, a, b, fa, fm, fb, whole, abs_tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}
