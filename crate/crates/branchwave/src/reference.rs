//! Independent deterministic oracles: d'Alembert (d=1), Duhamel
//! quadrature against the wave kernel (d=1,2,3), and Picard iteration
//! for the power-nonlinear problem at small horizon.
//!
//! Nothing here consumes randomness; these routines exist so the
//! stochastic estimators and the distilled networks can be checked
//! against an unrelated computational path.

use crate::error::{Error, Result};
use crate::kernels::{Dimension, Point};

/// Tolerances and node counts for the quadrature oracles.
#[derive(Clone, Copy, Debug)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub max_depth: u32,
    /// Approximate node count of the d=3 sphere rule (lat-long product,
    /// antipodally symmetric).
    pub sphere_points: usize,
    /// Nodes of the periodic angular rule used for d=2.
    pub angle_points: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            abs_tol: 1e-9,
            max_depth: 48,
            sphere_points: 2048,
            angle_points: 64,
        }
    }
}

/// Adaptive Simpson integration of `f` over `[a, b]`.
///
/// Errors with a `Tolerance` diagnostic carrying the achieved error
/// estimate when the subdivision depth is exhausted.
pub fn adaptive_simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
    max_depth: u32,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut worst = 0.0f64;
    let v = simpson_rec(f, a, b, fa, fm, fb, whole, tol, max_depth, &mut worst);
    if worst > 0.0 {
        return Err(Error::Tolerance(format!(
            "adaptive Simpson depth exhausted; local error estimate {worst:.3e} above budget"
        )));
    }
    Ok(v)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    worst: &mut f64,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol || (b - a).abs() < 1e-14 {
        return left + right + delta / 15.0;
    }
    if depth == 0 {
        let err = delta.abs() / 15.0;
        if err > tol {
            *worst = worst.max(err - tol);
        }
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, worst)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, worst)
}

/// d'Alembert solution at `(t, x)` in dimension 1:
/// half the cone integral of the initial velocity plus the retarded
/// source integral.
pub fn dalembert(
    f2: &dyn Fn(f64) -> f64,
    source: Option<&dyn Fn(f64, f64) -> f64>,
    t: f64,
    x: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::domain("dalembert requires t >= 0"));
    }
    let mut v = 0.5 * adaptive_simpson(f2, x - t, x + t, cfg.abs_tol, cfg.max_depth)?;
    if let Some(src) = source {
        let inner_tol = cfg.abs_tol / (1.0 + 2.0 * t);
        let outer = |s: f64| {
            0.5 * adaptive_simpson(
                &|y| src(s, y),
                x - (t - s),
                x + (t - s),
                inner_tol,
                cfg.max_depth,
            )
            .unwrap_or(f64::NAN)
        };
        let add = adaptive_simpson(&outer, 0.0, t, cfg.abs_tol, cfg.max_depth)?;
        if !add.is_finite() {
            return Err(Error::Tolerance(
                "inner source quadrature failed in dalembert".into(),
            ));
        }
        v += add;
    }
    Ok(v)
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-like initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Deterministic sphere rule: Gauss-Legendre in the polar cosine times a
/// uniform periodic rule in the azimuth. Antipodally symmetric, so odd
/// integrands average to exactly zero.
pub struct SphereRule {
    pub nodes: Vec<Point>,
    pub weights: Vec<f64>,
}

impl SphereRule {
    pub fn new(target_points: usize) -> SphereRule {
        let nu = ((target_points as f64 / 2.0).sqrt().ceil() as usize).max(4);
        let nphi = 2 * nu;
        let (us, ws) = gauss_legendre(nu);
        let mut nodes = Vec::with_capacity(nu * nphi);
        let mut weights = Vec::with_capacity(nu * nphi);
        for (u, w) in us.iter().zip(ws.iter()) {
            let r = (1.0 - u * u).max(0.0).sqrt();
            for k in 0..nphi {
                let phi = 2.0 * std::f64::consts::PI * k as f64 / nphi as f64;
                nodes.push([r * phi.cos(), r * phi.sin(), *u]);
                // GL weight integrates du over [-1,1] (total 2); azimuth is a
                // plain mean, and the spherical mean normalizes by 1/2.
                weights.push(0.5 * w / nphi as f64);
            }
        }
        SphereRule { nodes, weights }
    }

    /// Mean of `f` over the unit sphere.
    pub fn mean(&self, f: &dyn Fn(Point) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(self.weights.iter())
            .map(|(n, w)| w * f(*n))
            .sum()
    }
}

/// Convolution of the wave kernel at radius `r` with `phi`, evaluated at
/// `x`. Returns `r * (spherical/disk/segment mean adapted to d)` so the
/// total mass is `r` in every dimension.
fn kernel_convolution(
    dim: Dimension,
    phi: &dyn Fn(Point) -> f64,
    r: f64,
    x: Point,
    cfg: &QuadratureConfig,
    sphere: &SphereRule,
) -> Result<f64> {
    if r == 0.0 {
        return Ok(0.0);
    }
    match dim {
        Dimension::One => adaptive_simpson(
            &|z| 0.5 * phi([x[0] - z, 0.0, 0.0]),
            -r,
            r,
            cfg.abs_tol,
            cfg.max_depth,
        ),
        Dimension::Two => {
            // The inverse square-root singularity is removed by the polar
            // substitution rho = r sin(alpha).
            let nphi = cfg.angle_points.max(8);
            let ring_mean = |rho: f64| -> f64 {
                let mut s = 0.0;
                for k in 0..nphi {
                    let th = 2.0 * std::f64::consts::PI * k as f64 / nphi as f64;
                    s += phi([x[0] - rho * th.cos(), x[1] - rho * th.sin(), x[2]]);
                }
                s / nphi as f64
            };
            adaptive_simpson(
                &|alpha: f64| r * alpha.sin() * ring_mean(r * alpha.sin()),
                0.0,
                std::f64::consts::FRAC_PI_2,
                cfg.abs_tol,
                cfg.max_depth,
            )
        }
        Dimension::Three => {
            Ok(r * sphere.mean(&|w| phi([x[0] - r * w[0], x[1] - r * w[1], x[2] - r * w[2]])))
        }
    }
}

/// Duhamel solution at `(t, x)`: kernel convolution of the initial
/// velocity at radius `t` plus the time integral of retarded source
/// convolutions.
pub fn duhamel_quadrature(
    dim: Dimension,
    f2: &dyn Fn(Point) -> f64,
    source: Option<&dyn Fn(f64, Point) -> f64>,
    t: f64,
    x: Point,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::domain("duhamel_quadrature requires t >= 0"));
    }
    let sphere = SphereRule::new(cfg.sphere_points);
    let mut v = kernel_convolution(dim, f2, t, x, cfg, &sphere)?;
    if let Some(src) = source {
        let inner_cfg = QuadratureConfig {
            abs_tol: cfg.abs_tol / (1.0 + 2.0 * t),
            ..*cfg
        };
        let outer = |s: f64| {
            kernel_convolution(dim, &|y| src(t - s, y), s, x, &inner_cfg, &sphere)
                .unwrap_or(f64::NAN)
        };
        let add = adaptive_simpson(&outer, 0.0, t, cfg.abs_tol, cfg.max_depth)?;
        if !add.is_finite() {
            return Err(Error::Tolerance(
                "inner source quadrature failed in duhamel".into(),
            ));
        }
        v += add;
    }
    Ok(v)
}

/// Space-time grid parameters for the Picard fixed-point oracle (d=1).
#[derive(Clone, Copy, Debug)]
pub struct PicardConfig {
    pub nx: usize,
    pub nt: usize,
    /// Half-width of the spatial domain; must cover query radius plus
    /// horizon so the cone never leaves the grid.
    pub x_radius: f64,
    /// Composite-Simpson panel counts for the retarded integrals.
    pub time_panels: usize,
    pub space_panels: usize,
}

impl Default for PicardConfig {
    fn default() -> Self {
        PicardConfig {
            nx: 161,
            nt: 41,
            x_radius: 2.0,
            time_panels: 48,
            space_panels: 48,
        }
    }
}

/// Grid solution produced by Picard iteration, with the successive sup
/// differences recorded for contraction monitoring.
pub struct PicardSolution {
    ts: Vec<f64>,
    xs: Vec<f64>,
    u: Vec<Vec<f64>>,
    pub contraction: Vec<f64>,
    pub iterations_run: usize,
}

impl PicardSolution {
    /// Bilinear interpolation; clamps to the grid boundary.
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        let (it, wt) = locate(&self.ts, t);
        let (ix, wx) = locate(&self.xs, x);
        let a = self.u[it][ix] * (1.0 - wx) + self.u[it][ix + 1] * wx;
        let b = self.u[it + 1][ix] * (1.0 - wx) + self.u[it + 1][ix + 1] * wx;
        a * (1.0 - wt) + b * wt
    }
}

fn locate(grid: &[f64], v: f64) -> (usize, f64) {
    let n = grid.len();
    if v <= grid[0] {
        return (0, 0.0);
    }
    if v >= grid[n - 1] {
        return (n - 2, 1.0);
    }
    let h = grid[1] - grid[0];
    let i = (((v - grid[0]) / h) as usize).min(n - 2);
    ((i), ((v - grid[i]) / h).clamp(0.0, 1.0))
}

/// Picard iteration for `u_tt - u_xx = c(t,x) u^p`, `u(0)=0`,
/// `u_t(0)=f2`, on `[0, t_max] x [-x_radius, x_radius]`.
///
/// The first iterate is the linear solution; each subsequent iterate
/// inserts the previous one into the retarded source integral. Refuses
/// with a diagnostic when the successive differences stop contracting.
pub fn picard_nonlinear(
    power: u32,
    c: &dyn Fn(f64, f64) -> f64,
    f2: &dyn Fn(f64) -> f64,
    t_max: f64,
    cfg: &PicardConfig,
    iterations: usize,
    dim: Dimension,
) -> Result<PicardSolution> {
    if dim != Dimension::One {
        return Err(Error::invalid(
            "the Picard grid oracle is implemented for dimension 1",
        ));
    }
    if t_max <= 0.0 || iterations == 0 {
        return Err(Error::invalid("picard_nonlinear needs t_max > 0, iterations >= 1"));
    }
    let ts: Vec<f64> = (0..cfg.nt)
        .map(|i| t_max * i as f64 / (cfg.nt - 1) as f64)
        .collect();
    let xs: Vec<f64> = (0..cfg.nx)
        .map(|j| -cfg.x_radius + 2.0 * cfg.x_radius * j as f64 / (cfg.nx - 1) as f64)
        .collect();

    // Linear part: half the cone integral of f2 at every grid node.
    let qcfg = QuadratureConfig::default();
    let mut lin = vec![vec![0.0; cfg.nx]; cfg.nt];
    for (i, &t) in ts.iter().enumerate() {
        for (j, &x) in xs.iter().enumerate() {
            lin[i][j] = 0.5 * adaptive_simpson(f2, x - t, x + t, qcfg.abs_tol, qcfg.max_depth)?;
        }
    }

    let mut u = lin.clone();
    let mut contraction = Vec::new();
    let mut iterations_run = 1usize;
    for _ in 1..iterations {
        let prev = PicardSolution {
            ts: ts.clone(),
            xs: xs.clone(),
            u: u.clone(),
            contraction: Vec::new(),
            iterations_run,
        };
        let mut next = lin.clone();
        for (i, &t) in ts.iter().enumerate() {
            if t == 0.0 {
                continue;
            }
            for (j, &x) in xs.iter().enumerate() {
                next[i][j] += retarded_source(&prev, c, power, t, x, cfg);
            }
        }
        let mut sup = 0.0f64;
        for i in 0..cfg.nt {
            for j in 0..cfg.nx {
                sup = sup.max((next[i][j] - u[i][j]).abs());
            }
        }
        contraction.push(sup);
        u = next;
        iterations_run += 1;
        if sup < 1e-13 {
            break;
        }
        if contraction.len() >= 2 {
            let k = contraction.len();
            if contraction[k - 1] > contraction[k - 2] && contraction[k - 1] > 1e-10 {
                return Err(Error::Tolerance(format!(
                    "Picard iteration is not contracting: successive sups {:?}",
                    contraction
                )));
            }
        }
    }
    Ok(PicardSolution {
        ts,
        xs,
        u,
        contraction,
        iterations_run,
    })
}

/// Retarded source integral against the previous iterate, by nested
/// composite Simpson on the light cone of `(t, x)`.
fn retarded_source(
    prev: &PicardSolution,
    c: &dyn Fn(f64, f64) -> f64,
    power: u32,
    t: f64,
    x: f64,
    cfg: &PicardConfig,
) -> f64 {
    let ns = cfg.time_panels * 2;
    let hs = t / ns as f64;
    let mut total = 0.0;
    for is in 0..=ns {
        let s = is as f64 * hs;
        let half = t - s;
        let inner = if half == 0.0 {
            0.0
        } else {
            let ny = cfg.space_panels * 2;
            let hy = 2.0 * half / ny as f64;
            let mut acc = 0.0;
            for iy in 0..=ny {
                let y = x - half + iy as f64 * hy;
                let v = c(s, y) * prev.eval(s, y).powi(power as i32);
                let w = simpson_weight(iy, ny);
                acc += w * v;
            }
            0.5 * acc * hy / 3.0
        };
        total += simpson_weight(is, ns) * inner;
    }
    total * hs / 3.0
}

fn simpson_weight(i: usize, n: usize) -> f64 {
    if i == 0 || i == n {
        1.0
    } else if i % 2 == 1 {
        4.0
    } else {
        2.0
    }
}
