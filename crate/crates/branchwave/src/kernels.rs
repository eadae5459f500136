//! Lifetime law, unit jump laws and the wave Green-measure normalization.
//!
//! The jump `Z` is dimensionless with `|Z| <= 1`; a particle displaced
//! over an interval of length `t` moves by `t * Z`, which realizes the
//! Green measure of mass `t`. The lifetime is exponential with rate
//! `lambda` (the gauge used throughout; `lambda` is configurable and is
//! recorded in every report).

use rand::Rng;

use crate::error::{Error, Result};

/// Spatial point. Dimensions 1 and 2 leave trailing components at zero.
pub type Point = [f64; 3];

pub fn padd(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn pscale(s: f64, a: Point) -> Point {
    [s * a[0], s * a[1], s * a[2]]
}

pub fn psub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn pnorm(a: Point) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Spatial dimension, restricted to the three physical cases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dimension {
    One,
    Two,
    Three,
}

impl Dimension {
    pub fn new(d: usize) -> Result<Self> {
        match d {
            1 => Ok(Dimension::One),
            2 => Ok(Dimension::Two),
            3 => Ok(Dimension::Three),
            _ => Err(Error::domain(format!(
                "dimension must be 1, 2 or 3, got {d}"
            ))),
        }
    }

    pub fn as_usize(self) -> usize {
        match self {
            Dimension::One => 1,
            Dimension::Two => 2,
            Dimension::Three => 3,
        }
    }
}

/// Exponential lifetime law with rate `lambda > 0`.
#[derive(Clone, Copy, Debug)]
pub struct LifetimeLaw {
    lambda: f64,
}

impl LifetimeLaw {
    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::domain(format!(
                "lifetime rate must be positive and finite, got {lambda}"
            )));
        }
        Ok(LifetimeLaw { lambda })
    }

    pub fn lambda(self) -> f64 {
        self.lambda
    }

    /// Density `lambda * exp(-lambda t)` at `t >= 0`.
    pub fn rho(self, t: f64) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::domain(format!("rho requires t >= 0, got {t}")));
        }
        Ok(self.lambda * (-self.lambda * t).exp())
    }

    /// Survival function `exp(-lambda t)` at `t >= 0`.
    pub fn rho_bar(self, t: f64) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::domain(format!("rho_bar requires t >= 0, got {t}")));
        }
        Ok((-self.lambda * t).exp())
    }

    /// Draw an exponential lifetime by inverse CDF (one uniform consumed).
    pub fn sample_tau<R: Rng>(self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        -(1.0 - u).ln() / self.lambda
    }
}

/// Draw the dimensionless unit jump.
///
/// - d=1: uniform on `[-1, 1]`;
/// - d=2: radius by inverse CDF `r = sqrt(2u - u^2)`, independent uniform
///   angle (fixed number of uniforms consumed, no rejection);
/// - d=3: normalized 3-vector of standard Gaussians (uniform on the
///   sphere).
pub fn sample_unit_jump<R: Rng>(dim: Dimension, rng: &mut R) -> Point {
    match dim {
        Dimension::One => {
            let u: f64 = rng.gen();
            [2.0 * u - 1.0, 0.0, 0.0]
        }
        Dimension::Two => {
            let u: f64 = rng.gen();
            let v: f64 = rng.gen();
            let r = (2.0 * u - u * u).sqrt();
            let theta = 2.0 * std::f64::consts::PI * v;
            [r * theta.cos(), r * theta.sin(), 0.0]
        }
        Dimension::Three => {
            let g = [gaussian(rng), gaussian(rng), gaussian(rng)];
            let n = pnorm(g);
            if n == 0.0 {
                // measure-zero guard
                [1.0, 0.0, 0.0]
            } else {
                pscale(1.0 / n, g)
            }
        }
    }
}

/// One standard Gaussian by Box-Muller (two uniforms consumed).
fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let r = (-2.0 * (1.0 - u1).ln()).sqrt();
    r * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Total mass of the wave Green measure at time `t >= 0`: equal to `t`
/// in every dimension, constant in space.
pub fn green_mass(t: f64) -> f64 {
    t
}

/// Displaced position `x + t * Z`; never leaves the closed ball `B(x, t)`.
pub fn sample_position<R: Rng>(x: Point, t: f64, dim: Dimension, rng: &mut R) -> Point {
    let z = sample_unit_jump(dim, rng);
    padd(x, pscale(t, z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::adaptive_simpson;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn rho_values() {
        let law = LifetimeLaw::new(1.0).unwrap();
        assert_eq!(law.rho(0.0).unwrap(), 1.0);
        let law2 = LifetimeLaw::new(2.0).unwrap();
        let got = law2.rho(1.0).unwrap();
        assert!((got - 2.0 * (-2.0f64).exp()).abs() < 1e-15);
        assert!(law.rho(-0.1).is_err());
        assert!(LifetimeLaw::new(0.0).is_err());
        assert!(LifetimeLaw::new(-1.0).is_err());
    }

    #[test]
    fn rho_integrates_to_one() {
        let law = LifetimeLaw::new(0.7).unwrap();
        // Tail beyond 80/lambda is below 1e-34.
        let mass = adaptive_simpson(&|s| law.rho(s).unwrap(), 0.0, 80.0 / 0.7, 1e-12, 60)
            .unwrap();
        assert!((mass - 1.0).abs() < 1e-10, "mass {mass}");
    }

    #[test]
    fn rho_bar_values() {
        let law = LifetimeLaw::new(3.0).unwrap();
        assert_eq!(law.rho_bar(0.0).unwrap(), 1.0);
        let law1 = LifetimeLaw::new(1.0).unwrap();
        assert!((law1.rho_bar(2.0f64.ln()).unwrap() - 0.5).abs() < 1e-15);
        assert!(law.rho_bar(-1e-9).is_err());
    }

    #[test]
    fn rho_bar_complements_density_integral() {
        let law = LifetimeLaw::new(1.3).unwrap();
        for &t in &[0.1, 0.5, 1.7, 4.0] {
            let head = adaptive_simpson(&|s| law.rho(s).unwrap(), 0.0, t, 1e-12, 60).unwrap();
            assert!((law.rho_bar(t).unwrap() + head - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rho_bar_closed_form_identity() {
        let law = LifetimeLaw::new(2.2).unwrap();
        let mut r = rng(7);
        for _ in 0..1000 {
            let t = law.sample_tau(&mut r);
            assert!((law.rho_bar(t).unwrap() - (-2.2 * t).exp()).abs() <= 1e-12);
        }
    }

    #[test]
    fn tau_sampling_moments() {
        let law = LifetimeLaw::new(1.0).unwrap();
        let m = 100_000usize;
        let mut r = rng(11);
        let draws: Vec<f64> = (0..m).map(|_| law.sample_tau(&mut r)).collect();
        assert!(draws.iter().all(|&t| t >= 0.0));
        let mean = draws.iter().sum::<f64>() / m as f64;
        let var = draws.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (m - 1) as f64;
        let se = (var / m as f64).sqrt();
        assert!((mean - 1.0).abs() <= 3.0 * se, "mean {mean} se {se}");
        // Empirical survival at a few points within a 3-sigma binomial band.
        for &t in &[0.3f64, 1.0, 2.0] {
            let p = (-t).exp();
            let k = draws.iter().filter(|&&d| d >= t).count() as f64 / m as f64;
            let band = 3.0 * (p * (1.0 - p) / m as f64).sqrt();
            assert!((k - p).abs() <= band, "t={t} k={k} p={p}");
        }
    }

    #[test]
    fn unit_jump_d1_moments() {
        let m = 100_000usize;
        let mut r = rng(3);
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for _ in 0..m {
            let z = sample_unit_jump(Dimension::One, &mut r);
            assert!(z[0].abs() <= 1.0 && z[1] == 0.0 && z[2] == 0.0);
            s1 += z[0];
            s2 += z[0] * z[0];
        }
        let mf = m as f64;
        // Var(Z) = 1/3, Var(Z^2) = 1/5 - 1/9 = 4/45.
        assert!((s1 / mf).abs() <= 4.0 * (1.0 / 3.0f64 / mf).sqrt());
        assert!((s2 / mf - 1.0 / 3.0).abs() <= 4.0 * (4.0 / 45.0f64 / mf).sqrt());
    }

    #[test]
    fn unit_jump_d2_radial_cdf() {
        let m = 100_000usize;
        let mut r = rng(5);
        let radii: Vec<f64> = (0..m)
            .map(|_| pnorm(sample_unit_jump(Dimension::Two, &mut r)))
            .collect();
        assert!(radii.iter().all(|&x| x <= 1.0));
        for &q in &[0.25f64, 0.5, 0.75] {
            let p = 1.0 - (1.0 - q * q).sqrt();
            let k = radii.iter().filter(|&&x| x <= q).count() as f64 / m as f64;
            let band = 4.0 * (p * (1.0 - p) / m as f64).sqrt();
            assert!((k - p).abs() <= band, "q={q} k={k} p={p}");
        }
    }

    #[test]
    fn unit_jump_d3_sphere() {
        let m = 100_000usize;
        let mut r = rng(9);
        let mut mean = [0.0f64; 3];
        for _ in 0..m {
            let z = sample_unit_jump(Dimension::Three, &mut r);
            assert!((pnorm(z) - 1.0).abs() <= 1e-12);
            mean = padd(mean, z);
        }
        // Each component has variance 1/3.
        let band = 4.0 * (1.0 / 3.0f64 / m as f64).sqrt();
        for c in mean {
            assert!((c / m as f64).abs() <= band);
        }
    }

    /// Kolmogorov-Smirnov check of the radial CDF of the jump laws.
    #[test]
    fn unit_jump_radial_ks() {
        let m = 100_000usize;
        // critical value at significance 1e-3
        let crit = ((2.0f64 / 1e-3).ln() / 2.0).sqrt() / (m as f64).sqrt();
        for (dim, cdf) in [
            (Dimension::One, (|r: f64| r) as fn(f64) -> f64),
            (Dimension::Two, |r: f64| 1.0 - (1.0 - r * r).max(0.0).sqrt()),
        ] {
            let mut r = rng(17);
            let mut radii: Vec<f64> = (0..m)
                .map(|_| pnorm(sample_unit_jump(dim, &mut r)))
                .collect();
            radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut sup = 0.0f64;
            for (i, &x) in radii.iter().enumerate() {
                let f = cdf(x);
                sup = sup.max((f - i as f64 / m as f64).abs());
                sup = sup.max(((i + 1) as f64 / m as f64 - f).abs());
            }
            assert!(sup <= crit, "dim {:?}: KS {sup} > {crit}", dim.as_usize());
        }
        // d=3: the radial law is a point mass at 1.
        let mut r = rng(17);
        for _ in 0..m {
            let z = sample_unit_jump(Dimension::Three, &mut r);
            assert!((pnorm(z) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn green_mass_values() {
        assert_eq!(green_mass(0.0), 0.0);
        assert_eq!(green_mass(2.5), 2.5);
        // d=1 kernel density is 1/2 on (-t, t): quadrature of the mass.
        let t = 1.3;
        let mass = adaptive_simpson(&|_z| 0.5, -t, t, 1e-12, 40).unwrap();
        assert!((mass - green_mass(t)).abs() < 1e-10);
    }

    #[test]
    fn position_stays_in_cone() {
        let x = [0.4, -0.2, 0.7];
        for dim in [Dimension::One, Dimension::Two, Dimension::Three] {
            let mut r = rng(23);
            let y = sample_position(x, 0.0, dim, &mut r);
            assert_eq!(y, x);
            for _ in 0..100_000 {
                let t = 0.9;
                let y = sample_position(x, t, dim, &mut r);
                assert!(pnorm(psub(y, x)) <= t + 1e-15);
            }
        }
    }

    #[test]
    fn position_variance_d1() {
        let m = 100_000usize;
        let mut r = rng(31);
        let mut s2 = 0.0;
        for _ in 0..m {
            let y = sample_position([0.0; 3], 1.0, Dimension::One, &mut r);
            s2 += y[0] * y[0];
        }
        let got = s2 / m as f64;
        let band = 4.0 * (4.0 / 45.0f64 / m as f64).sqrt();
        assert!((got - 1.0 / 3.0).abs() <= band, "var {got}");
    }

    #[test]
    fn dimension_validation() {
        assert!(Dimension::new(0).is_err());
        assert!(Dimension::new(4).is_err());
        assert_eq!(Dimension::new(2).unwrap().as_usize(), 2);
    }
}
