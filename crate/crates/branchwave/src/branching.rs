//! Branching-process simulation with deterministic offspring count, and
//! the exact law of the branch count.
//!
//! Trees are stored as a flat index arena with parent links. Randomness
//! is consumed in a fixed depth-first order (lifetime first, then jump,
//! children expanded left to right), so a given rng state always yields
//! the same tree bit for bit.

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::{padd, pscale, sample_unit_jump, Dimension, LifetimeLaw, Point};

#[derive(Clone, Copy, Debug)]
pub struct Particle {
    pub parent: Option<u32>,
    pub birth_time: f64,
    /// Death time clipped at the horizon.
    pub death_time: f64,
    /// Lifetime actually spent before the horizon: `death - birth`.
    pub delta: f64,
    pub position: Point,
    /// True iff the particle survives to the horizon (`death_time == t`).
    pub alive: bool,
}

#[derive(Clone, Debug)]
pub struct BranchingTree {
    pub particles: Vec<Particle>,
    pub alive_set: Vec<u32>,
    pub dead_set: Vec<u32>,
    /// Set when the particle cap was hit; such trees must be rejected by
    /// consumers, never silently used.
    pub truncated: bool,
}

impl BranchingTree {
    /// Number of branch events before the horizon (the dead-set size).
    pub fn branch_count(&self) -> usize {
        self.dead_set.len()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BranchingConfig {
    /// Offspring count per branch event; 1 gives a chain.
    pub offspring: u32,
    pub horizon: f64,
    pub root: Point,
    pub law: LifetimeLaw,
    pub dim: Dimension,
    pub particle_cap: usize,
}

impl BranchingConfig {
    pub fn new(
        offspring: u32,
        horizon: f64,
        root: Point,
        law: LifetimeLaw,
        dim: Dimension,
    ) -> Result<Self> {
        if offspring == 0 {
            return Err(Error::invalid("offspring count must be >= 1"));
        }
        if !horizon.is_finite() || horizon < 0.0 {
            return Err(Error::domain(format!("horizon must be >= 0, got {horizon}")));
        }
        Ok(BranchingConfig {
            offspring,
            horizon,
            root,
            law,
            dim,
            particle_cap: 1_000_000,
        })
    }

    pub fn with_cap(mut self, cap: usize) -> Result<Self> {
        if cap == 0 {
            return Err(Error::invalid("particle cap must be >= 1"));
        }
        self.particle_cap = cap;
        Ok(self)
    }
}

/// Simulate the single-offspring chain. Requires `offspring == 1`.
pub fn simulate_chain<R: Rng>(cfg: &BranchingConfig, rng: &mut R) -> Result<BranchingTree> {
    if cfg.offspring != 1 {
        return Err(Error::invalid("simulate_chain requires offspring == 1"));
    }
    Ok(simulate(cfg, rng))
}

/// Simulate the depth-first p-ary tree. Requires `offspring >= 2`.
pub fn simulate_tree<R: Rng>(cfg: &BranchingConfig, rng: &mut R) -> Result<BranchingTree> {
    if cfg.offspring < 2 {
        return Err(Error::invalid("simulate_tree requires offspring >= 2"));
    }
    Ok(simulate(cfg, rng))
}

fn simulate<R: Rng>(cfg: &BranchingConfig, rng: &mut R) -> BranchingTree {
    let t = cfg.horizon;
    let mut particles: Vec<Particle> = Vec::new();
    let mut alive_set = Vec::new();
    let mut dead_set = Vec::new();
    let mut truncated = false;
    // Pending slots: parent index, or None for the root. Children are
    // pushed in reverse so the leftmost child is expanded first.
    let mut stack: Vec<Option<u32>> = vec![None];
    while let Some(parent) = stack.pop() {
        if particles.len() >= cfg.particle_cap {
            truncated = true;
            break;
        }
        let (birth, start) = match parent {
            None => (0.0, cfg.root),
            Some(pi) => {
                let p = &particles[pi as usize];
                (p.death_time, p.position)
            }
        };
        let tau = cfg.law.sample_tau(rng);
        let alive = birth + tau >= t;
        let death = if alive { t } else { birth + tau };
        let delta = death - birth;
        let z = sample_unit_jump(cfg.dim, rng);
        let position = padd(start, pscale(delta, z));
        let idx = particles.len() as u32;
        particles.push(Particle {
            parent,
            birth_time: birth,
            death_time: death,
            delta,
            position,
            alive,
        });
        if alive {
            alive_set.push(idx);
        } else {
            dead_set.push(idx);
            for _ in 0..cfg.offspring {
                stack.push(Some(idx));
            }
        }
    }
    let tree = BranchingTree {
        particles,
        alive_set,
        dead_set,
        truncated,
    };
    #[cfg(debug_assertions)]
    validate_tree(&tree, cfg);
    tree
}

/// Structural invariants, checked on every simulated tree in debug
/// builds.
#[cfg(debug_assertions)]
fn validate_tree(tree: &BranchingTree, cfg: &BranchingConfig) {
    use crate::kernels::{pnorm, psub};
    for p in &tree.particles {
        debug_assert!(p.delta >= 0.0);
        debug_assert_eq!(p.alive, p.death_time == cfg.horizon);
        debug_assert!(pnorm(psub(p.position, cfg.root)) <= p.death_time + 1e-12);
    }
    if !tree.truncated {
        debug_assert_eq!(
            tree.alive_set.len(),
            (cfg.offspring as usize - 1) * tree.dead_set.len() + 1
        );
    }
}

/// Line-oriented debug dump: one particle per line with
/// `id parent birth death x y z alive`.
pub fn dump_tree(tree: &BranchingTree) -> String {
    let mut out = String::new();
    for (i, p) in tree.particles.iter().enumerate() {
        let parent = p
            .parent
            .map(|q| q.to_string())
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            i,
            parent,
            p.birth_time,
            p.death_time,
            p.position[0],
            p.position[1],
            p.position[2],
            if p.alive { "alive" } else { "dead" }
        ));
    }
    if tree.truncated {
        out.push_str("# truncated\n");
    }
    out
}

/// Coefficients `q_n` of the branch-count law: `q_0 = 1` and
/// `q_n = conv_p(q)(n-1) / (n (p-1))` where `conv_p` is the p-fold
/// convolution power. Equal to the generalized binomial
/// `(-1)^n C(-1/(p-1), n)`.
pub fn q_coefficients(p: u32, n_max: usize) -> Result<Vec<f64>> {
    if p < 2 {
        return Err(Error::invalid("q_coefficients requires p >= 2"));
    }
    let mut q = vec![0.0; n_max + 1];
    q[0] = 1.0;
    for n in 1..=n_max {
        let c = conv_power_at(&q[..n], p as usize, n - 1);
        q[n] = c / (n as f64 * (p as f64 - 1.0));
    }
    Ok(q)
}

/// Coefficient of x^m in the p-th power of the polynomial with the given
/// coefficients, by iterated pairwise convolution.
fn conv_power_at(coeffs: &[f64], p: usize, m: usize) -> f64 {
    let mut acc = vec![0.0; m + 1];
    for (i, v) in coeffs.iter().take(m + 1).enumerate() {
        acc[i] = *v;
    }
    for _ in 1..p {
        let mut next = vec![0.0; m + 1];
        for (i, a) in acc.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (j, b) in coeffs.iter().take(m + 1 - i).enumerate() {
                next[i + j] += a * b;
            }
        }
        acc = next;
    }
    acc[m]
}

fn q_log_gamma(p: u32, n: usize) -> f64 {
    // q_n = Gamma(n + s) / (Gamma(n+1) Gamma(s)), s = 1/(p-1)
    let s = 1.0 / (p as f64 - 1.0);
    (libm::lgamma(n as f64 + s) - libm::lgamma(n as f64 + 1.0) - libm::lgamma(s)).exp()
}

const Q_RECURRENCE_LIMIT: usize = 64;

fn q_value(p: u32, n: usize) -> f64 {
    if n <= Q_RECURRENCE_LIMIT {
        q_coefficients(p, n).expect("p >= 2 checked by callers")[n]
    } else {
        q_log_gamma(p, n)
    }
}

/// Probability of exactly `n` branch events before time `t` in the
/// p-ary tree (p >= 2):
/// `q_n exp(-lambda t) (1 - exp(-lambda t (p-1)))^n`.
pub fn branch_count_pmf(n: usize, p: u32, lambda: f64, t: f64) -> Result<f64> {
    if p < 2 {
        return Err(Error::invalid("branch_count_pmf requires p >= 2"));
    }
    if t < 0.0 || lambda <= 0.0 {
        return Err(Error::domain("branch_count_pmf requires t >= 0, lambda > 0"));
    }
    let x = 1.0 - (-(lambda * t) * (p as f64 - 1.0)).exp();
    Ok(q_value(p, n) * (-(lambda * t)).exp() * x.powi(n as i32))
}

/// Table of the pmf for n = 0..=n_max, computed with a single recurrence
/// pass.
pub fn branch_count_pmf_table(n_max: usize, p: u32, lambda: f64, t: f64) -> Result<Vec<f64>> {
    if p < 2 {
        return Err(Error::invalid("branch_count_pmf_table requires p >= 2"));
    }
    let x = 1.0 - (-(lambda * t) * (p as f64 - 1.0)).exp();
    let e = (-(lambda * t)).exp();
    let q = if n_max <= Q_RECURRENCE_LIMIT {
        q_coefficients(p, n_max)?
    } else {
        let mut q = q_coefficients(p, Q_RECURRENCE_LIMIT)?;
        for n in Q_RECURRENCE_LIMIT + 1..=n_max {
            q.push(q_log_gamma(p, n));
        }
        q
    };
    Ok(q.iter()
        .enumerate()
        .map(|(n, qn)| qn * e * x.powi(n as i32))
        .collect())
}

/// First and second moments of the branch count for p >= 2:
/// mean `(e^{lambda t (p-1)} - 1)/(p-1)`, second moment
/// `mean + p mean^2`.
pub fn branch_count_moments(p: u32, lambda: f64, t: f64) -> Result<(f64, f64)> {
    if p < 2 {
        return Err(Error::invalid("branch_count_moments requires p >= 2"));
    }
    if t < 0.0 || lambda <= 0.0 {
        return Err(Error::domain("branch_count_moments requires t >= 0, lambda > 0"));
    }
    let mean = ((lambda * t * (p as f64 - 1.0)).exp() - 1.0) / (p as f64 - 1.0);
    Ok((mean, mean + p as f64 * mean * mean))
}
