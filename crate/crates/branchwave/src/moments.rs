//! Closed-form and recurrence-based exact values that the stochastic
//! estimators must reproduce: time-weight expectations, the
//! combinatorial sequences behind them, and conditioned-simulation
//! cross-checks.
//!
//! `i_n_chain`/`j_n_chain` and `i_np`/`j_np_bound` are the first and
//! second moments of the time-weight product restricted to the event of
//! exactly `n` branchings; the event probability is already included,
//! so summing over `n` gives unconditional expectations directly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::branching::{
    branch_count_pmf, simulate_chain, simulate_tree, BranchingConfig, BranchingTree,
};
use crate::error::{Error, Result};
use crate::kernels::{Dimension, LifetimeLaw};

const SERIES_TERM_FLOOR: f64 = 1e-15;
const SERIES_TERM_CAP: usize = 400;

fn ln_factorial(k: u64) -> f64 {
    libm::lgamma(k as f64 + 1.0)
}

/// Chain weight-product mass on the event of n branchings:
/// `t^{2n+1} / (2n+1)!`.
pub fn i_n_chain(n: usize, t: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    ((2.0 * n as f64 + 1.0) * t.ln() - ln_factorial(2 * n as u64 + 1)).exp()
}

/// Chain squared-weight mass on the event of n branchings:
/// `2^{n+1} e^{lambda t} t^{3n+2} / (lambda^n (3n+2)!)`.
pub fn j_n_chain(n: usize, t: f64, lambda: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    let nf = n as f64;
    ((nf + 1.0) * 2.0f64.ln() + lambda * t + (3.0 * nf + 2.0) * t.ln()
        - nf * lambda.ln()
        - ln_factorial(3 * n as u64 + 2))
    .exp()
}

/// p-fold convolution power of `seq` up to order `n_max`, by the
/// one-pass recurrence (no nested summation). Requires `seq[0] != 0`.
pub fn depril_convolution_power(seq: &[f64], p: u32, n_max: usize) -> Result<Vec<f64>> {
    if seq.is_empty() || seq[0] == 0.0 {
        return Err(Error::domain(
            "depril_convolution_power requires a nonzero leading coefficient",
        ));
    }
    let at = |j: usize| -> f64 { seq.get(j).copied().unwrap_or(0.0) };
    if p == 1 {
        return Ok((0..=n_max).map(at).collect());
    }
    let pf = p as f64;
    let mut g = vec![0.0; n_max + 1];
    g[0] = seq[0].powi(p as i32);
    for m in 1..=n_max {
        let mut acc = 0.0;
        for j in 1..=m {
            let fj = at(j);
            if fj == 0.0 {
                continue;
            }
            acc += ((pf + 1.0) * j as f64 / m as f64 - 1.0) * fj * g[m - j];
        }
        g[m] = acc / seq[0];
    }
    Ok(g)
}

/// Incremental p-fold self-convolution used while a sequence is being
/// built: `g[m]` only consumes `a[1..=m]`, so it can run interleaved
/// with the recurrence that defines `a`.
fn conv_step(a: &[f64], g: &mut Vec<f64>, p: f64, m: usize) {
    let mut acc = 0.0;
    for j in 1..=m {
        if a[j] == 0.0 {
            continue;
        }
        acc += ((p + 1.0) * j as f64 / m as f64 - 1.0) * a[j] * g[m - j];
    }
    g.push(acc);
}

/// Tree weight coefficients: `a_0 = 1`,
/// `a_n = conv_p(a)(n-1) / ((p+1) n ((p+1) n + 1))`.
pub fn a_sequence(p: u32, n_max: usize) -> Result<Vec<f64>> {
    if p < 2 {
        return Err(Error::invalid("a_sequence requires p >= 2"));
    }
    let pf = p as f64;
    let mut a = vec![1.0];
    let mut g = vec![1.0];
    for n in 1..=n_max {
        // extend the convolution to order n-1 before using it
        while g.len() < n {
            let m = g.len();
            conv_step(&a, &mut g, pf, m);
        }
        let d = (pf + 1.0) * n as f64;
        a.push(g[n - 1] / (d * (d + 1.0)));
    }
    Ok(a)
}

/// Tree squared-weight coefficients: `b_0 = 1`,
/// `b_n = conv_p(b)(n-1) / ((2p+1) n ((2p+1) n + 1) ((2p+1) n + 2))`.
pub fn b_sequence(p: u32, n_max: usize) -> Result<Vec<f64>> {
    if p < 2 {
        return Err(Error::invalid("b_sequence requires p >= 2"));
    }
    let pf = p as f64;
    let mut b = vec![1.0];
    let mut g = vec![1.0];
    for n in 1..=n_max {
        while g.len() < n {
            let m = g.len();
            conv_step(&b, &mut g, pf, m);
        }
        let d = (2.0 * pf + 1.0) * n as f64;
        b.push(g[n - 1] / (d * (d + 1.0) * (d + 2.0)));
    }
    Ok(b)
}

/// Tree weight-product mass on the event of n branchings (p >= 2):
/// `a_{n,p} t^{(p+1)n + 1}`.
pub fn i_np(n: usize, p: u32, t: f64) -> Result<f64> {
    let a = a_sequence(p, n)?;
    Ok(a[n] * t.powi(((p as usize + 1) * n + 1) as i32))
}

/// Proven upper bound for the tree squared-weight mass (p >= 2):
/// `(2/lambda)^n b_{n,p} t^{(2p+1)n + 2} e^{lambda t ((p-1)n + 1)}`.
pub fn j_np_bound(n: usize, p: u32, t: f64, lambda: f64) -> Result<f64> {
    let b = b_sequence(p, n)?;
    let nf = n as f64;
    let pf = p as f64;
    Ok((2.0 / lambda).powi(n as i32)
        * b[n]
        * t.powi(((2 * p as usize + 1) * n + 2) as i32)
        * (lambda * t * ((pf - 1.0) * nf + 1.0)).exp())
}

/// Exact solution value for constant data in the single-offspring case:
/// the series `f * sum_n c^n t^{2n+1} / (2n+1)!`, truncated when terms
/// fall below the floor. The lifetime rate cancels exactly, so it does
/// not appear.
pub fn chain_series_solution(t: f64, f_const: f64, c_const: f64) -> f64 {
    let mut total = 0.0;
    for n in 0..SERIES_TERM_CAP {
        let term = f_const * c_const.powi(n as i32) * i_n_chain(n, t);
        total += term;
        if term.abs() < SERIES_TERM_FLOOR && n >= 1 {
            break;
        }
    }
    total
}

/// Exact solution value for constant data in the p-ary case (p >= 2):
/// `f^{(p-1)n+1} c^n` weighted sums of the tree masses.
pub fn tree_series_solution(t: f64, f_const: f64, c_const: f64, p: u32) -> Result<f64> {
    let a = a_sequence(p, SERIES_TERM_CAP)?;
    let mut total = 0.0;
    for (n, an) in a.iter().enumerate() {
        let term = f_const.powi(((p as usize - 1) * n + 1) as i32)
            * c_const.powi(n as i32)
            * an
            * t.powi(((p as usize + 1) * n + 1) as i32);
        total += term;
        if term.abs() < SERIES_TERM_FLOOR && n >= 1 {
            break;
        }
    }
    Ok(total)
}

/// Closed-form rows n = 0..=n_max for one (p, lambda, t) configuration,
/// exported as CSV by the CLI.
#[derive(Clone, Debug)]
pub struct MomentTable {
    pub p: u32,
    pub lambda: f64,
    pub t: f64,
    pub i_chain: Vec<f64>,
    pub j_chain: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub i_tree: Vec<f64>,
    pub j_tree_bound: Vec<f64>,
    /// Per-row audit of the closed-form coefficient bounds.
    pub bounds_pass: Vec<bool>,
}

pub fn moment_table(p: u32, lambda: f64, t: f64, n_max: usize) -> Result<MomentTable> {
    if p < 2 {
        return Err(Error::invalid("moment_table requires p >= 2"));
    }
    let a = a_sequence(p, n_max)?;
    let b = b_sequence(p, n_max)?;
    let pf = p as f64;
    let mut bounds_pass = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let ok = if n == 0 {
            a[0] == 1.0 && b[0] == 1.0
        } else {
            let nf = n as f64;
            let a_bound = 1.0 / ((pf + 1.0) * nf) / (pf + 2.0).powi(n as i32);
            let b_bound =
                1.0 / ((pf + 1.0) * nf) / (2.0 * (2.0 * pf + 1.0) * (2.0 * pf + 3.0)).powi(n as i32);
            a[n] <= a_bound * (1.0 + 1e-12) && b[n] <= b_bound * (1.0 + 1e-12)
        };
        bounds_pass.push(ok);
    }
    Ok(MomentTable {
        p,
        lambda,
        t,
        i_chain: (0..=n_max).map(|n| i_n_chain(n, t)).collect(),
        j_chain: (0..=n_max).map(|n| j_n_chain(n, t, lambda)).collect(),
        i_tree: (0..=n_max)
            .map(|n| a[n] * t.powi(((p as usize + 1) * n + 1) as i32))
            .collect(),
        j_tree_bound: (0..=n_max)
            .map(|n| j_np_bound(n, p, t, lambda).unwrap())
            .collect(),
        a,
        b,
        bounds_pass,
    })
}

/// Conditioned-simulation estimate of a weight-product mass: simulate
/// until `kept_target` realizations with exactly `n` branchings are
/// collected, average the weight (and its square) over those, and scale
/// by the analytic event probability.
#[derive(Clone, Copy, Debug)]
pub struct ConditionedMoment {
    /// Estimate of E[W 1{N=n}] and its standard error.
    pub first: f64,
    pub first_se: f64,
    /// Estimate of E[W^2 1{N=n}] and its standard error.
    pub second: f64,
    pub second_se: f64,
    pub kept: usize,
    pub trials: usize,
}

fn tree_time_weight(tree: &BranchingTree, law: LifetimeLaw) -> f64 {
    let lambda = law.lambda();
    let mut w = 1.0;
    for p in &tree.particles {
        // delta / rho_bar(delta) alive, delta / rho(delta) dead
        let base = p.delta * (lambda * p.delta).exp();
        w *= if p.alive { base } else { base / lambda };
    }
    w
}

fn conditioned_moment<F>(
    n: usize,
    kept_target: usize,
    seed: u64,
    mut simulate: F,
) -> Result<ConditionedMoment>
where
    F: FnMut(&mut ChaCha8Rng) -> Result<(usize, f64)>,
{
    if kept_target == 0 {
        return Err(Error::invalid("kept_target must be >= 1"));
    }
    let max_trials = 1_000 + kept_target.saturating_mul(5_000);
    let mut kept = 0usize;
    let mut trials = 0usize;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut s2sq = 0.0;
    let mut s1sq = 0.0;
    while kept < kept_target {
        if trials >= max_trials {
            return Err(Error::Tolerance(format!(
                "conditioning on n={n} accepted only {kept}/{kept_target} after {trials} trials"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trials as u64);
        trials += 1;
        let (count, w) = simulate(&mut rng)?;
        if count == n {
            kept += 1;
            s1 += w;
            s1sq += w * w;
            let w2 = w * w;
            s2 += w2;
            s2sq += w2 * w2;
        }
    }
    let kf = kept as f64;
    let mean1 = s1 / kf;
    let var1 = (s1sq / kf - mean1 * mean1).max(0.0);
    let mean2 = s2 / kf;
    let var2 = (s2sq / kf - mean2 * mean2).max(0.0);
    Ok(ConditionedMoment {
        first: mean1,
        first_se: (var1 / kf).sqrt(),
        second: mean2,
        second_se: (var2 / kf).sqrt(),
        kept,
        trials,
    })
}

/// Conditioned estimate of the chain masses `i_n_chain` / `j_n_chain`.
pub fn conditioned_chain_moment(
    n: usize,
    t: f64,
    law: LifetimeLaw,
    kept_target: usize,
    seed: u64,
) -> Result<ConditionedMoment> {
    let cfg = BranchingConfig::new(1, t, [0.0; 3], law, Dimension::One)?;
    let lambda_t = law.lambda() * t;
    let pmf = (-lambda_t).exp() * lambda_t.powi(n as i32) / ln_factorial(n as u64).exp();
    let raw = conditioned_moment(n, kept_target, seed, |rng| {
        let tree = simulate_chain(&cfg, rng)?;
        Ok((tree.branch_count(), tree_time_weight(&tree, law)))
    })?;
    Ok(scale_moment(raw, pmf))
}

/// Conditioned estimate of the tree masses `i_np` / `j_np` (p >= 2).
pub fn conditioned_tree_moment(
    n: usize,
    p: u32,
    t: f64,
    law: LifetimeLaw,
    kept_target: usize,
    seed: u64,
) -> Result<ConditionedMoment> {
    let cfg = BranchingConfig::new(p, t, [0.0; 3], law, Dimension::One)?;
    let pmf = branch_count_pmf(n, p, law.lambda(), t)?;
    let raw = conditioned_moment(n, kept_target, seed, |rng| {
        let tree = simulate_tree(&cfg, rng)?;
        if tree.truncated {
            return Err(Error::Tolerance("truncated tree in conditioned oracle".into()));
        }
        Ok((tree.branch_count(), tree_time_weight(&tree, law)))
    })?;
    Ok(scale_moment(raw, pmf))
}

fn scale_moment(raw: ConditionedMoment, pmf: f64) -> ConditionedMoment {
    ConditionedMoment {
        first: raw.first * pmf,
        first_se: raw.first_se * pmf,
        second: raw.second * pmf,
        second_se: raw.second_se * pmf,
        ..raw
    }
}
