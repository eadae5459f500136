//! Monte Carlo estimation of the wave solution through its three
//! stochastic representations: single-particle (linear), chain
//! (single-offspring coefficient), and p-ary tree (power nonlinearity).
//!
//! Sample `i` always draws from the counter-based stream keyed
//! `(seed, i)`, and aggregation runs as a sequential pass over the
//! per-sample values, so the result is bit-identical for any worker
//! count. The parallel path is compiled in with the `parallel` feature
//! (on by default); without it the driver runs sequentially.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::branching::{simulate_chain, simulate_tree, BranchingConfig, BranchingTree};
use crate::error::{Error, Result};
use crate::kernels::{padd, pscale, sample_unit_jump, Dimension, LifetimeLaw, Point};

pub type SpaceFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
pub type SpaceTimeFn = Arc<dyn Fn(f64, Point) -> f64 + Send + Sync>;

/// Problem definition shared by all estimators. `power` selects the
/// representation: 0 linear, 1 chain, >= 2 tree.
#[derive(Clone)]
pub struct WaveProblem {
    pub dim: Dimension,
    /// Horizon `T`; estimates are taken at `t <= T`.
    pub horizon: f64,
    pub law: LifetimeLaw,
    pub power: u32,
    /// Initial velocity, with its declared sup-norm.
    pub f: SpaceFn,
    pub f_sup: f64,
    /// Coefficient of the `u^p` source (unused when `power == 0`).
    pub c: SpaceTimeFn,
    pub c_sup: f64,
    /// Fixed source for the linear case.
    pub source: Option<SpaceTimeFn>,
    pub source_sup: f64,
    pub particle_cap: usize,
}

impl WaveProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dim: Dimension,
        horizon: f64,
        law: LifetimeLaw,
        power: u32,
        f: SpaceFn,
        f_sup: f64,
        c: SpaceTimeFn,
        c_sup: f64,
    ) -> Result<Self> {
        if !horizon.is_finite() || horizon < 0.0 {
            return Err(Error::domain(format!("horizon must be >= 0, got {horizon}")));
        }
        if f_sup.is_nan() || f_sup < 0.0 || c_sup.is_nan() || c_sup < 0.0 {
            return Err(Error::domain("declared sup-norms must be >= 0"));
        }
        Ok(WaveProblem {
            dim,
            horizon,
            law,
            power,
            f,
            f_sup,
            c,
            c_sup,
            source: None,
            source_sup: 0.0,
            particle_cap: 1_000_000,
        })
    }

    pub fn with_source(mut self, source: SpaceTimeFn, source_sup: f64) -> Self {
        self.source = Some(source);
        self.source_sup = source_sup;
        self
    }

    fn eval_f(&self, x: Point) -> Result<f64> {
        checked_eval((self.f)(x), self.f_sup, "f")
    }

    fn eval_c(&self, s: f64, x: Point) -> Result<f64> {
        checked_eval((self.c)(s, x), self.c_sup, "c")
    }

    fn eval_source(&self, s: f64, x: Point) -> Result<f64> {
        let src = self
            .source
            .as_ref()
            .ok_or_else(|| Error::invalid("linear estimator requires a source term"))?;
        checked_eval(src(s, x), self.source_sup, "source")
    }
}

fn checked_eval(v: f64, sup: f64, name: &str) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::domain(format!("{name} evaluated to a non-finite value")));
    }
    if v.abs() > sup + 1e-9 * (1.0 + sup) {
        return Err(Error::domain(format!(
            "{name} exceeded its declared sup-norm: |{v}| > {sup}"
        )));
    }
    Ok(v)
}

/// Replace the displaced initial-position problem by the zero-initial
/// one: returns the source with the Laplacian of `f1` added (central
/// second differences, step 1e-4).
pub fn reduce_problem(
    f1: SpaceFn,
    f2: SpaceFn,
    source: SpaceTimeFn,
    dim: Dimension,
) -> (SpaceFn, SpaceTimeFn) {
    let d = dim.as_usize();
    let tilde: SpaceTimeFn = Arc::new(move |s: f64, x: Point| {
        let h = 1e-4;
        let mut lap = 0.0;
        let f0 = f1(x);
        for i in 0..d {
            let mut up = x;
            up[i] += h;
            let mut dn = x;
            dn[i] -= h;
            lap += (f1(up) - 2.0 * f0 + f1(dn)) / (h * h);
        }
        source(s, x) + lap
    });
    (f2, tilde)
}

/// Outcome of the smallness gate for the tree representation.
#[derive(Clone, Copy, Debug)]
pub enum WellPosedness {
    /// `power < 2`: no gate applies.
    NotApplicable,
    Checked {
        pass: bool,
        /// `max(f_sup, c_sup) / threshold`; pass iff < 1.
        margin: f64,
        threshold: f64,
    },
}

impl WellPosedness {
    pub fn passed(&self) -> bool {
        match self {
            WellPosedness::NotApplicable => true,
            WellPosedness::Checked { pass, .. } => *pass,
        }
    }
}

/// Smallness threshold for the data of the p-ary representation:
/// `(1/2T) (lambda (2p+1)(2p+3) / (T (e^{lambda T (p-1)} - 1)))^{1/2p}`.
pub fn check_wellposed(problem: &WaveProblem) -> WellPosedness {
    if problem.power < 2 {
        return WellPosedness::NotApplicable;
    }
    let threshold = wellposed_threshold(problem.power, problem.law.lambda(), problem.horizon);
    let data = problem.f_sup.max(problem.c_sup);
    let margin = if threshold.is_infinite() {
        0.0
    } else {
        data / threshold
    };
    WellPosedness::Checked {
        pass: margin < 1.0,
        margin,
        threshold,
    }
}

pub fn wellposed_threshold(p: u32, lambda: f64, horizon: f64) -> f64 {
    if horizon == 0.0 {
        return f64::INFINITY;
    }
    let pf = p as f64;
    let grow = (lambda * horizon * (pf - 1.0)).exp() - 1.0;
    (lambda * (2.0 * pf + 1.0) * (2.0 * pf + 3.0) / (horizon * grow)).powf(1.0 / (2.0 * pf))
        / (2.0 * horizon)
}

/// Point estimate with sampling diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct EstimatorReport {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
    pub seed: u64,
    pub rejected_samples: usize,
    pub max_abs_weight: f64,
}

/// Monte Carlo run parameters.
#[derive(Clone, Copy, Debug)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
    pub workers: usize,
}

impl McConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        McConfig {
            samples,
            seed,
            workers: 1,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }
}

/// One sample outcome: either a weight value or a rejection (capped
/// tree). Rejections are excluded from the average and counted.
#[derive(Clone, Copy, Debug)]
pub struct SampleValue {
    pub value: f64,
    pub rejected: bool,
}

/// Counter-based stream for sample `i` of a run keyed by `seed`.
pub fn sample_stream(seed: u64, i: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i);
    rng
}

/// Deterministic parallel driver: evaluates the task on streams
/// `(seed, 0..samples)` and aggregates with a sequential Welford pass.
pub fn mc_driver<F>(task: &F, mc: &McConfig) -> Result<EstimatorReport>
where
    F: Fn(&mut ChaCha8Rng) -> Result<SampleValue> + Sync,
{
    if mc.samples == 0 {
        return Err(Error::invalid("sample count must be >= 1"));
    }
    if mc.workers == 0 {
        return Err(Error::invalid("worker count must be >= 1"));
    }
    let run = |i: u64| -> Result<SampleValue> {
        let mut rng = sample_stream(mc.seed, i);
        task(&mut rng)
    };
    let outcomes = run_all(mc, &run)?;

    let mut mean = 0.0f64;
    let mut m2 = 0.0f64;
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    let mut max_abs = 0.0f64;
    for sv in &outcomes {
        if sv.rejected {
            rejected += 1;
            continue;
        }
        accepted += 1;
        max_abs = max_abs.max(sv.value.abs());
        let delta = sv.value - mean;
        mean += delta / accepted as f64;
        m2 += delta * (sv.value - mean);
    }
    if accepted == 0 {
        return Err(Error::Tolerance(
            "all samples were rejected (particle cap); nothing to average".into(),
        ));
    }
    let std_error = if accepted > 1 {
        (m2 / (accepted as f64 - 1.0) / accepted as f64).sqrt()
    } else {
        0.0
    };
    Ok(EstimatorReport {
        estimate: mean,
        std_error,
        samples: mc.samples,
        seed: mc.seed,
        rejected_samples: rejected,
        max_abs_weight: max_abs,
    })
}

/// Thread pools are cached per worker count; building one per call
/// would dominate short runs.
#[cfg(feature = "parallel")]
fn pool_for(workers: usize) -> Result<std::sync::Arc<rayon::ThreadPool>> {
    use std::collections::HashMap;
    use std::sync::{Arc as SArc, Mutex, OnceLock};
    static POOLS: OnceLock<Mutex<HashMap<usize, SArc<rayon::ThreadPool>>>> = OnceLock::new();
    let pools = POOLS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = pools.lock().expect("pool cache poisoned");
    if let Some(p) = guard.get(&workers) {
        return Ok(p.clone());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let pool = SArc::new(pool);
    guard.insert(workers, pool.clone());
    Ok(pool)
}

#[cfg(feature = "parallel")]
fn run_all<F>(mc: &McConfig, run: &F) -> Result<Vec<SampleValue>>
where
    F: Fn(u64) -> Result<SampleValue> + Sync,
{
    use rayon::prelude::*;
    if mc.workers > 1 {
        let pool = pool_for(mc.workers)?;
        let results: Vec<Result<SampleValue>> =
            pool.install(|| (0..mc.samples as u64).into_par_iter().map(run).collect());
        results.into_iter().collect()
    } else {
        (0..mc.samples as u64).map(run).collect()
    }
}

#[cfg(not(feature = "parallel"))]
fn run_all<F>(mc: &McConfig, run: &F) -> Result<Vec<SampleValue>>
where
    F: Fn(u64) -> Result<SampleValue> + Sync,
{
    (0..mc.samples as u64).map(run).collect()
}

/// Sign and log-magnitude accumulator for weight products; keeps deep
/// chains away from overflow and underflow.
#[derive(Clone, Copy)]
struct LogProduct {
    sign: f64,
    log_mag: f64,
    zero: bool,
}

impl LogProduct {
    fn one() -> Self {
        LogProduct {
            sign: 1.0,
            log_mag: 0.0,
            zero: false,
        }
    }

    fn mul(&mut self, v: f64) {
        if self.zero {
            return;
        }
        if v == 0.0 {
            self.zero = true;
            return;
        }
        self.sign *= v.signum();
        self.log_mag += v.abs().ln();
    }

    /// Multiply by `delta / rho(delta)` or `delta / rho_bar(delta)` in
    /// log space: both equal `delta e^{lambda delta}` up to the `1/lambda`
    /// factor of the dead case.
    fn mul_time_weight(&mut self, delta: f64, lambda: f64, dead: bool) {
        if self.zero {
            return;
        }
        if delta == 0.0 {
            self.zero = true;
            return;
        }
        self.log_mag += delta.ln() + lambda * delta;
        if dead {
            self.log_mag -= lambda.ln();
        }
    }

    fn value(&self) -> f64 {
        if self.zero {
            0.0
        } else {
            self.sign * self.log_mag.exp()
        }
    }
}

fn check_time(problem: &WaveProblem, t: f64) -> Result<()> {
    if t < 0.0 || t > problem.horizon {
        return Err(Error::domain(format!(
            "evaluation time {t} outside [0, {}]",
            problem.horizon
        )));
    }
    Ok(())
}

/// Linear estimator (power 0): single lifetime and jump per sample;
/// surviving particles carry the initial velocity, dead ones the source.
pub fn estimate_linear(
    problem: &WaveProblem,
    t: f64,
    x: Point,
    mc: &McConfig,
) -> Result<EstimatorReport> {
    check_time(problem, t)?;
    if problem.source.is_none() {
        return Err(Error::invalid("linear estimator requires a source term"));
    }
    let task = move |rng: &mut ChaCha8Rng| -> Result<SampleValue> {
        let tau = problem.law.sample_tau(rng);
        let z = sample_unit_jump(problem.dim, rng);
        let value = if tau >= t {
            t / problem.law.rho_bar(t)? * problem.eval_f(padd(x, pscale(t, z)))?
        } else {
            tau / problem.law.rho(tau)? * problem.eval_source(t - tau, padd(x, pscale(tau, z)))?
        };
        Ok(SampleValue {
            value,
            rejected: false,
        })
    };
    mc_driver(&task, mc)
}

fn tree_sample_value(problem: &WaveProblem, t: f64, tree: &BranchingTree) -> Result<SampleValue> {
    if tree.truncated {
        return Ok(SampleValue {
            value: 0.0,
            rejected: true,
        });
    }
    let lambda = problem.law.lambda();
    let mut prod = LogProduct::one();
    for &i in &tree.alive_set {
        let p = &tree.particles[i as usize];
        prod.mul_time_weight(p.delta, lambda, false);
        prod.mul(problem.eval_f(p.position)?);
    }
    for &i in &tree.dead_set {
        let p = &tree.particles[i as usize];
        prod.mul_time_weight(p.delta, lambda, true);
        prod.mul(problem.eval_c(t - p.death_time, p.position)?);
    }
    Ok(SampleValue {
        value: prod.value(),
        rejected: false,
    })
}

/// Chain estimator (power 1): the single alive particle carries the
/// initial velocity, every dead one a coefficient factor.
pub fn estimate_perturbative(
    problem: &WaveProblem,
    t: f64,
    x: Point,
    mc: &McConfig,
) -> Result<EstimatorReport> {
    check_time(problem, t)?;
    if problem.power != 1 {
        return Err(Error::invalid("estimate_perturbative requires power == 1"));
    }
    let cfg = BranchingConfig::new(1, t, x, problem.law, problem.dim)?
        .with_cap(problem.particle_cap)?;
    let task = move |rng: &mut ChaCha8Rng| -> Result<SampleValue> {
        let tree = simulate_chain(&cfg, rng)?;
        tree_sample_value(problem, t, &tree)
    };
    mc_driver(&task, mc)
}

/// Tree estimator (power >= 2). Refuses configurations that fail the
/// smallness gate.
pub fn estimate_nonlinear(
    problem: &WaveProblem,
    t: f64,
    x: Point,
    mc: &McConfig,
) -> Result<EstimatorReport> {
    check_time(problem, t)?;
    if problem.power < 2 {
        return Err(Error::invalid("estimate_nonlinear requires power >= 2"));
    }
    if let WellPosedness::Checked { pass: false, margin, threshold } = check_wellposed(problem) {
        return Err(Error::IllPosed(format!(
            "data sup {} exceeds smallness threshold {threshold} (margin {margin:.3})",
            problem.f_sup.max(problem.c_sup)
        )));
    }
    let cfg = BranchingConfig::new(problem.power, t, x, problem.law, problem.dim)?
        .with_cap(problem.particle_cap)?;
    let task = move |rng: &mut ChaCha8Rng| -> Result<SampleValue> {
        let tree = simulate_tree(&cfg, rng)?;
        tree_sample_value(problem, t, &tree)
    };
    mc_driver(&task, mc)
}
