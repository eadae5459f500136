//! Approximate multiplication networks: the sawtooth squaring
//! construction, a two-input product net on `[-R, R]^2`, the chained
//! k-input product, and the product of k given networks.
//!
//! Size bounds are certified against the construction itself: the depth
//! and parameter bound functions below use recorded constants derived
//! from the sawtooth depth formula, not assumed ones, and the test
//! suites audit measured sizes against them.

use super::net::{Layer, NeuralNet, SparseMatrix};
use super::ops::{compose, identity_net, parallelize};
use crate::error::{Error, Result};

/// Depth constant of the two-input product construction:
/// `H <= YAR_DEPTH_FACTOR * (log2(ceil(max(R,1))) + log2(ceil(1/eps))) +
/// YAR_DEPTH_OFFSET`.
pub const YAR_DEPTH_FACTOR: f64 = 3.0;
pub const YAR_DEPTH_OFFSET: f64 = 5.0;

/// Depth constant of the k-input product construction (see
/// [`kfold_hidden_bound`]).
pub const KFOLD_DEPTH_FACTOR: f64 = 6.0;

/// Number of sawtooth compositions needed for
/// `|xy - realize| <= eps` on `[-r, r]^2`: smallest `m >= 1` with
/// `r^2 2^{-2m-1} <= eps`.
fn sawtooth_steps(r: f64, eps: f64) -> usize {
    let need = (r * r / eps).log2() - 1.0;
    if need <= 2.0 {
        1
    } else {
        ((need / 2.0).ceil() as usize).max(1)
    }
}

/// Hidden-layer count of `yarotsky_product(r, eps)`.
pub fn yarotsky_depth(r: f64, eps: f64) -> usize {
    2 * sawtooth_steps(r, eps) + 1
}

/// Certified depth bound for the two-input product net (recorded
/// constants; always >= `yarotsky_depth`).
pub fn yarotsky_hidden_bound(r: f64, eps: f64) -> f64 {
    let lr = r.max(1.0).ceil().log2();
    let le = (1.0 / eps).ceil().log2();
    YAR_DEPTH_FACTOR * (lr + le) + YAR_DEPTH_OFFSET
}

/// Two-input network with `|xy - realize(x, y)| <= eps` on `[-r, r]^2`,
/// width 5, depth `2m + 1` for `m` sawtooth steps.
///
/// The product is recovered from two squarings,
/// `xy = r'^2 (s^2 - d^2)` with `s = |x+y|/(2r)`, `d = |x-y|/(2r)`, and
/// each squaring is the piecewise-linear interpolant produced by
/// composed sawtooth maps. The two chains run sequentially so the width
/// never exceeds 5.
pub fn yarotsky_product(r: f64, eps: f64) -> Result<NeuralNet> {
    if r.is_nan() || r <= 0.0 {
        return Err(Error::invalid("yarotsky_product requires r > 0"));
    }
    if eps.is_nan() || eps <= 0.0 || eps >= 0.5 {
        return Err(Error::invalid("yarotsky_product requires eps in (0, 1/2)"));
    }
    let m = sawtooth_steps(r, eps);
    let inv = 1.0 / (2.0 * r);
    let mut layers: Vec<Layer> = Vec::with_capacity(2 * m + 2);

    // absolute values of the scaled sum and difference
    let mut w1 = SparseMatrix::zeros(4, 2);
    w1.push(0, 0, inv);
    w1.push(0, 1, inv);
    w1.push(1, 0, -inv);
    w1.push(1, 1, -inv);
    w1.push(2, 0, inv);
    w1.push(2, 1, -inv);
    w1.push(3, 0, -inv);
    w1.push(3, 1, inv);
    layers.push(Layer::new(w1, vec![0.0; 4]));

    // channel layout inside a squaring chain:
    // 0..=2 sawtooth units of the running tooth, 3 accumulator, 4 carry
    let tooth = |w: &mut SparseMatrix, row: usize, src: &[(usize, f64)]| {
        for &(c, v) in src {
            w.push(row, c, v);
        }
    };
    // pre-activation of g_{j} from the previous tooth units
    let g_prev: &[(usize, f64)] = &[(0, 2.0), (1, -4.0), (2, 2.0)];

    // first squaring stage, reading the absolute-value layer
    let s_src: &[(usize, f64)] = &[(0, 1.0), (1, 1.0)];
    let d_src: &[(usize, f64)] = &[(2, 1.0), (3, 1.0)];
    let mut w = SparseMatrix::zeros(5, 4);
    tooth(&mut w, 0, s_src);
    tooth(&mut w, 1, s_src);
    tooth(&mut w, 2, s_src);
    tooth(&mut w, 3, s_src); // accumulator starts at s
    tooth(&mut w, 4, d_src); // carry d through the chain
    layers.push(Layer::new(w, vec![0.0, -0.5, -1.0, 0.0, 0.0]));

    for j in 1..m {
        let mut w = SparseMatrix::zeros(5, 5);
        tooth(&mut w, 0, g_prev);
        tooth(&mut w, 1, g_prev);
        tooth(&mut w, 2, g_prev);
        // acc_j = acc_{j-1} - g_j / 4^j
        let scale = -0.25f64.powi(j as i32);
        tooth(&mut w, 3, &[(3, 1.0), (0, 2.0 * scale), (1, -4.0 * scale), (2, 2.0 * scale)]);
        tooth(&mut w, 4, &[(4, 1.0)]);
        layers.push(Layer::new(w, vec![0.0, -0.5, -1.0, 0.0, 0.0]));
    }

    // second squaring stage on the carried d; the finished first square
    // moves into the carry channel
    let final_scale = -0.25f64.powi(m as i32);
    let finish: &[(usize, f64)] = &[
        (3, 1.0),
        (0, 2.0 * final_scale),
        (1, -4.0 * final_scale),
        (2, 2.0 * final_scale),
    ];
    let mut w = SparseMatrix::zeros(5, 5);
    tooth(&mut w, 0, &[(4, 1.0)]);
    tooth(&mut w, 1, &[(4, 1.0)]);
    tooth(&mut w, 2, &[(4, 1.0)]);
    tooth(&mut w, 3, &[(4, 1.0)]);
    tooth(&mut w, 4, finish);
    layers.push(Layer::new(w, vec![0.0, -0.5, -1.0, 0.0, 0.0]));

    for j in 1..m {
        let mut w = SparseMatrix::zeros(5, 5);
        tooth(&mut w, 0, g_prev);
        tooth(&mut w, 1, g_prev);
        tooth(&mut w, 2, g_prev);
        let scale = -0.25f64.powi(j as i32);
        tooth(&mut w, 3, &[(3, 1.0), (0, 2.0 * scale), (1, -4.0 * scale), (2, 2.0 * scale)]);
        tooth(&mut w, 4, &[(4, 1.0)]);
        layers.push(Layer::new(w, vec![0.0, -0.5, -1.0, 0.0, 0.0]));
    }

    // output: r^2 (f_m(s) - f_m(d))
    let r2 = r * r;
    let mut w = SparseMatrix::zeros(1, 5);
    w.push(0, 4, r2);
    w.push(0, 3, -r2);
    w.push(0, 0, -2.0 * final_scale * r2);
    w.push(0, 1, 4.0 * final_scale * r2);
    w.push(0, 2, -2.0 * final_scale * r2);
    layers.push(Layer::new(w, vec![0.0]));

    NeuralNet::new(layers)
}

/// k-input product network and its certified bounds.
pub struct KfoldProduct {
    pub net: NeuralNet,
    pub k: usize,
    pub r: f64,
    pub eps: f64,
    /// True when the `r >= 1` variant of the stage radii was used.
    pub large_range: bool,
    /// Certified sup error on `[-r, r]^k`.
    pub error_bound: f64,
    /// Certified output bound `k r^k` on `[-r, r]^k`.
    pub output_bound: f64,
}

fn stage_parameters(k: usize, r: f64, eps: f64) -> (Vec<(f64, f64)>, bool) {
    let large = r >= 1.0;
    let stages = (1..k)
        .map(|i| {
            let fi = i as f64;
            if large {
                (fi * r.powi(i as i32), eps)
            } else {
                ((fi * r.powi(i as i32)).max(r), eps * r.powi(i as i32 + 1))
            }
        })
        .collect();
    (stages, large)
}

/// Chained product of k inputs on `[-r, r]^k`:
/// error at most `(k-1) eps r^k`, output at most `k r^k`, width at most
/// `2k + 1`.
pub fn kfold_product(k: usize, r: f64, eps: f64) -> Result<KfoldProduct> {
    if k < 2 {
        return Err(Error::invalid("kfold_product requires k >= 2"));
    }
    if r.is_nan() || r <= 0.0 || eps.is_nan() || eps <= 0.0 || eps >= 0.5 {
        return Err(Error::invalid("kfold_product requires r > 0, eps in (0, 1/2)"));
    }
    let (stages, large_range) = stage_parameters(k, r, eps);
    let mut chain: Option<NeuralNet> = None;
    let mut error_bound = 0.0f64;
    for &(ri, ei) in &stages {
        let pair = yarotsky_product(ri, ei)?;
        chain = Some(match chain {
            None => pair,
            Some(prev) => {
                let id = identity_net(prev.hidden())?;
                let par = parallelize(&[prev, id], false)?;
                compose(&pair, &par)?
            }
        });
        error_bound = r * error_bound + ei;
    }
    Ok(KfoldProduct {
        net: chain.unwrap(),
        k,
        r,
        eps,
        large_range,
        error_bound,
        output_bound: k as f64 * r.powi(k as i32),
    })
}

/// Certified depth bound for [`kfold_product`] with recorded constants:
/// `KFOLD_DEPTH_FACTOR * k * (log2(ceil(1/eps)) + log2(k) + 1 +
/// k * (1 + |log2 ceil(r or 1/r)|))`.
pub fn kfold_hidden_bound(k: usize, r: f64, eps: f64) -> f64 {
    let kf = k as f64;
    let le = (1.0 / eps).ceil().log2();
    let lr = if r >= 1.0 {
        r.ceil().log2()
    } else {
        (1.0 / r).ceil().log2()
    };
    KFOLD_DEPTH_FACTOR * kf * (le + kf.log2() + 1.0 + kf * (1.0 + lr))
}

/// Certified parameter bound for [`kfold_product`]: every possible entry
/// of a net with the certified depth and width `2k + 1`.
pub fn kfold_param_bound(k: usize, r: f64, eps: f64) -> f64 {
    let w = 2.0 * k as f64 + 1.0;
    (kfold_hidden_bound(k, r, eps) + 1.0) * w * (w + 1.0)
}

/// Product of k scalar-output networks of equal depth, certified on the
/// region where every factor realization stays within `r_bound`.
pub struct ProductNet {
    pub net: NeuralNet,
    /// Certified product error (at most the requested eps).
    pub eps: f64,
    /// Per-stage accuracy handed to the k-input product core.
    pub stage_eps: f64,
    pub large_range: bool,
    /// Certified depth/parameter bounds for the assembled product.
    pub hidden_bound: f64,
    pub param_bound: f64,
}

/// Build the product network. `audit_points` are inputs at which the
/// factor bound `|realize| <= r_bound` is verified before assembly; a
/// violation is a bound-audit failure.
pub fn product_of_nets(
    nets: &[NeuralNet],
    r_bound: f64,
    eps: f64,
    audit_points: &[Vec<f64>],
) -> Result<ProductNet> {
    if nets.is_empty() {
        return Err(Error::invalid("product_of_nets needs at least one factor"));
    }
    if r_bound.is_nan() || r_bound <= 0.0 || eps.is_nan() || eps <= 0.0 {
        return Err(Error::invalid("product_of_nets requires r_bound > 0 and eps > 0"));
    }
    let h = nets[0].hidden();
    for n in nets {
        if n.hidden() != h {
            return Err(Error::invalid(
                "product_of_nets: factor depths differ (extend first)",
            ));
        }
        if n.output_dim() != 1 {
            return Err(Error::invalid("product_of_nets: factors must be scalar-valued"));
        }
    }
    for n in nets {
        for x in audit_points {
            let v = n.realize_scalar(x)?;
            if v.abs() > r_bound * (1.0 + 1e-12) + 1e-12 {
                return Err(Error::AuditFailed(format!(
                    "factor realization {v} exceeds declared bound {r_bound} at an audit point"
                )));
            }
        }
    }
    let k = nets.len();
    let sum_params: usize = nets.iter().map(|n| n.metrics().params).sum();
    if k == 1 {
        let net = compose(&identity_net(1)?, &nets[0])?;
        return Ok(ProductNet {
            net,
            eps: 0.0,
            stage_eps: 0.0,
            large_range: r_bound >= 1.0,
            hidden_bound: (h + 2) as f64,
            param_bound: 2.0 * sum_params as f64 + 2.0 * 4.0,
        });
    }
    // invert the error recursion to find the per-stage accuracy
    let large = r_bound >= 1.0;
    let geom: f64 = if large {
        (0..k - 1).map(|j| r_bound.powi(j as i32)).sum()
    } else {
        (k as f64 - 1.0) * r_bound.powi(k as i32)
    };
    let stage_eps = (eps / geom).min(0.49);
    let kfold = kfold_product(k, r_bound, stage_eps)?;
    let par = parallelize(nets, true)?;
    let net = compose(&kfold.net, &par)?;
    Ok(ProductNet {
        net,
        eps: kfold.error_bound,
        stage_eps,
        large_range: large,
        hidden_bound: kfold_hidden_bound(k, r_bound, stage_eps) + h as f64 + 1.0,
        param_bound: 2.0 * kfold_param_bound(k, r_bound, stage_eps) + 2.0 * sum_params as f64,
    })
}

/// Error growth constant of replacing k factors by their approximations:
/// `C_k = sum_{j=0}^{k-1} eps^j e_{k-1-j}(sup_norms)` with `e_i` the
/// elementary symmetric polynomials.
pub fn product_error_constant(sup_norms: &[f64], eps: f64) -> f64 {
    let k = sup_norms.len();
    // elementary symmetric polynomials e_0..e_k
    let mut e = vec![0.0; k + 1];
    e[0] = 1.0;
    for (i, &v) in sup_norms.iter().enumerate() {
        for j in (1..=i + 1).rev() {
            e[j] += v * e[j - 1];
        }
    }
    (0..k).map(|j| eps.powi(j as i32) * e[k - 1 - j]).sum()
}

/// Simplified upper bound for `C_k` when the first `l` factors share the
/// sup-norm `f_sup` and the remaining `k - l` share `g_sup`:
/// `(f+e)^{l-1} (l g^{k-l} + (k-l)(f+e)(g+e)^{k-l-1})`.
pub fn special_case_bound(l: usize, k: usize, f_sup: f64, g_sup: f64, eps: f64) -> f64 {
    assert!(l >= 1 && l <= k);
    let fe = f_sup + eps;
    let ge = g_sup + eps;
    fe.powi(l as i32 - 1)
        * (l as f64 * g_sup.powi((k - l) as i32)
            + (k - l) as f64 * fe * ge.powi((k - l) as i32 - 1))
}
