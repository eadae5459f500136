//! Structural calculus on ReLU networks: identity, composition, sums,
//! affine wraps, layer extension, parallelization and time prepending.
//!
//! Every operator preserves its realization claim exactly (not
//! approximately), and the size bounds quoted in the docs are audited
//! as integer checks in the test suites.

use super::net::{Layer, NeuralNet, SparseMatrix};
use crate::error::{Error, Result};

/// Block-diagonal stack of layers (rows and columns both offset).
fn block_diag(parts: &[&Layer]) -> Layer {
    let rows: usize = parts.iter().map(|l| l.weight.rows).sum();
    let cols: usize = parts.iter().map(|l| l.weight.cols).sum();
    let mut entries = Vec::new();
    let mut bias = Vec::with_capacity(rows);
    let (mut dr, mut dc) = (0usize, 0usize);
    for l in parts {
        entries.extend(l.weight.offset_entries(dr, dc));
        bias.extend_from_slice(&l.bias);
        dr += l.weight.rows;
        dc += l.weight.cols;
    }
    Layer::new(SparseMatrix::from_triplets(rows, cols, entries), bias)
}

/// Vertical stack of layers sharing the same input (rows offset only).
fn row_stack(parts: &[&Layer]) -> Layer {
    let rows: usize = parts.iter().map(|l| l.weight.rows).sum();
    let cols = parts[0].weight.cols;
    let mut entries = Vec::new();
    let mut bias = Vec::with_capacity(rows);
    let mut dr = 0usize;
    for l in parts {
        debug_assert_eq!(l.weight.cols, cols);
        entries.extend(l.weight.offset_entries(dr, 0));
        bias.extend_from_slice(&l.bias);
        dr += l.weight.rows;
    }
    Layer::new(SparseMatrix::from_triplets(rows, cols, entries), bias)
}

/// Scalar identity with `h >= 1` hidden layers; dimension vector
/// `(1, 2, ..., 2, 1)` and at most `2(h+1)` nonzero parameters.
pub fn identity_net(h: usize) -> Result<NeuralNet> {
    identity_net_d(h, 1)
}

/// Identity on d coordinates; dimension vector `(d, 2d, ..., 2d, d)`.
pub fn identity_net_d(h: usize, d: usize) -> Result<NeuralNet> {
    if h < 1 || d < 1 {
        return Err(Error::invalid("identity_net requires h >= 1 and d >= 1"));
    }
    let mut first = SparseMatrix::zeros(2 * d, d);
    for i in 0..d {
        first.push(2 * i, i, 1.0);
        first.push(2 * i + 1, i, -1.0);
    }
    let mut layers = vec![Layer::new(first, vec![0.0; 2 * d])];
    for _ in 1..h {
        // hidden units are nonnegative, so the plain identity passes through
        let mut mid = SparseMatrix::zeros(2 * d, 2 * d);
        for i in 0..2 * d {
            mid.push(i, i, 1.0);
        }
        layers.push(Layer::new(mid, vec![0.0; 2 * d]));
    }
    let mut out = SparseMatrix::zeros(d, 2 * d);
    for i in 0..d {
        out.push(i, 2 * i, 1.0);
        out.push(i, 2 * i + 1, -1.0);
    }
    layers.push(Layer::new(out, vec![0.0; d]));
    NeuralNet::new(layers)
}

/// Exact composition: `realize(result) = realize(outer) o realize(inner)`.
/// `H = H1 + H2 + 1`, `P <= 2 P1 + 2 P2`.
pub fn compose(outer: &NeuralNet, inner: &NeuralNet) -> Result<NeuralNet> {
    let a0 = outer.input_dim();
    if inner.output_dim() != a0 {
        return Err(Error::domain(format!(
            "compose: inner output {} does not match outer input {a0}",
            inner.output_dim()
        )));
    }
    let h2 = inner.hidden();
    let mut layers: Vec<Layer> = inner.layers()[..h2].to_vec();

    // junction: split the inner output z into (max(0,z), max(0,-z))
    let inner_out = &inner.layers()[h2];
    let mut jw = SparseMatrix::zeros(2 * a0, inner_out.weight.cols);
    let mut jb = Vec::with_capacity(2 * a0);
    for &(r, c, v) in &inner_out.weight.entries {
        jw.push(r as usize, c as usize, v);
        jw.push(r as usize + a0, c as usize, -v);
    }
    jb.extend_from_slice(&inner_out.bias);
    jb.extend(inner_out.bias.iter().map(|b| -b));
    layers.push(Layer::new(jw, jb));

    // bridge: outer first layer applied to u - v
    let of = &outer.layers()[0];
    let mut bw = SparseMatrix::zeros(of.weight.rows, 2 * a0);
    for &(r, c, v) in &of.weight.entries {
        bw.push(r as usize, c as usize, v);
        bw.push(r as usize, c as usize + a0, -v);
    }
    layers.push(Layer::new(bw, of.bias.clone()));
    layers.extend_from_slice(&outer.layers()[1..]);
    NeuralNet::new(layers)
}

/// Exact weighted sum of networks sharing depth, input and output
/// dimensions: `realize = sum_i coeffs[i] * realize(nets[i])`.
/// `P <= sum_i P_i`, width of hidden layers adds.
pub fn sum_same_length(nets: &[NeuralNet], coeffs: &[f64]) -> Result<NeuralNet> {
    if nets.is_empty() || nets.len() != coeffs.len() {
        return Err(Error::invalid("sum needs as many coefficients as networks"));
    }
    let h = nets[0].hidden();
    let k0 = nets[0].input_dim();
    let kout = nets[0].output_dim();
    for n in nets {
        if n.hidden() != h {
            return Err(Error::domain("sum_same_length: depths differ (extend first)"));
        }
        if n.input_dim() != k0 || n.output_dim() != kout {
            return Err(Error::domain("sum_same_length: input/output dimensions differ"));
        }
    }
    if nets.len() == 1 {
        let mut layers = nets[0].layers().to_vec();
        let last = layers.last_mut().unwrap();
        last.weight = last.weight.scaled(coeffs[0]);
        for b in &mut last.bias {
            *b *= coeffs[0];
        }
        return NeuralNet::new(layers);
    }
    let mut layers = Vec::with_capacity(h + 1);
    let firsts: Vec<&Layer> = nets.iter().map(|n| &n.layers()[0]).collect();
    layers.push(row_stack(&firsts));
    for l in 1..h {
        let mids: Vec<&Layer> = nets.iter().map(|n| &n.layers()[l]).collect();
        layers.push(block_diag(&mids));
    }
    // output: horizontal concatenation with the coefficients folded in
    let cols: usize = nets.iter().map(|n| n.layers()[h].weight.cols).sum();
    let mut w = SparseMatrix::zeros(kout, cols);
    let mut bias = vec![0.0; kout];
    let mut dc = 0usize;
    for (n, &co) in nets.iter().zip(coeffs.iter()) {
        let out = &n.layers()[h];
        for &(r, c, v) in &out.weight.entries {
            w.push(r as usize, c as usize + dc, co * v);
        }
        for (r, b) in out.bias.iter().enumerate() {
            bias[r] += co * b;
        }
        dc += out.weight.cols;
    }
    layers.push(Layer::new(w, bias));
    NeuralNet::new(layers)
}

/// Exact affine wrap: `realize = scale * (realize(net)(. + shift_in) +
/// shift_out)`. The dimension vector is unchanged.
pub fn affine_wrap(
    net: &NeuralNet,
    scale: f64,
    shift_in: &[f64],
    shift_out: f64,
) -> Result<NeuralNet> {
    if shift_in.len() != net.input_dim() {
        return Err(Error::domain(format!(
            "affine_wrap: shift length {} does not match input {}",
            shift_in.len(),
            net.input_dim()
        )));
    }
    let mut layers = net.layers().to_vec();
    {
        let first = &mut layers[0];
        let mut bias = first.bias.clone();
        first.weight.accumulate(shift_in, &mut bias);
        first.bias = bias;
    }
    {
        let last = layers.last_mut().unwrap();
        last.weight = last.weight.scaled(scale);
        for b in &mut last.bias {
            *b = scale * (*b + shift_out);
        }
    }
    NeuralNet::new(layers)
}

/// Extend a scalar-output network to `h_target > H` hidden layers
/// without changing its realization: `P <= 2P + 4 (h_target - H)`,
/// width `max(2, W)`.
pub fn extend(net: &NeuralNet, h_target: usize) -> Result<NeuralNet> {
    if net.output_dim() != 1 {
        return Err(Error::invalid("extend is defined for scalar-output networks"));
    }
    let h = net.hidden();
    if h_target <= h {
        return Err(Error::invalid(format!(
            "extend: target depth {h_target} must exceed current depth {h}"
        )));
    }
    let mut layers: Vec<Layer> = net.layers()[..h].to_vec();
    let out = &net.layers()[h];
    let mut jw = SparseMatrix::zeros(2, out.weight.cols);
    for &(r, c, v) in &out.weight.entries {
        debug_assert_eq!(r, 0);
        jw.push(0, c as usize, v);
        jw.push(1, c as usize, -v);
    }
    layers.push(Layer::new(jw, vec![out.bias[0], -out.bias[0]]));
    for _ in 0..h_target - h - 1 {
        let mut mid = SparseMatrix::zeros(2, 2);
        mid.push(0, 0, 1.0);
        mid.push(1, 1, 1.0);
        layers.push(Layer::new(mid, vec![0.0, 0.0]));
    }
    let mut fw = SparseMatrix::zeros(1, 2);
    fw.push(0, 0, 1.0);
    fw.push(0, 1, -1.0);
    layers.push(Layer::new(fw, vec![0.0]));
    NeuralNet::new(layers)
}

/// Weighted sum of two scalar-output networks of possibly different
/// depths; the shorter one is extended first.
pub fn sum_diff_length(a: &NeuralNet, b: &NeuralNet, coeffs: (f64, f64)) -> Result<NeuralNet> {
    let (ha, hb) = (a.hidden(), b.hidden());
    let (ea, eb);
    let (a, b): (&NeuralNet, &NeuralNet) = if ha == hb {
        (a, b)
    } else if ha < hb {
        ea = extend(a, hb)?;
        (&ea, b)
    } else {
        eb = extend(b, ha)?;
        (a, &eb)
    };
    sum_same_length(&[a.clone(), b.clone()], &[coeffs.0, coeffs.1])
}

/// Exact parallelization of equal-depth networks. With
/// `shared_input = false` the blocks read disjoint slices of the input;
/// with `shared_input = true` they all read the same input vector.
/// `P` is exactly additive.
pub fn parallelize(nets: &[NeuralNet], shared_input: bool) -> Result<NeuralNet> {
    if nets.is_empty() {
        return Err(Error::invalid("parallelize needs at least one network"));
    }
    let h = nets[0].hidden();
    for n in nets {
        if n.hidden() != h {
            return Err(Error::invalid(
                "parallelize: depths differ (extend the shallower networks first)",
            ));
        }
    }
    if nets.len() == 1 {
        return Ok(nets[0].clone());
    }
    let mut layers = Vec::with_capacity(h + 1);
    let firsts: Vec<&Layer> = nets.iter().map(|n| &n.layers()[0]).collect();
    if shared_input {
        let k0 = nets[0].input_dim();
        for n in nets {
            if n.input_dim() != k0 {
                return Err(Error::domain("parallelize: shared input dimensions differ"));
            }
        }
        layers.push(row_stack(&firsts));
    } else {
        layers.push(block_diag(&firsts));
    }
    for l in 1..=h {
        let parts: Vec<&Layer> = nets.iter().map(|n| &n.layers()[l]).collect();
        layers.push(block_diag(&parts));
    }
    NeuralNet::new(layers)
}

/// Network computing `x -> (t, x_1, ..., x_d)` for a constant `t >= 0`:
/// dimension vector `(d, 2d+1, d+1)`, exactly `2(2d+1)` nonzero
/// parameters when `t != 0`.
pub fn prepend_time(t: f64, d: usize) -> NeuralNet {
    debug_assert!(t >= 0.0, "prepend_time requires a nonnegative constant");
    let mut w1 = SparseMatrix::zeros(2 * d + 1, d);
    for i in 0..d {
        w1.push(1 + i, i, 1.0);
        w1.push(1 + d + i, i, -1.0);
    }
    let mut b1 = vec![0.0; 2 * d + 1];
    b1[0] = t;
    let mut w2 = SparseMatrix::zeros(d + 1, 2 * d + 1);
    w2.push(0, 0, 1.0);
    for i in 0..d {
        w2.push(1 + i, 1 + i, 1.0);
        w2.push(1 + i, 1 + d + i, -1.0);
    }
    NeuralNet::new(vec![Layer::new(w1, b1), Layer::new(w2, vec![0.0; d + 1])])
        .expect("static shape")
}

/// Fix the first input coordinate of `net` to the constant `t`:
/// `realize(result)(x) = realize(net)(t, x)`.
pub fn fix_time(net: &NeuralNet, t: f64) -> Result<NeuralNet> {
    if net.input_dim() < 2 {
        return Err(Error::invalid("fix_time needs an input of dimension >= 2"));
    }
    compose(net, &prepend_time(t, net.input_dim() - 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_net(rng: &mut ChaCha8Rng, k0: usize, kout: usize, h: usize) -> NeuralNet {
        let mut dims = vec![k0];
        for _ in 0..h {
            dims.push(rng.gen_range(1..=4));
        }
        dims.push(kout);
        let mut layers = Vec::new();
        for w in dims.windows(2) {
            let (cin, cout) = (w[0], w[1]);
            let mut m = SparseMatrix::zeros(cout, cin);
            for r in 0..cout {
                for c in 0..cin {
                    if rng.gen_bool(0.7) {
                        m.push(r, c, rng.gen_range(-1.0..1.0));
                    }
                }
            }
            let bias = (0..cout)
                .map(|_| {
                    if rng.gen_bool(0.5) {
                        rng.gen_range(-0.5..0.5)
                    } else {
                        0.0
                    }
                })
                .collect();
            layers.push(Layer::new(m, bias));
        }
        NeuralNet::new(layers).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
    }

    #[test]
    fn identity_exact() {
        let id = identity_net(5).unwrap();
        assert_eq!(id.dims(), vec![1, 2, 2, 2, 2, 2, 1]);
        let m = id.metrics();
        assert!(m.params <= 2 * (5 + 1));
        assert!(m.width <= 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let x: f64 = rng.gen_range(-10.0..10.0);
            assert_eq!(id.realize_scalar(&[x]).unwrap(), x);
        }
        assert_eq!(id.realize_scalar(&[-2.7]).unwrap(), -2.7);
        let id3 = identity_net_d(3, 3).unwrap();
        assert_eq!(id3.dims(), vec![3, 6, 6, 6, 3]);
        assert!(id3.metrics().params <= 2 * 3 * (3 + 1));
        let x = [0.3, -1.5, 2.0];
        assert_eq!(id3.realize(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn compose_matches_sequential_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let (h1, h2) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let inner = random_net(&mut rng, 2, 3, h1);
            let outer = random_net(&mut rng, 3, 1, h2);
            let comp = compose(&outer, &inner).unwrap();
            assert_eq!(comp.hidden(), outer.hidden() + inner.hidden() + 1);
            let pm = comp.metrics().params;
            assert!(pm <= 2 * outer.metrics().params + 2 * inner.metrics().params);
            // dimension vector concatenates through the doubled junction
            let mut want = inner.dims();
            let last = want.pop().unwrap();
            want.push(last + outer.input_dim());
            want.extend(outer.dims().into_iter().skip(1));
            assert_eq!(comp.dims(), want);
            for _ in 0..5 {
                let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
                let direct = outer.realize(&inner.realize(&x).unwrap()).unwrap()[0];
                assert!(close(comp.realize_scalar(&x).unwrap(), direct));
            }
        }
    }

    #[test]
    fn compose_with_identity_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = random_net(&mut rng, 1, 1, 2);
        let wrapped = compose(&identity_net(1).unwrap(), &net).unwrap();
        for _ in 0..100 {
            let x = [rng.gen_range(-2.0..2.0)];
            assert_eq!(
                wrapped.realize_scalar(&x).unwrap(),
                net.realize_scalar(&x).unwrap()
            );
        }
        assert!(compose(&net, &random_net(&mut rng, 1, 3, 1)).is_err());
    }

    #[test]
    fn sum_same_length_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let h = rng.gen_range(1..=3);
            let nets: Vec<NeuralNet> = (0..3).map(|_| random_net(&mut rng, 2, 1, h)).collect();
            let coeffs = [1.0, rng.gen_range(-2.0..2.0), 0.5];
            let sum = sum_same_length(&nets, &coeffs).unwrap();
            assert_eq!(sum.hidden(), h);
            // dimension vector: shared input, stacked hidden, shared output
            let mut want_dims = vec![2usize];
            for l in 1..=h {
                want_dims.push(nets.iter().map(|n| n.dims()[l]).sum());
            }
            want_dims.push(1);
            assert_eq!(sum.dims(), want_dims);
            let p: usize = nets.iter().map(|n| n.metrics().params).sum();
            assert!(sum.metrics().params <= p);
            let w: usize = nets.iter().map(|n| n.metrics().width).sum();
            assert!(sum.metrics().width <= w);
            for _ in 0..5 {
                let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
                let want: f64 = nets
                    .iter()
                    .zip(coeffs.iter())
                    .map(|(n, c)| c * n.realize_scalar(&x).unwrap())
                    .sum();
                assert!(close(sum.realize_scalar(&x).unwrap(), want));
            }
        }
    }

    #[test]
    fn sum_cancellation_and_zero_coeffs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = random_net(&mut rng, 1, 1, 2);
        let cancel = sum_same_length(&[n.clone(), n.clone()], &[1.0, -1.0]).unwrap();
        let zero = sum_same_length(&[n.clone(), n.clone()], &[0.0, 0.0]).unwrap();
        for _ in 0..50 {
            let x = [rng.gen_range(-3.0..3.0)];
            assert!(cancel.realize_scalar(&x).unwrap().abs() <= 1e-12);
            assert_eq!(zero.realize_scalar(&x).unwrap(), 0.0);
        }
    }

    #[test]
    fn affine_wrap_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let net = random_net(&mut rng, 2, 1, 2);
            let scale = rng.gen_range(-2.0..2.0);
            let shift = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let out = rng.gen_range(-1.0..1.0);
            let wrapped = affine_wrap(&net, scale, &shift, out).unwrap();
            assert_eq!(wrapped.dims(), net.dims());
            for _ in 0..5 {
                let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
                let moved = [x[0] + shift[0], x[1] + shift[1]];
                let want = scale * (net.realize_scalar(&moved).unwrap() + out);
                assert!(close(wrapped.realize_scalar(&x).unwrap(), want));
            }
        }
        let net = random_net(&mut rng, 2, 1, 1);
        let same = affine_wrap(&net, 1.0, &[0.0, 0.0], 0.0).unwrap();
        assert_eq!(same, net);
    }

    #[test]
    fn extend_preserves_realization() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let h = rng.gen_range(1..=2);
            let net = random_net(&mut rng, 2, 1, h);
            let target = net.hidden() + rng.gen_range(1..=3);
            let ext = extend(&net, target).unwrap();
            assert_eq!(ext.hidden(), target);
            // dims: original hidden part, then a chain of 2s, then 1
            let mut want = net.dims();
            want.pop();
            want.extend(vec![2; target - net.hidden()]);
            want.push(1);
            assert_eq!(ext.dims(), want);
            let m = ext.metrics();
            assert!(m.params <= 2 * net.metrics().params + 4 * (target - net.hidden()));
            assert_eq!(m.width, net.metrics().width.max(2));
            for _ in 0..5 {
                let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
                assert!(close(
                    ext.realize_scalar(&x).unwrap(),
                    net.realize_scalar(&x).unwrap()
                ));
            }
            // extending twice equals extending once, in realization
            let twice = extend(&ext, target + 2).unwrap();
            let once = extend(&net, target + 2).unwrap();
            for _ in 0..3 {
                let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
                assert!(close(
                    twice.realize_scalar(&x).unwrap(),
                    once.realize_scalar(&x).unwrap()
                ));
            }
        }
        let net = random_net(&mut rng, 1, 1, 3);
        assert!(extend(&net, 3).is_err());
        assert!(extend(&net, 2).is_err());
    }

    #[test]
    fn sum_diff_length_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let (ha, hb) = (rng.gen_range(1..=2), rng.gen_range(2..=4));
            let a = random_net(&mut rng, 2, 1, ha);
            let b = random_net(&mut rng, 2, 1, hb);
            let s = sum_diff_length(&a, &b, (1.0, 1.0)).unwrap();
            let (hf, hg) = (a.hidden().min(b.hidden()), a.hidden().max(b.hidden()));
            assert_eq!(s.hidden(), hg);
            let (pf, pg) = if a.hidden() <= b.hidden() {
                (a.metrics().params, b.metrics().params)
            } else {
                (b.metrics().params, a.metrics().params)
            };
            assert!(s.metrics().params <= pg + 2 * pf + 4 * (hg - hf));
            for _ in 0..5 {
                let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
                let want = a.realize_scalar(&x).unwrap() + b.realize_scalar(&x).unwrap();
                assert!(close(s.realize_scalar(&x).unwrap(), want));
            }
        }
    }

    #[test]
    fn parallelize_componentwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let h = rng.gen_range(1..=3);
            let nets: Vec<NeuralNet> = (0..3).map(|_| random_net(&mut rng, 2, 1, h)).collect();
            // separate inputs
            let par = parallelize(&nets, false).unwrap();
            assert_eq!(par.input_dim(), 6);
            assert_eq!(par.hidden(), h);
            let p: usize = nets.iter().map(|n| n.metrics().params).sum();
            assert_eq!(par.metrics().params, p);
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let got = par.realize(&x).unwrap();
            for (i, n) in nets.iter().enumerate() {
                let want = n.realize_scalar(&x[2 * i..2 * i + 2]).unwrap();
                assert!(close(got[i], want));
            }
            // shared input
            let shared = parallelize(&nets, true).unwrap();
            assert_eq!(shared.input_dim(), 2);
            assert_eq!(shared.metrics().params, p);
            let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let got = shared.realize(&x).unwrap();
            for (i, n) in nets.iter().enumerate() {
                assert!(close(got[i], n.realize_scalar(&x).unwrap()));
            }
        }
        let single = random_net(&mut rng, 1, 1, 2);
        let same = parallelize(std::slice::from_ref(&single), false).unwrap();
        assert_eq!(same, single);
        let deep = random_net(&mut rng, 1, 1, 3);
        assert!(parallelize(&[single, deep], false).is_err());
    }

    #[test]
    fn prepend_time_exact_metrics() {
        for d in 1..=3usize {
            let t = 0.37;
            let net = prepend_time(t, d);
            assert_eq!(net.dims(), vec![d, 2 * d + 1, d + 1]);
            let m = net.metrics();
            assert_eq!(m.params, 2 * (2 * d + 1));
            assert_eq!(m.hidden, 1);
            assert_eq!(m.width, 2 * d + 1);
            let x: Vec<f64> = (0..d).map(|i| -0.3 * i as f64 + 0.1).collect();
            let got = net.realize(&x).unwrap();
            assert_eq!(got[0], t);
            for i in 0..d {
                assert_eq!(got[1 + i], x[i]);
            }
            let zeros = vec![0.0; d];
            let got = net.realize(&zeros).unwrap();
            assert_eq!(got[0], t);
            assert!(got[1..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn fix_time_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..100 {
            let net = random_net(&mut rng, 3, 1, 2);
            let t = rng.gen_range(0.0..1.0);
            let fixed = fix_time(&net, t).unwrap();
            assert_eq!(fixed.input_dim(), 2);
            for _ in 0..5 {
                let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
                let want = net.realize_scalar(&[t, x[0], x[1]]).unwrap();
                assert!(close(fixed.realize_scalar(&x).unwrap(), want));
            }
        }
    }
}
