//! Property tests for the structural invariants that hold for all
//! inputs, not just the sampled cases.

use proptest::prelude::*;

use branchwave::kernels::{pnorm, psub, sample_position, Dimension, LifetimeLaw};
use branchwave::relu::ops::compose;
use branchwave::relu::{Layer, NeuralNet, SparseMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn arb_net(k0: usize, kout: usize) -> impl Strategy<Value = NeuralNet> {
    let weight = -3.0f64..3.0;
    (1usize..=3)
        .prop_flat_map(move |h| {
            proptest::collection::vec(1usize..=3, h).prop_map(move |mid| {
                let mut dims = vec![k0];
                dims.extend(mid);
                dims.push(kout);
                dims
            })
        })
        .prop_flat_map(move |dims| {
            let mut layer_strats = Vec::new();
            for w in dims.windows(2) {
                let (cin, cout) = (w[0], w[1]);
                let ws = proptest::collection::vec(weight.clone(), cin * cout);
                let bs = proptest::collection::vec(weight.clone(), cout);
                layer_strats.push((Just((cin, cout)), ws, bs));
            }
            layer_strats
        })
        .prop_map(|layers| {
            let built = layers
                .into_iter()
                .map(|((cin, cout), w, b)| {
                    Layer::new(SparseMatrix::from_dense(cout, cin, &w), b)
                })
                .collect();
            NeuralNet::new(built).unwrap()
        })
}

proptest! {
    /// Serialization round-trips bit exactly.
    #[test]
    fn net_json_round_trip(net in arb_net(2, 1)) {
        let json = net.to_json();
        let back = NeuralNet::from_json(&json).unwrap();
        prop_assert_eq!(&net, &back);
        prop_assert_eq!(json, back.to_json());
    }

    /// Composition is associative in realization.
    #[test]
    fn compose_associative(
        a in arb_net(2, 1),
        b in arb_net(2, 2),
        c in arb_net(2, 2),
        x0 in -2.0f64..2.0,
        x1 in -2.0f64..2.0,
    ) {
        let left = compose(&compose(&a, &b).unwrap(), &c).unwrap();
        let right = compose(&a, &compose(&b, &c).unwrap()).unwrap();
        let x = [x0, x1];
        let lv = left.realize_scalar(&x).unwrap();
        let rv = right.realize_scalar(&x).unwrap();
        prop_assert!((lv - rv).abs() <= 1e-9 * lv.abs().max(rv.abs()).max(1.0));
    }

    /// The survival function is the exact closed form everywhere.
    #[test]
    fn survival_closed_form(lambda in 0.01f64..50.0, t in 0.0f64..50.0) {
        let law = LifetimeLaw::new(lambda).unwrap();
        prop_assert!((law.rho_bar(t).unwrap() - (-lambda * t).exp()).abs() <= 1e-12);
    }

    /// Displaced positions never leave the closed ball of radius t.
    #[test]
    fn position_in_cone(
        seed in any::<u64>(),
        t in 0.0f64..5.0,
        cx in -3.0f64..3.0,
        cy in -3.0f64..3.0,
        d in 1usize..=3,
    ) {
        let dim = Dimension::new(d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = [cx, cy, 0.1];
        let y = sample_position(x, t, dim, &mut rng);
        prop_assert!(pnorm(psub(y, x)) <= t * (1.0 + 1e-12) + 1e-15);
    }
}
