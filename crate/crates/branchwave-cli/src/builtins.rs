//! Built-in problem data: separable products of one-dimensional
//! factors, selected by name in the configuration.
//!
//! Grammar: `zero`, `one`, `const:<v>`, `cos`, `cos:<v>`, `gauss:<v>`.
//! `cos` is the product of per-axis cosines scaled by `v`; `gauss` is
//! `v * exp(-|x|^2)`. Sup-norms and per-axis Lipschitz bounds are
//! derived, so declared bounds always match the callables.

use std::sync::Arc;

use branchwave::distill::{build_interpolant_net_1d, build_separable_net, SeparableFactor};
use branchwave::error::{Error, Result};
use branchwave::estimators::{SpaceFn, SpaceTimeFn};
use branchwave::kernels::Point;
use branchwave::relu::ops::affine_wrap;
use branchwave::relu::NeuralNet;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Kind {
    Const,
    Cos,
    Gauss,
}

#[derive(Clone, Debug)]
pub struct Builtin {
    kind: Kind,
    scale: f64,
}

impl Builtin {
    pub fn parse(text: &str) -> Result<Builtin> {
        let (name, arg) = match text.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (text.trim(), None),
        };
        let scale = match arg {
            None => 1.0,
            Some(a) => a
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad scale in builtin {text:?}")))?,
        };
        match name {
            "zero" => Ok(Builtin {
                kind: Kind::Const,
                scale: 0.0,
            }),
            "one" => Ok(Builtin {
                kind: Kind::Const,
                scale,
            }),
            "const" => Ok(Builtin {
                kind: Kind::Const,
                scale,
            }),
            "cos" => Ok(Builtin {
                kind: Kind::Cos,
                scale,
            }),
            "gauss" => Ok(Builtin {
                kind: Kind::Gauss,
                scale,
            }),
            _ => Err(Error::invalid(format!(
                "unknown builtin {text:?}; expected zero|one|const:<v>|cos[:<v>]|gauss:<v>"
            ))),
        }
    }

    fn factor(&self, x: f64) -> f64 {
        match self.kind {
            Kind::Const => 1.0,
            Kind::Cos => x.cos(),
            Kind::Gauss => (-x * x).exp(),
        }
    }

    fn factor_lipschitz(&self) -> f64 {
        match self.kind {
            Kind::Const => 0.0,
            Kind::Cos => 1.0,
            // max |d/dx exp(-x^2)| = sqrt(2/e)
            Kind::Gauss => (2.0f64 / std::f64::consts::E).sqrt(),
        }
    }

    pub fn eval(&self, x: Point, d: usize) -> f64 {
        let mut v = self.scale;
        for coord in x.iter().take(d) {
            v *= self.factor(*coord);
        }
        v
    }

    /// Dimension-1 evaluation by scalar coordinate.
    pub fn eval1(&self, x: f64) -> f64 {
        self.scale * self.factor(x)
    }

    /// Dimension-1 space-time evaluation (time-independent data).
    pub fn eval_st1(&self, _s: f64, x: f64) -> f64 {
        self.eval1(x)
    }

    pub fn sup(&self) -> f64 {
        self.scale.abs()
    }

    pub fn space_fn(&self, d: usize) -> SpaceFn {
        let b = self.clone();
        Arc::new(move |x: Point| b.eval(x, d))
    }

    pub fn space_time_fn(&self, d: usize) -> SpaceTimeFn {
        let b = self.clone();
        Arc::new(move |_s: f64, x: Point| b.eval(x, d))
    }

    /// Interpolating network on `[-radius, radius]^d` with sup error at
    /// most `delta`.
    pub fn data_net(&self, d: usize, radius: f64, delta: f64) -> Result<NeuralNet> {
        if self.scale == 0.0 {
            // explicit zero data: a two-knot interpolant of 0
            return build_interpolant_net_1d(&|_| 0.0, (-radius, radius), delta, 0.0)
                .map(|n| widen_input(&n, d));
        }
        let inner = delta / self.scale.abs();
        if d == 1 {
            return build_interpolant_net_1d(
                &|x| self.eval1(x),
                (-radius, radius),
                delta,
                self.sup() * self.factor_lipschitz().max(f64::MIN_POSITIVE),
            );
        }
        let f = |x: f64| self.factor(x);
        let lip = self.factor_lipschitz();
        let factors: Vec<SeparableFactor> = (0..d)
            .map(|_| SeparableFactor { f: &f, lipschitz: lip })
            .collect();
        let domain = vec![(-radius, radius); d];
        let net = build_separable_net(&factors, &domain, inner.min(0.4))?;
        affine_wrap(&net, self.scale, &vec![0.0; d], 0.0)
    }
}

/// Lift a 1-input network to d inputs reading only the first coordinate.
fn widen_input(net: &NeuralNet, d: usize) -> NeuralNet {
    if d == 1 {
        return net.clone();
    }
    let mut layers = net.layers().to_vec();
    let first = &mut layers[0];
    let w = &first.weight;
    first.weight = branchwave::relu::SparseMatrix::from_triplets(
        w.rows,
        d,
        w.entries.clone(),
    );
    NeuralNet::new(layers).expect("shape preserved")
}
