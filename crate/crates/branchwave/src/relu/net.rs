//! Network representation, evaluation, size metrics and serialization.
//!
//! Weight matrices are stored as sorted coordinate triplets. The
//! assembled networks are sums of many nearly block-diagonal pieces, so
//! the nonzero count is tiny compared to `rows * cols`; sparse storage
//! is what keeps the distilled sums practical. Serialization renders
//! every float in shortest round-trip decimal form, so writing and
//! re-reading a network is bit-exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparse matrix in coordinate form, entries sorted by (row, col).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(u32, u32, f64)>,
}

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SparseMatrix {
            rows,
            cols,
            entries: Vec::new(),
        }
    }

    pub fn from_triplets(rows: usize, cols: usize, mut entries: Vec<(u32, u32, f64)>) -> Self {
        debug_assert!(entries
            .iter()
            .all(|&(r, c, _)| (r as usize) < rows && (c as usize) < cols));
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        SparseMatrix {
            rows,
            cols,
            entries,
        }
    }

    pub fn from_dense(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), rows * cols);
        let mut entries = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let v = data[r * cols + c];
                if v != 0.0 {
                    entries.push((r as u32, c as u32, v));
                }
            }
        }
        SparseMatrix {
            rows,
            cols,
            entries,
        }
    }

    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        if v != 0.0 {
            self.entries.push((r as u32, c as u32, v));
        }
    }

    /// `out += W x`.
    pub fn accumulate(&self, x: &[f64], out: &mut [f64]) {
        for &(r, c, v) in &self.entries {
            out[r as usize] += v * x[c as usize];
        }
    }

    pub fn nonzeros(&self) -> usize {
        self.entries.iter().filter(|&&(_, _, v)| v != 0.0).count()
    }

    /// Copy of the entries with row/column offsets applied, for block
    /// assembly.
    pub fn offset_entries(&self, dr: usize, dc: usize) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.entries
            .iter()
            .map(move |&(r, c, v)| (r + dr as u32, c + dc as u32, v))
    }

    pub fn scaled(&self, s: f64) -> SparseMatrix {
        SparseMatrix {
            rows: self.rows,
            cols: self.cols,
            entries: self
                .entries
                .iter()
                .map(|&(r, c, v)| (r, c, s * v))
                .collect(),
        }
    }
}

/// One affine layer `x -> W x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: SparseMatrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn new(weight: SparseMatrix, bias: Vec<f64>) -> Self {
        assert_eq!(weight.rows, bias.len());
        Layer { weight, bias }
    }
}

/// Size metrics: nonzero parameter count, hidden layers, width, and the
/// full dimension vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetMetrics {
    pub params: usize,
    pub hidden: usize,
    pub width: usize,
    pub dims: Vec<usize>,
}

/// ReLU network: affine layers alternating with componentwise
/// `max(0, .)`, the final layer affine. At least one hidden layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuralNet {
    layers: Vec<Layer>,
}

impl NeuralNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::invalid(
                "a network needs at least one hidden layer (two affine maps)",
            ));
        }
        for w in layers.windows(2) {
            if w[1].weight.cols != w[0].weight.rows {
                return Err(Error::invalid(format!(
                    "layer shapes do not chain: {} rows feeding {} cols",
                    w[0].weight.rows, w[1].weight.cols
                )));
            }
        }
        Ok(NeuralNet { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.rows
    }

    /// Hidden-layer count `H`.
    pub fn hidden(&self) -> usize {
        self.layers.len() - 1
    }

    /// Dimension vector `(k_0, ..., k_{H+1})`.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.layers.len() + 1);
        d.push(self.input_dim());
        for l in &self.layers {
            d.push(l.weight.rows);
        }
        d
    }

    pub fn metrics(&self) -> NetMetrics {
        let params = self
            .layers
            .iter()
            .map(|l| l.weight.nonzeros() + l.bias.iter().filter(|&&b| b != 0.0).count())
            .sum();
        let dims = self.dims();
        NetMetrics {
            params,
            hidden: self.hidden(),
            width: dims.iter().copied().max().unwrap(),
            dims,
        }
    }

    /// Evaluate the realization at `x`.
    pub fn realize(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::domain(format!(
                "input dimension {} does not match network input {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = layer.bias.clone();
            layer.weight.accumulate(&h, &mut out);
            if i != last {
                for v in &mut out {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            h = out;
        }
        Ok(h)
    }

    /// Scalar-output convenience wrapper.
    pub fn realize_scalar(&self, x: &[f64]) -> Result<f64> {
        let out = self.realize(x)?;
        if out.len() != 1 {
            return Err(Error::domain(format!(
                "expected scalar output, got dimension {}",
                out.len()
            )));
        }
        Ok(out[0])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&SerialNet::from(self)).expect("network serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<NeuralNet> {
        let ser: SerialNet = serde_json::from_str(s)
            .map_err(|e| Error::invalid(format!("network deserialization: {e}")))?;
        ser.into_net()
    }
}

/// On-disk schema: `{dims, layers: [{rows, cols, w: [[r, c, v], ..], b}]}`
/// with `w` holding the nonzero weight triplets in row-major order.
#[derive(Serialize, Deserialize)]
struct SerialNet {
    dims: Vec<usize>,
    layers: Vec<SerialLayer>,
}

#[derive(Serialize, Deserialize)]
struct SerialLayer {
    rows: usize,
    cols: usize,
    w: Vec<(u32, u32, f64)>,
    b: Vec<f64>,
}

impl From<&NeuralNet> for SerialNet {
    fn from(net: &NeuralNet) -> Self {
        SerialNet {
            dims: net.dims(),
            layers: net
                .layers
                .iter()
                .map(|l| SerialLayer {
                    rows: l.weight.rows,
                    cols: l.weight.cols,
                    w: l.weight.entries.clone(),
                    b: l.bias.clone(),
                })
                .collect(),
        }
    }
}

impl SerialNet {
    fn into_net(self) -> Result<NeuralNet> {
        let layers = self
            .layers
            .into_iter()
            .map(|l| {
                Layer::new(
                    SparseMatrix::from_triplets(l.rows, l.cols, l.w),
                    l.b,
                )
            })
            .collect();
        NeuralNet::new(layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_net() -> NeuralNet {
        // max(0, 2x + 1) through an output copy
        let l1 = Layer::new(SparseMatrix::from_dense(1, 1, &[2.0]), vec![1.0]);
        let l2 = Layer::new(SparseMatrix::from_dense(1, 1, &[1.0]), vec![0.0]);
        NeuralNet::new(vec![l1, l2]).unwrap()
    }

    #[test]
    fn hand_evaluation() {
        let net = toy_net();
        assert_eq!(net.realize_scalar(&[0.5]).unwrap(), 2.0);
        assert_eq!(net.realize_scalar(&[-2.0]).unwrap(), 0.0);
        assert!(net.realize(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn metrics_counts_nonzeros_bitwise() {
        let l1 = Layer::new(
            SparseMatrix::from_triplets(2, 1, vec![(0, 0, 0.0), (1, 0, 3.0)]),
            vec![0.0, -1.0],
        );
        let l2 = Layer::new(SparseMatrix::from_dense(1, 2, &[1.0, 0.0]), vec![0.0]);
        let net = NeuralNet::new(vec![l1, l2]).unwrap();
        let m = net.metrics();
        // stored zero weight and zero biases do not count
        assert_eq!(m.params, 3);
        assert_eq!(m.hidden, 1);
        assert_eq!(m.width, 2);
        assert_eq!(m.dims, vec![1, 2, 1]);
    }

    #[test]
    fn shape_chain_validation() {
        let l1 = Layer::new(SparseMatrix::zeros(2, 1), vec![0.0; 2]);
        let l2 = Layer::new(SparseMatrix::zeros(1, 3), vec![0.0]);
        assert!(NeuralNet::new(vec![l1, l2]).is_err());
    }

    #[test]
    fn json_round_trip_bit_exact() {
        let net = toy_net();
        let s = net.to_json();
        let back = NeuralNet::from_json(&s).unwrap();
        assert_eq!(net, back);
        assert_eq!(s, back.to_json());
    }
}
