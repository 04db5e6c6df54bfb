//! Three-layer fully connected embedding network with exact backpropagation.
//!
//! Weights of each layer are stored `in_dim × out_dim` so a batch forward is
//! `X·W + b`. Hidden layers use ReLU, the latent output is linear.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Number of weight layers in every network.
pub const LAYERS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `in_dim × out_dim`.
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weights: DenseMatrix::zeros(in_dim, out_dim),
            bias: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot bound");
        let mut layer = Self::zeros(in_dim, out_dim);
        for w in layer.weights.as_mut_slice() {
            *w = dist.sample(rng);
        }
        layer
    }

    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }

    /// `X·W + b` for a batch.
    pub fn affine(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        let mut z = x.matmul(&self.weights)?;
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(z)
    }
}

/// The embedding network `f(·; W)`: `input → hidden1 → hidden2 → latent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpNetwork {
    layers: Vec<DenseLayer>,
}

/// Intermediates kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Layer inputs: the batch, then the two hidden activations.
    inputs: Vec<DenseMatrix>,
    /// Pre-activations of each layer; the last one is the embedding.
    pre: Vec<DenseMatrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &DenseMatrix {
        &self.pre[LAYERS - 1]
    }

    /// Hidden-layer pre-activations, exposed for kink detection in gradient checks.
    pub fn hidden_pre_activations(&self) -> &[DenseMatrix] {
        &self.pre[..LAYERS - 1]
    }
}

/// Gradients of a scalar objective with respect to every network parameter,
/// plus the gradient with respect to the input batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub weights: Vec<DenseMatrix>,
    pub biases: Vec<Vec<f64>>,
    pub input: DenseMatrix,
}

impl GradientBundle {
    /// Parameter gradients in the canonical group order (`w0, b0, w1, b1, w2, b2`).
    pub fn groups(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.groups()
            .iter()
            .all(|g| g.iter().all(|v| v.is_finite()))
            && self.input.is_finite()
    }
}

impl MlpNetwork {
    /// Randomly initialised network with `dims = [input, hidden1, hidden2, latent]`.
    pub fn new<R: Rng + ?Sized>(dims: [usize; 4], rng: &mut R) -> Result<Self> {
        check_dims(&dims)?;
        let layers = (0..LAYERS)
            .map(|l| DenseLayer::glorot(dims[l], dims[l + 1], rng))
            .collect();
        Ok(Self { layers })
    }

    /// All-zero network.
    pub fn zeros(dims: [usize; 4]) -> Result<Self> {
        check_dims(&dims)?;
        let layers = (0..LAYERS)
            .map(|l| DenseLayer::zeros(dims[l], dims[l + 1]))
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.len() != LAYERS {
            return Err(Error::contract(format!(
                "network needs {LAYERS} layers, got {}",
                layers.len()
            )));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::contract(format!("layer {l}: bias length mismatch")));
            }
            if l > 0 && layers[l - 1].out_dim() != layer.in_dim() {
                return Err(Error::contract(format!(
                    "layer {l} expects {} inputs but previous layer emits {}",
                    layer.in_dim(),
                    layers[l - 1].out_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn dims(&self) -> [usize; 4] {
        [
            self.layers[0].in_dim(),
            self.layers[0].out_dim(),
            self.layers[1].out_dim(),
            self.layers[2].out_dim(),
        ]
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.layers[LAYERS - 1].out_dim()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    /// Mutable parameter slices in the same order as [`GradientBundle::groups`].
    pub fn param_groups_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn param_groups(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_groups().iter().map(|g| g.len()).sum()
    }

    /// Embeddings `f(x)` for every row of `batch`.
    pub fn forward(&self, batch: &DenseMatrix) -> Result<DenseMatrix> {
        let mut x = self.check_batch(batch)?.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            x = layer.affine(&x)?;
            if l + 1 < LAYERS {
                relu_in_place(&mut x);
            }
        }
        Ok(x)
    }

    pub fn forward_cached(&self, batch: &DenseMatrix) -> Result<ForwardCache> {
        let mut inputs = Vec::with_capacity(LAYERS);
        let mut pre = Vec::with_capacity(LAYERS);
        inputs.push(self.check_batch(batch)?.clone());
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&inputs[l])?;
            if l + 1 < LAYERS {
                let mut a = z.clone();
                relu_in_place(&mut a);
                inputs.push(a);
            }
            pre.push(z);
        }
        Ok(ForwardCache { inputs, pre })
    }

    /// Gradients of `sum(upstream ⊙ forward(batch))`.
    pub fn backward(&self, batch: &DenseMatrix, upstream: &DenseMatrix) -> Result<GradientBundle> {
        let cache = self.forward_cached(batch)?;
        self.backward_cached(&cache, upstream)
    }

    pub fn backward_cached(
        &self,
        cache: &ForwardCache,
        upstream: &DenseMatrix,
    ) -> Result<GradientBundle> {
        let out = cache.output();
        if upstream.rows() != out.rows() || upstream.cols() != out.cols() {
            return Err(Error::contract(format!(
                "upstream is {}x{}, forward output is {}x{}",
                upstream.rows(),
                upstream.cols(),
                out.rows(),
                out.cols()
            )));
        }
        let mut weights = Vec::with_capacity(LAYERS);
        let mut biases = Vec::with_capacity(LAYERS);
        let mut delta = upstream.clone();
        for l in (0..LAYERS).rev() {
            if l + 1 < LAYERS {
                // ReLU gate of this layer's output.
                let z = &cache.pre[l];
                for (g, &zv) in delta.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    if zv <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let gw = cache.inputs[l].t_matmul(&delta)?;
            let mut gb = vec![0.0; delta.cols()];
            for r in 0..delta.rows() {
                for (b, g) in gb.iter_mut().zip(delta.row(r)) {
                    *b += g;
                }
            }
            let next = delta.matmul_t(&self.layers[l].weights)?;
            weights.push(gw);
            biases.push(gb);
            delta = next;
        }
        weights.reverse();
        biases.reverse();
        Ok(GradientBundle {
            weights,
            biases,
            input: delta,
        })
    }

    fn check_batch<'a>(&self, batch: &'a DenseMatrix) -> Result<&'a DenseMatrix> {
        if batch.cols() != self.input_dim() {
            return Err(Error::contract(format!(
                "batch has {} columns, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        if batch.rows() == 0 {
            return Err(Error::contract("empty batch"));
        }
        Ok(batch)
    }
}

fn check_dims(dims: &[usize; 4]) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidConfig(format!("layer dims must be > 0, got {dims:?}")));
    }
    Ok(())
}

fn relu_in_place(m: &mut DenseMatrix) {
    for v in m.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DenseMatrix {
        let vals = (0..n * p).map(|_| rng.random_range(-2.0..2.0)).collect();
        DenseMatrix::from_vec(n, p, vals).unwrap()
    }

    #[test]
    fn zero_network_maps_to_zero() {
        let net = MlpNetwork::zeros([3, 4, 4, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = net.forward(&random_batch(&mut rng, 5, 3)).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_clamps_negative_input() {
        // Single unit path x -> h1 -> h2 -> out with unit weights.
        let mut net = MlpNetwork::zeros([1, 1, 1, 1]).unwrap();
        for layer in net.layers_mut() {
            layer.weights.set(0, 0, 1.0);
        }
        let neg = DenseMatrix::from_vec(1, 1, vec![-1.0]).unwrap();
        let pos = DenseMatrix::from_vec(1, 1, vec![2.5]).unwrap();
        assert_eq!(net.forward(&neg).unwrap().get(0, 0), 0.0);
        assert_eq!(net.forward(&pos).unwrap().get(0, 0), 2.5);
    }

    #[test]
    fn forward_matches_scalar_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = MlpNetwork::new([4, 2, 2, 2], &mut rng).unwrap();
        let batch = random_batch(&mut rng, 3, 4);
        let out = net.forward(&batch).unwrap();
        for r in 0..3 {
            let mut x: Vec<f64> = batch.row(r).to_vec();
            for (l, layer) in net.layers().iter().enumerate() {
                let mut y = vec![0.0; layer.out_dim()];
                for (j, yj) in y.iter_mut().enumerate() {
                    let mut s = layer.bias[j];
                    for (i, xi) in x.iter().enumerate() {
                        s += xi * layer.weights.get(i, j);
                    }
                    *yj = if l < 2 { s.max(0.0) } else { s };
                }
                x = y;
            }
            for (c, v) in x.iter().enumerate() {
                assert!((out.get(r, c) - v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let net = MlpNetwork::zeros([3, 2, 2, 2]).unwrap();
        let bad = DenseMatrix::zeros(2, 4);
        assert!(matches!(net.forward(&bad), Err(Error::Contract(_))));
        let good = DenseMatrix::zeros(2, 3);
        assert!(net.backward(&good, &DenseMatrix::zeros(3, 2)).is_err());
        assert!(MlpNetwork::zeros([3, 0, 2, 2]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = MlpNetwork::new([4, 3, 3, 2], &mut rng).unwrap();
        let batch = random_batch(&mut rng, 6, 4);
        let g = net.backward(&batch, &DenseMatrix::zeros(6, 2)).unwrap();
        assert!(g.groups().iter().all(|s| s.iter().all(|&v| v == 0.0)));
        assert!(g.input.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn last_layer_weight_gradient_closed_form() {
        // With ones upstream, dL/dW2 = H2ᵀ·1 where H2 is the second hidden activation.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = MlpNetwork::new([4, 3, 3, 2], &mut rng).unwrap();
        let batch = random_batch(&mut rng, 5, 4);
        let cache = net.forward_cached(&batch).unwrap();
        let ones = DenseMatrix::from_vec(5, 2, vec![1.0; 10]).unwrap();
        let g = net.backward_cached(&cache, &ones).unwrap();
        let h2 = &cache.inputs[2];
        for i in 0..3 {
            let col_sum: f64 = (0..5).map(|r| h2.get(r, i)).sum();
            for j in 0..2 {
                assert!((g.weights[2].get(i, j) - col_sum).abs() < 1e-14);
            }
        }
        assert_eq!(g.biases[2], vec![5.0, 5.0]);
    }

    #[test]
    fn positively_homogeneous_in_final_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = MlpNetwork::new([4, 5, 5, 3], &mut rng).unwrap();
        net.layers_mut()[2].bias.iter_mut().for_each(|b| *b = 0.0);
        let batch = random_batch(&mut rng, 4, 4);
        let base = net.forward(&batch).unwrap();
        let mut scaled = net.clone();
        scaled.layers_mut()[2]
            .weights
            .as_mut_slice()
            .iter_mut()
            .for_each(|w| *w *= 3.5);
        let out = scaled.forward(&batch).unwrap();
        for (a, b) in out.as_slice().iter().zip(base.as_slice()) {
            assert!((a - 3.5 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn glorot_init_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = MlpNetwork::new([10, 128, 128, 128], &mut rng).unwrap();
        let limit = (6.0f64 / 138.0).sqrt();
        assert!(net.layers()[0]
            .weights
            .as_slice()
            .iter()
            .all(|w| w.abs() <= limit));
        assert!(net.layers().iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        assert_eq!(net.dims(), [10, 128, 128, 128]);
    }
}
