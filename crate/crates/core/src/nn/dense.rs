use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, Tape, Tensor, Var};

/// A model that exposes its trainable tensors in a fixed order.
///
/// The order of [`params`](Parameterized::params), [`params_mut`](Parameterized::params_mut)
/// and [`param_names`](Parameterized::param_names) must agree; tape-based
/// forward functions consume the bound variables in the same order.
pub trait Parameterized {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
    fn param_names(&self) -> Vec<String>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Records every parameter as a leaf of `tape`.
    fn bind(&self, tape: &mut Tape) -> Result<Vec<Var>> {
        self.params().into_iter().map(|p| tape.leaf(p.clone())).collect()
    }

    /// Polyak averaging: `self = tau * source + (1 - tau) * self`.
    fn soft_update_from(&mut self, source: &Self, tau: f64)
    where
        Self: Sized,
    {
        for (dst, src) in self.params_mut().into_iter().zip(source.params()) {
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d = tau * s + (1.0 - tau) * *d;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// Shape (out, in).
    pub weight: Tensor,
    /// Shape (out, 1).
    pub bias: Tensor,
    pub activation: Activation,
}

/// Fully connected feed-forward network.
#[derive(Debug, Clone)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
}

impl DenseNet {
    /// `widths` lists input, hidden and output widths; one activation per layer.
    ///
    /// Weights and biases are drawn uniformly in `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(
        widths: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArgument("a dense net needs at least two widths".into()));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        if activations.len() != widths.len() - 1 {
            return Err(Error::shape(
                "dense activations",
                widths.len() - 1,
                activations.len(),
            ));
        }
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let scale = 1.0 / (w[0] as f64).sqrt();
                DenseLayer {
                    weight: Tensor::uniform(w[1], w[0], scale, rng),
                    bias: Tensor::uniform(w[1], 1, scale, rng),
                    activation,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("a dense net needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.shape() != (l.weight.rows(), 1) {
                return Err(Error::shape(
                    "dense bias",
                    format!("{}x1", l.weight.rows()),
                    format!("{:?}", l.bias.shape()),
                ));
            }
            if i > 0 && layers[i - 1].weight.rows() != l.weight.cols() {
                return Err(Error::shape(
                    "dense layer chain",
                    layers[i - 1].weight.rows(),
                    l.weight.cols(),
                ));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.rows()
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.weight.rows()))
            .collect()
    }

    /// Forward pass on `tape` with parameters previously bound by [`Parameterized::bind`].
    pub fn forward_tape(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        let in_dim = tape.value(x).rows();
        if in_dim != self.input_dim() || tape.value(x).cols() != 1 {
            return Err(Error::shape("dense forward", self.input_dim(), in_dim));
        }
        if params.len() != 2 * self.layers.len() {
            return Err(Error::shape("dense parameters", 2 * self.layers.len(), params.len()));
        }
        let mut h = x;
        for (layer, p) in self.layers.iter().zip(params.chunks(2)) {
            let wx = tape.matvec(p[0], h)?;
            let z = tape.add(wx, p[1])?;
            h = if layer.activation == Activation::Identity {
                z
            } else {
                tape.activation(layer.activation, z)?
            };
        }
        Ok(h)
    }

    /// Plain evaluation.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::shape("dense forward", self.input_dim(), x.len()));
        }
        let mut h = x.to_vec();
        for layer in &self.layers {
            let (m, n) = layer.weight.shape();
            let w = layer.weight.data();
            let b = layer.bias.data();
            h = (0..m)
                .map(|i| {
                    let z: f64 = w[i * n..(i + 1) * n].iter().zip(&h).map(|(a, b)| a * b).sum();
                    layer.activation.apply(z + b[i])
                })
                .collect();
        }
        Ok(h)
    }
}

impl Parameterized for DenseNet {
    fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("layer{i}.weight"), format!("layer{i}.bias")])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_net() -> DenseNet {
        DenseNet::from_layers(vec![DenseLayer {
            weight: Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]),
            bias: Tensor::zeros(2, 1),
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        assert_eq!(identity_net().forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn softplus_of_zero() {
        let net = DenseNet::from_layers(vec![DenseLayer {
            weight: Tensor::from_vec(1, 1, vec![1.0]),
            bias: Tensor::zeros(1, 1),
            activation: Activation::Softplus,
        }])
        .unwrap();
        let y = net.forward(&[0.0]).unwrap()[0];
        assert!((y - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn zero_weights_propagate_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = DenseNet::new(&[3, 5, 2], &[Activation::Tanh; 2], &mut rng).unwrap();
        for p in net.params_mut() {
            p.data_mut().fill(0.0);
        }
        assert_eq!(net.forward(&[0.3, -7.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let err = identity_net().forward(&[1.0]).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }), "{err}");
        assert!(DenseNet::new(&[2, 0, 1], &[Activation::Tanh; 2], &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(DenseNet::new(&[2, 3, 1], &[Activation::Tanh; 1], &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn parameter_count_matches_layer_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = DenseNet::new(&[8, 64, 64, 1], &[Activation::Softplus, Activation::Softplus, Activation::Identity], &mut rng).unwrap();
        assert_eq!(net.param_count(), 8 * 64 + 64 + 64 * 64 + 64 + 64 + 1);
        assert_eq!(net.param_names().len(), net.params().len());
        assert_eq!(net.widths(), vec![8, 64, 64, 1]);
    }

    #[test]
    fn tape_and_plain_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::new(&[3, 7, 4, 2], &[Activation::Tanh, Activation::SmoothRelu, Activation::Softplus], &mut rng).unwrap();
        let x = [0.4, -1.2, 0.9];
        let mut tape = Tape::new();
        let p = net.bind(&mut tape).unwrap();
        let xv = tape.vector(&x).unwrap();
        let y = net.forward_tape(&mut tape, &p, xv).unwrap();
        assert_eq!(tape.value(y).data(), net.forward(&x).unwrap().as_slice());
    }

    #[test]
    fn seeded_construction_is_deterministic() {
        let a = DenseNet::new(&[2, 4, 1], &[Activation::Tanh, Activation::Identity], &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = DenseNet::new(&[2, 4, 1], &[Activation::Tanh, Activation::Identity], &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.params(), b.params());
    }
}
