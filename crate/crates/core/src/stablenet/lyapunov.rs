use rand::Rng;

use crate::error::{ensure_finite, Error, Result};
use crate::nn::{Activation, Parameterized, Tape, Tensor, Var};

/// Shift applied to freshly drawn raw hidden-to-hidden weights so that
/// `softplus(raw)` starts small and the ICNN output grows gently with depth.
const RAW_WEIGHT_SHIFT: f64 = -3.0;

/// One hidden layer of the input-convex body past the first.
#[derive(Debug, Clone)]
struct ConvexLayer {
    /// Raw hidden-to-hidden weights; the effective weights are `softplus(raw)`.
    raw_hidden: Tensor,
    /// Passthrough weights from the network input.
    input: Tensor,
    bias: Tensor,
}

/// Convex, positive-definite Lyapunov candidate
///
/// `V(z) = smooth_relu(g(z) - g(0)) + eps * |z|^2`
///
/// where `g` is an input-convex network: nonnegative hidden-to-hidden
/// weights (stored raw and passed through softplus) and convex nondecreasing
/// smooth-ReLU activations. `V(0) = 0` exactly and `V(z) >= eps * |z|^2`.
#[derive(Debug, Clone)]
pub struct LyapunovNet {
    first_weight: Tensor,
    first_bias: Tensor,
    hidden: Vec<ConvexLayer>,
    out_raw_hidden: Tensor,
    out_input: Tensor,
    eps: f64,
}

impl LyapunovNet {
    /// `hidden` lists the widths of the convex body, e.g. `[16, 16]`.
    pub fn new<R: Rng + ?Sized>(dim: usize, hidden: &[usize], eps: f64, rng: &mut R) -> Result<Self> {
        if dim == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::InvalidArgument("lyapunov net widths must be positive".into()));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidArgument(format!("quadratic floor must be positive, got {eps}")));
        }
        let in_scale = 1.0 / (dim as f64).sqrt();
        let first_weight = Tensor::uniform(hidden[0], dim, in_scale, rng);
        let first_bias = Tensor::uniform(hidden[0], 1, in_scale, rng);
        let raw = |rows: usize, cols: usize, rng: &mut R| {
            Tensor::uniform(rows, cols, 1.0 / (cols as f64).sqrt(), rng).map(|v| v + RAW_WEIGHT_SHIFT)
        };
        let hidden_layers = hidden
            .windows(2)
            .map(|w| ConvexLayer {
                raw_hidden: raw(w[1], w[0], rng),
                input: Tensor::uniform(w[1], dim, in_scale, rng),
                bias: Tensor::uniform(w[1], 1, in_scale, rng),
            })
            .collect();
        let last = *hidden.last().unwrap();
        Ok(Self {
            first_weight,
            first_bias,
            hidden: hidden_layers,
            out_raw_hidden: raw(1, last, rng),
            out_input: Tensor::uniform(1, dim, in_scale, rng),
            eps,
        })
    }

    pub fn dim(&self) -> usize {
        self.first_weight.cols()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        std::iter::once(self.first_weight.rows())
            .chain(self.hidden.iter().map(|l| l.raw_hidden.rows()))
            .collect()
    }

    fn convex_body(&self, tape: &mut Tape, p: &[Var], z: Var) -> Result<Var> {
        let wz = tape.matvec(p[0], z)?;
        let pre = tape.add(wz, p[1])?;
        let mut h = tape.activation(Activation::SmoothRelu, pre)?;
        for layer in p[2..2 + 3 * self.hidden.len()].chunks(3) {
            let positive = tape.activation(Activation::Softplus, layer[0])?;
            let uh = tape.matvec(positive, h)?;
            let wz = tape.matvec(layer[1], z)?;
            let s = tape.add(uh, wz)?;
            let pre = tape.add(s, layer[2])?;
            h = tape.activation(Activation::SmoothRelu, pre)?;
        }
        let n = p.len();
        let positive = tape.activation(Activation::Softplus, p[n - 2])?;
        let uh = tape.matvec(positive, h)?;
        let wz = tape.matvec(p[n - 1], z)?;
        tape.add(uh, wz)
    }

    /// `V(z)` recorded on `tape`; `params` come from [`Parameterized::bind`].
    pub fn value_tape(&self, tape: &mut Tape, params: &[Var], z: Var) -> Result<Var> {
        if tape.value(z).rows() != self.dim() {
            return Err(Error::shape("lyapunov input", self.dim(), tape.value(z).rows()));
        }
        let g = self.convex_body(tape, params, z)?;
        let origin = tape.vector(&vec![0.0; self.dim()])?;
        let g0 = self.convex_body(tape, params, origin)?;
        let shifted = tape.sub(g, g0)?;
        let body = tape.activation(Activation::SmoothRelu, shifted)?;
        let sq = tape.square_norm(z)?;
        let floor = tape.scale(sq, self.eps)?;
        tape.add(body, floor)
    }

    /// Evaluates `V(z)`; rejects non-finite input.
    pub fn value(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim() {
            return Err(Error::shape("lyapunov input", self.dim(), z.len()));
        }
        ensure_finite(z, "lyapunov input")?;
        let mut tape = Tape::new();
        let p = self.bind(&mut tape)?;
        let zv = tape.vector(z)?;
        let v = self.value_tape(&mut tape, &p, zv)?;
        Ok(tape.scalar_value(v))
    }
}

impl Parameterized for LyapunovNet {
    fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.first_weight, &self.first_bias];
        for l in &self.hidden {
            out.extend([&l.raw_hidden, &l.input, &l.bias]);
        }
        out.extend([&self.out_raw_hidden, &self.out_input]);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.first_weight, &mut self.first_bias];
        for l in &mut self.hidden {
            out.extend([&mut l.raw_hidden, &mut l.input, &mut l.bias]);
        }
        out.extend([&mut self.out_raw_hidden, &mut self.out_input]);
        out
    }

    fn param_names(&self) -> Vec<String> {
        let mut out = vec!["lyap.first.weight".to_owned(), "lyap.first.bias".to_owned()];
        for i in 0..self.hidden.len() {
            out.push(format!("lyap.hidden{i}.raw"));
            out.push(format!("lyap.hidden{i}.input"));
            out.push(format!("lyap.hidden{i}.bias"));
        }
        out.push("lyap.out.raw".to_owned());
        out.push("lyap.out.input".to_owned());
        out
    }
}
