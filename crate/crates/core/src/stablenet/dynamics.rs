use rand::Rng;

use crate::error::{ensure_finite, Error, Result};
use crate::nn::{Activation, DenseNet, Parameterized, Tape, Tensor, Var};
use crate::stablenet::LyapunovNet;

/// Autonomous dynamics `z' = gamma(z) * fhat(z)` that decrease `V` by at
/// least the factor `beta` at every step.
///
/// `fhat(z) = net(z) - net(0)` fixes the origin. When the proposal already
/// satisfies `V(fhat(z)) <= beta V(z)` it is returned unchanged (`gamma = 1`);
/// otherwise it is scaled by `gamma = beta V(z) / V(fhat(z)) < 1`. Convexity
/// of `V` with `V(0) = 0` gives `V(gamma x) <= gamma V(x)`, so the scaled
/// state lands on the level set `beta V(z)`.
#[derive(Debug, Clone)]
pub struct StableDynamics {
    proposal: DenseNet,
    lyapunov: LyapunovNet,
    beta: f64,
}

/// Intermediate quantities of one corrected step.
#[derive(Debug, Clone, PartialEq)]
pub struct StableStep {
    pub proposal: Vec<f64>,
    pub next: Vec<f64>,
    pub gamma: f64,
    pub value: f64,
    pub proposal_value: f64,
}

impl StableDynamics {
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        hidden: usize,
        beta: f64,
        eps: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let proposal = DenseNet::new(
            &[dim, hidden, hidden, dim],
            &[Activation::Tanh, Activation::Tanh, Activation::Identity],
            rng,
        )?;
        let lyapunov = LyapunovNet::new(dim, &[hidden, hidden], eps, rng)?;
        Self::from_parts(proposal, lyapunov, beta)
    }

    pub fn from_parts(proposal: DenseNet, lyapunov: LyapunovNet, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidArgument(format!("beta must lie in (0, 1), got {beta}")));
        }
        if proposal.input_dim() != lyapunov.dim() || proposal.output_dim() != lyapunov.dim() {
            return Err(Error::shape(
                "stable dynamics",
                format!("{0} -> {0}", lyapunov.dim()),
                format!("{} -> {}", proposal.input_dim(), proposal.output_dim()),
            ));
        }
        Ok(Self {
            proposal,
            lyapunov,
            beta,
        })
    }

    pub fn dim(&self) -> usize {
        self.lyapunov.dim()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn lyapunov(&self) -> &LyapunovNet {
        &self.lyapunov
    }

    pub fn proposal_net(&self) -> &DenseNet {
        &self.proposal
    }

    fn split<'a>(&self, params: &'a [Var]) -> (&'a [Var], &'a [Var]) {
        params.split_at(2 * self.proposal.layers().len())
    }

    /// `fhat(z)` recorded on `tape`.
    pub fn proposal_tape(&self, tape: &mut Tape, params: &[Var], z: Var) -> Result<Var> {
        let (net_params, _) = self.split(params);
        let at_z = self.proposal.forward_tape(tape, net_params, z)?;
        let origin = tape.vector(&vec![0.0; self.dim()])?;
        let at_origin = self.proposal.forward_tape(tape, net_params, origin)?;
        tape.sub(at_z, at_origin)
    }

    /// Corrected next state recorded on `tape`. Gradients flow through the
    /// scale factor as well as through `fhat`.
    pub fn forward_tape(&self, tape: &mut Tape, params: &[Var], z: Var) -> Result<Var> {
        let (_, lyap_params) = self.split(params);
        let fhat = self.proposal_tape(tape, params, z)?;
        let v_z = self.lyapunov.value_tape(tape, lyap_params, z)?;
        let v_f = self.lyapunov.value_tape(tape, lyap_params, fhat)?;
        let (vz, vf) = (tape.scalar_value(v_z), tape.scalar_value(v_f));
        if !(vz.is_finite() && vf.is_finite() && tape.value(fhat).is_finite()) {
            return Err(Error::NonFinite("stable dynamics intermediate"));
        }
        // Covers V(fhat) = 0 as well: fhat is then the origin and gamma = 1.
        if vf <= self.beta * vz {
            return Ok(fhat);
        }
        let target = tape.scale(v_z, self.beta)?;
        let gamma = tape.div(target, v_f)?;
        tape.scale_by(fhat, gamma)
    }

    /// One corrected step with its intermediate values.
    pub fn step_detail(&self, z: &[f64]) -> Result<StableStep> {
        if z.len() != self.dim() {
            return Err(Error::shape("stable dynamics input", self.dim(), z.len()));
        }
        ensure_finite(z, "stable dynamics input")?;
        let mut tape = Tape::new();
        let params = self.bind(&mut tape)?;
        let (_, lyap_params) = self.split(&params);
        let zv = tape.vector(z)?;
        let fhat = self.proposal_tape(&mut tape, &params, zv)?;
        let v_z = self.lyapunov.value_tape(&mut tape, lyap_params, zv)?;
        let v_f = self.lyapunov.value_tape(&mut tape, lyap_params, fhat)?;
        let proposal = tape.value(fhat).data().to_vec();
        let (value, proposal_value) = (tape.scalar_value(v_z), tape.scalar_value(v_f));
        if !(value.is_finite() && proposal_value.is_finite()) {
            return Err(Error::NonFinite("stable dynamics intermediate"));
        }
        ensure_finite(&proposal, "stable dynamics intermediate")?;
        let (gamma, next) = if proposal_value <= self.beta * value {
            (1.0, proposal.clone())
        } else {
            let gamma = self.beta * value / proposal_value;
            (gamma, proposal.iter().map(|x| gamma * x).collect())
        };
        Ok(StableStep {
            proposal,
            next,
            gamma,
            value,
            proposal_value,
        })
    }

    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.step_detail(z)?.next)
    }

    /// The uncorrected proposal `fhat(z)`.
    pub fn proposal(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.step_detail(z)?.proposal)
    }
}

impl Parameterized for StableDynamics {
    fn params(&self) -> Vec<&Tensor> {
        let mut out = self.proposal.params();
        out.extend(self.lyapunov.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.proposal.params_mut();
        out.extend(self.lyapunov.params_mut());
        out
    }

    fn param_names(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .proposal
            .param_names()
            .into_iter()
            .map(|n| format!("fhat.{n}"))
            .collect();
        out.extend(self.lyapunov.param_names());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
        (0..n)
            .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect()
    }

    #[test]
    fn origin_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = StableDynamics::new(4, 16, 0.99, 1e-3, &mut rng).unwrap();
        assert_eq!(d.forward(&[0.0; 4]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn accepted_proposals_are_returned_bit_for_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = StableDynamics::new(4, 16, 0.99, 1e-3, &mut rng).unwrap();
        let mut accepted = 0;
        for _ in 0..2000 {
            let z = normal_vec(&mut rng, 4, 1.0);
            let step = d.step_detail(&z).unwrap();
            if step.proposal_value <= d.beta() * step.value {
                accepted += 1;
                assert_eq!(step.next, step.proposal);
                assert_eq!(step.gamma, 1.0);
            } else {
                assert!(step.gamma < 1.0 && step.gamma >= 0.0);
            }
        }
        assert!(accepted > 0, "no sample exercised the accepting branch");
    }

    #[test]
    fn decrease_condition_holds_on_random_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let d = StableDynamics::new(4, 16, 0.9, 1e-3, &mut rng).unwrap();
            for _ in 0..500 {
                let z = normal_vec(&mut rng, 4, 2.0);
                let next = d.forward(&z).unwrap();
                let lhs = d.lyapunov().value(&next).unwrap();
                let rhs = d.beta() * d.lyapunov().value(&z).unwrap();
                assert!(lhs <= rhs + 1e-9, "{lhs} > {rhs}");
            }
        }
    }

    #[test]
    fn tape_and_plain_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = StableDynamics::new(3, 8, 0.95, 1e-3, &mut rng).unwrap();
        for _ in 0..50 {
            let z = normal_vec(&mut rng, 3, 1.5);
            let mut tape = Tape::new();
            let p = d.bind(&mut tape).unwrap();
            let zv = tape.vector(&z).unwrap();
            let out = d.forward_tape(&mut tape, &p, zv).unwrap();
            let plain = d.forward(&z).unwrap();
            for (a, b) in tape.value(out).data().iter().zip(&plain) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rejects_invalid_beta_and_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(StableDynamics::new(2, 4, 1.0, 1e-3, &mut rng).is_err());
        assert!(StableDynamics::new(2, 4, 0.0, 1e-3, &mut rng).is_err());
        let d = StableDynamics::new(2, 4, 0.9, 1e-3, &mut rng).unwrap();
        assert!(d.forward(&[f64::INFINITY, 0.0]).is_err());
        assert!(d.forward(&[1.0]).is_err());
    }
}
