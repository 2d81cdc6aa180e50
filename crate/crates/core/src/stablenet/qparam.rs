use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::nn::{Checkpoint, Parameterized, Tape, Tensor, Var};
use crate::stablenet::StableDynamics;

/// Architecture and initialization of the Q parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QParameterConfig {
    /// Internal state dimension.
    pub state_dim: usize,
    /// Width of both hidden layers of the proposal and Lyapunov networks.
    pub hidden: usize,
    pub beta: f64,
    /// Quadratic floor of the Lyapunov candidate.
    pub eps: f64,
    /// Half-width of the uniform initialization of the input, output and
    /// feedthrough maps.
    pub io_scale: f64,
}

impl Default for QParameterConfig {
    fn default() -> Self {
        Self {
            state_dim: 4,
            hidden: 16,
            beta: 0.99,
            eps: 1e-3,
            io_scale: 1.0,
        }
    }
}

/// Control-affine stable operator
///
/// ```text
/// z'   = f(z) + B r
/// du_q = C z + D r
/// ```
///
/// with `f` the corrected [`StableDynamics`]. The autonomous part decays
/// geometrically in `V` for any weights.
#[derive(Debug, Clone)]
pub struct QParameter {
    dynamics: StableDynamics,
    input: Tensor,
    output: Tensor,
    feedthrough: Tensor,
    state: Vec<f64>,
}

impl QParameter {
    pub fn new<R: Rng + ?Sized>(cfg: &QParameterConfig, rng: &mut R) -> Result<Self> {
        let dynamics = StableDynamics::new(cfg.state_dim, cfg.hidden, cfg.beta, cfg.eps, rng)?;
        let n = cfg.state_dim;
        Ok(Self {
            dynamics,
            input: Tensor::uniform(n, 1, cfg.io_scale, rng),
            output: Tensor::uniform(1, n, cfg.io_scale, rng),
            feedthrough: Tensor::uniform(1, 1, cfg.io_scale, rng),
            state: vec![0.0; n],
        })
    }

    pub fn from_parts(dynamics: StableDynamics, input: Tensor, output: Tensor, feedthrough: f64) -> Result<Self> {
        let n = dynamics.dim();
        if input.shape() != (n, 1) || output.shape() != (1, n) {
            return Err(Error::shape(
                "q parameter maps",
                format!("B {n}x1, C 1x{n}"),
                format!("B {:?}, C {:?}", input.shape(), output.shape()),
            ));
        }
        Ok(Self {
            dynamics,
            input,
            output,
            feedthrough: Tensor::scalar(feedthrough),
            state: vec![0.0; n],
        })
    }

    pub fn dynamics(&self) -> &StableDynamics {
        &self.dynamics
    }

    pub fn state_dim(&self) -> usize {
        self.state.len()
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn set_state(&mut self, z: &[f64]) -> Result<()> {
        if z.len() != self.state.len() {
            return Err(Error::shape("q state", self.state.len(), z.len()));
        }
        ensure_finite(z, "q state")?;
        self.state.copy_from_slice(z);
        Ok(())
    }

    pub fn input_map(&self) -> &[f64] {
        self.input.data()
    }

    pub fn output_map(&self) -> &[f64] {
        self.output.data()
    }

    pub fn feedthrough(&self) -> f64 {
        self.feedthrough.item()
    }

    pub fn reset(&mut self) {
        self.state.fill(0.0);
    }

    /// Emits `C z + D r` and advances the state to `f(z) + B r`.
    pub fn step(&mut self, r_hat: f64) -> Result<f64> {
        if !r_hat.is_finite() {
            return Err(Error::NonFinite("q parameter input"));
        }
        let out = self.output_value(&self.state, r_hat);
        let next = self.transition(&self.state, r_hat)?;
        if !out.is_finite() {
            return Err(Error::NonFinite("q parameter output"));
        }
        self.state = next;
        Ok(out)
    }

    fn output_value(&self, z: &[f64], r_hat: f64) -> f64 {
        let cz: f64 = self.output.data().iter().zip(z).map(|(c, x)| c * x).sum();
        cz + self.feedthrough.item() * r_hat
    }

    /// `f(z) + B r` without touching the internal state.
    pub fn transition(&self, z: &[f64], r_hat: f64) -> Result<Vec<f64>> {
        let fz = self.dynamics.forward(z)?;
        let next: Vec<f64> = fz
            .iter()
            .zip(self.input.data())
            .map(|(f, b)| f + b * r_hat)
            .collect();
        ensure_finite(&next, "q parameter state")?;
        Ok(next)
    }

    fn split<'a>(&self, params: &'a [Var]) -> (&'a [Var], [Var; 3]) {
        let n = params.len();
        (&params[..n - 3], [params[n - 3], params[n - 2], params[n - 1]])
    }

    /// `f(z) + B r` on `tape`.
    pub fn transition_tape(&self, tape: &mut Tape, params: &[Var], z: Var, r_hat: Var) -> Result<Var> {
        let (dyn_params, [b, _, _]) = self.split(params);
        let fz = self.dynamics.forward_tape(tape, dyn_params, z)?;
        let br = tape.scale_by(b, r_hat)?;
        tape.add(fz, br)
    }

    /// `C z + D r` on `tape`.
    pub fn output_tape(&self, tape: &mut Tape, params: &[Var], z: Var, r_hat: Var) -> Result<Var> {
        let (_, [_, c, d]) = self.split(params);
        let cz = tape.matvec(c, z)?;
        let dr = tape.mul(d, r_hat)?;
        tape.add(cz, dr)
    }

    /// Action at the current step recomputed from the previous state and
    /// inputs: `C (f(z_prev) + B r_prev) + D r`.
    pub fn unrolled_action_tape(
        &self,
        tape: &mut Tape,
        params: &[Var],
        z_prev: Var,
        r_prev: Var,
        r_hat: Var,
    ) -> Result<Var> {
        let z = self.transition_tape(tape, params, z_prev, r_prev)?;
        self.output_tape(tape, params, z, r_hat)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(self)
            .with_meta("beta", self.dynamics.beta())
            .with_meta("eps", self.dynamics.lyapunov().eps())
            .with_meta("n_q", self.state_dim())
    }
}

impl Parameterized for QParameter {
    fn params(&self) -> Vec<&Tensor> {
        let mut out = self.dynamics.params();
        out.extend([&self.input, &self.output, &self.feedthrough]);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.dynamics.params_mut();
        out.extend([&mut self.input, &mut self.output, &mut self.feedthrough]);
        out
    }

    fn param_names(&self) -> Vec<String> {
        let mut out = self.dynamics.param_names();
        out.extend(["q.B".to_owned(), "q.C".to_owned(), "q.D".to_owned()]);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn q(seed: u64) -> QParameter {
        QParameter::new(&QParameterConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn zero_state_zero_input_is_silent() {
        let mut q = q(0);
        assert_eq!(q.step(0.0).unwrap(), 0.0);
        assert_eq!(q.state(), &[0.0; 4]);
    }

    #[test]
    fn unit_input_from_rest_exposes_b_and_d() {
        let mut q = q(1);
        q.feedthrough.data_mut()[0] = 0.37;
        let b = q.input_map().to_vec();
        assert_eq!(q.step(1.0).unwrap(), 0.37);
        assert_eq!(q.state(), b.as_slice());
    }

    #[test]
    fn autonomous_state_follows_geometric_envelope() {
        let mut q = q(2);
        let z0 = vec![0.8, -1.3, 0.4, 2.0];
        q.set_state(&z0).unwrap();
        let lyap = q.dynamics().lyapunov().clone();
        let beta = q.dynamics().beta();
        let v0 = lyap.value(&z0).unwrap();
        for t in 1..=50 {
            q.step(0.0).unwrap();
            let vt = lyap.value(q.state()).unwrap();
            assert!(vt <= beta.powi(t) * v0 + 1e-9, "t={t}: {vt} > {}", beta.powi(t) * v0);
        }
        let norm_sq: f64 = q.state().iter().map(|x| x * x).sum();
        assert!(norm_sq <= beta.powi(50) / lyap.eps() * v0);
    }

    #[test]
    fn reset_is_idempotent_and_deterministic() {
        let mut a = q(3);
        let mut b = a.clone();
        a.step(1.5).unwrap();
        a.reset();
        a.reset();
        assert_eq!(a.state(), &[0.0; 4]);
        assert_eq!(a.step(0.0).unwrap(), 0.0);
        a.reset();
        b.reset();
        for r in [0.3, -1.0, 2.2, 0.0, 0.7] {
            assert_eq!(a.step(r).unwrap(), b.step(r).unwrap());
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut q = q(4);
        assert!(matches!(q.step(f64::NAN), Err(Error::NonFinite(_))));
        assert_eq!(q.state(), &[0.0; 4]);
    }

    #[test]
    fn tape_action_matches_stepping() {
        let mut q = q(5);
        q.feedthrough.data_mut()[0] = -0.2;
        let z_prev = vec![0.1, 0.5, -0.3, 0.9];
        let (r_prev, r_now) = (0.4, -0.8);
        q.set_state(&z_prev).unwrap();
        q.step(r_prev).unwrap();
        let expected = q.step(r_now).unwrap();

        let mut tape = Tape::new();
        let p = q.bind(&mut tape).unwrap();
        let zv = tape.vector(&z_prev).unwrap();
        let rp = tape.scalar(r_prev).unwrap();
        let rn = tape.scalar(r_now).unwrap();
        let a = q.unrolled_action_tape(&mut tape, &p, zv, rp, rn).unwrap();
        assert!((tape.scalar_value(a) - expected).abs() < 1e-14);
    }

    #[test]
    fn checkpoint_records_architecture() {
        let q = q(6);
        let ck = q.checkpoint();
        assert_eq!(ck.meta["n_q"], "4");
        assert_eq!(ck.meta["beta"], "0.99");
        let mut other = super::tests::q(7);
        ck.load_into(&mut other).unwrap();
        assert_eq!(other.params(), q.params());
    }
}
