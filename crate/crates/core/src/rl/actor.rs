use rand::Rng;
use rand_distr::StandardNormal;

use super::Observation;
use crate::error::{Error, Result};
use crate::nn::{Activation, Checkpoint, DenseNet, Parameterized, Tape, Tensor, Var};
use crate::stablenet::QParameter;
use crate::youla::{QInput, QOperator};

/// A policy that can run inside the controller and be differentiated from a
/// stored observation.
pub trait Actor: QOperator + Parameterized + Clone + Send {
    /// Action for `obs` recorded on `tape` with parameters `params`.
    fn action_tape(&self, tape: &mut Tape, params: &[Var], obs: &Observation) -> Result<Var>;

    /// Action for `obs` without keeping a tape around.
    fn action(&self, obs: &Observation) -> Result<f64> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape)?;
        let a = self.action_tape(&mut tape, &p, obs)?;
        let v = tape.scalar_value(a);
        if !v.is_finite() {
            return Err(Error::NonFinite("actor output"));
        }
        Ok(v)
    }

    fn checkpoint(&self) -> Checkpoint;

    /// Largest observed `V(f(z)) - beta V(z)` over `samples` random states,
    /// or `None` when the actor carries no stability certificate.
    fn certificate_violation<R: Rng + ?Sized>(&self, samples: usize, scale: f64, rng: &mut R) -> Result<Option<f64>>;
}

impl Actor for QParameter {
    fn action_tape(&self, tape: &mut Tape, params: &[Var], obs: &Observation) -> Result<Var> {
        let z_prev = tape.vector(&obs.z_prev)?;
        let r_prev = tape.scalar(obs.r_prev)?;
        let r_hat = tape.scalar(obs.input.r_hat)?;
        self.unrolled_action_tape(tape, params, z_prev, r_prev, r_hat)
    }

    fn checkpoint(&self) -> Checkpoint {
        QParameter::checkpoint(self)
    }

    fn certificate_violation<R: Rng + ?Sized>(&self, samples: usize, scale: f64, rng: &mut R) -> Result<Option<f64>> {
        let dynamics = self.dynamics();
        let lyap = dynamics.lyapunov();
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..samples {
            let z: Vec<f64> = (0..dynamics.dim())
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let step = dynamics.step_detail(&z)?;
            let gap = lyap.value(&step.next)? - dynamics.beta() * step.value;
            worst = worst.max(gap);
        }
        Ok(Some(worst))
    }
}

/// Unconstrained comparison policy: a feedforward map of `(e, y_bar, r_hat)`
/// with no internal state.
#[derive(Debug, Clone)]
pub struct FeedforwardActor {
    net: DenseNet,
}

impl FeedforwardActor {
    pub fn new<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Result<Self> {
        let net = DenseNet::new(
            &[3, hidden, hidden, 1],
            &[Activation::Softplus, Activation::Softplus, Activation::Identity],
            rng,
        )?;
        Ok(Self { net })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }
}

impl QOperator for FeedforwardActor {
    fn q_step(&mut self, input: &QInput) -> Result<f64> {
        let out = self.net.forward(&[input.error, input.prediction, input.r_hat])?[0];
        if !out.is_finite() {
            return Err(Error::NonFinite("feedforward actor output"));
        }
        Ok(out)
    }

    fn reset(&mut self) {}

    fn state(&self) -> Vec<f64> {
        Vec::new()
    }
}

impl Parameterized for FeedforwardActor {
    fn params(&self) -> Vec<&Tensor> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.params_mut()
    }

    fn param_names(&self) -> Vec<String> {
        self.net.param_names()
    }
}

impl Actor for FeedforwardActor {
    fn action_tape(&self, tape: &mut Tape, params: &[Var], obs: &Observation) -> Result<Var> {
        let x = tape.vector(&[obs.input.error, obs.input.prediction, obs.input.r_hat])?;
        let out = self.net.forward_tape(tape, params, x)?;
        tape.index(out, 0)
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(self).with_meta("actor", "feedforward")
    }

    fn certificate_violation<R: Rng + ?Sized>(&self, _: usize, _: f64, _: &mut R) -> Result<Option<f64>> {
        Ok(None)
    }
}
