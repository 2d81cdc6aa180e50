use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moment accumulators for one parameter set (minimization convention).
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>, config: AdamConfig) -> Self {
        let first: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.rows(), p.cols()))
            .collect();
        let second = first.clone();
        Self {
            config,
            first,
            second,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.second
    }

    /// Applies one update. The whole update is rejected, leaving parameters
    /// and moments untouched, if any gradient entry is non-finite.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::shape(
                "adam parameter count",
                self.first.len(),
                format!("{} params / {} grads", params.len(), grads.len()),
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != m.shape() || g.shape() != m.shape() {
                return Err(Error::shape(
                    "adam gradient",
                    format!("{:?}", m.shape()),
                    format!("{:?} / {:?}", p.shape(), g.shape()),
                ));
            }
        }
        if !grads.iter().all(Tensor::is_finite) {
            return Err(Error::NonFinite("adam gradient"));
        }

        self.steps += 1;
        let AdamConfig {
            step_size,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.steps as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);

        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for (i, &gi) in g.data().iter().enumerate() {
                md[i] = beta1 * md[i] + (1.0 - beta1) * gi;
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
                let m_hat = md[i] / correction1;
                let v_hat = vd[i] / correction2;
                pd[i] -= step_size * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_and_decays_moments() {
        let mut w = Tensor::column(vec![1.0, -2.0]);
        let mut adam = AdamState::new([&w], AdamConfig::default());
        adam.step(vec![&mut w], &[Tensor::column(vec![0.5, 0.5])]).unwrap();
        let before = w.clone();
        let m_before = adam.first_moments()[0].clone();
        adam.step(vec![&mut w], &[Tensor::zeros(2, 1)]).unwrap();
        let m_after = &adam.first_moments()[0];
        for (a, b) in m_after.data().iter().zip(m_before.data()) {
            assert!((a - 0.9 * b).abs() < 1e-15);
        }
        // Zero gradient with nonzero history still moves along the momentum;
        // a fresh state stays exactly put.
        let mut fresh = AdamState::new([&before], AdamConfig::default());
        let mut w2 = before.clone();
        fresh.step(vec![&mut w2], &[Tensor::zeros(2, 1)]).unwrap();
        assert_eq!(w2, before);
        assert_eq!(fresh.steps(), 1);
    }

    #[test]
    fn single_step_descends_square() {
        let mut w = Tensor::scalar(1.0);
        let mut adam = AdamState::new([&w], AdamConfig { step_size: 0.1, ..Default::default() });
        let g = Tensor::scalar(2.0 * w.item());
        adam.step(vec![&mut w], &[g]).unwrap();
        assert!(w.item() < 1.0);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // f(w) = (w0 - 3)^2 + 10 (w1 + 1)^2 + w0 w1, minimizer solves the 2x2 normal equations.
        let grad = |w: &[f64]| vec![2.0 * (w[0] - 3.0) + w[1], 20.0 * (w[1] + 1.0) + w[0]];
        // [[2, 1], [1, 20]] w = [6, -20]
        let det = 2.0 * 20.0 - 1.0;
        let w_star = [(6.0 * 20.0 - (-20.0)) / det, (2.0 * -20.0 - 6.0) / det];

        let mut w = Tensor::column(vec![0.0, 0.0]);
        let mut adam = AdamState::new([&w], AdamConfig { step_size: 0.1, ..Default::default() });
        for _ in 0..500 {
            let g = Tensor::column(grad(w.data()));
            adam.step(vec![&mut w], &[g]).unwrap();
        }
        let g = grad(w.data());
        let gnorm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert!(gnorm < 1e-3, "gradient norm {gnorm}, w = {:?}, w* = {w_star:?}", w.data());
        assert!((w.data()[0] - w_star[0]).abs() < 1e-3);
        assert!((w.data()[1] - w_star[1]).abs() < 1e-3);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut w = Tensor::column(vec![1.0, 2.0]);
        let mut adam = AdamState::new([&w], AdamConfig::default());
        let err = adam.step(vec![&mut w], &[Tensor::column(vec![f64::NAN, 0.0])]);
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(w.data(), &[1.0, 2.0]);
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut w = Tensor::column(vec![1.0, 2.0]);
        let mut adam = AdamState::new([&w], AdamConfig::default());
        assert!(adam.step(vec![&mut w], &[Tensor::scalar(1.0)]).is_err());
    }
}
