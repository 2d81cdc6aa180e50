use serde::{Deserialize, Serialize};

/// Width of the quadratic region of [`Activation::SmoothRelu`].
pub const SMOOTH_RELU_WIDTH: f64 = 0.1;

/// Element-wise activation functions.
///
/// `SmoothRelu` is exactly 0 for `x <= 0`, `x^2 / (2d)` on `(0, d)` and
/// `x - d/2` for `x >= d` with `d = SMOOTH_RELU_WIDTH`. It is convex,
/// nondecreasing and continuously differentiable, which is what the
/// input-convex Lyapunov network needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    Softplus,
    Relu,
    SmoothRelu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Softplus => softplus(x),
            Activation::Relu => x.max(0.0),
            Activation::SmoothRelu => smooth_relu(x),
            Activation::Identity => x,
        }
    }

    /// Derivative at `x`, given `y = apply(x)`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Softplus => sigmoid(x),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::SmoothRelu => {
                if x <= 0.0 {
                    0.0
                } else if x < SMOOTH_RELU_WIDTH {
                    x / SMOOTH_RELU_WIDTH
                } else {
                    1.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Softplus => "softplus",
            Activation::Relu => "relu",
            Activation::SmoothRelu => "smooth-relu",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "tanh" => Activation::Tanh,
            "softplus" => Activation::Softplus,
            "relu" => Activation::Relu,
            "smooth-relu" => Activation::SmoothRelu,
            "identity" => Activation::Identity,
            _ => return None,
        })
    }
}

/// `ln(1 + e^x)` without overflow for large `x`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn smooth_relu(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < SMOOTH_RELU_WIDTH {
        x * x / (2.0 * SMOOTH_RELU_WIDTH)
    } else {
        x - SMOOTH_RELU_WIDTH / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [Activation; 5] = [
        Activation::Tanh,
        Activation::Softplus,
        Activation::Relu,
        Activation::SmoothRelu,
        Activation::Identity,
    ];

    #[test]
    fn softplus_at_zero_is_ln2() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn finite_on_bounded_inputs() {
        for act in ALL {
            for i in -500..=500 {
                let x = i as f64 * 0.1;
                let y = act.apply(x);
                assert!(y.is_finite(), "{} at {x}", act.name());
                assert!(act.derivative(x, y).is_finite());
            }
        }
        assert!((softplus(50.0) - 50.0).abs() < 1e-15);
        assert!(softplus(-50.0) > 0.0);
    }

    #[test]
    fn smooth_relu_is_continuous_at_knots() {
        let d = SMOOTH_RELU_WIDTH;
        assert_eq!(smooth_relu(0.0), 0.0);
        assert!((smooth_relu(d - 1e-12) - smooth_relu(d)).abs() < 1e-11);
        assert!((smooth_relu(d) - d / 2.0).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for act in ALL {
            for &x in &[-2.3, -0.4, 0.03, 0.07, 0.5, 1.7] {
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                let an = act.derivative(x, act.apply(x));
                assert!((fd - an).abs() < 1e-6, "{} at {x}: {fd} vs {an}", act.name());
            }
        }
    }

    #[test]
    fn names_round_trip() {
        for act in ALL {
            assert_eq!(Activation::from_name(act.name()), Some(act));
        }
        assert_eq!(Activation::from_name("gelu"), None);
    }
}
