use serde::{Deserialize, Serialize};

/// LeakyReLU negative-side slope used everywhere in the crate.
pub const LEAKY_SLOPE: f64 = 0.2;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Pointwise nonlinearities available to the feed-forward blocks.
///
/// GELU uses the tanh approximation
/// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Gelu,
    LeakyRelu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            // 0.5 (1 + tanh u) == sigmoid(2u), one exp instead of a tanh
            Activation::Gelu => x * sigmoid(2.0 * GELU_C * (x + GELU_A * x * x * x)),
            Activation::LeakyRelu => {
                if x >= 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative evaluated at the pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => gelu_with_derivative(x).1,
            Activation::LeakyRelu => {
                if x >= 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    /// Value and derivative in one evaluation.
    #[inline]
    pub fn apply_with_derivative(self, x: f64) -> (f64, f64) {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                (t, 1.0 - t * t)
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                (s, s * (1.0 - s))
            }
            Activation::Gelu => gelu_with_derivative(x),
            _ => (self.apply(x), self.derivative(x)),
        }
    }
}

#[inline]
fn gelu_with_derivative(x: f64) -> (f64, f64) {
    let s = sigmoid(2.0 * GELU_C * (x + GELU_A * x * x * x));
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    (x * s, s + 2.0 * x * s * (1.0 - s) * du)
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero() {
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::Sigmoid.derivative(0.0), 0.25);
    }

    #[test]
    fn leaky_relu_slope() {
        assert!((Activation::LeakyRelu.apply(-1.0) + 0.2).abs() < 1e-15);
        assert_eq!(Activation::LeakyRelu.apply(3.0), 3.0);
    }

    #[test]
    fn gelu_matches_tanh_form() {
        for &x in &[-6.0, -1.7, -0.3, 0.0, 0.2, 1.1, 4.0] {
            let u: f64 = GELU_C * (x + GELU_A * x * x * x);
            let reference = 0.5 * x * (1.0 + u.tanh());
            assert!((Activation::Gelu.apply(x) - reference).abs() < 1e-15);
        }
    }

    #[test]
    fn derivatives_match_central_differences() {
        let h = 1e-6;
        for act in [
            Activation::Gelu,
            Activation::Sigmoid,
            Activation::Tanh,
            Activation::Identity,
        ] {
            for &x in &[-2.3, -0.4, 0.1, 0.9, 3.1] {
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                let an = act.derivative(x);
                assert!((fd - an).abs() < 1e-8, "{act:?} at {x}: {fd} vs {an}");
            }
        }
    }
}
