use rand::Rng;

use super::{gemv_acc, gemv_t_acc, ger_acc, uniform_init};
use crate::error::dim_check;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Fully connected layer `activation(W x + b)`, `W` row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs], activation }
    }

    /// Weights uniform in `+-1/sqrt(inputs)`, zero bias.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        Self { weights: uniform_init(inputs * outputs, inputs, rng), ..Self::zeros(inputs, outputs, activation) }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        dim_check("dense layer input", self.inputs, x.len())?;
        Ok(self.forward(x))
    }

    pub(crate) fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        gemv_acc(&self.weights, self.inputs, x, &mut out);
        for v in &mut out {
            *v = self.activation.apply(*v);
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub(crate) fn backward(&self, x: &[f64], y: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        let da: Vec<f64> = dy.iter().zip(y).map(|(d, &yv)| d * self.activation.derivative_from_output(yv)).collect();
        ger_acc(&mut grad.weights, self.inputs, &da, x);
        for (g, d) in grad.bias.iter_mut().zip(&da) {
            *g += d;
        }
        let mut dx = vec![0.0; self.inputs];
        gemv_t_acc(&self.weights, self.inputs, &da, &mut dx);
        dx
    }
}

pub fn fc_apply(params: &Dense, x: &[f64]) -> Result<Vec<f64>> {
    params.apply(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let mut d = Dense::zeros(3, 3, Activation::Identity);
        for k in 0..3 {
            d.weights[k * 3 + k] = 1.0;
        }
        assert_eq!(fc_apply(&d, &[0.5, -2.0, 7.0]).unwrap(), vec![0.5, -2.0, 7.0]);
    }

    #[test]
    fn zero_weights_yield_activated_bias() {
        let mut d = Dense::zeros(2, 3, Activation::Tanh);
        d.bias = vec![0.1, -0.2, 3.0];
        let y = d.apply(&[9.0, -9.0]).unwrap();
        for (a, b) in y.iter().zip(&d.bias) {
            assert_eq!(*a, b.tanh());
        }
        let mut r = Dense::zeros(2, 2, Activation::Relu);
        r.bias = vec![-1.0, 2.0];
        assert_eq!(r.apply(&[1.0, 1.0]).unwrap(), vec![0.0, 2.0]);
    }

    #[test]
    fn matches_hand_multiply() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut d = Dense::init(2, 3, Activation::Identity, &mut rng);
        d.bias = vec![0.3, -0.1, 0.25];
        let x = [0.7, -1.3];
        let y = d.apply(&x).unwrap();
        for r in 0..3 {
            let want = d.weights[r * 2] * x[0] + d.weights[r * 2 + 1] * x[1] + d.bias[r];
            assert!((y[r] - want).abs() < 1e-12);
        }
        assert!(matches!(d.apply(&[1.0]), Err(Error::Dimension(_))));
    }
}
