use rand::Rng;

use super::{gemv_acc, gemv_t_acc, ger_acc, sigmoid, uniform_init};
use crate::error::dim_check;
use crate::{Error, Result};

/// Gate blocks of the cell, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input,
    Forget,
    Output,
    /// Candidate cell update (tanh).
    Update,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Update];

    pub fn suffix(self) -> char {
        match self {
            Gate::Input => 'i',
            Gate::Forget => 'f',
            Gate::Output => 'o',
            Gate::Update => 'c',
        }
    }
}

/// LSTM cell. Per gate: input weights `hidden x input`, recurrent weights
/// `hidden x hidden`, bias `hidden`; all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub input_size: usize,
    pub hidden_size: usize,
    pub input_weights: [Vec<f64>; 4],
    pub recurrent_weights: [Vec<f64>; 4],
    pub bias: [Vec<f64>; 4],
}

/// Activations saved by the forward pass for BPTT.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Post-activation gate values, indexed like [`Gate::ALL`].
    pub gates: [Vec<f64>; 4],
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmCell {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let wx = vec![0.0; hidden_size * input_size];
        let wh = vec![0.0; hidden_size * hidden_size];
        let b = vec![0.0; hidden_size];
        Self {
            input_size,
            hidden_size,
            input_weights: [wx.clone(), wx.clone(), wx.clone(), wx],
            recurrent_weights: [wh.clone(), wh.clone(), wh.clone(), wh],
            bias: [b.clone(), b.clone(), b.clone(), b],
        }
    }

    /// Uniform `+-1/sqrt(fan_in)` weights, zero biases except forget bias `+1`.
    pub fn init<R: Rng + ?Sized>(input_size: usize, hidden_size: usize, rng: &mut R) -> Self {
        let mut cell = Self::zeros(input_size, hidden_size);
        let fan_in = input_size + hidden_size;
        for k in 0..4 {
            cell.input_weights[k] = uniform_init(hidden_size * input_size, fan_in, rng);
            cell.recurrent_weights[k] = uniform_init(hidden_size * hidden_size, fan_in, rng);
        }
        cell.bias[1].fill(1.0);
        cell
    }

    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        dim_check("lstm input", self.input_size, x.len())?;
        dim_check("lstm hidden state", self.hidden_size, h_prev.len())?;
        dim_check("lstm cell state", self.hidden_size, c_prev.len())?;
        let cache = self.forward(x, h_prev, c_prev);
        Ok((cache.h, cache.c))
    }

    pub(crate) fn forward(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> StepCache {
        let gates: [Vec<f64>; 4] = std::array::from_fn(|k| {
            let mut a = self.bias[k].clone();
            gemv_acc(&self.input_weights[k], self.input_size, x, &mut a);
            gemv_acc(&self.recurrent_weights[k], self.hidden_size, h_prev, &mut a);
            let squash: fn(f64) -> f64 = if k == 3 { f64::tanh } else { sigmoid };
            a.iter_mut().for_each(|v| *v = squash(*v));
            a
        });
        let [i, f, o, g] = &gates;
        let c: Vec<f64> = (0..self.hidden_size).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h = o.iter().zip(&tanh_c).map(|(a, b)| a * b).collect();
        StepCache { x: x.to_vec(), h_prev: h_prev.to_vec(), c_prev: c_prev.to_vec(), gates, c, tanh_c, h }
    }

    /// One BPTT step. `dh`/`dc` are the total gradients reaching this step's
    /// outputs; returns `(dx, dh_prev, dc_prev)` and accumulates into `grad`.
    pub(crate) fn backward(
        &self,
        cache: &StepCache,
        dh: &[f64],
        dc: &[f64],
        grad: &mut LstmCell,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.hidden_size;
        let [i, f, o, g] = &cache.gates;
        let mut dc_total = vec![0.0; n];
        let mut d_pre: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
        let mut dc_prev = vec![0.0; n];
        for k in 0..n {
            let tc = cache.tanh_c[k];
            dc_total[k] = dc[k] + dh[k] * o[k] * (1.0 - tc * tc);
            d_pre[0][k] = dc_total[k] * g[k] * i[k] * (1.0 - i[k]);
            d_pre[1][k] = dc_total[k] * cache.c_prev[k] * f[k] * (1.0 - f[k]);
            d_pre[2][k] = dh[k] * tc * o[k] * (1.0 - o[k]);
            d_pre[3][k] = dc_total[k] * i[k] * (1.0 - g[k] * g[k]);
            dc_prev[k] = dc_total[k] * f[k];
        }
        let mut dx = vec![0.0; self.input_size];
        let mut dh_prev = vec![0.0; n];
        for (k, da) in d_pre.iter().enumerate() {
            ger_acc(&mut grad.input_weights[k], self.input_size, da, &cache.x);
            ger_acc(&mut grad.recurrent_weights[k], n, da, &cache.h_prev);
            grad.bias[k].iter_mut().zip(da).for_each(|(g, d)| *g += d);
            gemv_t_acc(&self.input_weights[k], self.input_size, da, &mut dx);
            gemv_t_acc(&self.recurrent_weights[k], n, da, &mut dh_prev);
        }
        (dx, dh_prev, dc_prev)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        for k in 0..4 {
            dim_check("lstm input weights", self.hidden_size * self.input_size, self.input_weights[k].len())?;
            dim_check("lstm recurrent weights", self.hidden_size * self.hidden_size, self.recurrent_weights[k].len())?;
            dim_check("lstm bias", self.hidden_size, self.bias[k].len())?;
        }
        if self.hidden_size == 0 {
            return Err(Error::Dimension("lstm hidden size must be positive".into()));
        }
        Ok(())
    }
}

pub fn lstm_step(params: &LstmCell, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    params.step(x, h_prev, c_prev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_parameters_give_half_gates_and_zero_state() {
        let cell = LstmCell::zeros(3, 4);
        let cache = cell.forward(&[1.0, -2.0, 3.0], &[0.0; 4], &[0.0; 4]);
        for k in 0..3 {
            assert!(cache.gates[k].iter().all(|&v| v == 0.5));
        }
        assert!(cache.gates[3].iter().all(|&v| v == 0.0));
        assert!(cache.c.iter().chain(&cache.h).all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_carries_cell_state() {
        let mut cell = LstmCell::zeros(2, 3);
        cell.bias[0].fill(-1e3);
        cell.bias[1].fill(1e3);
        let c_prev = [0.3, -0.7, 1.5];
        let (_, c) = lstm_step(&cell, &[0.2, 0.1], &[0.1, 0.2, 0.3], &c_prev).unwrap();
        assert_eq!(c, c_prev.to_vec());
    }

    fn oracle_step(cell: &LstmCell, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = cell.hidden_size;
        let lin = |k: usize, r: usize| {
            let mut s = cell.bias[k][r];
            for (j, xv) in x.iter().enumerate() {
                s += cell.input_weights[k][r * x.len() + j] * xv;
            }
            for (j, hv) in h.iter().enumerate() {
                s += cell.recurrent_weights[k][r * n + j] * hv;
            }
            s
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h_out = vec![0.0; n];
        let mut c_out = vec![0.0; n];
        for r in 0..n {
            let it = sig(lin(0, r));
            let ft = sig(lin(1, r));
            let ot = sig(lin(2, r));
            let gt = lin(3, r).tanh();
            c_out[r] = ft * c[r] + it * gt;
            h_out[r] = ot * c_out[r].tanh();
        }
        (h_out, c_out)
    }

    #[test]
    fn matches_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cell = LstmCell::init(3, 5, &mut rng);
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (h1, c1) = cell.step(&x, &h, &c).unwrap();
        let (h2, c2) = oracle_step(&cell, &x, &h, &c);
        for k in 0..5 {
            assert!((h1[k] - h2[k]).abs() < 1e-12);
            assert!((c1[k] - c2[k]).abs() < 1e-12);
        }
        assert!(cell.step(&x[..2], &h, &c).is_err());
    }

    proptest! {
        #[test]
        fn hidden_state_is_bounded(seed in 0u64..1000, scale in 0.1f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cell = LstmCell::init(4, 6, &mut rng);
            let x: Vec<f64> = (0..4).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..6).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
            let (h1, c1) = cell.step(&x, &h, &c).unwrap();
            prop_assert!(h1.iter().all(|v| v.abs() <= 1.0));
            prop_assert!(c1.iter().all(|v| v.is_finite()));
        }
    }
}
