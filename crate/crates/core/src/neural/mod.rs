//! Minimal dense network core: fully connected layers, an LSTM cell,
//! backpropagation through time and the Adam optimizer.
//!
//! Everything is `f64` and row-major so gradient checks stay meaningful.

mod adam;
mod dense;
mod lstm;
mod network;

pub use adam::{adam_update, AdamState};
pub use dense::{fc_apply, Activation, Dense};
pub use lstm::{lstm_step, Gate, LstmCell};
pub use network::{bptt_gradients, NetworkShape, SequenceRegressor, TensorRef};

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out += W x` for a row-major `rows x cols` matrix.
pub(crate) fn gemv_acc(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (row, o) in w.chunks_exact(cols).zip(out.iter_mut()) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += W^T d`.
pub(crate) fn gemv_t_acc(w: &[f64], cols: usize, d: &[f64], out: &mut [f64]) {
    for (row, &dv) in w.chunks_exact(cols).zip(d) {
        if dv != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * dv;
            }
        }
    }
}

/// `g += d x^T`.
pub(crate) fn ger_acc(g: &mut [f64], cols: usize, d: &[f64], x: &[f64]) {
    for (row, &dv) in g.chunks_exact_mut(cols).zip(d) {
        if dv != 0.0 {
            for (o, b) in row.iter_mut().zip(x) {
                *o += dv * b;
            }
        }
    }
}

pub(crate) fn uniform_init<R: rand::Rng + ?Sized>(n: usize, fan_in: usize, rng: &mut R) -> Vec<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}
