use rand::Rng;

use super::adam::{adam_update, AdamState};
use super::dense::{Activation, Dense};
use super::lstm::{Gate, LstmCell, StepCache};
use crate::error::dim_check;
use crate::{Error, Result};

/// Layer widths of a [`SequenceRegressor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkShape {
    pub input_dim: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub lstm_layers: usize,
    pub head_dim: usize,
    pub output_dim: usize,
}

impl NetworkShape {
    /// Embedding 16, one LSTM layer of 32, output head of 32.
    pub fn with_defaults(input_dim: usize, output_dim: usize) -> Self {
        Self { input_dim, embed_dim: 16, hidden_dim: 32, lstm_layers: 1, head_dim: 32, output_dim }
    }

    fn validate(&self) -> Result<()> {
        let dims = [self.input_dim, self.embed_dim, self.hidden_dim, self.lstm_layers, self.head_dim, self.output_dim];
        if dims.contains(&0) {
            return Err(Error::Config(format!("network dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Read-only view of one named parameter tensor, row-major `rows x cols`.
#[derive(Debug, Clone, Copy)]
pub struct TensorRef<'a> {
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

/// Sequence-to-one regressor: per-step tanh embedding, stacked LSTM,
/// then a tanh hidden layer and a linear output applied to the last hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRegressor {
    pub input_fc: Dense,
    pub lstm: Vec<LstmCell>,
    pub head_hidden: Dense,
    pub head_out: Dense,
}

struct ForwardTrace {
    embeds: Vec<Vec<f64>>,
    layers: Vec<Vec<StepCache>>,
    head: Vec<f64>,
    output: Vec<f64>,
}

impl SequenceRegressor {
    pub fn init<R: Rng + ?Sized>(shape: NetworkShape, rng: &mut R) -> Result<Self> {
        shape.validate()?;
        let input_fc = Dense::init(shape.input_dim, shape.embed_dim, Activation::Tanh, rng);
        let lstm = (0..shape.lstm_layers)
            .map(|k| {
                let width = if k == 0 { shape.embed_dim } else { shape.hidden_dim };
                LstmCell::init(width, shape.hidden_dim, rng)
            })
            .collect();
        let head_hidden = Dense::init(shape.hidden_dim, shape.head_dim, Activation::Tanh, rng);
        let head_out = Dense::init(shape.head_dim, shape.output_dim, Activation::Identity, rng);
        Ok(Self { input_fc, lstm, head_hidden, head_out })
    }

    pub fn shape(&self) -> NetworkShape {
        NetworkShape {
            input_dim: self.input_fc.inputs,
            embed_dim: self.input_fc.outputs,
            hidden_dim: self.head_hidden.inputs,
            lstm_layers: self.lstm.len(),
            head_dim: self.head_hidden.outputs,
            output_dim: self.head_out.outputs,
        }
    }

    /// Same architecture with every parameter zero; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    pub fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.fill(value);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Named parameter tensors in a fixed order shared with [`Self::tensors_mut`].
    pub fn tensors(&self) -> Vec<(String, TensorRef<'_>)> {
        let mut out = Vec::new();
        dense_tensors("input_fc", &self.input_fc, &mut out);
        for (k, cell) in self.lstm.iter().enumerate() {
            for (g, gate) in Gate::ALL.iter().enumerate() {
                let s = gate.suffix();
                let (h, i) = (cell.hidden_size, cell.input_size);
                out.push((format!("lstm{k}.W_x{s}"), TensorRef { rows: h, cols: i, data: &cell.input_weights[g] }));
                out.push((format!("lstm{k}.W_h{s}"), TensorRef { rows: h, cols: h, data: &cell.recurrent_weights[g] }));
                out.push((format!("lstm{k}.b_{s}"), TensorRef { rows: h, cols: 1, data: &cell.bias[g] }));
            }
        }
        dense_tensors("head_hidden", &self.head_hidden, &mut out);
        dense_tensors("head_out", &self.head_out, &mut out);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.input_fc.weights, &mut self.input_fc.bias];
        for cell in &mut self.lstm {
            let LstmCell { input_weights, recurrent_weights, bias, .. } = cell;
            for ((wx, wh), b) in input_weights.iter_mut().zip(recurrent_weights.iter_mut()).zip(bias.iter_mut()) {
                out.push(wx);
                out.push(wh);
                out.push(b);
            }
        }
        out.push(&mut self.head_hidden.weights);
        out.push(&mut self.head_hidden.bias);
        out.push(&mut self.head_out.weights);
        out.push(&mut self.head_out.bias);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.data.len()).sum()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let s = self.shape();
        s.validate()?;
        for (i, cell) in self.lstm.iter().enumerate() {
            cell.validate()?;
            let width = if i == 0 { s.embed_dim } else { s.hidden_dim };
            dim_check("lstm layer input", width, cell.input_size)?;
            dim_check("lstm layer hidden", s.hidden_dim, cell.hidden_size)?;
        }
        for d in [&self.input_fc, &self.head_hidden, &self.head_out] {
            dim_check("dense weights", d.inputs * d.outputs, d.weights.len())?;
            dim_check("dense bias", d.outputs, d.bias.len())?;
        }
        dim_check("output head input", s.head_dim, self.head_out.inputs)?;
        Ok(())
    }

    fn check_sequence(&self, sequence: &[f64]) -> Result<usize> {
        let width = self.input_fc.inputs;
        if sequence.is_empty() || !sequence.len().is_multiple_of(width) {
            return Err(Error::Dimension(format!(
                "sequence length {} is not a positive multiple of the step width {width}",
                sequence.len()
            )));
        }
        Ok(sequence.len() / width)
    }

    /// Runs a flattened sequence (`steps x input_dim`, row-major).
    pub fn forward(&self, sequence: &[f64]) -> Result<Vec<f64>> {
        self.check_sequence(sequence)?;
        let out = self.trace(sequence).output;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite network output".into()));
        }
        Ok(out)
    }

    fn trace(&self, sequence: &[f64]) -> ForwardTrace {
        let width = self.input_fc.inputs;
        let hidden = self.head_hidden.inputs;
        let embeds: Vec<Vec<f64>> = sequence.chunks_exact(width).map(|x| self.input_fc.forward(x)).collect();
        let mut layers: Vec<Vec<StepCache>> = Vec::with_capacity(self.lstm.len());
        for (k, cell) in self.lstm.iter().enumerate() {
            let mut h = vec![0.0; hidden];
            let mut c = vec![0.0; hidden];
            let mut caches = Vec::with_capacity(embeds.len());
            for t in 0..embeds.len() {
                let x = if k == 0 { &embeds[t] } else { &layers[k - 1][t].h };
                let cache = cell.forward(x, &h, &c);
                h.clone_from(&cache.h);
                c.clone_from(&cache.c);
                caches.push(cache);
            }
            layers.push(caches);
        }
        let last = &layers.last().expect("at least one lstm layer").last().expect("non-empty sequence").h;
        let head = self.head_hidden.forward(last);
        let output = self.head_out.forward(&head);
        ForwardTrace { embeds, layers, head, output }
    }

    /// Adds the gradient of `||f(sequence) - target||^2` into `grads` and returns the loss.
    pub fn accumulate_gradients(&self, sequence: &[f64], target: &[f64], grads: &mut Self) -> Result<f64> {
        let steps = self.check_sequence(sequence)?;
        dim_check("regression target", self.head_out.outputs, target.len())?;
        let tr = self.trace(sequence);
        let resid: Vec<f64> = tr.output.iter().zip(target).map(|(y, t)| y - t).collect();
        let loss: f64 = resid.iter().map(|r| r * r).sum();
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss {loss}; network output {:?}", tr.output)));
        }
        let dy: Vec<f64> = resid.iter().map(|r| 2.0 * r).collect();
        let hidden = self.head_hidden.inputs;
        let last_h = &tr.layers.last().expect("lstm layer")[steps - 1].h;
        let d_head = self.head_out.backward(&tr.head, &tr.output, &dy, &mut grads.head_out);
        let d_last = self.head_hidden.backward(last_h, &tr.head, &d_head, &mut grads.head_hidden);

        // Gradient arriving at each step's hidden output from the layer above.
        let mut from_above: Vec<Vec<f64>> = vec![vec![0.0; hidden]; steps];
        from_above[steps - 1] = d_last;
        for k in (0..self.lstm.len()).rev() {
            let cell = &self.lstm[k];
            let mut dh_next = vec![0.0; hidden];
            let mut dc_next = vec![0.0; hidden];
            let mut below: Vec<Vec<f64>> = vec![Vec::new(); steps];
            for t in (0..steps).rev() {
                let dh: Vec<f64> = from_above[t].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
                let (dx, dh_prev, dc_prev) = cell.backward(&tr.layers[k][t], &dh, &dc_next, &mut grads.lstm[k]);
                below[t] = dx;
                dh_next = dh_prev;
                dc_next = dc_prev;
            }
            from_above = below;
        }
        for (t, x) in sequence.chunks_exact(self.input_fc.inputs).enumerate() {
            self.input_fc.backward(x, &tr.embeds[t], &from_above[t], &mut grads.input_fc);
        }
        Ok(loss)
    }

    pub fn adam_step(&mut self, grads: &Self, state: &mut AdamState, lr: f64) -> Result<()> {
        let g: Vec<&[f64]> = grads.tensors().into_iter().map(|(_, t)| t.data).collect();
        let mut p = self.tensors_mut();
        adam_update(&mut p, &g, state, lr)
    }

    pub fn adam_state(&self) -> AdamState {
        AdamState::new(self.tensors().iter().map(|(_, t)| t.data.len()))
    }
}

fn dense_tensors<'a>(prefix: &str, d: &'a Dense, out: &mut Vec<(String, TensorRef<'a>)>) {
    out.push((format!("{prefix}.weight"), TensorRef { rows: d.outputs, cols: d.inputs, data: &d.weights }));
    out.push((format!("{prefix}.bias"), TensorRef { rows: d.outputs, cols: 1, data: &d.bias }));
}

/// Loss `||f(sequence) - target||^2` and its gradient for every parameter.
pub fn bptt_gradients(model: &SequenceRegressor, sequence: &[f64], target: &[f64]) -> Result<(f64, SequenceRegressor)> {
    let mut grads = model.zeros_like();
    let loss = model.accumulate_gradients(sequence, target, &mut grads)?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(layers: usize, seed: u64) -> SequenceRegressor {
        let shape =
            NetworkShape { input_dim: 3, embed_dim: 4, hidden_dim: 5, lstm_layers: layers, head_dim: 4, output_dim: 2 };
        SequenceRegressor::init(shape, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn random_seq(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
    }

    /// Worst elementwise relative error per tensor between analytic and
    /// central-difference gradients.
    fn gradient_errors(model: &SequenceRegressor, seq: &[f64], target: &[f64]) -> Vec<(String, f64)> {
        let (_, grads) = bptt_gradients(model, seq, target).unwrap();
        let names: Vec<String> = model.tensors().into_iter().map(|(n, _)| n).collect();
        let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().map(|(_, t)| t.data.to_vec()).collect();
        let step = 1e-5;
        let loss_at = |m: &SequenceRegressor| {
            let y = m.forward(seq).unwrap();
            y.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        };
        let mut errors = Vec::new();
        for (ti, name) in names.iter().enumerate() {
            let mut worst = 0.0f64;
            for j in 0..analytic[ti].len() {
                let mut plus = model.clone();
                plus.tensors_mut()[ti][j] += step;
                let mut minus = model.clone();
                minus.tensors_mut()[ti][j] -= step;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * step);
                let a = analytic[ti][j];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                worst = worst.max(rel);
            }
            errors.push((name.clone(), worst));
        }
        errors
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for layers in [1, 2] {
            let model = small(layers, 0);
            let seq = random_seq(&mut rng, 9);
            let target = [0.4, -0.8];
            for (name, err) in gradient_errors(&model, &seq, &target) {
                assert!(err < 1e-4, "{name}: {err}");
            }
        }
    }

    #[test]
    fn exact_fit_has_zero_gradient() {
        let model = small(1, 3);
        let seq = random_seq(&mut ChaCha8Rng::seed_from_u64(1), 6);
        let y = model.forward(&seq).unwrap();
        let (loss, grads) = bptt_gradients(&model, &seq, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.tensors().iter().all(|(_, t)| t.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn linear_layer_gradient_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layer = Dense::init(3, 2, Activation::Identity, &mut rng);
        let x = [0.3, -1.1, 0.6];
        let target = [0.2, 0.5];
        let y = layer.forward(&x);
        let mut grad = Dense::zeros(3, 2, Activation::Identity);
        layer.backward(&x, &y, &[2.0 * (y[0] - target[0]), 2.0 * (y[1] - target[1])], &mut grad);
        for r in 0..2 {
            for c in 0..3 {
                let want = 2.0 * (y[r] - target[r]) * x[c];
                assert!((grad.weights[r * 3 + c] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let model = small(1, 0);
        assert!(model.forward(&[]).is_err());
        assert!(model.forward(&[0.0; 4]).is_err());
        assert!(bptt_gradients(&model, &[0.0; 3], &[0.0]).is_err());
    }

    #[test]
    fn tensor_views_cover_all_parameters() {
        let mut model = small(2, 0);
        let n = model.num_parameters();
        let sizes: usize = model.tensors_mut().iter().map(|t| t.len()).sum();
        assert_eq!(n, sizes);
        let names: Vec<String> = model.tensors().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        assert!(names.contains(&"lstm1.W_hf".to_string()));
    }

    #[test]
    fn adam_reduces_loss_on_a_fixed_example() {
        let mut model = small(1, 9);
        let seq = random_seq(&mut ChaCha8Rng::seed_from_u64(2), 9);
        let target = [0.7, -0.3];
        let mut state = model.adam_state();
        let (first, _) = bptt_gradients(&model, &seq, &target).unwrap();
        for _ in 0..200 {
            let (_, g) = bptt_gradients(&model, &seq, &target).unwrap();
            model.adam_step(&g, &mut state, 0.01).unwrap();
        }
        let (last, _) = bptt_gradients(&model, &seq, &target).unwrap();
        assert!(last < 1e-3 * first, "{first} -> {last}");
    }
}
