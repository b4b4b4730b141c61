use rand::seq::SliceRandom;

use super::{Dataset, NormStats, PredictorModel, StatePredictor};
use crate::error::dim_check;
use crate::rng::{label, stream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub minibatch: usize,
    pub initial_lr: f64,
    /// Epochs between learning-rate decays.
    pub decay_epoch: usize,
    pub decay_rate: f64,
    pub total_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { minibatch: 64, initial_lr: 0.01, decay_epoch: 3, decay_rate: 0.1, total_epochs: 30, seed: 0 }
    }
}

impl TrainConfig {
    /// Learning rate during 1-based `epoch`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let decays = epoch.saturating_sub(1) / self.decay_epoch;
        self.initial_lr * self.decay_rate.powi(decays as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.minibatch == 0 || self.decay_epoch == 0 || self.total_epochs == 0 {
            return Err(Error::Config("minibatch, decay_epoch and total_epochs must be positive".into()));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config(format!("initial_lr must be positive, got {}", self.initial_lr)));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(Error::Config(format!("decay_rate must lie in (0, 1], got {}", self.decay_rate)));
        }
        Ok(())
    }
}

/// Fits normalization statistics, then trains with minibatch Adam on the
/// squared error of the standardized step. Returns the mean training loss
/// of every epoch and stores the raw-unit residual variance in the model.
pub fn train(model: &mut PredictorModel, dataset: &Dataset, config: &TrainConfig) -> Result<Vec<f64>> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    if dataset.layout != model.layout {
        return Err(Error::Config(format!(
            "dataset layout {:?} does not match model layout {:?}",
            dataset.layout, model.layout
        )));
    }
    for s in &dataset.samples {
        model.layout.check_window(&s.window)?;
        dim_check("training target", model.layout.state_dim(), s.target.len())?;
    }

    let f = model.layout.step_features();
    let raw: Vec<Vec<f64>> = dataset.samples.iter().map(|s| model.layout.raw_features(&s.window)).collect();
    let steps: Vec<Vec<f64>> = dataset
        .samples
        .iter()
        .map(|s| s.target.iter().zip(s.window.latest_estimate()).map(|(a, b)| a - b).collect())
        .collect();
    let (input_mean, input_std) = NormStats::column_stats(raw.iter().flat_map(|r| r.chunks_exact(f)), f);
    let (target_mean, target_std) = NormStats::column_stats(steps.iter().map(Vec::as_slice), model.layout.state_dim());
    model.norm = NormStats { input_mean, input_std, target_mean, target_std };

    let inputs: Vec<Vec<f64>> = dataset.samples.iter().map(|s| model.features(&s.window)).collect();
    let targets: Vec<Vec<f64>> = dataset.samples.iter().map(|s| model.target(&s.window, &s.target)).collect();

    let mut rng = stream(config.seed, &[label::TRAINING]);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut adam = model.network.adam_state();
    let mut grads = model.network.zeros_like();
    let mut trace = Vec::with_capacity(config.total_epochs);
    for epoch in 1..=config.total_epochs {
        let lr = config.learning_rate(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.minibatch) {
            grads.fill(0.0);
            for &i in batch {
                total += model
                    .network
                    .accumulate_gradients(&inputs[i], &targets[i], &mut grads)
                    .map_err(|e| Error::Numerical(format!("training diverged in epoch {epoch} on sample {i}: {e}")))?;
            }
            grads.scale(1.0 / batch.len() as f64);
            model.network.adam_step(&grads, &mut adam, lr)?;
        }
        trace.push(total / dataset.len() as f64);
    }

    let p = model.layout.state_dim();
    let mut resid = vec![0.0; p];
    for s in &dataset.samples {
        let y = model.predict(&s.window)?;
        for k in 0..p {
            resid[k] += (y[k] - s.target[k]).powi(2);
        }
    }
    model.residual_var = resid.iter().map(|r| r / dataset.len() as f64).collect();
    Ok(trace)
}
