//! Learned next-cycle angle predictor: input windows, the network wrapper
//! with feature standardization, dataset synthesis, training and checkpoints.

mod checkpoint;
mod dataset;
mod train;

use rand::Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use dataset::{
    generate_dataset, read_dataset_csv, write_dataset_csv, CalibrationTable, Dataset, DatasetSpec, Sample,
};
pub use train::{train, TrainConfig};

use crate::error::dim_check;
use crate::neural::{NetworkShape, SequenceRegressor};
use crate::{Error, Result};

/// Which angles make up the per-path state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PredictorMode {
    /// State `[aoa]`; AoD known.
    AoaOnly,
    /// State `[aoa, aod]`.
    Full,
}

impl PredictorMode {
    pub fn state_dim(self) -> usize {
        match self {
            PredictorMode::AoaOnly => 1,
            PredictorMode::Full => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PredictorMode::AoaOnly => "aoa_only",
            PredictorMode::Full => "full",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "aoa_only" => Ok(PredictorMode::AoaOnly),
            "full" => Ok(PredictorMode::Full),
            other => Err(Error::Config(format!("unknown predictor mode `{other}`"))),
        }
    }
}

/// The last `window_len` estimates of one path, oldest first, with the sensor
/// block of the interval that follows each estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct InputWindow {
    pub past_estimates: Vec<Vec<f64>>,
    pub sensor_blocks: Vec<Vec<f64>>,
    pub context: Vec<f64>,
}

impl InputWindow {
    pub fn latest_estimate(&self) -> &[f64] {
        self.past_estimates.last().map_or(&[], Vec::as_slice)
    }
}

/// Anything that maps an input window to the next per-path state.
pub trait StatePredictor: Sync {
    fn state_dim(&self) -> usize;
    fn window_len(&self) -> usize;
    fn predict(&self, window: &InputWindow) -> Result<Vec<f64>>;
    /// Variance of the prediction residual per state component, added to the
    /// predicted covariance as process noise.
    fn residual_var(&self) -> Vec<f64> {
        vec![0.0; self.state_dim()]
    }
}

/// Per-feature affine standardization of network inputs and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
}

impl NormStats {
    pub fn identity(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_mean: vec![0.0; input_dim],
            input_std: vec![1.0; input_dim],
            target_mean: vec![0.0; output_dim],
            target_std: vec![1.0; output_dim],
        }
    }

    /// Column mean and standard deviation; constant columns get std 1.
    pub(crate) fn column_stats<'a, I: Iterator<Item = &'a [f64]>>(rows: I, width: usize) -> (Vec<f64>, Vec<f64>) {
        let mut n = 0usize;
        let mut mean = vec![0.0; width];
        let mut m2 = vec![0.0; width];
        for row in rows {
            n += 1;
            for k in 0..width {
                let d = row[k] - mean[k];
                mean[k] += d / n as f64;
                m2[k] += d * (row[k] - mean[k]);
            }
        }
        let std = m2
            .iter()
            .map(|s| {
                let sd = (s / n.max(1) as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        (mean, std)
    }

    pub fn standardize_target(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().zip(&self.target_mean).zip(&self.target_std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn destandardize_target(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.target_mean).zip(&self.target_std).map(|((v, m), s)| v * s + m).collect()
    }

    fn validate(&self) -> Result<()> {
        dim_check("input std", self.input_mean.len(), self.input_std.len())?;
        dim_check("target std", self.target_mean.len(), self.target_std.len())?;
        if self.input_std.iter().chain(&self.target_std).any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config("normalization std must be positive and finite".into()));
        }
        Ok(())
    }
}

/// Static shape parameters of a predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictorLayout {
    pub mode: PredictorMode,
    pub window_len: usize,
    pub samples_per_cycle: usize,
    pub sensor_channels: usize,
    pub context_dim: usize,
}

impl PredictorLayout {
    pub fn state_dim(&self) -> usize {
        self.mode.state_dim()
    }

    pub fn sensor_len(&self) -> usize {
        self.samples_per_cycle * self.sensor_channels
    }

    /// Per-step features: offset from the latest estimate, the estimate
    /// itself, the sensor block and the context.
    pub fn step_features(&self) -> usize {
        2 * self.state_dim() + self.sensor_len() + self.context_dim
    }

    pub fn check_window(&self, w: &InputWindow) -> Result<()> {
        dim_check("window length (estimates)", self.window_len, w.past_estimates.len())?;
        dim_check("window length (sensor blocks)", self.window_len, w.sensor_blocks.len())?;
        for e in &w.past_estimates {
            dim_check("estimate dimension", self.state_dim(), e.len())?;
        }
        for b in &w.sensor_blocks {
            dim_check("sensor block length", self.sensor_len(), b.len())?;
        }
        dim_check("context length", self.context_dim, w.context.len())
    }

    /// Raw (unstandardized) flattened features, `window_len x step_features`.
    pub(crate) fn raw_features(&self, w: &InputWindow) -> Vec<f64> {
        let last = w.latest_estimate();
        let mut out = Vec::with_capacity(self.window_len * self.step_features());
        for (est, block) in w.past_estimates.iter().zip(&w.sensor_blocks) {
            out.extend(est.iter().zip(last).map(|(a, b)| a - b));
            out.extend_from_slice(est);
            out.extend_from_slice(block);
            out.extend_from_slice(&w.context);
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.samples_per_cycle == 0 || self.sensor_channels == 0 {
            return Err(Error::Config(format!("invalid predictor layout {self:?}")));
        }
        Ok(())
    }
}

/// Trained predictor: network, normalization, layout and residual statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    pub layout: PredictorLayout,
    pub network: SequenceRegressor,
    pub norm: NormStats,
    /// Beam-cycle length in slots the model was trained for.
    pub cycle_slots: usize,
    pub residual_var: Vec<f64>,
}

impl PredictorModel {
    pub fn init<R: Rng + ?Sized>(
        layout: PredictorLayout,
        lstm_layers: usize,
        cycle_slots: usize,
        rng: &mut R,
    ) -> Result<Self> {
        layout.validate()?;
        let mut shape = NetworkShape::with_defaults(layout.step_features(), layout.state_dim());
        shape.lstm_layers = lstm_layers;
        let network = SequenceRegressor::init(shape, rng)?;
        Ok(Self {
            norm: NormStats::identity(layout.step_features(), layout.state_dim()),
            residual_var: vec![0.0; layout.state_dim()],
            layout,
            network,
            cycle_slots,
        })
    }

    pub(crate) fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        self.network.validate()?;
        self.norm.validate()?;
        dim_check("network input width", self.layout.step_features(), self.network.shape().input_dim)?;
        dim_check("network output width", self.layout.state_dim(), self.network.shape().output_dim)?;
        dim_check("input normalization width", self.layout.step_features(), self.norm.input_mean.len())?;
        dim_check("target normalization width", self.layout.state_dim(), self.norm.target_mean.len())?;
        dim_check("residual variance width", self.layout.state_dim(), self.residual_var.len())
    }

    /// Standardized network input for a window.
    pub fn features(&self, w: &InputWindow) -> Vec<f64> {
        let f = self.layout.step_features();
        let mut x = self.layout.raw_features(w);
        for (k, v) in x.iter_mut().enumerate() {
            let j = k % f;
            *v = (*v - self.norm.input_mean[j]) / self.norm.input_std[j];
        }
        x
    }

    /// Standardized training target: the step from the latest estimate.
    pub(crate) fn target(&self, w: &InputWindow, next: &[f64]) -> Vec<f64> {
        let step: Vec<f64> = next.iter().zip(w.latest_estimate()).map(|(a, b)| a - b).collect();
        self.norm.standardize_target(&step)
    }
}

impl StatePredictor for PredictorModel {
    fn state_dim(&self) -> usize {
        self.layout.state_dim()
    }

    fn window_len(&self) -> usize {
        self.layout.window_len
    }

    fn predict(&self, window: &InputWindow) -> Result<Vec<f64>> {
        self.layout.check_window(window)?;
        let z = self.network.forward(&self.features(window))?;
        let step = self.norm.destandardize_target(&z);
        Ok(window.latest_estimate().iter().zip(step).map(|(a, b)| a + b).collect())
    }

    fn residual_var(&self) -> Vec<f64> {
        self.residual_var.clone()
    }
}

/// Every path's prediction under one shared model.
pub fn predict_paths<P: StatePredictor + ?Sized>(model: &P, windows: &[InputWindow]) -> Result<Vec<Vec<f64>>> {
    windows.iter().map(|w| model.predict(w)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn layout(window_len: usize) -> PredictorLayout {
        PredictorLayout {
            mode: PredictorMode::AoaOnly,
            window_len,
            samples_per_cycle: 4,
            sensor_channels: 2,
            context_dim: 0,
        }
    }

    pub(crate) fn window(est: &[f64], sensor: f64) -> InputWindow {
        InputWindow {
            past_estimates: est.iter().map(|&e| vec![e]).collect(),
            sensor_blocks: est.iter().map(|_| vec![sensor; 8]).collect(),
            context: vec![],
        }
    }

    #[test]
    fn fresh_model_gives_finite_output_of_state_dimension() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = PredictorModel::init(layout(3), 1, 160, &mut rng).unwrap();
        let y = m.predict(&window(&[0.1, 0.2, 0.3], 0.5)).unwrap();
        assert_eq!(y.len(), 1);
        assert!(y[0].is_finite());
        let full = PredictorLayout { mode: PredictorMode::Full, ..layout(3) };
        let m2 = PredictorModel::init(full, 1, 160, &mut rng).unwrap();
        let w = InputWindow { past_estimates: vec![vec![0.1, -0.2]; 3], ..window(&[0.0; 3], 0.0) };
        assert_eq!(m2.predict(&w).unwrap().len(), 2);
    }

    #[test]
    fn window_length_is_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = PredictorModel::init(layout(3), 1, 160, &mut rng).unwrap();
        assert!(m.predict(&window(&[0.1, 0.2, 0.3], 0.0)).is_ok());
        assert!(matches!(m.predict(&window(&[0.1, 0.2], 0.0)), Err(Error::Dimension(_))));
        let mut bad = window(&[0.1, 0.2, 0.3], 0.0);
        bad.sensor_blocks[1].pop();
        assert!(m.predict(&bad).is_err());
    }

    #[test]
    fn target_standardization_round_trips() {
        let n = NormStats { target_mean: vec![0.013, -2.0], target_std: vec![0.004, 7.5], ..NormStats::identity(1, 2) };
        let raw = [0.0217, 3.3];
        let back = n.destandardize_target(&n.standardize_target(&raw));
        for (a, b) in back.iter().zip(raw) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn paths_share_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = PredictorModel::init(layout(3), 1, 160, &mut rng).unwrap();
        let ws = vec![window(&[0.1, 0.2, 0.3], 1.0), window(&[-0.5, -0.4, -0.35], -2.0), window(&[0.9, 0.8, 0.7], 0.0)];
        let out = predict_paths(&m, &ws).unwrap();
        let rev: Vec<InputWindow> = ws.iter().rev().cloned().collect();
        let out_rev = predict_paths(&m, &rev).unwrap();
        for (a, b) in out.iter().zip(out_rev.iter().rev()) {
            assert_eq!(a, b);
        }
    }
}
