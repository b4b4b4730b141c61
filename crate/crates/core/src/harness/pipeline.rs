use std::collections::HashMap;

use super::config::SimConfig;
use super::episode::run_episode_traced;
use super::sweep::ModelSource;
use crate::predictor::{
    generate_dataset, train, CalibrationTable, Dataset, DatasetSpec, PredictorMode, PredictorModel, StatePredictor,
    TrainConfig,
};
use crate::rng::{derive_seed, label, stream};
use crate::trackers::Variant;
use crate::{Error, Result};

/// SNR grid of the estimate-noise calibration table.
pub const CALIBRATION_SNR_DB: [f64; 4] = [6.0, 9.0, 12.0, 15.0];

/// How a predictor is fitted for one simulation setting.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPlan {
    /// Approximate number of training windows.
    pub windows: usize,
    pub cycles_per_episode: usize,
    pub snr_range_db: (f64, f64),
    pub lstm_layers: usize,
    pub train: TrainConfig,
    /// EKF episodes per calibration SNR.
    pub calibration_episodes: usize,
}

impl Default for TrainingPlan {
    fn default() -> Self {
        Self {
            windows: 100_000,
            cycles_per_episode: 100,
            snr_range_db: (6.0, 15.0),
            lstm_layers: 1,
            train: TrainConfig::default(),
            calibration_episodes: 64,
        }
    }
}

/// RMS angle error of a single EKF update at each grid SNR: the noise level
/// of the synthetic past estimates in training windows. Each instance starts
/// from a prior `init_error_std` away from a static truth, so the figure
/// reflects estimation noise rather than loss of lock under fast motion.
pub fn calibrate_estimate_noise(config: &SimConfig, snr_grid: &[f64], episodes: usize) -> Result<CalibrationTable> {
    if episodes == 0 {
        return Err(Error::Config("calibration needs at least one episode".into()));
    }
    let mut stds = Vec::with_capacity(snr_grid.len());
    for &snr in snr_grid {
        let mut sum = 0.0;
        let mut n = 0usize;
        for e in 0..episodes {
            let c = SimConfig {
                variant: Variant::Ekf,
                snr_db: snr,
                num_cycles: 1,
                a_avg: 0.0,
                velocity_var: 0.0,
                process_noise: Some(0.0),
                seed: derive_seed(config.seed, &[label::CALIBRATION, snr.to_bits(), e as u64]),
                ..config.clone()
            };
            let trace = run_episode_traced(&c, None)?;
            for (t, x) in trace.truth[0].iter().zip(&trace.estimates[0]) {
                sum += (t.aoa - x.aoa).powi(2);
                n += 1;
                if config.mode == PredictorMode::Full {
                    sum += (t.aod - x.aod).powi(2);
                    n += 1;
                }
            }
        }
        stds.push((sum / n as f64).sqrt());
    }
    CalibrationTable::new(snr_grid.to_vec(), stds)
}

/// Dataset description matching `config` for a model of `variant`.
pub fn dataset_spec(config: &SimConfig, variant: Variant, plan: &TrainingPlan) -> Result<DatasetSpec> {
    if !variant.uses_model() {
        return Err(Error::Config(format!("variant {} has no predictor", variant.name())));
    }
    let per_episode = config.num_paths * plan.cycles_per_episode.saturating_sub(config.window_len);
    if per_episode == 0 {
        return Err(Error::Config("training episodes are shorter than the window".into()));
    }
    Ok(DatasetSpec {
        mobility: config.mobility(),
        episodes: plan.windows.div_ceil(per_episode).max(1),
        cycles_per_episode: plan.cycles_per_episode,
        paths_per_episode: config.num_paths,
        cycle_slots: config.cycle_slots,
        samples_per_cycle: config.imu_samples,
        window_len: config.window_len,
        snr_range_db: plan.snr_range_db,
        mode: config.mode,
        zero_sensors: variant == Variant::ProposedCsi,
    })
}

/// Synthesizes the training set for `config` (calibrating estimate noise
/// first) and fits a fresh predictor. Returns the model and per-epoch loss.
pub fn train_for_config(
    config: &SimConfig,
    variant: Variant,
    plan: &TrainingPlan,
) -> Result<(PredictorModel, Vec<f64>)> {
    let calibration = calibrate_estimate_noise(config, &CALIBRATION_SNR_DB, plan.calibration_episodes)?;
    let dataset = generate_dataset(&dataset_spec(config, variant, plan)?, &calibration, plan.train.seed)?;
    fit_model(&dataset, plan)
}

pub fn fit_model(dataset: &Dataset, plan: &TrainingPlan) -> Result<(PredictorModel, Vec<f64>)> {
    let mut rng = stream(plan.train.seed, &[label::INIT]);
    let mut model = PredictorModel::init(dataset.layout, plan.lstm_layers, dataset.cycle_slots, &mut rng)?;
    let losses = train(&mut model, dataset, &plan.train)?;
    Ok((model, losses))
}

/// Trained predictors keyed by variant and cycle length.
#[derive(Default)]
pub struct ModelStore {
    models: HashMap<(Variant, usize), PredictorModel>,
}

impl ModelStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, variant: Variant, model: PredictorModel) {
        self.models.insert((variant, model.cycle_slots), model);
    }

    pub fn get(&self, variant: Variant, cycle_slots: usize) -> Option<&PredictorModel> {
        self.models.get(&(variant, cycle_slots))
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

impl ModelSource for ModelStore {
    fn model_for(&self, config: &SimConfig) -> Option<&dyn StatePredictor> {
        self.get(config.variant, config.cycle_slots).map(|m| m as &dyn StatePredictor)
    }
}
