//! Link-level simulation: configuration, episodes with NMSE/BER metrics,
//! parameter sweeps and the predictor training pipeline.

mod config;
mod episode;
mod pipeline;
mod sweep;

pub use config::{parse_real, BerMode, SimConfig};
pub use episode::{
    bpsk_error_probability, normalized_mse, q_function, resolve_process_noise, run_episode, run_episode_traced,
    EpisodeResult, EpisodeTrace, NMSE_FLOOR_DB,
};
pub use pipeline::{
    calibrate_estimate_noise, dataset_spec, fit_model, train_for_config, ModelStore, TrainingPlan, CALIBRATION_SNR_DB,
};
pub use sweep::{
    aggregate, pivot_table, read_sweep_csv, run_sweep, trial_config, trial_seed, write_sweep_csv, ModelSource,
    NoModels, SweepAxis, SweepRow, SweepSpec, SWEEP_HEADER,
};
