use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{InputWindow, PredictorLayout, PredictorMode};
use crate::mobility::{generate_trajectory, synthesize_imu, MobilityParams, SENSOR_CHANNELS};
use crate::rng::{label, stream};
use crate::{Error, Result};

/// Standard deviation of the estimate perturbation as a function of SNR,
/// linearly interpolated between grid points and held constant outside.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTable {
    snr_db: Vec<f64>,
    error_std: Vec<f64>,
}

impl CalibrationTable {
    pub fn new(snr_db: Vec<f64>, error_std: Vec<f64>) -> Result<Self> {
        if snr_db.is_empty() || snr_db.len() != error_std.len() {
            return Err(Error::Config("calibration table needs matching non-empty grids".into()));
        }
        if snr_db.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("calibration SNR grid must be strictly increasing".into()));
        }
        if error_std.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::Config("calibration std must be finite and non-negative".into()));
        }
        Ok(Self { snr_db, error_std })
    }

    /// Noiseless estimates.
    pub fn zeros() -> Self {
        Self::constant(0.0)
    }

    pub fn constant(std: f64) -> Self {
        Self { snr_db: vec![0.0], error_std: vec![std] }
    }

    pub fn snr_grid(&self) -> &[f64] {
        &self.snr_db
    }

    pub fn error_std(&self) -> &[f64] {
        &self.error_std
    }

    pub fn std_at(&self, snr_db: f64) -> f64 {
        let (x, y) = (&self.snr_db, &self.error_std);
        if snr_db <= x[0] {
            return y[0];
        }
        if snr_db >= x[x.len() - 1] {
            return y[y.len() - 1];
        }
        let k = x.partition_point(|&v| v <= snr_db);
        let w = (snr_db - x[k - 1]) / (x[k] - x[k - 1]);
        y[k - 1] + w * (y[k] - y[k - 1])
    }
}

/// How to synthesize training windows.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub mobility: MobilityParams,
    pub episodes: usize,
    /// Cycle-rate samples per episode; each yields `cycles - window_len` windows per path.
    pub cycles_per_episode: usize,
    pub paths_per_episode: usize,
    pub cycle_slots: usize,
    pub samples_per_cycle: usize,
    pub window_len: usize,
    pub snr_range_db: (f64, f64),
    pub mode: PredictorMode,
    /// Replace every sensor sample by zero (CSI-only models).
    pub zero_sensors: bool,
}

impl DatasetSpec {
    pub fn layout(&self) -> PredictorLayout {
        PredictorLayout {
            mode: self.mode,
            window_len: self.window_len,
            samples_per_cycle: self.samples_per_cycle,
            sensor_channels: SENSOR_CHANNELS,
            context_dim: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub window: InputWindow,
    /// True state at the cycle after the window.
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub layout: PredictorLayout,
    pub cycle_slots: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Simulates `spec.episodes` independent episodes (in parallel, each on its
/// own derived stream) and cuts them into windows.
///
/// Past estimates are ground truth plus Gaussian noise with the calibrated
/// std at the episode's SNR; the IMU uses the same SNR.
pub fn generate_dataset(spec: &DatasetSpec, calibration: &CalibrationTable, seed: u64) -> Result<Dataset> {
    spec.mobility.validate()?;
    if spec.episodes == 0 || spec.paths_per_episode == 0 {
        return Err(Error::Config("dataset needs at least one episode and one path".into()));
    }
    if spec.window_len == 0 || spec.cycles_per_episode <= spec.window_len {
        return Err(Error::Config(format!(
            "episodes of {} cycles cannot fill windows of {}",
            spec.cycles_per_episode, spec.window_len
        )));
    }
    let (lo, hi) = spec.snr_range_db;
    if !(lo <= hi) {
        return Err(Error::Config(format!("empty SNR range [{lo}, {hi}]")));
    }
    let episodes: Vec<Vec<Sample>> = (0..spec.episodes)
        .into_par_iter()
        .map(|e| episode_samples(spec, calibration, &mut stream(seed, &[label::DATASET, e as u64])))
        .collect::<Result<_>>()?;
    Ok(Dataset { layout: spec.layout(), cycle_slots: spec.cycle_slots, samples: episodes.concat() })
}

fn episode_samples<R: Rng>(spec: &DatasetSpec, calibration: &CalibrationTable, rng: &mut R) -> Result<Vec<Sample>> {
    let snr = if spec.snr_range_db.0 < spec.snr_range_db.1 {
        rng.random_range(spec.snr_range_db.0..spec.snr_range_db.1)
    } else {
        spec.snr_range_db.0
    };
    let paths = spec.paths_per_episode;
    let (init_aoa, init_vel): (Vec<f64>, Vec<f64>) = (0..paths).map(|_| spec.mobility.draw_initial_state(rng)).unzip();
    let aod: Vec<f64> = (0..paths).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let t = spec.cycle_slots;
    let slots = (spec.cycles_per_episode - 1) * t + 1;
    let traj = generate_trajectory(&spec.mobility, paths, slots, &init_aoa, &init_vel, rng)?;
    let imu = synthesize_imu(&traj, spec.samples_per_cycle, t, snr, spec.mobility.dt, rng)?;
    let std = calibration.std_at(snr);
    let perturb = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
    let delta = spec.window_len;
    let mut out = Vec::with_capacity(paths * (spec.cycles_per_episode - delta));
    for l in 0..paths {
        let truth = |c: usize| -> Vec<f64> {
            match spec.mode {
                PredictorMode::AoaOnly => vec![traj.aoa[l][c * t]],
                PredictorMode::Full => vec![traj.aoa[l][c * t], aod[l]],
            }
        };
        let estimates: Vec<Vec<f64>> = (0..spec.cycles_per_episode)
            .map(|c| truth(c).into_iter().map(|v| (v + perturb.sample(rng)).clamp(-1.0, 1.0)).collect())
            .collect();
        for target_cycle in delta..spec.cycles_per_episode {
            let first = target_cycle - delta;
            let sensor_blocks = (first..target_cycle)
                .map(|c| {
                    let b = &imu.blocks[l][c];
                    if spec.zero_sensors {
                        vec![0.0; b.len()]
                    } else {
                        b.clone()
                    }
                })
                .collect();
            out.push(Sample {
                window: InputWindow {
                    past_estimates: estimates[first..target_cycle].to_vec(),
                    sensor_blocks,
                    context: vec![],
                },
                target: truth(target_cycle),
            });
        }
    }
    Ok(out)
}

fn header(layout: &PredictorLayout) -> Vec<String> {
    let mut h = Vec::new();
    for i in 0..layout.window_len {
        h.extend((0..layout.state_dim()).map(|p| format!("est{i}.{p}")));
        h.extend((0..layout.sensor_len()).map(|k| format!("sensor{i}.{k}")));
    }
    h.extend((0..layout.context_dim).map(|k| format!("ctx.{k}")));
    h.extend((0..layout.state_dim()).map(|p| format!("target.{p}")));
    h
}

/// Writes a dataset as CSV preceded by one `#` line of layout metadata.
pub fn write_dataset_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let l = &dataset.layout;
    let mut file = fs::File::create(path)?;
    writeln!(
        file,
        "# mode={} window_len={} samples_per_cycle={} sensor_channels={} context_dim={} cycle_slots={}",
        l.mode.name(),
        l.window_len,
        l.samples_per_cycle,
        l.sensor_channels,
        l.context_dim,
        dataset.cycle_slots
    )?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header(l))?;
    for s in &dataset.samples {
        let mut row: Vec<String> = Vec::new();
        for (e, b) in s.window.past_estimates.iter().zip(&s.window.sensor_blocks) {
            row.extend(e.iter().chain(b).map(|v| format!("{v:e}")));
        }
        row.extend(s.window.context.iter().chain(&s.target).map(|v| format!("{v:e}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let (meta, body) =
        text.split_once('\n').ok_or_else(|| Error::Format("dataset file has no metadata line".into()))?;
    let meta = meta
        .strip_prefix('#')
        .ok_or_else(|| Error::Format("dataset file must start with a `#` metadata line".into()))?;
    let field = |key: &str| -> Result<&str> {
        meta.split_whitespace()
            .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .ok_or_else(|| Error::Format(format!("dataset metadata lacks `{key}`")))
    };
    let num = |key: &str| -> Result<usize> {
        field(key)?.parse().map_err(|_| Error::Format(format!("dataset metadata `{key}` is not an integer")))
    };
    let layout = PredictorLayout {
        mode: PredictorMode::from_name(field("mode")?)?,
        window_len: num("window_len")?,
        samples_per_cycle: num("samples_per_cycle")?,
        sensor_channels: num("sensor_channels")?,
        context_dim: num("context_dim")?,
    };
    let cycle_slots = num("cycle_slots")?;
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let expected = header(&layout);
    let got: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if got != expected {
        return Err(Error::Format("dataset columns do not match its metadata".into()));
    }
    let (p, s) = (layout.state_dim(), layout.sensor_len());
    let mut samples = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let vals: Vec<f64> = rec?
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| Error::Format(format!("row {}: bad number `{v}`", r + 1))))
            .collect::<Result<_>>()?;
        let mut it = vals.into_iter();
        let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
        let mut past_estimates = Vec::with_capacity(layout.window_len);
        let mut sensor_blocks = Vec::with_capacity(layout.window_len);
        for _ in 0..layout.window_len {
            past_estimates.push(take(p));
            sensor_blocks.push(take(s));
        }
        let context = take(layout.context_dim);
        let target = take(p);
        samples.push(Sample { window: InputWindow { past_estimates, sensor_blocks, context }, target });
    }
    Ok(Dataset { layout, cycle_slots, samples })
}
