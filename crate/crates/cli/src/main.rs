//! `beamtrack`: dataset generation, predictor training, single-episode
//! evaluation, parameter sweeps and figure tables.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use beamtrack::harness::{
    calibrate_estimate_noise, dataset_spec, fit_model, pivot_table, read_sweep_csv, run_episode, run_sweep,
    write_sweep_csv, ModelStore, SimConfig, SweepAxis, SweepSpec, TrainingPlan, CALIBRATION_SNR_DB,
};
use beamtrack::predictor::{
    generate_dataset, load_checkpoint, read_dataset_csv, save_checkpoint, PredictorModel, StatePredictor, TrainConfig,
};
use beamtrack::trackers::Variant;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "beamtrack", version, about = "LSTM-aided Bayesian mmWave beam tracking simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a training set and write it as CSV.
    GenerateData {
        #[command(flatten)]
        sim: SimFlags,
        #[command(flatten)]
        plan: PlanFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a predictor and save a checkpoint.
    Train {
        #[command(flatten)]
        sim: SimFlags,
        #[command(flatten)]
        plan: PlanFlags,
        /// Train on this dataset CSV instead of synthesizing one.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one episode and print its summary.
    Evaluate {
        #[command(flatten)]
        sim: SimFlags,
        /// Also write per-cycle NMSE and BER to this CSV.
        #[arg(long)]
        per_cycle: Option<PathBuf>,
    },
    /// Sweep one configuration key over several trackers.
    Sweep {
        #[command(flatten)]
        sim: SimFlags,
        /// Swept key: snr_db, cycle_slots or a_avg (any numeric key works).
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values; `pi` suffixes are accepted.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Comma-separated tracker variants.
        #[arg(long, value_delimiter = ',', default_value = "proposed_csi_imu,ekf,lms")]
        variants: Vec<String>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Checkpoint per learned variant, `VARIANT=PATH`; `{T_CSI}` in PATH
        /// is replaced by the cycle length.
        #[arg(long = "model")]
        models: Vec<String>,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pivot sweep CSVs into per-figure tables.
    PlotData {
        /// Sweep CSV files.
        #[arg(required = true)]
        sweeps: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

macro_rules! sim_flags {
    ($($field:ident),* $(,)?) => {
        /// Simulation settings: a `key = value` file overridden by flags
        /// named after the configuration keys.
        #[derive(Args, Debug, Default)]
        struct SimFlags {
            /// Flat `key = value` configuration file.
            #[arg(long)]
            config: Option<PathBuf>,
            $(
                #[arg(long, value_name = "VALUE")]
                $field: Option<String>,
            )*
        }

        impl SimFlags {
            fn overrides(&self) -> Vec<(&'static str, &str)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push((stringify!($field), v.as_str()));
                    }
                )*
                out
            }
        }
    };
}

sim_flags!(
    n_tx,
    n_rx,
    num_paths,
    tx_beams,
    rx_beams,
    codebook_size,
    cycle_slots,
    dt,
    window_len,
    imu_samples,
    a_avg,
    rho,
    velocity_var,
    snr_db,
    imu_snr_db,
    num_cycles,
    seed,
    variant,
    model_path,
    mode,
    init_error_std,
    process_noise,
    lms_step,
    min_aod_separation,
    ber_mode,
    bits_per_slot,
);

impl SimFlags {
    fn resolve(&self) -> Result<SimConfig> {
        let mut config = SimConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            config.apply_text(&text).with_context(|| format!("in {}", path.display()))?;
        }
        for (key, value) in self.overrides() {
            config.set(key, value).with_context(|| format!("flag --{}", key.replace('_', "-")))?;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args, Debug)]
struct PlanFlags {
    /// Variant the model serves; `proposed_csi` zeroes the sensor inputs.
    #[arg(long, default_value = "proposed_csi_imu")]
    model_variant: String,
    #[arg(long, default_value_t = 100_000)]
    windows: usize,
    #[arg(long, default_value_t = 100)]
    cycles_per_episode: usize,
    #[arg(long, default_value_t = 64)]
    calibration_episodes: usize,
    #[arg(long, default_value_t = 1)]
    lstm_layers: usize,
    #[arg(long, default_value_t = 64)]
    minibatch: usize,
    #[arg(long, default_value_t = 0.01)]
    initial_lr: f64,
    #[arg(long, default_value_t = 3)]
    decay_epoch: usize,
    #[arg(long, default_value_t = 0.1)]
    decay_rate: f64,
    #[arg(long, default_value_t = 30)]
    total_epochs: usize,
    /// Seed of dataset synthesis, initialization and shuffling.
    #[arg(long, default_value_t = 0)]
    train_seed: u64,
}

impl PlanFlags {
    fn resolve(&self) -> Result<(Variant, TrainingPlan)> {
        let variant = Variant::from_name(&self.model_variant)?;
        let plan = TrainingPlan {
            windows: self.windows,
            cycles_per_episode: self.cycles_per_episode,
            calibration_episodes: self.calibration_episodes,
            lstm_layers: self.lstm_layers,
            train: TrainConfig {
                minibatch: self.minibatch,
                initial_lr: self.initial_lr,
                decay_epoch: self.decay_epoch,
                decay_rate: self.decay_rate,
                total_epochs: self.total_epochs,
                seed: self.train_seed,
            },
            ..TrainingPlan::default()
        };
        plan.train.validate()?;
        Ok((variant, plan))
    }
}

fn model_path(template: &str, cycle_slots: usize) -> PathBuf {
    PathBuf::from(template.replace("{T_CSI}", &cycle_slots.to_string()))
}

fn load_model(path: &Path) -> Result<PredictorModel> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn synthesize(config: &SimConfig, plan_flags: &PlanFlags) -> Result<(beamtrack::predictor::Dataset, TrainingPlan)> {
    let (variant, plan) = plan_flags.resolve()?;
    let calibration = calibrate_estimate_noise(config, &CALIBRATION_SNR_DB, plan.calibration_episodes)?;
    eprintln!("estimate-noise calibration: {:?}", calibration.error_std());
    let spec = dataset_spec(config, variant, &plan)?;
    let dataset = generate_dataset(&spec, &calibration, plan.train.seed)?;
    Ok((dataset, plan))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData { sim, plan, out } => {
            let (dataset, _) = synthesize(&sim.resolve()?, &plan)?;
            beamtrack::predictor::write_dataset_csv(&dataset, &out)?;
            eprintln!("wrote {} windows to {}", dataset.len(), out.display());
        }
        Command::Train { sim, plan, data, out } => {
            let config = sim.resolve()?;
            let (dataset, plan) = match data {
                Some(path) => (read_dataset_csv(&path)?, plan.resolve()?.1),
                None => synthesize(&config, &plan)?,
            };
            let (model, losses) = fit_model(&dataset, &plan)?;
            for (epoch, loss) in losses.iter().enumerate() {
                eprintln!("epoch {:>3}  loss {loss:.6e}", epoch + 1);
            }
            eprintln!("residual variance {:?}", model.residual_var);
            save_checkpoint(&model, &out)?;
        }
        Command::Evaluate { sim, per_cycle } => {
            let config = sim.resolve()?;
            let model = match (&config.model_path, config.variant.uses_model()) {
                (Some(t), true) => Some(load_model(&model_path(t, config.cycle_slots))?),
                (None, true) => bail!("variant {} needs --model-path", config.variant.name()),
                _ => None,
            };
            let result = run_episode(&config, model.as_ref().map(|m| m as &dyn StatePredictor))?;
            println!("variant           {}", result.variant.name());
            println!("config_hash       {:016x}", result.config_hash);
            println!("cycles            {}", result.tracker_steps);
            println!("slots             {}", result.slots_simulated);
            println!("mean_nmse_db      {:.4}", result.mean_nmse_db);
            println!("mean_ber          {:.6e}", result.mean_ber);
            println!("regularized       {}", result.regularized_updates);
            if let Some(path) = per_cycle {
                let mut w = output(Some(&path))?;
                writeln!(w, "cycle,nmse_db,ber")?;
                for (c, (n, b)) in result.nmse_db.iter().zip(&result.ber).enumerate() {
                    writeln!(w, "{},{n:e},{b:e}", c + 1)?;
                }
            }
        }
        Command::Sweep { sim, axis, values, variants, trials, models, out } => {
            let base = sim.resolve()?;
            let values =
                values.iter().map(|v| beamtrack::harness::parse_real(v)).collect::<beamtrack::Result<Vec<f64>>>()?;
            let variants =
                variants.iter().map(|v| Variant::from_name(v.trim())).collect::<beamtrack::Result<Vec<_>>>()?;
            let spec = SweepSpec { base, axis: SweepAxis { key: axis, values }, variants, trials };
            let mut store = ModelStore::new();
            let slots: BTreeSet<usize> = if spec.axis.key == "cycle_slots" {
                spec.axis.values.iter().map(|v| *v as usize).collect()
            } else {
                BTreeSet::from([spec.base.cycle_slots])
            };
            for entry in &models {
                let (name, template) =
                    entry.split_once('=').with_context(|| format!("--model expects VARIANT=PATH, got `{entry}`"))?;
                let variant = Variant::from_name(name.trim())?;
                for &t in &slots {
                    store.insert(variant, load_model(&model_path(template.trim(), t))?);
                }
            }
            let rows = run_sweep(&spec, &store)?;
            write_sweep_csv(&rows, output(out.as_deref())?)?;
        }
        Command::PlotData { sweeps, out_dir } => {
            fs::create_dir_all(&out_dir)?;
            for path in &sweeps {
                let rows = read_sweep_csv(File::open(path).with_context(|| format!("opening {}", path.display()))?)?;
                let axis = rows.first().map(|r| r.axis_key.clone()).unwrap_or_default();
                let figures: &[(&str, &str)] = match axis.as_str() {
                    "snr_db" => &[("snr_ber.csv", "ber"), ("snr_nmse.csv", "nmse")],
                    "cycle_slots" => &[("tcsi_nmse.csv", "nmse")],
                    "a_avg" => &[("aavg_nmse.csv", "nmse")],
                    other => bail!("{}: no figure for axis `{other}`", path.display()),
                };
                for (file, metric) in figures {
                    let target = out_dir.join(file);
                    fs::write(&target, pivot_table(&rows, metric)?)?;
                    eprintln!("wrote {}", target.display());
                }
            }
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    run(Cli::parse())
}
