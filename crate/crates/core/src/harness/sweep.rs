use std::io::{Read, Write};

use rayon::prelude::*;

use super::config::SimConfig;
use super::episode::run_episode;
use crate::predictor::StatePredictor;
use crate::rng::{derive_seed, label};
use crate::trackers::Variant;
use crate::{Error, Result};

/// One swept configuration key and its values.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub key: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: SimConfig,
    pub axis: SweepAxis,
    pub variants: Vec<Variant>,
    pub trials: usize,
}

/// One CSV line: a single trial, or the aggregate of all trials
/// (`trial == None`) of one axis value and variant.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis_key: String,
    pub axis_value: f64,
    pub variant: Variant,
    pub trial: Option<usize>,
    /// Episode seed; `0` for aggregates.
    pub seed: u64,
    pub mean_nmse_db: f64,
    pub mean_ber: f64,
    /// Tracker steps per trial.
    pub cycles: usize,
    /// `ok`, `failed: <reason>` or, for aggregates, `ok`/`partial k/n`/`failed`.
    pub status: String,
}

/// Source of trained predictors for the configurations of a sweep.
pub trait ModelSource: Sync {
    fn model_for(&self, config: &SimConfig) -> Option<&dyn StatePredictor>;
}

/// Sweeps that only run model-free variants.
pub struct NoModels;

impl ModelSource for NoModels {
    fn model_for(&self, _config: &SimConfig) -> Option<&dyn StatePredictor> {
        None
    }
}

/// Textual value accepted by [`SimConfig::set`]: integers without exponent.
fn axis_text(value: f64) -> String {
    if value.fract() == 0.0 && value.abs() < 1e15 {
        format!("{}", value as i64)
    } else {
        format!("{value:e}")
    }
}

/// Seed shared by every variant of one (value, trial) pair.
pub fn trial_seed(master: u64, value: f64, trial: usize) -> u64 {
    derive_seed(master, &[label::SWEEP, value.to_bits(), trial as u64])
}

/// Configuration of one trial.
pub fn trial_config(spec: &SweepSpec, value: f64, variant: Variant, trial: usize) -> Result<SimConfig> {
    let mut c = spec.base.clone();
    c.set(&spec.axis.key, &axis_text(value))?;
    c.variant = variant;
    c.seed = trial_seed(spec.base.seed, value, trial);
    c.validate()?;
    Ok(c)
}

/// Runs every (value, variant, trial) triple in parallel. Rows come out
/// grouped by value, then variant: the trials followed by their aggregate.
/// A failed episode yields a flagged row instead of aborting the sweep.
pub fn run_sweep(spec: &SweepSpec, models: &dyn ModelSource) -> Result<Vec<SweepRow>> {
    if spec.trials == 0 || spec.variants.is_empty() || spec.axis.values.is_empty() {
        return Err(Error::Config("sweep needs values, variants and at least one trial".into()));
    }
    let mut jobs = Vec::new();
    for &value in &spec.axis.values {
        for &variant in &spec.variants {
            // Surface bad keys and values before any simulation runs.
            trial_config(spec, value, variant, 0)?;
            jobs.extend((0..spec.trials).map(|t| (value, variant, t)));
        }
    }
    let trials: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(value, variant, trial)| {
            let config = trial_config(spec, value, variant, trial).expect("validated above");
            let outcome = run_episode(&config, models.model_for(&config));
            let (nmse, ber, status) = match outcome {
                Ok(r) => (r.mean_nmse_db, r.mean_ber, "ok".to_string()),
                Err(e) => (f64::NAN, f64::NAN, format!("failed: {e}")),
            };
            SweepRow {
                axis_key: spec.axis.key.clone(),
                axis_value: value,
                variant,
                trial: Some(trial),
                seed: config.seed,
                mean_nmse_db: nmse,
                mean_ber: ber,
                cycles: config.num_cycles,
                status,
            }
        })
        .collect();
    let mut rows = Vec::with_capacity(trials.len() + trials.len() / spec.trials);
    for group in trials.chunks(spec.trials) {
        rows.extend_from_slice(group);
        rows.push(aggregate(group));
    }
    Ok(rows)
}

/// Arithmetic mean of the per-trial dB and BER values over successful trials.
pub fn aggregate(group: &[SweepRow]) -> SweepRow {
    let ok: Vec<&SweepRow> = group.iter().filter(|r| r.status == "ok").collect();
    let mean = |f: fn(&SweepRow) -> f64| {
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
        }
    };
    let status = match ok.len() {
        n if n == group.len() => "ok".to_string(),
        0 => "failed".to_string(),
        n => format!("partial {n}/{}", group.len()),
    };
    SweepRow {
        trial: None,
        seed: 0,
        mean_nmse_db: mean(|r| r.mean_nmse_db),
        mean_ber: mean(|r| r.mean_ber),
        status,
        ..group[0].clone()
    }
}

pub const SWEEP_HEADER: [&str; 9] =
    ["axis_name", "axis_value", "variant", "trial", "seed", "mean_nmse_db", "mean_ber", "cycles", "status"];

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record([
            r.axis_key.clone(),
            format!("{:e}", r.axis_value),
            r.variant.name().to_string(),
            r.trial.map_or_else(|| "mean".to_string(), |t| t.to_string()),
            r.seed.to_string(),
            format!("{:e}", r.mean_nmse_db),
            format!("{:e}", r.mean_ber),
            r.cycles.to_string(),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut rd = csv::Reader::from_reader(input);
    if rd.headers()?.iter().ne(SWEEP_HEADER) {
        return Err(Error::Format(format!("sweep header must be {}", SWEEP_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = |i: usize| Error::Format(format!("row {}: bad `{}` value `{}`", line + 1, SWEEP_HEADER[i], field(i)));
        let real = |i: usize| field(i).parse::<f64>().map_err(|_| bad(i));
        let int = |i: usize| field(i).parse::<u64>().map_err(|_| bad(i));
        rows.push(SweepRow {
            axis_key: field(0).to_string(),
            axis_value: real(1)?,
            variant: Variant::from_name(field(2))?,
            trial: if field(3) == "mean" { None } else { Some(int(3)? as usize) },
            seed: int(4)?,
            mean_nmse_db: real(5)?,
            mean_ber: real(6)?,
            cycles: int(7)? as usize,
            status: field(8).to_string(),
        });
    }
    Ok(rows)
}

/// Figure table: aggregate rows pivoted to one column per variant.
/// `metric` is `nmse` or `ber`.
pub fn pivot_table(rows: &[SweepRow], metric: &str) -> Result<String> {
    let pick: fn(&SweepRow) -> f64 = match metric {
        "nmse" => |r| r.mean_nmse_db,
        "ber" => |r| r.mean_ber,
        other => return Err(Error::Config(format!("unknown metric `{other}`, expected nmse or ber"))),
    };
    let agg: Vec<&SweepRow> = rows.iter().filter(|r| r.trial.is_none()).collect();
    let Some(first) = agg.first() else {
        return Err(Error::Format("sweep holds no aggregate rows".into()));
    };
    let mut variants: Vec<Variant> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for r in &agg {
        if !variants.contains(&r.variant) {
            variants.push(r.variant);
        }
        if !values.contains(&r.axis_value) {
            values.push(r.axis_value);
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = vec![first.axis_key.clone()];
    head.extend(variants.iter().map(|v| v.name().to_string()));
    w.write_record(&head)?;
    for &x in &values {
        let mut line = vec![format!("{x:e}")];
        for &v in &variants {
            let cell = agg.iter().find(|r| r.axis_value == x && r.variant == v).map_or(f64::NAN, |r| pick(r));
            line.push(format!("{cell:e}"));
        }
        w.write_record(&line)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}
