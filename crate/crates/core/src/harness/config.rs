use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::mobility::MobilityParams;
use crate::predictor::PredictorMode;
use crate::trackers::Variant;
use crate::{Error, Result};

/// How data-slot bit errors are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BerMode {
    /// `Q(sqrt(2 |g|^2 / sigma^2))` per slot.
    Analytic,
    /// Monte Carlo BPSK with coherent detection.
    Bits,
}

impl BerMode {
    pub fn name(self) -> &'static str {
        match self {
            BerMode::Analytic => "analytic",
            BerMode::Bits => "bits",
        }
    }
}

/// Every knob of one simulated link. Keys of [`SimConfig::set`] equal the field names.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub num_paths: usize,
    pub tx_beams: usize,
    pub rx_beams: usize,
    pub codebook_size: usize,
    /// Slots per beam cycle.
    pub cycle_slots: usize,
    pub dt: f64,
    pub window_len: usize,
    /// IMU samples per beam cycle.
    pub imu_samples: usize,
    /// Mean angular velocity (rad/s).
    pub a_avg: f64,
    pub rho: f64,
    /// Stationary variance of the angular velocity.
    pub velocity_var: f64,
    pub snr_db: f64,
    /// IMU SNR; the pilot SNR when unset.
    pub imu_snr_db: Option<f64>,
    pub num_cycles: usize,
    pub seed: u64,
    pub variant: Variant,
    pub model_path: Option<String>,
    pub mode: PredictorMode,
    /// Std of the initial (acquisition) angle error.
    pub init_error_std: f64,
    /// Random-walk process noise; calibrated from the mobility model when unset.
    pub process_noise: Option<f64>,
    pub lms_step: f64,
    pub min_aod_separation: f64,
    pub ber_mode: BerMode,
    pub bits_per_slot: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_tx: 32,
            n_rx: 32,
            num_paths: 3,
            tx_beams: 2,
            rx_beams: 2,
            codebook_size: 64,
            cycle_slots: 160,
            dt: 125e-6,
            window_len: 3,
            imu_samples: 4,
            a_avg: 0.4 * PI,
            rho: 0.9999,
            velocity_var: 0.2,
            snr_db: 9.0,
            imu_snr_db: None,
            num_cycles: 200,
            seed: 0,
            variant: Variant::ProposedCsiImu,
            model_path: None,
            mode: PredictorMode::AoaOnly,
            init_error_std: 0.005,
            process_noise: None,
            lms_step: 3e-4,
            min_aod_separation: 0.2,
            ber_mode: BerMode::Analytic,
            bits_per_slot: 1,
        }
    }
}

/// Parses a real, accepting a `pi` suffix (`0.4pi`, `pi`).
pub fn parse_real(s: &str) -> Result<f64> {
    let t = s.trim();
    let bad = || Error::Config(format!("`{s}` is not a number"));
    if let Some(head) = t.strip_suffix("pi").or_else(|| t.strip_suffix('π')) {
        let head = head.trim().trim_end_matches('*');
        let k = if head.is_empty() { 1.0 } else { head.parse::<f64>().map_err(|_| bad())? };
        return Ok(k * PI);
    }
    t.parse().map_err(|_| bad())
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim().parse().map_err(|_| Error::Config(format!("`{key}` expects a non-negative integer, got `{v}`")))
}

fn parse_opt(v: &str) -> Option<&str> {
    let t = v.trim();
    (!t.is_empty() && t != "none").then_some(t)
}

impl SimConfig {
    pub const KEYS: [&'static str; 27] = [
        "n_tx",
        "n_rx",
        "num_paths",
        "tx_beams",
        "rx_beams",
        "codebook_size",
        "cycle_slots",
        "dt",
        "window_len",
        "imu_samples",
        "a_avg",
        "rho",
        "velocity_var",
        "snr_db",
        "imu_snr_db",
        "num_cycles",
        "seed",
        "variant",
        "model_path",
        "mode",
        "init_error_std",
        "process_noise",
        "lms_step",
        "min_aod_separation",
        "ber_mode",
        "bits_per_slot",
        "config_version",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "n_tx" => self.n_tx = parse_usize(key, v)?,
            "n_rx" => self.n_rx = parse_usize(key, v)?,
            "num_paths" => self.num_paths = parse_usize(key, v)?,
            "tx_beams" => self.tx_beams = parse_usize(key, v)?,
            "rx_beams" => self.rx_beams = parse_usize(key, v)?,
            "codebook_size" => self.codebook_size = parse_usize(key, v)?,
            "cycle_slots" => self.cycle_slots = parse_usize(key, v)?,
            "dt" => self.dt = parse_real(v)?,
            "window_len" => self.window_len = parse_usize(key, v)?,
            "imu_samples" => self.imu_samples = parse_usize(key, v)?,
            "a_avg" => self.a_avg = parse_real(v)?,
            "rho" => self.rho = parse_real(v)?,
            "velocity_var" => self.velocity_var = parse_real(v)?,
            "snr_db" => self.snr_db = parse_real(v)?,
            "imu_snr_db" => self.imu_snr_db = parse_opt(v).map(parse_real).transpose()?,
            "num_cycles" => self.num_cycles = parse_usize(key, v)?,
            "seed" => {
                self.seed = v.parse().map_err(|_| Error::Config(format!("`seed` expects an integer, got `{v}`")))?
            }
            "variant" => self.variant = Variant::from_name(v)?,
            "model_path" => self.model_path = parse_opt(v).map(str::to_owned),
            "mode" => self.mode = PredictorMode::from_name(v)?,
            "init_error_std" => self.init_error_std = parse_real(v)?,
            "process_noise" => self.process_noise = parse_opt(v).map(parse_real).transpose()?,
            "lms_step" => self.lms_step = parse_real(v)?,
            "min_aod_separation" => self.min_aod_separation = parse_real(v)?,
            "ber_mode" => {
                self.ber_mode = match v {
                    "analytic" => BerMode::Analytic,
                    "bits" => BerMode::Bits,
                    other => return Err(Error::Config(format!("unknown ber_mode `{other}`"))),
                }
            }
            "bits_per_slot" => self.bits_per_slot = parse_usize(key, v)?,
            "config_version" => {
                if v != "1" {
                    return Err(Error::Config(format!("unsupported config_version `{v}`")));
                }
            }
            other => return Err(Error::Config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` document; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Canonical `key = value` text; [`Self::apply_text`] restores it exactly.
    pub fn to_text(&self) -> String {
        let opt = |o: Option<f64>| o.map_or("none".to_owned(), |v| format!("{v:e}"));
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("config_version", "1".into());
        put("n_tx", self.n_tx.to_string());
        put("n_rx", self.n_rx.to_string());
        put("num_paths", self.num_paths.to_string());
        put("tx_beams", self.tx_beams.to_string());
        put("rx_beams", self.rx_beams.to_string());
        put("codebook_size", self.codebook_size.to_string());
        put("cycle_slots", self.cycle_slots.to_string());
        put("dt", format!("{:e}", self.dt));
        put("window_len", self.window_len.to_string());
        put("imu_samples", self.imu_samples.to_string());
        put("a_avg", format!("{:e}", self.a_avg));
        put("rho", format!("{:e}", self.rho));
        put("velocity_var", format!("{:e}", self.velocity_var));
        put("snr_db", format!("{:e}", self.snr_db));
        put("imu_snr_db", opt(self.imu_snr_db));
        put("num_cycles", self.num_cycles.to_string());
        put("seed", self.seed.to_string());
        put("variant", self.variant.name().into());
        put("model_path", self.model_path.clone().unwrap_or_else(|| "none".into()));
        put("mode", self.mode.name().into());
        put("init_error_std", format!("{:e}", self.init_error_std));
        put("process_noise", opt(self.process_noise));
        put("lms_step", format!("{:e}", self.lms_step));
        put("min_aod_separation", format!("{:e}", self.min_aod_separation));
        put("ber_mode", self.ber_mode.name().into());
        put("bits_per_slot", self.bits_per_slot.to_string());
        s
    }

    /// FNV-1a of the canonical text.
    pub fn hash(&self) -> u64 {
        fnv1a(self.to_text().as_bytes())
    }

    pub fn mobility(&self) -> MobilityParams {
        MobilityParams {
            a_avg: self.a_avg,
            rho: self.rho,
            drive_var: self.velocity_var * (1.0 - self.rho * self.rho),
            dt: self.dt,
        }
    }

    pub fn imu_snr(&self) -> f64 {
        self.imu_snr_db.unwrap_or(self.snr_db)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_tx", self.n_tx),
            ("n_rx", self.n_rx),
            ("num_paths", self.num_paths),
            ("tx_beams", self.tx_beams),
            ("rx_beams", self.rx_beams),
            ("cycle_slots", self.cycle_slots),
            ("window_len", self.window_len),
            ("imu_samples", self.imu_samples),
            ("num_cycles", self.num_cycles),
            ("bits_per_slot", self.bits_per_slot),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{k}` must be positive")));
        }
        if self.codebook_size < 2 || self.tx_beams > self.codebook_size || self.rx_beams > self.codebook_size {
            return Err(Error::Config("codebook must hold at least 2 beams and every sounding set".into()));
        }
        if !self.cycle_slots.is_multiple_of(self.imu_samples) {
            return Err(Error::Config(format!(
                "cycle_slots {} is not divisible by imu_samples {}",
                self.cycle_slots, self.imu_samples
            )));
        }
        if self.snr_db.is_nan() || self.imu_snr().is_nan() {
            return Err(Error::Config("SNR must be a number".into()));
        }
        if !(self.init_error_std >= 0.0) || !(self.lms_step >= 0.0) || !(self.velocity_var >= 0.0) {
            return Err(Error::Config("init_error_std, lms_step and velocity_var must be non-negative".into()));
        }
        if let Some(v) = self.process_noise {
            if !(v >= 0.0) {
                return Err(Error::Config("process_noise must be non-negative".into()));
            }
        }
        let sep = self.min_aod_separation;
        if !(sep >= 0.0) || sep * (self.num_paths as f64 - 1.0) >= 2.0 {
            return Err(Error::Config(format!("cannot place {} AoDs {sep} apart in [-1, 1]", self.num_paths)));
        }
        self.mobility().validate()
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
