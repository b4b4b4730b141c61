use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use super::config::{BerMode, SimConfig};
use crate::array::{assemble_channel, make_codebook, steering_vector, LinkGeometry, PathState};
use crate::filter::{GaussianBelief, JITTER};
use crate::measurement::{complex_noise, noise_variance, receive, PilotVector, SoundingConfig};
use crate::mobility::{generate_trajectory, synthesize_imu, ImuStream, Trajectory};
use crate::predictor::{PredictorMode, StatePredictor};
use crate::rng::{label, stream, SimRng};
use crate::trackers::{calibrate_process_noise, CycleInput, CycleRecord, Sounder, Tracker, TrackerParams, Variant};
use crate::{Error, Result};

/// NMSE floor in dB; exact estimates would otherwise map to `-inf`.
pub const NMSE_FLOOR_DB: f64 = -100.0;

/// Per-cycle metrics of one simulated link.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub variant: Variant,
    /// NMSE after each tracker step, dB (floored).
    pub nmse_db: Vec<f64>,
    /// Mean data-slot BER of the slots preceding each tracker step.
    pub ber: Vec<f64>,
    /// `10 log10` of the mean linear NMSE.
    pub mean_nmse_db: f64,
    pub mean_ber: f64,
    pub config_hash: u64,
    pub slots_simulated: usize,
    pub tracker_steps: usize,
    pub regularized_updates: usize,
}

/// Result plus everything needed to inspect the run cycle by cycle.
#[derive(Debug, Clone)]
pub struct EpisodeTrace {
    pub result: EpisodeResult,
    pub records: Vec<CycleRecord>,
    /// True per-path state at each tracker step.
    pub truth: Vec<Vec<PathState>>,
    /// Estimated per-path state after each tracker step.
    pub estimates: Vec<Vec<PathState>>,
}

/// `10 log10(||H - H_est||_F^2 / ||H||_F^2)`, floored at [`NMSE_FLOOR_DB`].
pub fn normalized_mse(h_true: &DMatrix<Complex64>, h_est: &DMatrix<Complex64>) -> Result<f64> {
    if h_true.shape() != h_est.shape() {
        return Err(Error::Dimension(format!("channel shapes {:?} and {:?} differ", h_true.shape(), h_est.shape())));
    }
    let power = h_true.norm_squared();
    if power == 0.0 {
        return Err(Error::Domain("reference channel has zero norm".into()));
    }
    Ok((10.0 * ((h_true - h_est).norm_squared() / power).log10()).max(NMSE_FLOOR_DB))
}

/// Gaussian tail `Q(x) = P(N(0,1) > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Coherent BPSK error probability on a scalar channel with power `gain_sq`.
pub fn bpsk_error_probability(gain_sq: f64, noise_var: f64) -> f64 {
    if noise_var == 0.0 {
        return if gain_sq > 0.0 { 0.0 } else { 0.5 };
    }
    q_function((2.0 * gain_sq / noise_var).sqrt())
}

/// Simulated channel, trajectory and sensors of one episode.
pub(crate) struct Scenario {
    pub link: LinkGeometry,
    /// Gains and AoDs (AoA at slot 0).
    pub paths: Vec<PathState>,
    pub traj: Trajectory,
    pub imu: ImuStream,
}

impl Scenario {
    pub fn paths_at(&self, slot: usize) -> Vec<PathState> {
        self.paths.iter().enumerate().map(|(l, p)| PathState { aoa: self.traj.aoa[l][slot], ..*p }).collect()
    }
}

fn draw_aods<R: Rng>(n: usize, separation: f64, rng: &mut R) -> Result<Vec<f64>> {
    for _ in 0..100_000 {
        let cand: Vec<f64> = (0..n).map(|_| rng.random_range(-0.95..=0.95)).collect();
        let ok = cand.iter().enumerate().all(|(i, a)| cand[..i].iter().all(|b| (a - b).abs() >= separation));
        if ok {
            return Ok(cand);
        }
    }
    Err(Error::Config(format!("could not place {n} AoDs {separation} apart")))
}

pub(crate) fn build_scenario(config: &SimConfig) -> Result<Scenario> {
    config.validate()?;
    let link = LinkGeometry::half_wavelength(config.n_rx, config.n_tx)?;
    let mobility = config.mobility();
    let mut rng = stream(config.seed, &[label::TRAJECTORY]);
    let aods = draw_aods(config.num_paths, config.min_aod_separation, &mut rng)?;
    let (aoa0, vel0): (Vec<f64>, Vec<f64>) =
        (0..config.num_paths).map(|_| mobility.draw_initial_state(&mut rng)).unzip();
    let paths = aods
        .iter()
        .zip(&aoa0)
        .map(|(&aod, &aoa)| {
            let phase = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            PathState::new(Complex64::from_polar(1.0, phase), aoa, aod)
        })
        .collect::<Result<Vec<_>>>()?;
    let slots = config.num_cycles * config.cycle_slots + 1;
    let traj = generate_trajectory(&mobility, config.num_paths, slots, &aoa0, &vel0, &mut rng)?;
    let mut imu_rng = stream(config.seed, &[label::IMU]);
    let imu = synthesize_imu(&traj, config.imu_samples, config.cycle_slots, config.imu_snr(), config.dt, &mut imu_rng)?;
    Ok(Scenario { link, paths, traj, imu })
}

/// Random-walk process noise: the configured value, or the mean squared
/// per-cycle AoA increment of the mobility model. The calibration stream
/// depends on the mobility settings only, never on the episode seed.
pub fn resolve_process_noise(config: &SimConfig) -> Result<f64> {
    if let Some(v) = config.process_noise {
        return Ok(v);
    }
    let key =
        format!("{:e} {:e} {:e} {:e} {}", config.a_avg, config.rho, config.velocity_var, config.dt, config.cycle_slots);
    calibrate_process_noise(&config.mobility(), config.cycle_slots, 64, 200, super::config::fnv1a(key.as_bytes()))
}

struct ChannelSounder<'a> {
    h: DMatrix<Complex64>,
    link: &'a LinkGeometry,
    snr_db: f64,
    rng: SimRng,
}

impl Sounder for ChannelSounder<'_> {
    fn sound(&mut self, soundings: &[SoundingConfig]) -> Result<PilotVector> {
        let mut values = Vec::new();
        for s in soundings {
            values.extend(receive(&self.h, s, self.link, self.snr_db, &mut self.rng)?.values);
        }
        Ok(PilotVector { values, noise_var: noise_variance(self.snr_db) })
    }
}

/// Data-slot BER of the slots `(first, last]` with the beamformer pair taken
/// from the dominant singular vectors of `h_est`.
fn cycle_ber(
    config: &SimConfig,
    scenario: &Scenario,
    h_est: &DMatrix<Complex64>,
    slots: std::ops::RangeInclusive<usize>,
    rng: &mut SimRng,
) -> Result<f64> {
    let svd = h_est.clone().svd(true, true);
    let k = svd.singular_values.imax();
    let w: DVector<Complex64> = svd.u.as_ref().expect("left vectors").column(k).into_owned();
    let f: DVector<Complex64> = svd.v_t.as_ref().expect("right vectors").row(k).adjoint();
    let tx_factor: Vec<Complex64> = scenario
        .paths
        .iter()
        .map(|p| Ok(steering_vector(&scenario.link.tx, p.aod)?.dotc(&f)))
        .collect::<Result<_>>()?;
    let noise_var = noise_variance(config.snr_db);
    let mut total = 0.0;
    let count = slots.clone().count();
    for s in slots {
        let mut g = Complex64::new(0.0, 0.0);
        for (l, p) in scenario.paths.iter().enumerate() {
            let a = steering_vector(&scenario.link.rx, scenario.traj.aoa[l][s])?;
            g += p.gain * w.dotc(&a) * tx_factor[l];
        }
        total += match config.ber_mode {
            BerMode::Analytic => bpsk_error_probability(g.norm_sqr(), noise_var),
            BerMode::Bits => {
                let mut errors = 0usize;
                for _ in 0..config.bits_per_slot {
                    let bit = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    let y = g * bit + complex_noise(noise_var, rng);
                    let decided = if (g.conj() * y).re >= 0.0 { 1.0 } else { -1.0 };
                    errors += usize::from(decided != bit);
                }
                errors as f64 / config.bits_per_slot as f64
            }
        };
    }
    Ok(total / count as f64)
}

pub fn run_episode(config: &SimConfig, model: Option<&dyn StatePredictor>) -> Result<EpisodeResult> {
    Ok(run_episode_traced(config, model)?.result)
}

/// Simulates `num_cycles * cycle_slots` slots with one tracker step at the
/// end of every cycle.
pub fn run_episode_traced(config: &SimConfig, model: Option<&dyn StatePredictor>) -> Result<EpisodeTrace> {
    config.validate()?;
    if config.variant.uses_model() && model.is_none() {
        return Err(Error::Config(format!("variant {} needs a trained predictor", config.variant.name())));
    }
    if let Some(m) = model {
        if config.variant.uses_model() && m.window_len() != config.window_len {
            return Err(Error::Config(format!(
                "predictor window {} differs from window_len {}",
                m.window_len(),
                config.window_len
            )));
        }
    }
    let scenario = build_scenario(config)?;
    let t = config.cycle_slots;
    let p = config.mode.state_dim();
    let process_noise = resolve_process_noise(config)?;
    let mut init_rng = stream(config.seed, &[label::INIT]);
    let init_var = (config.init_error_std * config.init_error_std).max(JITTER);
    let initial = scenario
        .paths
        .iter()
        .map(|path| {
            let truth = if p == 2 { vec![path.aoa, path.aod] } else { vec![path.aoa] };
            let mean: Vec<f64> = truth
                .iter()
                .map(|v| (v + config.init_error_std * rng_normal(&mut init_rng)).clamp(-1.0, 1.0))
                .collect();
            GaussianBelief::diagonal(&mean, &vec![init_var; p])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut noise = vec![process_noise; p];
    if config.mode == PredictorMode::Full {
        noise[1] = JITTER;
    }
    let params = TrackerParams {
        mode: config.mode,
        link: scenario.link,
        codebook: make_codebook(config.codebook_size)?,
        beams_per_side: (config.tx_beams, config.rx_beams),
        process_noise: noise,
        lms_step: config.lms_step,
    };
    let model = if config.variant.uses_model() { model } else { None };
    let mut tracker = Tracker::new(config.variant, params, scenario.paths.clone(), initial, model)?;
    let mut sounder = ChannelSounder {
        h: DMatrix::zeros(config.n_rx, config.n_tx),
        link: &scenario.link,
        snr_db: config.snr_db,
        rng: stream(config.seed, &[label::PILOTS]),
    };
    let mut bits_rng = stream(config.seed, &[label::DATA_BITS]);
    let noise_var = noise_variance(config.snr_db);

    let mut h_est = assemble_channel(&tracker.estimated_paths()?, &scenario.link)?;
    let mut nmse_db = Vec::with_capacity(config.num_cycles);
    let mut ber = Vec::with_capacity(config.num_cycles);
    let mut records = Vec::with_capacity(config.num_cycles);
    let mut truth_log = Vec::with_capacity(config.num_cycles);
    let mut estimate_log = Vec::with_capacity(config.num_cycles);
    let mut regularized_updates = 0;
    let mut slots_simulated = 0;
    for c in 1..=config.num_cycles {
        let slot = c * t;
        ber.push(cycle_ber(config, &scenario, &h_est, (slot - t + 1)..=slot, &mut bits_rng)?);
        slots_simulated += t;
        let truth = scenario.paths_at(slot);
        let h_true = assemble_channel(&truth, &scenario.link)?;
        sounder.h = h_true.clone();
        let blocks = scenario.imu.interval(c - 1);
        let input = CycleInput { sensor_blocks: &blocks, noise_var, truth: &truth };
        let record = tracker.step(&input, &mut sounder)?;
        regularized_updates += usize::from(record.regularized);
        records.push(record);
        let est = tracker.estimated_paths()?;
        h_est = assemble_channel(&est, &scenario.link)?;
        nmse_db.push(normalized_mse(&h_true, &h_est)?);
        truth_log.push(truth);
        estimate_log.push(est);
    }
    let mean_linear = nmse_db.iter().map(|d| 10f64.powf(d / 10.0)).sum::<f64>() / nmse_db.len() as f64;
    let result = EpisodeResult {
        variant: config.variant,
        mean_nmse_db: 10.0 * mean_linear.log10(),
        mean_ber: ber.iter().sum::<f64>() / ber.len() as f64,
        nmse_db,
        ber,
        config_hash: config.hash(),
        slots_simulated,
        tracker_steps: records.len(),
        regularized_updates,
    };
    Ok(EpisodeTrace { result, records, truth: truth_log, estimates: estimate_log })
}

fn rng_normal(rng: &mut SimRng) -> f64 {
    rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn quick(variant: Variant) -> SimConfig {
        SimConfig { variant, num_cycles: 10, ..SimConfig::default() }
    }

    #[test]
    fn nmse_reference_points() {
        let link = LinkGeometry::half_wavelength(8, 8).unwrap();
        let h = assemble_channel(&[PathState::new(Complex64::new(0.6, 0.8), 0.2, -0.3).unwrap()], &link).unwrap();
        let zero = DMatrix::zeros(8, 8);
        assert!(normalized_mse(&h, &zero).unwrap().abs() < 1e-12);
        assert_eq!(normalized_mse(&h, &h).unwrap(), NMSE_FLOOR_DB);
        let e1 = h.map(|v| v * 0.9);
        let e2 = &h - (&h - &e1) * Complex64::new(2.0, 0.0);
        let d = normalized_mse(&h, &e2).unwrap() - normalized_mse(&h, &e1).unwrap();
        assert!((d - 20.0 * 2f64.log10()).abs() < 1e-9);
        assert!(normalized_mse(&zero, &h).is_err());
        assert!(normalized_mse(&h, &DMatrix::zeros(4, 8)).is_err());
    }

    #[test]
    fn q_function_values() {
        assert_eq!(q_function(0.0), 0.5);
        assert!((q_function(1.0) - 0.158_655_253_931_457_05).abs() < 1e-15);
        assert!((q_function(3.0) - 1.349_898_031_630_094_6e-3).abs() < 1e-17);
    }

    #[test]
    fn slot_and_step_accounting() {
        let r = run_episode(&quick(Variant::Ekf), None).unwrap();
        assert_eq!(r.slots_simulated, 1600);
        assert_eq!(r.tracker_steps, 10);
        assert_eq!(r.nmse_db.len(), 10);
        assert_eq!(r.ber.len(), 10);
    }

    #[test]
    fn episodes_are_reproducible() {
        for v in [Variant::Ekf, Variant::Lms] {
            let c = quick(v);
            assert_eq!(run_episode(&c, None).unwrap(), run_episode(&c, None).unwrap());
        }
    }

    #[test]
    fn genie_hits_the_floor() {
        let r = run_episode(&quick(Variant::Genie), None).unwrap();
        assert!(r.nmse_db.iter().all(|&d| d == NMSE_FLOOR_DB));
    }

    #[test]
    fn genie_on_a_static_single_path_reaches_the_awgn_bound() {
        for snr in [-2.0, 0.0, 3.0, 6.0, 9.0] {
            let c = SimConfig {
                variant: Variant::Genie,
                num_paths: 1,
                num_cycles: 3,
                a_avg: 0.0,
                velocity_var: 0.0,
                init_error_std: 0.0,
                snr_db: snr,
                ..SimConfig::default()
            };
            let r = run_episode(&c, None).unwrap();
            let want = q_function((2.0 * 10f64.powf(snr / 10.0)).sqrt());
            for b in &r.ber {
                assert!((b - want).abs() < 1e-12, "{snr}: {b} vs {want}");
            }
        }
    }

    #[test]
    fn proposed_variant_requires_a_model() {
        assert!(run_episode(&quick(Variant::ProposedCsiImu), None).is_err());
        assert!(run_episode(&SimConfig { cycle_slots: 150, ..quick(Variant::Ekf) }, None).is_err());
    }

    #[test]
    fn ekf_prior_lags_by_one_cycle_of_motion() {
        let c = SimConfig {
            variant: Variant::Ekf,
            num_paths: 1,
            num_cycles: 20,
            a_avg: 0.1 * std::f64::consts::PI,
            velocity_var: 0.0,
            snr_db: 30.0,
            init_error_std: 0.0,
            seed: 4,
            ..SimConfig::default()
        };
        let trace = run_episode_traced(&c, None).unwrap();
        let step = c.a_avg * c.cycle_slots as f64 * c.dt;
        let mut lags = Vec::new();
        for (k, rec) in trace.records.iter().enumerate().skip(3) {
            let truth = trace.truth[k][0].aoa;
            let prev = trace.truth[k - 1][0].aoa;
            // Skip cycles that straddle a reflection.
            if ((truth - prev).abs() - step).abs() > 1e-9 {
                continue;
            }
            lags.push((truth - rec.predicted[0][0]).abs());
        }
        assert!(lags.len() > 5);
        let mean = lags.iter().sum::<f64>() / lags.len() as f64;
        assert!((mean - step).abs() < 0.2 * step, "{mean} vs {step}");
    }

    #[test]
    fn bpsk_probability_edges() {
        assert_eq!(bpsk_error_probability(1.0, 0.0), 0.0);
        assert_eq!(bpsk_error_probability(0.0, 0.0), 0.5);
        assert_eq!(bpsk_error_probability(0.0, 1.0), 0.5);
        let mut rng = SimRng::seed_from_u64(0);
        let _ = rng_normal(&mut rng);
    }
}
