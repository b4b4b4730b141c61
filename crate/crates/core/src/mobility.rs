//! Slot-level AoA trajectories and synthetic IMU streams.
//!
//! Each path's angular velocity follows an AR(1) process pulled towards
//! `a_avg`; the AoA integrates it slot by slot. Angles live in the sine domain
//! and reflect off `+-1`, reversing the direction of motion.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

/// Number of sensor channels per path: angular velocity and angular acceleration.
pub const SENSOR_CHANNELS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityParams {
    /// Mean angular velocity, rad/s.
    pub a_avg: f64,
    /// AR(1) coefficient of the velocity process.
    pub rho: f64,
    /// Variance of the per-slot velocity innovation.
    pub drive_var: f64,
    /// Slot duration in seconds.
    pub dt: f64,
}

impl Default for MobilityParams {
    fn default() -> Self {
        Self::with_a_avg(0.0)
    }
}

impl MobilityParams {
    /// Defaults: `rho = 0.9999`, `drive_var = 0.2 (1 - rho^2)`, `dt = 125 us`.
    pub fn with_a_avg(a_avg: f64) -> Self {
        let rho = 0.9999;
        Self { a_avg, rho, drive_var: 0.2 * (1.0 - rho * rho), dt: 125e-6 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.drive_var >= 0.0) {
            return Err(Error::Config(format!("drive_var must be >= 0, got {}", self.drive_var)));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !self.a_avg.is_finite() {
            return Err(Error::Config("a_avg must be finite".into()));
        }
        Ok(())
    }

    /// Stationary variance of the velocity process, `drive_var / (1 - rho^2)`.
    pub fn stationary_velocity_var(&self) -> f64 {
        self.drive_var / (1.0 - self.rho * self.rho)
    }

    /// Initial AoA uniform on `[-0.8, 0.8]`, initial velocity drawn from the
    /// stationary distribution around `a_avg`.
    pub fn draw_initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let aoa = rng.random_range(-0.8..=0.8);
        let sd = self.stationary_velocity_var().sqrt();
        let vel = if sd > 0.0 { Normal::new(self.a_avg, sd).expect("finite std").sample(rng) } else { self.a_avg };
        (aoa, vel)
    }
}

/// Per-path AoA and velocity sequences; index 0 is the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `aoa[path][slot]`, sine domain.
    pub aoa: Vec<Vec<f64>>,
    /// `velocity[path][slot]`, the AR(1) velocity magnitude process.
    pub velocity: Vec<Vec<f64>>,
    /// `heading[path][slot]`, `+1` or `-1`; flips at each reflection.
    pub heading: Vec<Vec<f64>>,
    pub num_slots: usize,
    pub num_paths: usize,
}

impl Trajectory {
    /// Signed angular rate of `path` at `slot`.
    pub fn rate(&self, path: usize, slot: usize) -> f64 {
        self.heading[path][slot] * self.velocity[path][slot]
    }
}

fn reflect(mut theta: f64, mut heading: f64) -> (f64, f64) {
    loop {
        if theta > 1.0 {
            theta = 2.0 - theta;
        } else if theta < -1.0 {
            theta = -2.0 - theta;
        } else {
            return (theta, heading);
        }
        heading = -heading;
    }
}

pub fn generate_trajectory<R: Rng + ?Sized>(
    params: &MobilityParams,
    num_paths: usize,
    num_slots: usize,
    init_aoa: &[f64],
    init_velocity: &[f64],
    rng: &mut R,
) -> Result<Trajectory> {
    params.validate()?;
    if num_slots == 0 {
        return Err(Error::Config("trajectory needs at least one slot".into()));
    }
    if init_aoa.len() != num_paths || init_velocity.len() != num_paths {
        return Err(Error::Dimension(format!(
            "{num_paths} paths but {} initial angles and {} initial velocities",
            init_aoa.len(),
            init_velocity.len()
        )));
    }
    if let Some(bad) = init_aoa.iter().find(|a| a.abs() > 1.0) {
        return Err(Error::Domain(format!("initial AoA {bad} outside [-1, 1]")));
    }
    let drive = if params.drive_var > 0.0 {
        Some(Normal::new(0.0, params.drive_var.sqrt()).expect("finite std"))
    } else {
        None
    };
    let mut aoa = Vec::with_capacity(num_paths);
    let mut velocity = Vec::with_capacity(num_paths);
    let mut heading = Vec::with_capacity(num_paths);
    for l in 0..num_paths {
        let mut th = Vec::with_capacity(num_slots);
        let mut ve = Vec::with_capacity(num_slots);
        let mut hd = Vec::with_capacity(num_slots);
        let (mut t, mut v, mut h) = (init_aoa[l], init_velocity[l], 1.0);
        th.push(t);
        ve.push(v);
        hd.push(h);
        for _ in 1..num_slots {
            let w = drive.map_or(0.0, |d| d.sample(rng));
            v = (1.0 - params.rho) * params.a_avg + params.rho * v + w;
            (t, h) = reflect(t + h * params.dt * v, h);
            th.push(t);
            ve.push(v);
            hd.push(h);
        }
        aoa.push(th);
        velocity.push(ve);
        heading.push(hd);
    }
    Ok(Trajectory { aoa, velocity, heading, num_slots, num_paths })
}

/// Decimated noisy IMU samples grouped per beam cycle.
///
/// Block `c` of a path covers slots `(c T, (c+1) T]`: `K` angular-velocity
/// samples followed by `K` angular-acceleration samples, taken every `T / K`
/// slots and ending on slot `(c+1) T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuStream {
    /// `blocks[path][cycle]`, each of length `K * SENSOR_CHANNELS`.
    pub blocks: Vec<Vec<Vec<f64>>>,
    pub samples_per_cycle: usize,
    pub cycle_slots: usize,
}

impl ImuStream {
    pub fn num_cycles(&self) -> usize {
        self.blocks.first().map_or(0, Vec::len)
    }

    /// Sensor blocks of all paths for the interval ending at cycle `c + 1`.
    pub fn interval(&self, c: usize) -> Vec<Vec<f64>> {
        self.blocks.iter().map(|p| p[c].clone()).collect()
    }
}

pub fn synthesize_imu<R: Rng + ?Sized>(
    traj: &Trajectory,
    samples_per_cycle: usize,
    cycle_slots: usize,
    snr_db: f64,
    dt: f64,
    rng: &mut R,
) -> Result<ImuStream> {
    if samples_per_cycle == 0 || cycle_slots == 0 || !cycle_slots.is_multiple_of(samples_per_cycle) {
        return Err(Error::Config(format!(
            "cycle length {cycle_slots} slots is not a multiple of {samples_per_cycle} sensor samples"
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    let stride = cycle_slots / samples_per_cycle;
    let cycles = (traj.num_slots - 1) / cycle_slots;
    let noise_scale = 10f64.powf(-snr_db / 10.0);
    let mut blocks = Vec::with_capacity(traj.num_paths);
    for l in 0..traj.num_paths {
        let th = &traj.aoa[l];
        let vel = |n: usize| {
            if n == 0 {
                traj.rate(l, 0)
            } else {
                (th[n] - th[n - 1]) / dt
            }
        };
        let mut clean: Vec<Vec<f64>> = Vec::with_capacity(cycles);
        for c in 0..cycles {
            let mut block = vec![0.0; samples_per_cycle * SENSOR_CHANNELS];
            for k in 0..samples_per_cycle {
                let n = c * cycle_slots + stride * (k + 1);
                block[k] = vel(n);
                block[samples_per_cycle + k] = (vel(n) - vel(n - 1)) / dt;
            }
            clean.push(block);
        }
        let mut power = [0.0; SENSOR_CHANNELS];
        for block in &clean {
            for ch in 0..SENSOR_CHANNELS {
                power[ch] +=
                    block[ch * samples_per_cycle..(ch + 1) * samples_per_cycle].iter().map(|v| v * v).sum::<f64>();
            }
        }
        let count = (cycles * samples_per_cycle).max(1) as f64;
        let sd: Vec<f64> = power.iter().map(|p| (p / count * noise_scale).sqrt()).collect();
        for block in &mut clean {
            for ch in 0..SENSOR_CHANNELS {
                if sd[ch] > 0.0 {
                    let dist = Normal::new(0.0, sd[ch]).expect("finite std");
                    for v in &mut block[ch * samples_per_cycle..(ch + 1) * samples_per_cycle] {
                        *v += dist.sample(rng);
                    }
                }
            }
        }
        blocks.push(clean);
    }
    Ok(ImuStream { blocks, samples_per_cycle, cycle_slots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn still(a_avg: f64) -> MobilityParams {
        MobilityParams { drive_var: 0.0, ..MobilityParams::with_a_avg(a_avg) }
    }

    #[test]
    fn zero_dynamics_hold_the_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = generate_trajectory(&still(0.0), 2, 500, &[0.3, -0.2], &[0.0, 0.0], &mut rng).unwrap();
        assert!(t.aoa[0].iter().all(|&a| a == 0.3));
        assert!(t.aoa[1].iter().all(|&a| a == -0.2));
    }

    #[test]
    fn constant_velocity_integrates_linearly() {
        let p = still(0.4 * PI);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = generate_trajectory(&p, 1, 1000, &[0.0], &[p.a_avg], &mut rng).unwrap();
        for n in 0..1000 {
            let want = n as f64 * p.dt * p.a_avg;
            assert!((t.aoa[0][n] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn reflection_reverses_motion() {
        let p = still(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = generate_trajectory(&p, 1, 4000, &[0.99], &[1.0], &mut rng).unwrap();
        let peak = t.aoa[0].iter().cloned().fold(f64::MIN, f64::max);
        assert!(peak <= 1.0);
        assert!(t.aoa[0][3999] < 0.99);
        assert_eq!(t.heading[0][3999], -1.0);
    }

    #[test]
    fn velocity_process_has_stationary_variance() {
        let p = MobilityParams::with_a_avg(0.2 * PI);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut acc = 0.0;
        let mut n = 0usize;
        for _ in 0..40 {
            let (a0, v0) = p.draw_initial_state(&mut rng);
            let t = generate_trajectory(&p, 1, 100_000, &[a0], &[v0], &mut rng).unwrap();
            for v in &t.velocity[0] {
                acc += (v - p.a_avg).powi(2);
                n += 1;
            }
        }
        let var = acc / n as f64;
        // Correlation time is 10^4 slots, so 4e6 samples hold ~400 independent ones.
        assert!((var - 0.2).abs() < 0.03, "velocity variance {var}");
    }

    #[test]
    fn imu_of_constant_velocity_is_exact() {
        let p = still(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = generate_trajectory(&p, 1, 1601, &[-0.5], &[0.5], &mut rng).unwrap();
        let imu = synthesize_imu(&t, 4, 160, f64::INFINITY, p.dt, &mut rng).unwrap();
        assert_eq!(imu.num_cycles(), 10);
        for block in &imu.blocks[0] {
            assert_eq!(block.len(), 8);
            for k in 0..4 {
                assert!((block[k] - 0.5).abs() < 1e-9);
                assert!(block[4 + k].abs() < 1e-4);
            }
        }
        assert!(synthesize_imu(&t, 3, 160, 5.0, p.dt, &mut rng).is_err());
    }

    #[test]
    fn imu_noise_follows_snr() {
        let p = still(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = generate_trajectory(&p, 1, 40 * 25_000 + 1, &[-1.0], &[1.0], &mut rng).unwrap();
        let clean = synthesize_imu(&t, 4, 160, f64::INFINITY, p.dt, &mut rng).unwrap();
        let noisy = synthesize_imu(&t, 4, 160, 5.0, p.dt, &mut rng).unwrap();
        let (mut sig, mut err) = (0.0, 0.0);
        for (a, b) in clean.blocks[0].iter().zip(&noisy.blocks[0]) {
            for k in 0..4 {
                sig += a[k] * a[k];
                err += (a[k] - b[k]).powi(2);
            }
        }
        let ratio = err / sig;
        let want = 10f64.powf(-0.5);
        assert!((ratio / want - 1.0).abs() < 0.05, "noise ratio {ratio}");
    }

    #[test]
    fn sampled_velocity_tracks_slot_velocity() {
        let p = MobilityParams::with_a_avg(0.4 * PI);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = generate_trajectory(&p, 1, 160 * 50 + 1, &[0.0], &[p.a_avg], &mut rng).unwrap();
        let imu = synthesize_imu(&t, 4, 160, f64::INFINITY, p.dt, &mut rng).unwrap();
        for (c, block) in imu.blocks[0].iter().enumerate() {
            for k in 0..4 {
                let n = c * 160 + 40 * (k + 1);
                if t.heading[0][n] != t.heading[0][n - 1] {
                    continue;
                }
                assert!((block[k] - t.rate(0, n)).abs() < 1e-9);
            }
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(4))]
        #[test]
        fn reflection_keeps_angles_valid(seed in 0u64..1000) {
            let p = MobilityParams::with_a_avg(0.4 * PI);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = generate_trajectory(&p, 1, 1_000_000, &[0.0], &[p.a_avg], &mut rng).unwrap();
            proptest::prop_assert!(t.aoa[0].iter().all(|a| a.abs() <= 1.0));
        }
    }
}
