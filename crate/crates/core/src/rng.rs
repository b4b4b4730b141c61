//! Counter-based seed derivation.
//!
//! Every random stream in a simulation is addressed by a master seed plus a
//! path of integer labels, so streams are independent of the order in which
//! episodes are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a label path into a single 64-bit seed.
pub fn derive_seed(master: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(splitmix64(master), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

/// Independent stream for `labels` under `master`.
pub fn stream(master: u64, labels: &[u64]) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(derive_seed(master, labels));
    rng
}

/// Well-known stream labels used by the episode simulator.
pub mod label {
    pub const TRAJECTORY: u64 = 1;
    pub const PILOTS: u64 = 2;
    pub const IMU: u64 = 3;
    pub const INIT: u64 = 4;
    pub const DATA_BITS: u64 = 5;
    pub const CALIBRATION: u64 = 6;
    pub const DATASET: u64 = 7;
    pub const TRAINING: u64 = 8;
    pub const SWEEP: u64 = 9;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| stream(7, &[1, 2]).random()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        let x: u64 = stream(7, &[1, 2]).random();
        let y: u64 = stream(7, &[2, 1]).random();
        let z: u64 = stream(8, &[1, 2]).random();
        assert_ne!(x, y);
        assert_ne!(x, z);
    }
}
