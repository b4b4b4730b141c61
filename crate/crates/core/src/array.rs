//! Uniform linear arrays, steering vectors, beam codebooks and the
//! angular-domain channel matrix.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::{Error, Result};

/// Uniform linear array with `num_elements` antennas spaced
/// `element_spacing` wavelengths apart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayGeometry {
    num_elements: usize,
    element_spacing: f64,
}

impl ArrayGeometry {
    pub fn new(num_elements: usize, element_spacing: f64) -> Result<Self> {
        if num_elements == 0 {
            return Err(Error::Domain("array needs at least one element".into()));
        }
        if !(element_spacing > 0.0 && element_spacing.is_finite()) {
            return Err(Error::Domain(format!("element spacing must be positive, got {element_spacing}")));
        }
        Ok(Self { num_elements, element_spacing })
    }

    /// Half-wavelength ULA.
    pub fn half_wavelength(num_elements: usize) -> Result<Self> {
        Self::new(num_elements, 0.5)
    }

    pub fn num_elements(&self) -> usize {
        self.num_elements
    }

    pub fn element_spacing(&self) -> f64 {
        self.element_spacing
    }

    /// Phase advance per element per unit of sine-domain angle, `2*pi*d/lambda`.
    pub(crate) fn phase_rate(&self) -> f64 {
        2.0 * PI * self.element_spacing
    }
}

/// Receive (UE) and transmit (BS) arrays of one link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub rx: ArrayGeometry,
    pub tx: ArrayGeometry,
}

impl LinkGeometry {
    pub fn half_wavelength(n_rx: usize, n_tx: usize) -> Result<Self> {
        Ok(Self { rx: ArrayGeometry::half_wavelength(n_rx)?, tx: ArrayGeometry::half_wavelength(n_tx)? })
    }
}

/// Parameters of one propagation path. `aoa` and `aod` are sine-domain angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathState {
    pub gain: Complex64,
    pub aoa: f64,
    pub aod: f64,
}

impl PathState {
    pub fn new(gain: Complex64, aoa: f64, aod: f64) -> Result<Self> {
        check_angle(aoa)?;
        check_angle(aod)?;
        Ok(Self { gain, aoa, aod })
    }
}

pub(crate) fn check_angle(theta: f64) -> Result<()> {
    if theta.abs() <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("sine-domain angle {theta} outside [-1, 1]")))
    }
}

/// Array response `a(theta)`, element `k` equal to `exp(j 2 pi d k theta) / sqrt(N)`.
pub fn steering_vector(geom: &ArrayGeometry, theta: f64) -> Result<DVector<Complex64>> {
    check_angle(theta)?;
    let n = geom.num_elements;
    let scale = 1.0 / (n as f64).sqrt();
    let rate = geom.phase_rate() * theta;
    Ok(DVector::from_iterator(n, (0..n).map(|k| Complex64::from_polar(scale, rate * k as f64))))
}

/// `H = sum_l gain_l * a_rx(aoa_l) * a_tx(aod_l)^H`, an `N_rx x N_tx` matrix.
pub fn assemble_channel(paths: &[PathState], link: &LinkGeometry) -> Result<DMatrix<Complex64>> {
    if paths.is_empty() {
        return Err(Error::Domain("channel needs at least one path".into()));
    }
    let mut h = DMatrix::zeros(link.rx.num_elements(), link.tx.num_elements());
    for p in paths {
        let ar = steering_vector(&link.rx, p.aoa)?;
        let at = steering_vector(&link.tx, p.aod)?;
        h.gerc(p.gain, &ar, &at, Complex64::new(1.0, 0.0));
    }
    Ok(h)
}

/// Ordered beam directions available to the sounding controller.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    angles: Vec<f64>,
}

impl Codebook {
    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn angle(&self, index: usize) -> f64 {
        self.angles[index]
    }
}

/// Midpoints of a uniform partition of `[-1, 1]` into `size` cells.
pub fn make_codebook(size: usize) -> Result<Codebook> {
    if size < 2 {
        return Err(Error::Domain(format!("codebook size must be at least 2, got {size}")));
    }
    let n = size as f64;
    let angles = (0..size).map(|k| -1.0 + (2 * k + 1) as f64 / n).collect();
    Ok(Codebook { angles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn steering_vector_broadside_is_flat() {
        let g = ArrayGeometry::half_wavelength(4).unwrap();
        let a = steering_vector(&g, 0.0).unwrap();
        for v in a.iter() {
            assert_eq!(*v, c(0.5, 0.0));
        }
    }

    #[test]
    fn steering_vector_endfire_alternates() {
        let g = ArrayGeometry::half_wavelength(2).unwrap();
        let a = steering_vector(&g, 1.0).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!((a[0] - c(s, 0.0)).norm() < 1e-15);
        assert!((a[1] - c(-s, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn steering_vector_rejects_out_of_range() {
        let g = ArrayGeometry::half_wavelength(4).unwrap();
        assert!(matches!(steering_vector(&g, 1.0001), Err(Error::Domain(_))));
        assert!(ArrayGeometry::new(0, 0.5).is_err());
        assert!(ArrayGeometry::new(4, 0.0).is_err());
    }

    #[test]
    fn aligned_single_path_channel() {
        let link = LinkGeometry::half_wavelength(2, 2).unwrap();
        let h = assemble_channel(&[PathState::new(c(1.0, 0.0), 0.0, 0.0).unwrap()], &link).unwrap();
        for v in h.iter() {
            assert!((v - c(0.5, 0.0)).norm() < 1e-15);
        }
        assert!(assemble_channel(&[], &link).is_err());
    }

    #[test]
    fn opposite_gains_cancel() {
        let link = LinkGeometry::half_wavelength(8, 4).unwrap();
        let p1 = PathState::new(c(1.0, 0.0), 0.3, -0.2).unwrap();
        let p2 = PathState { gain: c(-1.0, 0.0), ..p1 };
        let h = assemble_channel(&[p1, p2], &link).unwrap();
        assert!(h.iter().all(|v| v.norm() < 1e-15));
    }

    #[test]
    fn unit_gain_channel_has_unit_frobenius_norm() {
        let link = LinkGeometry::half_wavelength(32, 32).unwrap();
        let p = PathState::new(Complex64::from_polar(1.0, 0.7), 0.41, -0.77).unwrap();
        let h = assemble_channel(&[p], &link).unwrap();
        assert!((h.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn channel_matches_element_formula_and_is_linear_in_gain() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let link = LinkGeometry::half_wavelength(6, 5).unwrap();
        for _ in 0..20 {
            let paths: Vec<PathState> = (0..3)
                .map(|_| PathState {
                    gain: c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                    aoa: rng.random_range(-1.0..1.0),
                    aod: rng.random_range(-1.0..1.0),
                })
                .collect();
            let h = assemble_channel(&paths, &link).unwrap();
            let norm = 1.0 / ((6 * 5) as f64).sqrt();
            for i in 0..6 {
                for j in 0..5 {
                    let mut want = c(0.0, 0.0);
                    for p in &paths {
                        let ph = PI * (i as f64 * p.aoa - j as f64 * p.aod);
                        want += p.gain * Complex64::from_polar(norm, ph);
                    }
                    assert!((h[(i, j)] - want).norm() <= 1e-12 * want.norm().max(1e-3));
                }
            }
            let doubled = PathState { gain: paths[0].gain * 2.0, ..paths[0] };
            let h1 = assemble_channel(&paths[..1], &link).unwrap();
            let h2 = assemble_channel(&[doubled], &link).unwrap();
            assert!((h2 - h1 * c(2.0, 0.0)).norm() < 1e-13);
        }
    }

    #[test]
    fn codebook_layout() {
        assert_eq!(make_codebook(2).unwrap().angles(), &[-0.5, 0.5]);
        let cb = make_codebook(64).unwrap();
        assert_eq!(cb.len(), 64);
        for w in cb.angles().windows(2) {
            assert!((w[1] - w[0] - 2.0 / 64.0).abs() < 1e-15);
        }
        for k in 0..64 {
            assert!((cb.angle(k) + cb.angle(63 - k)).abs() < 1e-15);
        }
        assert!(make_codebook(1).is_err());
    }

    proptest! {
        #[test]
        fn steering_vector_has_unit_norm(theta in -1.0f64..=1.0, n in 1usize..64) {
            let g = ArrayGeometry::half_wavelength(n).unwrap();
            let a = steering_vector(&g, theta).unwrap();
            prop_assert!((a.norm() - 1.0).abs() < 1e-12);
        }
    }
}
