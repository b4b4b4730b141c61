//! Sounding beams, the noiseless pilot map `q(gamma)`, its Jacobian and noisy
//! pilot reception.
//!
//! With analog beams `f_i = a_tx(mu_i)` and `w_j = a_rx(nu_j)` the pilot for
//! Tx beam `i` and Rx beam `j` collapses to a product of two geometric sums:
//!
//! ```text
//! y_(i,j) = sum_l gain_l * G_rx(aoa_l - nu_j) * conj(G_tx(aod_l - mu_i)) + n
//! G(x)    = (1/N) sum_k exp(j 2 pi d k x) = (1/N) (1 - e^{cNx}) / (1 - e^{cx}),  c = j 2 pi d
//! ```
//!
//! Pilots are stacked Tx-major, so pilot `(i, j)` sits at `i * M_rx + j`, the
//! column-major vectorization of `W^H H F`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::array::{assemble_channel, check_angle, steering_vector, ArrayGeometry, LinkGeometry, PathState};
use crate::{Error, Result};

/// Below this distance of `e^{c x}` from 1 the closed forms lose too many
/// digits to cancellation and the element sums are used instead.
pub const SINGULARITY_GUARD: f64 = 1e-3;

/// Tx and Rx sounding beam directions for one transmission cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct SoundingConfig {
    tx_angles: Vec<f64>,
    rx_angles: Vec<f64>,
}

impl SoundingConfig {
    pub fn new(tx_angles: Vec<f64>, rx_angles: Vec<f64>) -> Result<Self> {
        if tx_angles.is_empty() || rx_angles.is_empty() {
            return Err(Error::Domain("sounding needs at least one Tx and one Rx beam".into()));
        }
        for &a in tx_angles.iter().chain(&rx_angles) {
            check_angle(a)?;
        }
        Ok(Self { tx_angles, rx_angles })
    }

    pub fn tx_angles(&self) -> &[f64] {
        &self.tx_angles
    }

    pub fn rx_angles(&self) -> &[f64] {
        &self.rx_angles
    }

    /// Number of pilots, `M_tx * M_rx`.
    pub fn num_pilots(&self) -> usize {
        self.tx_angles.len() * self.rx_angles.len()
    }

    /// Position of pilot (Tx beam `i`, Rx beam `j`), both zero-based.
    pub fn pilot_index(&self, i: usize, j: usize) -> usize {
        i * self.rx_angles.len() + j
    }
}

/// Received pilots of one sounding and the per-entry complex noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotVector {
    pub values: Vec<Complex64>,
    pub noise_var: f64,
}

/// `sigma^2 = 10^(-snr_db / 10)`; `+inf` dB maps to a noiseless link.
pub fn noise_variance(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

fn direct_gain(n: usize, rate: f64, delta: f64) -> (Complex64, Complex64) {
    let inv_n = 1.0 / n as f64;
    let mut g = Complex64::new(0.0, 0.0);
    let mut dg = Complex64::new(0.0, 0.0);
    for k in 0..n {
        let e = Complex64::from_polar(inv_n, rate * k as f64 * delta);
        g += e;
        dg += e * Complex64::new(0.0, rate * k as f64);
    }
    (g, dg)
}

/// Normalized array gain `G(delta)` and its derivative with respect to `delta`.
pub fn beam_gain_with_derivative(geom: &ArrayGeometry, delta: f64) -> (Complex64, Complex64) {
    let n = geom.num_elements();
    let rate = geom.phase_rate();
    let one = Complex64::new(1.0, 0.0);
    let e1 = Complex64::from_polar(1.0, rate * delta);
    let denom = one - e1;
    if denom.norm() < SINGULARITY_GUARD {
        return direct_gain(n, rate, delta);
    }
    let nf = n as f64;
    let c = Complex64::new(0.0, rate);
    let en = Complex64::from_polar(1.0, rate * nf * delta);
    let en1 = en * e1;
    let g = (one - en) / denom / nf;
    let num = c * e1 - c * nf * en + c * (nf - 1.0) * en1;
    let dg = num / (denom * denom) / nf;
    (g, dg)
}

pub fn beam_gain(geom: &ArrayGeometry, delta: f64) -> Complex64 {
    beam_gain_with_derivative(geom, delta).0
}

/// Noiseless pilots `q(gamma)` through the geometric-sum closed form.
pub fn predicted_measurement(paths: &[PathState], sounding: &SoundingConfig, link: &LinkGeometry) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); sounding.num_pilots()];
    for p in paths {
        for (i, &mu) in sounding.tx_angles.iter().enumerate() {
            let tx = beam_gain(&link.tx, p.aod - mu).conj();
            for (j, &nu) in sounding.rx_angles.iter().enumerate() {
                let rx = beam_gain(&link.rx, p.aoa - nu);
                out[sounding.pilot_index(i, j)] += p.gain * rx * tx;
            }
        }
    }
    out
}

/// `vec(W^H H F)` from explicit matrices; the closed form must agree with it.
pub fn predicted_measurement_matrix(
    paths: &[PathState],
    sounding: &SoundingConfig,
    link: &LinkGeometry,
) -> Result<Vec<Complex64>> {
    let h = assemble_channel(paths, link)?;
    Ok(project_channel(&h, sounding, link)?.as_slice().to_vec())
}

fn beam_matrix(geom: &ArrayGeometry, angles: &[f64]) -> Result<DMatrix<Complex64>> {
    let cols = angles.iter().map(|&a| steering_vector(geom, a)).collect::<Result<Vec<DVector<Complex64>>>>()?;
    Ok(DMatrix::from_columns(&cols))
}

/// `vec(W^H H F)` for an arbitrary channel matrix.
pub fn project_channel(
    h: &DMatrix<Complex64>,
    sounding: &SoundingConfig,
    link: &LinkGeometry,
) -> Result<DVector<Complex64>> {
    if h.nrows() != link.rx.num_elements() || h.ncols() != link.tx.num_elements() {
        return Err(Error::Dimension(format!(
            "channel is {}x{}, link expects {}x{}",
            h.nrows(),
            h.ncols(),
            link.rx.num_elements(),
            link.tx.num_elements()
        )));
    }
    let w = beam_matrix(&link.rx, &sounding.rx_angles)?;
    let f = beam_matrix(&link.tx, &sounding.tx_angles)?;
    let y = w.adjoint() * h * f;
    // nalgebra storage is column-major, which is exactly vec(.)
    Ok(DVector::from_column_slice(y.as_slice()))
}

/// Jacobian of `q` with columns `[d/d aod_1, d/d aoa_1, ..., d/d aod_L, d/d aoa_L]`.
pub fn jacobian(paths: &[PathState], sounding: &SoundingConfig, link: &LinkGeometry) -> DMatrix<Complex64> {
    let mut o = DMatrix::zeros(sounding.num_pilots(), 2 * paths.len());
    for (l, p) in paths.iter().enumerate() {
        for (i, &mu) in sounding.tx_angles.iter().enumerate() {
            let (tg, tdg) = beam_gain_with_derivative(&link.tx, p.aod - mu);
            for (j, &nu) in sounding.rx_angles.iter().enumerate() {
                let (rg, rdg) = beam_gain_with_derivative(&link.rx, p.aoa - nu);
                let row = sounding.pilot_index(i, j);
                o[(row, 2 * l)] = p.gain * rg * tdg.conj();
                o[(row, 2 * l + 1)] = p.gain * rdg * tg.conj();
            }
        }
    }
    o
}

/// Circularly-symmetric complex Gaussian sample with variance `var`.
pub fn complex_noise<R: Rng + ?Sized>(var: f64, rng: &mut R) -> Complex64 {
    if var == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// Sounds channel `h` with unit pilots and adds noise at `snr_db`.
pub fn receive<R: Rng + ?Sized>(
    h: &DMatrix<Complex64>,
    sounding: &SoundingConfig,
    link: &LinkGeometry,
    snr_db: f64,
    rng: &mut R,
) -> Result<PilotVector> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::Domain(format!("unusable SNR {snr_db} dB")));
    }
    let noise_var = noise_variance(snr_db);
    let clean = project_channel(h, sounding, link)?;
    let values = clean.iter().map(|&v| v + complex_noise(noise_var, rng)).collect();
    Ok(PilotVector { values, noise_var })
}
