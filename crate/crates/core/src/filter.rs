//! Gaussian beliefs over tracked angles, the unscented prediction step
//! through a learned predictor, and the linearized measurement update.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::array::{LinkGeometry, PathState};
use crate::error::dim_check;
use crate::measurement::{jacobian, predicted_measurement, PilotVector, SoundingConfig};
use crate::predictor::{InputWindow, PredictorMode, StatePredictor};
use crate::{Error, Result};

/// Spread of the sigma points.
pub const UT_ALPHA: f64 = 1e-3;
/// Prior-knowledge term of the zeroth covariance weight (2 is optimal for Gaussians).
pub const UT_BETA: f64 = 2.0;
/// Diagonal floor added to every predicted covariance.
pub const JITTER: f64 = 1e-8;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(Error::Dimension(format!(
                "covariance is {}x{} for a mean of length {n}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        let scale = covariance.amax().max(1.0);
        if (&covariance - covariance.transpose()).amax() > SYMMETRY_TOL * scale {
            return Err(Error::Domain("covariance is not symmetric".into()));
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("belief contains non-finite values".into()));
        }
        Ok(Self { mean, covariance })
    }

    /// Independent components with the given variances.
    pub fn diagonal(mean: &[f64], variances: &[f64]) -> Result<Self> {
        dim_check("variance vector", mean.len(), variances.len())?;
        Self::new(DVector::from_column_slice(mean), DMatrix::from_diagonal(&DVector::from_column_slice(variances)))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Stacks independent beliefs into one block-diagonal joint belief.
    pub fn stack(parts: &[GaussianBelief]) -> Self {
        let n: usize = parts.iter().map(Self::dim).sum();
        let mut mean = DVector::zeros(n);
        let mut cov = DMatrix::zeros(n, n);
        let mut at = 0;
        for p in parts {
            let d = p.dim();
            mean.rows_mut(at, d).copy_from(&p.mean);
            cov.view_mut((at, at), (d, d)).copy_from(&p.covariance);
            at += d;
        }
        Self { mean, covariance: cov }
    }

    /// Splits into consecutive blocks of size `block`, dropping cross terms.
    pub fn split(&self, block: usize) -> Result<Vec<GaussianBelief>> {
        if block == 0 || !self.dim().is_multiple_of(block) {
            return Err(Error::Dimension(format!("cannot split dimension {} into blocks of {block}", self.dim())));
        }
        Ok((0..self.dim() / block)
            .map(|k| GaussianBelief {
                mean: self.mean.rows(k * block, block).into_owned(),
                covariance: self.covariance.view((k * block, k * block), (block, block)).into_owned(),
            })
            .collect())
    }

    fn symmetrize(&mut self) {
        self.covariance = (&self.covariance + self.covariance.transpose()) * 0.5;
    }
}

/// `2P + 1` sigma points with their mean and covariance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSet {
    pub points: Vec<DVector<f64>>,
    pub mean_weights: Vec<f64>,
    pub cov_weights: Vec<f64>,
}

impl SigmaSet {
    /// Sum of the mean weights with Neumaier compensation. The weights reach
    /// magnitude `1 / alpha^2`, so naive left-to-right summation loses ~1e-10.
    pub fn mean_weight_sum(&self) -> f64 {
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for &w in &self.mean_weights {
            let t = sum + w;
            comp += if sum.abs() >= w.abs() { (sum - t) + w } else { (w - t) + sum };
            sum = t;
        }
        sum + comp
    }
}

/// Symmetric square root of a PSD matrix; tiny negative eigenvalues are
/// treated as zero, clearly negative ones are an error.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let tol = 1e-9 * scale;
    if let Some(bad) = eig.eigenvalues.iter().find(|&&v| v < -tol) {
        return Err(Error::Numerical(format!("covariance is not positive semidefinite (eigenvalue {bad})")));
    }
    let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose())
}

pub fn sigma_points(belief: &GaussianBelief) -> Result<SigmaSet> {
    let p = belief.dim();
    if p == 0 {
        return Err(Error::Dimension("belief has dimension zero".into()));
    }
    let pf = p as f64;
    let lambda = UT_ALPHA * UT_ALPHA * pf - pf;
    let spread = pf + lambda;
    let root = psd_sqrt(&(&belief.covariance * spread))?;
    let mut points = Vec::with_capacity(2 * p + 1);
    points.push(belief.mean.clone());
    for i in 0..p {
        points.push(&belief.mean + root.row(i).transpose());
    }
    for i in 0..p {
        points.push(&belief.mean - root.row(i).transpose());
    }
    let wi = 1.0 / (2.0 * spread);
    // Written as 1 - sum(others) so the weights sum to one exactly.
    let w0 = 1.0 - 2.0 * pf * wi;
    let mut mean_weights = vec![wi; 2 * p + 1];
    mean_weights[0] = w0;
    let mut cov_weights = mean_weights.clone();
    cov_weights[0] = w0 + (1.0 - UT_ALPHA * UT_ALPHA + UT_BETA);
    Ok(SigmaSet { points, mean_weights, cov_weights })
}

/// Weighted mean and covariance of transformed sigma points, accumulated
/// relative to the transformed centre point to avoid cancellation.
pub fn reconstruct(set: &SigmaSet, outputs: &[DVector<f64>]) -> Result<GaussianBelief> {
    dim_check("transformed sigma points", set.points.len(), outputs.len())?;
    let centre = &outputs[0];
    let d = centre.len();
    let offsets: Vec<DVector<f64>> = outputs.iter().map(|y| y - centre).collect();
    let mut shift = DVector::zeros(d);
    for (w, o) in set.mean_weights.iter().zip(&offsets).skip(1) {
        shift += o * *w;
    }
    let mut cov = DMatrix::zeros(d, d);
    for (w, o) in set.cov_weights.iter().zip(&offsets) {
        let e = o - &shift;
        cov += &e * e.transpose() * *w;
    }
    let mut b = GaussianBelief { mean: centre + shift, covariance: cov };
    b.symmetrize();
    Ok(b)
}

pub fn unscented_transform<F>(belief: &GaussianBelief, mut f: F) -> Result<GaussianBelief>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let set = sigma_points(belief)?;
    let outputs = set.points.iter().map(&mut f).collect::<Result<Vec<_>>>()?;
    reconstruct(&set, &outputs)
}

/// Propagates one path's belief through the predictor.
///
/// Sigma points replace the latest estimate of `window`; older estimates and
/// sensor blocks are held fixed. The model's residual variance and the jitter
/// floor are added to the predicted covariance.
pub fn prediction_update<P: StatePredictor + ?Sized>(
    belief: &GaussianBelief,
    window: &InputWindow,
    model: &P,
) -> Result<GaussianBelief> {
    dim_check("belief dimension", model.state_dim(), belief.dim())?;
    if window.past_estimates.is_empty() {
        return Err(Error::Dimension("input window is empty".into()));
    }
    let mut scratch = window.clone();
    let last = scratch.past_estimates.len() - 1;
    let mut pred = unscented_transform(belief, |x| {
        scratch.past_estimates[last] = x.as_slice().to_vec();
        Ok(DVector::from_vec(model.predict(&scratch)?))
    })?;
    for (k, r) in model.residual_var().iter().enumerate() {
        pred.covariance[(k, k)] += r + JITTER;
    }
    Ok(pred)
}

/// Posterior and whether the innovation covariance had to be regularized.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    pub posterior: GaussianBelief,
    pub regularized: bool,
}

/// Kalman update for the real linear model `y = h x + n`, `n ~ N(0, noise_var I)`,
/// given the innovation `y - h mean`. Covariance uses the Joseph form.
pub fn linear_update(
    prior: &GaussianBelief,
    innovation: &DVector<f64>,
    h: &DMatrix<f64>,
    noise_var: f64,
) -> Result<UpdateOutcome> {
    let n = prior.dim();
    let m = innovation.len();
    if h.nrows() != m || h.ncols() != n {
        return Err(Error::Dimension(format!("observation matrix is {}x{}, expected {m}x{n}", h.nrows(), h.ncols())));
    }
    let ph_t = &prior.covariance * h.transpose();
    let mut s = h * &ph_t;
    for k in 0..m {
        s[(k, k)] += noise_var;
    }
    let mut regularized = false;
    let chol = match s.clone().cholesky() {
        Some(c) => c,
        None => {
            regularized = true;
            let ridge = 1e-12 * (s.trace() / m as f64).max(1e-300) + f64::MIN_POSITIVE;
            let mut r = s;
            for k in 0..m {
                r[(k, k)] += ridge;
            }
            r.cholesky().ok_or_else(|| Error::Numerical("innovation covariance is not positive definite".into()))?
        }
    };
    // K = P H^T S^-1, computed as (S^-1 H P)^T.
    let gain = chol.solve(&ph_t.transpose()).transpose();
    let mean = &prior.mean + &gain * innovation;
    let mut i_kh = -(&gain * h);
    for k in 0..n {
        i_kh[(k, k)] += 1.0;
    }
    let cov = &i_kh * &prior.covariance * i_kh.transpose() + &gain * gain.transpose() * noise_var;
    let mut posterior = GaussianBelief { mean, covariance: cov };
    posterior.symmetrize();
    if posterior.mean.iter().chain(posterior.covariance.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("measurement update produced non-finite values".into()));
    }
    Ok(UpdateOutcome { posterior, regularized })
}

/// Paths implied by a joint state: angles from the state (clamped to
/// `[-1, 1]`), gains and untracked angles from `known`.
pub fn paths_from_state(state: &DVector<f64>, known: &[PathState], mode: PredictorMode) -> Result<Vec<PathState>> {
    let p = mode.state_dim();
    dim_check("joint state", p * known.len(), state.len())?;
    Ok(known
        .iter()
        .enumerate()
        .map(|(l, k)| PathState {
            gain: k.gain,
            aoa: state[l * p].clamp(-1.0, 1.0),
            aod: if p == 2 { state[l * p + 1].clamp(-1.0, 1.0) } else { k.aod },
        })
        .collect())
}

/// Noiseless pilots of every sounding block, concatenated.
pub fn stacked_measurement(paths: &[PathState], soundings: &[SoundingConfig], link: &LinkGeometry) -> Vec<Complex64> {
    soundings.iter().flat_map(|s| predicted_measurement(paths, s, link)).collect()
}

/// Jacobian of the stacked pilots with respect to the joint state, whose
/// per-path layout is `[aoa]` or `[aoa, aod]`.
pub fn state_jacobian(
    paths: &[PathState],
    soundings: &[SoundingConfig],
    link: &LinkGeometry,
    mode: PredictorMode,
) -> DMatrix<Complex64> {
    let p = mode.state_dim();
    let rows: usize = soundings.iter().map(SoundingConfig::num_pilots).sum();
    let mut out = DMatrix::zeros(rows, p * paths.len());
    let mut at = 0;
    for s in soundings {
        let o = jacobian(paths, s, link);
        for l in 0..paths.len() {
            out.view_mut((at, l * p), (o.nrows(), 1)).copy_from(&o.column(2 * l + 1));
            if p == 2 {
                out.view_mut((at, l * p + 1), (o.nrows(), 1)).copy_from(&o.column(2 * l));
            }
        }
        at += o.nrows();
    }
    out
}

/// Stacks a complex system `[Re; Im]`.
pub(crate) fn realify_matrix(m: &DMatrix<Complex64>) -> DMatrix<f64> {
    let (r, c) = m.shape();
    DMatrix::from_fn(2 * r, c, |i, j| if i < r { m[(i, j)].re } else { m[(i - r, j)].im })
}

pub(crate) fn realify_vector(v: &[Complex64]) -> DVector<f64> {
    let n = v.len();
    DVector::from_fn(2 * n, |i, _| if i < n { v[i].re } else { v[i - n].im })
}

/// Joint EKF update over all paths from the stacked pilots of `soundings`.
///
/// The complex residual is split into real and imaginary parts, each with
/// variance `noise_var / 2`; the Jacobian is evaluated at the prior mean.
pub fn measurement_update(
    prior: &GaussianBelief,
    pilots: &PilotVector,
    soundings: &[SoundingConfig],
    known: &[PathState],
    link: &LinkGeometry,
    mode: PredictorMode,
) -> Result<UpdateOutcome> {
    let paths = paths_from_state(&prior.mean, known, mode)?;
    let q = stacked_measurement(&paths, soundings, link);
    dim_check("pilot vector", q.len(), pilots.values.len())?;
    let residual: Vec<Complex64> = pilots.values.iter().zip(&q).map(|(y, m)| y - m).collect();
    let h = realify_matrix(&state_jacobian(&paths, soundings, link, mode));
    linear_update(prior, &realify_vector(&residual), &h, pilots.noise_var / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Affine {
        a: DMatrix<f64>,
        b: DVector<f64>,
    }

    impl StatePredictor for Affine {
        fn state_dim(&self) -> usize {
            self.b.len()
        }
        fn window_len(&self) -> usize {
            1
        }
        fn predict(&self, w: &InputWindow) -> Result<Vec<f64>> {
            let x = DVector::from_column_slice(w.latest_estimate());
            Ok((&self.a * x + &self.b).as_slice().to_vec())
        }
    }

    fn window_at(x: &[f64]) -> InputWindow {
        InputWindow { past_estimates: vec![x.to_vec()], sensor_blocks: vec![vec![]], context: vec![] }
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.1..0.1));
        &a * a.transpose() + DMatrix::identity(n, n) * 1e-4
    }

    #[test]
    fn zero_covariance_collapses_sigma_points() {
        let b = GaussianBelief::diagonal(&[0.3, -0.2], &[0.0, 0.0]).unwrap();
        let s = sigma_points(&b).unwrap();
        assert_eq!(s.points.len(), 5);
        assert!(s.points.iter().all(|p| p == &b.mean));
        assert!((s.mean_weight_sum() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn sigma_set_reconstructs_its_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..=4 {
            let mean = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let b = GaussianBelief::new(mean, random_spd(&mut rng, n)).unwrap();
            let s = sigma_points(&b).unwrap();
            assert_eq!(s.points[0], b.mean);
            assert!((s.mean_weight_sum() - 1.0).abs() < 1e-14, "{n}");
            let r = reconstruct(&s, &s.points).unwrap();
            assert!((&r.mean - &b.mean).amax() < 1e-10);
            // The zeroth covariance weight carries 1 - alpha^2 + beta extra, which
            // vanishes because its offset from the mean is zero.
            assert!((&r.covariance - &b.covariance).amax() < 1e-10);
        }
    }

    #[test]
    fn affine_models_are_propagated_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [1, 2] {
            let model = Affine {
                a: DMatrix::from_fn(n, n, |_, _| rng.random_range(-2.0..2.0)),
                b: DVector::from_fn(n, |_, _| rng.random_range(-0.1..0.1)),
            };
            let mean = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
            let b = GaussianBelief::new(mean, random_spd(&mut rng, n)).unwrap();
            let pred = prediction_update(&b, &window_at(b.mean.as_slice()), &model).unwrap();
            let want_mean = &model.a * &b.mean + &model.b;
            let want_cov = &model.a * &b.covariance * model.a.transpose() + DMatrix::identity(n, n) * JITTER;
            assert!((&pred.mean - want_mean).amax() < 1e-8);
            assert!((&pred.covariance - want_cov).amax() < 1e-8);
        }
    }

    #[test]
    fn identity_model_keeps_prior_plus_jitter() {
        let model = Affine { a: DMatrix::identity(1, 1), b: DVector::zeros(1) };
        let b = GaussianBelief::diagonal(&[0.4], &[2.5e-3]).unwrap();
        let pred = prediction_update(&b, &window_at(&[0.4]), &model).unwrap();
        assert!((pred.mean[0] - 0.4).abs() < 1e-15);
        assert!((pred.covariance[(0, 0)] - 2.5e-3 - JITTER).abs() < 1e-15);
        let z = GaussianBelief::diagonal(&[0.4], &[0.0]).unwrap();
        let shifted = Affine { a: DMatrix::from_element(1, 1, 3.0), b: DVector::from_element(1, 0.1) };
        let pz = prediction_update(&z, &window_at(&[0.4]), &shifted).unwrap();
        assert_eq!(pz.covariance[(0, 0)], JITTER);
    }

    #[test]
    fn non_psd_covariance_is_rejected() {
        let b = GaussianBelief::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).unwrap();
        assert!(matches!(sigma_points(&b), Err(Error::Numerical(_))));
    }

    #[test]
    fn zero_jacobian_leaves_prior_unchanged() {
        let prior = GaussianBelief::diagonal(&[0.1, 0.2], &[1e-3, 2e-3]).unwrap();
        let out = linear_update(&prior, &DVector::from_element(4, 0.7), &DMatrix::zeros(4, 2), 0.05).unwrap();
        assert_eq!(out.posterior, prior);
        assert!(!out.regularized);
    }

    #[test]
    fn scalar_kalman_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (m, p) = (rng.random_range(-1.0..1.0), rng.random_range(1e-4..1.0));
            let (h, r) = (rng.random_range(-3.0..3.0), rng.random_range(1e-3..1.0));
            let y = rng.random_range(-2.0..2.0);
            let prior = GaussianBelief::diagonal(&[m], &[p]).unwrap();
            let out = linear_update(&prior, &DVector::from_element(1, y - h * m), &DMatrix::from_element(1, 1, h), r)
                .unwrap();
            let k = p * h / (h * h * p + r);
            assert!((out.posterior.mean[0] - (m + k * (y - h * m))).abs() < 1e-12);
            assert!((out.posterior.covariance[(0, 0)] - (1.0 - k * h) * p).abs() < 1e-12);
        }
    }

    #[test]
    fn repeated_measurements_shrink_variance() {
        let mut b = GaussianBelief::diagonal(&[0.0], &[1.0]).unwrap();
        let h = DMatrix::from_element(1, 1, 0.8);
        for _ in 0..20 {
            let next = linear_update(&b, &DVector::from_element(1, 0.3), &h, 0.5).unwrap().posterior;
            assert!(next.covariance[(0, 0)] < b.covariance[(0, 0)]);
            b = next;
        }
    }

    #[test]
    fn noiseless_rank_deficient_update_is_flagged() {
        let prior = GaussianBelief::diagonal(&[0.0], &[1.0]).unwrap();
        let h = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let out = linear_update(&prior, &DVector::from_column_slice(&[0.5, 0.5]), &h, 0.0).unwrap();
        assert!(out.regularized);
        assert!((out.posterior.mean[0] - 0.5).abs() < 1e-9);
        assert!(out.posterior.covariance[(0, 0)] < 1e-9);
    }

    #[test]
    fn stacking_and_splitting_round_trip() {
        let a = GaussianBelief::diagonal(&[0.1], &[1e-3]).unwrap();
        let b = GaussianBelief::diagonal(&[-0.4], &[4e-3]).unwrap();
        let j = GaussianBelief::stack(&[a.clone(), b.clone()]);
        assert_eq!(j.covariance[(0, 1)], 0.0);
        assert_eq!(j.split(1).unwrap(), vec![a, b]);
        assert!(j.split(3).is_err());
    }

    #[test]
    fn state_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let link = LinkGeometry::half_wavelength(16, 16).unwrap();
        let known: Vec<PathState> = (0..2)
            .map(|_| PathState {
                gain: Complex64::from_polar(1.0, rng.random_range(-3.0..3.0)),
                aoa: rng.random_range(-0.7..0.7),
                aod: rng.random_range(-0.7..0.7),
            })
            .collect();
        let soundings = vec![
            SoundingConfig::new(vec![-0.2, 0.1], vec![0.3, 0.35]).unwrap(),
            SoundingConfig::new(vec![0.5], vec![-0.1, 0.0, 0.1]).unwrap(),
        ];
        for mode in [PredictorMode::AoaOnly, PredictorMode::Full] {
            let p = mode.state_dim();
            let state = DVector::from_fn(p * 2, |i, _| if i % p == 0 { known[i / p].aoa } else { known[i / p].aod });
            let paths = paths_from_state(&state, &known, mode).unwrap();
            let j = state_jacobian(&paths, &soundings, &link, mode);
            let step = 1e-6;
            for c in 0..state.len() {
                let mut plus = state.clone();
                plus[c] += step;
                let mut minus = state.clone();
                minus[c] -= step;
                let qp = stacked_measurement(&paths_from_state(&plus, &known, mode).unwrap(), &soundings, &link);
                let qm = stacked_measurement(&paths_from_state(&minus, &known, mode).unwrap(), &soundings, &link);
                for r in 0..qp.len() {
                    let fd = (qp[r] - qm[r]) / (2.0 * step);
                    assert!((fd - j[(r, c)]).norm() < 1e-6 * j.column(c).camax().max(1.0));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn update_never_grows_trace(seed in 0u64..500, noise in 1e-4f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 3;
            let mean = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let prior = GaussianBelief::new(mean, random_spd(&mut rng, n)).unwrap();
            let h = DMatrix::from_fn(6, n, |_, _| rng.random_range(-5.0..5.0));
            let innov = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
            let post = linear_update(&prior, &innov, &h, noise).unwrap().posterior;
            prop_assert!(post.covariance.trace() <= prior.covariance.trace() + 1e-15);
            prop_assert!((&post.covariance - post.covariance.transpose()).amax() < 1e-12);
        }
    }
}
