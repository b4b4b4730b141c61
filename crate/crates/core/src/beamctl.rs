//! Sounding-beam selection: a Bayesian Fisher-information bound on the
//! posterior angle error, minimized by exhaustive codebook search.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::array::{Codebook, LinkGeometry, PathState};
use crate::filter::{paths_from_state, realify_matrix, state_jacobian, GaussianBelief};
use crate::measurement::{beam_gain_with_derivative, SoundingConfig};
use crate::predictor::PredictorMode;
use crate::{Error, Result};

/// Smallest noise variance used in the information matrix; a noiseless link
/// would otherwise have infinite Fisher information.
pub const NOISE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct BeamSelection {
    pub tx_indices: Vec<usize>,
    pub rx_indices: Vec<usize>,
    pub objective_value: f64,
}

impl BeamSelection {
    pub fn sounding(&self, codebook: &Codebook) -> Result<SoundingConfig> {
        SoundingConfig::new(
            self.tx_indices.iter().map(|&i| codebook.angle(i)).collect(),
            self.rx_indices.iter().map(|&i| codebook.angle(i)).collect(),
        )
    }
}

/// Everything the search needs besides the candidate beams.
#[derive(Debug, Clone, Copy)]
pub struct SearchContext<'a> {
    pub prior: &'a GaussianBelief,
    /// Gains and untracked angles of every path.
    pub known: &'a [PathState],
    pub link: &'a LinkGeometry,
    pub noise_var: f64,
    pub mode: PredictorMode,
}

/// `trace(A^-1)` of a symmetric positive definite `n x n` row-major matrix,
/// destroying `a`. `None` if `a` is not positive definite.
fn trace_inverse_spd(a: &mut [f64], n: usize) -> Option<f64> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    // trace(A^-1) = ||L^-1||_F^2; solve L x = e_c column by column.
    let mut total = 0.0;
    let mut x = vec![0.0; n];
    for c in 0..n {
        for i in 0..n {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for k in c..i {
                s -= a[i * n + k] * x[k];
            }
            x[i] = if i < c { 0.0 } else { s / a[i * n + i] };
            if i >= c {
                total += x[i] * x[i];
            }
        }
    }
    Some(total)
}

fn prior_information(prior: &GaussianBelief) -> Option<DMatrix<f64>> {
    prior.covariance.clone().cholesky().map(|c| c.inverse())
}

/// `trace((P^-1 + (2/sigma^2) Re(O^H O))^-1)` with `O` the Jacobian of the
/// stacked pilots of `soundings` at the prior mean; `+inf` if singular.
pub fn crlb_objective(ctx: &SearchContext<'_>, soundings: &[SoundingConfig]) -> f64 {
    let Some(info) = prior_information(ctx.prior) else { return f64::INFINITY };
    let Ok(paths) = paths_from_state(&ctx.prior.mean, ctx.known, ctx.mode) else { return f64::INFINITY };
    let o = realify_matrix(&state_jacobian(&paths, soundings, ctx.link, ctx.mode));
    let j = info + o.transpose() * o * (2.0 / ctx.noise_var.max(NOISE_FLOOR));
    let n = j.nrows();
    let mut buf: Vec<f64> = j.transpose().as_slice().to_vec();
    trace_inverse_spd(&mut buf, n).unwrap_or(f64::INFINITY)
}

/// Index pairs/tuples of size `m` from `0..n` in lexicographic order.
fn combinations(n: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if m == 0 || m > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..m).collect();
    loop {
        out.push(idx.clone());
        let Some(k) = (0..m).rev().find(|&k| idx[k] < n - m + k) else { return out };
        idx[k] += 1;
        for t in k + 1..m {
            idx[t] = idx[t - 1] + 1;
        }
    }
}

/// Per-pilot real Fisher contributions `Re(o^H o)` for every (Tx beam, Rx beam)
/// pair, flattened row-major `n x n`.
struct PilotInformation {
    n: usize,
    rx_count: usize,
    blocks: Vec<Vec<f64>>,
}

impl PilotInformation {
    fn new(ctx: &SearchContext<'_>, paths: &[PathState], codebook: &Codebook, tx_beams: &[usize]) -> Self {
        let p = ctx.mode.state_dim();
        let n = p * paths.len();
        let rx_count = codebook.len();
        let rx: Vec<Vec<(Complex64, Complex64)>> = paths
            .iter()
            .map(|q| codebook.angles().iter().map(|&nu| beam_gain_with_derivative(&ctx.link.rx, q.aoa - nu)).collect())
            .collect();
        let mut blocks = vec![Vec::new(); codebook.len() * rx_count];
        let mut row = vec![Complex64::new(0.0, 0.0); n];
        for &i in tx_beams {
            let mu = codebook.angle(i);
            let tx: Vec<(Complex64, Complex64)> =
                paths.iter().map(|q| beam_gain_with_derivative(&ctx.link.tx, q.aod - mu)).collect();
            for j in 0..rx_count {
                for (l, q) in paths.iter().enumerate() {
                    let (rg, rdg) = rx[l][j];
                    let (tg, tdg) = tx[l];
                    row[l * p] = q.gain * rdg * tg.conj();
                    if p == 2 {
                        row[l * p + 1] = q.gain * rg * tdg.conj();
                    }
                }
                let mut b = vec![0.0; n * n];
                for a in 0..n {
                    for c in 0..n {
                        b[a * n + c] = row[a].re * row[c].re + row[a].im * row[c].im;
                    }
                }
                blocks[i * rx_count + j] = b;
            }
        }
        Self { n, rx_count, blocks }
    }

    fn add_into(&self, acc: &mut [f64], tx: &[usize], rx: &[usize], scale: f64) {
        for &i in tx {
            for &j in rx {
                for (a, b) in acc.iter_mut().zip(&self.blocks[i * self.rx_count + j]) {
                    *a += scale * b;
                }
            }
        }
    }
}

/// Beams for one path's sounding block.
///
/// `AoaOnly`: Tx beams are the codebook entries nearest the path's known AoD
/// and the Rx set is searched. `Full`: Tx and Rx sets are searched jointly.
/// Soundings already fixed for other paths contribute their information.
/// Ties resolve to the lexicographically smallest (Tx, Rx) index tuple.
pub fn select_sounding(
    ctx: &SearchContext<'_>,
    codebook: &Codebook,
    path: usize,
    beams_per_side: (usize, usize),
    fixed: &[BeamSelection],
) -> Result<BeamSelection> {
    let (m_tx, m_rx) = beams_per_side;
    if codebook.is_empty() {
        return Err(Error::Domain("codebook is empty".into()));
    }
    if m_tx == 0 || m_rx == 0 || m_tx > codebook.len() || m_rx > codebook.len() {
        return Err(Error::Config(format!(
            "cannot pick {m_tx} Tx and {m_rx} Rx beams from a codebook of {}",
            codebook.len()
        )));
    }
    if path >= ctx.known.len() {
        return Err(Error::Dimension(format!("path {path} of {}", ctx.known.len())));
    }
    let info = prior_information(ctx.prior)
        .ok_or_else(|| Error::Numerical("prior covariance is not positive definite".into()))?;
    let paths = paths_from_state(&ctx.prior.mean, ctx.known, ctx.mode)?;
    let tx_sets = match ctx.mode {
        PredictorMode::AoaOnly => vec![nearest_beams(ctx.known[path].aod, codebook, m_tx)?],
        PredictorMode::Full => combinations(codebook.len(), m_tx),
    };
    let mut tx_beams: Vec<usize> = tx_sets.iter().flatten().copied().collect();
    tx_beams.extend(fixed.iter().flat_map(|f| f.tx_indices.iter().copied()));
    tx_beams.sort_unstable();
    tx_beams.dedup();
    let pilots = PilotInformation::new(ctx, &paths, codebook, &tx_beams);
    let n = pilots.n;
    let scale = 2.0 / ctx.noise_var.max(NOISE_FLOOR);
    let mut base: Vec<f64> = info.transpose().as_slice().to_vec();
    for f in fixed {
        pilots.add_into(&mut base, &f.tx_indices, &f.rx_indices, scale);
    }
    let rx_sets = combinations(codebook.len(), m_rx);
    let mut best: Option<BeamSelection> = None;
    let mut acc = vec![0.0; n * n];
    for tx in &tx_sets {
        for rx in &rx_sets {
            // Pilot information is additive over (Tx, Rx) pairs.
            acc.copy_from_slice(&base);
            pilots.add_into(&mut acc, tx, rx, scale);
            let value = trace_inverse_spd(&mut acc, n).unwrap_or(f64::INFINITY);
            if best.as_ref().is_none_or(|b| value < b.objective_value) {
                best = Some(BeamSelection { tx_indices: tx.clone(), rx_indices: rx.clone(), objective_value: value });
            }
        }
    }
    best.ok_or_else(|| Error::Domain("no candidate beam sets".into()))
}

/// Greedy per-path plan: path `l` is searched given the beams already chosen
/// for paths `0..l`.
pub fn plan_soundings(
    ctx: &SearchContext<'_>,
    codebook: &Codebook,
    beams_per_side: (usize, usize),
) -> Result<Vec<BeamSelection>> {
    let mut chosen: Vec<BeamSelection> = Vec::with_capacity(ctx.known.len());
    for l in 0..ctx.known.len() {
        let sel = select_sounding(ctx, codebook, l, beams_per_side, &chosen)?;
        chosen.push(sel);
    }
    Ok(chosen)
}

/// The `m` codebook indices closest to `angle`, nearest first; equal
/// distances go to the smaller index.
pub fn nearest_beams(angle: f64, codebook: &Codebook, m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > codebook.len() {
        return Err(Error::Config(format!("cannot pick {m} beams from a codebook of {}", codebook.len())));
    }
    let mut idx: Vec<usize> = (0..codebook.len()).collect();
    idx.sort_by(|&a, &b| {
        let da = (codebook.angle(a) - angle).abs();
        let db = (codebook.angle(b) - angle).abs();
        da.total_cmp(&db).then(a.cmp(&b))
    });
    idx.truncate(m);
    Ok(idx)
}
