//! Per-cycle tracking policies behind one step interface: the learned
//! predictor with unscented propagation, the random-walk EKF, LMS and a genie.

use std::collections::VecDeque;

use nalgebra::DVector;
use num_complex::Complex64;

use crate::array::{Codebook, LinkGeometry, PathState};
use crate::beamctl::{nearest_beams, plan_soundings, BeamSelection, SearchContext};
use crate::error::dim_check;
use crate::filter::{
    measurement_update, paths_from_state, prediction_update, stacked_measurement, state_jacobian, GaussianBelief,
    UpdateOutcome,
};
use crate::measurement::{PilotVector, SoundingConfig};
use crate::mobility::{generate_trajectory, MobilityParams};
use crate::predictor::{InputWindow, PredictorMode, StatePredictor};
use crate::rng::{label, stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    ProposedCsiImu,
    ProposedCsi,
    Ekf,
    Lms,
    Genie,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::ProposedCsiImu, Variant::ProposedCsi, Variant::Ekf, Variant::Lms, Variant::Genie];

    pub fn name(self) -> &'static str {
        match self {
            Variant::ProposedCsiImu => "proposed_csi_imu",
            Variant::ProposedCsi => "proposed_csi",
            Variant::Ekf => "ekf",
            Variant::Lms => "lms",
            Variant::Genie => "genie",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown tracker variant `{s}`")))
    }

    pub fn uses_model(self) -> bool {
        matches!(self, Variant::ProposedCsiImu | Variant::ProposedCsi)
    }
}

/// Pilot access for one cycle; implemented by the simulator around the true channel.
pub trait Sounder {
    fn sound(&mut self, soundings: &[SoundingConfig]) -> Result<PilotVector>;
}

/// What the tracker learns from the environment at one beam cycle.
#[derive(Debug, Clone, Copy)]
pub struct CycleInput<'a> {
    /// Per-path sensor block for the interval ending at this cycle.
    pub sensor_blocks: &'a [Vec<f64>],
    /// Pilot noise variance, used for beam selection.
    pub noise_var: f64,
    /// Ground truth; read only by the genie.
    pub truth: &'a [PathState],
}

/// Steps of one cycle, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Prediction,
    Selection,
    Reception,
    Update,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub stages: Vec<Stage>,
    pub selections: Vec<BeamSelection>,
    /// Predicted per-path means before the measurement update.
    pub predicted: Vec<Vec<f64>>,
    /// Whether the predictor (rather than the random-walk warm-up) ran.
    pub used_predictor: bool,
    pub regularized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerParams {
    pub mode: PredictorMode,
    pub link: LinkGeometry,
    pub codebook: Codebook,
    pub beams_per_side: (usize, usize),
    /// Random-walk process noise per state component (EKF and warm-up).
    pub process_noise: Vec<f64>,
    pub lms_step: f64,
}

/// One tracker instance. Holds per-path beliefs and the window history;
/// history entry `i` pairs an estimate with the sensor block of the
/// interval that follows it.
pub struct Tracker<'m> {
    pub variant: Variant,
    pub params: TrackerParams,
    /// Gains of all paths; AoDs are used when they are not tracked.
    pub known: Vec<PathState>,
    pub beliefs: Vec<GaussianBelief>,
    estimates: Vec<VecDeque<Vec<f64>>>,
    blocks: Vec<VecDeque<Vec<f64>>>,
    model: Option<&'m dyn StatePredictor>,
}

impl<'m> Tracker<'m> {
    pub fn new(
        variant: Variant,
        params: TrackerParams,
        known: Vec<PathState>,
        initial: Vec<GaussianBelief>,
        model: Option<&'m dyn StatePredictor>,
    ) -> Result<Self> {
        let p = params.mode.state_dim();
        dim_check("initial beliefs", known.len(), initial.len())?;
        for b in &initial {
            dim_check("belief dimension", p, b.dim())?;
        }
        dim_check("process noise", p, params.process_noise.len())?;
        if variant.uses_model() {
            let m = model.ok_or_else(|| Error::Config(format!("variant {} needs a predictor", variant.name())))?;
            dim_check("predictor state dimension", p, m.state_dim())?;
        }
        let estimates = initial.iter().map(|b| VecDeque::from([b.mean.as_slice().to_vec()])).collect();
        let blocks = initial.iter().map(|_| VecDeque::new()).collect();
        Ok(Self { variant, params, known, beliefs: initial, estimates, blocks, model })
    }

    pub fn estimates(&self) -> Vec<Vec<f64>> {
        self.beliefs.iter().map(|b| b.mean.as_slice().to_vec()).collect()
    }

    /// Current estimate as paths (gains known).
    pub fn estimated_paths(&self) -> Result<Vec<PathState>> {
        paths_from_state(&GaussianBelief::stack(&self.beliefs).mean, &self.known, self.params.mode)
    }

    pub fn step(&mut self, input: &CycleInput<'_>, sounder: &mut dyn Sounder) -> Result<CycleRecord> {
        dim_check("sensor blocks", self.known.len(), input.sensor_blocks.len())?;
        match self.variant {
            Variant::ProposedCsiImu | Variant::ProposedCsi => proposed_step(self, input, sounder),
            Variant::Ekf => ekf_step(self, input, sounder),
            Variant::Lms => lms_step(self, input, sounder),
            Variant::Genie => genie_step(self, input),
        }
    }

    fn window_len(&self) -> usize {
        self.model.map_or(1, |m| m.window_len())
    }

    fn push_blocks(&mut self, input: &CycleInput<'_>) {
        let zero = self.variant == Variant::ProposedCsi;
        for (q, b) in self.blocks.iter_mut().zip(input.sensor_blocks) {
            q.push_back(if zero { vec![0.0; b.len()] } else { b.clone() });
        }
    }

    fn record_posterior(&mut self) {
        let keep = self.window_len();
        for (l, b) in self.beliefs.iter_mut().enumerate() {
            for v in b.mean.iter_mut() {
                *v = v.clamp(-1.0, 1.0);
            }
            let e = &mut self.estimates[l];
            e.push_back(b.mean.as_slice().to_vec());
            while e.len() > keep {
                e.pop_front();
            }
            let s = &mut self.blocks[l];
            while s.len() > keep {
                s.pop_front();
            }
        }
    }

    /// Window for path `l` once `window_len` estimate/block pairs exist.
    fn window(&self, l: usize) -> Option<InputWindow> {
        let d = self.window_len();
        let (e, s) = (&self.estimates[l], &self.blocks[l]);
        if e.len() < d || s.len() < d {
            return None;
        }
        Some(InputWindow {
            past_estimates: e.iter().skip(e.len() - d).cloned().collect(),
            sensor_blocks: s.iter().skip(s.len() - d).cloned().collect(),
            context: vec![],
        })
    }

    fn random_walk_prediction(&self, b: &GaussianBelief) -> GaussianBelief {
        let mut out = b.clone();
        for (k, v) in self.params.process_noise.iter().enumerate() {
            out.covariance[(k, k)] += v;
        }
        out
    }

    /// CRLB beam search, reception and the joint update shared by every
    /// Bayesian variant.
    fn select_receive_update(
        &mut self,
        predicted: Vec<GaussianBelief>,
        input: &CycleInput<'_>,
        sounder: &mut dyn Sounder,
        record: &mut CycleRecord,
    ) -> Result<()> {
        record.predicted = predicted.iter().map(|b| b.mean.as_slice().to_vec()).collect();
        let joint = GaussianBelief::stack(&predicted);
        let ctx = SearchContext {
            prior: &joint,
            known: &self.known,
            link: &self.params.link,
            noise_var: input.noise_var,
            mode: self.params.mode,
        };
        let selections = plan_soundings(&ctx, &self.params.codebook, self.params.beams_per_side)?;
        record.stages.push(Stage::Selection);
        let soundings = selections.iter().map(|s| s.sounding(&self.params.codebook)).collect::<Result<Vec<_>>>()?;
        let pilots = sounder.sound(&soundings)?;
        record.stages.push(Stage::Reception);
        let UpdateOutcome { posterior, regularized } =
            measurement_update(&joint, &pilots, &soundings, &self.known, &self.params.link, self.params.mode)?;
        record.stages.push(Stage::Update);
        record.regularized = regularized;
        record.selections = selections;
        self.beliefs = posterior.split(self.params.mode.state_dim())?;
        self.record_posterior();
        Ok(())
    }
}

fn empty_record() -> CycleRecord {
    CycleRecord {
        stages: Vec::new(),
        selections: Vec::new(),
        predicted: Vec::new(),
        used_predictor: false,
        regularized: false,
    }
}

/// Learned prediction through the unscented transform, then CRLB beam
/// selection and the joint update. Until the history holds a full window the
/// random-walk prediction is used instead.
pub fn proposed_step(
    tracker: &mut Tracker<'_>,
    input: &CycleInput<'_>,
    sounder: &mut dyn Sounder,
) -> Result<CycleRecord> {
    let model = tracker.model.ok_or_else(|| Error::Config("proposed tracker has no predictor".into()))?;
    tracker.push_blocks(input);
    let mut record = empty_record();
    let mut predicted = Vec::with_capacity(tracker.beliefs.len());
    for l in 0..tracker.beliefs.len() {
        let b = &tracker.beliefs[l];
        let next = match tracker.window(l) {
            Some(w) => {
                record.used_predictor = true;
                let mut p = prediction_update(b, &w, model)?;
                p.mean.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
                p
            }
            None => tracker.random_walk_prediction(b),
        };
        predicted.push(next);
    }
    record.stages.push(Stage::Prediction);
    tracker.select_receive_update(predicted, input, sounder, &mut record)?;
    Ok(record)
}

/// Random-walk prediction `P + V` with identity transition, then the same
/// selection and update as the proposed tracker.
pub fn ekf_step(tracker: &mut Tracker<'_>, input: &CycleInput<'_>, sounder: &mut dyn Sounder) -> Result<CycleRecord> {
    tracker.push_blocks(input);
    let mut record = empty_record();
    let predicted = tracker.beliefs.iter().map(|b| tracker.random_walk_prediction(b)).collect();
    record.stages.push(Stage::Prediction);
    tracker.select_receive_update(predicted, input, sounder, &mut record)?;
    Ok(record)
}

/// Rx beams nearest the previous estimate, then one stochastic-gradient step
/// `theta += mu Re(o^H e)` per tracked angle.
pub fn lms_step(tracker: &mut Tracker<'_>, input: &CycleInput<'_>, sounder: &mut dyn Sounder) -> Result<CycleRecord> {
    tracker.push_blocks(input);
    let mut record = empty_record();
    record.stages.push(Stage::Prediction);
    let cb = &tracker.params.codebook;
    let (m_tx, m_rx) = tracker.params.beams_per_side;
    let paths = tracker.estimated_paths()?;
    record.predicted = tracker.estimates();
    let mut selections = Vec::with_capacity(paths.len());
    for p in &paths {
        selections.push(BeamSelection {
            tx_indices: nearest_beams(p.aod, cb, m_tx)?,
            rx_indices: nearest_beams(p.aoa, cb, m_rx)?,
            objective_value: f64::NAN,
        });
    }
    record.stages.push(Stage::Selection);
    let soundings = selections.iter().map(|s| s.sounding(cb)).collect::<Result<Vec<_>>>()?;
    let pilots = sounder.sound(&soundings)?;
    record.stages.push(Stage::Reception);
    let q = stacked_measurement(&paths, &soundings, &tracker.params.link);
    dim_check("pilot vector", q.len(), pilots.values.len())?;
    let residual: Vec<Complex64> = pilots.values.iter().zip(&q).map(|(y, m)| y - m).collect();
    let o = state_jacobian(&paths, &soundings, &tracker.params.link, tracker.params.mode);
    let p = tracker.params.mode.state_dim();
    for (c, col) in o.column_iter().enumerate() {
        let grad: f64 = col.iter().zip(&residual).map(|(a, e)| (a.conj() * e).re).sum();
        tracker.beliefs[c / p].mean[c % p] += tracker.params.lms_step * grad;
    }
    record.stages.push(Stage::Update);
    record.selections = selections;
    tracker.record_posterior();
    Ok(record)
}

fn genie_step(tracker: &mut Tracker<'_>, input: &CycleInput<'_>) -> Result<CycleRecord> {
    dim_check("genie truth", tracker.known.len(), input.truth.len())?;
    tracker.push_blocks(input);
    let p = tracker.params.mode.state_dim();
    for (b, t) in tracker.beliefs.iter_mut().zip(input.truth) {
        let v = if p == 2 { vec![t.aoa, t.aod] } else { vec![t.aoa] };
        b.mean = DVector::from_vec(v);
        b.covariance.fill(0.0);
    }
    tracker.record_posterior();
    Ok(CycleRecord { stages: vec![Stage::Update], ..empty_record() })
}

/// Mean squared per-cycle AoA increment over simulated trajectories: the
/// random-walk process noise that matches the mobility model.
pub fn calibrate_process_noise(
    mobility: &MobilityParams,
    cycle_slots: usize,
    episodes: usize,
    cycles: usize,
    seed: u64,
) -> Result<f64> {
    if episodes == 0 || cycles == 0 || cycle_slots == 0 {
        return Err(Error::Config("process-noise calibration needs episodes, cycles and slots".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for e in 0..episodes {
        let mut rng = stream(seed, &[label::CALIBRATION, e as u64]);
        let (aoa, vel) = mobility.draw_initial_state(&mut rng);
        let traj = generate_trajectory(mobility, 1, cycles * cycle_slots + 1, &[aoa], &[vel], &mut rng)?;
        for c in 0..cycles {
            let d = traj.aoa[0][(c + 1) * cycle_slots] - traj.aoa[0][c * cycle_slots];
            sum += d * d;
            n += 1;
        }
    }
    Ok(sum / n as f64)
}
