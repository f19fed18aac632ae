//! Iterative channel estimation and detection.
//!
//! Hard decisions on the data block act as extra pilots: the data block
//! observation is stacked under the pilot observation and the sparse estimator
//! is rerun on atoms that stack the pilot atom over the data atom built from
//! the decided symbols. Each round warm-starts from the previous round's grid
//! and precisions.

use crate::dsgrid::{dictionary_matrix, AtomContext, DsGrid, StackedContext};
use crate::detect::{DetectionResult, Detector};
use crate::error::{Error, Result};
use crate::scalar::{CVector, Real};
use crate::vbce::{run_ce_from, ChannelEstimate, VbConfig, VbState};
use crate::waveform::{Constellation, WaveformMatrices};

/// Default number of extended-model rounds.
pub const DEFAULT_ROUNDS: usize = 3;

/// `y_E = [y_p; y]` with atoms `[a_p; a_d(x̂)]`.
#[derive(Debug, Clone)]
pub struct ExtendedModel<T: Real> {
    pub y_e: CVector<T>,
    pub src: StackedContext<T>,
    pub x_hat: CVector<T>,
}

impl<T: Real> ExtendedModel<T> {
    pub fn len(&self) -> usize {
        self.y_e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_e.is_empty()
    }
}

pub fn build_extended_model<T: Real>(
    y_p: &CVector<T>,
    y: &CVector<T>,
    x_hat: &CVector<T>,
    pilot: &AtomContext<T>,
    data: &WaveformMatrices<T>,
) -> Result<ExtendedModel<T>> {
    if y_p.len() != pilot.measurement_count() {
        return Err(Error::DimensionMismatch { expected: pilot.measurement_count(), got: y_p.len() });
    }
    if y.len() != data.symbol_count() {
        return Err(Error::DimensionMismatch { expected: data.symbol_count(), got: y.len() });
    }
    let data_ctx = AtomContext::new(data, x_hat.clone())?;
    let y_e = CVector::from_iterator(y_p.len() + y.len(), y_p.iter().chain(y.iter()).copied());
    Ok(ExtendedModel { y_e, src: StackedContext { parts: vec![pilot.clone(), data_ctx] }, x_hat: x_hat.clone() })
}

#[derive(Debug, Clone)]
pub struct IcedConfig {
    pub vb: VbConfig,
    pub detector: Detector,
    pub max_rounds: usize,
}

impl IcedConfig {
    pub fn new(vb: VbConfig, detector: Detector) -> Self {
        Self { vb, detector, max_rounds: DEFAULT_ROUNDS }
    }
}

#[derive(Debug, Clone)]
pub struct IcedOutput<T: Real> {
    pub estimate: ChannelEstimate<T>,
    pub detection: DetectionResult<T>,
    /// Extended-model rounds actually run.
    pub rounds: usize,
    /// Decisions stopped changing before the round limit.
    pub converged: bool,
}

/// Detection on the estimated effective channel with `σ² = 1/γ̂`.
pub fn detect_with_estimate<T: Real>(
    est: &ChannelEstimate<T>,
    y: &CVector<T>,
    data: &WaveformMatrices<T>,
    c: &Constellation<T>,
    detector: Detector,
) -> Result<DetectionResult<T>> {
    let h = est.effective_channel(data)?;
    detector.detect(&h, y, est.noise_variance(), c)
}

/// Pilot-only estimate followed by up to `max_rounds` extended-model rounds.
pub fn run_iced<T: Real>(
    y_p: &CVector<T>,
    y: &CVector<T>,
    pilot: &AtomContext<T>,
    grid: &DsGrid,
    data: &WaveformMatrices<T>,
    c: &Constellation<T>,
    cfg: &IcedConfig,
) -> Result<IcedOutput<T>> {
    let a = dictionary_matrix(grid, pilot);
    let (mut estimate, mut state) = run_ce_from(y_p, VbState::initial(a, grid.clone(), y_p)?, pilot, &cfg.vb)?;
    let mut detection = detect_with_estimate(&estimate, y, data, c, cfg.detector)?;
    let mut rounds = 0;
    let mut converged = false;
    while rounds < cfg.max_rounds {
        rounds += 1;
        let x_hat = detection.hard_symbols(c);
        let model = build_extended_model(y_p, y, &x_hat, pilot, data)?;
        let warm = VbState {
            a: dictionary_matrix(&state.grid, &model.src),
            grid: state.grid.clone(),
            delta: state.delta.clone(),
            gamma: state.gamma,
            mu: state.mu.clone(),
            iterations: 0,
            converged: false,
        };
        let (est, st) = run_ce_from(&model.y_e, warm, &model.src, &cfg.vb)?;
        let det = detect_with_estimate(&est, y, data, c, cfg.detector)?;
        let unchanged = det.hard == detection.hard;
        estimate = est;
        state = st;
        detection = det;
        if unchanged {
            converged = true;
            break;
        }
    }
    Ok(IcedOutput { estimate, detection, rounds, converged })
}
