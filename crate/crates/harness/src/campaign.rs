//! Monte Carlo campaigns: NMSE of the channel estimators, BER of the
//! detectors and the genie CRLB.
//!
//! Trials at one SNR point run in parallel; per-trial results are collected in
//! trial order and reduced sequentially so the output does not depend on the
//! worker count.

use std::time::Instant;

use dsspread::channel::{
    apply_channel, effective_channel, nmse, sample_paths, time_domain_channel_matrix, PathSet, SnrDb,
};
use dsspread::crlb::{crlb_from_gram, genie_theta, sensitivity_gram};
use dsspread::detect::Detector;
use dsspread::dsgrid::{build_dictionary, sample_on_grid_paths, DsGrid};
use dsspread::iced::{detect_with_estimate, run_iced, IcedConfig};
use dsspread::scalar::norm_sqr;
use dsspread::vbce::{omp_baseline, run_ce, VbConfig};
use dsspread::waveform::{build_transmitter_matrix, WaveformKind};
use dsspread::{AtomContext, CMat, CVec, ChannelEstimate, Constellation, Dictionary, Waveform};
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ConfigError, Csi, Estimator, Experiment};
use crate::seed::{snr_key, stream_rng, Stream};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] dsspread::Error),
    #[error("cannot write results: {0}")]
    Csv(#[from] csv::Error),
    #[error("cannot write results: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot start the worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRecord {
    pub snr_db: f64,
    pub metric: String,
    pub value: f64,
    pub trials: usize,
    pub waveform: String,
    pub estimator: String,
    pub detector: String,
    pub seed: u64,
    pub wall_ms: u64,
}

/// Everything that stays fixed across trials.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub exp: Experiment,
    pub pilot: Waveform,
    pub pilot_symbols: Vec<usize>,
    pub pilot_ctx: AtomContext,
    pub dictionary: Dictionary,
    pub data: Vec<Waveform>,
    pub constellation: Constellation,
}

/// Received pilot block of one trial.
#[derive(Debug, Clone)]
pub struct PilotObservation {
    pub y: CVec,
    pub sigma2: f64,
}

/// Transmitted and received data block of one trial.
#[derive(Debug, Clone)]
pub struct DataBlock {
    /// True effective channel `Gᴴ Hᵗ G`.
    pub h: CMat,
    pub symbols: Vec<usize>,
    pub y: CVec,
    pub sigma2: f64,
}

/// Drawn channel with its lattice support when it is on the grid.
#[derive(Debug, Clone)]
pub struct TrialChannel {
    pub paths: PathSet,
    pub support: Option<Vec<usize>>,
}

/// Lattice point closest to each path.
pub fn nearest_support(grid: &DsGrid, paths: &PathSet) -> Vec<usize> {
    let half = (grid.m_alpha as f64 - 1.0) / 2.0;
    let mut support: Vec<usize> = paths
        .iter()
        .map(|(_, tau, alpha)| {
            let n = ((tau / grid.r_tau).round().max(0.0) as usize).min(grid.n_tau - 1);
            let w = if grid.m_alpha == 1 { 0.0 } else { alpha.ln() / grid.q_alpha.ln() };
            let m = ((w + half).round().max(0.0) as usize).min(grid.m_alpha - 1);
            n * grid.m_alpha + m
        })
        .collect();
    support.sort_unstable();
    support.dedup();
    support
}

impl Scenario {
    pub fn new(exp: Experiment) -> Result<Self> {
        let data = exp
            .waveforms
            .iter()
            .map(build_transmitter_matrix::<f64>)
            .collect::<dsspread::Result<Vec<_>>>()?;
        Self::with_data_waveforms(exp, data)
    }

    /// Uses the given data synthesis matrices instead of building them from the config.
    pub fn with_data_waveforms(exp: Experiment, data: Vec<Waveform>) -> Result<Self> {
        let constellation = Constellation::by_name(&exp.constellation)?;
        let full = build_transmitter_matrix::<f64>(&exp.pilot.waveform)?;
        let count = full.symbol_count();
        let pilot_symbols: Vec<usize> = if exp.pilot.symbols == 0 || exp.pilot.symbols == count {
            (0..count).collect()
        } else {
            let mut rng = stream_rng(exp.pilot.seed, Stream::PilotSymbols, &[0]);
            let mut pos = sample(&mut rng, count, exp.pilot.symbols).into_vec();
            pos.sort_unstable();
            pos
        };
        let pilot = full.restrict_symbols(&pilot_symbols)?;
        let mut rng = stream_rng(exp.pilot.seed, Stream::PilotSymbols, &[1]);
        let idx: Vec<usize> = (0..pilot.symbol_count()).map(|_| rng.random_range(0..constellation.size())).collect();
        let pilot_ctx = AtomContext::new(&pilot, constellation.symbols(&idx))?;
        let dictionary = build_dictionary(&exp.grid, &pilot_ctx);
        Ok(Self { exp, pilot, pilot_symbols, pilot_ctx, dictionary, data, constellation })
    }

    pub fn waveform_name(&self, w: usize) -> &'static str {
        self.data[w].kind.name()
    }

    /// Channel of trial `t`; shared by every SNR point and waveform.
    pub fn draw_channel(&self, trial: usize) -> TrialChannel {
        let mut rng = stream_rng(self.exp.seed, Stream::Channel, &[trial as u64]);
        if self.exp.on_grid {
            let (support, paths) = sample_on_grid_paths(&self.exp.grid, self.exp.channel.paths, &mut rng);
            let mut support = support;
            support.sort_unstable();
            TrialChannel { paths, support: Some(support) }
        } else {
            TrialChannel { paths: sample_paths(&self.exp.channel, &mut rng), support: None }
        }
    }

    /// Genie support: the drawn lattice points, or the nearest ones for off-grid paths.
    pub fn genie_support(&self, ch: &TrialChannel) -> Vec<usize> {
        ch.support.clone().unwrap_or_else(|| nearest_support(&self.exp.grid, &ch.paths))
    }

    pub fn pilot_observation(&self, paths: &PathSet, snr_db: f64, trial: usize) -> Result<PilotObservation> {
        let ht = time_domain_channel_matrix::<f64>(paths, &self.pilot.layout)?;
        let s = self.pilot.modulate(&self.pilot_ctx.x)?;
        let mut rng = stream_rng(self.exp.seed, Stream::PilotNoise, &[snr_key(snr_db), trial as u64]);
        let (r, sigma2) = apply_channel(&s, &ht, SnrDb(snr_db), &mut rng)?;
        Ok(PilotObservation { y: self.pilot.demodulate(&r)?, sigma2 })
    }

    pub fn true_channel(&self, w: usize, paths: &PathSet) -> Result<CMat> {
        let wf = &self.data[w];
        let ht = time_domain_channel_matrix::<f64>(paths, &wf.layout)?;
        Ok(effective_channel(wf, &ht)?)
    }

    pub fn data_block(&self, w: usize, paths: &PathSet, snr_db: f64, trial: usize) -> Result<DataBlock> {
        let wf = &self.data[w];
        let ht = time_domain_channel_matrix::<f64>(paths, &wf.layout)?;
        let h = effective_channel(wf, &ht)?;
        let mut rng = stream_rng(self.exp.seed, Stream::DataBits, &[snr_key(snr_db), trial as u64]);
        let symbols: Vec<usize> =
            (0..wf.symbol_count()).map(|_| rng.random_range(0..self.constellation.size())).collect();
        let s = wf.modulate(&self.constellation.symbols(&symbols))?;
        let mut rng = stream_rng(self.exp.seed, Stream::DataNoise, &[snr_key(snr_db), trial as u64, w as u64]);
        let (r, sigma2) = apply_channel(&s, &ht, SnrDb(snr_db), &mut rng)?;
        Ok(DataBlock { h, symbols, y: wf.demodulate(&r)?, sigma2 })
    }

    pub fn vb_config(&self, est: Estimator) -> Option<VbConfig> {
        est.refine().map(|refine| VbConfig { refine, ..self.exp.vb })
    }

    /// Pilot-only estimate; `None` for the oracle.
    pub fn estimate(&self, est: Estimator, y_p: &CVec) -> Result<Option<ChannelEstimate>> {
        Ok(match est {
            Estimator::None => None,
            Estimator::Omp => {
                let k = self.exp.vb.support_size(self.dictionary.len()).min(y_p.len());
                Some(omp_baseline(y_p, &self.dictionary, k)?)
            }
            _ => Some(run_ce(y_p, &self.dictionary, &self.vb_config(est).expect("variational estimator"))?),
        })
    }

    fn iced_config(&self, est: Estimator, detector: Detector) -> Option<IcedConfig> {
        let rounds = self.exp.iced_rounds?;
        let vb = self.vb_config(est)?;
        Some(IcedConfig { max_rounds: rounds, ..IcedConfig::new(vb, detector) })
    }

    pub fn run_iced(&self, est: Estimator, detector: Detector, y_p: &CVec, data: &DataBlock, w: usize) -> Result<dsspread::iced::IcedOutput<f64>> {
        let cfg = self.iced_config(est, detector).ok_or_else(|| {
            ConfigError::Invalid(format!("ICED needs iced = true and a variational estimator, got {est}"))
        })?;
        Ok(run_iced(y_p, &data.y, &self.pilot_ctx, &self.exp.grid, &self.data[w], &self.constellation, &cfg)?)
    }

    /// Estimators that also get an ICED lane.
    fn iced_estimators(&self) -> Vec<Estimator> {
        if self.exp.iced_rounds.is_none() {
            return vec![];
        }
        self.exp.estimators.iter().copied().filter(|e| e.refine().is_some()).collect()
    }
}

/// Runs `f` over all trials of one SNR point and returns the results in trial order.
fn run_trials<R: Send>(trials: usize, f: impl Fn(usize) -> Result<R> + Sync) -> Result<Vec<R>> {
    (0..trials).into_par_iter().map(&f).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Middle order statistic (upper middle for even counts).
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

/// Runs `body` on a pool of `workers` threads (`0` = one per core).
pub fn with_workers<R: Send>(workers: usize, body: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    Ok(pool.install(body))
}

struct Lane {
    estimator: String,
    detector: String,
}

fn record(sc: &Scenario, snr_db: f64, metric: &str, value: f64, w: usize, lane: &Lane, wall_ms: u64) -> ResultRecord {
    ResultRecord {
        snr_db,
        metric: metric.to_string(),
        value,
        trials: sc.exp.trials,
        waveform: sc.waveform_name(w).to_string(),
        estimator: lane.estimator.clone(),
        detector: lane.detector.clone(),
        seed: sc.exp.seed,
        wall_ms,
    }
}

/// Mean and median NMSE of `Ĥ` per waveform and estimator; ICED lanes when enabled.
pub fn run_nmse_campaign(sc: &Scenario) -> Result<Vec<ResultRecord>> {
    let iced_est = sc.iced_estimators();
    let iced_det = sc.exp.detectors.first().copied();
    let mut lanes: Vec<Lane> =
        sc.exp.estimators.iter().map(|e| Lane { estimator: e.name().into(), detector: "-".into() }).collect();
    if let Some(d) = iced_det {
        lanes.extend(iced_est.iter().map(|e| Lane { estimator: format!("iced-{e}"), detector: d.name().into() }));
    }
    let nw = sc.data.len();
    let mut out = Vec::new();
    for &snr in &sc.exp.snr_db {
        let start = Instant::now();
        let per_trial = run_trials(sc.exp.trials, |t| {
            let ch = sc.draw_channel(t);
            let obs = sc.pilot_observation(&ch.paths, snr, t)?;
            let estimates =
                sc.exp.estimators.iter().map(|e| sc.estimate(*e, &obs.y)).collect::<Result<Vec<_>>>()?;
            let mut vals = Vec::with_capacity(nw * lanes.len());
            for w in 0..nw {
                let h = sc.true_channel(w, &ch.paths)?;
                for est in &estimates {
                    let h_hat = match est {
                        Some(e) => e.effective_channel(&sc.data[w])?,
                        None => h.clone(),
                    };
                    vals.push(nmse(&h, &h_hat));
                }
                if let Some(d) = iced_det {
                    let data = if iced_est.is_empty() { None } else { Some(sc.data_block(w, &ch.paths, snr, t)?) };
                    for e in &iced_est {
                        let data = data.as_ref().expect("data block drawn for ICED");
                        let res = sc.run_iced(*e, d, &obs.y, data, w)?;
                        vals.push(nmse(&h, &res.estimate.effective_channel(&sc.data[w])?));
                    }
                }
            }
            Ok(vals)
        })?;
        let wall_ms = start.elapsed().as_millis() as u64;
        for w in 0..nw {
            for (k, lane) in lanes.iter().enumerate() {
                let v: Vec<f64> = per_trial.iter().map(|r| r[w * lanes.len() + k]).collect();
                out.push(record(sc, snr, "nmse", mean(&v), w, lane, wall_ms));
                out.push(record(sc, snr, "nmse_median", median(&v), w, lane, wall_ms));
            }
        }
    }
    Ok(out)
}

/// Bit errors of one detection against the transmitted symbols.
pub fn bit_errors(c: &Constellation, sent: &[usize], decided: &[usize]) -> u64 {
    sent.iter()
        .zip(decided)
        .map(|(s, d)| (0..c.bits_per_symbol).filter(|b| c.bit(*s, *b) != c.bit(*d, *b)).count() as u64)
        .sum()
}

/// BER per waveform and detector, with perfect or estimated channel state.
pub fn run_ber_campaign(sc: &Scenario) -> Result<Vec<ResultRecord>> {
    if sc.exp.detectors.is_empty() {
        return Err(ConfigError::Invalid("a BER campaign needs at least one detector".into()).into());
    }
    let estimators: Vec<Estimator> = match sc.exp.csi {
        Csi::Perfect => vec![Estimator::None],
        Csi::Estimated => sc.exp.estimators.clone(),
    };
    let iced_est = match sc.exp.csi {
        Csi::Perfect => vec![],
        Csi::Estimated => sc.iced_estimators(),
    };
    let est_name = |e: Estimator| match (sc.exp.csi, e) {
        (Csi::Perfect, _) => "perfect".to_string(),
        (_, e) => e.name().to_string(),
    };
    let mut lanes = Vec::new();
    for e in &estimators {
        lanes.extend(sc.exp.detectors.iter().map(|d| Lane { estimator: est_name(*e), detector: d.name().into() }));
    }
    for e in &iced_est {
        lanes.extend(sc.exp.detectors.iter().map(|d| Lane { estimator: format!("iced-{e}"), detector: d.name().into() }));
    }
    let nw = sc.data.len();
    let c = &sc.constellation;
    let mut out = Vec::new();
    for &snr in &sc.exp.snr_db {
        let start = Instant::now();
        let per_trial = run_trials(sc.exp.trials, |t| {
            let ch = sc.draw_channel(t);
            let obs = match sc.exp.csi {
                Csi::Perfect => None,
                Csi::Estimated => Some(sc.pilot_observation(&ch.paths, snr, t)?),
            };
            let estimates = match &obs {
                Some(o) => estimators.iter().map(|e| sc.estimate(*e, &o.y)).collect::<Result<Vec<_>>>()?,
                None => vec![None],
            };
            let mut errs = Vec::with_capacity(nw * lanes.len());
            for w in 0..nw {
                let data = sc.data_block(w, &ch.paths, snr, t)?;
                for est in &estimates {
                    for d in &sc.exp.detectors {
                        let det = match est {
                            Some(e) => detect_with_estimate(e, &data.y, &sc.data[w], c, *d)?,
                            None => d.detect(&data.h, &data.y, data.sigma2, c)?,
                        };
                        errs.push(bit_errors(c, &data.symbols, &det.hard));
                    }
                }
                if let Some(o) = &obs {
                    for e in &iced_est {
                        for d in &sc.exp.detectors {
                            let res = sc.run_iced(*e, *d, &o.y, &data, w)?;
                            errs.push(bit_errors(c, &data.symbols, &res.detection.hard));
                        }
                    }
                }
            }
            Ok(errs)
        })?;
        let wall_ms = start.elapsed().as_millis() as u64;
        for w in 0..nw {
            let bits = (sc.exp.trials * sc.data[w].symbol_count() * c.bits_per_symbol) as f64;
            for (k, lane) in lanes.iter().enumerate() {
                let errors: u64 = per_trial.iter().map(|r| r[w * lanes.len() + k]).sum();
                out.push(record(sc, snr, "ber", errors as f64 / bits, w, lane, wall_ms));
            }
        }
    }
    Ok(out)
}

/// Genie-θ CRLB normalised by `‖H‖²` and averaged over trials; one row per SNR point and waveform.
pub fn run_crlb_curve(sc: &Scenario) -> Result<Vec<ResultRecord>> {
    let grams =
        sc.data.iter().map(|wf| sensitivity_gram(&sc.exp.grid, wf)).collect::<dsspread::Result<Vec<_>>>()?;
    let lane = Lane { estimator: "genie".into(), detector: "-".into() };
    let nw = sc.data.len();
    let mut out = Vec::new();
    for &snr in &sc.exp.snr_db {
        let start = Instant::now();
        let per_trial = run_trials(sc.exp.trials, |t| {
            let ch = sc.draw_channel(t);
            let obs = sc.pilot_observation(&ch.paths, snr, t)?;
            let theta = genie_theta(sc.exp.grid.len(), &sc.genie_support(&ch));
            (0..nw)
                .map(|w| {
                    let h = sc.true_channel(w, &ch.paths)?;
                    let bound = crlb_from_gram(&sc.dictionary.a, &grams[w], &theta, obs.sigma2)?;
                    Ok(bound.crlb_trace / norm_sqr(&h))
                })
                .collect::<Result<Vec<f64>>>()
        })?;
        let wall_ms = start.elapsed().as_millis() as u64;
        for w in 0..nw {
            let v: Vec<f64> = per_trial.iter().map(|r| r[w]).collect();
            out.push(record(sc, snr, "crlb", mean(&v), w, &lane, wall_ms));
        }
    }
    Ok(out)
}

/// Writes the records with a header row.
pub fn write_csv<W: std::io::Write>(records: &[ResultRecord], sink: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(sink);
    for r in records {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

/// Same as [`write_csv`] with the `wall_ms` column zeroed, for byte comparisons.
pub fn csv_without_timing(records: &[ResultRecord]) -> Result<Vec<u8>> {
    let stripped: Vec<ResultRecord> = records.iter().map(|r| ResultRecord { wall_ms: 0, ..r.clone() }).collect();
    let mut buf = Vec::new();
    write_csv(&stripped, &mut buf)?;
    Ok(buf)
}

/// Kinds in the same order as the configured data waveforms.
pub fn waveform_kinds(sc: &Scenario) -> Vec<WaveformKind> {
    sc.data.iter().map(|w| w.kind).collect()
}
