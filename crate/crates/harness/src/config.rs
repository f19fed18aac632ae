//! Flat key-value experiment configuration, named presets and validation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dsspread::channel::{ChannelSpec, ScaleModel};
use dsspread::detect::Detector;
use dsspread::dsgrid::{build_grid, DsGrid};
use dsspread::vbce::{DelayFrame, Refine, VbConfig};
use dsspread::waveform::{Constellation, WaveformConfig, WaveformKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("invalid config: {0}")]
    Model(#[from] dsspread::Error),
}

/// Raw run description, one TOML key per field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Preset the file's keys are layered over.
    pub preset: Option<String>,

    pub waveforms: Vec<String>,
    pub data_m: usize,
    pub data_n: usize,
    pub bandwidth: f64,
    pub f_low: f64,
    pub odss_q: f64,

    pub pilot_waveform: String,
    pub pilot_m: usize,
    pub pilot_n: usize,
    pub pilot_bandwidth: f64,
    pub pilot_f_low: f64,
    /// Symbol positions actually loaded with pilots; `0` keeps all of them.
    pub pilot_symbols: usize,
    pub pilot_seed: u64,

    pub tau_max: f64,
    pub alpha_max: f64,
    pub paths: usize,
    pub scale_model: String,
    pub on_grid: bool,
    pub n_tau: usize,
    pub m_alpha: usize,

    pub constellation: String,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub estimators: Vec<String>,
    pub detectors: Vec<String>,
    pub iced: bool,
    pub iced_rounds: usize,
    pub csi: String,
    pub seed: u64,
    pub out: Option<PathBuf>,

    pub vb_j_max: usize,
    pub vb_eps_conv: f64,
    pub vb_threshold_frac: f64,
    pub vb_warmup: usize,
    pub delay_frame: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let vb = VbConfig::default();
        Self {
            preset: None,
            waveforms: ["otfs", "ofdm", "ocdm", "odss"].map(String::from).to_vec(),
            data_m: 64,
            data_n: 2,
            bandwidth: 10e3,
            f_low: 10e3,
            odss_q: 1.001,
            pilot_waveform: "ofdm".into(),
            pilot_m: 32,
            pilot_n: 1,
            pilot_bandwidth: 1e3,
            pilot_f_low: 14.5e3,
            pilot_symbols: 0,
            pilot_seed: 7,
            tau_max: 32e-3,
            alpha_max: 1.001,
            paths: 5,
            scale_model: "uniform".into(),
            on_grid: true,
            n_tau: 50,
            m_alpha: 5,
            constellation: "bpsk".into(),
            snr_db: vec![0.0, 10.0, 20.0],
            trials: 200,
            estimators: ["omp", "vb", "fvb", "svb"].map(String::from).to_vec(),
            detectors: vec!["vssd".into()],
            iced: false,
            iced_rounds: dsspread::iced::DEFAULT_ROUNDS,
            csi: "pcsir".into(),
            seed: 1,
            out: None,
            vb_j_max: vb.j_max,
            vb_eps_conv: vb.eps_conv,
            vb_threshold_frac: vb.threshold_frac,
            vb_warmup: vb.warmup,
            delay_frame: "co-rotating".into(),
        }
    }
}

pub const PRESETS: [&str; 5] = ["fig-nmse-ongrid", "fig-nmse-offgrid", "fig-ber-pcsir", "fig-ber-ecsir", "fig-nmse-iced"];

pub fn preset(name: &str) -> Result<ExperimentConfig, ConfigError> {
    let base = ExperimentConfig { preset: Some(name.to_string()), ..ExperimentConfig::default() };
    let strs = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let cfg = match name {
        "fig-nmse-ongrid" => ExperimentConfig { waveforms: strs(&["ofdm"]), ..base },
        "fig-nmse-offgrid" => ExperimentConfig { waveforms: strs(&["ofdm"]), on_grid: false, snr_db: vec![20.0], ..base },
        "fig-ber-pcsir" => ExperimentConfig {
            estimators: vec![],
            detectors: strs(&["1tap", "mmse", "vssd"]),
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            trials: 1600,
            ..base
        },
        "fig-ber-ecsir" => ExperimentConfig {
            csi: "ecsir".into(),
            on_grid: false,
            estimators: strs(&["omp", "fvb", "svb"]),
            detectors: strs(&["mmse", "vssd"]),
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            ..base
        },
        "fig-nmse-iced" => ExperimentConfig {
            waveforms: strs(&["ofdm"]),
            on_grid: false,
            estimators: strs(&["fvb", "svb"]),
            iced: true,
            snr_db: vec![0.0, 4.0, 8.0, 12.0, 16.0],
            ..base
        },
        other => return Err(ConfigError::UnknownPreset(other.to_string())),
    };
    Ok(cfg)
}

impl ExperimentConfig {
    /// Parses a TOML document; when it names a `preset`, its keys override that preset.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse()?;
        let name = match table.get("preset") {
            None => return Ok(table.try_into()?),
            Some(toml::Value::String(s)) => s.clone(),
            Some(v) => return Err(ConfigError::Invalid(format!("preset must be a string, got {v}"))),
        };
        let mut merged = toml::Table::try_from(preset(&name)?)
            .map_err(|e| ConfigError::Invalid(format!("preset {name} does not serialise: {e}")))?;
        merged.extend(table);
        Ok(merged.try_into()?)
    }

    /// Loads a config file, or a preset when `source` is a preset name and not a file.
    pub fn load(source: &Path) -> Result<Self, ConfigError> {
        if !source.exists() {
            if let Some(name) = source.to_str().filter(|s| PRESETS.contains(s)) {
                return preset(name);
            }
        }
        let text =
            std::fs::read_to_string(source).map_err(|e| ConfigError::Read { path: source.to_path_buf(), source: e })?;
        Self::from_toml_str(&text)
    }

    pub fn resolve(&self) -> Result<Experiment, ConfigError> {
        Experiment::new(self)
    }
}

/// Channel estimator run on the pilot block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// Oracle: the true channel is used as the estimate.
    None,
    Omp,
    Vb,
    Fvb,
    Svb,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::None => "none",
            Estimator::Omp => "omp",
            Estimator::Vb => "vb",
            Estimator::Fvb => "fvb",
            Estimator::Svb => "svb",
        }
    }

    /// Refinement of the variational estimators; `None` for OMP and the oracle.
    pub fn refine(self) -> Option<Refine> {
        match self {
            Estimator::Vb => Some(Refine::None),
            Estimator::Fvb => Some(Refine::Fvb),
            Estimator::Svb => Some(Refine::Svb),
            Estimator::None | Estimator::Omp => None,
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "oracle" => Ok(Estimator::None),
            "omp" => Ok(Estimator::Omp),
            "vb" => Ok(Estimator::Vb),
            "fvb" => Ok(Estimator::Fvb),
            "svb" => Ok(Estimator::Svb),
            other => Err(ConfigError::Invalid(format!("unknown estimator '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Csi {
    /// Perfect channel state at the receiver.
    Perfect,
    /// Channel estimated from the pilot block.
    Estimated,
}

impl FromStr for Csi {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pcsir" | "perfect" => Ok(Csi::Perfect),
            "ecsir" | "estimated" => Ok(Csi::Estimated),
            other => Err(ConfigError::Invalid(format!("unknown csi mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PilotSpec {
    pub waveform: WaveformConfig,
    pub symbols: usize,
    pub seed: u64,
}

/// Validated, typed form of [`ExperimentConfig`].
#[derive(Debug, Clone)]
pub struct Experiment {
    pub waveforms: Vec<WaveformConfig>,
    pub pilot: PilotSpec,
    pub channel: ChannelSpec,
    pub on_grid: bool,
    pub grid: DsGrid,
    pub constellation: String,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub estimators: Vec<Estimator>,
    pub detectors: Vec<Detector>,
    /// Extended-model rounds when ICED is on.
    pub iced_rounds: Option<usize>,
    pub csi: Csi,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub vb: VbConfig,
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

fn parse_kind(s: &str) -> Result<WaveformKind, ConfigError> {
    Ok(s.parse::<WaveformKind>()?)
}

impl Experiment {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, ConfigError> {
        if cfg.waveforms.is_empty() {
            return Err(invalid("waveforms is empty"));
        }
        let waveforms = cfg
            .waveforms
            .iter()
            .map(|w| {
                let wf = WaveformConfig::for_kind(parse_kind(w)?, cfg.data_m, cfg.data_n, cfg.bandwidth, cfg.f_low, cfg.odss_q);
                wf.validate()?;
                Ok(wf)
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;

        let pilot_wf = WaveformConfig::for_kind(
            parse_kind(&cfg.pilot_waveform)?,
            cfg.pilot_m,
            cfg.pilot_n,
            cfg.pilot_bandwidth,
            cfg.pilot_f_low,
            cfg.odss_q,
        );
        pilot_wf.validate()?;
        if cfg.pilot_symbols > pilot_wf.symbol_count() {
            return Err(invalid(format!(
                "pilot_symbols = {} exceeds the {} pilot positions",
                cfg.pilot_symbols,
                pilot_wf.symbol_count()
            )));
        }

        let scale_model = match cfg.scale_model.trim().to_ascii_lowercase().as_str() {
            "uniform" => ScaleModel::Uniform,
            "log-uniform" | "loguniform" => ScaleModel::LogUniform,
            other => return Err(invalid(format!("unknown scale_model '{other}'"))),
        };
        let channel = ChannelSpec::new(cfg.tau_max, cfg.alpha_max, cfg.paths, scale_model)?;
        let grid = build_grid(cfg.tau_max, cfg.alpha_max, cfg.n_tau, cfg.m_alpha)?;
        if cfg.on_grid && cfg.paths > grid.len() {
            return Err(invalid(format!("{} on-grid paths do not fit {} grid points", cfg.paths, grid.len())));
        }
        Constellation::<f64>::by_name(&cfg.constellation)?;

        if cfg.snr_db.is_empty() || cfg.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(invalid("snr_db needs at least one finite value"));
        }
        if cfg.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        let estimators = cfg.estimators.iter().map(|s| s.parse()).collect::<Result<Vec<Estimator>, _>>()?;
        let detectors = cfg.detectors.iter().map(|s| s.parse()).collect::<Result<Vec<Detector>, _>>()?;
        let csi: Csi = cfg.csi.parse()?;
        if cfg.iced && detectors.is_empty() {
            return Err(invalid("iced needs a detector"));
        }

        let frame = match cfg.delay_frame.trim().to_ascii_lowercase().as_str() {
            "co-rotating" | "corotating" => DelayFrame::CoRotating,
            "plain" => DelayFrame::Plain,
            other => return Err(invalid(format!("unknown delay_frame '{other}'"))),
        };
        let vb = VbConfig {
            j_max: cfg.vb_j_max,
            eps_conv: cfg.vb_eps_conv,
            threshold_frac: cfg.vb_threshold_frac,
            warmup: cfg.vb_warmup,
            frame,
            ..VbConfig::default()
        };
        vb.validate()?;

        Ok(Self {
            waveforms,
            pilot: PilotSpec { waveform: pilot_wf, symbols: cfg.pilot_symbols, seed: cfg.pilot_seed },
            channel,
            on_grid: cfg.on_grid,
            grid,
            constellation: cfg.constellation.clone(),
            snr_db: cfg.snr_db.clone(),
            trials: cfg.trials,
            estimators,
            detectors,
            iced_rounds: cfg.iced.then_some(cfg.iced_rounds),
            csi,
            seed: cfg.seed,
            out: cfg.out.clone(),
            vb,
        })
    }
}
