use harness::config::Csi;
use harness::{preset, ConfigError, Estimator, ExperimentConfig, PRESETS};

#[test]
fn every_preset_resolves() {
    for name in PRESETS {
        let cfg = preset(name).unwrap();
        assert_eq!(cfg.preset.as_deref(), Some(name));
        let exp = cfg.resolve().unwrap();
        assert_eq!(exp.grid.len(), 250);
        assert!(!exp.snr_db.is_empty());
    }
    assert!(matches!(preset("fig-unknown"), Err(ConfigError::UnknownPreset(_))));
}

#[test]
fn file_keys_override_the_preset() {
    let cfg = ExperimentConfig::from_toml_str("preset = \"fig-ber-ecsir\"\ntrials = 7\nsnr_db = [3.0]\n").unwrap();
    assert_eq!(cfg.trials, 7);
    assert_eq!(cfg.snr_db, vec![3.0]);
    assert_eq!(cfg.estimators, preset("fig-ber-ecsir").unwrap().estimators);
    let exp = cfg.resolve().unwrap();
    assert_eq!(exp.csi, Csi::Estimated);
    assert_eq!(exp.estimators, vec![Estimator::Omp, Estimator::Fvb, Estimator::Svb]);
}

#[test]
fn bare_file_starts_from_defaults() {
    let cfg = ExperimentConfig::from_toml_str("paths = 3").unwrap();
    assert_eq!(cfg, ExperimentConfig { paths: 3, ..ExperimentConfig::default() });
}

#[test]
fn malformed_configs_are_rejected() {
    assert!(matches!(ExperimentConfig::from_toml_str("trails = 3"), Err(ConfigError::Parse(_))));
    assert!(matches!(ExperimentConfig::from_toml_str("preset = 4"), Err(ConfigError::Invalid(_))));
    assert!(matches!(ExperimentConfig::from_toml_str("preset = \"nope\""), Err(ConfigError::UnknownPreset(_))));
    let bad = |edit: fn(&mut ExperimentConfig)| {
        let mut cfg = ExperimentConfig::default();
        edit(&mut cfg);
        cfg.resolve().is_err()
    };
    assert!(bad(|c| c.waveforms.clear()));
    assert!(bad(|c| c.waveforms = vec!["fsk".into()]));
    assert!(bad(|c| c.estimators = vec!["lasso".into()]));
    assert!(bad(|c| c.detectors = vec!["ml".into()]));
    assert!(bad(|c| c.csi = "partial".into()));
    assert!(bad(|c| c.m_alpha = 4));
    assert!(bad(|c| c.pilot_symbols = 33));
    assert!(bad(|c| c.constellation = "8psk".into()));
}

#[test]
fn estimator_names_round_trip() {
    for e in [Estimator::None, Estimator::Omp, Estimator::Vb, Estimator::Fvb, Estimator::Svb] {
        assert_eq!(e.name().parse::<Estimator>().unwrap(), e);
    }
    assert_eq!(" SVB ".parse::<Estimator>().unwrap(), Estimator::Svb);
}
