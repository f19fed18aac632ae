use std::f64::consts::PI;

use dsspread::channel::{
    apply_channel, effective_channel, nmse, sample_paths, time_domain_channel_matrix, ChannelSpec, PathSet,
    SamplingLayout, ScaleModel, SnrDb,
};
use dsspread::waveform::{build_transmitter_matrix, WaveformConfig, WaveformKind};
use dsspread::{CMat, CVec, Error, C64};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn desk_spec() -> ChannelSpec {
    ChannelSpec::new(32e-3, 1.001, 5, ScaleModel::Uniform).unwrap()
}

fn max_abs(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn frob(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

#[test]
fn unit_scale_bound_gives_unit_scales() {
    let spec = ChannelSpec::new(32e-3, 1.0, 7, ScaleModel::Uniform).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = sample_paths(&spec, &mut rng);
    assert!(p.alpha.iter().all(|a| *a == 1.0));
    let spec = ChannelSpec { scale_model: ScaleModel::LogUniform, ..spec };
    assert!(sample_paths(&spec, &mut rng).alpha.iter().all(|a| *a == 1.0));
}

#[test]
fn log_scale_mean_is_centred() {
    let spec = desk_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let logs: Vec<f64> =
        (0..2000).flat_map(|_| sample_paths(&spec, &mut rng).alpha).map(f64::ln).collect();
    assert_eq!(logs.len(), 10_000);
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    // ln α is close to uniform on ±ln α_max, variance (ln α_max)²/3.
    let se = 1.001f64.ln() / 3f64.sqrt() / n.sqrt();
    assert!(mean.abs() < 3.0 * se, "mean {mean:e}, se {se:e}");
}

#[test]
fn draws_respect_bounds_and_repeat_per_seed() {
    let spec = desk_spec();
    let a = sample_paths(&spec, &mut ChaCha8Rng::seed_from_u64(9));
    let b = sample_paths(&spec, &mut ChaCha8Rng::seed_from_u64(9));
    assert_eq!(a, b);
    assert_eq!(a.len(), 5);
    assert!(a.tau.iter().all(|t| (0.0..=32e-3).contains(t)));
    assert!(a.alpha.iter().all(|x| (1.0 / 1.001..=1.001).contains(x)));
}

#[test]
fn zero_delay_unit_scale_is_identity() {
    let layout = SamplingLayout::new(64, 10e3, 10e3).unwrap();
    let ht: CMat = time_domain_channel_matrix(&PathSet::single(C64::new(1.0, 0.0), 0.0, 1.0).unwrap(), &layout).unwrap();
    assert!(max_abs(&ht, &CMat::identity(64, 64)) < 1e-10);
}

#[test]
fn one_sample_delay_matches_direct_product() {
    // Oracle: Fᴴ Γ F assembled from its three factors.
    let layout = SamplingLayout::new(16, 1e3, 14.5e3).unwrap();
    let (f, t) = (layout.freqs(), layout.times());
    let m = layout.m;
    let tau = 1.0 / layout.bandwidth;
    let fm = CMat::from_fn(m, m, |k, n| C64::from_polar(1.0 / (m as f64).sqrt(), -2.0 * PI * f[k] * t[n]));
    let gamma = CMat::from_fn(m, m, |k, j| if k == j { C64::from_polar(1.0, -2.0 * PI * f[k] * tau) } else { C64::new(0.0, 0.0) });
    let direct = fm.adjoint() * gamma * &fm;
    let ht: CMat = time_domain_channel_matrix(&PathSet::single(C64::new(1.0, 0.0), tau, 1.0).unwrap(), &layout).unwrap();
    assert!(max_abs(&ht, &direct) < 1e-8);
    // A cyclic down-shift up to phase.
    for n in 0..m {
        assert!((ht[(n, (n + m - 1) % m)].norm() - 1.0).abs() < 1e-8);
    }
}

#[test]
fn scaled_path_matches_direct_product() {
    let layout = SamplingLayout::new(24, 2e3, 11e3).unwrap();
    let (f, t) = (layout.freqs(), layout.times());
    let m = layout.m;
    let (h, tau, alpha) = (C64::new(0.3, -0.8), 2.7e-3, 1.0007);
    let fm = CMat::from_fn(m, m, |k, n| C64::from_polar(1.0 / (m as f64).sqrt(), -2.0 * PI * f[k] * t[n]));
    let fa = CMat::from_fn(m, m, |k, n| C64::from_polar(1.0 / (m as f64).sqrt(), -2.0 * PI * f[k] * t[n] / alpha));
    let gamma = CMat::from_fn(m, m, |k, j| {
        if k == j { C64::from_polar(1.0 / alpha, -2.0 * PI * f[k] * tau) } else { C64::new(0.0, 0.0) }
    });
    let direct = fm.adjoint() * gamma * fa * (h * alpha.sqrt());
    let ht: CMat = time_domain_channel_matrix(&PathSet::single(h, tau, alpha).unwrap(), &layout).unwrap();
    assert!(max_abs(&ht, &direct) < 1e-10);
}

#[test]
fn non_positive_scale_is_rejected() {
    let layout = SamplingLayout::new(8, 1e3, 0.0).unwrap();
    let p = PathSet { h: vec![C64::new(1.0, 0.0)], tau: vec![0.0], alpha: vec![0.0] };
    assert!(matches!(time_domain_channel_matrix::<f64>(&p, &layout), Err(Error::InvalidParameter(_))));
}

#[test]
fn effective_channel_of_scaled_identity() {
    let wf = build_transmitter_matrix::<f64>(&WaveformConfig::multicarrier(WaveformKind::Ocdm, 16, 2, 1e3, 0.0)).unwrap();
    let c = C64::new(0.4, 1.1);
    let h = effective_channel(&wf, &(CMat::identity(32, 32) * c)).unwrap();
    assert!(max_abs(&h, &(CMat::identity(32, 32) * c)) < 1e-9);
    assert!(matches!(effective_channel(&wf, &CMat::identity(8, 8)), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn effective_channel_preserves_frobenius_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let paths = sample_paths(&desk_spec(), &mut rng);
    for kind in [WaveformKind::Otfs, WaveformKind::Ofdm, WaveformKind::Ocdm] {
        let wf = build_transmitter_matrix::<f64>(&WaveformConfig::multicarrier(kind, 64, 2, 10e3, 10e3)).unwrap();
        let ht: CMat = time_domain_channel_matrix(&paths, &wf.layout).unwrap();
        let h = effective_channel(&wf, &ht).unwrap();
        assert!((frob(&h) - frob(&ht)).abs() < 1e-6);
    }
}

#[test]
fn noiseless_channel_is_exact_and_noise_has_set_power() {
    let ht = CMat::identity(100, 100);
    let s = CVec::from_element(100, C64::new(1.0, 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (r, s2) = apply_channel(&s, &ht, SnrDb::noiseless(), &mut rng).unwrap();
    assert_eq!((r.clone(), s2), (s.clone(), 0.0));

    let mut energy = 0.0;
    for _ in 0..100 {
        let (r, s2) = apply_channel(&s, &ht, SnrDb(0.0), &mut rng).unwrap();
        assert_eq!(s2, 1.0);
        energy += (&r - &s).norm_squared();
    }
    let per_sample = energy / 10_000.0;
    assert!((per_sample - 1.0).abs() < 0.05, "{per_sample}");

    let a = apply_channel(&s, &ht, SnrDb(5.0), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = apply_channel(&s, &ht, SnrDb(5.0), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn nmse_of_exact_estimate_is_zero() {
    let h = CMat::from_fn(3, 3, |i, j| C64::new(i as f64, j as f64 + 1.0));
    assert_eq!(nmse(&h, &h), 0.0);
    assert!((nmse(&h, &CMat::zeros(3, 3)) - 1.0).abs() < 1e-15);
}

fn path() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    (-1.0f64..1.0, -1.0f64..1.0, 0.0f64..8e-3, 0.998f64..1.002)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn superposition_over_paths(p1 in path(), p2 in path()) {
        let layout = SamplingLayout::new(32, 2e3, 12e3).unwrap();
        let a = PathSet::single(C64::new(p1.0, p1.1), p1.2, p1.3).unwrap();
        let b = PathSet::single(C64::new(p2.0, p2.1), p2.2, p2.3).unwrap();
        let ha: CMat = time_domain_channel_matrix(&a, &layout).unwrap();
        let hb: CMat = time_domain_channel_matrix(&b, &layout).unwrap();
        let hab: CMat = time_domain_channel_matrix(&a.union(&b), &layout).unwrap();
        prop_assert!(max_abs(&hab, &(ha + hb)) < 1e-12);
    }

    #[test]
    fn unit_scale_path_preserves_energy(p in path(), seed in 0u64..1000) {
        let layout = SamplingLayout::new(32, 2e3, 12e3).unwrap();
        let h = C64::new(p.0, p.1);
        let ht: CMat = time_domain_channel_matrix(&PathSet::single(h, p.2, 1.0).unwrap(), &layout).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: CVec = dsspread::channel::complex_noise(32, 1.0, &mut rng);
        prop_assert!(((&ht * &x).norm() - h.norm() * x.norm()).abs() < 1e-9 * x.norm().max(1.0));
    }
}
