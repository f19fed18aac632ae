use dsspread::crlb::{
    compute_bim, compute_crlb, crlb_from_gram, genie_theta, real_split, sensitivity_gram, CrlbContext, GENIE_ACTIVE,
    GENIE_INACTIVE,
};
use dsspread::dsgrid::{build_dictionary, build_grid, sample_on_grid_paths};
use dsspread::waveform::{build_transmitter_matrix, Constellation, WaveformConfig, WaveformKind};
use dsspread::{AtomContext, CMat, CVec, C64};
use nalgebra::{Cholesky, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cn(rng: &mut ChaCha8Rng) -> C64 {
    let n = rand_distr::StandardNormal;
    C64::new(rng.sample::<f64, _>(n), rng.sample::<f64, _>(n)) * std::f64::consts::FRAC_1_SQRT_2
}

fn pilot_ctx() -> AtomContext {
    let wf = build_transmitter_matrix::<f64>(&WaveformConfig::multicarrier(WaveformKind::Ofdm, 32, 1, 1e3, 14.5e3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let idx: Vec<usize> = (0..32).map(|_| rng.random_range(0..2)).collect();
    AtomContext::new(&wf, Constellation::bpsk().symbols(&idx)).unwrap()
}

#[test]
fn real_split_reproduces_complex_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = CMat::from_fn(5, 3, |_, _| cn(&mut rng));
    let x = CVec::from_fn(3, |_, _| cn(&mut rng));
    let ax = &a * &x;
    let xr = DVector::from_iterator(6, x.iter().map(|z| z.re).chain(x.iter().map(|z| z.im)));
    let got = real_split(&a) * xr;
    for i in 0..5 {
        assert!((got[i] - ax[i].re).abs() < 1e-14);
        assert!((got[i + 5] - ax[i].im).abs() < 1e-14);
    }
}

#[test]
fn real_information_is_symmetric_positive_definite() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = CMat::from_fn(6, 9, |_, _| cn(&mut rng));
    let phi = CrlbContext::new(&a, &[0.5; 9], 0.1).unwrap().real_bim();
    assert!((&phi - phi.transpose()).abs().max() < 1e-12);
    assert!(Cholesky::new(phi).is_some());
}

#[test]
fn scalar_and_prior_only_cases() {
    let a = CMat::from_element(1, 1, C64::new(0.6, -0.8) * 3.0);
    let bim = compute_bim(&a, &[2.5], 0.5).unwrap();
    assert!((bim[(0, 0)] - C64::new(9.0 / 0.5 + 2.5, 0.0)).norm() < 1e-12);

    let theta = [0.3, 4.0, 7.5];
    let bim = compute_bim(&CMat::zeros(4, 3), &theta, 1.0).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let expect = if i == j { theta[i] } else { 0.0 };
            assert!((bim[(i, j)] - C64::new(expect, 0.0)).norm() < 1e-15);
        }
    }
    assert!(compute_bim(&a, &[0.0], 1.0).is_err());
    assert!(compute_bim(&a, &[1.0], 0.0).is_err());
}

#[test]
fn huge_prior_on_a_coordinate_removes_its_contribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = CMat::from_fn(6, 4, |_, _| cn(&mut rng));
    let mut gram = nalgebra::DMatrix::from_element(4, 4, C64::new(0.0, 0.0));
    gram[(2, 2)] = C64::new(1.0, 0.0);
    let weak = crlb_from_gram(&a, &gram, &[1.0, 1.0, 1.0, 1.0], 1.0).unwrap().crlb_trace;
    let strong = crlb_from_gram(&a, &gram, &[1.0, 1.0, 1e12, 1.0], 1.0).unwrap().crlb_trace;
    assert!(weak > 0.0 && strong < 1e-11);
}

#[test]
fn single_identity_point_closed_form() {
    let ctx = pilot_ctx();
    let data = build_transmitter_matrix::<f64>(&WaveformConfig::multicarrier(WaveformKind::Ofdm, 16, 2, 10e3, 10e3)).unwrap();
    let grid = build_grid(0.0, 1.0, 1, 1).unwrap();
    let dict = build_dictionary(&grid, &ctx);
    let gram = sensitivity_gram(&grid, &data).unwrap();
    assert!((gram[(0, 0)] - C64::new(32.0, 0.0)).norm() < 1e-9);
    let (theta, s2) = (0.7, 0.05);
    let res = compute_crlb(&dict.a, &grid, &data, &[theta], s2).unwrap();
    let expect = 32.0 / (dict.a.column(0).norm_squared() / s2 + theta);
    assert!((res.crlb_trace - expect).abs() < 1e-9 * expect);
    let huge = compute_crlb(&dict.a, &grid, &data, &[1e15], s2).unwrap().crlb_trace;
    assert!(huge < 1e-12);
}

#[test]
fn genie_precisions() {
    let t = genie_theta(6, &[1, 4]);
    assert_eq!(t, vec![GENIE_INACTIVE, GENIE_ACTIVE, GENIE_INACTIVE, GENIE_INACTIVE, GENIE_ACTIVE, GENIE_INACTIVE]);
}

#[test]
fn desk_bound_falls_with_snr() {
    let ctx = pilot_ctx();
    let grid = build_grid(32e-3, 1.001, 50, 5).unwrap();
    let dict = build_dictionary(&grid, &ctx);
    let data = build_transmitter_matrix::<f64>(&WaveformConfig::multicarrier(WaveformKind::Ofdm, 64, 2, 10e3, 10e3)).unwrap();
    let gram = sensitivity_gram(&grid, &data).unwrap();
    let (idx, _) = sample_on_grid_paths(&grid, 5, &mut ChaCha8Rng::seed_from_u64(5));
    let theta = genie_theta(grid.len(), &idx);
    let power = dict.a.norm_squared() / (32.0 * 250.0);
    let bounds: Vec<f64> = [0.0, 5.0, 10.0, 15.0, 20.0]
        .iter()
        .map(|snr| crlb_from_gram(&dict.a, &gram, &theta, power / 10f64.powf(snr / 10.0)).unwrap().crlb_trace)
        .collect();
    assert!(bounds.windows(2).all(|w| w[1] < w[0]), "{bounds:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn recombined_information_matches_complex_form(seed in 0u64..100_000, rows in 1usize..20, cols in 1usize..12, s2 in 1e-3f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = CMat::from_fn(rows, cols, |_, _| cn(&mut rng));
        let theta: Vec<f64> = (0..cols).map(|_| rng.random_range(0.01..100.0)).collect();
        let bim = compute_bim(&a, &theta, s2).unwrap();
        let mut direct = a.adjoint() * &a / C64::new(s2, 0.0);
        for (l, t) in theta.iter().enumerate() {
            direct[(l, l)] += C64::new(*t, 0.0);
        }
        let scale = direct.iter().map(|z| z.norm()).fold(1.0, f64::max);
        prop_assert!((&bim - &direct).iter().all(|z| z.norm() < 1e-10 * scale));
    }

    #[test]
    fn more_noise_loosens_the_bound(seed in 0u64..100_000, s2 in 1e-3f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = CMat::from_fn(8, 5, |_, _| cn(&mut rng));
        let u = CMat::from_fn(12, 5, |_, _| cn(&mut rng));
        let gram = (u.adjoint() * &u).map(|z| z);
        let theta: Vec<f64> = (0..5).map(|_| rng.random_range(0.1..10.0)).collect();
        let lo = crlb_from_gram(&a, &gram, &theta, s2).unwrap().crlb_trace;
        let hi = crlb_from_gram(&a, &gram, &theta, 2.0 * s2).unwrap().crlb_trace;
        prop_assert!(hi > lo);
    }
}
