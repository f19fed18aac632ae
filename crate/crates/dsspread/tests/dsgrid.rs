use std::f64::consts::PI;

use dsspread::channel::{time_domain_channel_matrix, PathSet};
use dsspread::dsgrid::{
    build_dictionary, build_grid, dictionary_matrix, sample_on_grid_paths, AtomSource, StackedContext,
};
use dsspread::waveform::{build_transmitter_matrix, Constellation, WaveformConfig, WaveformKind};
use dsspread::{AtomContext, CVec, Error, Waveform, C64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pilot(kind: WaveformKind, m: usize, n: usize, seed: u64) -> (Waveform, AtomContext) {
    let (b, f_low) = if m * n <= 32 { (1e3, 14.5e3) } else { (10e3, 10e3) };
    let wf = build_transmitter_matrix::<f64>(&WaveformConfig::multicarrier(kind, m, n, b, f_low)).unwrap();
    let c = Constellation::qpsk();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = (0..wf.symbol_count()).map(|_| rng.random_range(0..4)).collect();
    let ctx = AtomContext::new(&wf, c.symbols(&idx)).unwrap();
    (wf, ctx)
}

/// `Gᴴ Hᵗ G x` for a single unit path: the atom computed through the channel module.
fn channel_atom(wf: &Waveform, x: &CVec, tau: f64, alpha: f64) -> CVec {
    let ht = time_domain_channel_matrix::<f64>(&PathSet::single(C64::new(1.0, 0.0), tau, alpha).unwrap(), &wf.layout).unwrap();
    wf.demodulate(&(ht * wf.modulate(x).unwrap())).unwrap()
}

fn rel(a: &CVec, b: &CVec) -> f64 {
    (a - b).norm() / b.norm()
}

#[test]
fn desk_grid_resolution() {
    let g = build_grid(32e-3, 1.001, 50, 5).unwrap();
    assert_eq!(g.len(), 250);
    assert!((g.r_tau - 0.64e-3).abs() < 1e-15);
    assert!((g.q_alpha - 1.0005).abs() < 1e-6);
    assert!((g.q_alpha.powi(2) - 1.001).abs() < 1e-12);
    assert_eq!((g.tau[7], g.omega[7]), (1.0 * g.r_tau, 0.0));
}

#[test]
fn small_grids_enumerate_directly() {
    let g = build_grid(1e-3, 1.001, 4, 1).unwrap();
    assert!(g.omega.iter().all(|w| *w == 0.0));
    let g = build_grid(1e-3, 1.001, 1, 3).unwrap();
    let pts: Vec<(f64, f64)> = g.tau.iter().copied().zip(g.omega.iter().copied()).collect();
    assert_eq!(pts, vec![(0.0, -1.0), (0.0, 0.0), (0.0, 1.0)]);
    assert!(matches!(build_grid(1e-3, 1.001, 4, 4), Err(Error::InvalidDimension(_))));
    assert!(build_grid(1e-3, 1.001, 0, 3).is_err());
}

#[test]
fn zero_atom_is_the_pilot() {
    let (_, ctx) = pilot(WaveformKind::Ofdm, 32, 1, 1);
    assert!((ctx.atom(0.0, 0.0, 1.0005) - &ctx.x).norm() < 1e-9);
}

#[test]
fn one_sample_atom_matches_channel_module() {
    let (wf, ctx) = pilot(WaveformKind::Ofdm, 32, 1, 2);
    let a = ctx.atom(1.0 / wf.layout.bandwidth, 0.0, 1.0005);
    assert!(rel(&a, &channel_atom(&wf, &ctx.x, 1.0 / wf.layout.bandwidth, 1.0)) < 1e-9);
}

#[test]
fn desk_dictionary_shape_and_columns() {
    let (_, ctx) = pilot(WaveformKind::Ofdm, 32, 1, 3);
    let grid = build_grid(32e-3, 1.001, 50, 5).unwrap();
    let dict = build_dictionary(&grid, &ctx);
    assert_eq!(dict.a.shape(), (32, 250));
    for l in [0, 17, 249] {
        assert_eq!(dict.a.column(l).into_owned(), ctx.atom(grid.tau[l], grid.omega[l], grid.q_alpha));
    }
}

#[test]
fn single_point_grid_gives_pilot_column() {
    let (_, ctx) = pilot(WaveformKind::Ofdm, 32, 1, 4);
    let grid = build_grid(0.0, 1.0, 1, 1).unwrap();
    let dict = build_dictionary(&grid, &ctx);
    assert_eq!(dict.a.ncols(), 1);
    assert!((dict.a.column(0) - &ctx.x).norm() < 1e-9);
}

#[test]
fn permuting_grid_permutes_columns() {
    let (_, ctx) = pilot(WaveformKind::Ocdm, 16, 2, 5);
    let grid = build_grid(8e-3, 1.001, 6, 3).unwrap();
    let perm: Vec<usize> = (0..grid.len()).rev().collect();
    let mut shuffled = grid.clone();
    shuffled.tau = perm.iter().map(|i| grid.tau[*i]).collect();
    shuffled.omega = perm.iter().map(|i| grid.omega[*i]).collect();
    let a = dictionary_matrix(&grid, &ctx);
    let b = dictionary_matrix(&shuffled, &ctx);
    for (j, i) in perm.iter().enumerate() {
        assert_eq!(b.column(j), a.column(*i));
    }
}

#[test]
fn first_derivatives_at_origin_match_differences() {
    let (_, ctx) = pilot(WaveformKind::Ofdm, 32, 1, 6);
    let q = 1.0005;
    let d = ctx.derivatives(0.0, 0.0, q, 0.0);
    let h = 1e-9;
    let fd_tau = (ctx.atom(h, 0.0, q) - ctx.atom(-h, 0.0, q)) / C64::new(2.0 * h, 0.0);
    assert!(rel(&fd_tau, &d.d_tau) < 1e-5, "{}", rel(&fd_tau, &d.d_tau));
    let h = 1e-7;
    let fd_omega = (ctx.atom(0.0, h, q) - ctx.atom(0.0, -h, q)) / C64::new(2.0 * h, 0.0);
    assert!(rel(&fd_omega, &d.d_omega) < 1e-5, "{}", rel(&fd_omega, &d.d_omega));
}

#[test]
fn unit_scale_base_has_no_scale_derivative() {
    let (_, ctx) = pilot(WaveformKind::Ofdm, 32, 1, 7);
    let d = ctx.derivatives(3e-3, 1.0, 1.0, 0.0);
    assert_eq!(d.d_omega.norm(), 0.0);
    assert_eq!(d.d2_omega.norm(), 0.0);
    let small = ctx.derivatives(3e-3, 1.0, 1.0 + 1e-9, 0.0).d_omega.norm();
    let larger = ctx.derivatives(3e-3, 1.0, 1.0 + 1e-6, 0.0).d_omega.norm();
    assert!(small < larger * 1e-2);
}

#[test]
fn rotating_frame_adds_carrier_term() {
    let (_, ctx) = pilot(WaveformKind::Ofdm, 32, 1, 8);
    let (tau, w, q, f) = (5.3e-3, 0.4, 1.0005, ctx.centre());
    let plain = ctx.derivatives(tau, w, q, 0.0);
    let rot = ctx.derivatives(tau, w, q, f);
    let j = C64::new(0.0, 2.0 * PI * f);
    assert!(rel(&rot.d_tau, &(&plain.d_tau + &plain.a * j)) < 1e-10);
}

#[test]
fn on_grid_channel_is_reconstructed_by_the_dictionary() {
    let (wf, ctx) = pilot(WaveformKind::Ofdm, 32, 1, 9);
    let grid = build_grid(32e-3, 1.001, 50, 5).unwrap();
    let dict = build_dictionary(&grid, &ctx);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (idx, paths) = sample_on_grid_paths(&grid, 5, &mut rng);
    let mut h = CVec::zeros(grid.len());
    for (l, g) in idx.iter().zip(&paths.h) {
        h[*l] = *g;
    }
    let ht = time_domain_channel_matrix::<f64>(&paths, &wf.layout).unwrap();
    let y = wf.demodulate(&(ht * wf.modulate(&ctx.x).unwrap())).unwrap();
    assert!((&dict.a * h - &y).norm() < 1e-8 * y.norm().max(1.0));
}

#[test]
fn stacked_context_concatenates_blocks() {
    let (_, p) = pilot(WaveformKind::Ofdm, 32, 1, 11);
    let (_, d) = pilot(WaveformKind::Otfs, 16, 4, 12);
    let s = StackedContext { parts: vec![p.clone(), d.clone()] };
    assert_eq!(AtomSource::measurement_count(&s), 96);
    let a = AtomSource::atom(&s, 2e-3, -0.5, 1.0005);
    let mut expect: Vec<C64> = p.atom(2e-3, -0.5, 1.0005).iter().copied().collect();
    expect.extend(d.atom(2e-3, -0.5, 1.0005).iter());
    assert_eq!(a, CVec::from_vec(expect));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn atom_matches_channel_route(tau in 0.0f64..32e-3, omega in -2.5f64..2.5, seed in 0u64..100) {
        let (wf, ctx) = pilot(WaveformKind::Ofdm, 32, 1, seed);
        let q = 1.0005;
        let a = ctx.atom(tau, omega, q);
        prop_assert!(rel(&a, &channel_atom(&wf, &ctx.x, tau, q.powf(omega))) < 1e-9);
    }

    #[test]
    fn derivative_differences_agree_at_two_steps(tau in 0.0f64..32e-3, omega in -2.0f64..2.0) {
        let (_, ctx) = pilot(WaveformKind::Ofdm, 64, 2, 13);
        let q = 1.0005;
        let d = ctx.derivatives(tau, omega, q, 0.0);
        for h in [2e-8, 4e-8] {
            let fd = (ctx.atom(tau + h, omega, q) - ctx.atom(tau - h, omega, q)) / C64::new(2.0 * h, 0.0);
            prop_assert!(rel(&fd, &d.d_tau) < 1e-5);
        }
        for h in [5e-4, 1e-3] {
            let fd = (ctx.atom(tau, omega + h, q) - ctx.atom(tau, omega - h, q)) / C64::new(2.0 * h, 0.0);
            prop_assert!(rel(&fd, &d.d_omega) < 1e-5);
        }
    }

    #[test]
    fn clamping_keeps_points_in_their_cells(l in 0usize..250, dt in -1e-2f64..1e-2, dw in -3.0f64..3.0) {
        let g = build_grid(32e-3, 1.001, 50, 5).unwrap();
        let t = g.clamp_tau(l, g.tau0[l] + dt);
        let w = g.clamp_omega(l, g.omega0[l] + dw);
        prop_assert!(g.in_cell(l, t, w));
        let a = g.alpha_of(w);
        prop_assert!(a >= 1.0 / 1.001 / g.q_alpha.sqrt() - 1e-12 && a <= 1.001 * g.q_alpha.sqrt() + 1e-12);
    }
}
