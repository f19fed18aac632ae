//! Delay / log-scale grid, dictionary atoms and their analytic derivatives.
//!
//! The atom of a unit-gain path at `(τ, α)` observed through a block with
//! synthesis matrix `G` and known symbols `x` is
//! `a(τ, α) = √α Gᴴ Fᴴ Γ F^{·1/α} G x`. With `α = q_α^ω`, writing
//! `a = c(α)·Q(D_τ z(α))` where `Q = Gᴴ Fᴴ`, `c = α^{-1/2}`, `D_τ = diag(e^{-j2πfτ})`
//! and `z(α) = F^{·1/α} G x`, every derivative is a combination of
//! `Q(D_τ ⊙ φ(f) ⊙ z⁽ⁱ⁾)` terms.

use std::f64::consts::PI;

use std::fmt;
use std::sync::Arc;

use num_complex::Complex;
use rand::seq::index::sample;
use rand::Rng;
use rustfft::{Fft, FftPlanner};

use crate::channel::{cn01, PathSet, SamplingLayout};
use crate::error::{Error, Result};
use crate::scalar::{adjoint_matmul, cis, cx, cx64, cx_to_f64, re, CMatrix, CVector, Real};
use crate::waveform::WaveformMatrices;

/// Delay / log-scale sampling grid with its initial lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct DsGrid {
    pub n_tau: usize,
    pub m_alpha: usize,
    pub r_tau: f64,
    pub r_omega: f64,
    pub q_alpha: f64,
    /// Initial lattice, `l = n'·M_α + m'`.
    pub tau0: Vec<f64>,
    pub omega0: Vec<f64>,
    /// Current (possibly refined) points.
    pub tau: Vec<f64>,
    pub omega: Vec<f64>,
}

/// Lattice of `N_τ·M_α` points: `τ = n'·r_τ`, `ω = m' − (M_α−1)/2`,
/// with `q_α = α_max^{2/(M_α−1)}`.
pub fn build_grid(tau_max: f64, alpha_max: f64, n_tau: usize, m_alpha: usize) -> Result<DsGrid> {
    if n_tau == 0 {
        return Err(Error::InvalidDimension("N_tau must be at least 1".into()));
    }
    if m_alpha.is_multiple_of(2) {
        return Err(Error::InvalidDimension(format!("M_alpha must be odd, got {m_alpha}")));
    }
    if !(alpha_max >= 1.0) || !(tau_max >= 0.0) {
        return Err(Error::InvalidParameter(format!("tau_max = {tau_max}, alpha_max = {alpha_max}")));
    }
    let r_tau = tau_max / n_tau as f64;
    let q_alpha = if m_alpha == 1 { 1.0 } else { alpha_max.powf(2.0 / (m_alpha as f64 - 1.0)) };
    let half = (m_alpha as f64 - 1.0) / 2.0;
    let (tau0, omega0): (Vec<f64>, Vec<f64>) = (0..n_tau)
        .flat_map(|n| (0..m_alpha).map(move |m| (n as f64 * r_tau, m as f64 - half)))
        .unzip();
    Ok(DsGrid {
        n_tau,
        m_alpha,
        r_tau,
        r_omega: 1.0,
        q_alpha,
        tau: tau0.clone(),
        omega: omega0.clone(),
        tau0,
        omega0,
    })
}

impl DsGrid {
    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn alpha_of(&self, omega: f64) -> f64 {
        self.q_alpha.powf(omega)
    }

    pub fn alpha(&self, l: usize) -> f64 {
        self.alpha_of(self.omega[l])
    }

    /// Clamps a candidate delay into the half-resolution cell of lattice point `l`.
    pub fn clamp_tau(&self, l: usize, tau: f64) -> f64 {
        let h = 0.5 * self.r_tau;
        tau.clamp(self.tau0[l] - h, self.tau0[l] + h)
    }

    pub fn clamp_omega(&self, l: usize, omega: f64) -> f64 {
        let h = 0.5 * self.r_omega;
        omega.clamp(self.omega0[l] - h, self.omega0[l] + h)
    }

    pub fn in_cell(&self, l: usize, tau: f64, omega: f64) -> bool {
        (tau - self.tau0[l]).abs() <= 0.5 * self.r_tau + 1e-15
            && (omega - self.omega0[l]).abs() <= 0.5 * self.r_omega + 1e-12
    }

    /// Path set made of the given grid points and gains.
    pub fn paths(&self, idx: &[usize], h: &[Complex<f64>]) -> PathSet {
        PathSet {
            h: h.to_vec(),
            tau: idx.iter().map(|l| self.tau[*l]).collect(),
            alpha: idx.iter().map(|l| self.alpha(*l)).collect(),
        }
    }
}

/// `P` paths on distinct lattice points with `CN(0,1)` gains; returns the
/// indices alongside the path set.
pub fn sample_on_grid_paths<R: Rng + ?Sized>(grid: &DsGrid, p: usize, rng: &mut R) -> (Vec<usize>, PathSet) {
    let idx = sample(rng, grid.len(), p.min(grid.len())).into_vec();
    let h: Vec<Complex<f64>> = idx.iter().map(|_| cn01(rng)).collect();
    let paths = PathSet {
        h,
        tau: idx.iter().map(|l| grid.tau0[*l]).collect(),
        alpha: idx.iter().map(|l| grid.alpha_of(grid.omega0[*l])).collect(),
    };
    (idx, paths)
}

/// Bluestein chirp-z transform `z_k = Σ_n u_n e^{-j2π kn/(Mρ)}` for real `ρ`.
#[derive(Clone)]
struct ScaledDft {
    m: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for ScaledDft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScaledDft").field("m", &self.m).field("fft_len", &self.fwd.len()).finish()
    }
}

impl ScaledDft {
    fn new(m: usize) -> Self {
        let n = (2 * m - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        Self { m, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    /// Transforms every input with the same `ρ`.
    fn apply<const K: usize>(&self, inputs: [&[Complex<f64>]; K], rho: f64) -> [Vec<Complex<f64>>; K] {
        let m = self.m;
        let n = self.fwd.len();
        // kn = (k² + n² − (k−n)²)/2
        let chirp: Vec<Complex<f64>> =
            (0..m).map(|i| Complex::from_polar(1.0, -PI * (i * i) as f64 / (m as f64 * rho))).collect();
        let mut kernel = vec![Complex::new(0.0, 0.0); n];
        kernel[0] = chirp[0].conj();
        for i in 1..m {
            kernel[i] = chirp[i].conj();
            kernel[n - i] = chirp[i].conj();
        }
        self.fwd.process(&mut kernel);
        let scale = 1.0 / n as f64;
        inputs.map(|u| {
            let mut buf = vec![Complex::new(0.0, 0.0); n];
            for (b, (x, c)) in buf.iter_mut().zip(u.iter().zip(&chirp)) {
                *b = x * c;
            }
            self.fwd.process(&mut buf);
            for (b, k) in buf.iter_mut().zip(&kernel) {
                *b *= k;
            }
            self.inv.process(&mut buf);
            buf.truncate(m);
            buf.iter().zip(&chirp).map(|(b, c)| b * c * scale).collect()
        })
    }
}

/// Known block used to form atoms: synthesis matrix, symbols and layout.
#[derive(Debug, Clone)]
pub struct AtomContext<T: Real> {
    pub layout: SamplingLayout,
    pub g: CMatrix<T>,
    pub x: CVector<T>,
    /// `Q = Gᴴ Fᴴ`.
    q: CMatrix<T>,
    /// `G x / √M` in f64.
    v: Vec<Complex<f64>>,
    dft: ScaledDft,
    freqs: Vec<f64>,
    times: Vec<f64>,
}

/// Atom and its derivatives at one point.
#[derive(Debug, Clone)]
pub struct AtomDerivatives<T: Real> {
    pub a: CVector<T>,
    /// `∂a/∂τ`, `∂a/∂ω`.
    pub d_tau: CVector<T>,
    pub d_omega: CVector<T>,
    pub d2_tau: CVector<T>,
    pub d2_omega: CVector<T>,
}

impl<T: Real> AtomContext<T> {
    pub fn new(waveform: &WaveformMatrices<T>, x: CVector<T>) -> Result<Self> {
        if x.len() != waveform.symbol_count() {
            return Err(Error::DimensionMismatch { expected: waveform.symbol_count(), got: x.len() });
        }
        let layout = waveform.layout;
        let freqs = layout.freqs();
        let times = layout.times();
        let m = layout.m;
        let s = 1.0 / (m as f64).sqrt();
        let fh = CMatrix::<T>::from_fn(m, m, |n, k| cis::<T>(2.0 * PI * freqs[k] * times[n]).scale(re(s)));
        let q = adjoint_matmul(&waveform.g, &fh);
        let v = block_samples(&waveform.g, &x);
        Ok(Self { layout, g: waveform.g.clone(), x, q, v, dft: ScaledDft::new(m), freqs, times })
    }

    /// Same block with different known symbols.
    pub fn with_symbols(&self, x: CVector<T>) -> Result<Self> {
        if x.len() != self.g.ncols() {
            return Err(Error::DimensionMismatch { expected: self.g.ncols(), got: x.len() });
        }
        let v = block_samples(&self.g, &x);
        Ok(Self { x, v, ..self.clone() })
    }

    pub fn measurement_count(&self) -> usize {
        self.g.ncols()
    }

    /// Centre of the block's band; the reference for co-rotating delay derivatives.
    pub fn centre(&self) -> f64 {
        self.layout.centre()
    }

    /// `Σ_n t_nᵖ e^{-j2π f_k t_n/α} v_n/√M` for `p = 0..=order`.
    fn scaled_sums(&self, alpha: f64, order: usize) -> [Vec<Complex<T>>; 3] {
        let u0: Vec<Complex<f64>> = self
            .times
            .iter()
            .zip(&self.v)
            .map(|(t, v)| v * Complex::from_polar(1.0, (-2.0 * PI * self.layout.f_low * t / alpha).rem_euclid(2.0 * PI)))
            .collect();
        let conv = |z: Vec<Complex<f64>>| z.into_iter().map(cx64::<T>).collect::<Vec<_>>();
        if order == 0 {
            let [z0] = self.dft.apply([&u0], alpha);
            return [conv(z0), Vec::new(), Vec::new()];
        }
        let u1: Vec<Complex<f64>> = u0.iter().zip(&self.times).map(|(u, t)| u * t).collect();
        let u2: Vec<Complex<f64>> = u1.iter().zip(&self.times).map(|(u, t)| u * t).collect();
        let [z0, z1, z2] = self.dft.apply([&u0, &u1, &u2], alpha);
        [conv(z0), conv(z1), conv(z2)]
    }

    #[cfg(test)]
    fn scaled_sums_direct(&self, alpha: f64) -> [Vec<Complex<f64>>; 3] {
        let m = self.layout.m;
        let mut out = [vec![Complex::new(0.0, 0.0); m], vec![Complex::new(0.0, 0.0); m], vec![Complex::new(0.0, 0.0); m]];
        for (k, f) in self.freqs.iter().enumerate() {
            for (n, t) in self.times.iter().enumerate() {
                let e = self.v[n] * Complex::from_polar(1.0, -2.0 * PI * f * t / alpha);
                out[0][k] += e;
                out[1][k] += e * t;
                out[2][k] += e * t * t;
            }
        }
        out
    }

    fn project(&self, w: Vec<Complex<T>>) -> CVector<T> {
        &self.q * CVector::from_vec(w)
    }

    /// `a(τ, α)`.
    pub fn atom_alpha(&self, tau: f64, alpha: f64) -> CVector<T> {
        let [z, _, _] = self.scaled_sums(alpha, 0);
        let c = alpha.powf(-0.5);
        let w = self
            .freqs
            .iter()
            .zip(z)
            .map(|(f, zk)| zk * cis::<T>(-2.0 * PI * f * tau).scale(re(c)))
            .collect();
        self.project(w)
    }

    /// `a(τ, q^ω)`.
    pub fn atom(&self, tau: f64, omega: f64, q_alpha: f64) -> CVector<T> {
        self.atom_alpha(tau, q_alpha.powf(omega))
    }

    /// Atom plus first and second derivatives in `τ` and `ω`.
    ///
    /// `f_ref` shifts the delay derivatives into a frame rotating at `f_ref`:
    /// they become derivatives of `a(τ)·e^{j2π f_ref (τ − τ₀)}` at `τ₀`. With
    /// `f_ref = 0` they are the plain derivatives.
    pub fn derivatives(&self, tau: f64, omega: f64, q_alpha: f64, f_ref: f64) -> AtomDerivatives<T> {
        let alpha = q_alpha.powf(omega);
        let [s0, s1, s2] = self.scaled_sums(alpha, 2);
        let c = alpha.powf(-0.5);
        let c1 = -0.5 * alpha.powf(-1.5);
        let c2 = 0.75 * alpha.powf(-2.5);
        let m = self.layout.m;
        let mut a = Vec::with_capacity(m);
        let mut at = Vec::with_capacity(m);
        let mut att = Vec::with_capacity(m);
        let mut aa = Vec::with_capacity(m);
        let mut aaa = Vec::with_capacity(m);
        for (k, f) in self.freqs.iter().enumerate() {
            let d: Complex<T> = cis(-2.0 * PI * f * tau);
            // z, z', z'' in α
            let jw = Complex::new(0.0, 2.0 * PI * f);
            let z = s0[k];
            let z1 = s1[k] * cx::<T>(jw.re / (alpha * alpha), jw.im / (alpha * alpha));
            let jw2 = jw * jw / alpha.powi(4);
            let z2 = s2[k] * cx::<T>(jw2.re, jw2.im) + s1[k] * cx::<T>(-2.0 * jw.re / alpha.powi(3), -2.0 * jw.im / alpha.powi(3));
            let phi = Complex::new(0.0, -2.0 * PI * (f - f_ref));
            let phi2 = phi * phi;
            let dz = d * z;
            a.push(dz.scale(re(c)));
            at.push(dz * cx::<T>(c * phi.re, c * phi.im));
            att.push(dz * cx::<T>(c * phi2.re, c * phi2.im));
            aa.push(dz.scale(re(c1)) + (d * z1).scale(re(c)));
            aaa.push(dz.scale(re(c2)) + (d * z1).scale(re(2.0 * c1)) + (d * z2).scale(re(c)));
        }
        let lq = q_alpha.ln();
        let g1 = alpha * lq;
        let a_alpha = self.project(aa);
        let a_alpha2 = self.project(aaa);
        let d_omega = a_alpha.scale(re(g1));
        let d2_omega = a_alpha2.scale(re(g1 * g1)) + a_alpha.scale(re(alpha * lq * lq));
        AtomDerivatives {
            a: self.project(a),
            d_tau: self.project(at),
            d2_tau: self.project(att),
            d_omega,
            d2_omega,
        }
    }
}

fn block_samples<T: Real>(g: &CMatrix<T>, x: &CVector<T>) -> Vec<Complex<f64>> {
    let s = 1.0 / (g.nrows() as f64).sqrt();
    (g * x).iter().map(|z| cx_to_f64(*z) * s).collect()
}

/// Dictionary over a grid for one known block.
#[derive(Debug, Clone)]
pub struct Dictionary<T: Real> {
    pub a: CMatrix<T>,
    pub grid: DsGrid,
    pub ctx: AtomContext<T>,
}

/// Stacks `atom(τ_l, ω_l)` over the current grid points.
pub fn build_dictionary<T: Real>(grid: &DsGrid, ctx: &AtomContext<T>) -> Dictionary<T> {
    Dictionary { a: dictionary_matrix(grid, ctx), grid: grid.clone(), ctx: ctx.clone() }
}

impl<T: Real> Dictionary<T> {
    pub fn len(&self) -> usize {
        self.a.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.a.ncols() == 0
    }

    pub fn measurement_count(&self) -> usize {
        self.a.nrows()
    }
}

/// Anything that can produce atoms and their derivatives at a point.
pub trait AtomSource<T: Real> {
    fn measurement_count(&self) -> usize;
    fn atom(&self, tau: f64, omega: f64, q_alpha: f64) -> CVector<T>;
    fn derivatives(&self, tau: f64, omega: f64, q_alpha: f64, f_ref: f64) -> AtomDerivatives<T>;
    /// Frequency the co-rotating delay frame spins at.
    fn reference_frequency(&self) -> f64;
}

impl<T: Real> AtomSource<T> for AtomContext<T> {
    fn measurement_count(&self) -> usize {
        AtomContext::measurement_count(self)
    }

    fn atom(&self, tau: f64, omega: f64, q_alpha: f64) -> CVector<T> {
        AtomContext::atom(self, tau, omega, q_alpha)
    }

    fn derivatives(&self, tau: f64, omega: f64, q_alpha: f64, f_ref: f64) -> AtomDerivatives<T> {
        AtomContext::derivatives(self, tau, omega, q_alpha, f_ref)
    }

    fn reference_frequency(&self) -> f64 {
        self.centre()
    }
}

/// Vertical stack of several blocks observing the same paths.
#[derive(Debug, Clone)]
pub struct StackedContext<T: Real> {
    pub parts: Vec<AtomContext<T>>,
}

fn stack<T: Real>(parts: impl Iterator<Item = CVector<T>>, len: usize) -> CVector<T> {
    let mut out = Vec::with_capacity(len);
    for p in parts {
        out.extend(p.iter().copied());
    }
    CVector::from_vec(out)
}

impl<T: Real> AtomSource<T> for StackedContext<T> {
    fn measurement_count(&self) -> usize {
        self.parts.iter().map(|p| p.measurement_count()).sum()
    }

    fn atom(&self, tau: f64, omega: f64, q_alpha: f64) -> CVector<T> {
        let len = AtomSource::measurement_count(self);
        stack(self.parts.iter().map(|p| p.atom(tau, omega, q_alpha)), len)
    }

    fn derivatives(&self, tau: f64, omega: f64, q_alpha: f64, f_ref: f64) -> AtomDerivatives<T> {
        let len = AtomSource::measurement_count(self);
        let each: Vec<AtomDerivatives<T>> =
            self.parts.iter().map(|p| p.derivatives(tau, omega, q_alpha, f_ref)).collect();
        AtomDerivatives {
            a: stack(each.iter().map(|d| d.a.clone()), len),
            d_tau: stack(each.iter().map(|d| d.d_tau.clone()), len),
            d_omega: stack(each.iter().map(|d| d.d_omega.clone()), len),
            d2_tau: stack(each.iter().map(|d| d.d2_tau.clone()), len),
            d2_omega: stack(each.iter().map(|d| d.d2_omega.clone()), len),
        }
    }

    fn reference_frequency(&self) -> f64 {
        self.parts.first().map(|p| p.centre()).unwrap_or(0.0)
    }
}

/// Dictionary matrix for an arbitrary atom source over the grid's current points.
pub fn dictionary_matrix<T: Real, S: AtomSource<T> + ?Sized>(grid: &DsGrid, src: &S) -> CMatrix<T> {
    let mut a = CMatrix::zeros(src.measurement_count(), grid.len());
    for l in 0..grid.len() {
        a.set_column(l, &src.atom(grid.tau[l], grid.omega[l], grid.q_alpha));
    }
    a
}
