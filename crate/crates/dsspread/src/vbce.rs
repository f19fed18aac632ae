//! Variational-Bayes sparse channel estimation on a delay / log-scale grid.
//!
//! Model: `y = A h + w`, `h_l ~ CN(0, 1/δ_l)`, `w ~ CN(0, I/γ)` with Gamma
//! hyper-priors on `δ` and `γ`. The mean-field posterior is updated in the
//! order `h → δ → γ`, optionally followed by an off-grid refinement of the
//! strongest columns: a first-order linearisation (FVB) or a single Newton
//! step per coordinate (SVB).

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex;

use crate::channel::{effective_channel, time_domain_channel_matrix, PathSet};
use crate::dsgrid::{dictionary_matrix, AtomSource, Dictionary, DsGrid};
use crate::error::{Error, Result};
use crate::scalar::{adjoint_matmul, cis, cx_to_f64, matmul, re, to_f64, vnorm_sqr, CMatrix, CVector, Real};
use crate::waveform::WaveformMatrices;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Refine {
    #[default]
    None,
    Fvb,
    Svb,
}

impl Refine {
    pub fn name(self) -> &'static str {
        match self {
            Refine::None => "vb",
            Refine::Fvb => "fvb",
            Refine::Svb => "svb",
        }
    }
}

/// Frame in which delay derivatives are taken during refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DelayFrame {
    /// Derivatives of the atom itself.
    Plain,
    /// Derivatives in a frame rotating at the block's centre frequency, so the
    /// carrier rotation of a delay step is left to the gain.
    #[default]
    CoRotating,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VbConfig {
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    pub eps4: f64,
    pub eps_conv: f64,
    pub j_max: usize,
    pub threshold_frac: f64,
    pub refine: Refine,
    /// Pure-VB iterations before refinement starts.
    pub warmup: usize,
    pub frame: DelayFrame,
}

impl Default for VbConfig {
    fn default() -> Self {
        Self {
            eps1: 1e-6,
            eps2: 1e-6,
            eps3: 1e-6,
            eps4: 1e-6,
            eps_conv: 1e-3,
            j_max: 100,
            threshold_frac: 0.05,
            refine: Refine::None,
            warmup: 3,
            frame: DelayFrame::CoRotating,
        }
    }
}

impl VbConfig {
    pub fn with_refine(refine: Refine) -> Self {
        Self { refine, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let eps = [self.eps1, self.eps2, self.eps3, self.eps4, self.eps_conv];
        if eps.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::InvalidParameter("VB roots and threshold must be positive".into()));
        }
        if !(self.threshold_frac > 0.0 && self.threshold_frac <= 1.0) {
            return Err(Error::InvalidParameter(format!("threshold_frac = {}", self.threshold_frac)));
        }
        if self.j_max == 0 {
            return Err(Error::InvalidParameter("j_max must be positive".into()));
        }
        Ok(())
    }

    /// Size of the refinement set, `⌈frac·L⌉`.
    pub fn support_size(&self, l: usize) -> usize {
        ((self.threshold_frac * l as f64).ceil() as usize).clamp(1, l.max(1))
    }
}

/// How `Σ = (γ AᴴA + Δ)⁻¹` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceRoute {
    /// Inversion lemma when `M < L`, direct otherwise.
    #[default]
    Auto,
    Direct,
    Lemma,
}

#[derive(Debug, Clone)]
enum Factor<T: Real> {
    Direct { sigma: CMatrix<T> },
    /// `W = C⁻¹ A` with `C = I/γ + A Δ⁻¹ Aᴴ`.
    Lemma { w: CMatrix<T> },
}

/// Posterior of the sparse gain vector.
#[derive(Debug, Clone)]
pub struct Posterior<T: Real> {
    pub mu: CVector<T>,
    pub sigma_diag: Vec<f64>,
    /// `Tr(A Σ Aᴴ)`.
    pub trace_asa: f64,
    pub log_det_sigma: f64,
    /// Precisions the posterior was formed with.
    pub delta: Vec<f64>,
    pub gamma: f64,
    factor: Factor<T>,
}

const REG_COND: f64 = 1e12;

/// Cholesky of a Hermitian PD matrix, regularised by `1e-12·(tr/n)·I` when the
/// pivot-ratio condition estimate exceeds `1e12` or the factorisation fails.
fn regularised_cholesky<T: Real>(m: CMatrix<T>) -> Result<Cholesky<Complex<T>, nalgebra::Dyn>> {
    let n = m.nrows();
    let trace: f64 = (0..n).map(|i| to_f64(m[(i, i)].re)).sum();
    let mut jitter = 1e-12 * (trace / n as f64).max(f64::MIN_POSITIVE);
    let mut current = m.clone();
    for _ in 0..8 {
        if let Some(ch) = Cholesky::new(current.clone()) {
            let l = ch.l_dirty();
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for i in 0..n {
                let d = to_f64(l[(i, i)].re).abs();
                lo = lo.min(d);
                hi = hi.max(d);
            }
            if (hi / lo).powi(2) <= REG_COND || current != m {
                return Ok(ch);
            }
        }
        current = m.clone();
        for i in 0..n {
            current[(i, i)] += Complex::new(re(jitter), T::zero());
        }
        jitter *= 10.0;
    }
    Err(Error::Singular)
}

fn log_det_from_cholesky<T: Real>(ch: &Cholesky<Complex<T>, nalgebra::Dyn>) -> f64 {
    let l = ch.l_dirty();
    (0..l.nrows()).map(|i| 2.0 * to_f64(l[(i, i)].re).ln()).sum()
}

fn scale_columns<T: Real>(a: &CMatrix<T>, d: &[f64]) -> CMatrix<T> {
    let mut out = a.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.scale_mut(re(d[j]));
    }
    out
}

/// `μ = γ Σ Aᴴ y`, `Σ = (γ AᴴA + Δ)⁻¹`.
pub fn vb_update_h<T: Real>(a: &CMatrix<T>, y: &CVector<T>, delta: &[f64], gamma: f64) -> Result<Posterior<T>> {
    vb_update_h_with(a, y, delta, gamma, CovarianceRoute::Auto)
}

pub fn vb_update_h_with<T: Real>(
    a: &CMatrix<T>,
    y: &CVector<T>,
    delta: &[f64],
    gamma: f64,
    route: CovarianceRoute,
) -> Result<Posterior<T>> {
    let (m, l) = a.shape();
    if y.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: y.len() });
    }
    if delta.len() != l {
        return Err(Error::DimensionMismatch { expected: l, got: delta.len() });
    }
    if !(gamma > 0.0) || delta.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::InvalidParameter("precisions must be positive".into()));
    }
    let lemma = match route {
        CovarianceRoute::Auto => m < l,
        CovarianceRoute::Direct => false,
        CovarianceRoute::Lemma => true,
    };
    if lemma {
        let d: Vec<f64> = delta.iter().map(|x| 1.0 / x).collect();
        let ad = scale_columns(a, &d);
        let mut c = matmul(&ad, &a.adjoint());
        for i in 0..m {
            c[(i, i)] += Complex::new(re(1.0 / gamma), T::zero());
        }
        let ch = regularised_cholesky(c)?;
        let log_det_c = log_det_from_cholesky(&ch);
        let w = ch.solve(a);
        let u = ch.solve(y);
        let mu = ad.ad_mul(&u);
        let sigma_diag: Vec<f64> = (0..l)
            .map(|j| {
                let q: f64 = a.column(j).iter().zip(w.column(j).iter()).map(|(x, z)| to_f64((x.conj() * z).re)).sum();
                (d[j] - d[j] * d[j] * q).max(0.0)
            })
            .collect();
        let tr_cinv: f64 = {
            let cinv = ch.inverse();
            (0..m).map(|i| to_f64(cinv[(i, i)].re)).sum()
        };
        let trace_asa = ((m as f64 - tr_cinv / gamma) / gamma).max(0.0);
        let log_det_sigma = -delta.iter().map(|x| x.ln()).sum::<f64>() - m as f64 * gamma.ln() - log_det_c;
        Ok(Posterior {
            mu,
            sigma_diag,
            trace_asa,
            log_det_sigma,
            delta: delta.to_vec(),
            gamma,
            factor: Factor::Lemma { w },
        })
    } else {
        let aha = adjoint_matmul(a, a);
        let mut phi = aha.scale(re(gamma));
        for (i, di) in delta.iter().enumerate() {
            phi[(i, i)] += Complex::new(re(*di), T::zero());
        }
        let ch = regularised_cholesky(phi)?;
        let log_det_sigma = -log_det_from_cholesky(&ch);
        let sigma = ch.inverse();
        let mu = (&sigma * a.ad_mul(y)).scale(re(gamma));
        let sigma_diag = (0..l).map(|i| to_f64(sigma[(i, i)].re).max(0.0)).collect();
        let trace_asa: f64 = sigma.iter().zip(aha.transpose().iter()).map(|(s, g)| to_f64((*s * *g).re)).sum();
        Ok(Posterior {
            mu,
            sigma_diag,
            trace_asa: trace_asa.max(0.0),
            log_det_sigma,
            delta: delta.to_vec(),
            gamma,
            factor: Factor::Direct { sigma },
        })
    }
}

impl<T: Real> Posterior<T> {
    /// Columns `Σ[:, idx]` (`L × |idx|`); `a` must be the matrix the posterior was formed with.
    pub fn sigma_columns(&self, a: &CMatrix<T>, idx: &[usize]) -> CMatrix<T> {
        match &self.factor {
            Factor::Direct { sigma } => sigma.select_columns(idx),
            Factor::Lemma { w } => {
                let l = a.ncols();
                let mut out = CMatrix::zeros(l, idx.len());
                for (k, &p) in idx.iter().enumerate() {
                    let dp = 1.0 / self.delta[p];
                    let t = a.ad_mul(&w.column(p));
                    for i in 0..l {
                        out[(i, k)] = t[i].scale(re(-dp / self.delta[i]));
                    }
                    out[(p, k)] += Complex::new(re(dp), T::zero());
                }
                out
            }
        }
    }

    /// `A Σ[:, idx]` (`M × |idx|`).
    pub fn a_sigma_columns(&self, a: &CMatrix<T>, idx: &[usize]) -> CMatrix<T> {
        match &self.factor {
            Factor::Direct { sigma } => matmul(a, &sigma.select_columns(idx)),
            Factor::Lemma { w } => {
                let mut out = w.select_columns(idx);
                for (k, &p) in idx.iter().enumerate() {
                    out.column_mut(k).scale_mut(re(1.0 / (self.gamma * self.delta[p])));
                }
                out
            }
        }
    }

    /// Full `L × L` covariance.
    pub fn sigma_full(&self, a: &CMatrix<T>) -> CMatrix<T> {
        let all: Vec<usize> = (0..a.ncols()).collect();
        self.sigma_columns(a, &all)
    }

    /// `E|h_l|² = |μ_l|² + Σ_ll`.
    pub fn second_moment(&self, l: usize) -> f64 {
        to_f64(self.mu[l].norm_sqr()) + self.sigma_diag[l]
    }
}

/// `δ_l = (ε₁ + 1)/(ε₂ + |μ_l|² + Σ_ll)`.
pub fn vb_update_delta<T: Real>(post: &Posterior<T>, eps1: f64, eps2: f64) -> Vec<f64> {
    (0..post.mu.len()).map(|l| (eps1 + 1.0) / (eps2 + post.second_moment(l))).collect()
}

/// `E‖y − A h‖² = ‖y − Aμ‖² + Tr(A Σ Aᴴ)`.
pub fn expected_residual<T: Real>(post: &Posterior<T>, a: &CMatrix<T>, y: &CVector<T>) -> f64 {
    vnorm_sqr(&(y - a * &post.mu)) + post.trace_asa
}

/// `γ = (M + ε₃)/(ε₄ + E‖y − A h‖²)`.
pub fn vb_update_gamma<T: Real>(post: &Posterior<T>, a: &CMatrix<T>, y: &CVector<T>, eps3: f64, eps4: f64) -> f64 {
    (y.len() as f64 + eps3) / (eps4 + expected_residual(post, a, y))
}

/// Negative variational free energy up to an additive constant, for the
/// factorisation `q(h) = CN(μ, Σ)`, `q(δ_l) = Γ(ε₁+1, (ε₁+1)/δ_l)`,
/// `q(γ) = Γ(M+ε₃, (M+ε₃)/γ)`.
pub fn free_energy<T: Real>(
    post: &Posterior<T>,
    a: &CMatrix<T>,
    y: &CVector<T>,
    delta: &[f64],
    gamma: f64,
    cfg: &VbConfig,
) -> f64 {
    let a_delta = cfg.eps1 + 1.0;
    let a_gamma = y.len() as f64 + cfg.eps3;
    let r = expected_residual(post, a, y);
    let mut f = -gamma * (r + cfg.eps4) - a_gamma * (a_gamma / gamma).ln() + post.log_det_sigma;
    for (l, d) in delta.iter().enumerate() {
        f -= d * (post.second_moment(l) + cfg.eps2) + a_delta * (a_delta / d).ln();
    }
    f
}

/// Indices of the `⌈frac·L⌉` largest `|μ_l|`, strongest first; ties go to the lower index.
pub fn select_support<T: Real>(mu: &CVector<T>, threshold_frac: f64) -> Vec<usize> {
    let l = mu.len();
    if l == 0 {
        return Vec::new();
    }
    let k = ((threshold_frac * l as f64).ceil() as usize).clamp(1, l);
    let mags: Vec<f64> = mu.iter().map(|z| to_f64(z.norm_sqr())).collect();
    let mut idx: Vec<usize> = (0..l).collect();
    idx.sort_by(|&i, &j| mags[j].partial_cmp(&mags[i]).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j)));
    idx.truncate(k);
    idx
}

/// First-order refinement of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementStep {
    pub support: Vec<usize>,
    pub beta_tau: Vec<f64>,
    pub beta_omega: Vec<f64>,
    pub p_tau: DMatrix<f64>,
    pub p_omega: DMatrix<f64>,
    pub v_tau: Vec<f64>,
    pub v_omega: Vec<f64>,
}

/// `Re{(XᴴX)* ⊙ (μμᴴ + Σ)}` on the support.
fn p_matrix<T: Real>(x: &CMatrix<T>, mu_s: &[Complex<f64>], sigma_ss: &DMatrix<Complex<f64>>) -> DMatrix<f64> {
    let g = adjoint_matmul(x, x);
    let k = mu_s.len();
    DMatrix::from_fn(k, k, |p, q| {
        let gpq = cx_to_f64(g[(p, q)]).conj();
        (gpq * (mu_s[p] * mu_s[q].conj() + sigma_ss[(p, q)])).re
    })
}

/// Solves `P β = v`; falls back to one element-wise sweep, skipping zero
/// diagonals, when `P` is not safely invertible.
fn solve_beta(p: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let k = v.len();
    let vv = DVector::from_column_slice(v);
    let eig = nalgebra::SymmetricEigen::new(p.clone());
    let hi = eig.eigenvalues.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let lo = eig.eigenvalues.iter().fold(f64::INFINITY, |m, e| m.min(*e));
    if lo > 0.0 && hi / lo < REG_COND {
        if let Some(ch) = Cholesky::new(p.clone()) {
            return ch.solve(&vv).iter().copied().collect();
        }
    }
    let mut beta = vec![0.0; k];
    for i in 0..k {
        let d = p[(i, i)];
        if d.abs() <= f64::MIN_POSITIVE {
            continue;
        }
        let off: f64 = (0..k).filter(|j| *j != i).map(|j| p[(i, j)] * beta[j]).sum();
        beta[i] = (v[i] - off) / d;
    }
    beta
}

/// First-order off-grid corrections on `support`.
///
/// `b` and `c` hold `∂a/∂τ` and `∂a/∂ω` at the current support points. The
/// delay step uses the current residual; the scale step then uses the
/// dictionary moved by the fresh delay step. Both corrections are clamped so
/// the points stay within half a resolution cell of their lattice points.
pub fn fvb_refine<T: Real>(
    post: &Posterior<T>,
    a: &CMatrix<T>,
    support: &[usize],
    b: &CMatrix<T>,
    c: &CMatrix<T>,
    y: &CVector<T>,
    grid: &DsGrid,
) -> RefinementStep {
    let k = support.len();
    let sig_cols = post.sigma_columns(a, support);
    let sigma_ss = DMatrix::from_fn(k, k, |i, j| cx_to_f64(sig_cols[(support[i], j)]));
    let mu_s: Vec<Complex<f64>> = support.iter().map(|l| cx_to_f64(post.mu[*l])).collect();
    let resid = y - a * &post.mu;
    let asig = post.a_sigma_columns(a, support);

    // delay
    let p_tau = p_matrix(b, &mu_s, &sigma_ss);
    let v_tau: Vec<f64> = (0..k)
        .map(|p| {
            let bp = b.column(p);
            let br = cx_to_f64(bp.dotc(&resid));
            let bs = cx_to_f64(bp.dotc(&asig.column(p)));
            (mu_s[p].conj() * br - bs).re
        })
        .collect();
    let raw_tau = solve_beta(&p_tau, &v_tau);
    let beta_tau: Vec<f64> = support
        .iter()
        .zip(&raw_tau)
        .map(|(&l, bt)| grid.clamp_tau(l, grid.tau[l] + bt) - grid.tau[l])
        .collect();

    // scale, with Ã = A + B diag(β_τ) on the support
    let mut resid_w = resid.clone();
    let mut asig_w = asig.clone();
    for (p, bt) in beta_tau.iter().enumerate() {
        let col = b.column(p).scale(re(*bt));
        resid_w -= &col * post.mu[support[p]];
        for q in 0..k {
            let s = sig_cols[(support[p], q)];
            asig_w.column_mut(q).axpy(s, &col, Complex::new(T::one(), T::zero()));
        }
    }
    let p_omega = p_matrix(c, &mu_s, &sigma_ss);
    let v_omega: Vec<f64> = (0..k)
        .map(|p| {
            let cp = c.column(p);
            let cr = cx_to_f64(cp.dotc(&resid_w));
            let cs = cx_to_f64(cp.dotc(&asig_w.column(p)));
            (mu_s[p].conj() * cr - cs).re
        })
        .collect();
    let raw_omega = solve_beta(&p_omega, &v_omega);
    let beta_omega: Vec<f64> = support
        .iter()
        .zip(&raw_omega)
        .map(|(&l, bw)| grid.clamp_omega(l, grid.omega[l] + bw) - grid.omega[l])
        .collect();

    RefinementStep { support: support.to_vec(), beta_tau, beta_omega, p_tau, p_omega, v_tau, v_omega }
}

/// Moves the support points by the step and rebuilds their columns.
pub fn apply_refinement<T: Real, S: AtomSource<T> + ?Sized>(
    step: &RefinementStep,
    grid: &mut DsGrid,
    a: &mut CMatrix<T>,
    src: &S,
) {
    for (p, &l) in step.support.iter().enumerate() {
        grid.tau[l] = grid.clamp_tau(l, grid.tau[l] + step.beta_tau[p]);
        grid.omega[l] = grid.clamp_omega(l, grid.omega[l] + step.beta_omega[p]);
        a.set_column(l, &src.atom(grid.tau[l], grid.omega[l], grid.q_alpha));
    }
}

/// Outcome of one SVB sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SvbReport {
    pub accepted: usize,
    pub rejected: usize,
}

/// Half the first and second derivatives of `E‖y − A h‖²` along one column.
///
/// `resid = y − Aμ`, `a_sigma = A Σ[:,p]`.
pub fn newton_terms<T: Real>(
    resid: &CVector<T>,
    a_sigma: &CVector<T>,
    mu_p: Complex<T>,
    sigma_pp: f64,
    d1: &CVector<T>,
    d2: &CVector<T>,
) -> (f64, f64) {
    let r_d1 = cx_to_f64(resid.dotc(d1));
    let s_d1 = cx_to_f64(a_sigma.dotc(d1));
    let r_d2 = cx_to_f64(resid.dotc(d2));
    let s_d2 = cx_to_f64(a_sigma.dotc(d2));
    let mu = cx_to_f64(mu_p);
    let g1 = (-(r_d1 * mu) + s_d1).re;
    let g2 = (-(r_d2 * mu) + s_d2).re + (mu.norm_sqr() + sigma_pp) * vnorm_sqr(d1);
    (g1, g2)
}

/// Change of `E‖y − A h‖²` when column `p` moves by `da`.
fn objective_change<T: Real>(resid: &CVector<T>, a_sigma: &CVector<T>, mu_p: Complex<T>, sigma_pp: f64, da: &CVector<T>) -> f64 {
    let mu = cx_to_f64(mu_p);
    let r_da = cx_to_f64(resid.dotc(da));
    let s_da = cx_to_f64(a_sigma.dotc(da));
    let n = vnorm_sqr(da);
    -2.0 * (mu * r_da).re + mu.norm_sqr() * n + 2.0 * s_da.re + sigma_pp * n
}

/// Working copy of the posterior restricted to the support, kept consistent
/// while columns move during a sweep.
struct SweepState<T: Real> {
    resid: CVector<T>,
    mu: Vec<Complex<T>>,
    a_sigma: CMatrix<T>,
    sigma_ss: DMatrix<Complex<f64>>,
}

impl<T: Real> SweepState<T> {
    /// Column `p` of the support changes from `old` to `new`, while its gain
    /// is rotated by `e^{jθ}`.
    fn move_column(&mut self, p: usize, old: &CVector<T>, new: &CVector<T>, theta: f64) {
        let rot: Complex<T> = cis(theta);
        let rot64 = cx_to_f64(rot);
        let mu_old = self.mu[p];
        let mu_new = mu_old * rot;
        self.resid += old * mu_old - new * mu_new;
        let k = self.mu.len();
        let one = Complex::new(T::one(), T::zero());
        for q in 0..k {
            if q == p {
                continue;
            }
            let s_pq = self.sigma_ss[(p, q)];
            let s_new = rot64 * s_pq;
            let mut col = self.a_sigma.column_mut(q);
            col.axpy(crate::scalar::cx64::<T>(-s_pq), old, one);
            col.axpy(crate::scalar::cx64::<T>(s_new), new, one);
            self.sigma_ss[(p, q)] = s_new;
            self.sigma_ss[(q, p)] = s_new.conj();
        }
        let s_pp: T = re(self.sigma_ss[(p, p)].re);
        let mut col = self.a_sigma.column(p).into_owned();
        col.axpy(Complex::new(-s_pp, T::zero()), old, one);
        col *= rot.conj();
        col.axpy(Complex::new(s_pp, T::zero()), new, one);
        self.a_sigma.set_column(p, &col);
        self.mu[p] = mu_new;
    }
}

/// One Newton step per coordinate on the support, strongest first.
///
/// A step is taken only when the curvature is positive, the new point stays
/// in its half-resolution cell and the expected residual does not increase.
pub fn svb_refine<T: Real, S: AtomSource<T> + ?Sized>(
    post: &Posterior<T>,
    a: &mut CMatrix<T>,
    grid: &mut DsGrid,
    support: &[usize],
    src: &S,
    y: &CVector<T>,
    frame: DelayFrame,
) -> SvbReport {
    let k = support.len();
    let sig_cols = post.sigma_columns(a, support);
    let mut st = SweepState {
        resid: y - &*a * &post.mu,
        mu: support.iter().map(|l| post.mu[*l]).collect(),
        a_sigma: post.a_sigma_columns(a, support),
        sigma_ss: DMatrix::from_fn(k, k, |i, j| cx_to_f64(sig_cols[(support[i], j)])),
    };
    let f_ref = match frame {
        DelayFrame::Plain => 0.0,
        DelayFrame::CoRotating => src.reference_frequency(),
    };
    let mut report = SvbReport::default();
    let q_alpha = grid.q_alpha;
    for (p, &l) in support.iter().enumerate() {
        // delay
        let d = src.derivatives(grid.tau[l], grid.omega[l], q_alpha, f_ref);
        let s_pp = st.sigma_ss[(p, p)].re;
        let (g1, g2) = newton_terms(&st.resid, &st.a_sigma.column(p).into_owned(), st.mu[p], s_pp, &d.d_tau, &d.d2_tau);
        let old = a.column(l).into_owned();
        let mut moved = false;
        if g2 > 0.0 {
            let cand = grid.tau[l] - g1 / g2;
            if grid.in_cell(l, cand, grid.omega[l]) {
                let theta = 2.0 * std::f64::consts::PI * f_ref * (cand - grid.tau[l]);
                let new = src.atom(cand, grid.omega[l], q_alpha);
                let rot: Complex<T> = cis(theta);
                let eff = &new * rot;
                let da = &eff - &old;
                let change = objective_change(&st.resid, &st.a_sigma.column(p).into_owned(), st.mu[p], s_pp, &da);
                if change <= 0.0 {
                    st.move_column(p, &old, &new, theta);
                    a.set_column(l, &new);
                    grid.tau[l] = cand;
                    moved = true;
                }
            }
        }
        if moved {
            report.accepted += 1;
        } else {
            report.rejected += 1;
        }

        // scale
        let d = src.derivatives(grid.tau[l], grid.omega[l], q_alpha, 0.0);
        let (g1, g2) = newton_terms(&st.resid, &st.a_sigma.column(p).into_owned(), st.mu[p], s_pp, &d.d_omega, &d.d2_omega);
        let old = a.column(l).into_owned();
        let mut moved = false;
        if g2 > 0.0 {
            let cand = grid.omega[l] - g1 / g2;
            if grid.in_cell(l, grid.tau[l], cand) {
                let new = src.atom(grid.tau[l], cand, q_alpha);
                let da = &new - &old;
                let change = objective_change(&st.resid, &st.a_sigma.column(p).into_owned(), st.mu[p], s_pp, &da);
                if change <= 0.0 {
                    st.move_column(p, &old, &new, 0.0);
                    a.set_column(l, &new);
                    grid.omega[l] = cand;
                    moved = true;
                }
            }
        }
        if moved {
            report.accepted += 1;
        } else {
            report.rejected += 1;
        }
    }
    report
}

/// Estimator state carried between runs (warm starts).
#[derive(Debug, Clone)]
pub struct VbState<T: Real> {
    pub a: CMatrix<T>,
    pub grid: DsGrid,
    pub delta: Vec<f64>,
    pub gamma: f64,
    pub mu: CVector<T>,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Real> VbState<T> {
    /// `γ = 1`, `δ = 1./|Aᴴ y|`.
    pub fn initial(a: CMatrix<T>, grid: DsGrid, y: &CVector<T>) -> Result<Self> {
        if y.len() != a.nrows() {
            return Err(Error::DimensionMismatch { expected: a.nrows(), got: y.len() });
        }
        let corr = a.ad_mul(y);
        let floor = corr.iter().map(|z| to_f64(z.norm_sqr()).sqrt()).fold(0.0, f64::max) * 1e-12 + f64::MIN_POSITIVE;
        let delta = corr.iter().map(|z| 1.0 / to_f64(z.norm_sqr()).sqrt().max(floor)).collect();
        let l = a.ncols();
        Ok(Self { a, grid, delta, gamma: 1.0, mu: CVector::zeros(l), iterations: 0, converged: false })
    }
}

/// Thresholded estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate<T: Real> {
    pub support: Vec<usize>,
    pub h: Vec<Complex<T>>,
    pub tau: Vec<f64>,
    pub omega: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Noise precision estimate (`0` when the estimator has none).
    pub gamma: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Real> ChannelEstimate<T> {
    pub fn from_support(support: Vec<usize>, mu: &CVector<T>, grid: &DsGrid, gamma: f64) -> Self {
        Self {
            h: support.iter().map(|l| mu[*l]).collect(),
            tau: support.iter().map(|l| grid.tau[*l]).collect(),
            omega: support.iter().map(|l| grid.omega[*l]).collect(),
            alpha: support.iter().map(|l| grid.alpha(*l)).collect(),
            support,
            gamma,
            iterations: 0,
            converged: true,
        }
    }

    pub fn paths(&self) -> PathSet {
        PathSet { h: self.h.iter().map(|z| cx_to_f64(*z)).collect(), tau: self.tau.clone(), alpha: self.alpha.clone() }
    }

    /// `Ĥ = Gᴴ Ĥᵗ G` for the estimated paths.
    pub fn effective_channel(&self, waveform: &WaveformMatrices<T>) -> Result<CMatrix<T>> {
        let ht = time_domain_channel_matrix::<T>(&self.paths(), &waveform.layout)?;
        effective_channel(waveform, &ht)
    }

    /// `1/γ̂`.
    pub fn noise_variance(&self) -> f64 {
        1.0 / self.gamma
    }
}

/// Algorithm loop starting from `state`; returns the estimate and the final state.
pub fn run_ce_from<T: Real, S: AtomSource<T> + ?Sized>(
    y: &CVector<T>,
    mut state: VbState<T>,
    src: &S,
    cfg: &VbConfig,
) -> Result<(ChannelEstimate<T>, VbState<T>)> {
    cfg.validate()?;
    if y.len() != state.a.nrows() {
        return Err(Error::DimensionMismatch { expected: state.a.nrows(), got: y.len() });
    }
    let l = state.a.ncols();
    let refining = cfg.refine != Refine::None;
    let f_ref = match cfg.frame {
        DelayFrame::Plain => 0.0,
        DelayFrame::CoRotating => src.reference_frequency(),
    };
    let mut converged = false;
    let mut iterations = 0;
    for j in 0..cfg.j_max {
        iterations = j + 1;
        let post = vb_update_h(&state.a, y, &state.delta, state.gamma)?;
        let delta_new = vb_update_delta(&post, cfg.eps1, cfg.eps2);
        let gamma_new = vb_update_gamma(&post, &state.a, y, cfg.eps3, cfg.eps4);
        let refine_now = refining && j >= cfg.warmup;
        if refine_now {
            let support = select_support(&post.mu, cfg.threshold_frac);
            match cfg.refine {
                Refine::Fvb => {
                    let mut b = CMatrix::zeros(state.a.nrows(), support.len());
                    let mut c = b.clone();
                    for (p, &ls) in support.iter().enumerate() {
                        let d = src.derivatives(state.grid.tau[ls], state.grid.omega[ls], state.grid.q_alpha, f_ref);
                        b.set_column(p, &d.d_tau);
                        c.set_column(p, &d.d_omega);
                    }
                    let step = fvb_refine(&post, &state.a, &support, &b, &c, y, &state.grid);
                    apply_refinement(&step, &mut state.grid, &mut state.a, src);
                }
                Refine::Svb => {
                    svb_refine(&post, &mut state.a, &mut state.grid, &support, src, y, cfg.frame);
                }
                Refine::None => {}
            }
        }
        let num: f64 = delta_new.iter().zip(&state.delta).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let den: f64 = state.delta.iter().map(|d| d * d).sum::<f64>().sqrt();
        state.delta = delta_new;
        state.gamma = gamma_new;
        state.mu = post.mu;
        if num / den <= cfg.eps_conv && (!refining || j >= cfg.warmup) {
            converged = true;
            break;
        }
    }
    if refining {
        // columns moved after the last mean update
        state.mu = vb_update_h(&state.a, y, &state.delta, state.gamma)?.mu;
    }
    state.iterations = iterations;
    state.converged = converged;
    let support = select_support(&state.mu, cfg.threshold_frac);
    let mut est = ChannelEstimate::from_support(support, &state.mu, &state.grid, state.gamma);
    est.iterations = iterations;
    est.converged = converged;
    debug_assert_eq!(state.mu.len(), l);
    Ok((est, state))
}

/// Runs the estimator from the standard initialisation on a pilot dictionary.
pub fn run_ce<T: Real>(y: &CVector<T>, dict: &Dictionary<T>, cfg: &VbConfig) -> Result<ChannelEstimate<T>> {
    let state = VbState::initial(dict.a.clone(), dict.grid.clone(), y)?;
    run_ce_from(y, state, &dict.ctx, cfg).map(|(e, _)| e)
}

/// Same as [`run_ce`] for any atom source on `grid`.
pub fn run_ce_source<T: Real, S: AtomSource<T> + ?Sized>(
    y: &CVector<T>,
    grid: &DsGrid,
    src: &S,
    cfg: &VbConfig,
) -> Result<(ChannelEstimate<T>, VbState<T>)> {
    let a = dictionary_matrix(grid, src);
    run_ce_from(y, VbState::initial(a, grid.clone(), y)?, src, cfg)
}

/// Orthogonal matching pursuit with a least-squares refit after every pick.
pub fn omp_baseline<T: Real>(y: &CVector<T>, dict: &Dictionary<T>, k: usize) -> Result<ChannelEstimate<T>> {
    let a = &dict.a;
    let m = a.nrows();
    if k > m {
        return Err(Error::SparsityTooLarge { k, m });
    }
    if y.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: y.len() });
    }
    let norms: Vec<f64> = a.column_iter().map(|c| c.norm_squared()).map(|n| to_f64(n).sqrt()).collect();
    let mut support: Vec<usize> = Vec::with_capacity(k);
    let mut coef = CVector::<T>::zeros(0);
    let mut resid = y.clone();
    for _ in 0..k {
        let corr = a.ad_mul(&resid);
        let mut best = None;
        let mut best_v = -1.0;
        for (l, c) in corr.iter().enumerate() {
            if support.contains(&l) || norms[l] == 0.0 {
                continue;
            }
            let v = to_f64(c.norm_sqr()).sqrt() / norms[l];
            if v > best_v {
                best_v = v;
                best = Some(l);
            }
        }
        let Some(l) = best else { break };
        support.push(l);
        let sub = a.select_columns(&support);
        let gram = sub.ad_mul(&sub);
        let rhs = sub.ad_mul(y);
        coef = match Cholesky::new(gram.clone()) {
            Some(ch) => ch.solve(&rhs),
            None => gram.lu().solve(&rhs).ok_or(Error::Singular)?,
        };
        resid = y - &sub * &coef;
    }
    let mut mu = CVector::zeros(a.ncols());
    for (i, l) in support.iter().enumerate() {
        mu[*l] = coef[i];
    }
    let r2 = vnorm_sqr(&resid);
    let gamma = if r2 > 0.0 { m as f64 / r2 } else { 0.0 };
    Ok(ChannelEstimate::from_support(support, &mu, &dict.grid, gamma))
}
