//! Bayesian Cramér-Rao bound on the effective-channel MSE for a grid model.
//!
//! With `h ~ CN(0, diag(θ)⁻¹)` the complex gains are split into real and
//! imaginary parts, the real Bayesian information matrix is formed and then
//! recombined into the complex one. The bound on `E‖vec(H − Ĥ)‖²` is
//! `tr(U Φ⁻¹ Uᴴ)` where column `l` of `U` is the vectorised effective channel
//! of a unit path at grid point `l`.

use nalgebra::{Cholesky, DMatrix};
use num_complex::Complex;

use crate::channel::{effective_channel, time_domain_channel_matrix, PathSet};
use crate::dsgrid::DsGrid;
use crate::error::{Error, Result};
use crate::scalar::{adjoint_matmul, cx_to_f64, CMatrix, Real};
use crate::waveform::WaveformMatrices;

type C64 = Complex<f64>;

/// Prior precision of an active grid point in the genie bound.
pub const GENIE_ACTIVE: f64 = 1.0;
/// Prior precision of an inactive grid point in the genie bound.
pub const GENIE_INACTIVE: f64 = 1e6;

/// `[[Re A, −Im A], [Im A, Re A]]`.
pub fn real_split<T: Real>(a: &CMatrix<T>) -> DMatrix<f64> {
    let (m, l) = a.shape();
    DMatrix::from_fn(2 * m, 2 * l, |i, j| {
        let z = cx_to_f64(a[(i % m, j % l)]);
        match (i < m, j < l) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

fn check_theta(theta: &[f64], l: usize) -> Result<()> {
    if theta.len() != l {
        return Err(Error::DimensionMismatch { expected: l, got: theta.len() });
    }
    if let Some(t) = theta.iter().find(|t| !(**t > 0.0)) {
        return Err(Error::InvalidParameter(format!("prior precision {t} must be positive")));
    }
    Ok(())
}

/// Real-field pieces of the bound.
#[derive(Debug, Clone)]
pub struct CrlbContext {
    pub a_r: DMatrix<f64>,
    /// Diagonal of `P_hR = diag([2θ; 2θ])`.
    pub p_hr: Vec<f64>,
    /// `σ_p²/2`.
    pub sigma_r2: f64,
}

impl CrlbContext {
    pub fn new<T: Real>(a: &CMatrix<T>, theta: &[f64], sigma_p2: f64) -> Result<Self> {
        check_theta(theta, a.ncols())?;
        if !(sigma_p2 > 0.0) {
            return Err(Error::InvalidParameter(format!("sigma_p2 = {sigma_p2} must be positive")));
        }
        let p_hr = theta.iter().chain(theta).map(|t| 2.0 * t).collect();
        Ok(Self { a_r: real_split(a), p_hr, sigma_r2: sigma_p2 / 2.0 })
    }

    /// `Φ_hR = A_Rᵀ A_R/σ_R² + P_hR`.
    pub fn real_bim(&self) -> DMatrix<f64> {
        let mut phi = self.a_r.tr_mul(&self.a_r) / self.sigma_r2;
        for (i, p) in self.p_hr.iter().enumerate() {
            phi[(i, i)] += p;
        }
        phi
    }

    /// `¼(Φ_RR + Φ_II) + (j/4)(Φ_IR − Φ_RI)`, with `Φ_IR` the bottom-left block.
    pub fn complex_bim(&self) -> DMatrix<C64> {
        let phi = self.real_bim();
        let l = phi.nrows() / 2;
        DMatrix::from_fn(l, l, |i, j| {
            let re = phi[(i, j)] + phi[(i + l, j + l)];
            let im = phi[(i + l, j)] - phi[(i, j + l)];
            C64::new(re, im) * 0.25
        })
    }
}

/// Complex Bayesian information matrix of the gains.
pub fn compute_bim<T: Real>(a: &CMatrix<T>, theta: &[f64], sigma_p2: f64) -> Result<DMatrix<C64>> {
    Ok(CrlbContext::new(a, theta, sigma_p2)?.complex_bim())
}

/// `U` with columns `vec(Gᴴ Hᵗ_l G)` for unit paths at the grid's current points.
pub fn sensitivity_matrix<T: Real>(grid: &DsGrid, waveform: &WaveformMatrices<T>) -> Result<CMatrix<T>> {
    let md = waveform.symbol_count();
    let mut u = CMatrix::zeros(md * md, grid.len());
    for l in 0..grid.len() {
        let path = PathSet::single(C64::new(1.0, 0.0), grid.tau[l], grid.alpha(l))?;
        let ht = time_domain_channel_matrix::<T>(&path, &waveform.layout)?;
        let h = effective_channel(waveform, &ht)?;
        u.column_mut(l).copy_from_slice(h.as_slice());
    }
    Ok(u)
}

/// `UᴴU`, which is all the bound needs from `U`.
pub fn sensitivity_gram<T: Real>(grid: &DsGrid, waveform: &WaveformMatrices<T>) -> Result<DMatrix<C64>> {
    let u = sensitivity_matrix(grid, waveform)?;
    Ok(adjoint_matmul(&u, &u).map(cx_to_f64))
}

#[derive(Debug, Clone)]
pub struct CrlbResult {
    pub crlb_trace: f64,
    pub bim: DMatrix<C64>,
}

/// `tr(U Φ⁻¹ Uᴴ) = Σ_lm [Φ⁻¹]_lm [UᴴU]_ml`.
pub fn crlb_from_gram<T: Real>(a: &CMatrix<T>, gram: &DMatrix<C64>, theta: &[f64], sigma_p2: f64) -> Result<CrlbResult> {
    let bim = compute_bim(a, theta, sigma_p2)?;
    if gram.shape() != bim.shape() {
        return Err(Error::DimensionMismatch { expected: bim.nrows(), got: gram.nrows() });
    }
    let inv = Cholesky::new(bim.clone()).ok_or(Error::Singular)?.inverse();
    let crlb_trace = inv.iter().zip(gram.transpose().iter()).map(|(p, g)| (p * g).re).sum::<f64>();
    Ok(CrlbResult { crlb_trace, bim })
}

/// Bound for dictionary `a` (pilot block) and data waveform over `grid`.
pub fn compute_crlb<T: Real>(
    a: &CMatrix<T>,
    grid: &DsGrid,
    waveform: &WaveformMatrices<T>,
    theta: &[f64],
    sigma_p2: f64,
) -> Result<CrlbResult> {
    let gram = sensitivity_gram(grid, waveform)?;
    crlb_from_gram(a, &gram, theta, sigma_p2)
}

/// Genie precisions: `1` on the true support, `1e6` elsewhere.
pub fn genie_theta(l: usize, support: &[usize]) -> Vec<f64> {
    let mut theta = vec![GENIE_INACTIVE; l];
    for &s in support {
        theta[s] = GENIE_ACTIVE;
    }
    theta
}
