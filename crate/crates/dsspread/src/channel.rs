//! Delay-scale spread channels.
//!
//! A path with gain `h`, delay `τ` and scale `α` maps the sampled block `s`
//! to `h·√α·Fᴴ Γ F^{·1/α} s`, where `F[k,n] = e^{-j2π f_k t_n}/√M`,
//! `Γ = diag(e^{-j2π f τ})/α` and `F^{·1/α}` divides every exponent by `α`.
//! The sum over subcarriers is a geometric series, so each entry of the
//! time-domain matrix has a closed Dirichlet-kernel form and the matrix is
//! assembled in `O(P·M²)` without any matrix products.

use std::f64::consts::PI;

use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::{adjoint_matmul, matmul, re, to_f64, vnorm_sqr, CMatrix, CVector, Real};
use crate::waveform::WaveformMatrices;

/// Sampling grid of one block: `f = f_L + (B/M)·k`, `t = n/B`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingLayout {
    pub m: usize,
    pub bandwidth: f64,
    pub f_low: f64,
}

impl SamplingLayout {
    pub fn new(m: usize, bandwidth: f64, f_low: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidDimension("sampling layout needs M ≥ 1".into()));
        }
        if !(bandwidth > 0.0) || !f_low.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "bandwidth {bandwidth} / f_L {f_low} out of range"
            )));
        }
        Ok(Self { m, bandwidth, f_low })
    }

    /// Layout for a block of nominal duration `ts`; `M = round(B·Ts)` and the
    /// sample step is snapped to `1/B` so that `F` stays unitary.
    pub fn from_duration(bandwidth: f64, ts: f64, f_low: f64) -> Result<Self> {
        let m = (bandwidth * ts).round();
        if !(m >= 1.0) {
            return Err(Error::InvalidDimension(format!("B·Ts = {} rounds to zero", bandwidth * ts)));
        }
        Self::new(m as usize, bandwidth, f_low)
    }

    /// Block duration `M/B`.
    pub fn ts(&self) -> f64 {
        self.m as f64 / self.bandwidth
    }

    pub fn spacing(&self) -> f64 {
        self.bandwidth / self.m as f64
    }

    pub fn freqs(&self) -> Vec<f64> {
        let df = self.spacing();
        (0..self.m).map(|k| self.f_low + df * k as f64).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.m).map(|n| n as f64 / self.bandwidth).collect()
    }

    /// Centre of the occupied band, `f_L + (M−1)·Δf/2`.
    pub fn centre(&self) -> f64 {
        self.f_low + 0.5 * (self.m as f64 - 1.0) * self.spacing()
    }
}

/// Scale-factor distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScaleModel {
    /// `α ~ U[1/α_max, α_max]`.
    #[default]
    Uniform,
    /// `ln α ~ U[−ln α_max, ln α_max]`.
    LogUniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSpec {
    pub tau_max: f64,
    pub alpha_max: f64,
    pub paths: usize,
    pub scale_model: ScaleModel,
}

impl ChannelSpec {
    pub fn new(tau_max: f64, alpha_max: f64, paths: usize, scale_model: ScaleModel) -> Result<Self> {
        if !(alpha_max >= 1.0) {
            return Err(Error::InvalidParameter(format!("alpha_max = {alpha_max} < 1")));
        }
        if !(tau_max >= 0.0) {
            return Err(Error::InvalidParameter(format!("tau_max = {tau_max} < 0")));
        }
        if paths == 0 {
            return Err(Error::InvalidDimension("channel needs at least one path".into()));
        }
        Ok(Self { tau_max, alpha_max, paths, scale_model })
    }
}

/// Physical multipath description.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathSet {
    pub h: Vec<Complex<f64>>,
    pub tau: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl PathSet {
    pub fn new(h: Vec<Complex<f64>>, tau: Vec<f64>, alpha: Vec<f64>) -> Result<Self> {
        if h.len() != tau.len() || h.len() != alpha.len() {
            return Err(Error::DimensionMismatch { expected: h.len(), got: tau.len().min(alpha.len()) });
        }
        if let Some(a) = alpha.iter().find(|a| !(**a > 0.0)) {
            return Err(Error::InvalidParameter(format!("scale factor {a} must be positive")));
        }
        Ok(Self { h, tau, alpha })
    }

    pub fn single(h: Complex<f64>, tau: f64, alpha: f64) -> Result<Self> {
        Self::new(vec![h], vec![tau], vec![alpha])
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Complex<f64>, f64, f64)> + '_ {
        self.h.iter().zip(&self.tau).zip(&self.alpha).map(|((h, t), a)| (*h, *t, *a))
    }

    /// Concatenation of two path sets.
    pub fn union(&self, other: &PathSet) -> PathSet {
        let mut out = self.clone();
        out.h.extend_from_slice(&other.h);
        out.tau.extend_from_slice(&other.tau);
        out.alpha.extend_from_slice(&other.alpha);
        out
    }
}

pub(crate) fn cn01<R: Rng + ?Sized>(rng: &mut R) -> Complex<f64> {
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    Complex::new(a, b) * std::f64::consts::FRAC_1_SQRT_2
}

/// Draws `h ~ CN(0,1)`, `τ ~ U(0, τ_max)` and `α` per the scale model.
pub fn sample_paths<R: Rng + ?Sized>(spec: &ChannelSpec, rng: &mut R) -> PathSet {
    let mut paths = PathSet::default();
    for _ in 0..spec.paths {
        let h = cn01(rng);
        let tau = spec.tau_max * rng.random::<f64>();
        let u: f64 = rng.random();
        let alpha = match spec.scale_model {
            ScaleModel::Uniform => {
                let lo = 1.0 / spec.alpha_max;
                lo + (spec.alpha_max - lo) * u
            }
            ScaleModel::LogUniform => {
                let l = spec.alpha_max.ln();
                (-l + 2.0 * l * u).exp()
            }
        };
        paths.h.push(h);
        paths.tau.push(tau);
        paths.alpha.push(alpha);
    }
    paths
}

/// `Σ_k e^{j2π f_k x}` over the layout's subcarriers.
#[inline]
fn dirichlet(x: f64, m: f64, df: f64, f_mid: f64) -> Complex<f64> {
    let a = PI * df * x;
    let s = a.sin();
    let ratio = if s.abs() < 1e-9 { m * (m * a).cos() / a.cos() } else { (m * a).sin() / s };
    let p = (2.0 * PI * f_mid * x).rem_euclid(2.0 * PI);
    Complex::from_polar(ratio, p)
}

/// Time-domain matrix `Hᵗ = Σ_p h_p √α_p Fᴴ Γ_p F^{·1/α_p}`.
pub fn time_domain_channel_matrix<T: Real>(paths: &PathSet, layout: &SamplingLayout) -> Result<CMatrix<T>> {
    if let Some(a) = paths.alpha.iter().find(|a| !(**a > 0.0)) {
        return Err(Error::InvalidParameter(format!("scale factor {a} must be positive")));
    }
    let m = layout.m;
    let mf = m as f64;
    let df = layout.spacing();
    let f_mid = layout.centre();
    let t = layout.times();
    let mut acc = vec![Complex::<f64>::new(0.0, 0.0); m * m];
    for (h, tau, alpha) in paths.iter() {
        let c = h / (alpha.sqrt() * mf);
        for (n, tn) in t.iter().enumerate() {
            let shifted = tn / alpha + tau;
            for (np, tnp) in t.iter().enumerate() {
                acc[n * m + np] += c * dirichlet(tnp - shifted, mf, df, f_mid);
            }
        }
    }
    Ok(CMatrix::from_iterator(m, m, acc.into_iter().map(|z| Complex::new(re(z.re), re(z.im)))))
}

/// Effective channel `H = Gᴴ Hᵗ G`.
pub fn effective_channel<T: Real>(g: &WaveformMatrices<T>, ht: &CMatrix<T>) -> Result<CMatrix<T>> {
    let rows = g.g.nrows();
    if ht.nrows() != rows || ht.ncols() != rows {
        return Err(Error::DimensionMismatch { expected: rows, got: ht.nrows() });
    }
    Ok(adjoint_matmul(&g.g, &matmul(ht, &g.g)))
}

/// Receive SNR per sample; `f64::INFINITY` disables the noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrDb(pub f64);

impl SnrDb {
    pub fn noiseless() -> Self {
        Self(f64::INFINITY)
    }

    pub fn linear(self) -> f64 {
        10f64.powf(self.0 / 10.0)
    }
}

/// Circularly-symmetric Gaussian noise of variance `sigma2`.
pub fn complex_noise<T: Real, R: Rng + ?Sized>(len: usize, sigma2: f64, rng: &mut R) -> CVector<T> {
    let s = sigma2.sqrt();
    CVector::from_iterator(
        len,
        (0..len).map(|_| {
            let z = cn01(rng) * s;
            Complex::new(re(z.re), re(z.im))
        }),
    )
}

/// `r = Hᵗ s + w` with `σ² = (‖Hᵗ s‖²/M)/10^{SNR/10}`; returns `(r, σ²)`.
pub fn apply_channel<T: Real, R: Rng + ?Sized>(
    s: &CVector<T>,
    ht: &CMatrix<T>,
    snr: SnrDb,
    rng: &mut R,
) -> Result<(CVector<T>, f64)> {
    if s.len() != ht.ncols() {
        return Err(Error::DimensionMismatch { expected: ht.ncols(), got: s.len() });
    }
    let clean = ht * s;
    if snr.0.is_infinite() && snr.0 > 0.0 {
        return Ok((clean, 0.0));
    }
    let power = vnorm_sqr(&clean) / clean.len() as f64;
    let sigma2 = power / snr.linear();
    let w = complex_noise::<T, R>(clean.len(), sigma2, rng);
    Ok((clean + w, sigma2))
}

/// Squared Frobenius distance, normalised by `‖reference‖²`.
pub fn nmse<T: Real>(reference: &CMatrix<T>, estimate: &CMatrix<T>) -> f64 {
    let den: f64 = reference.iter().map(|z| to_f64(z.norm_sqr())).sum();
    let num: f64 = reference.iter().zip(estimate.iter()).map(|(a, b)| to_f64((*a - *b).norm_sqr())).sum();
    num / den
}
