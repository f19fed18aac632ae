//! Symbol detection on an effective channel `y = H x + w`.

use nalgebra::DMatrix;
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::{cx64, cx_to_f64, CMatrix, CVector, Real};
use crate::waveform::Constellation;

/// LLR magnitude cap.
pub const LLR_CLIP: f64 = 40.0;

type C64 = Complex<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult<T: Real> {
    /// `⟨x⟩_i = Σ_z z·q_i(z)`.
    pub soft: CVector<T>,
    /// `M_d × Q`, row-stochastic.
    pub marginals: DMatrix<f64>,
    /// `M_d × bits_per_symbol`.
    pub llrs: DMatrix<f64>,
    /// Constellation indices, `argmax_z q_i(z)`.
    pub hard: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Real> DetectionResult<T> {
    fn from_marginals(marginals: DMatrix<f64>, c: &Constellation<T>, iterations: usize, converged: bool) -> Self {
        let pts: Vec<C64> = c.points.iter().map(|p| cx_to_f64(*p)).collect();
        let soft = CVector::from_iterator(
            marginals.nrows(),
            marginals.row_iter().map(|row| cx64(row.iter().zip(&pts).map(|(q, z)| z * q).sum())),
        );
        let hard = marginals.row_iter().map(|row| argmax(row.iter().copied())).collect();
        let llrs = compute_llrs(&marginals, c);
        Self { soft, marginals, llrs, hard, iterations, converged }
    }

    /// Hard-decided symbol vector.
    pub fn hard_symbols(&self, c: &Constellation<T>) -> CVector<T> {
        c.symbols(&self.hard)
    }

    /// Bits of the hard decisions, MSB first per symbol.
    pub fn hard_bits(&self, c: &Constellation<T>) -> Vec<u8> {
        self.hard.iter().flat_map(|&i| (0..c.bits_per_symbol).map(move |b| c.bit(i, b) as u8)).collect()
    }
}

fn argmax(it: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in it.enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

fn to_c64<T: Real>(m: &CMatrix<T>) -> DMatrix<C64> {
    m.map(cx_to_f64)
}

fn check_dims<T: Real>(h: &CMatrix<T>, y: &CVector<T>) -> Result<()> {
    if h.nrows() != y.len() {
        return Err(Error::DimensionMismatch { expected: h.nrows(), got: y.len() });
    }
    Ok(())
}

/// `LLR_b = ln Σ_{bit_b(z)=0} q(z) − ln Σ_{bit_b(z)=1} q(z)`, clipped to `±40`.
pub fn compute_llrs<T: Real>(marginals: &DMatrix<f64>, c: &Constellation<T>) -> DMatrix<f64> {
    let nb = c.bits_per_symbol;
    DMatrix::from_fn(marginals.nrows(), nb, |i, b| {
        let (mut p0, mut p1) = (0.0, 0.0);
        for z in 0..c.size() {
            if c.bit(z, b) == 0 {
                p0 += marginals[(i, z)];
            } else {
                p1 += marginals[(i, z)];
            }
        }
        let l = p0.ln() - p1.ln();
        if l.is_nan() {
            0.0
        } else {
            l.clamp(-LLR_CLIP, LLR_CLIP)
        }
    })
}

/// Per-subcarrier division by `H_ii` followed by slicing.
pub fn one_tap_equalize<T: Real>(h: &CMatrix<T>, y: &CVector<T>, c: &Constellation<T>) -> Result<DetectionResult<T>> {
    check_dims(h, y)?;
    let n = h.ncols().min(h.nrows());
    let mut marginals = DMatrix::zeros(n, c.size());
    for i in 0..n {
        let d = cx_to_f64(h[(i, i)]);
        if d.norm_sqr() == 0.0 {
            return Err(Error::ZeroTap(i));
        }
        let z = cx_to_f64(y[i]) / d;
        marginals[(i, c.slice(cx64(z)))] = 1.0;
    }
    Ok(DetectionResult::from_marginals(marginals, c, 1, true))
}

/// Linear MMSE estimate `(HᴴH + σ²I)⁻¹ Hᴴ y`.
pub fn mmse_linear<T: Real>(h: &CMatrix<T>, y: &CVector<T>, sigma2: f64) -> Result<CVector<T>> {
    check_dims(h, y)?;
    let (x, _) = mmse_parts(&to_c64(h), &y.map(cx_to_f64), sigma2)?;
    Ok(x.map(cx64))
}

/// Returns the linear estimate and `diag(W H)` with `W = (HᴴH + σ²I)⁻¹Hᴴ`.
fn mmse_parts(h: &DMatrix<C64>, y: &nalgebra::DVector<C64>, sigma2: f64) -> Result<(nalgebra::DVector<C64>, Vec<f64>)> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma2 = {sigma2} must be positive")));
    }
    let mut r = h.ad_mul(h);
    for i in 0..r.nrows() {
        r[(i, i)] += sigma2;
    }
    let ch = nalgebra::Cholesky::new(r).ok_or(Error::Singular)?;
    let x = ch.solve(&h.ad_mul(y));
    let inv = ch.inverse();
    // W H = I − σ² R⁻¹
    let bias = (0..inv.nrows()).map(|i| 1.0 - sigma2 * inv[(i, i)].re).collect();
    Ok((x, bias))
}

/// Linear MMSE with unbiased Gaussian soft demapping.
///
/// With bias `μ_i = [WH]_ii` the unbiased output `x̂_i/μ_i` is treated as the
/// symbol plus Gaussian noise of variance `(1 − μ_i)/μ_i` (unit symbol energy).
pub fn mmse_equalize<T: Real>(h: &CMatrix<T>, y: &CVector<T>, sigma2: f64, c: &Constellation<T>) -> Result<DetectionResult<T>> {
    check_dims(h, y)?;
    let (x, bias) = mmse_parts(&to_c64(h), &y.map(cx_to_f64), sigma2)?;
    let pts: Vec<C64> = c.points.iter().map(|p| cx_to_f64(*p)).collect();
    let mut marginals = DMatrix::zeros(x.len(), c.size());
    for i in 0..x.len() {
        let mu = bias[i].max(1e-300);
        let z = x[i] / mu;
        let v = ((1.0 - mu) / mu).max(1e-300);
        let logits: Vec<f64> = pts.iter().map(|p| -(z - p).norm_sqr() / v).collect();
        softmax_into(&logits, &mut marginals, i);
    }
    Ok(DetectionResult::from_marginals(marginals, c, 1, true))
}

fn softmax_into(logits: &[f64], out: &mut DMatrix<f64>, row: usize) {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (z, g) in logits.iter().enumerate() {
        let e = (g - mx).exp();
        out[(row, z)] = e;
        sum += e;
    }
    for z in 0..logits.len() {
        out[(row, z)] /= sum;
    }
}

/// Order in which VSSD refreshes the marginals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VssdSchedule {
    /// All rows from the previous `⟨x⟩`.
    Parallel,
    /// Row by row, each using the freshest means.
    #[default]
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VssdConfig {
    pub eps_conv: f64,
    pub j_max: usize,
    pub schedule: VssdSchedule,
}

impl Default for VssdConfig {
    fn default() -> Self {
        Self { eps_conv: 1e-3, j_max: 50, schedule: VssdSchedule::default() }
    }
}

/// Variational soft-symbol detection with the default schedule.
pub fn vssd<T: Real>(
    h: &CMatrix<T>,
    y: &CVector<T>,
    sigma2: f64,
    c: &Constellation<T>,
    eps_conv: f64,
    j_max: usize,
) -> Result<DetectionResult<T>> {
    vssd_observed(h, y, sigma2, c, &VssdConfig { eps_conv, j_max, ..VssdConfig::default() }, |_, _| {})
}

/// VSSD calling `observe(iteration, marginals)` after every update.
///
/// `g_i(z) = −(d_i|z|² − 2Re{(b_i − Σ_{k≠i} R_ik⟨x_k⟩) z*})/σ²` with
/// `R = ĤᴴĤ`, `d = diag R`, `b = Ĥᴴy`; `q_i = softmax(g_i)`. Stops when
/// `‖Δ⟨x⟩‖ ≤ ε‖⟨x⟩_old‖` or after `J_max` sweeps.
pub fn vssd_observed<T: Real>(
    h: &CMatrix<T>,
    y: &CVector<T>,
    sigma2: f64,
    c: &Constellation<T>,
    cfg: &VssdConfig,
    mut observe: impl FnMut(usize, &DMatrix<f64>),
) -> Result<DetectionResult<T>> {
    check_dims(h, y)?;
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma2 = {sigma2} must be positive")));
    }
    let h = to_c64(h);
    let y = y.map(cx_to_f64);
    let r = h.ad_mul(&h);
    let b = h.ad_mul(&y);
    let n = r.nrows();
    let pts: Vec<C64> = c.points.iter().map(|p| cx_to_f64(*p)).collect();
    let energy: Vec<f64> = pts.iter().map(|p| p.norm_sqr()).collect();
    let mut marginals = DMatrix::from_element(n, pts.len(), 1.0 / pts.len() as f64);
    let mut mean = vec![C64::new(0.0, 0.0); n];
    let mut logits = vec![0.0; pts.len()];
    let mut converged = false;
    let mut iterations = 0;
    for j in 0..cfg.j_max {
        iterations = j + 1;
        let old = mean.clone();
        for i in 0..n {
            let src = match cfg.schedule {
                VssdSchedule::Parallel => &old,
                VssdSchedule::Sequential => &mean,
            };
            let mut t = b[i];
            for (k, xk) in src.iter().enumerate() {
                if k != i {
                    t -= r[(i, k)] * xk;
                }
            }
            let d = r[(i, i)].re;
            for (z, p) in pts.iter().enumerate() {
                logits[z] = -(d * energy[z] - 2.0 * (t * p.conj()).re) / sigma2;
            }
            softmax_into(&logits, &mut marginals, i);
            mean[i] = marginals.row(i).iter().zip(&pts).map(|(q, p)| p * q).sum();
        }
        observe(iterations, &marginals);
        let num: f64 = mean.iter().zip(&old).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let den: f64 = old.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if (den > 0.0 && num <= cfg.eps_conv * den) || (den == 0.0 && num == 0.0) {
            converged = true;
            break;
        }
    }
    Ok(DetectionResult::from_marginals(marginals, c, iterations, converged))
}

/// Detector selection used by the campaigns and ICED.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detector {
    OneTap,
    Mmse,
    Vssd,
}

impl Detector {
    pub fn name(self) -> &'static str {
        match self {
            Detector::OneTap => "1tap",
            Detector::Mmse => "mmse",
            Detector::Vssd => "vssd",
        }
    }

    pub fn detect<T: Real>(self, h: &CMatrix<T>, y: &CVector<T>, sigma2: f64, c: &Constellation<T>) -> Result<DetectionResult<T>> {
        match self {
            Detector::OneTap => one_tap_equalize(h, y, c),
            Detector::Mmse => mmse_equalize(h, y, sigma2, c),
            Detector::Vssd => {
                let cfg = VssdConfig::default();
                vssd(h, y, sigma2, c, cfg.eps_conv, cfg.j_max)
            }
        }
    }
}

impl std::str::FromStr for Detector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1tap" | "onetap" | "one-tap" => Ok(Detector::OneTap),
            "mmse" => Ok(Detector::Mmse),
            "vssd" => Ok(Detector::Vssd),
            other => Err(Error::InvalidParameter(format!("unknown detector '{other}'"))),
        }
    }
}
