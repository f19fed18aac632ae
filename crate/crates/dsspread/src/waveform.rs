//! Transmitter matrices for OTFS, OFDM, OCDM and ODSS.
//!
//! Symbols are stacked column-major (subcarrier / delay index fastest).
//! With a rectangular unit pulse the OTFS, OFDM and OCDM matrices are unitary.
//! ODSS atoms are sampled from the modulator at `t = n/B` and then
//! orthonormalised symmetrically, which keeps each column as close as
//! possible to its sampled atom while making `Gᴴ G = I`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::linalg::SymmetricEigen;
use num_complex::Complex;

use crate::channel::SamplingLayout;
use crate::error::{Error, Result};
use crate::scalar::{adjoint_matmul, cis, cx, matmul, re, to_f64, CMatrix, CVector, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WaveformKind {
    Otfs,
    Ofdm,
    Ocdm,
    Odss,
}

impl WaveformKind {
    pub const ALL: [WaveformKind; 4] = [WaveformKind::Otfs, WaveformKind::Ofdm, WaveformKind::Ocdm, WaveformKind::Odss];

    pub fn name(self) -> &'static str {
        match self {
            WaveformKind::Otfs => "otfs",
            WaveformKind::Ofdm => "ofdm",
            WaveformKind::Ocdm => "ocdm",
            WaveformKind::Odss => "odss",
        }
    }
}

impl fmt::Display for WaveformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WaveformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "otfs" => Ok(Self::Otfs),
            "ofdm" => Ok(Self::Ofdm),
            "ocdm" => Ok(Self::Ocdm),
            "odss" => Ok(Self::Odss),
            other => Err(Error::InvalidParameter(format!("unknown waveform '{other}'"))),
        }
    }
}

/// Waveform parameters. `q` and `w` only matter for ODSS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveformConfig {
    pub kind: WaveformKind,
    pub m: usize,
    pub n: usize,
    pub bandwidth: f64,
    /// Lowest band edge `f_L`.
    pub f_low: f64,
    pub q: f64,
    pub w: f64,
    pub ts: f64,
}

/// Relative tolerance on `B = Σ q^m W`.
pub const ODSS_BANDWIDTH_TOL: f64 = 1e-3;

impl WaveformConfig {
    /// OTFS/OFDM/OCDM with `Δf = B/M` and `Ts = N/Δf`.
    pub fn multicarrier(kind: WaveformKind, m: usize, n: usize, bandwidth: f64, f_low: f64) -> Self {
        let ts = n as f64 * m as f64 / bandwidth;
        Self { kind, m, n, bandwidth, f_low, q: 1.0, w: bandwidth / m as f64, ts }
    }

    /// ODSS with the base width derived from the band, `W = B/Σ q^m`, and `Ts = N/W`.
    pub fn odss(m: usize, n: usize, q: f64, bandwidth: f64, f_low: f64) -> Self {
        let w = bandwidth / geometric_sum(q, m);
        Self { kind: WaveformKind::Odss, m, n, bandwidth, f_low, q, w, ts: n as f64 / w }
    }

    /// ODSS with an explicit base width; checked against the band by [`validate`](Self::validate).
    pub fn odss_with_width(m: usize, n: usize, q: f64, w: f64, bandwidth: f64, f_low: f64, ts: f64) -> Self {
        Self { kind: WaveformKind::Odss, m, n, bandwidth, f_low, q, w, ts }
    }

    /// Builds the configuration for `kind` on a common band.
    pub fn for_kind(kind: WaveformKind, m: usize, n: usize, bandwidth: f64, f_low: f64, q: f64) -> Self {
        match kind {
            WaveformKind::Odss => Self::odss(m, n, q, bandwidth, f_low),
            _ => Self::multicarrier(kind, m, n, bandwidth, f_low),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::InvalidDimension(format!("M = {}, N = {}", self.m, self.n)));
        }
        if !(self.bandwidth > 0.0) {
            return Err(Error::InvalidParameter(format!("bandwidth {}", self.bandwidth)));
        }
        match self.kind {
            WaveformKind::Ocdm if self.m % 2 == 1 => Err(Error::OddChirpSize(self.m)),
            WaveformKind::Odss => {
                if !(self.q >= 1.0) || !(self.w > 0.0) || !(self.ts > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "ODSS q = {}, W = {}, Ts = {}",
                        self.q, self.w, self.ts
                    )));
                }
                let covered = geometric_sum(self.q, self.m) * self.w;
                if ((covered - self.bandwidth) / self.bandwidth).abs() > ODSS_BANDWIDTH_TOL {
                    return Err(Error::BandwidthMismatch { covered, bandwidth: self.bandwidth });
                }
                if self.odss_counts().contains(&0) {
                    return Err(Error::InvalidDimension("an ODSS subcarrier carries no symbol".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Symbols per subcarrier `N(m) = ⌊q^m W Ts⌋` (ODSS).
    pub fn odss_counts(&self) -> Vec<usize> {
        (0..self.m)
            .map(|m| (self.q.powi(m as i32) * self.w * self.ts + 1e-9).floor() as usize)
            .collect()
    }

    /// Number of data symbols `M_d`.
    pub fn symbol_count(&self) -> usize {
        match self.kind {
            WaveformKind::Odss => self.odss_counts().iter().sum(),
            _ => self.m * self.n,
        }
    }

    /// Sampling layout of one block for this waveform.
    pub fn layout(&self) -> Result<SamplingLayout> {
        match self.kind {
            WaveformKind::Odss => SamplingLayout::from_duration(self.bandwidth, self.ts, self.f_low),
            _ => SamplingLayout::new(self.m * self.n, self.bandwidth, self.f_low),
        }
    }

    /// Carrier used in the phase diagonal: `f_L`, or the band centre for OCDM.
    pub fn carrier(&self) -> f64 {
        match self.kind {
            WaveformKind::Ocdm => self.f_low + 0.5 * self.bandwidth,
            _ => self.f_low,
        }
    }
}

fn geometric_sum(q: f64, m: usize) -> f64 {
    (0..m).map(|i| q.powi(i as i32)).sum()
}

/// Synthesis matrix `G` (`samples × M_d`) together with its sampling layout.
#[derive(Debug, Clone)]
pub struct WaveformMatrices<T: Real> {
    pub kind: WaveformKind,
    pub g: CMatrix<T>,
    pub layout: SamplingLayout,
}

impl<T: Real> WaveformMatrices<T> {
    pub fn symbol_count(&self) -> usize {
        self.g.ncols()
    }

    pub fn sample_count(&self) -> usize {
        self.g.nrows()
    }

    /// Keeps only the listed symbol positions (columns of `G`); the others stay empty.
    pub fn restrict_symbols(&self, positions: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.g.ncols()];
        for &p in positions {
            if p >= seen.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidParameter(format!("symbol position {p} out of range or repeated")));
            }
        }
        if positions.is_empty() {
            return Err(Error::InvalidDimension("no symbol positions kept".into()));
        }
        Ok(Self { kind: self.kind, g: self.g.select_columns(positions), layout: self.layout })
    }

    /// `s = G x`.
    pub fn modulate(&self, x: &CVector<T>) -> Result<CVector<T>> {
        if x.len() != self.g.ncols() {
            return Err(Error::DimensionMismatch { expected: self.g.ncols(), got: x.len() });
        }
        Ok(&self.g * x)
    }

    /// `y = Gᴴ r`.
    pub fn demodulate(&self, r: &CVector<T>) -> Result<CVector<T>> {
        if r.len() != self.g.nrows() {
            return Err(Error::DimensionMismatch { expected: self.g.nrows(), got: r.len() });
        }
        Ok(self.g.ad_mul(r))
    }

    /// `‖Gᴴ G − I‖_F / √M_d`.
    pub fn unitarity_error(&self) -> f64 {
        let gram = adjoint_matmul(&self.g, &self.g);
        let md = gram.nrows();
        let mut acc = 0.0;
        for j in 0..md {
            for i in 0..md {
                let target = if i == j { 1.0 } else { 0.0 };
                let d = gram[(i, j)];
                acc += (to_f64(d.re) - target).powi(2) + to_f64(d.im).powi(2);
            }
        }
        acc.sqrt() / (md as f64).sqrt()
    }
}

/// Unitary DFT `F[k,n] = e^{-j2πkn/M}/√M`.
pub fn dft<T: Real>(m: usize) -> CMatrix<T> {
    let s: T = re(1.0 / (m as f64).sqrt());
    CMatrix::from_fn(m, m, |k, n| cis::<T>(-2.0 * PI * ((k * n) % m) as f64 / m as f64).scale(s))
}

/// Discrete chirp basis `Ψ[m',m] = e^{jπ/4} e^{-jπ(m'−m)²/M}/√M` (unitary for even `M`).
pub fn chirp_matrix<T: Real>(m: usize) -> CMatrix<T> {
    let s: T = re(1.0 / (m as f64).sqrt());
    let two_m = 2 * m;
    CMatrix::from_fn(m, m, |a, b| {
        let d = a.abs_diff(b);
        let k = (d * d) % two_m;
        cis::<T>(PI / 4.0 - PI * k as f64 / m as f64).scale(s)
    })
}

fn phase_diagonal<T: Real>(m: usize, carrier: f64, bandwidth: f64) -> Vec<Complex<T>> {
    (0..m).map(|i| cis(2.0 * PI * carrier * i as f64 / bandwidth)).collect()
}

fn scale_rows<T: Real>(mut a: CMatrix<T>, d: &[Complex<T>]) -> CMatrix<T> {
    for (i, mut row) in a.row_iter_mut().enumerate() {
        row *= d[i];
    }
    a
}

fn block_diagonal<T: Real>(block: &CMatrix<T>, count: usize) -> CMatrix<T> {
    let (r, c) = block.shape();
    let mut out = CMatrix::zeros(r * count, c * count);
    for b in 0..count {
        out.view_mut((b * r, b * c), (r, c)).copy_from(block);
    }
    out
}

/// Builds `G` for the configured waveform.
pub fn build_transmitter_matrix<T: Real>(cfg: &WaveformConfig) -> Result<WaveformMatrices<T>> {
    cfg.validate()?;
    let layout = cfg.layout()?;
    let g = match cfg.kind {
        WaveformKind::Otfs => {
            let d = phase_diagonal::<T>(cfg.m, cfg.carrier(), cfg.bandwidth);
            let gt = CMatrix::from_diagonal(&CVector::from_vec(d));
            dft::<T>(cfg.n).adjoint().kronecker(&gt)
        }
        WaveformKind::Ofdm => {
            let d = phase_diagonal::<T>(cfg.m, cfg.carrier(), cfg.bandwidth);
            block_diagonal(&scale_rows(dft::<T>(cfg.m).adjoint(), &d), cfg.n)
        }
        WaveformKind::Ocdm => {
            let d = phase_diagonal::<T>(cfg.m, cfg.carrier(), cfg.bandwidth);
            block_diagonal(&scale_rows(chirp_matrix::<T>(cfg.m), &d), cfg.n)
        }
        WaveformKind::Odss => symmetric_orthonormalise(&odss_atoms::<T>(cfg, &layout))?,
    };
    Ok(WaveformMatrices { kind: cfg.kind, g, layout })
}

/// Sampled ODSS atoms, unit-norm columns ordered subcarrier-major.
///
/// Subcarrier `m` spans `[f_L + W(q^m−1)/(q−1), +q^m W)` so adjacent
/// subcarriers tile the band; its carrier sits at the lower edge, like the
/// other waveforms' subcarrier `0` sits at `f_L`.
pub fn odss_atoms<T: Real>(cfg: &WaveformConfig, layout: &SamplingLayout) -> CMatrix<T> {
    let counts = cfg.odss_counts();
    let total: usize = counts.iter().sum();
    let samples = layout.m;
    let mut g = CMatrix::<T>::zeros(samples, total);
    let mut col = 0;
    for (m, &count) in counts.iter().enumerate() {
        let qm = cfg.q.powi(m as i32);
        let offset = if cfg.q == 1.0 { m as f64 * cfg.w } else { cfg.w * (qm - 1.0) / (cfg.q - 1.0) };
        let carrier = cfg.f_low + offset;
        let width = 1.0 / (qm * cfg.w);
        for k in 0..count {
            let start = k as f64 * width;
            let mut energy = 0.0;
            for i in 0..samples {
                let local = i as f64 / cfg.bandwidth - start;
                if local >= -1e-12 && local < width - 1e-12 {
                    g[(i, col)] = cis::<T>(2.0 * PI * carrier * local).scale(re(qm.sqrt()));
                    energy += qm;
                }
            }
            if energy > 0.0 {
                let s: T = re(1.0 / energy.sqrt());
                g.column_mut(col).scale_mut(s);
            }
            col += 1;
        }
    }
    g
}

/// `A (Aᴴ A)^{-1/2}`.
fn symmetric_orthonormalise<T: Real>(a: &CMatrix<T>) -> Result<CMatrix<T>> {
    let gram = adjoint_matmul(a, a);
    let eig = SymmetricEigen::new(gram);
    let v = eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let l = to_f64(*lambda);
        if !(l > 1e-12) {
            return Err(Error::Singular);
        }
        scaled.column_mut(j).scale_mut(re(1.0 / l.sqrt()));
    }
    let inv_sqrt = matmul(&scaled, &v.adjoint());
    Ok(matmul(a, &inv_sqrt))
}

/// Gray-labelled constellation with unit average energy.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation<T: Real> {
    pub points: Vec<Complex<T>>,
    pub bits_per_symbol: usize,
    /// `labels[i]` is the bit pattern of `points[i]`, MSB first.
    pub labels: Vec<u32>,
}

impl<T: Real> Constellation<T> {
    pub fn bpsk() -> Self {
        Self { points: vec![cx(1.0, 0.0), cx(-1.0, 0.0)], bits_per_symbol: 1, labels: vec![0, 1] }
    }

    pub fn qpsk() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let labels: Vec<u32> = (0..4).collect();
        let points = labels
            .iter()
            .map(|l| {
                let b0 = (l >> 1) & 1;
                let b1 = l & 1;
                cx(s * (1.0 - 2.0 * b0 as f64), s * (1.0 - 2.0 * b1 as f64))
            })
            .collect();
        Self { points, bits_per_symbol: 2, labels }
    }

    pub fn qam16() -> Self {
        // Gray map per axis: 00→−3, 01→−1, 11→+1, 10→+3.
        let level = |b: u32| match b {
            0b00 => -3.0,
            0b01 => -1.0,
            0b11 => 1.0,
            _ => 3.0,
        };
        let s = 1.0 / 10f64.sqrt();
        let labels: Vec<u32> = (0..16).collect();
        let points = labels.iter().map(|l| cx(s * level(l >> 2), s * level(l & 3))).collect();
        Self { points, bits_per_symbol: 4, labels }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "bpsk" => Ok(Self::bpsk()),
            "qpsk" => Ok(Self::qpsk()),
            "qam16" | "16qam" => Ok(Self::qam16()),
            other => Err(Error::InvalidParameter(format!("unknown constellation '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.bits_per_symbol {
            1 => "bpsk",
            2 => "qpsk",
            _ => "qam16",
        }
    }

    pub fn size(&self) -> usize {
        self.points.len()
    }

    /// Bit `b` (0 = MSB) of point `i`.
    pub fn bit(&self, i: usize, b: usize) -> u32 {
        (self.labels[i] >> (self.bits_per_symbol - 1 - b)) & 1
    }

    /// Nearest point; ties go to the lower index.
    pub fn slice(&self, z: Complex<T>) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = to_f64((z - p).norm_sqr());
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    pub fn symbols(&self, indices: &[usize]) -> CVector<T> {
        CVector::from_iterator(indices.len(), indices.iter().map(|i| self.points[*i]))
    }
}
