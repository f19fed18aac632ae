//! Scalar plumbing shared by every module.
//!
//! Linear algebra is generic over [`Real`] (`f32` or `f64`). Physical
//! parameters (frequencies, delays, scale factors) stay in `f64`: phases such
//! as `2π·f·τ` reach several thousand radians and would lose all precision if
//! formed in single precision, so they are reduced in `f64` first and only the
//! resulting unit phasor is converted.

use nalgebra::{DMatrix, DVector, RealField};
use num_complex::Complex;

/// Real scalar the numeric core is generic over.
pub trait Real: RealField + Copy {}

impl<T> Real for T where T: RealField + Copy {}

pub type CMatrix<T> = DMatrix<Complex<T>>;
pub type CVector<T> = DVector<Complex<T>>;

/// Converts an `f64` constant into `T`.
#[inline]
pub fn re<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}

/// Converts `T` back to `f64`.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    nalgebra::try_convert::<T, f64>(x).unwrap_or(f64::NAN)
}

#[inline]
pub fn cx<T: Real>(re_part: f64, im_part: f64) -> Complex<T> {
    Complex::new(re(re_part), re(im_part))
}

#[inline]
pub fn cx64<T: Real>(z: Complex<f64>) -> Complex<T> {
    cx(z.re, z.im)
}

#[inline]
pub fn cx_to_f64<T: Real>(z: Complex<T>) -> Complex<f64> {
    Complex::new(to_f64(z.re), to_f64(z.im))
}

/// `e^{jφ}` with the phase reduced in `f64`.
#[inline]
pub fn cis<T: Real>(phase: f64) -> Complex<T> {
    let p = phase.rem_euclid(std::f64::consts::TAU);
    let (s, c) = p.sin_cos();
    cx(c, s)
}

/// Squared Frobenius norm, accumulated in `f64`.
pub fn norm_sqr<T: Real>(m: &CMatrix<T>) -> f64 {
    m.iter().map(|z| to_f64(z.norm_sqr())).sum()
}

pub fn vnorm_sqr<T: Real>(v: &CVector<T>) -> f64 {
    v.iter().map(|z| to_f64(z.norm_sqr())).sum()
}

fn split<T: Real>(m: &CMatrix<T>) -> (DMatrix<T>, DMatrix<T>) {
    (m.map(|z| z.re), m.map(|z| z.im))
}

fn join<T: Real>(r: DMatrix<T>, i: DMatrix<T>) -> CMatrix<T> {
    r.zip_map(&i, Complex::new)
}

/// `a·b`, routed through four real products so the blocked real GEMM kernel
/// does the work instead of the scalar complex fallback.
pub fn matmul<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> CMatrix<T> {
    assert_eq!(a.ncols(), b.nrows(), "matmul: inner dimensions differ");
    if a.nrows() * a.ncols() * b.ncols() < 4096 {
        return a * b;
    }
    let (ar, ai) = split(a);
    let (br, bi) = split(b);
    let mut rr = &ar * &br;
    rr -= &ai * &bi;
    let mut ii = &ar * &bi;
    ii += &ai * &br;
    join(rr, ii)
}

/// `aᴴ·b` without forming the adjoint.
pub fn adjoint_matmul<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> CMatrix<T> {
    assert_eq!(a.nrows(), b.nrows(), "adjoint_matmul: row counts differ");
    if a.nrows() * a.ncols() * b.ncols() < 4096 {
        return a.ad_mul(b);
    }
    let (ar, ai) = split(a);
    let (br, bi) = split(b);
    let mut rr = ar.tr_mul(&br);
    rr += ai.tr_mul(&bi);
    let mut ii = ar.tr_mul(&bi);
    ii -= ai.tr_mul(&br);
    join(rr, ii)
}

/// Stacks the columns of `m` (column-major `vec`).
pub fn vec_of<T: Real>(m: &CMatrix<T>) -> CVector<T> {
    CVector::from_column_slice(m.as_slice())
}
