//! Transceiver building blocks for delay-scale spread channels.
//!
//! * [`waveform`]: OTFS / OFDM / OCDM / ODSS synthesis matrices.
//! * [`channel`]: random multipath channels and their sampled matrices.
//! * [`dsgrid`]: delay / log-scale grids and dictionary atoms.
//! * [`vbce`]: variational-Bayes sparse channel estimation with off-grid refinement.
//! * [`detect`]: one-tap, MMSE and variational soft-symbol detection.
//! * [`iced`]: data-aided iterative estimation and detection.
//! * [`crlb`]: Cramér-Rao bound for the effective channel.
//!
//! The numeric core is generic over [`Real`]; the aliases below fix it to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod channel;
pub mod crlb;
pub mod detect;
pub mod dsgrid;
mod error;
pub mod iced;
pub mod scalar;
pub mod vbce;
pub mod waveform;

pub use error::{Error, Result};
pub use scalar::{CMatrix, CVector, Real};

pub use num_complex::Complex;

pub type C64 = Complex<f64>;
pub type CMat = CMatrix<f64>;
pub type CVec = CVector<f64>;
pub type Waveform = waveform::WaveformMatrices<f64>;
pub type Constellation = waveform::Constellation<f64>;
pub type AtomContext = dsgrid::AtomContext<f64>;
pub type Dictionary = dsgrid::Dictionary<f64>;
pub type DetectionResult = detect::DetectionResult<f64>;
pub type ChannelEstimate = vbce::ChannelEstimate<f64>;
