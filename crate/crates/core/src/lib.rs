//! Numerical laboratory for multi-reference alignment on Z_L.
//!
//! Modules follow the data flow: [`ring`] (indices, group action, orbit
//! distances), [`spectral`] (DFT, Toeplitz lifting, moment tensors), [`gensig`]
//! (signal classes), [`beltway`] (support and phase recovery), [`mra`] (model,
//! likelihood, EM), [`probes`] (curvature and frequency-set checks) and
//! [`experiments`] (scans and result files).

pub mod beltway;
pub mod error;
pub mod experiments;
pub mod gensig;
pub mod mra;
pub mod probes;
pub mod ring;
pub mod rng;
pub mod spectral;
pub mod stats;

pub use error::{MraError, Result};
pub use ring::{GroupConfig, GroupElement, Signal};
