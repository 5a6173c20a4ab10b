//! Frequency-by-frequency linear inversion of travel-time maps for subsurface flows.

pub mod constrained;
pub mod diagnostics;
pub mod error;
pub mod forward;
pub mod fourier;
pub mod gsvd;
pub mod linalg;
pub mod pinsker;
pub mod spectral;
pub mod staggered;

pub use error::{Error, Result};
pub use fourier::{FourierField, Frequency, HorizontalGrid};
pub use staggered::{DensityProfile, StaggeredGrid};
