//! Splittable random streams, Gaussian sampling and elementary analytic functions.

mod functions;
mod philox;
mod stream;

pub use functions::{
    bridge_moments, centering, envelope, gaussian_density, normal_cdf, sample_bridge_interior, sample_gaussian,
    EnvelopeParams, LOG_CORRECTION,
};
pub(crate) use functions::{envelope_unchecked, m_t, phi, validate_alpha};
pub use philox::philox4x32_10;
pub use stream::{derive_stream, PathDigest, RngStreamKey, StreamBase, StreamRng};
