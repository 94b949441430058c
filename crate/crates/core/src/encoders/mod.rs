//! Input binarization.
//!
//! Images enter as normalized reals in `[0, 1]` (channel-major, `[C, H, W]`)
//! and leave as `{0, 1}` bit planes of shape `[C * M, H, W]`, all `M` planes of
//! channel 0 first, then channel 1, and so on.
//!
//! Thermometer thresholds are parameterized by a strictly positive latent
//! vector of length `M + 1`; normalizing it to unit sum and taking the running
//! sum yields `M` strictly increasing thresholds inside `(0, 1)`.

mod encode;
mod surrogate;
mod thermo;

pub use encode::{
    encode_base2, encode_fixed_thermometer, encode_thermometer, gamma_inverse, linear_ramp, quantize_thresholds,
    EncodedPlanes, EncodingKind, ImageDims, ImageView,
};
pub use surrogate::{glt_backward, glt_backward_accumulate, surrogate, BetaMode, SurrogateConfig};
pub use thermo::{glt_init, threshold_jacobian, thresholds_from_latent, ThermoParams, DEFAULT_EPSILON_MIN};
