//! Cheapest-to-deliver discount factors: deterministic closed form and the
//! second-order common-factor approximation.

mod common_factor;
mod pricing;

pub use common_factor::{
    fit_gamma, fit_gamma_detailed, max_cdf, max_moments, max_moments_by_convolution,
    max_raw_moments, CommonFactorState, GammaFit, GaussianVectorSnapshot, GAMMA_MAX,
};
pub use pricing::{
    conditional_ctd_term, ctd_common_factor, ctd_common_factor_detailed, ctd_common_factor_term,
    ctd_deterministic, family_moments, integral_of_max_linear, integral_variance_estimator,
    price_family, pricing_grid, shifted_max_ctd, CfDiagnostics, CfQuote, CfSettings, Family, Tilt,
    MaxMoments,
};
