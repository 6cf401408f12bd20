//! Diagnostics: sample-quality distances, reconstruction spread, smoothness,
//! latent statistics, linearization checks and spectra.

mod diag;
mod distance;
mod report;
mod spectrum;
mod stats;

pub use diag::{
    correlation_from_terms, decoder_jacobian, decoder_jacobian_fd, latent_variance_mean,
    latent_walk, lipschitz_estimate, residual_distribution, residual_histogram,
    uncertainty_term_correlation, variance_map, CorrelationReport, ResidualHistogram,
};
pub use distance::energy_distance;
pub use report::{ArrayMetric, MetricReport};
pub use spectrum::radial_spectrum;
pub use stats::{linear_fit, pearson, LinearFit};
