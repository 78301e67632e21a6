//! Shared fixtures for the benchmarks.

use momsand_core::{normalize_unit_p_moment, CoefficientSet, DistributionSpec, Norm};

/// A normalised two-point law, the workhorse of the exact checks.
pub fn two_point(p: f64) -> DistributionSpec {
    let spec = DistributionSpec::two_point(0.4, 1.7, 0.45).expect("valid law");
    normalize_unit_p_moment(&spec, p).expect("nondegenerate").0
}

/// `n + 1` deterministic coefficient vectors of dimension `dim`.
pub fn coefficients(n: usize, dim: usize) -> CoefficientSet {
    momsand_core::montecarlo::random_coefficients(n + 1, dim, 1.0, 17, Norm::L2).expect("valid coefficients")
}
