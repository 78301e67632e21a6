//! Explicit constants and numerical checks for two-sided `L_p` bounds on
//! `Σ vᵢRᵢ`, where `Rᵢ = X₁⋯Xᵢ` are products of independent random variables.
//!
//! The crate is organised bottom-up: [`dist`] provides laws and moment
//! oracles, [`assumptions`] fits hypothesis certificates, [`constants`]
//! turns them into lower and upper constants, and [`montecarlo`] and
//! [`riesz`] check the resulting inequalities.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assumptions;
pub mod constants;
pub mod dist;
pub mod error;
pub mod lemmas;
pub mod montecarlo;
pub mod norm;
pub mod quad;
pub mod riesz;

pub use assumptions::{
    check_pair_nondegeneracy, fit_large_p, fit_small_p, BLaw, LargePCertificate, MonotoneMap, PairSpec,
    SmallPCertificate,
};
pub use constants::{
    lower_constant_large_p, lower_constant_small_p, optimize_large_p, optimize_small_p, upper_constant_large_p,
    upper_constant_perpetuity, certify_default, ConstantBundle, Regime,
};
pub use dist::{abs_moment, normalize_unit_p_moment, sample_products, DistributionSpec, MomentEstimate, RandomSource};
pub use error::{Error, Result};
pub use montecarlo::{CoefficientSet, EstimateWithCI, SandwichReport, Verdict};
pub use norm::Norm;
pub use riesz::{check_lacunary, LacunarySequence, RieszCombination};
