//! Independent reference computations: Monte Carlo SDE ensembles, moment
//! ODEs, equilibrium densities and quadrature.

pub mod equilibrium;
pub mod moments;
pub mod quadrature;
pub mod sde;

pub use equilibrium::{l2_relative_error, EquilibriumKind, EquilibriumRef, NormSpec, OuExact};
pub use moments::{harmonic_moment_odes, HarmonicMoments, MomentPoint};
pub use sde::{empirical_moments, simulate_sde, EmpiricalMoments, Ensemble, EnsembleSpec, InitialSampler, SdeScheme, Snapshot};
