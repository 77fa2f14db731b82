//! Mesh-free Fokker-Planck solver: a Gaussian mixture whose amplitudes,
//! widths and centers evolve by the reduced-order nonlinear solution (RONS)
//! equations, together with the reference oracles used to validate it.

pub mod assembler;
pub mod error;
pub mod gausspoly;
pub mod integrator;
pub mod mixture;
pub mod operator;
pub mod oracle;
pub mod problems;
pub mod projection;

pub use assembler::{CollocationGrid, HilbertChoice, HilbertMode, RonsSystem};
pub use error::{Error, Result};
pub use gausspoly::{GaussPoly, GaussPolySum, Polynomial};
pub use integrator::{integrate, integrate_with, IntegrateOptions, Method, TimeGrid, Trajectory};
pub use mixture::MixtureState;
pub use operator::{Coefficient, DriftModel, DriftTerm};
