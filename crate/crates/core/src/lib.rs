//! Simulation toolkit for mass-structured chemostat models: an exact
//! individual-based Monte Carlo simulator, the population-balance
//! integro-differential equation it converges to, and the classic two-ODE
//! chemostat with Monod calibration.

// `!(x > 0.0)` is deliberate: it rejects NaN along with the rest.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classic;
pub mod density;
pub mod ensemble;
pub mod error;
pub mod fit;
pub mod ibm;
pub mod ide;
pub mod io;
pub mod kernel;
pub mod params;
pub mod rates;
pub mod rng;
pub mod trajectory;

pub use density::InitialMassDensity;
pub use error::{Error, Result};
pub use params::ChemostatParams;
pub use rates::{DivisionLaw, GrowthLaw, Model};
pub use trajectory::{SampleGrid, Trajectory};
