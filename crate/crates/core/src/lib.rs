//! Simulation toolkit for a quantum battery charged by a degenerate optical
//! parametric oscillator (DOPO).
//!
//! The signal mode of the DOPO stores energy, the pump mode acts as the
//! charger, and a two-level system serves as the load during discharge.
//! Modules, bottom-up:
//!
//! * [`fock`]: truncated Fock-space operators, density matrices, partial traces.
//! * [`dynamics`]: Lindblad right-hand side and the adaptive integrator.
//! * [`work`]: ergotropy, passive states and the coherent/incoherent split.
//! * [`dopo`]: the charging model, mean-field threshold analysis, charging drivers.
//! * [`load`]: discharge of the charged signal mode into a two-level load.
//! * [`fit`]: regressions and series analysis used by the experiments.
//! * [`experiment`]: configuration, figure experiments and their output files.

mod blocks;
pub mod dopo;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod fit;
pub mod fock;
pub mod load;
pub mod ode;
pub mod sparse;
pub mod work;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

#[cfg(test)]
mod testutil;
