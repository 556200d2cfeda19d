//! Rotating-frame Lindblad master equation for the hyperfine-Zeeman basis.

pub mod ode;
mod system;
mod trajectory;

pub use system::{assemble, assemble_from, AssemblyOptions, Csr, MasterEquationSystem, Pruning};
pub use trajectory::{
    integrate, raman_infidelity, simulate_readout, time_to_photons, Diagnostics, HorizonPolicy, IntegrateOptions,
    Manifold, Readout, Run, Trajectory,
};
