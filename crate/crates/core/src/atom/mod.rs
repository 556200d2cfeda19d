//! Species constants, the hyperfine-Zeeman basis, and spontaneous decay.

mod basis;
mod constants;
mod decay;

pub use basis::{build_basis, Exclusion, HyperfineState, LevelBasis, StateLabel};
pub use constants::{
    hyperfine_summary, mhz_to_rad, rad_to_mhz, AtomicConstants, ConstantsLibrary, FineLevel, SaturationAnchor,
    Transition, TransitionKind, ATOMIC_MASS_UNIT, BOHR_MAGNETON, BOLTZMANN, CONSTANTS_ENV, HBAR, PLANCK,
    SPEED_OF_LIGHT,
};
pub use decay::{branching_ratio, decay_channels, total_decay_rates, DecayChannel};
