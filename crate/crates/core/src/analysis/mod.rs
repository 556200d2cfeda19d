//! Fits for experimental-style data: count histograms, survival curves,
//! time-of-flight expansion and Ramsey fringes.

mod histogram;
mod lifetime;
pub mod lm;
mod ramsey;
mod tof;

pub use histogram::{classification_error, fit_histogram, Component, CountHistogram, HistogramFit, MixtureModel};
pub use lifetime::{fit_lifetime, window_loss, LifetimeFit};
pub use lm::{FitParameter, FitReport};
pub use ramsey::{fit_fringe, fit_ramsey, FringeFit, RamseyFit};
pub use tof::{fit_tof, tof_radius, TofFit};
