//! Linear partially kinetic systems.
//!
//! A macroscopic linear oscillator `r` is coupled to `N` particles `Q_j` through
//! the uniform linear constraints `Q_j + G_r r = q_j^in + G_r r^in`. The crate
//! provides
//!
//! * the discrete system after index reduction, with multiplier recovery,
//!   constraint residuals and energies ([`microsim`]),
//! * its mean-field description: the explicit characteristic flow, the closed
//!   first-moment ODE and an upwind method-of-lines transport solver
//!   ([`meanfield`]),
//! * the 1-D Monge–Kantorovich distance and the constants of the linear
//!   Dobrushin stability estimate ([`metrics`]),
//! * Monte-Carlo and energy experiments built on top of these ([`harness`]).
//!
//! All solvers share one adaptive Dormand–Prince integrator ([`ode`]).

pub mod config;
pub mod error;
pub mod harness;
pub mod meanfield;
pub mod measure;
pub mod metrics;
pub mod microsim;
pub mod model;
pub mod ode;
pub mod output;
pub mod rng;

pub use error::{Error, Result};
pub use measure::{EmpiricalMeasure, GridDensity, Measure};
pub use model::{MacroState, ModelParams, ParticleEnsemble};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
