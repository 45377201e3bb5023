//! Age of Information in CSMA networks.
//!
//! * [`shs`]: generic steady-state stochastic hybrid system solver, used as
//!   the numeric oracle for every closed form in this crate.
//! * [`csma`]: the idealized CSMA network model and its closed-form
//!   per-link and total average ages.
//! * [`optimizer`]: age-optimal back-off rates and contention windows.
//! * [`sim`]: discrete-event simulation of idealized CSMA, slotted CSMA
//!   with collisions, and a Round Robin baseline.
//! * [`round_robin`]: analytic Round Robin baseline.
//! * [`experiments`]: parameter sweeps and the scheme comparisons.

pub mod csma;
pub mod experiments;
pub mod optimizer;
pub mod round_robin;
pub mod shs;
pub mod sim;

pub use csma::{AgeBreakdown, CsmaError, Link, NetworkParams};
pub use optimizer::{BackoffAssignment, KktSolution, OptimizeError, OptimizerInputs};
pub use sim::{Mac, SimError, SimResult, SimScenario};
pub use shs::{CorrelationVectors, ShsError, ShsModel, StationaryDist};
