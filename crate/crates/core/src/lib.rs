//! A desk-scale laboratory for nonuniformly hyperbolic dynamics.
//!
//! The crate builds and cross-checks three layers of structure:
//!
//! * [`cocycle`]: exact Lyapunov exponents, Jacobian rates and dominated-splitting
//!   tests for periodic matrix cocycles in dimensions 2 and 3;
//! * [`odometer`]: generalized adding machines on inverse limits of cyclic groups,
//!   the symbolic model of the Cantor sets produced by the tower builder;
//! * [`model`] / [`tower`]: explicit compactly supported saddle diffeomorphisms
//!   with homoclinic connectors, and nested attracting/repelling disk towers whose
//!   realized dynamics carries prescribed derivative blocks along periodic orbits.
//!
//! The [`verifier`] module re-measures every structural property of a built tower
//! from its serialized data alone and renders machine-readable verdicts.

pub mod cocycle;
pub mod model;
pub mod odometer;
pub mod tower;
pub mod verifier;

mod profile;

pub use cocycle::{ExponentSpectrum, Mat, PeriodicCocycle, SplittingCandidate};
pub use model::{BumpProfile, ModelMap, TangencyCertificate, TwistConnector};
pub use odometer::{CylinderSet, OdometerPoint, TowerSchedule};
pub use tower::{Disk, Tower, TowerStage};
pub use verifier::{VerdictItem, VerdictReport};
