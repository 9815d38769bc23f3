//! Desk-scale simulator and verification library for the rescaled
//! Einstein–Vlasov–Maxwell system near the Milne model.
//!
//! The crate evolves the gauge-fixed rescaled system (CMC slicing with a
//! spatially harmonic coordinate condition, slice-adapted Maxwell gauge),
//! computes the full hierarchy of energy functionals used in the stability
//! analysis of that system, and measures the decay rates and identities the
//! analysis predicts on reduced backgrounds.

pub mod algebra;
pub mod background;
pub mod book;
pub mod commutator;
pub mod elliptic;
pub mod energy;
pub mod evolution;
pub mod error;
pub mod geometry;
pub mod kinetic;
pub mod maxwell;
pub mod moments;
pub mod scenario;
pub mod threads;
pub mod verify;

pub use background::{BackendKind, BackgroundGeometry, StencilOrder};
pub use error::{EvmError, Result};
