//! The narrative guide under `book/` rendered as rustdoc modules, so that
//! every code sample in the book compiles and runs under
//! `cargo test --doc`.

#[doc = include_str!("../../../book/src/index.md")]
pub mod overview {}

#[doc = include_str!("../../../book/src/backgrounds.md")]
pub mod backgrounds {}

#[doc = include_str!("../../../book/src/rescaled-system.md")]
pub mod rescaled_system {}

#[doc = include_str!("../../../book/src/kinetic.md")]
pub mod kinetic_sector {}

#[doc = include_str!("../../../book/src/maxwell.md")]
pub mod maxwell_sector {}

#[doc = include_str!("../../../book/src/energies.md")]
pub mod energy_hierarchy {}

#[doc = include_str!("../../../book/src/running.md")]
pub mod running {}
