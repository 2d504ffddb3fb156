//! Tracer correlation factors for vacancy-mediated diffusion on crystal
//! lattices.
//!
//! The vacancy left behind by a tracer hop wanders until it returns to the
//! tracer. The distribution of the direction from which it returns gives
//! `<cos θ>` and the correlation factor `f = (1 + <cos θ>) / (1 - <cos θ>)`.

pub mod correlation;
pub mod crw;
pub mod error;
pub(crate) mod grid;
pub mod ising;
pub mod lattice;
pub mod mu;

pub use error::{Error, Result};
pub use lattice::{Boundary, Family, HopModel, LatticeConfig, LatticeSpec, SiteRef};
