//! Reduced-order identification of linear parameter-varying systems with
//! dynamic mode decomposition.
//!
//! Bottom-up: [`numerics`] holds the shared linear algebra, [`plant`] the
//! finite-difference simulator, [`excitation`] the data generators and
//! [`features`] the scheduling bases. The fits live in [`dmdc`],
//! [`lpv_global`] and [`lpv_local`]; every one of them returns a
//! [`model::LpvModel`] that [`evaluation`] scores.

pub mod dmdc;
mod error;
pub mod evaluation;
pub mod excitation;
pub mod experiment;
pub mod features;
pub mod io;
pub mod lpv_global;
pub mod lpv_local;
pub mod model;
pub mod numerics;
pub mod plant;

pub use error::{Error, Result};
